#include "dada/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "dada/eval.hpp"
#include "dada/metrics.hpp"
#include "dada/trainer.hpp"

namespace dada::cli {

namespace {

class OutputExists : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

fs::path normalized(const fs::path& dir) {
    fs::path p = dir.lexically_normal();
    if (p.filename().empty()) p = p.parent_path();
    return p;
}

fs::path staging_path(const fs::path& target) {
    return target.parent_path() / ("." + target.filename().string() + ".partial");
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + path.string());
        out << text;
        if (!out) throw DataError("failed while writing " + path.string());
    }
    fs::rename(tmp, path);
}

void require_writable_target(const fs::path& target, bool force) {
    if (is_complete(target)) {
        if (!force)
            throw OutputExists(target.string() + " already holds a completed run; pass --force to replace it");
    } else if (fs::exists(target) && !(fs::is_directory(target) && fs::is_empty(target)) && !force) {
        throw OutputExists(target.string() + " exists and is not a completed run; pass --force to replace it");
    }
}

void finalize(const fs::path& staging, const fs::path& target, const nlohmann::json& marker) {
    write_text(staging / marker_file, marker.dump(2) + "\n");
    if (fs::exists(target)) fs::remove_all(target);
    if (!target.parent_path().empty()) fs::create_directories(target.parent_path());
    fs::rename(staging, target);
}

void save_checkpoint_atomically(Trainer<float>& trainer, const fs::path& path) {
    const fs::path tmp = path.string() + ".tmp";
    trainer.save_checkpoint(tmp);
    fs::rename(tmp, path);
}

/// Drops records written after the checkpoint a resumed run restarts from.
void trim_metrics(const fs::path& path, long steps_done, int steps_per_epoch) {
    if (!fs::exists(path)) return;
    std::ostringstream kept;
    for (const auto& r : read_metrics(path)) {
        const std::string kind = r.value("record", "");
        if (kind == "step" && r.at("step").get<long>() >= steps_done) continue;
        if (kind == "epoch" && (r.at("epoch").get<long>() + 1) * steps_per_epoch > steps_done) continue;
        kept << r.dump() << '\n';
    }
    write_text(path, kept.str());
}

std::string percent(double fraction) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(1) << 100.0 * fraction;
    return s.str();
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

nlohmann::json a_distance_json(const ADistanceResult& r) {
    return {{"record", "a_distance"}, {"features", r.tag}, {"d_a", r.d_a}, {"epsilon", r.epsilon}};
}

}  // namespace

bool is_complete(const fs::path& dir) { return fs::is_regular_file(dir / marker_file); }

DomainMixture load_or_generate(const RunConfig& config, const std::optional<fs::path>& data) {
    if (data) return load_mixture(*data);
    return synth_generate(config.data.synth());
}

void train_run(const RunConfig& config, const DomainMixture& data, const fs::path& dir, bool force, std::ostream& log) {
    const fs::path target = normalized(dir);
    require_writable_target(target, force);
    const fs::path staging = staging_path(target);
    const std::string ini = to_ini(config);

    bool resume = false;
    if (fs::exists(staging)) {
        const bool same_config = fs::exists(staging / config_file) && read_text(staging / config_file) == ini;
        resume = !force && same_config && fs::exists(staging / checkpoint_file);
        if (!resume) fs::remove_all(staging);
    }
    fs::create_directories(staging);
    write_text(staging / config_file, ini);

    Trainer<float> trainer(config.experiment, data);
    const int per_epoch = trainer.steps_per_epoch();
    if (resume) {
        trainer.load_checkpoint(staging / checkpoint_file);
        trim_metrics(staging / metrics_file, trainer.steps_done(), per_epoch);
        log << "resuming " << target.string() << " at step " << trainer.steps_done() << '\n';
    }
    MetricsLog metrics(staging / metrics_file, resume);
    const long every = config.eval.checkpoint_every > 0 ? config.eval.checkpoint_every : per_epoch;

    double ce_sum = 0;
    int ce_count = 0;
    while (!trainer.finished()) {
        const LossReport r = trainer.step();
        metrics.write(r);
        ce_sum += r.cross_entropy;
        ++ce_count;
        const long done = trainer.steps_done();
        if (done % per_epoch == 0) {
            const auto eval = evaluate_classifier(trainer.components(), data.target);
            metrics.write(nlohmann::json{{"record", "epoch"},
                                         {"epoch", r.epoch},
                                         {"step", done},
                                         {"target_accuracy", eval.accuracy}});
            log << "epoch " << r.epoch + 1 << '/' << config.experiment.epochs << "  ce " << fixed(ce_sum / ce_count, 4)
                << "  target " << percent(eval.accuracy) << "%\n";
            ce_sum = 0;
            ce_count = 0;
        }
        if (done % every == 0 || trainer.finished()) save_checkpoint_atomically(trainer, staging / checkpoint_file);
    }
    finalize(staging, target,
             {{"command", "train"},
              {"level", level_name(config.experiment.level)},
              {"seed", config.experiment.seed},
              {"steps", trainer.steps_done()}});
}

nlohmann::json evaluate_run(const fs::path& dir, const DomainMixture& data, std::ostream& log) {
    if (!is_complete(dir) || !fs::exists(dir / checkpoint_file))
        throw DataError(dir.string() + " is not a completed training run (no " + marker_file + " or checkpoint)");
    const RunConfig config = load_run_config(dir / config_file, {});
    return evaluate_run(dir, config, data, log);
}

nlohmann::json evaluate_run(const fs::path& dir, const RunConfig& config, const DomainMixture& data,
                            std::ostream& log) {
    Trainer<float> trainer(config.experiment, data);
    trainer.load_checkpoint(dir / checkpoint_file);
    auto& cs = trainer.components();

    const auto target = evaluate_classifier(cs, data.target);
    const auto source = evaluate_classifier(cs, data.source);
    const auto by_domain = accuracy_by_domain(data.target, target.predictions);
    const auto matrix = tally_confusion(labels_of(data.target), target.predictions, data.num_classes);

    ADistanceOptions probe;
    probe.l2 = config.eval.a_distance_l2;
    probe.iterations = config.eval.a_distance_iterations;
    std::vector<ADistanceResult> distances;
    for (FeatureTap tap : {FeatureTap::generator, FeatureTap::domain_invariant})
        distances.push_back(a_distance(extract_features(cs, data.source, tap), extract_features(cs, data.target, tap),
                                       config.eval.a_distance_seed, feature_tag(tap), probe));

    std::vector<LabeledExample> everything = data.source;
    everything.insert(everything.end(), data.target.begin(), data.target.end());
    export_embeddings(cs, everything, dir / embeddings_file);

    nlohmann::json domains = nlohmann::json::array();
    for (const auto& [id, acc] : by_domain) {
        const std::string name = id >= 0 && static_cast<std::size_t>(id) < data.domain_names.size()
                                     ? data.domain_names[static_cast<std::size_t>(id)]
                                     : "domain" + std::to_string(id);
        domains.push_back({{"name", name}, {"id", id}, {"accuracy", acc}});
    }
    nlohmann::json counts = nlohmann::json::array();
    for (Eigen::Index i = 0; i < matrix.counts.rows(); ++i) {
        std::vector<long> row(matrix.counts.row(i).begin(), matrix.counts.row(i).end());
        counts.push_back(row);
    }
    nlohmann::json record{{"record", "evaluation"},
                          {"level", level_name(config.experiment.level)},
                          {"seed", config.experiment.seed},
                          {"target_accuracy", target.accuracy},
                          {"source_accuracy", source.accuracy},
                          {"domains", domains},
                          {"a_distance", nlohmann::json::object()}};
    for (const auto& d : distances) record["a_distance"][d.tag] = {{"d_a", d.d_a}, {"epsilon", d.epsilon}};
    write_text(dir / evaluation_file, record.dump(2) + "\n");

    std::ostringstream kept;
    for (const auto& r : read_metrics(dir / metrics_file)) {
        const std::string kind = r.value("record", "");
        if (kind == "evaluation" || kind == "confusion" || kind == "a_distance") continue;
        kept << r.dump() << '\n';
    }
    write_text(dir / metrics_file, kept.str());
    MetricsLog metrics(dir / metrics_file, true);
    metrics.write(record);
    metrics.write(nlohmann::json{{"record", "confusion"}, {"counts", counts}});
    for (const auto& d : distances) metrics.write(a_distance_json(d));

    log << dir.string() << ": target " << percent(target.accuracy) << "%  source " << percent(source.accuracy)
        << "%  d_A(f_G) " << fixed(distances[0].d_a, 3) << "  d_A(f_di) " << fixed(distances[1].d_a, 3) << '\n';
    return record;
}

std::string format_cell(const std::vector<double>& values) {
    if (values.empty()) return "-";
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (values.size() == 1) return percent(mean);
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(values.size());
    return percent(mean) + "±" + percent(std::sqrt(var));
}

std::string SummaryTable::to_text() const {
    std::vector<std::size_t> width(columns.size() + 1, 5);
    auto visible = [](const std::string& s) {
        std::size_t n = 0;
        for (unsigned char c : s) n += (c & 0xC0) != 0x80;
        return n;
    };
    for (const auto& r : rows) width[0] = std::max(width[0], visible(r));
    for (std::size_t j = 0; j < columns.size(); ++j) {
        width[j + 1] = std::max(width[j + 1], visible(columns[j]));
        for (const auto& row : cells) width[j + 1] = std::max(width[j + 1], visible(row[j]));
    }
    std::ostringstream out;
    auto pad = [&](const std::string& s, std::size_t w) { out << s << std::string(w - visible(s) + 2, ' '); };
    pad("level", width[0]);
    for (std::size_t j = 0; j < columns.size(); ++j) pad(columns[j], width[j + 1]);
    out << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        pad(rows[i], width[0]);
        for (std::size_t j = 0; j < columns.size(); ++j) pad(cells[i][j], width[j + 1]);
        out << '\n';
    }
    return out.str();
}

std::string SummaryTable::to_csv() const {
    std::ostringstream out;
    out << "level";
    for (const auto& c : columns) out << ',' << c;
    out << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out << rows[i];
        for (const auto& c : cells[i]) out << ',' << c;
        out << '\n';
    }
    return out.str();
}

SummaryTable summarize(const std::vector<fs::path>& run_dirs) {
    if (run_dirs.empty()) throw ConfigError("summarize: no run directories given");
    std::map<AblationLevel, std::vector<std::vector<double>>> by_level;  // per run: domains..., average
    std::vector<std::string> domain_names;
    for (const auto& dir : run_dirs) {
        if (!fs::exists(dir / evaluation_file))
            throw DataError("incomplete run directory " + dir.string() + ": no " + evaluation_file +
                            " (run `dada evaluate` first)");
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(read_text(dir / evaluation_file));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("unreadable evaluation record in " + dir.string() + ": " + e.what());
        }
        std::vector<std::string> names;
        std::vector<double> values;
        for (const auto& d : record.at("domains")) {
            names.push_back(d.at("name").get<std::string>());
            values.push_back(d.at("accuracy").get<double>());
        }
        if (domain_names.empty())
            domain_names = names;
        else if (names != domain_names)
            throw DataError("run " + dir.string() + " was evaluated on different target domains");
        double avg = 0;
        for (double v : values) avg += v;
        values.push_back(values.empty() ? 0.0 : avg / static_cast<double>(values.size()));
        by_level[parse_level(record.at("level").get<std::string>())].push_back(values);
    }
    SummaryTable t;
    t.columns = domain_names;
    t.columns.push_back("average");
    for (AblationLevel level : all_levels) {
        auto it = by_level.find(level);
        if (it == by_level.end()) continue;
        t.rows.push_back(level_name(level));
        std::vector<std::string> row;
        std::vector<int> counts;
        for (std::size_t j = 0; j < t.columns.size(); ++j) {
            std::vector<double> column;
            for (const auto& run : it->second) column.push_back(run[j]);
            row.push_back(format_cell(column));
            counts.push_back(static_cast<int>(column.size()));
        }
        t.cells.push_back(row);
        t.runs.push_back(counts);
    }
    return t;
}

namespace {

struct Series {
    std::string name;
    std::vector<double> x, y;
};

const std::array<const char*, 8> palette{"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                         "#9467bd", "#8c564b", "#17becf", "#7f7f7f"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '&')
            out += "&amp;";
        else if (c == '<')
            out += "&lt;";
        else if (c == '>')
            out += "&gt;";
        else
            out += c;
    }
    return out;
}

void panel(std::ostream& svg, double left, double top, double w, double h, const std::string& title,
           const std::vector<Series>& series, std::optional<std::pair<double, double>> y_range = std::nullopt) {
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (y_range) std::tie(y0, y1) = *y_range;
    if (!(x1 > x0)) x1 = x0 + 1;
    if (!(y1 > y0)) y1 = y0 + 1;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * w; };
    auto py = [&](double y) { return top + h - (y - y0) / (y1 - y0) * h; };

    svg << "<text x=\"" << left + w / 2 << "\" y=\"" << top - 10 << "\" text-anchor=\"middle\" font-size=\"14\">"
        << escape(title) << "</text>\n";
    svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << w << "\" height=\"" << h
        << "\" fill=\"none\" stroke=\"#444\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double yv = y0 + (y1 - y0) * k / 4.0, xv = x0 + (x1 - x0) * k / 4.0;
        svg << "<line x1=\"" << left << "\" x2=\"" << left + w << "\" y1=\"" << py(yv) << "\" y2=\"" << py(yv)
            << "\" stroke=\"#ddd\"/>\n";
        svg << "<text x=\"" << left - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">"
            << fixed(yv, 3) << "</text>\n";
        svg << "<text x=\"" << px(xv) << "\" y=\"" << top + h + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
            << fixed(xv, 0) << "</text>\n";
    }
    svg << "<text x=\"" << left + w / 2 << "\" y=\"" << top + h + 30
        << "\" text-anchor=\"middle\" font-size=\"11\">epoch</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = palette[k % palette.size()];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size(); ++i) svg << px(s.x[i]) << ',' << py(std::clamp(s.y[i], y0, y1)) << ' ';
        svg << "\"/>\n";
        svg << "<text x=\"" << left + w + 10 << "\" y=\"" << top + 14 + 16.0 * static_cast<double>(k)
            << "\" font-size=\"11\" fill=\"" << color << "\">" << escape(s.name) << "</text>\n";
    }
}

}  // namespace

std::vector<fs::path> plot_run(const fs::path& dir) {
    if (!fs::exists(dir / metrics_file)) throw DataError("no " + std::string(metrics_file) + " in " + dir.string());
    const auto records = read_metrics(dir / metrics_file);
    const auto reports = step_reports(records);
    if (reports.empty()) throw DataError(dir.string() + ": metrics file holds no training steps");

    const std::vector<std::pair<std::string, double LossReport::*>> fields{
        {"cross-entropy", &LossReport::cross_entropy},
        {"entropy", &LossReport::entropy},
        {"domain identifier", &LossReport::domain_identifier},
        {"mutual information", &LossReport::mutual_information},
        {"ring", &LossReport::ring},
        {"reconstruction", &LossReport::reconstruction}};
    std::map<int, std::pair<std::vector<double>, int>> sums;
    for (const auto& r : reports) {
        auto& [acc, n] = sums[r.epoch];
        acc.resize(fields.size() + 1, 0.0);
        for (std::size_t k = 0; k < fields.size(); ++k) acc[k] += r.*(fields[k].second);
        acc[fields.size()] += r.source_accuracy;
        ++n;
    }
    std::vector<Series> losses;
    for (std::size_t k = 0; k < fields.size(); ++k) {
        Series s{fields[k].first, {}, {}};
        bool active = false;
        for (const auto& [epoch, entry] : sums) {
            s.x.push_back(epoch + 1);
            s.y.push_back(entry.first[k] / entry.second);
            active = active || entry.first[k] != 0.0;
        }
        if (active) losses.push_back(std::move(s));
    }
    std::vector<Series> accuracy{{"source (training batches)", {}, {}}, {"target", {}, {}}};
    for (const auto& [epoch, entry] : sums) {
        accuracy[0].x.push_back(epoch + 1);
        accuracy[0].y.push_back(entry.first[fields.size()] / entry.second);
    }
    for (const auto& r : records)
        if (r.value("record", "") == "epoch") {
            accuracy[1].x.push_back(r.at("epoch").get<double>() + 1);
            accuracy[1].y.push_back(r.at("target_accuracy").get<double>());
        }
    if (accuracy[1].x.empty()) accuracy.pop_back();

    std::vector<fs::path> written;
    {
        std::ostringstream svg;
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1100\" height=\"360\" font-family=\"sans-serif\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
        panel(svg, 60, 40, 340, 260, "training losses (epoch means)", losses);
        panel(svg, 610, 40, 300, 260, "accuracy", accuracy, std::make_pair(0.0, 1.0));
        svg << "</svg>\n";
        write_text(dir / curves_plot, svg.str());
        written.push_back(dir / curves_plot);
    }

    const nlohmann::json* confusion = nullptr;
    for (const auto& r : records)
        if (r.value("record", "") == "confusion") confusion = &r;
    if (confusion != nullptr) {
        const auto& counts = confusion->at("counts");
        const std::size_t k = counts.size();
        const double cell = 48, left = 80, top = 50;
        std::ostringstream svg;
        svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << left + cell * static_cast<double>(k) + 40
            << "\" height=\"" << top + cell * static_cast<double>(k) + 60 << "\" font-family=\"sans-serif\">\n"
            << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
            << "<text x=\"" << left + cell * static_cast<double>(k) / 2 << "\" y=\"24\" text-anchor=\"middle\" "
            << "font-size=\"14\">target confusion (rows: true, columns: predicted)</text>\n";
        for (std::size_t i = 0; i < k; ++i) {
            long row_total = 0;
            for (const auto& v : counts[i]) row_total += v.get<long>();
            for (std::size_t j = 0; j < k; ++j) {
                const long n = counts[i][j].get<long>();
                const double share = row_total > 0 ? static_cast<double>(n) / static_cast<double>(row_total) : 0.0;
                const int shade = static_cast<int>(std::lround(255 * (1 - share)));
                const double x = left + cell * static_cast<double>(j), y = top + cell * static_cast<double>(i);
                svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell << "\" height=\"" << cell
                    << "\" fill=\"rgb(" << shade << ',' << shade << ",255)\" stroke=\"#888\"/>\n"
                    << "<text x=\"" << x + cell / 2 << "\" y=\"" << y + cell / 2 + 4
                    << "\" text-anchor=\"middle\" font-size=\"11\" fill=\"" << (share > 0.6 ? "white" : "black")
                    << "\">" << n << "</text>\n";
            }
            svg << "<text x=\"" << left - 8 << "\" y=\"" << top + cell * (static_cast<double>(i) + 0.5) + 4
                << "\" text-anchor=\"end\" font-size=\"11\">" << i << "</text>\n"
                << "<text x=\"" << left + cell * (static_cast<double>(i) + 0.5) << "\" y=\""
                << top + cell * static_cast<double>(k) + 16 << "\" text-anchor=\"middle\" font-size=\"11\">" << i
                << "</text>\n";
        }
        svg << "</svg>\n";
        write_text(dir / confusion_plot, svg.str());
        written.push_back(dir / confusion_plot);
    }
    return written;
}

namespace {

struct Options {
    std::optional<std::string> config;
    std::string out;
    std::vector<std::string> sets;
    std::optional<std::string> data;
    std::vector<std::string> runs;
    bool force = false;
};

RunConfig resolve(const Options& o, bool need_file) {
    if (need_file && !o.config) throw ConfigError("--config is required for this command");
    const char* env = std::getenv("DADA_SEED");
    return load_run_config(o.config ? std::optional<fs::path>(*o.config) : std::nullopt, o.sets,
                           env ? std::optional<std::string>(env) : std::nullopt);
}

std::optional<fs::path> data_path(const Options& o) {
    return o.data ? std::optional<fs::path>(*o.data) : std::nullopt;
}

void generate_command(const Options& o, std::ostream& out) {
    const RunConfig config = resolve(o, true);
    const fs::path target = normalized(o.out);
    require_writable_target(target, o.force);
    const DomainMixture m = synth_generate(config.data.synth());
    const fs::path staging = staging_path(target);
    if (fs::exists(staging)) fs::remove_all(staging);
    fs::create_directories(staging);
    write_text(staging / config_file, to_ini(config));
    save_mixture(m, staging / dataset_file);
    const std::uint32_t checksum = mixture_checksum(m);
    finalize(staging, target,
             {{"command", "generate"},
              {"checksum", checksum},
              {"source", m.source.size()},
              {"target", m.target.size()}});
    out << "wrote " << (target / dataset_file).string() << ": " << m.source.size() << " source, " << m.target.size()
        << " target examples, checksum " << checksum << '\n';
}

void ablate_command(const Options& o, std::ostream& out) {
    const RunConfig config = resolve(o, true);
    const fs::path root = normalized(o.out);
    require_writable_target(root, o.force);
    const DomainMixture data = load_or_generate(config, data_path(o));
    fs::create_directories(root);
    if (is_complete(root)) fs::remove(root / marker_file);
    write_text(root / config_file, to_ini(config));

    std::vector<fs::path> cells;
    for (AblationLevel level : config.ablate.levels)
        for (int s = 0; s < config.ablate.seeds; ++s) {
            RunConfig cell = config;
            cell.experiment.level = level;
            cell.experiment.seed = config.experiment.seed + static_cast<std::uint64_t>(s);
            const fs::path dir = root / level_name(level) / ("seed-" + std::to_string(cell.experiment.seed));
            const bool reusable = !o.force && is_complete(dir) && fs::exists(dir / evaluation_file) &&
                                  read_text(dir / config_file) == to_ini(cell);
            if (reusable) {
                out << "reusing " << dir.string() << '\n';
            } else {
                out << "training " << dir.string() << '\n';
                std::ostringstream quiet;
                train_run(cell, data, dir, true, quiet);
                evaluate_run(dir, cell, data, out);
            }
            cells.push_back(dir);
        }
    const SummaryTable table = summarize(cells);
    write_text(root / "summary.csv", table.to_csv());
    write_text(root / "summary.txt", table.to_text());
    write_text(root / marker_file, nlohmann::json{{"command", "ablate"}, {"runs", cells.size()}}.dump(2) + "\n");
    out << table.to_text();
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Domain-agnostic adaptation experiments on synthetic multi-domain data", "dada"};
    app.require_subcommand(1);
    Options o;
    auto common = [&](CLI::App* c, bool config_required) {
        auto* opt = c->add_option("--config", o.config, "INI config file");
        if (config_required) opt->required();
        c->add_option("--set", o.sets, "override, section.key=value (repeatable)");
    };

    auto* generate = app.add_subcommand("generate", "write the synthetic dataset");
    common(generate, true);
    generate->add_option("--out", o.out, "output directory")->required();
    generate->add_flag("--force", o.force, "replace a completed output directory");

    auto* train = app.add_subcommand("train", "train one model; writes metrics and a checkpoint");
    common(train, true);
    train->add_option("--out", o.out, "run directory")->required();
    train->add_option("--data", o.data, "dataset file (default: generate from the config)");
    train->add_flag("--force", o.force, "replace a completed run directory");

    auto* evaluate = app.add_subcommand("evaluate", "score a trained run: accuracy, confusion, A-distance");
    evaluate->add_option("--out", o.out, "run directory written by train")->required();
    evaluate->add_option("--data", o.data, "dataset file (default: regenerate from the run's config)");
    evaluate->add_option("--set", o.sets, "eval.* override (repeatable)");

    auto* ablate = app.add_subcommand("ablate", "train and evaluate every ablation level over several seeds");
    common(ablate, true);
    ablate->add_option("--out", o.out, "output directory")->required();
    ablate->add_option("--data", o.data, "dataset file (default: generate from the config)");
    ablate->add_flag("--force", o.force, "retrain cells and replace a completed ablation");

    auto* plot = app.add_subcommand("plot", "render SVG curves and a confusion heatmap from metrics files");
    plot->add_option("--out", o.out, "run directory, or a directory of runs")->required();

    auto* summarize_cmd = app.add_subcommand("summarize", "ablation table from evaluated run directories");
    summarize_cmd->add_option("runs", o.runs, "run directories")->required();
    summarize_cmd->add_option("--out", o.out, "also write summary.csv and summary.txt here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return ok;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return ok;
    } catch (const CLI::ParseError& e) {
        err << "dada: " << e.what() << " (see `dada --help`)\n";
        return config_error;
    }

    try {
        if (*generate) {
            generate_command(o, out);
        } else if (*train) {
            const RunConfig config = resolve(o, true);
            require_writable_target(normalized(o.out), o.force);
            const DomainMixture data = load_or_generate(config, data_path(o));
            train_run(config, data, o.out, o.force, out);
        } else if (*evaluate) {
            const fs::path dir = normalized(o.out);
            if (!is_complete(dir)) throw DataError(dir.string() + " is not a completed training run");
            RunConfig config = load_run_config(dir / config_file, {});
            for (const auto& s : o.sets) {
                if (s.rfind("eval.", 0) != 0) throw ConfigError("evaluate only accepts eval.* overrides, got '" + s + "'");
                apply_override(config, s);
            }
            const DomainMixture data = load_or_generate(config, data_path(o));
            evaluate_run(dir, config, data, out);
        } else if (*ablate) {
            ablate_command(o, out);
        } else if (*plot) {
            const fs::path root = normalized(o.out);
            std::vector<fs::path> dirs;
            if (fs::exists(root / metrics_file)) dirs.push_back(root);
            if (fs::is_directory(root))
                for (const auto& e : fs::recursive_directory_iterator(root))
                    if (e.is_regular_file() && e.path().filename() == metrics_file && e.path().parent_path() != root)
                        dirs.push_back(e.path().parent_path());
            if (dirs.empty()) throw DataError("no " + std::string(metrics_file) + " under " + root.string());
            std::sort(dirs.begin(), dirs.end());
            for (const auto& d : dirs)
                for (const auto& p : plot_run(d)) out << "wrote " << p.string() << '\n';
        } else if (*summarize_cmd) {
            std::vector<fs::path> dirs(o.runs.begin(), o.runs.end());
            const SummaryTable table = summarize(dirs);
            if (!o.out.empty()) {
                fs::create_directories(o.out);
                write_text(fs::path(o.out) / "summary.csv", table.to_csv());
                write_text(fs::path(o.out) / "summary.txt", table.to_text());
            }
            out << table.to_text();
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const DivergenceError& e) {
        err << "diverged: " << e.what() << '\n';
        return divergence;
    } catch (const DataError& e) {
        err << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const ShapeError& e) {
        err << "data error: " << e.what() << '\n';
        return data_error;
    } catch (const OutputExists& e) {
        err << "error: " << e.what() << '\n';
        return failure;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return failure;
    }
    return ok;
}

}  // namespace dada::cli
