#include "dada/metrics.hpp"

#include <map>

namespace dada {

nlohmann::json to_json(const LossReport& r) {
    return {{"record", "step"},
            {"step", r.step},
            {"epoch", r.epoch},
            {"cross_entropy", r.cross_entropy},
            {"cross_entropy_ci", r.cross_entropy_ci},
            {"entropy", r.entropy},
            {"domain_identifier", r.domain_identifier},
            {"fool", r.fool},
            {"mutual_information", r.mutual_information},
            {"mi_di_ds", r.mi_di_ds},
            {"mi_di_ci", r.mi_di_ci},
            {"ring", r.ring},
            {"reconstruction", r.reconstruction},
            {"radius", r.radius},
            {"source_accuracy", r.source_accuracy}};
}

LossReport report_from_json(const nlohmann::json& j) {
    LossReport r;
    try {
        r.step = j.at("step").get<long>();
        r.epoch = j.at("epoch").get<int>();
        r.cross_entropy = j.at("cross_entropy").get<double>();
        r.cross_entropy_ci = j.at("cross_entropy_ci").get<double>();
        r.entropy = j.at("entropy").get<double>();
        r.domain_identifier = j.at("domain_identifier").get<double>();
        r.fool = j.at("fool").get<double>();
        r.mutual_information = j.at("mutual_information").get<double>();
        r.mi_di_ds = j.at("mi_di_ds").get<double>();
        r.mi_di_ci = j.at("mi_di_ci").get<double>();
        r.ring = j.at("ring").get<double>();
        r.reconstruction = j.at("reconstruction").get<double>();
        r.radius = j.at("radius").get<double>();
        r.source_accuracy = j.at("source_accuracy").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed step record: ") + e.what());
    }
    return r;
}

MetricsLog::MetricsLog(const std::filesystem::path& path, bool append)
    : path_(path), out_(path, append ? std::ios::app : std::ios::trunc) {
    if (!out_) throw DataError("cannot open metrics file " + path.string());
}

void MetricsLog::write(const nlohmann::json& record) {
    out_ << record.dump() << '\n';
    out_.flush();
    if (!out_) throw DataError("failed writing metrics to " + path_.string());
}

std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot read metrics file " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) lines.push_back(line);
    std::vector<nlohmann::json> out;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto j = nlohmann::json::parse(lines[i], nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            if (i + 1 == lines.size()) break;
            throw DataError(path.string() + ": malformed record on line " + std::to_string(i + 1));
        }
        out.push_back(std::move(j));
    }
    return out;
}

std::vector<LossReport> step_reports(const std::vector<nlohmann::json>& records) {
    std::vector<LossReport> out;
    for (const auto& j : records)
        if (j.value("record", "") == "step") out.push_back(report_from_json(j));
    return out;
}

std::vector<EpochSummary> epoch_summaries(const std::vector<LossReport>& reports) {
    std::map<int, EpochSummary> by_epoch;
    for (const auto& r : reports) {
        auto& e = by_epoch[r.epoch];
        e.epoch = r.epoch;
        ++e.steps;
        e.cross_entropy += r.cross_entropy;
        e.source_accuracy += r.source_accuracy;
    }
    std::vector<EpochSummary> out;
    for (auto& [epoch, e] : by_epoch) {
        e.cross_entropy /= e.steps;
        e.source_accuracy /= e.steps;
        out.push_back(e);
    }
    return out;
}

ConvergenceCheck check_convergence(const std::vector<EpochSummary>& epochs, double ratio_limit, int tail,
                                   double tolerance) {
    ConvergenceCheck c;
    if (epochs.empty()) return c;
    c.first_cross_entropy = epochs.front().cross_entropy;
    c.last_cross_entropy = epochs.back().cross_entropy;
    c.ratio = c.first_cross_entropy > 0 ? c.last_cross_entropy / c.first_cross_entropy : 1.0;
    c.cross_entropy_ok = epochs.size() >= 2 && c.ratio < ratio_limit;
    const std::size_t start = epochs.size() > static_cast<std::size_t>(tail) ? epochs.size() - tail : 0;
    for (std::size_t i = start + 1; i < epochs.size(); ++i)
        c.worst_accuracy_drop =
            std::max(c.worst_accuracy_drop, epochs[i - 1].source_accuracy - epochs[i].source_accuracy);
    c.accuracy_ok = c.worst_accuracy_drop <= tolerance;
    return c;
}

}  // namespace dada
