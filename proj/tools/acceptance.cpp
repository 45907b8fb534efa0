// Acceptance harness: one PASS/FAIL line per criterion.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "dada/cli.hpp"
#include "dada/eval.hpp"
#include "dada/losses.hpp"
#include "dada/metrics.hpp"
#include "dada/mine.hpp"
#include "dada/trainer.hpp"
#include "mine_oracle.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace dada;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 4) {
    std::ostringstream s;
    s << std::setprecision(digits) << v;
    return s.str();
}

// ---------------------------------------------------------------- 1

Outcome loss_identities() {
    constexpr double tol = 1e-9;
    using M = Matrix<double>;
    std::vector<std::pair<std::string, std::pair<double, double>>> cases;  // name, (value, expected)
    auto add = [&](std::string name, double value, double expected) { cases.push_back({name, {value, expected}}); };
    auto row = [](std::initializer_list<double> v) {
        M m(1, static_cast<Eigen::Index>(v.size()));
        Eigen::Index j = 0;
        for (double x : v) m(0, j++) = x;
        return m;
    };
    Rng rng(1);
    auto with_norms = [&](std::vector<double> norms) {
        M x = testing::random_matrix(static_cast<Eigen::Index>(norms.size()), 3, rng);
        for (std::size_t i = 0; i < norms.size(); ++i)
            x.row(static_cast<Eigen::Index>(i)) *= norms[i] / x.row(static_cast<Eigen::Index>(i)).norm();
        return x;
    };

    const M f = testing::random_matrix(3, 5, rng);
    add("vae perfect reconstruction", vae_loss(f, f, M(M::Zero(3, 4))).value, 0.0);
    add("vae squared Frobenius", vae_loss(M(M::Zero(1, 4)), M(M::Ones(1, 4)), M(M::Zero(1, 3))).value, 4.0);
    add("vae unit means", vae_loss(M(f.topRows(1)), M(f.topRows(1)), M(M::Ones(1, 3))).value, 1.5);

    std::vector<int> y1{1}, y37{3, 7};
    add("ce one-hot", cross_entropy(ClassPrediction<double>{row({0, 1, 0})}, std::span<const int>(y1)), 0.0);
    add("ce uniform K=10", cross_entropy(ClassPrediction<double>{M::Constant(2, 10, 0.1)}, std::span<const int>(y37)),
        std::log(10.0));
    add("ce (0.7,0.2,0.1)", cross_entropy(ClassPrediction<double>{row({0.7, 0.2, 0.1})}, std::span<const int>(y1)),
        -std::log(0.2));

    add("entropy uniform K=10", negative_entropy(ClassPrediction<double>{M::Constant(3, 10, 0.1)}), -std::log(10.0));
    add("entropy one-hot", negative_entropy(ClassPrediction<double>{row({0, 0, 1, 0})}), 0.0);
    add("entropy fair coin", negative_entropy(ClassPrediction<double>{row({0.5, 0.5})}), -std::log(2.0));

    std::vector<int> dl{0, 0, 1, 1};
    add("domain identifier at 1/2", domain_adversarial_losses(M(M::Zero(4, 2)), M(M::Zero(4, 2)), std::span<const int>(dl)).identifier,
        std::log(2.0));
    M perfect(4, 2);
    perfect << 20, -20, 20, -20, -20, 20, -20, 20;
    const auto sharp = domain_adversarial_losses(perfect, M(M::Zero(4, 2)), std::span<const int>(dl));
    add("fool equals minus identifier on f_di", sharp.fool, -sharp.identifier_di);

    add("ring gm on the ring", ring_loss_gm(with_norms({1.7, 1.7, 1.7}), RingState{1.7, 1.0}).value, 0.0);
    add("ring gm n=1 |x|=2 R=1 b=1", ring_loss_gm(with_norms({2.0}), RingState{1.0, 1.0}).value, 1.0 / 3.0);
    add("ring gm norms (3,1) R=2 b=0.5", ring_loss_gm(with_norms({3.0, 1.0}), RingState{2.0, 0.5}).value, 0.5);
    add("ring plain on the ring", ring_loss_plain(with_norms({1.7, 1.7}), RingState{1.7, 1.0}).value, 0.0);
    add("ring plain n=1 |x|=2 R=1", ring_loss_plain(with_norms({2.0}), RingState{1.0, 1.0}).value, 0.5);

    auto t = testing::small_statistic(3, 3, 8, rng);
    for (auto& p : t.parameters()) p.value->setZero();
    const M x = testing::random_matrix(10, 3, rng), z = testing::random_matrix(10, 3, rng);
    add("mi estimate T=0", mi_estimate(t, x, z, rng).value, 0.0);
    t.parameters().back().value->setConstant(3.7);
    add("mi estimate T=c", mi_estimate(t, x, z, rng).value, 0.0);
    add("ema constant stream", bias_control({2.5, 2.5, 2.5}), 2.5);
    add("ema decay 0", bias_control({1.0, 7.0, -3.0}, 0.0), -3.0);
    add("ema (0,1) decay 1/2", bias_control({0.0, 1.0}, 0.5, 0.0), 0.5);

    const auto huge = with_norms({1e4 + 1.0});
    const double gm = ring_loss_gm(huge, RingState{1.0, 1.0}).value, plain = ring_loss_plain(huge, RingState{1.0, 1.0}).value;

    int passed = 0;
    double worst = 0;
    std::string failures;
    for (const auto& [name, vals] : cases) {
        const double err = std::abs(vals.first - vals.second);
        worst = std::max(worst, err);
        if (err <= tol)
            ++passed;
        else
            failures += " [" + name + "]";
    }
    const bool saturates = gm < 1.0 && gm > 1.0 - 1e-6 && plain > 1e7;
    Outcome o;
    o.pass = passed == static_cast<int>(cases.size()) && saturates;
    o.detail = std::to_string(passed) + "/" + std::to_string(cases.size()) + " identities within 1e-9 (worst " +
               num(worst, 3) + "), S=1e8 saturation " + (saturates ? "ok" : "broken") + failures;
    return o;
}

// ---------------------------------------------------------------- 2

/// Analytic vs central-difference gradients on desk-scale images, sampling a
/// seeded subset of entries per parameter tensor. Objectives taking f_G are
/// also chained back into the generator.
class GradientSuite {
public:
    GradientSuite() : rng_(31) {
        arch_.feature_width = 16;
        arch_.init.scheme = InitScheme::he;
        cs_ = std::make_unique<ComponentSet<double>>(build_components<double>(arch_, rng_));
        config_.arch = arch_;
        config_.weights.mutual_information = 0.3;
        const DomainMixture m = synth_generate(SynthConfig::standard(2, 20, 10));
        const std::vector<int> src{0, 3, 6, 9}, tgt{0, 5, 10, 15};
        batch_.source = stack_images(m.source, src).cast<double>();
        batch_.target = stack_images(m.target, tgt).cast<double>();
        for (int i : src) batch_.labels.push_back(m.source[static_cast<std::size_t>(i)].class_label);
        x_ = detail::stack_rows(batch_.source, batch_.target);
        ring_.radius = 2.0;
    }

    Outcome run() {
        auto& cs = *cs_;
        const Rng frozen = rng_;

        config_.level = AblationLevel::I;
        {
            Rng r = frozen;
            const auto c = class_terms(cs, batch_, config_, ring_, opts(r));
            auto value = [&](const ForwardOptions& o) { return class_terms(cs, batch_, config_, ring_, o).value; };
            for (const char* n : {"generator", "disentangler_di", "class_identifier"})
                check("cross-entropy", network(n), c.grads.by_component.at(n), value);
        }
        config_.level = AblationLevel::III;
        config_.weights.cross_entropy = 0;
        {
            Rng r = frozen;
            const auto c = class_terms(cs, batch_, config_, ring_, opts(r));
            auto value = [&](const ForwardOptions& o) { return class_terms(cs, batch_, config_, ring_, o).value; };
            for (const char* n : {"generator", "disentangler_di"})
                check("ring", network(n), c.grads.by_component.at(n), value);
            const double eps = 1e-6;
            RingState up = ring_, down = ring_;
            up.radius += eps;
            down.radius -= eps;
            Rng r1 = frozen, r2 = frozen;
            const double numeric = (class_terms(cs, batch_, config_, up, opts(r1)).value -
                                    class_terms(cs, batch_, config_, down, opts(r2)).value) /
                                   (2 * eps);
            record("ring", "radius", std::abs(c.grads.radius - numeric) / std::max(std::abs(numeric), 1e-8));
        }
        config_.weights.cross_entropy = 1;

        const Eigen::Index ns = batch_.source.rows();
        chained(
            "entropy", [&](const Matrix<double>& f, const ForwardOptions& o) { return entropy_terms(cs, f, ns, config_, o); },
            [](const auto& t) { return t.value; }, {"disentangler_ci"}, true);
        chained(
            "domain identifier",
            [&](const Matrix<double>& f, const ForwardOptions& o) { return domain_terms(cs, f, ns, config_, o); },
            [](const auto& t) { return t.identifier; }, {"domain_identifier", "disentangler_ds"}, false);
        chained(
            "domain fooling",
            [&](const Matrix<double>& f, const ForwardOptions& o) { return domain_terms(cs, f, ns, config_, o); },
            [](const auto& t) { return t.fool; }, {"disentangler_di"}, false);
        chained(
            "reconstruction",
            [&](const Matrix<double>& f, const ForwardOptions& o) { return reconstruction_terms(cs, f, config_, o); },
            [](const auto& t) { return t.value; },
            {"disentangler_di", "disentangler_ds", "disentangler_ci", "reconstructor"}, true);

        const Rng perm = Rng(77);
        auto mi = [&](const Matrix<double>& f, const ForwardOptions& o) {
            Rng p = perm;
            return mi_terms(cs, f, config_, o, nullptr, nullptr, p, true);
        };
        chained(
            "mutual information", mi, [](const auto& t) { return t.result.heads_objective; },
            {"disentangler_di", "disentangler_ds", "disentangler_ci"}, true);
        {
            Rng r = frozen;
            const auto terms = mi(cs.generator.forward(x_, opts(r)), opts(r));
            auto value = [&](const ForwardOptions& o) {
                return mi(cs.generator.forward(x_, o), o).result.statistic_objective;
            };
            auto params = cs.statistic.parameters();
            check_params("mutual information", "statistic", params, terms.grads.by_component.at("statistic"), value);
        }

        double worst = 0;
        std::string worst_name;
        std::set<std::string> terms;
        for (const auto& [name, err] : errors_) {
            terms.insert(name.substr(0, name.find(" / ")));
            if (!(err <= worst)) {
                worst = err;
                worst_name = name;
            }
        }
        Outcome o;
        o.pass = worst < 1e-4 && terms.size() == 7;
        o.detail = std::to_string(terms.size()) + " loss terms, " + std::to_string(errors_.size()) +
                   " term/component pairs on 16x16 images (d=16), worst relative error " + num(worst, 3) + " (" +
                   worst_name + ")";
        return o;
    }

private:
    static ForwardOptions opts(Rng& r) { return {true, false, &r}; }

    Network<double>& network(const std::string& name) {
        for (Network<double>& n : cs_->networks())
            if (n.name() == name) return n;
        throw std::logic_error("no network " + name);
    }

    /// Runs G forward inside the objective, so head checks see the whole
    /// pipeline and `through_generator` also checks d objective / d G.
    template <typename Terms, typename Value>
    void chained(const std::string& term, Terms terms_of, Value value_of, std::vector<const char*> heads,
                 bool through_generator) {
        auto& g = cs_->generator;
        auto value = [&](const ForwardOptions& o) { return static_cast<double>(value_of(terms_of(g.forward(x_, o), o))); };
        Rng r = rng_;
        Trace<double> tg;
        const Matrix<double> f_g = g.forward(x_, opts(r), &tg);
        const auto t = terms_of(f_g, opts(r));
        for (const char* n : heads) check(term, network(n), t.grads.by_component.at(n), value);
        if (through_generator) {
            Gradients<double> grads = g.zero_gradients();
            g.backward(tg, t.grads.f_g, grads);
            check(term, g, grads, value);
        }
    }

    template <typename F>
    void check(const std::string& term, Network<double>& net, const Gradients<double>& analytic, F value) {
        auto params = net.parameters();
        check_params(term, net.name(), params, analytic, value);
    }

    template <typename F>
    void check_params(const std::string& term, const std::string& component, std::vector<ParamRef<double>> params,
                      const Gradients<double>& analytic, F value) {
        constexpr Eigen::Index per_tensor = 12;
        constexpr double eps = 1e-5;
        const Rng frozen = rng_;
        std::vector<double> a, n;
        Rng pick(std::hash<std::string>{}(term + component));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Matrix<double>& w = *params[i].value;
            std::vector<Eigen::Index> entries;
            if (w.size() <= per_tensor) {
                for (Eigen::Index k = 0; k < w.size(); ++k) entries.push_back(k);
            } else {
                std::set<Eigen::Index> chosen;
                std::uniform_int_distribution<Eigen::Index> any(0, w.size() - 1);
                while (static_cast<Eigen::Index>(chosen.size()) < per_tensor) chosen.insert(any(pick));
                entries.assign(chosen.begin(), chosen.end());
            }
            for (Eigen::Index k : entries) {
                const double orig = w.data()[k];
                w.data()[k] = orig + eps;
                Rng r1 = frozen;
                const double plus = value(opts(r1));
                w.data()[k] = orig - eps;
                Rng r2 = frozen;
                const double minus = value(opts(r2));
                w.data()[k] = orig;
                a.push_back(analytic[i].data()[k]);
                n.push_back((plus - minus) / (2 * eps));
            }
        }
        const Eigen::Map<const Vector<double>> av(a.data(), static_cast<Eigen::Index>(a.size()));
        const Eigen::Map<const Vector<double>> nv(n.data(), static_cast<Eigen::Index>(n.size()));
        record(term, component, (av - nv).norm() / std::max({av.norm(), nv.norm(), 1e-8}));
    }

    void record(const std::string& term, const std::string& component, double err) {
        errors_.emplace_back(term + " / " + component, err);
    }

    Rng rng_;
    ArchConfig arch_;
    std::unique_ptr<ComponentSet<double>> cs_;
    ExperimentConfig config_;
    TrainingBatch<double> batch_;
    Matrix<double> x_;
    RingState ring_;
    std::vector<std::pair<std::string, double>> errors_;
};

// ---------------------------------------------------------------- 3

Outcome mine_oracle() {
    const double truth = testing::gaussian_mi(0.9);
    const double rho9 = testing::trained_gaussian_estimate(0.9, 101);
    double sum = 0;
    for (int seed = 0; seed < 20; ++seed) sum += testing::trained_gaussian_estimate(0.0, 200 + static_cast<std::uint64_t>(seed));
    const double independent = sum / 20;
    const double a = testing::trained_gaussian_estimate(0.0, 300), b = testing::trained_gaussian_estimate(0.5, 300),
                 c = testing::trained_gaussian_estimate(0.9, 300);
    Outcome o;
    const bool close = std::abs(rho9 - truth) <= 0.15;
    const bool near_zero = independent >= -0.05 && independent <= 0.15;
    const bool increasing = a < b && b < c;
    o.pass = close && near_zero && increasing;
    o.detail = "rho=0.9 estimate " + num(rho9) + " vs " + num(truth) + " (tol 0.15); independent mean over 20 seeds " +
               num(independent, 3) + " in [-0.05, 0.15]; rho 0/0.5/0.9 -> " + num(a, 3) + " < " + num(b, 3) + " < " +
               num(c, 3);
    return o;
}

// ---------------------------------------------------------------- 4, 5, 8

struct AblationArtifacts {
    bool ok = false;
    std::string error;
    std::map<AblationLevel, std::vector<fs::path>> runs;
};

AblationArtifacts run_ablation(const fs::path& config, const fs::path& out) {
    AblationArtifacts a;
    fs::remove_all(out);
    std::ostringstream log, err;
    const std::string c = config.string(), o = out.string();
    const char* argv[] = {"dada", "ablate", "--config", c.c_str(), "--out", o.c_str()};
    const int code = cli::run(6, argv, log, err);
    std::cout << log.str();
    if (code != cli::ok) {
        a.error = "ablate exited with " + std::to_string(code) + ": " + err.str();
        return a;
    }
    const RunConfig rc = load_run_config(config, {});
    for (AblationLevel level : rc.ablate.levels)
        for (int s = 0; s < rc.ablate.seeds; ++s)
            a.runs[level].push_back(out / level_name(level) /
                                    ("seed-" + std::to_string(rc.experiment.seed + static_cast<std::uint64_t>(s))));
    a.ok = true;
    return a;
}

nlohmann::json evaluation(const fs::path& dir) {
    std::ifstream in(dir / cli::evaluation_file);
    return nlohmann::json::parse(in);
}

double mean_target_accuracy(const std::vector<fs::path>& dirs) {
    double sum = 0;
    for (const auto& d : dirs) sum += evaluation(d).at("target_accuracy").get<double>();
    return dirs.empty() ? std::nan("") : sum / static_cast<double>(dirs.size());
}

Outcome ablation_trend(const AblationArtifacts& a) {
    if (!a.ok) return {false, a.error};
    auto has = [&](AblationLevel l) { return a.runs.count(l) && !a.runs.at(l).empty(); };
    if (!has(AblationLevel::source_only) || !has(AblationLevel::I) || !has(AblationLevel::IV))
        return {false, "ablation config must include source_only, I and IV"};
    std::string table;
    for (const auto& [level, dirs] : a.runs) table += " " + level_name(level) + "=" + num(100 * mean_target_accuracy(dirs), 3);
    const double so = mean_target_accuracy(a.runs.at(AblationLevel::source_only));
    const double one = mean_target_accuracy(a.runs.at(AblationLevel::I));
    const double four = mean_target_accuracy(a.runs.at(AblationLevel::IV));
    Outcome o;
    o.pass = four >= so + 0.05 && four >= one;
    o.detail = "mixed-target accuracy (%, mean of " + std::to_string(a.runs.at(AblationLevel::IV).size()) +
               " seeds):" + table + "; need IV >= source_only + 5 and IV >= I";
    return o;
}

Outcome a_distance_ordering(const AblationArtifacts& a) {
    if (!a.ok) return {false, a.error};
    if (!a.runs.count(AblationLevel::IV)) return {false, "no level IV runs"};
    int smaller = 0;
    std::string values;
    for (const auto& d : a.runs.at(AblationLevel::IV)) {
        const auto e = evaluation(d).at("a_distance");
        const double g = e.at("f_G").at("d_a").get<double>(), di = e.at("f_di").at("d_a").get<double>();
        smaller += di < g;
        values += " (" + num(di, 3) + " vs " + num(g, 3) + ")";
    }
    const int n = static_cast<int>(a.runs.at(AblationLevel::IV).size());
    return {smaller == n && n >= 3,
            "d_A(f_di) < d_A(f_G) for " + std::to_string(smaller) + "/" + std::to_string(n) + " level-IV seeds:" + values};
}

Outcome convergence(const AblationArtifacts& a) {
    if (!a.ok) return {false, a.error};
    if (!a.runs.count(AblationLevel::IV)) return {false, "no level IV runs"};
    int passed = 0;
    std::string values;
    for (const auto& d : a.runs.at(AblationLevel::IV)) {
        const auto epochs = epoch_summaries(step_reports(read_metrics(d / cli::metrics_file)));
        const auto c = check_convergence(epochs, 0.25, 5, 0.02);
        passed += c.passed();
        values += " (ratio " + num(c.ratio, 3) + ", worst drop " + num(100 * c.worst_accuracy_drop, 2) + " pts)";
    }
    const int n = static_cast<int>(a.runs.at(AblationLevel::IV).size());
    return {passed == n && n > 0, std::to_string(passed) + "/" + std::to_string(n) +
                                      " level-IV runs: last/first epoch cross-entropy < 0.25 and tail accuracy within 2 pts:" +
                                      values};
}

// ---------------------------------------------------------------- 6

using Snapshot = std::map<std::string, Matrix<float>>;

Snapshot snapshot(Trainer<float>& t) {
    Snapshot s;
    for (auto& p : t.components().parameters()) s[p.name] = *p.value;
    s["radius.value"] = Matrix<float>::Constant(1, 1, static_cast<float>(t.ring().radius));
    return s;
}

std::set<std::string> changed(const Snapshot& before, const Snapshot& after) {
    std::set<std::string> out;
    for (const auto& [name, value] : before)
        if (value != after.at(name)) out.insert(name.substr(0, name.find('.')));
    return out;
}

std::string names(const std::set<std::string>& s) {
    std::string out;
    for (const auto& n : s) out += (out.empty() ? "" : ",") + n;
    return "{" + out + "}";
}

Outcome update_isolation() {
    const DomainMixture data = synth_generate(SynthConfig::standard(3, 96, 64));
    ExperimentConfig c;
    c.arch.feature_width = 16;
    c.arch.dropout = 0;  // deterministic head passes for the ascent/descent probe
    c.batch_size = 16;
    c.epochs = 1;
    c.seed = 3;
    std::vector<std::string> failures;

    Trainer<float> t(c, data);
    for (int i = 0; i < 3; ++i) t.step();
    BatchStream probe(data, c.batch_size, 99);
    auto [s, tg] = probe.next();
    const auto batch = TrainingBatch<float>::from(s, tg);
    const Eigen::Index ns = batch.source.rows();
    const Matrix<float> f_g = t.frozen_features(batch);
    Snapshot before;

    before = snapshot(t);
    t.entropy_step(f_g, ns);
    const auto entropy_changed = changed(before, snapshot(t));
    if (entropy_changed != std::set<std::string>{"disentangler_ci"})
        failures.push_back("entropy step changed " + names(entropy_changed));

    before = snapshot(t);
    t.domain_step(f_g, ns);
    const auto domain_changed = changed(before, snapshot(t));
    if (domain_changed.count("class_identifier") || domain_changed.count("generator"))
        failures.push_back("domain step changed " + names(domain_changed));

    before = snapshot(t);
    t.mi_step(f_g);
    const auto mi_changed = changed(before, snapshot(t));
    if (mi_changed != std::set<std::string>{"statistic", "disentangler_di", "disentangler_ds", "disentangler_ci"})
        failures.push_back("MI step changed " + names(mi_changed));

    // One adversarial MI step on copies, replaying its permutations: the
    // estimate must rise with only T's update and fall with only the heads'.
    ComponentSet<float> old = t.components();
    ComponentSet<float> stepped = old;
    const Rng perm_state(5);
    auto estimate = [&](ComponentSet<float>& set) {
        Rng unused(0);
        const ForwardOptions opt{true, false, &unused};
        const Matrix<float> di = set.di_head.forward(f_g, opt), ds = set.ds_head.forward(f_g, opt),
                            ci = set.ci_head.forward(f_g, opt);
        Rng r = perm_state;
        const auto p1 = derangement(static_cast<int>(f_g.rows()), r);
        const auto p2 = derangement(static_cast<int>(f_g.rows()), r);
        return static_cast<double>(mi_objective(set.statistic, ds, di, p1, nullptr, false).estimate +
                                   mi_objective(set.statistic, ci, di, p2, nullptr, false).estimate);
    };
    {
        BundleTrace<float> tr;
        FeatureBundle<float> b;
        Rng unused(0);
        const ForwardOptions opt{true, false, &unused};
        b.f_g = f_g;
        b.f_di = stepped.di_head.forward(f_g, opt, &tr.di);
        b.f_ds = stepped.ds_head.forward(f_g, opt, &tr.ds);
        b.f_ci = stepped.ci_head.forward(f_g, opt, &tr.ci);
        OptimizerConfig oc;
        oc.learning_rate = 1e-4;
        Optimizer<float> o_t(oc), o_di(oc), o_ds(oc), o_ci(oc);
        Rng r = perm_state;
        MiStepOptions mo;
        mo.weight = c.weights.mutual_information;
        mi_adversarial_step(stepped.statistic, MiHeads<float>{stepped.di_head, stepped.ds_head, stepped.ci_head, tr.di, tr.ds, tr.ci},
                            b, MiOptimizers<float>{o_t, o_di, o_ds, o_ci}, nullptr, nullptr, r, mo);
    }
    const double e0 = estimate(old);
    ComponentSet<float> new_t = old;
    new_t.statistic = stepped.statistic;
    ComponentSet<float> new_heads = stepped;
    new_heads.statistic = old.statistic;
    const double e_t = estimate(new_t), e_d = estimate(new_heads);
    if (!(e_t > e0)) failures.push_back("T did not ascend (" + num(e0) + " -> " + num(e_t) + ")");
    if (!(e_d < e0)) failures.push_back("heads did not descend (" + num(e0) + " -> " + num(e_d) + ")");

    ExperimentConfig so = c;
    so.level = AblationLevel::source_only;
    Trainer<float> base(so, data);
    const Snapshot init = snapshot(base);
    base.run();
    const auto so_changed = changed(init, snapshot(base));
    for (const char* untouched : {"domain_identifier", "statistic", "reconstructor", "radius", "disentangler_ds",
                                  "disentangler_ci"})
        if (so_changed.count(untouched)) failures.push_back(std::string("source_only changed ") + untouched);

    Outcome o;
    o.pass = failures.empty();
    o.detail = "entropy step changed " + names(entropy_changed) + "; MI estimate " + num(e0) + " -> T-only " + num(e_t) +
               ", heads-only " + num(e_d) + "; source_only changed " + names(so_changed);
    for (const auto& f : failures) o.detail += "; FAIL: " + f;
    return o;
}

// ---------------------------------------------------------------- 7

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

Outcome determinism(const fs::path& scratch) {
    fs::remove_all(scratch);
    fs::create_directories(scratch);
    RunConfig rc = load_run_config(std::nullopt, {"data.source_count=320", "data.target_count=160", "train.epochs=3",
                                                  "train.level=IV", "arch.feature_width=16", "train.seed=2"});
    const DomainMixture data = cli::load_or_generate(rc, std::nullopt);
    std::ostringstream quiet;
    cli::train_run(rc, data, scratch / "a", false, quiet);
    cli::train_run(rc, data, scratch / "b", false, quiet);
    const bool identical = slurp(scratch / "a" / cli::metrics_file) == slurp(scratch / "b" / cli::metrics_file) &&
                           slurp(scratch / "a" / cli::checkpoint_file) == slurp(scratch / "b" / cli::checkpoint_file);

    Trainer<float> full(rc.experiment, data);
    const auto full_reports = full.run();
    Trainer<float> first(rc.experiment, data);
    const long cut = first.total_steps() / 2 + 3;  // mid-epoch
    std::vector<LossReport> resumed;
    while (first.steps_done() < cut) resumed.push_back(first.step());
    first.save_checkpoint(scratch / "mid.dada");
    Trainer<float> second(rc.experiment, data);
    second.load_checkpoint(scratch / "mid.dada");
    for (const auto& r : second.run()) resumed.push_back(r);
    full.save_checkpoint(scratch / "full.dada");
    second.save_checkpoint(scratch / "resumed.dada");
    const bool same_stream = resumed == full_reports;
    const bool same_state = slurp(scratch / "full.dada") == slurp(scratch / "resumed.dada");

    Outcome o;
    o.pass = identical && same_stream && same_state;
    o.detail = std::string("two fixed-seed runs ") + (identical ? "byte-identical" : "DIFFER") + "; resume at step " +
               std::to_string(cut) + "/" + std::to_string(full.total_steps()) + ": report stream " +
               (same_stream ? "identical" : "DIFFERS") + ", final checkpoint " + (same_state ? "identical" : "DIFFERS");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria 1-8; one PASS/FAIL line each", "dada_acceptance"};
    std::string config = DADA_SOURCE_DIR "/configs/desk.ini";
    std::string artifacts = (fs::temp_directory_path() / "dada_acceptance").string();
    std::vector<int> only;
    app.add_option("--config", config, "ablation config for criteria 4, 5 and 8");
    app.add_option("--artifacts", artifacts, "scratch directory for runs");
    app.add_option("--only", only, "criteria to run (default: all)")->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    auto wanted = [&](int c) { return only.empty() || std::find(only.begin(), only.end(), c) != only.end(); };

    int failed = 0;
    auto report = [&](int n, const std::string& name, const std::function<Outcome()>& f) {
        if (!wanted(n)) return;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = f();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << name << ", " << num(secs, 3)
                  << " s): " << o.detail << std::endl;
    };

    report(1, "loss identities", loss_identities);
    report(2, "gradient suite", [] { return GradientSuite().run(); });
    report(3, "MINE oracle", mine_oracle);
    AblationArtifacts ablation;
    if (wanted(4) || wanted(5) || wanted(8)) {
        std::cout << "running the ablation for criteria 4, 5 and 8 with " << config << std::endl;
        const auto start = std::chrono::steady_clock::now();
        ablation = run_ablation(config, fs::path(artifacts) / "ablation");
        std::cout << "ablation finished in "
                  << num(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 4) << " s"
                  << std::endl;
    }
    report(4, "ablation trend", [&] { return ablation_trend(ablation); });
    report(5, "A-distance ordering", [&] { return a_distance_ordering(ablation); });
    report(6, "update isolation", update_isolation);
    report(7, "determinism and resume", [&] { return determinism(fs::path(artifacts) / "determinism"); });
    report(8, "convergence sanity", [&] { return convergence(ablation); });
    return failed == 0 ? 0 : 1;
}
