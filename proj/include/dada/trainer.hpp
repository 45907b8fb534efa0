#ifndef DADA_TRAINER_HPP
#define DADA_TRAINER_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dada/container.hpp"
#include "dada/data.hpp"
#include "dada/losses.hpp"
#include "dada/mine.hpp"
#include "dada/model.hpp"
#include "dada/optimizer.hpp"

namespace dada {

enum class AblationLevel { source_only, I, II, III, IV };

inline constexpr std::array<AblationLevel, 5> all_levels{AblationLevel::source_only, AblationLevel::I,
                                                        AblationLevel::II, AblationLevel::III, AblationLevel::IV};

std::string level_name(AblationLevel level);
AblationLevel parse_level(const std::string& name);

/// Loss terms switched on by an ablation level. Each level adds to the one below.
struct LevelTerms {
    bool target_rows = false;  // target images share the generator batch
    bool class_on_ci = false;
    bool entropy = false;
    bool domain = false;
    bool mutual_information = false;
    bool ring = false;
    bool reconstruction = false;

    static LevelTerms of(AblationLevel level);
};

struct LossWeights {
    double cross_entropy = 1.0;
    double entropy = 1.0;
    double domain = 1.0;
    double mutual_information = 0.1;
    double reconstruction = 1.0;
    double ring = 1.0;

    bool operator==(const LossWeights&) const = default;
};

struct ExperimentConfig {
    ArchConfig arch;
    int batch_size = 32;
    int epochs = 30;
    int inner_iterations = 1;
    std::uint64_t seed = 0;
    AblationLevel level = AblationLevel::IV;
    OptimizerConfig optimizer;
    double generator_lr_scale = 1.0;
    double statistic_lr_scale = 1.0;
    LossWeights weights;
    double ring_beta = 1.0;
    bool ring_geman_mcclure = true;
    double ema_decay = 0.99;
    bool mi_bias_correction = true;
    int statistic_warmup = 0;
    FoolingMode fooling = FoolingMode::negated;
    bool class_loss_on_ci = true;
    bool classifier_joint_batch_norm = true;
    bool generator_everywhere = false;
    bool reparameterized_encoder = false;
    bool optimizer_per_substep = false;  // separate optimizer state per (substep, component)

    void validate() const;
};

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public DataError {
public:
    using DataError::DataError;
};

class IncompatibleCheckpointError : public CheckpointError {
public:
    using CheckpointError::CheckpointError;
};

/// Scalar summary of one outer training step. Disabled terms stay 0.
struct LossReport {
    long step = 0;
    int epoch = 0;
    double cross_entropy = 0;  // source CE through f_di
    double cross_entropy_ci = 0;
    double entropy = 0;  // negative entropy of C(f_ci), source + target
    double domain_identifier = 0;
    double fool = 0;
    double mutual_information = 0;  // I(f_di; f_ds) + I(f_di; f_ci)
    double ring = 0;
    double reconstruction = 0;
    double mi_di_ds = 0;
    double mi_di_ci = 0;
    double radius = 0;
    double source_accuracy = 0;

    bool operator==(const LossReport&) const = default;
    bool all_finite() const;
};

template <typename Scalar>
struct TrainingBatch {
    Matrix<Scalar> source;
    Matrix<Scalar> target;
    std::vector<int> labels;

    static TrainingBatch from(const SourceBatch& s, const TargetBatch& t) {
        return {s.images.template cast<Scalar>(), t.images.template cast<Scalar>(), s.labels};
    }
};

/// Parameter gradients of one objective, keyed by component name.
template <typename Scalar>
struct ComponentGrads {
    std::map<std::string, Gradients<Scalar>> by_component;
    Scalar radius = 0;
    std::vector<Matrix<Scalar>> log_variance;  // reparameterized encoder only
    Matrix<Scalar> f_g;  // d objective / d f_G

    bool all_finite() const {
        for (const auto& [name, grads] : by_component)
            for (const auto& g : grads)
                if (!g.allFinite()) return false;
        for (const auto& g : log_variance)
            if (!g.allFinite()) return false;
        return std::isfinite(static_cast<double>(radius));
    }
};

template <typename Scalar>
struct ClassTerms {
    Scalar cross_entropy_di = 0;
    Scalar cross_entropy_ci = 0;
    Scalar ring = 0;
    Scalar value = 0;  // weighted sum
    double accuracy = 0;
    ComponentGrads<Scalar> grads;
};

template <typename Scalar>
struct EntropyTerms {
    Scalar source = 0;
    Scalar target = 0;
    Scalar value = 0;
    ComponentGrads<Scalar> grads;
};

template <typename Scalar>
struct DomainTerms {
    Scalar identifier = 0;
    Scalar fool = 0;
    ComponentGrads<Scalar> grads;
};

template <typename Scalar>
struct MiTerms {
    MiStepResult result;
    ComponentGrads<Scalar> grads;
};

template <typename Scalar>
struct ReconstructionTerms {
    Scalar reconstruction = 0;
    Scalar kl = 0;
    Scalar value = 0;
    ComponentGrads<Scalar> grads;
};

namespace detail {

template <typename Scalar>
Matrix<Scalar> stack_rows(const Matrix<Scalar>& a, const Matrix<Scalar>& b) {
    Matrix<Scalar> out(a.rows() + b.rows(), a.cols());
    out << a, b;
    return out;
}

template <typename Scalar>
void add_into(Matrix<Scalar>& acc, const Matrix<Scalar>& g) {
    if (acc.size() == 0)
        acc = g;
    else
        acc += g;
}

inline std::vector<int> domain_labels(Eigen::Index n_source, Eigen::Index n_total) {
    std::vector<int> labels(static_cast<std::size_t>(n_total), 1);
    std::fill(labels.begin(), labels.begin() + n_source, 0);
    return labels;
}

inline ForwardOptions held_fixed(const ForwardOptions& opt) { return {opt.training, false, opt.rng}; }

}  // namespace detail

/// Class step objective: cross-entropy of C on source rows of f_di (and
/// f_ci when enabled), plus the ring loss on f_di. Reaches G, D_di, D_ci,
/// C and the ring radius.
template <typename Scalar>
ClassTerms<Scalar> class_terms(ComponentSet<Scalar>& cs, const TrainingBatch<Scalar>& batch,
                               const ExperimentConfig& config, const RingState& ring, const ForwardOptions& opt) {
    const LevelTerms terms = LevelTerms::of(config.level);
    const Eigen::Index ns = batch.source.rows();
    const Matrix<Scalar> x = terms.target_rows ? detail::stack_rows(batch.source, batch.target) : batch.source;
    const bool joint = config.classifier_joint_batch_norm && terms.target_rows;
    const Scalar w_ce = static_cast<Scalar>(config.weights.cross_entropy);
    const int classes = cs.arch.num_classes();

    ClassTerms<Scalar> out;
    auto& g = out.grads.by_component;
    g["generator"] = cs.generator.zero_gradients();
    g["class_identifier"] = cs.classifier.zero_gradients();

    Trace<Scalar> tg;
    const Matrix<Scalar> f_g = cs.generator.forward(x, opt, &tg);
    Matrix<Scalar> df_g = Matrix<Scalar>::Zero(f_g.rows(), f_g.cols());

    // Cross-entropy through one disentangler head; returns d/d(head output).
    auto head_ce = [&](const Matrix<Scalar>& f, const ForwardOptions& c_opt, Scalar& ce, double* accuracy) {
        Trace<Scalar> tc;
        const Matrix<Scalar> c_in = joint ? f : Matrix<Scalar>(f.topRows(ns));
        const Matrix<Scalar> logits = cs.classifier.forward(c_in, c_opt, &tc);
        auto loss = cross_entropy_logits(Matrix<Scalar>(logits.topRows(ns)), std::span<const int>(batch.labels));
        ce = loss.value;
        if (accuracy != nullptr) {
            int correct = 0;
            for (Eigen::Index i = 0; i < ns; ++i) {
                Eigen::Index arg;
                logits.row(i).maxCoeff(&arg);
                correct += static_cast<int>(arg) == batch.labels[static_cast<std::size_t>(i)];
            }
            *accuracy = static_cast<double>(correct) / static_cast<double>(ns);
        }
        Matrix<Scalar> d_logits = Matrix<Scalar>::Zero(logits.rows(), classes);
        d_logits.topRows(ns) = w_ce * loss.grad;
        const Matrix<Scalar> d_in = cs.classifier.backward(tc, d_logits, g["class_identifier"]);
        Matrix<Scalar> d_f = Matrix<Scalar>::Zero(f.rows(), f.cols());
        d_f.topRows(d_in.rows()) = d_in;
        return d_f;
    };

    Trace<Scalar> tdi;
    const Matrix<Scalar> f_di = cs.di_head.forward(f_g, opt, &tdi);
    Matrix<Scalar> d_di = head_ce(f_di, opt, out.cross_entropy_di, &out.accuracy);
    if (terms.ring) {
        const Matrix<Scalar> f_src = f_di.topRows(ns);
        const RingLoss<Scalar> r = config.ring_geman_mcclure ? ring_loss_gm(f_src, ring) : ring_loss_plain(f_src, ring);
        const Scalar w_ring = static_cast<Scalar>(config.weights.ring);
        out.ring = r.value;
        d_di.topRows(ns) += w_ring * r.grad_features;
        out.grads.radius = w_ring * r.grad_radius;
    }
    g["disentangler_di"] = cs.di_head.zero_gradients();
    df_g += cs.di_head.backward(tdi, d_di, g["disentangler_di"]);

    if (terms.class_on_ci && config.class_loss_on_ci) {
        Trace<Scalar> tci;
        const Matrix<Scalar> f_ci = cs.ci_head.forward(f_g, opt, &tci);
        // C's running statistics follow the f_di pathway only.
        const Matrix<Scalar> d_ci = head_ce(f_ci, detail::held_fixed(opt), out.cross_entropy_ci, nullptr);
        g["disentangler_ci"] = cs.ci_head.zero_gradients();
        df_g += cs.ci_head.backward(tci, d_ci, g["disentangler_ci"]);
    }
    cs.generator.backward(tg, df_g, g["generator"]);
    out.value = w_ce * (out.cross_entropy_di + out.cross_entropy_ci) +
                static_cast<Scalar>(config.weights.ring) * out.ring;
    return out;
}

/// Entropy step objective on C(f_ci) with C fixed; only D_ci receives a
/// parameter gradient.
template <typename Scalar>
EntropyTerms<Scalar> entropy_terms(ComponentSet<Scalar>& cs, const Matrix<Scalar>& f_g, Eigen::Index n_source,
                                   const ExperimentConfig& config, const ForwardOptions& opt) {
    EntropyTerms<Scalar> out;
    const Scalar w = static_cast<Scalar>(config.weights.entropy);
    const Eigen::Index nt = f_g.rows() - n_source;
    Trace<Scalar> tci;
    const Matrix<Scalar> f_ci = cs.ci_head.forward(f_g, opt, &tci);
    const ForwardOptions fixed = detail::held_fixed(opt);
    Gradients<Scalar> discard = cs.classifier.zero_gradients();
    Matrix<Scalar> d_ci(f_ci.rows(), f_ci.cols());

    auto part = [&](const Matrix<Scalar>& logits, Scalar& value) {
        auto e = negative_entropy_logits(logits);
        value = e.value;
        return Matrix<Scalar>(w * e.grad);
    };
    if (config.classifier_joint_batch_norm) {
        Trace<Scalar> tc;
        const Matrix<Scalar> logits = cs.classifier.forward(f_ci, fixed, &tc);
        Matrix<Scalar> d_logits(logits.rows(), logits.cols());
        d_logits.topRows(n_source) = part(Matrix<Scalar>(logits.topRows(n_source)), out.source);
        d_logits.bottomRows(nt) = part(Matrix<Scalar>(logits.bottomRows(nt)), out.target);
        d_ci = cs.classifier.backward(tc, d_logits, discard);
    } else {
        Trace<Scalar> ts, tt;
        const Matrix<Scalar> ls = cs.classifier.forward(Matrix<Scalar>(f_ci.topRows(n_source)), fixed, &ts);
        const Matrix<Scalar> lt = cs.classifier.forward(Matrix<Scalar>(f_ci.bottomRows(nt)), fixed, &tt);
        d_ci.topRows(n_source) = cs.classifier.backward(ts, part(ls, out.source), discard);
        d_ci.bottomRows(nt) = cs.classifier.backward(tt, part(lt, out.target), discard);
    }
    out.value = w * (out.source + out.target);
    out.grads.by_component["disentangler_ci"] = cs.ci_head.zero_gradients();
    out.grads.f_g = cs.ci_head.backward(tci, d_ci, out.grads.by_component["disentangler_ci"]);
    return out;
}

/// Domain step objectives: DI and D_ds descend the identifier loss on
/// (f_di, f_ds); D_di descends the fooling loss.
template <typename Scalar>
DomainTerms<Scalar> domain_terms(ComponentSet<Scalar>& cs, const Matrix<Scalar>& f_g, Eigen::Index n_source,
                                 const ExperimentConfig& config, const ForwardOptions& opt) {
    DomainTerms<Scalar> out;
    auto& g = out.grads.by_component;
    const Scalar w = static_cast<Scalar>(config.weights.domain);
    Trace<Scalar> tdi, tds, tdom_di, tdom_ds;
    const Matrix<Scalar> f_di = cs.di_head.forward(f_g, opt, &tdi);
    const Matrix<Scalar> f_ds = cs.ds_head.forward(f_g, opt, &tds);
    const Matrix<Scalar> l_di = cs.domain_identifier.forward(f_di, opt, &tdom_di);
    const Matrix<Scalar> l_ds = cs.domain_identifier.forward(f_ds, opt, &tdom_ds);
    const auto labels = detail::domain_labels(n_source, f_g.rows());
    const DomainLosses<Scalar> loss = domain_adversarial_losses(l_di, l_ds, std::span<const int>(labels), config.fooling);
    out.identifier = loss.identifier;
    out.fool = loss.fool;

    g["domain_identifier"] = cs.domain_identifier.zero_gradients();
    cs.domain_identifier.backward(tdom_di, w * loss.grad_identifier_di, g["domain_identifier"]);
    const Matrix<Scalar> d_ds = cs.domain_identifier.backward(tdom_ds, w * loss.grad_identifier_ds, g["domain_identifier"]);
    Gradients<Scalar> discard = cs.domain_identifier.zero_gradients();
    const Matrix<Scalar> d_di = cs.domain_identifier.backward(tdom_di, w * loss.grad_fool_di, discard);

    g["disentangler_ds"] = cs.ds_head.zero_gradients();
    g["disentangler_di"] = cs.di_head.zero_gradients();
    out.grads.f_g = cs.ds_head.backward(tds, d_ds, g["disentangler_ds"]);
    out.grads.f_g += cs.di_head.backward(tdi, d_di, g["disentangler_di"]);
    return out;
}

/// MI step gradients: T ascends the estimates, the heads descend them.
template <typename Scalar>
MiTerms<Scalar> mi_terms(ComponentSet<Scalar>& cs, const Matrix<Scalar>& f_g, const ExperimentConfig& config,
                         const ForwardOptions& opt, MovingAverage* ema_ds, MovingAverage* ema_ci, Rng& rng,
                         bool update_heads) {
    MiTerms<Scalar> out;
    BundleTrace<Scalar> t;
    FeatureBundle<Scalar> b;
    b.f_g = f_g;
    b.f_di = cs.di_head.forward(f_g, opt, &t.di);
    b.f_ds = cs.ds_head.forward(f_g, opt, &t.ds);
    b.f_ci = cs.ci_head.forward(f_g, opt, &t.ci);
    MiStepOptions options;
    options.weight = config.weights.mutual_information;
    options.update_heads = update_heads;
    MiGradients<Scalar> g = mi_adversarial_gradients(cs.statistic, b, ema_ds, ema_ci, rng, options);
    out.result = g.result;
    auto& by = out.grads.by_component;
    by["statistic"] = std::move(g.statistic);
    if (update_heads) {
        by["disentangler_di"] = cs.di_head.zero_gradients();
        by["disentangler_ds"] = cs.ds_head.zero_gradients();
        by["disentangler_ci"] = cs.ci_head.zero_gradients();
        out.grads.f_g = cs.di_head.backward(t.di, g.f_di, by["disentangler_di"]);
        out.grads.f_g += cs.ds_head.backward(t.ds, g.f_ds, by["disentangler_ds"]);
        out.grads.f_g += cs.ci_head.backward(t.ci, g.f_ci, by["disentangler_ci"]);
    }
    return out;
}

/// Reconstruction step objective: R rebuilds f_G from [f_di, f_ds] and
/// [f_di, f_ci]; both VAE losses summed. With `log_variances` (one 1 x d row
/// per head, order di, ds, ci) the features are sampled by reparameterization
/// and the KL term uses the learned variances.
template <typename Scalar>
ReconstructionTerms<Scalar> reconstruction_terms(ComponentSet<Scalar>& cs, const Matrix<Scalar>& f_g,
                                                 const ExperimentConfig& config, const ForwardOptions& opt,
                                                 const std::vector<Matrix<Scalar>>* log_variances = nullptr) {
    ReconstructionTerms<Scalar> out;
    auto& g = out.grads.by_component;
    const Scalar w = static_cast<Scalar>(config.weights.reconstruction);
    std::array<Trace<Scalar>, 3> traces;
    std::array<Network<Scalar>*, 3> heads{&cs.di_head, &cs.ds_head, &cs.ci_head};
    std::array<Matrix<Scalar>, 3> mu, z, noise, d_mu, d_lv;
    const Eigen::Index n = f_g.rows();
    for (std::size_t h = 0; h < 3; ++h) {
        mu[h] = heads[h]->forward(f_g, opt, &traces[h]);
        z[h] = mu[h];
        d_mu[h] = Matrix<Scalar>::Zero(n, mu[h].cols());
        if (log_variances != nullptr) {
            if (opt.rng == nullptr) throw std::invalid_argument("reparameterized reconstruction needs an rng");
            std::normal_distribution<double> normal;
            noise[h].resize(n, mu[h].cols());
            for (Eigen::Index i = 0; i < noise[h].size(); ++i) noise[h].data()[i] = static_cast<Scalar>(normal(*opt.rng));
            const RowVector<Scalar> sd = ((*log_variances)[h].array() * Scalar(0.5)).exp();
            z[h] = mu[h] + (noise[h].array().rowwise() * sd.array()).matrix();
            d_lv[h] = Matrix<Scalar>::Zero(1, mu[h].cols());
        }
    }
    g["reconstructor"] = cs.reconstructor.zero_gradients();
    const Eigen::Index d = mu[0].cols();
    for (std::size_t other : {std::size_t{1}, std::size_t{2}}) {
        Trace<Scalar> tr;
        const Matrix<Scalar> f_hat = cs.reconstructor.forward(concat_features(z[0], z[other]), opt, &tr);
        const Matrix<Scalar> means = concat_features(mu[0], mu[other]);
        VaeLoss<Scalar> v;
        Matrix<Scalar> grad_lv;
        if (log_variances != nullptr) {
            const Matrix<Scalar> lv = concat_features(Matrix<Scalar>((*log_variances)[0].replicate(n, 1)),
                                                      Matrix<Scalar>((*log_variances)[other].replicate(n, 1)));
            v = vae_loss_gaussian(f_g, f_hat, means, lv, &grad_lv);
        } else {
            v = vae_loss(f_g, f_hat, means);
        }
        out.reconstruction += v.reconstruction;
        out.kl += v.kl;
        detail::add_into(out.grads.f_g, Matrix<Scalar>(-w * v.grad_reconstruction));  // f_G is also the target
        const Matrix<Scalar> d_in = cs.reconstructor.backward(tr, w * v.grad_reconstruction, g["reconstructor"]);
        const std::array<std::size_t, 2> pair{0, other};
        for (int side = 0; side < 2; ++side) {
            const std::size_t h = pair[static_cast<std::size_t>(side)];
            const Matrix<Scalar> dz = d_in.middleCols(side * d, d);
            d_mu[h] += dz + w * v.grad_means.middleCols(side * d, d);
            if (log_variances != nullptr) {
                const RowVector<Scalar> half_sd = ((*log_variances)[h].array() * Scalar(0.5)).exp() * Scalar(0.5);
                d_lv[h] += ((dz.array() * noise[h].array()).colwise().sum() * half_sd.array()).matrix();
                d_lv[h] += w * grad_lv.middleCols(side * d, d).colwise().sum();
            }
        }
    }
    out.value = w * (out.reconstruction + out.kl);
    const std::array<const char*, 3> names{"disentangler_di", "disentangler_ds", "disentangler_ci"};
    for (std::size_t h = 0; h < 3; ++h) {
        g[names[h]] = heads[h]->zero_gradients();
        out.grads.f_g += heads[h]->backward(traces[h], d_mu[h], g[names[h]]);
    }
    if (log_variances != nullptr) out.grads.log_variance.assign(d_lv.begin(), d_lv.end());
    return out;
}

/// Runs the alternating schedule step by step: class disentanglement (with the entropy
/// update on D_ci), domain disentanglement, MI minimization, reconstruction.
/// Terms disabled by the ablation level are skipped with their updates.
template <typename Scalar>
class Trainer {
public:
    Trainer(ExperimentConfig config, const DomainMixture& data)
        : config_(std::move(config)),
          data_(&data),
          init_rng_(seed_stream(config_.seed, 0)),
          rng_(seed_stream(config_.seed, 1)),
          cs_(build_components<Scalar>(checked(config_, data), init_rng_)),
          stream_(data, config_.batch_size, config_.seed),
          ema_ds_(config_.ema_decay),
          ema_ci_(config_.ema_decay),
          radius_(Matrix<Scalar>::Ones(1, 1)) {
        ring_.beta = config_.ring_beta;
        if (config_.reparameterized_encoder)
            for (int h = 0; h < 3; ++h) log_variance_.push_back(Matrix<Scalar>::Zero(1, cs_.arch.feature_width()));
    }

    const ExperimentConfig& config() const { return config_; }
    ComponentSet<Scalar>& components() { return cs_; }
    const RingState& ring() const { return ring_; }
    long steps_done() const { return step_; }
    long total_steps() const { return static_cast<long>(config_.epochs) * stream_.steps_per_epoch(); }
    int steps_per_epoch() const { return stream_.steps_per_epoch(); }
    bool finished() const { return step_ >= total_steps(); }
    std::vector<Matrix<Scalar>>& log_variances() { return log_variance_; }

    /// Draws the next batch pair and runs one full step.
    LossReport step() {
        const int epoch = stream_.epoch();
        auto [s, t] = stream_.next();
        return step(TrainingBatch<Scalar>::from(s, t), epoch);
    }

    LossReport step(const TrainingBatch<Scalar>& batch, int epoch) {
        const LevelTerms terms = LevelTerms::of(config_.level);
        LossReport r;
        r.step = step_;
        r.epoch = epoch;
        nonfinite_ = false;
        Matrix<Scalar> f_g;
        Trace<Scalar> g_trace;
        Matrix<Scalar> df_g;
        const Eigen::Index ns = batch.source.rows();
        const bool everywhere = config_.generator_everywhere && terms.target_rows;

        for (int it = 0; it < config_.inner_iterations; ++it) {
            const auto c = class_step(batch);
            r.cross_entropy = static_cast<double>(c.cross_entropy_di);
            r.cross_entropy_ci = static_cast<double>(c.cross_entropy_ci);
            r.ring = static_cast<double>(c.ring);
            r.source_accuracy = c.accuracy;
            if (!terms.entropy && !terms.domain) continue;
            f_g = frozen_features(batch, everywhere ? &g_trace : nullptr);
            if (terms.entropy) {
                const auto e = entropy_step(f_g, ns);
                r.entropy = static_cast<double>(e.source + e.target);
                if (everywhere && it + 1 == config_.inner_iterations) detail::add_into(df_g, e.grads.f_g);
            }
        }
        if (terms.domain) {
            const auto d = domain_step(f_g, ns);
            r.domain_identifier = static_cast<double>(d.identifier);
            r.fool = static_cast<double>(d.fool);
            if (everywhere) detail::add_into(df_g, d.grads.f_g);
        }
        if (terms.mutual_information) {
            const auto m = mi_step(f_g);
            r.mi_di_ds = m.result.estimate_di_ds;
            r.mi_di_ci = m.result.estimate_di_ci;
            r.mutual_information = r.mi_di_ds + r.mi_di_ci;
            if (everywhere && m.grads.f_g.size() > 0) detail::add_into(df_g, m.grads.f_g);
        }
        if (terms.reconstruction) {
            const auto v = reconstruction_step(f_g);
            r.reconstruction = static_cast<double>(v.reconstruction + v.kl);
            if (everywhere) detail::add_into(df_g, v.grads.f_g);
        }
        if (everywhere && df_g.size() > 0 && !nonfinite_) {
            Gradients<Scalar> grads = cs_.generator.zero_gradients();
            cs_.generator.backward(g_trace, df_g, grads);
            apply("shared", cs_.generator, grads);
        }
        r.radius = ring_.radius;
        if (nonfinite_ || !r.all_finite()) {
            if (++nonfinite_streak_ >= 3)
                throw DivergenceError("training diverged: non-finite losses for 3 consecutive steps (last step " +
                                      std::to_string(step_) + ")");
        } else {
            nonfinite_streak_ = 0;
        }
        ++step_;
        return r;
    }

    /// Runs the remaining steps, reporting after each.
    std::vector<LossReport> run(const std::function<void(const LossReport&)>& on_report = {}) {
        std::vector<LossReport> reports;
        while (!finished()) {
            reports.push_back(step());
            if (on_report) on_report(reports.back());
        }
        return reports;
    }

    ClassTerms<Scalar> class_step(const TrainingBatch<Scalar>& batch) {
        const LevelTerms terms = LevelTerms::of(config_.level);
        if (terms.ring && !radius_initialized_) {
            const Matrix<Scalar> x = detail::stack_rows(batch.source, batch.target);
            Rng probe = rng_;
            const ForwardOptions opt{true, false, &probe};
            const Matrix<Scalar> f_di = cs_.di_head.forward(cs_.generator.forward(x, opt), opt);
            radius_(0, 0) = static_cast<Scalar>(f_di.topRows(batch.source.rows()).rowwise().norm().mean());
            radius_initialized_ = true;
        }
        sync_ring();
        ClassTerms<Scalar> c;
        if (!guard([&] { c = class_terms(cs_, batch, config_, ring_, ForwardOptions::train(rng_)); })) return c;
        if (!usable(c.value, c.grads)) return c;
        apply("class", cs_.generator, c.grads.by_component.at("generator"));
        apply("class", cs_.di_head, c.grads.by_component.at("disentangler_di"));
        if (c.grads.by_component.count("disentangler_ci"))
            apply("class", cs_.ci_head, c.grads.by_component.at("disentangler_ci"));
        apply("class", cs_.classifier, c.grads.by_component.at("class_identifier"));
        if (terms.ring) {
            optimizer(optimizer_key("class", "radius")).step({{"radius", &radius_}}, {Matrix<Scalar>::Constant(1, 1, c.grads.radius)});
            sync_ring();
            ring_.project();
            radius_(0, 0) = static_cast<Scalar>(ring_.radius);
        }
        return c;
    }

    /// G's output on the joint batch with G held fixed: batch statistics,
    /// running estimates untouched.
    Matrix<Scalar> frozen_features(const TrainingBatch<Scalar>& batch, Trace<Scalar>* trace = nullptr) {
        return cs_.generator.forward(detail::stack_rows(batch.source, batch.target), ForwardOptions{true, false, &rng_},
                                     trace);
    }

    EntropyTerms<Scalar> entropy_step(const Matrix<Scalar>& f_g, Eigen::Index n_source) {
        EntropyTerms<Scalar> e;
        if (!guard([&] { e = entropy_terms(cs_, f_g, n_source, config_, ForwardOptions::train(rng_)); })) return e;
        if (usable(e.value, e.grads)) apply("entropy", cs_.ci_head, e.grads.by_component.at("disentangler_ci"));
        return e;
    }

    DomainTerms<Scalar> domain_step(const Matrix<Scalar>& f_g, Eigen::Index n_source) {
        DomainTerms<Scalar> d;
        if (!guard([&] { d = domain_terms(cs_, f_g, n_source, config_, ForwardOptions::train(rng_)); })) return d;
        if (!usable(d.identifier + d.fool, d.grads)) return d;
        apply("domain", cs_.domain_identifier, d.grads.by_component.at("domain_identifier"));
        apply("domain", cs_.ds_head, d.grads.by_component.at("disentangler_ds"));
        apply("domain", cs_.di_head, d.grads.by_component.at("disentangler_di"));
        return d;
    }

    MiTerms<Scalar> mi_step(const Matrix<Scalar>& f_g) {
        MiTerms<Scalar> m;
        const bool heads = step_ >= config_.statistic_warmup;
        MovingAverage* eds = config_.mi_bias_correction ? &ema_ds_ : nullptr;
        MovingAverage* eci = config_.mi_bias_correction ? &ema_ci_ : nullptr;
        if (!guard([&] { m = mi_terms(cs_, f_g, config_, ForwardOptions::train(rng_), eds, eci, rng_, heads); }))
            return m;
        if (!usable(static_cast<Scalar>(m.result.statistic_objective), m.grads)) return m;
        optimizer(optimizer_key("mi", "statistic"), config_.statistic_lr_scale)
            .step(cs_.statistic.parameters(), m.grads.by_component.at("statistic"));
        if (heads) {
            apply("mi", cs_.di_head, m.grads.by_component.at("disentangler_di"));
            apply("mi", cs_.ds_head, m.grads.by_component.at("disentangler_ds"));
            apply("mi", cs_.ci_head, m.grads.by_component.at("disentangler_ci"));
        }
        return m;
    }

    ReconstructionTerms<Scalar> reconstruction_step(const Matrix<Scalar>& f_g) {
        ReconstructionTerms<Scalar> v;
        const auto* lv = config_.reparameterized_encoder ? &log_variance_ : nullptr;
        if (!guard([&] { v = reconstruction_terms(cs_, f_g, config_, ForwardOptions::train(rng_), lv); })) return v;
        if (!usable(v.value, v.grads)) return v;
        apply("reconstruction", cs_.reconstructor, v.grads.by_component.at("reconstructor"));
        apply("reconstruction", cs_.di_head, v.grads.by_component.at("disentangler_di"));
        apply("reconstruction", cs_.ds_head, v.grads.by_component.at("disentangler_ds"));
        apply("reconstruction", cs_.ci_head, v.grads.by_component.at("disentangler_ci"));
        if (lv != nullptr) {
            std::vector<ParamRef<Scalar>> params;
            for (auto& m : log_variance_) params.push_back({"log_variance", &m});
            optimizer(optimizer_key("reconstruction", "log_variance")).step(params, v.grads.log_variance);
        }
        return v;
    }

    void save_checkpoint(const std::filesystem::path& path) {
        std::ostringstream rng_state;
        rng_state << rng_;
        nlohmann::json opt_state = nlohmann::json::object();
        Container c{"checkpoint", {}, {}};
        for (auto& [key, o] : optimizers_) {
            opt_state[key] = {{"steps", o.steps()}, {"tensors", o.first_moments().size()}};
            for (std::size_t i = 0; i < o.first_moments().size(); ++i) {
                c.blobs.push_back(matrix_blob("opt:" + key + ":m:" + std::to_string(i), o.first_moments()[i]));
                c.blobs.push_back(matrix_blob("opt:" + key + ":v:" + std::to_string(i), o.second_moments()[i]));
            }
        }
        c.manifest = {{"arch", arch_signature(cs_.arch)},
                      {"level", level_name(config_.level)},
                      {"step", step_},
                      {"epoch", stream_.epoch()},
                      {"position", stream_.position()},
                      {"rng", rng_state.str()},
                      {"radius_initialized", radius_initialized_},
                      {"ema_ds", {ema_ds_.value(), ema_ds_.seeded()}},
                      {"ema_ci", {ema_ci_.value(), ema_ci_.seeded()}},
                      {"nonfinite_streak", nonfinite_streak_},
                      {"optimizers", opt_state},
                      {"log_variances", log_variance_.size()}};
        for (auto& p : cs_.parameters()) c.blobs.push_back(matrix_blob("param:" + p.name, *p.value));
        for (auto& p : cs_.buffers()) c.blobs.push_back(matrix_blob("buffer:" + p.name, *p.value));
        c.blobs.push_back(matrix_blob("radius", radius_));
        for (std::size_t h = 0; h < log_variance_.size(); ++h)
            c.blobs.push_back(matrix_blob("log_variance:" + std::to_string(h), log_variance_[h]));
        write_container(path, c);
    }

    void load_checkpoint(const std::filesystem::path& path) {
        const Container c = read_container(path, "checkpoint");
        const auto& m = c.manifest;
        try {
            if (m.at("arch").get<std::string>() != arch_signature(cs_.arch))
                throw IncompatibleCheckpointError("checkpoint architecture '" + m.at("arch").get<std::string>() +
                                                  "' does not match '" + arch_signature(cs_.arch) + "'");
            if (m.at("log_variances").get<std::size_t>() != log_variance_.size())
                throw IncompatibleCheckpointError("checkpoint encoder variant does not match the configuration");
            for (auto& p : cs_.parameters()) blob_to_matrix(c.blob("param:" + p.name), *p.value);
            for (auto& p : cs_.buffers()) blob_to_matrix(c.blob("buffer:" + p.name), *p.value);
            blob_to_matrix(c.blob("radius"), radius_);
            for (std::size_t h = 0; h < log_variance_.size(); ++h)
                blob_to_matrix(c.blob("log_variance:" + std::to_string(h)), log_variance_[h]);
            optimizers_.clear();
            for (const auto& [key, state] : m.at("optimizers").items()) {
                Optimizer<Scalar>& o = optimizer(key, lr_scale_for(key));
                o.set_steps(state.at("steps").template get<long>());
                const auto n = state.at("tensors").template get<std::size_t>();
                for (std::size_t i = 0; i < n; ++i) {
                    const Blob& bm = c.blob("opt:" + key + ":m:" + std::to_string(i));
                    const Blob& bv = c.blob("opt:" + key + ":v:" + std::to_string(i));
                    o.first_moments().push_back(Matrix<Scalar>(bm.shape.at(0), bm.shape.at(1)));
                    o.second_moments().push_back(Matrix<Scalar>(bv.shape.at(0), bv.shape.at(1)));
                    blob_to_matrix(bm, o.first_moments().back());
                    blob_to_matrix(bv, o.second_moments().back());
                }
            }
            step_ = m.at("step").get<long>();
            stream_.seek(m.at("epoch").get<int>(), m.at("position").get<int>());
            std::istringstream rng_state(m.at("rng").get<std::string>());
            rng_state >> rng_;
            radius_initialized_ = m.at("radius_initialized").get<bool>();
            ema_ds_.restore(m.at("ema_ds")[0].get<double>(), m.at("ema_ds")[1].get<bool>());
            ema_ci_.restore(m.at("ema_ci")[0].get<double>(), m.at("ema_ci")[1].get<bool>());
            nonfinite_streak_ = m.at("nonfinite_streak").get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw CheckpointError(path.string() + ": malformed checkpoint manifest: " + e.what());
        } catch (const ShapeError& e) {
            throw IncompatibleCheckpointError(path.string() + ": " + e.what());
        }
        sync_ring();
    }

private:
    static Rng seed_stream(std::uint64_t seed, std::uint32_t stream) {
        std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
        return Rng(seq);
    }

    static const ArchConfig& checked(const ExperimentConfig& config, const DomainMixture& data) {
        config.validate();
        if (config.arch.input != data.shape)
            throw ConfigError("arch input shape does not match the dataset's image shape");
        if (config.arch.num_classes != data.num_classes)
            throw ConfigError("arch num_classes (" + std::to_string(config.arch.num_classes) +
                              ") does not match the dataset (" + std::to_string(data.num_classes) + ")");
        return config.arch;
    }

    double lr_scale_for(const std::string& key) const {
        if (key.ends_with("statistic")) return config_.statistic_lr_scale;
        if (key.ends_with("generator")) return config_.generator_lr_scale;
        return 1.0;
    }

    std::string optimizer_key(const std::string& stage, const std::string& component) const {
        return config_.optimizer_per_substep ? stage + "." + component : component;
    }

    Optimizer<Scalar>& optimizer(const std::string& key, double scale = 1.0) {
        auto it = optimizers_.find(key);
        if (it == optimizers_.end()) it = optimizers_.emplace(key, Optimizer<Scalar>(config_.optimizer, scale)).first;
        return it->second;
    }

    void apply(const std::string& stage, Network<Scalar>& net, const Gradients<Scalar>& grads) {
        const std::string key = optimizer_key(stage, net.name());
        optimizer(key, lr_scale_for(key)).step(net.parameters(), grads);
    }

    template <typename F>
    bool guard(F&& f) {
        try {
            f();
            return true;
        } catch (const LossError&) {
        } catch (const MineError&) {
        }
        nonfinite_ = true;
        return false;
    }

    bool usable(Scalar value, const ComponentGrads<Scalar>& grads) {
        if (std::isfinite(static_cast<double>(value)) && grads.all_finite()) return true;
        nonfinite_ = true;
        return false;
    }

    void sync_ring() { ring_.radius = static_cast<double>(radius_(0, 0)); }

    ExperimentConfig config_;
    const DomainMixture* data_;
    Rng init_rng_;
    Rng rng_;
    ComponentSet<Scalar> cs_;
    BatchStream stream_;
    std::map<std::string, Optimizer<Scalar>> optimizers_;
    MovingAverage ema_ds_;
    MovingAverage ema_ci_;
    RingState ring_;
    Matrix<Scalar> radius_;
    bool radius_initialized_ = false;
    std::vector<Matrix<Scalar>> log_variance_;
    long step_ = 0;
    bool nonfinite_ = false;
    int nonfinite_streak_ = 0;
};

template <typename Scalar>
struct TrainResult {
    ComponentSet<Scalar> components;
    std::vector<LossReport> reports;
};

template <typename Scalar = float>
TrainResult<Scalar> train(const ExperimentConfig& config, const DomainMixture& data,
                          const std::function<void(const LossReport&)>& on_report = {}) {
    Trainer<Scalar> t(config, data);
    auto reports = t.run(on_report);
    return {std::move(t.components()), std::move(reports)};
}

}  // namespace dada

#endif  // DADA_TRAINER_HPP
