#ifndef DADA_MINE_HPP
#define DADA_MINE_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dada/model.hpp"
#include "dada/optimizer.hpp"

namespace dada {

class MineError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Exponential moving average of a scalar stream. Without an explicit
/// initial value the first observation seeds the average.
class MovingAverage {
public:
    explicit MovingAverage(double decay = 0.99, std::optional<double> initial = std::nullopt)
        : decay_(decay), value_(initial.value_or(0.0)), seeded_(initial.has_value()) {
        if (decay < 0 || decay > 1) throw std::invalid_argument("moving average decay must lie in [0, 1]");
    }

    double update(double observation) {
        value_ = seeded_ ? decay_ * value_ + (1 - decay_) * observation : observation;
        seeded_ = true;
        return value_;
    }

    double value() const { return value_; }
    bool seeded() const { return seeded_; }
    double decay() const { return decay_; }
    void restore(double value, bool seeded) {
        value_ = value;
        seeded_ = seeded;
    }

private:
    double decay_;
    double value_;
    bool seeded_;
};

/// Smooths a stream of estimates; returns the final average.
inline double bias_control(const std::vector<double>& stream, double decay = 0.99,
                           std::optional<double> initial = std::nullopt) {
    if (stream.empty() && !initial) throw std::invalid_argument("bias_control: empty stream");
    MovingAverage ema(decay, initial);
    for (double v : stream) ema.update(v);
    return ema.value();
}

/// Random cyclic permutation (Sattolo), so no row keeps its own partner.
inline std::vector<int> derangement(int n, Rng& rng) {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<int> pick(0, i - 1);
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
    }
    return perm;
}

enum class FeaturePair { di_ds, di_ci, custom };

inline const char* pair_name(FeaturePair p) {
    switch (p) {
        case FeaturePair::di_ds: return "di_ds";
        case FeaturePair::di_ci: return "di_ci";
        default: return "custom";
    }
}

struct MiEstimate {
    double value = 0;  // nats
    int batch_size = 0;
    FeaturePair pairing = FeaturePair::custom;
};

inline constexpr double statistic_clamp = 50.0;

/// Value and gradients of the Donsker-Varadhan estimate for a fixed
/// marginal permutation.
template <typename Scalar>
struct MiObjective {
    Scalar estimate = 0;
    double mean_exp_marginal = 0;  // (1/n) sum exp(T(x, z'))
    Gradients<Scalar> statistic_grads;  // gradient of -estimate (T ascends)
    Matrix<Scalar> grad_x;  // d estimate / dx
    Matrix<Scalar> grad_z;  // d estimate / dz
};

/// I = mean T(x_i, z_i) - log mean exp T(x_i, z_perm(i)).
///
/// When `partition_average` is given, T's gradient replaces the batch
/// partition estimate in the log-term derivative by the moving average
/// (after folding in the current batch). Feature gradients always use the
/// plain batch estimate.
template <typename Scalar>
MiObjective<Scalar> mi_objective(const StatisticNetwork<Scalar>& t, const Matrix<Scalar>& x, const Matrix<Scalar>& z,
                                 const std::vector<int>& perm, MovingAverage* partition_average = nullptr,
                                 bool need_feature_grads = true) {
    const Eigen::Index n = x.rows();
    if (n < 2) throw MineError("mutual information estimate needs at least 2 samples");
    if (z.rows() != n || static_cast<Eigen::Index>(perm.size()) != n)
        throw MineError("mutual information estimate: batch sizes differ");
    Matrix<Scalar> z_marginal(n, z.cols());
    for (Eigen::Index i = 0; i < n; ++i) z_marginal.row(i) = z.row(perm[static_cast<std::size_t>(i)]);

    typename StatisticNetwork<Scalar>::Trace joint_trace, marginal_trace;
    Matrix<Scalar> t_joint = t.forward(x, z, &joint_trace);
    Matrix<Scalar> t_marginal = t.forward(x, z_marginal, &marginal_trace);
    if (!t_joint.allFinite() || !t_marginal.allFinite()) throw MineError("statistic network produced non-finite output");

    const Scalar lim = static_cast<Scalar>(statistic_clamp);
    Matrix<Scalar> clamped = t_marginal.cwiseMax(-lim).cwiseMin(lim);
    const Scalar m = clamped.maxCoeff();
    Matrix<Scalar> shifted = (clamped.array() - m).exp().matrix();
    const Scalar sum_shifted = shifted.sum();
    const Scalar nn = static_cast<Scalar>(n);

    MiObjective<Scalar> out;
    out.estimate = t_joint.mean() - (m + std::log(sum_shifted / nn));
    out.mean_exp_marginal = std::exp(static_cast<double>(m)) * static_cast<double>(sum_shifted) / static_cast<double>(n);

    Matrix<Scalar> d_joint = Matrix<Scalar>::Constant(n, 1, Scalar(1) / nn);
    Matrix<Scalar> d_marginal = -shifted / sum_shifted;  // softmax weights
    for (Eigen::Index i = 0; i < n; ++i)
        if (t_marginal(i, 0) != clamped(i, 0)) d_marginal(i, 0) = 0;

    Matrix<Scalar> d_marginal_t = d_marginal;
    if (partition_average != nullptr) {
        const double avg = partition_average->update(out.mean_exp_marginal);
        for (Eigen::Index i = 0; i < n; ++i)
            if (d_marginal(i, 0) != Scalar(0))
                d_marginal_t(i, 0) =
                    -static_cast<Scalar>(std::exp(static_cast<double>(clamped(i, 0))) / (static_cast<double>(n) * avg));
    }

    out.statistic_grads = t.zero_gradients();
    Gradients<Scalar> feature_pass = out.statistic_grads;
    // T maximizes the estimate: its loss is -I.
    t.backward(joint_trace, -d_joint, out.statistic_grads);
    t.backward(marginal_trace, -d_marginal_t, out.statistic_grads);
    if (need_feature_grads) {
        auto [gx_j, gz_j] = t.backward(joint_trace, d_joint, feature_pass);
        auto [gx_m, gz_m] = t.backward(marginal_trace, d_marginal, feature_pass);
        out.grad_x = gx_j + gx_m;
        out.grad_z = gz_j;
        for (Eigen::Index i = 0; i < n; ++i) out.grad_z.row(perm[static_cast<std::size_t>(i)]) += gz_m.row(i);
    }
    return out;
}

/// Monte-Carlo estimate with an in-batch shuffled marginal.
template <typename Scalar>
MiEstimate mi_estimate(const StatisticNetwork<Scalar>& t, const Matrix<Scalar>& x, const Matrix<Scalar>& z, Rng& rng,
                       FeaturePair pairing = FeaturePair::custom) {
    if (x.rows() < 2) throw MineError("mutual information estimate needs at least 2 samples");
    if (z.rows() != x.rows()) throw MineError("mutual information estimate: batch sizes differ");
    const auto perm = derangement(static_cast<int>(x.rows()), rng);
    Matrix<Scalar> z_marginal(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) z_marginal.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
    Matrix<Scalar> t_joint = t.forward(x, z);
    Matrix<Scalar> t_marginal = t.forward(x, z_marginal);
    if (!t_joint.allFinite() || !t_marginal.allFinite()) throw MineError("statistic network produced non-finite output");
    Eigen::ArrayXd marg = t_marginal.col(0).template cast<double>().array().max(-statistic_clamp).min(statistic_clamp);
    const double m = marg.maxCoeff();
    const double lme = m + std::log((marg - m).exp().mean());
    return {t_joint.template cast<double>().mean() - lme, static_cast<int>(x.rows()), pairing};
}

/// One ascent step of T alone on the pair (x, z); returns the batch estimate.
template <typename Scalar>
double statistic_step(StatisticNetwork<Scalar>& t, const Matrix<Scalar>& x, const Matrix<Scalar>& z,
                      Optimizer<Scalar>& opt, MovingAverage* partition_average, Rng& rng) {
    const auto perm = derangement(static_cast<int>(x.rows()), rng);
    MiObjective<Scalar> obj = mi_objective(t, x, z, perm, partition_average, false);
    opt.step(t.parameters(), obj.statistic_grads);
    return static_cast<double>(obj.estimate);
}

struct MiStepOptions {
    double weight = 1.0;                   // lambda_mi applied to the heads' descent
    bool update_statistic = true;
    bool update_heads = true;
    bool pair_di_ds = true;
    bool pair_di_ci = true;
};

/// Heads and traces taking part in one adversarial MI step.
template <typename Scalar>
struct MiHeads {
    Network<Scalar>& di;
    Network<Scalar>& ds;
    Network<Scalar>& ci;
    const Trace<Scalar>& di_trace;
    const Trace<Scalar>& ds_trace;
    const Trace<Scalar>& ci_trace;
};

template <typename Scalar>
struct MiOptimizers {
    Optimizer<Scalar>& statistic;
    Optimizer<Scalar>& di;
    Optimizer<Scalar>& ds;
    Optimizer<Scalar>& ci;
};

struct MiStepResult {
    double statistic_objective = 0;  // -(I_ds + I_ci), minimized by T
    double heads_objective = 0;      // weight * (I_ds + I_ci), minimized by the heads
    double estimate_di_ds = 0;
    double estimate_di_ci = 0;
};

template <typename Scalar>
struct MiGradients {
    MiStepResult result;
    Gradients<Scalar> statistic;  // of -(I_ds + I_ci)
    Matrix<Scalar> f_di, f_ds, f_ci;  // of weight * (I_ds + I_ci)
};

/// Gradients of both adversarial MI objectives from one forward pass of T.
template <typename Scalar>
MiGradients<Scalar> mi_adversarial_gradients(const StatisticNetwork<Scalar>& t, const FeatureBundle<Scalar>& bundle,
                                             MovingAverage* ema_ds, MovingAverage* ema_ci, Rng& rng,
                                             const MiStepOptions& options = {}) {
    MiGradients<Scalar> g;
    g.statistic = t.zero_gradients();
    g.f_di = Matrix<Scalar>::Zero(bundle.f_di.rows(), bundle.f_di.cols());
    g.f_ds = Matrix<Scalar>::Zero(bundle.f_ds.rows(), bundle.f_ds.cols());
    g.f_ci = Matrix<Scalar>::Zero(bundle.f_ci.rows(), bundle.f_ci.cols());
    const int n = static_cast<int>(bundle.f_di.rows());
    const Scalar w = static_cast<Scalar>(options.weight);

    auto accumulate = [&](const Matrix<Scalar>& x, Matrix<Scalar>& g_x, MovingAverage* ema) {
        const auto perm = derangement(n, rng);
        MiObjective<Scalar> obj = mi_objective(t, x, bundle.f_di, perm, ema, options.update_heads);
        for (std::size_t i = 0; i < g.statistic.size(); ++i) g.statistic[i] += obj.statistic_grads[i];
        if (options.update_heads) {
            g_x += w * obj.grad_x;
            g.f_di += w * obj.grad_z;
        }
        return static_cast<double>(obj.estimate);
    };
    if (options.pair_di_ds) g.result.estimate_di_ds = accumulate(bundle.f_ds, g.f_ds, ema_ds);
    if (options.pair_di_ci) g.result.estimate_di_ci = accumulate(bundle.f_ci, g.f_ci, ema_ci);
    const double total = g.result.estimate_di_ds + g.result.estimate_di_ci;
    g.result.statistic_objective = -total;
    g.result.heads_objective = options.weight * total;
    return g;
}

/// One adversarial MINE step on both feature pairs: T ascends the estimate,
/// the disentangler heads descend it. Both sides use gradients from the same
/// forward pass.
template <typename Scalar>
MiStepResult mi_adversarial_step(StatisticNetwork<Scalar>& t, MiHeads<Scalar> heads, const FeatureBundle<Scalar>& bundle,
                                 MiOptimizers<Scalar> opt, MovingAverage* ema_ds, MovingAverage* ema_ci, Rng& rng,
                                 const MiStepOptions& options = {}) {
    MiGradients<Scalar> g = mi_adversarial_gradients(t, bundle, ema_ds, ema_ci, rng, options);
    if (options.update_heads) {
        auto step_head = [](Network<Scalar>& head, const Trace<Scalar>& trace, const Matrix<Scalar>& grad,
                            Optimizer<Scalar>& o) {
            Gradients<Scalar> grads = head.zero_gradients();
            head.backward(trace, grad, grads);
            o.step(head.parameters(), grads);
        };
        if (options.pair_di_ds || options.pair_di_ci) step_head(heads.di, heads.di_trace, g.f_di, opt.di);
        if (options.pair_di_ds) step_head(heads.ds, heads.ds_trace, g.f_ds, opt.ds);
        if (options.pair_di_ci) step_head(heads.ci, heads.ci_trace, g.f_ci, opt.ci);
    }
    if (options.update_statistic) opt.statistic.step(t.parameters(), g.statistic);
    return g.result;
}

}  // namespace dada

#endif  // DADA_MINE_HPP
