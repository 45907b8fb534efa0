#ifndef DADA_LOSSES_HPP
#define DADA_LOSSES_HPP

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "dada/types.hpp"

namespace dada {

class LossError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

template <typename Scalar>
struct LossGrad {
    Scalar value = 0;
    Matrix<Scalar> grad;
};

template <typename Scalar>
Matrix<Scalar> log_softmax(const Matrix<Scalar>& logits) {
    Matrix<Scalar> out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const Scalar m = logits.row(i).maxCoeff();
        const Scalar lse = m + std::log((logits.row(i).array() - m).exp().sum());
        out.row(i) = logits.row(i).array() - lse;
    }
    return out;
}

template <typename Scalar>
Matrix<Scalar> softmax(const Matrix<Scalar>& logits) {
    return log_softmax(logits).array().exp().matrix();
}

/// Per-example class distributions f_C, one row per example.
template <typename Scalar>
struct ClassPrediction {
    Matrix<Scalar> probabilities;

    static ClassPrediction from_logits(const Matrix<Scalar>& logits) { return {softmax(logits)}; }

    Eigen::Index size() const { return probabilities.rows(); }
    int num_classes() const { return static_cast<int>(probabilities.cols()); }

    int argmax(Eigen::Index row) const {
        Eigen::Index k;
        probabilities.row(row).maxCoeff(&k);
        return static_cast<int>(k);
    }

    void validate(double tolerance = 1e-5) const {
        if (!probabilities.allFinite()) throw LossError("class prediction contains non-finite values");
        if ((probabilities.array() < Scalar(0)).any()) throw LossError("class prediction has negative entries");
        for (Eigen::Index i = 0; i < probabilities.rows(); ++i)
            if (std::abs(static_cast<double>(probabilities.row(i).sum()) - 1.0) > tolerance)
                throw LossError("class prediction row " + std::to_string(i) + " does not sum to 1");
    }
};

namespace detail {
inline void check_labels(std::span<const int> labels, Eigen::Index rows, int classes) {
    if (static_cast<Eigen::Index>(labels.size()) != rows)
        throw LossError("label count " + std::to_string(labels.size()) + " does not match batch " +
                        std::to_string(rows));
    for (int y : labels)
        if (y < 0 || y >= classes)
            throw LossError("label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}
}  // namespace detail

/// Mean of -log p[label] over the batch.
template <typename Scalar>
Scalar cross_entropy(const ClassPrediction<Scalar>& pred, std::span<const int> labels) {
    detail::check_labels(labels, pred.size(), pred.num_classes());
    if (pred.size() == 0) throw LossError("cross_entropy: empty batch");
    Scalar total = 0;
    for (Eigen::Index i = 0; i < pred.size(); ++i)
        total -= std::log(pred.probabilities(i, labels[static_cast<std::size_t>(i)]));
    return total / static_cast<Scalar>(pred.size());
}

/// Cross-entropy from logits through log-sum-exp; gradient w.r.t. logits.
template <typename Scalar>
LossGrad<Scalar> cross_entropy_logits(const Matrix<Scalar>& logits, std::span<const int> labels) {
    detail::check_labels(labels, logits.rows(), static_cast<int>(logits.cols()));
    if (logits.rows() == 0) throw LossError("cross_entropy: empty batch");
    const Scalar n = static_cast<Scalar>(logits.rows());
    Matrix<Scalar> logp = log_softmax(logits);
    LossGrad<Scalar> out;
    out.grad = logp.array().exp().matrix();
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const int y = labels[static_cast<std::size_t>(i)];
        out.value -= logp(i, y);
        out.grad(i, y) -= Scalar(1);
    }
    out.value /= n;
    out.grad /= n;
    return out;
}

/// Mean over rows of sum_k p_k log p_k (the negative Shannon entropy),
/// with 0 log 0 = 0. Lies in [-ln K, 0].
template <typename Scalar>
Scalar negative_entropy(const ClassPrediction<Scalar>& pred) {
    pred.validate();
    if (pred.size() == 0) throw LossError("negative_entropy: empty batch");
    Scalar total = 0;
    for (Eigen::Index i = 0; i < pred.size(); ++i)
        for (Eigen::Index k = 0; k < pred.probabilities.cols(); ++k) {
            const Scalar p = pred.probabilities(i, k);
            if (p > Scalar(0)) total += p * std::log(p);
        }
    return total / static_cast<Scalar>(pred.size());
}

template <typename Scalar>
LossGrad<Scalar> negative_entropy_logits(const Matrix<Scalar>& logits) {
    if (logits.rows() == 0) throw LossError("negative_entropy: empty batch");
    const Scalar n = static_cast<Scalar>(logits.rows());
    Matrix<Scalar> logp = log_softmax(logits);
    Matrix<Scalar> p = logp.array().exp().matrix();
    LossGrad<Scalar> out;
    out.grad.resize(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        const Scalar h = (p.row(i).array() * logp.row(i).array()).sum();
        out.value += h;
        out.grad.row(i) = p.row(i).array() * (logp.row(i).array() - h) / n;
    }
    out.value /= n;
    return out;
}

/// Entropy objective over both splits: the sum of the per-split means.
template <typename Scalar>
Scalar entropy_objective(const ClassPrediction<Scalar>& source, const ClassPrediction<Scalar>& target) {
    return negative_entropy(source) + negative_entropy(target);
}

/// Mean binary cross-entropy of P(l = 1) against 0/1 labels.
template <typename Scalar>
Scalar binary_cross_entropy(const Vector<Scalar>& prob_positive, std::span<const int> labels) {
    detail::check_labels(labels, prob_positive.size(), 2);
    Scalar total = 0;
    for (Eigen::Index i = 0; i < prob_positive.size(); ++i) {
        const Scalar p = prob_positive(i);
        if (!(p > Scalar(0) && p < Scalar(1))) throw LossError("binary_cross_entropy: probability outside (0, 1)");
        total -= labels[static_cast<std::size_t>(i)] == 1 ? std::log(p) : std::log(Scalar(1) - p);
    }
    return total / static_cast<Scalar>(prob_positive.size());
}

enum class FoolingMode { negated, flipped };

template <typename Scalar>
struct DomainLosses {
    Scalar identifier = 0;  // L_DI over f_di and f_ds rows together
    Scalar fool = 0;        // objective minimized by the f_di head
    Scalar identifier_di = 0;
    Scalar identifier_ds = 0;
    Matrix<Scalar> grad_identifier_di;  // dL_DI / d logits(f_di)
    Matrix<Scalar> grad_identifier_ds;  // dL_DI / d logits(f_ds)
    Matrix<Scalar> grad_fool_di;        // dL_fool / d logits(f_di)
};

/// Domain-identifier and fooling objectives from two-way DI logits.
///
/// labels: 0 = source, 1 = target, one per row. The identifier loss is the
/// cross-entropy over the union of the f_di and f_ds rows. The fooling loss
/// is either the negated f_di cross-entropy (zero-sum) or the cross-entropy
/// against flipped labels.
template <typename Scalar>
DomainLosses<Scalar> domain_adversarial_losses(const Matrix<Scalar>& logits_di, const Matrix<Scalar>& logits_ds,
                                               std::span<const int> labels, FoolingMode mode = FoolingMode::negated) {
    if (logits_di.cols() != 2 || logits_ds.cols() != 2) throw LossError("domain identifier must emit two logits");
    detail::check_labels(labels, logits_di.rows(), 2);
    detail::check_labels(labels, logits_ds.rows(), 2);
    bool has_source = false, has_target = false;
    for (int l : labels) (l == 0 ? has_source : has_target) = true;
    if (!has_source || !has_target) throw LossError("domain adversarial loss needs both source and target rows");

    DomainLosses<Scalar> out;
    auto di = cross_entropy_logits(logits_di, labels);
    auto ds = cross_entropy_logits(logits_ds, labels);
    out.identifier_di = di.value;
    out.identifier_ds = ds.value;
    out.identifier = (di.value + ds.value) / Scalar(2);
    out.grad_identifier_di = di.grad / Scalar(2);
    out.grad_identifier_ds = ds.grad / Scalar(2);
    if (mode == FoolingMode::negated) {
        out.fool = -di.value;
        out.grad_fool_di = -di.grad;
    } else {
        std::vector<int> flipped(labels.begin(), labels.end());
        for (int& l : flipped) l = 1 - l;
        auto f = cross_entropy_logits(logits_di, std::span<const int>(flipped));
        out.fool = f.value;
        out.grad_fool_di = f.grad;
    }
    return out;
}

/// Learned target radius R and Geman-McClure scale beta.
struct RingState {
    double radius = 1.0;
    double beta = 1.0;
    static constexpr double min_radius = 1e-6;

    void validate() const {
        if (!(radius > 0)) throw LossError("ring radius must be positive");
        if (!(beta > 0)) throw LossError("ring beta must be positive");
    }
    void project() {
        if (!(radius >= min_radius)) radius = min_radius;
    }
};

template <typename Scalar>
struct RingLoss {
    Scalar value = 0;
    Scalar sum_squares = 0;  // S = sum_i (|x_i| - R)^2
    Matrix<Scalar> grad_features;
    Scalar grad_radius = 0;
};

namespace detail {
template <typename Scalar>
RingLoss<Scalar> ring_residuals(const Matrix<Scalar>& x, Scalar radius, Matrix<Scalar>& dS_dx, Scalar& dS_dR) {
    if (x.rows() == 0) throw LossError("ring loss: empty batch");
    if (!x.allFinite() || !std::isfinite(static_cast<double>(radius)))
        throw LossError("ring loss: non-finite input");
    RingLoss<Scalar> r;
    dS_dx.resize(x.rows(), x.cols());
    dS_dR = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const Scalar norm = x.row(i).norm();
        const Scalar diff = norm - radius;
        r.sum_squares += diff * diff;
        dS_dR -= Scalar(2) * diff;
        if (norm > Scalar(0))
            dS_dx.row(i) = Scalar(2) * diff / norm * x.row(i);
        else
            dS_dx.row(i).setZero();
    }
    return r;
}
}  // namespace detail

/// S / (2 n beta + S): the ring penalty passed through a Geman-McClure
/// transform, bounded in [0, 1).
template <typename Scalar>
RingLoss<Scalar> ring_loss_gm(const Matrix<Scalar>& features, const RingState& state) {
    state.validate();
    Matrix<Scalar> dS_dx;
    Scalar dS_dR;
    RingLoss<Scalar> r = detail::ring_residuals(features, static_cast<Scalar>(state.radius), dS_dx, dS_dR);
    const Scalar c = Scalar(2) * static_cast<Scalar>(features.rows()) * static_cast<Scalar>(state.beta);
    const Scalar denom = c + r.sum_squares;
    r.value = r.sum_squares / denom;
    const Scalar dL_dS = c / (denom * denom);
    r.grad_features = dL_dS * dS_dx;
    r.grad_radius = dL_dS * dS_dR;
    return r;
}

/// Plain ring penalty S / (2n).
template <typename Scalar>
RingLoss<Scalar> ring_loss_plain(const Matrix<Scalar>& features, const RingState& state) {
    Matrix<Scalar> dS_dx;
    Scalar dS_dR;
    RingLoss<Scalar> r = detail::ring_residuals(features, static_cast<Scalar>(state.radius), dS_dx, dS_dR);
    const Scalar scale = Scalar(1) / (Scalar(2) * static_cast<Scalar>(features.rows()));
    r.value = r.sum_squares * scale;
    r.grad_features = scale * dS_dx;
    r.grad_radius = scale * dS_dR;
    return r;
}

template <typename Scalar>
struct VaeLoss {
    Scalar value = 0;
    Scalar reconstruction = 0;
    Scalar kl = 0;
    Matrix<Scalar> grad_reconstruction;  // d/d f_hat
    Matrix<Scalar> grad_means;           // d/d latent means
};

/// Reconstruction error plus the KL term of a unit-variance Gaussian
/// posterior against N(0, I): mean_i |f_hat_i - f_i|^2 + 0.5 mean_i |mu_i|^2.
template <typename Scalar>
VaeLoss<Scalar> vae_loss(const Matrix<Scalar>& f_g, const Matrix<Scalar>& f_hat, const Matrix<Scalar>& means) {
    if (f_g.rows() != f_hat.rows() || f_g.cols() != f_hat.cols())
        throw LossError("vae_loss: reconstruction shape does not match f_G");
    if (means.rows() != f_g.rows()) throw LossError("vae_loss: latent batch size does not match f_G");
    if (f_g.rows() == 0) throw LossError("vae_loss: empty batch");
    const Scalar n = static_cast<Scalar>(f_g.rows());
    VaeLoss<Scalar> out;
    Matrix<Scalar> diff = f_hat - f_g;
    out.reconstruction = diff.squaredNorm() / n;
    out.kl = Scalar(0.5) * means.squaredNorm() / n;
    out.value = out.reconstruction + out.kl;
    out.grad_reconstruction = Scalar(2) * diff / n;
    out.grad_means = means / n;
    return out;
}

/// Same reconstruction term with the full diagonal-Gaussian KL,
/// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1), for a reparameterized encoder.
template <typename Scalar>
VaeLoss<Scalar> vae_loss_gaussian(const Matrix<Scalar>& f_g, const Matrix<Scalar>& f_hat, const Matrix<Scalar>& means,
                                  const Matrix<Scalar>& log_variances,
                                  std::type_identity_t<Matrix<Scalar>>* grad_log_variances) {
    if (log_variances.rows() != means.rows() || log_variances.cols() != means.cols())
        throw LossError("vae_loss: log-variance shape does not match means");
    VaeLoss<Scalar> out = vae_loss(f_g, f_hat, means);
    const Scalar n = static_cast<Scalar>(f_g.rows());
    out.kl += Scalar(0.5) * (log_variances.array().exp() - log_variances.array() - Scalar(1)).sum() / n;
    out.value = out.reconstruction + out.kl;
    if (grad_log_variances != nullptr)
        *grad_log_variances = (Scalar(0.5) * (log_variances.array().exp() - Scalar(1)) / n).matrix();
    return out;
}

}  // namespace dada

#endif  // DADA_LOSSES_HPP
