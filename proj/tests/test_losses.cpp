#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dada/losses.hpp"
#include "test_support.hpp"

namespace dada {
namespace {

using testing::numeric_gradient;
using testing::random_matrix;
using testing::relative_error;

constexpr double kExact = 1e-9;

Matrix<double> zeros(Eigen::Index r, Eigen::Index c) { return Matrix<double>::Zero(r, c); }
Matrix<double> ones(Eigen::Index r, Eigen::Index c) { return Matrix<double>::Ones(r, c); }
Matrix<double> constant(Eigen::Index r, Eigen::Index c, double v) { return Matrix<double>::Constant(r, c, v); }

Matrix<double> row(std::initializer_list<double> v) {
    Matrix<double> m(1, static_cast<Eigen::Index>(v.size()));
    Eigen::Index j = 0;
    for (double x : v) m(0, j++) = x;
    return m;
}

TEST(VaeLoss, VanishesForPerfectReconstructionAndZeroMeans) {
    Rng rng(1);
    Matrix<double> f = random_matrix(3, 5, rng);
    EXPECT_NEAR(vae_loss(f, f, zeros(3, 4)).value, 0.0, kExact);
}

TEST(VaeLoss, SquaredFrobeniusTerm) {
    EXPECT_NEAR(vae_loss(zeros(1, 4), ones(1, 4), zeros(1, 3)).value, 4.0,
                kExact);
}

TEST(VaeLoss, KlTermOfUnitMeans) {
    Matrix<double> f = constant(1, 2, 0.3);
    const double oracle = 0.5 * (1.0 + 1.0 + 1.0);
    EXPECT_NEAR(vae_loss(f, f, ones(1, 3)).value, oracle, kExact);
}

TEST(VaeLoss, RejectsWidthMismatch) {
    EXPECT_THROW(vae_loss(zeros(2, 4), zeros(2, 5), zeros(2, 3)),
                 LossError);
}

TEST(CrossEntropy, OneHotCorrectIsZero) {
    ClassPrediction<double> p{row({0.0, 1.0, 0.0})};
    std::vector<int> y{1};
    EXPECT_NEAR(cross_entropy(p, std::span<const int>(y)), 0.0, kExact);
}

TEST(CrossEntropy, UniformTenClasses) {
    ClassPrediction<double> p{constant(2, 10, 0.1)};
    std::vector<int> y{3, 7};
    EXPECT_NEAR(cross_entropy(p, std::span<const int>(y)), std::log(10.0), kExact);
    // The logit path agrees.
    EXPECT_NEAR(cross_entropy_logits(zeros(2, 10), std::span<const int>(y)).value, std::log(10.0),
                kExact);
}

TEST(CrossEntropy, ThreeClassExample) {
    ClassPrediction<double> p{row({0.7, 0.2, 0.1})};
    std::vector<int> y{1};
    EXPECT_NEAR(cross_entropy(p, std::span<const int>(y)), -std::log(0.2), kExact);
    Matrix<double> logits = p.probabilities.array().log().matrix();
    EXPECT_NEAR(cross_entropy_logits(logits, std::span<const int>(y)).value, -std::log(0.2), kExact);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
    std::vector<int> y{3};
    EXPECT_THROW(cross_entropy_logits(zeros(1, 3), std::span<const int>(y)), LossError);
    y[0] = -1;
    EXPECT_THROW(cross_entropy_logits(zeros(1, 3), std::span<const int>(y)), LossError);
}

TEST(CrossEntropy, FiniteForLargeLogits) {
    Matrix<double> logits(2, 3);
    logits << 80, -80, 0, -80, 80, 80;
    std::vector<int> y{1, 0};
    auto ce = cross_entropy_logits(logits, std::span<const int>(y));
    EXPECT_TRUE(std::isfinite(ce.value));
    EXPECT_TRUE(ce.grad.allFinite());
    Matrix<float> lf = logits.cast<float>();
    auto cef = cross_entropy_logits(lf, std::span<const int>(y));
    EXPECT_TRUE(std::isfinite(cef.value));
}

TEST(NegativeEntropy, UniformIsMinusLogK) {
    ClassPrediction<double> p{constant(3, 10, 0.1)};
    EXPECT_NEAR(negative_entropy(p), -std::log(10.0), kExact);
}

TEST(NegativeEntropy, OneHotIsZero) {
    ClassPrediction<double> p{row({0.0, 0.0, 1.0, 0.0})};
    EXPECT_NEAR(negative_entropy(p), 0.0, kExact);
}

TEST(NegativeEntropy, FairCoin) {
    ClassPrediction<double> p{row({0.5, 0.5})};
    EXPECT_NEAR(negative_entropy(p), -std::log(2.0), kExact);
}

TEST(NegativeEntropy, RejectsInvalidDistribution) {
    ClassPrediction<double> p{row({0.5, 0.6})};
    EXPECT_THROW(negative_entropy(p), LossError);
    ClassPrediction<double> q{row({1.5, -0.5})};
    EXPECT_THROW(negative_entropy(q), LossError);
}

TEST(NegativeEntropy, ObjectiveSumsSourceAndTarget) {
    ClassPrediction<double> s{constant(2, 4, 0.25)};
    ClassPrediction<double> t{row({0.5, 0.5, 0.0, 0.0})};
    EXPECT_NEAR(entropy_objective(s, t), -std::log(4.0) - std::log(2.0), kExact);
}

TEST(DomainLosses, HalfProbabilityIsLogTwo) {
    std::vector<int> l{0, 0, 1, 1};
    auto d = domain_adversarial_losses(zeros(4, 2), zeros(4, 2), std::span<const int>(l));
    EXPECT_NEAR(d.identifier, std::log(2.0), kExact);
    Vector<double> half = Vector<double>::Constant(4, 0.5);
    EXPECT_NEAR(binary_cross_entropy(half, std::span<const int>(l)), std::log(2.0), kExact);
}

TEST(DomainLosses, PerfectIdentifierMaximizesFoolingMagnitude) {
    std::vector<int> l{0, 1, 0, 1};
    Matrix<double> perfect(4, 2);
    perfect << 20, -20, -20, 20, 20, -20, -20, 20;
    Matrix<double> vague = zeros(4, 2);
    auto sharp = domain_adversarial_losses(perfect, vague, std::span<const int>(l));
    EXPECT_NEAR(sharp.fool, -sharp.identifier_di, kExact);
    // A wrong identifier is maximally confused on f_di: the fooling loss is
    // most negative there, and near zero for the perfect identifier.
    auto wrong = domain_adversarial_losses(Matrix<double>(-perfect), vague, std::span<const int>(l));
    EXPECT_LT(wrong.fool, sharp.fool);
    EXPECT_NEAR(sharp.fool, 0.0, 1e-8);
}

TEST(DomainLosses, MatchesHandRolledBinaryCrossEntropy) {
    Rng rng(42);
    Matrix<double> a = random_matrix(8, 2, rng, 2.0), b = random_matrix(8, 2, rng, 2.0);
    std::vector<int> l{0, 1, 1, 0, 1, 0, 0, 1};
    auto bce = [&](const Matrix<double>& z) {
        double total = 0;
        for (int i = 0; i < 8; ++i) {
            const double p1 = 1.0 / (1.0 + std::exp(z(i, 0) - z(i, 1)));
            total += l[i] == 1 ? -std::log(p1) : -std::log(1.0 - p1);
        }
        return total / 8;
    };
    auto d = domain_adversarial_losses(a, b, std::span<const int>(l));
    EXPECT_NEAR(d.identifier, 0.5 * (bce(a) + bce(b)), 1e-6);
    EXPECT_NEAR(d.fool, -bce(a), 1e-6);
    auto flipped = domain_adversarial_losses(a, b, std::span<const int>(l), FoolingMode::flipped);
    std::vector<int> orig = l;
    for (int& v : l) v = 1 - v;
    EXPECT_NEAR(flipped.fool, bce(a), 1e-6);
    l = orig;
}

TEST(DomainLosses, RejectsSingleDomainBatch) {
    std::vector<int> l{1, 1, 1};
    EXPECT_THROW(domain_adversarial_losses(zeros(3, 2), zeros(3, 2),
                                           std::span<const int>(l)),
                 LossError);
}

Matrix<double> rows_with_norms(const std::vector<double>& norms, Rng& rng) {
    Matrix<double> x = random_matrix(static_cast<Eigen::Index>(norms.size()), 3, rng);
    for (std::size_t i = 0; i < norms.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) *= norms[i] / x.row(static_cast<Eigen::Index>(i)).norm();
    return x;
}

TEST(RingLoss, ZeroOnTheRing) {
    Rng rng(3);
    Matrix<double> x = rows_with_norms({1.7, 1.7, 1.7}, rng);
    RingState s{1.7, 1.0};
    EXPECT_NEAR(ring_loss_gm(x, s).value, 0.0, kExact);
    EXPECT_NEAR(ring_loss_plain(x, s).value, 0.0, kExact);
}

TEST(RingLoss, GemanMcClureDirectSubstitution) {
    Rng rng(4);
    EXPECT_NEAR(ring_loss_gm(rows_with_norms({2.0}, rng), RingState{1.0, 1.0}).value, 1.0 / 3.0, kExact);
    EXPECT_NEAR(ring_loss_gm(rows_with_norms({3.0, 1.0}, rng), RingState{2.0, 0.5}).value, 0.5, kExact);
}

TEST(RingLoss, PlainDirectSubstitution) {
    Rng rng(5);
    EXPECT_NEAR(ring_loss_plain(rows_with_norms({2.0}, rng), RingState{1.0, 1.0}).value, 0.5, kExact);
}

TEST(RingLoss, PlainEqualsRescaledGemanMcClure) {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        Matrix<double> x = random_matrix(5, 4, rng, 2.0);
        std::uniform_real_distribution<double> u(0.1, 3.0);
        RingState s{u(rng), u(rng)};
        auto gm = ring_loss_gm(x, s);
        const double n = 5;
        const double rescaled = gm.value * (2 * n * s.beta + gm.sum_squares) / (2 * n);
        EXPECT_NEAR(ring_loss_plain(x, s).value, rescaled, 1e-12 * (1 + rescaled));
    }
}

TEST(RingLoss, SaturatesForHugeResiduals) {
    Rng rng(7);
    Matrix<double> x = rows_with_norms({1e4 + 1.0}, rng);  // S = 1e8
    RingState s{1.0, 1.0};
    auto gm = ring_loss_gm(x, s);
    EXPECT_NEAR(gm.sum_squares, 1e8, 1e-3);
    EXPECT_GT(gm.value, 1.0 - 1e-6);
    EXPECT_LT(gm.value, 1.0);
    EXPECT_GT(ring_loss_plain(x, s).value, 1e7);
}

TEST(RingLoss, RejectsNonFiniteInput) {
    Matrix<double> x(1, 2);
    x << std::nan(""), 1.0;
    EXPECT_THROW(ring_loss_gm(x, RingState{}), LossError);
}

TEST(RingState, ProjectionKeepsRadiusPositive) {
    RingState s{-0.5, 1.0};
    s.project();
    EXPECT_GT(s.radius, 0.0);
}

TEST(LossInvariants, RangesOnRandomInputs) {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + trial % 7;
        Matrix<double> logits = random_matrix(6, k, rng, 5.0);
        auto pred = ClassPrediction<double>::from_logits(logits);
        pred.validate();
        std::vector<int> y(6);
        for (int i = 0; i < 6; ++i) y[static_cast<std::size_t>(i)] = (i + trial) % k;
        EXPECT_GE(cross_entropy(pred, std::span<const int>(y)), 0.0);
        const double h = negative_entropy(pred);
        EXPECT_LE(h, 1e-12);
        EXPECT_GE(h, -std::log(static_cast<double>(k)) - 1e-12);
        const double gm = ring_loss_gm(logits, RingState{1.0, 0.7}).value;
        EXPECT_GE(gm, 0.0);
        EXPECT_LT(gm, 1.0);
        EXPECT_GE(vae_loss(logits, random_matrix(6, k, rng), random_matrix(6, 3, rng)).value, 0.0);
    }
}

// Analytic gradients of every loss against central differences.

TEST(LossGradients, CrossEntropyLogits) {
    Rng rng(9);
    Matrix<double> z = random_matrix(5, 4, rng, 2.0);
    std::vector<int> y{0, 3, 2, 1, 3};
    auto f = [&](const Matrix<double>& m) { return cross_entropy_logits(m, std::span<const int>(y)).value; };
    EXPECT_LT(relative_error(cross_entropy_logits(z, std::span<const int>(y)).grad, numeric_gradient(f, z)), 1e-6);
}

TEST(LossGradients, NegativeEntropyLogits) {
    Rng rng(10);
    Matrix<double> z = random_matrix(5, 4, rng, 2.0);
    auto f = [&](const Matrix<double>& m) { return negative_entropy_logits(m).value; };
    EXPECT_NEAR(negative_entropy_logits(z).value, negative_entropy(ClassPrediction<double>::from_logits(z)), 1e-12);
    EXPECT_LT(relative_error(negative_entropy_logits(z).grad, numeric_gradient(f, z)), 1e-6);
}

TEST(LossGradients, DomainLosses) {
    Rng rng(11);
    Matrix<double> a = random_matrix(6, 2, rng), b = random_matrix(6, 2, rng);
    std::vector<int> l{0, 0, 0, 1, 1, 1};
    std::span<const int> ls(l);
    auto d = domain_adversarial_losses(a, b, ls);
    EXPECT_LT(relative_error(d.grad_identifier_di,
                             numeric_gradient([&](const Matrix<double>& m) { return domain_adversarial_losses(m, b, ls).identifier; }, a)),
              1e-6);
    EXPECT_LT(relative_error(d.grad_identifier_ds,
                             numeric_gradient([&](const Matrix<double>& m) { return domain_adversarial_losses(a, m, ls).identifier; }, b)),
              1e-6);
    EXPECT_LT(relative_error(d.grad_fool_di,
                             numeric_gradient([&](const Matrix<double>& m) { return domain_adversarial_losses(m, b, ls).fool; }, a)),
              1e-6);
}

TEST(LossGradients, RingLosses) {
    Rng rng(12);
    Matrix<double> x = random_matrix(4, 3, rng, 1.5);
    for (bool gm : {true, false}) {
        RingState s{1.3, 0.8};
        auto eval = [&](const Matrix<double>& m, const RingState& st) {
            return gm ? ring_loss_gm(m, st) : ring_loss_plain(m, st);
        };
        auto r = eval(x, s);
        EXPECT_LT(relative_error(r.grad_features,
                                 numeric_gradient([&](const Matrix<double>& m) { return eval(m, s).value; }, x)),
                  1e-6);
        const double eps = 1e-6;
        const double num_r = (eval(x, RingState{s.radius + eps, s.beta}).value -
                              eval(x, RingState{s.radius - eps, s.beta}).value) / (2 * eps);
        EXPECT_NEAR(r.grad_radius, num_r, 1e-6 * (1 + std::abs(num_r)));
    }
}

TEST(LossGradients, VaeLoss) {
    Rng rng(13);
    Matrix<double> f = random_matrix(3, 5, rng), fh = random_matrix(3, 5, rng), mu = random_matrix(3, 4, rng);
    auto v = vae_loss(f, fh, mu);
    EXPECT_LT(relative_error(v.grad_reconstruction,
                             numeric_gradient([&](const Matrix<double>& m) { return vae_loss(f, m, mu).value; }, fh)),
              1e-6);
    EXPECT_LT(relative_error(v.grad_means,
                             numeric_gradient([&](const Matrix<double>& m) { return vae_loss(f, fh, m).value; }, mu)),
              1e-6);
}

TEST(LossGradients, GaussianKl) {
    Rng rng(14);
    Matrix<double> f = random_matrix(3, 5, rng), mu = random_matrix(3, 4, rng), lv = random_matrix(3, 4, rng, 0.5);
    Matrix<double> g;
    auto v = vae_loss_gaussian(f, f, mu, lv, &g);
    EXPECT_NEAR(v.value, v.kl, 1e-12);
    EXPECT_LT(relative_error(g, numeric_gradient([&](const Matrix<double>& m) {
                  return vae_loss_gaussian(f, f, mu, m, nullptr).value;
              }, lv)),
              1e-6);
    // Zero mean and unit variance carry no KL cost.
    EXPECT_NEAR(vae_loss_gaussian(f, f, zeros(3, 4), zeros(3, 4), nullptr).value, 0.0,
                kExact);
}

}  // namespace
}  // namespace dada
