#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "dada/mine.hpp"
#include "mine_oracle.hpp"
#include "test_support.hpp"

namespace dada {
namespace {

using testing::gaussian_mi;
using testing::gaussian_pairs;
using testing::numeric_gradient;
using testing::random_matrix;
using testing::relative_error;
using testing::small_statistic;
using testing::trained_gaussian_estimate;

void zero_head(StatisticNetwork<double>& t) {
    for (auto& p : t.parameters())
        if (p.name.find("head") != std::string::npos) p.value->setZero();
}

TEST(MiEstimate, ZeroStatisticGivesExactlyZero) {
    Rng rng(1);
    auto t = small_statistic(3, 3, 8, rng);
    zero_head(t);
    EXPECT_EQ(mi_estimate(t, random_matrix(10, 3, rng), random_matrix(10, 3, rng), rng).value, 0.0);
}

TEST(MiEstimate, ConstantStatisticCancels) {
    Rng rng(2);
    auto t = small_statistic(3, 3, 8, rng);
    zero_head(t);
    t.parameters()[5].value->setConstant(3.7);
    EXPECT_NEAR(mi_estimate(t, random_matrix(10, 3, rng), random_matrix(10, 3, rng), rng).value, 0.0, 1e-12);
}

TEST(MiEstimate, RejectsTinyOrMisalignedBatches) {
    Rng rng(3);
    auto t = small_statistic(2, 2, 4, rng);
    EXPECT_THROW(mi_estimate(t, random_matrix(1, 2, rng), random_matrix(1, 2, rng), rng), MineError);
    EXPECT_THROW(mi_estimate(t, random_matrix(4, 2, rng), random_matrix(5, 2, rng), rng), MineError);
}

TEST(MiEstimate, NonFiniteStatisticIsRejected) {
    Rng rng(4);
    auto t = small_statistic(2, 2, 4, rng);
    Matrix<double> x = random_matrix(4, 2, rng);
    x(0, 0) = std::numeric_limits<double>::quiet_NaN();
    EXPECT_THROW(mi_estimate(t, x, random_matrix(4, 2, rng), rng), MineError);
}

TEST(MiEstimate, ReportsBatchSizeAndPairing) {
    Rng rng(5);
    auto t = small_statistic(2, 2, 4, rng);
    auto e = mi_estimate(t, random_matrix(6, 2, rng), random_matrix(6, 2, rng), rng, FeaturePair::di_ci);
    EXPECT_EQ(e.batch_size, 6);
    EXPECT_EQ(e.pairing, FeaturePair::di_ci);
    EXPECT_TRUE(std::isfinite(e.value));
}

TEST(MiEstimate, HugeStatisticOutputsStayFinite) {
    Rng rng(6);
    auto t = small_statistic(2, 2, 4, rng);
    for (auto& p : t.parameters()) *p.value *= 1e4;
    auto e = mi_estimate(t, random_matrix(8, 2, rng, 10), random_matrix(8, 2, rng, 10), rng);
    EXPECT_TRUE(std::isfinite(e.value));
}

TEST(Derangement, IsSeededPermutationWithoutFixedPoints) {
    for (int n : {2, 3, 7, 64}) {
        Rng a(n), b(n);
        auto p = derangement(n, a);
        EXPECT_EQ(p, derangement(n, b));
        auto sorted = p;
        std::sort(sorted.begin(), sorted.end());
        for (int i = 0; i < n; ++i) {
            EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
            EXPECT_NE(p[static_cast<std::size_t>(i)], i);
        }
    }
}

TEST(MiObjective, GradientsMatchFiniteDifferences) {
    Rng rng(7);
    auto t = small_statistic(3, 4, 6, rng);
    Matrix<double> x = random_matrix(5, 3, rng), z = random_matrix(5, 4, rng);
    const auto perm = derangement(5, rng);
    auto obj = mi_objective(t, x, z, perm);
    auto value = [&](const Matrix<double>& xx, const Matrix<double>& zz) {
        return static_cast<double>(mi_objective(t, xx, zz, perm, nullptr, false).estimate);
    };
    EXPECT_LT(relative_error(obj.grad_x, numeric_gradient([&](const Matrix<double>& v) { return value(v, z); }, x)),
              1e-6);
    EXPECT_LT(relative_error(obj.grad_z, numeric_gradient([&](const Matrix<double>& v) { return value(x, v); }, z)),
              1e-6);
    auto params = t.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        Matrix<double>& p = *params[i].value;
        auto f = [&](const Matrix<double>& v) {
            Matrix<double> saved = p;
            p = v;
            const double out = -value(x, z);
            p = saved;
            return out;
        };
        EXPECT_LT(relative_error(obj.statistic_grads[i], numeric_gradient(f, p), 1e-2), 1e-6) << params[i].name;
    }
}

TEST(MiObjective, PartitionAverageOnlyRescalesStatisticGradient) {
    Rng rng(8);
    auto t = small_statistic(2, 2, 5, rng);
    Matrix<double> x = random_matrix(6, 2, rng), z = random_matrix(6, 2, rng);
    const auto perm = derangement(6, rng);
    auto plain = mi_objective(t, x, z, perm);
    // An average seeded at the batch value reproduces the plain gradient.
    MovingAverage seeded(0.99, plain.mean_exp_marginal);
    auto same = mi_objective(t, x, z, perm, &seeded);
    for (std::size_t i = 0; i < plain.statistic_grads.size(); ++i)
        EXPECT_LT(relative_error(plain.statistic_grads[i], same.statistic_grads[i]), 1e-12);
    MovingAverage off(0.99, 10 * plain.mean_exp_marginal);
    auto shifted = mi_objective(t, x, z, perm, &off);
    EXPECT_EQ(shifted.estimate, plain.estimate);
    EXPECT_EQ(shifted.grad_x, plain.grad_x);
    EXPECT_GT(relative_error(plain.statistic_grads[0], shifted.statistic_grads[0]), 1e-3);
}

TEST(MovingAverage, Examples) {
    EXPECT_DOUBLE_EQ(bias_control({2.5, 2.5, 2.5, 2.5}), 2.5);
    EXPECT_DOUBLE_EQ(bias_control({1.0, 7.0, -3.0}, 0.0), -3.0);
    EXPECT_DOUBLE_EQ(bias_control({0.0, 1.0}, 0.5, 0.0), 0.5);
    EXPECT_THROW(bias_control({}), std::invalid_argument);
    EXPECT_THROW(MovingAverage(1.5), std::invalid_argument);
}

TEST(MineOracle, CorrelatedGaussianMatchesClosedForm) {
    EXPECT_NEAR(gaussian_mi(0.9), 0.8304, 1e-4);
    EXPECT_NEAR(trained_gaussian_estimate(0.9, 101), gaussian_mi(0.9), 0.15);
}

TEST(MineOracle, IndependentInputsNearZeroOverTwentySeeds) {
    double sum = 0;
    for (int seed = 0; seed < 20; ++seed) sum += trained_gaussian_estimate(0.0, 200 + seed);
    const double mean = sum / 20;
    EXPECT_GE(mean, -0.05);
    EXPECT_LE(mean, 0.15);
}

TEST(MineOracle, EstimatesIncreaseWithCorrelation) {
    const double a = trained_gaussian_estimate(0.0, 300);
    const double b = trained_gaussian_estimate(0.5, 300);
    const double c = trained_gaussian_estimate(0.9, 300);
    EXPECT_LT(a, b);
    EXPECT_LT(b, c);
}

struct HeadFixture {
    Rng rng{9};
    ArchConfig arch = [] {
        ArchConfig a;
        a.input = {3, 8, 8};
        a.num_classes = 3;
        a.feature_width = 8;
        a.conv_channels = {4, 4, 8};
        a.disentangler_hidden = 16;
        a.mine_hidden = 32;
        return a;
    }();
    ComponentSet<double> cs = build_components<double>(arch, rng);

    Matrix<double> images(int n) {
        return (random_matrix(n, arch.input.size(), rng).array() * 0.25 + 0.5).matrix();
    }
    // Batch-statistics features, as the training step sees them.
    FeatureBundle<double> features(int n) { return forward_bundle(cs, images(n), ForwardOptions{true, false, &rng}); }
};

// Warms T up for 200 steps on fresh batches from `draw`, then estimates on a
// held-out batch.
template <typename Draw>
double warm_statistic(StatisticNetwork<double>& t, Draw draw, Rng& rng) {
    OptimizerConfig oc;
    oc.learning_rate = 3e-3;
    Optimizer<double> opt(oc);
    MovingAverage ema;
    for (int s = 0; s < 200; ++s) {
        auto [x, z] = draw();
        statistic_step(t, x, z, opt, &ema, rng);
    }
    auto [x, z] = draw();
    return mi_estimate(t, x, z, rng).value;
}

TEST(MiAdversarial, CopiedHeadGivesPositiveEstimate) {
    HeadFixture f;
    auto draw = [&] {
        auto b = f.features(64);
        return std::pair{b.f_di, b.f_di};
    };
    EXPECT_GT(warm_statistic(f.cs.statistic, draw, f.rng), 0.5);
}

TEST(MiAdversarial, IndependentFeaturesGiveNearZeroEstimate) {
    HeadFixture f;
    auto draw = [&] { return std::pair{f.features(64).f_ds, f.features(64).f_di}; };
    EXPECT_NEAR(warm_statistic(f.cs.statistic, draw, f.rng), 0.0, 0.1);
}

TEST(MiAdversarial, ZeroLearningRateLeavesParametersUnchanged) {
    HeadFixture f;
    BundleTrace<double> bt;
    auto b = forward_bundle(f.cs, f.images(16), BundleOptions::uniform(ForwardOptions{true, false, &f.rng}), &bt);
    std::vector<Matrix<double>> before;
    for (auto& p : f.cs.parameters()) before.push_back(*p.value);
    OptimizerConfig oc;
    oc.learning_rate = 0;
    Optimizer<double> ot(oc), odi(oc), ods(oc), oci(oc);
    MovingAverage e1, e2;
    auto r = mi_adversarial_step(f.cs.statistic, {f.cs.di_head, f.cs.ds_head, f.cs.ci_head, bt.di, bt.ds, bt.ci}, b,
                                 {ot, odi, ods, oci}, &e1, &e2, f.rng);
    EXPECT_TRUE(std::isfinite(r.statistic_objective));
    auto params = f.cs.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) EXPECT_EQ(*params[i].value, before[i]) << params[i].name;
}

TEST(MiAdversarial, StatisticAscendsWhileHeadsDescend) {
    HeadFixture f;
    BundleTrace<double> bt;
    const Matrix<double> images = f.images(64);
    const Rng mask_state = f.rng;
    auto forward = [&](BundleTrace<double>* trace) {
        Rng r = mask_state;
        return forward_bundle(f.cs, images, BundleOptions::uniform(ForwardOptions{true, false, &r}), trace);
    };
    auto b = forward(&bt);
    f.rng.discard(1000);

    // Fix one permutation stream so both probes see the same marginal batches.
    const Rng saved = f.rng;
    auto objective = [&](const FeatureBundle<double>& bundle) {
        Rng r = saved;
        const auto p1 = derangement(64, r);
        const auto p2 = derangement(64, r);
        return static_cast<double>(mi_objective(f.cs.statistic, bundle.f_ds, bundle.f_di, p1, nullptr, false).estimate +
                                   mi_objective(f.cs.statistic, bundle.f_ci, bundle.f_di, p2, nullptr, false).estimate);
    };
    const double before = objective(b);

    OptimizerConfig oc;
    oc.kind = OptimizerKind::sgd;
    oc.momentum = 0;
    oc.learning_rate = 1e-3;
    Optimizer<double> ot(oc), odi(oc), ods(oc), oci(oc);
    StatisticNetwork<double> t_before = f.cs.statistic;
    auto heads_before = std::vector{f.cs.di_head, f.cs.ds_head, f.cs.ci_head};

    // T alone: the summed estimate rises.
    {
        Rng r = saved;
        mi_adversarial_step(f.cs.statistic, {f.cs.di_head, f.cs.ds_head, f.cs.ci_head, bt.di, bt.ds, bt.ci}, b,
                            {ot, odi, ods, oci}, nullptr, nullptr, r, {1.0, true, false});
    }
    EXPECT_GT(objective(b), before);
    for (int i = 0; i < 3; ++i) {
        auto now = std::vector{&f.cs.di_head, &f.cs.ds_head, &f.cs.ci_head}[static_cast<std::size_t>(i)]->parameters();
        auto old = heads_before[static_cast<std::size_t>(i)].parameters();
        for (std::size_t k = 0; k < now.size(); ++k) EXPECT_EQ(*now[k].value, *old[k].value);
    }

    // Heads alone: the estimate on re-computed features falls, T is untouched.
    f.cs.statistic = t_before;
    {
        Rng r = saved;
        mi_adversarial_step(f.cs.statistic, {f.cs.di_head, f.cs.ds_head, f.cs.ci_head, bt.di, bt.ds, bt.ci}, b,
                            {ot, odi, ods, oci}, nullptr, nullptr, r, {1.0, false, true});
    }
    auto params = f.cs.statistic.parameters();
    auto old = t_before.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) EXPECT_EQ(*params[k].value, *old[k].value);
    // Same images and dropout masks through the updated heads.
    EXPECT_LT(objective(forward(nullptr)), before);
}

}  // namespace
}  // namespace dada
