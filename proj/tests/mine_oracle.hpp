#ifndef DADA_TESTS_MINE_ORACLE_HPP
#define DADA_TESTS_MINE_ORACLE_HPP

#include <cmath>
#include <random>
#include <utility>

#include "dada/mine.hpp"

namespace dada::testing {

/// Closed-form mutual information of a bivariate Gaussian with correlation rho.
inline double gaussian_mi(double rho) { return -0.5 * std::log(1 - rho * rho); }

/// n joint draws of (x, z) with unit variances and correlation rho, one column each.
inline std::pair<Matrix<double>, Matrix<double>> gaussian_pairs(int n, double rho, Rng& rng) {
    std::normal_distribution<double> normal;
    Matrix<double> x(n, 1), z(n, 1);
    const double s = std::sqrt(1 - rho * rho);
    for (int i = 0; i < n; ++i) {
        const double a = normal(rng), b = normal(rng);
        x(i, 0) = a;
        z(i, 0) = rho * a + s * b;
    }
    return {x, z};
}

inline StatisticNetwork<double> small_statistic(int x_width, int z_width, int hidden, Rng& rng) {
    StatisticNetwork<double> t({{LayerKind::linear, {1, 1, x_width}, hidden},
                                {LayerKind::linear, {1, 1, z_width}, hidden},
                                {LayerKind::leaky_relu, {1, 1, hidden}, 0, 0, 1, 0, 0.2},
                                {LayerKind::linear, {1, 1, hidden}, 1}});
    t.initialize(InitOptions{InitScheme::he}, rng);
    return t;
}

struct MineHarness {
    int samples = 10000;
    int steps = 1500;
    int batch = 256;
    int hidden = 64;
    double learning_rate = 3e-3;
};

/// Trains T on `samples` Gaussian pairs, then reports the estimate on a fresh
/// draw of the same size (a held-out lower bound).
inline double trained_gaussian_estimate(double rho, std::uint64_t seed, const MineHarness& h = {}) {
    Rng rng(seed);
    auto [x, z] = gaussian_pairs(h.samples, rho, rng);
    auto t = small_statistic(1, 1, h.hidden, rng);
    OptimizerConfig oc;
    oc.learning_rate = h.learning_rate;
    Optimizer<double> opt(oc);
    MovingAverage ema(0.99);
    std::uniform_int_distribution<int> pick(0, h.samples - 1);
    Matrix<double> bx(h.batch, 1), bz(h.batch, 1);
    for (int s = 0; s < h.steps; ++s) {
        for (int i = 0; i < h.batch; ++i) {
            const int j = pick(rng);
            bx(i, 0) = x(j, 0);
            bz(i, 0) = z(j, 0);
        }
        statistic_step(t, bx, bz, opt, &ema, rng);
    }
    auto [hx, hz] = gaussian_pairs(h.samples, rho, rng);
    return mi_estimate(t, hx, hz, rng).value;
}

}  // namespace dada::testing

#endif  // DADA_TESTS_MINE_ORACLE_HPP
