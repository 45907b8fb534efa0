#ifndef DADA_OPTIMIZER_HPP
#define DADA_OPTIMIZER_HPP

#include <cmath>
#include <string>
#include <vector>

#include "dada/layers.hpp"

namespace dada {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double momentum = 0.9;  // sgd
    double beta1 = 0.9;  // adam
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
};

/// First-order optimizer state for one ordered parameter list.
template <typename Scalar>
class Optimizer {
public:
    Optimizer() = default;
    Optimizer(OptimizerConfig config, double lr_scale = 1.0) : config_(config), lr_scale_(lr_scale) {}

    const OptimizerConfig& config() const { return config_; }
    double learning_rate() const { return config_.learning_rate * lr_scale_; }
    long steps() const { return steps_; }

    void step(const std::vector<ParamRef<Scalar>>& params, const std::vector<Matrix<Scalar>>& grads) {
        if (params.size() != grads.size()) throw std::logic_error("optimizer: parameter/gradient count mismatch");
        if (first_.empty()) {
            for (const auto& p : params) {
                first_.push_back(Matrix<Scalar>::Zero(p.value->rows(), p.value->cols()));
                second_.push_back(Matrix<Scalar>::Zero(p.value->rows(), p.value->cols()));
            }
        }
        if (first_.size() != params.size()) throw std::logic_error("optimizer: parameter list changed");
        ++steps_;
        const Scalar lr = static_cast<Scalar>(learning_rate());
        const Scalar wd = static_cast<Scalar>(config_.weight_decay);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Matrix<Scalar>& w = *params[i].value;
            Matrix<Scalar> g = grads[i];
            if (config_.weight_decay != 0) g += wd * w;
            if (config_.kind == OptimizerKind::sgd) {
                first_[i] = static_cast<Scalar>(config_.momentum) * first_[i] + g;
                w -= lr * first_[i];
            } else {
                const Scalar b1 = static_cast<Scalar>(config_.beta1), b2 = static_cast<Scalar>(config_.beta2);
                first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
                second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
                const Scalar c1 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta1, steps_));
                const Scalar c2 = Scalar(1) - static_cast<Scalar>(std::pow(config_.beta2, steps_));
                w.array() -= lr * (first_[i].array() / c1) /
                             ((second_[i].array() / c2).sqrt() + static_cast<Scalar>(config_.epsilon));
            }
        }
    }

    // Serialized state: step count plus the moment buffers.
    std::vector<Matrix<Scalar>>& first_moments() { return first_; }
    std::vector<Matrix<Scalar>>& second_moments() { return second_; }
    void set_steps(long s) { steps_ = s; }

private:
    OptimizerConfig config_;
    double lr_scale_ = 1.0;
    long steps_ = 0;
    std::vector<Matrix<Scalar>> first_;
    std::vector<Matrix<Scalar>> second_;
};

}  // namespace dada

#endif  // DADA_OPTIMIZER_HPP
