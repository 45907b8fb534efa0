#ifndef DADA_NETWORK_HPP
#define DADA_NETWORK_HPP

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dada/layers.hpp"

namespace dada {

template <typename Scalar>
using Layer = std::variant<Linear<Scalar>, Conv2d<Scalar>, BatchNorm<Scalar>, ReLU<Scalar>, LeakyReLU<Scalar>,
                           MaxPool2d<Scalar>, Dropout<Scalar>>;

/// Per-call record of a forward pass, consumed by Network::backward.
template <typename Scalar>
struct Trace {
    std::vector<LayerCache<Scalar>> caches;
};

/// Gradient buffers, aligned with Network::parameters().
template <typename Scalar>
using Gradients = std::vector<Matrix<Scalar>>;

/// A feed-forward chain of layers with explicit forward and reverse passes.
///
/// The same network may be applied to several inputs in one step; each
/// application keeps its own Trace and the backward passes accumulate into
/// one Gradients buffer.
template <typename Scalar>
class Network {
public:
    Network() = default;
    Network(std::string name, int in_width, std::vector<Layer<Scalar>> layers)
        : name_(std::move(name)), in_width_(in_width), layers_(std::move(layers)) {}

    const std::string& name() const { return name_; }
    int in_width() const { return in_width_; }
    int out_width() const { return out_width_; }
    std::size_t size() const { return layers_.size(); }
    const std::vector<Layer<Scalar>>& layers() const { return layers_; }
    std::vector<Layer<Scalar>>& layers() { return layers_; }

    void set_out_width(int w) { out_width_ = w; }

    void initialize(const InitOptions& init, Rng& rng) {
        for (auto& layer : layers_) std::visit([&](auto& l) { l.initialize(init, rng); }, layer);
    }

    std::vector<ParamRef<Scalar>> parameters() {
        std::vector<ParamRef<Scalar>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (auto& p : std::visit([](auto& l) { return l.params(); }, layers_[i]))
                out.push_back({name_ + "." + std::to_string(i) + "." + p.name, p.value});
        return out;
    }

    std::vector<ParamRef<Scalar>> buffers() {
        std::vector<ParamRef<Scalar>> out;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            for (auto& p : std::visit([](auto& l) { return l.buffers(); }, layers_[i]))
                out.push_back({name_ + "." + std::to_string(i) + "." + p.name, p.value});
        return out;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto& p : parameters()) n += static_cast<std::size_t>(p.value->size());
        return n;
    }

    Gradients<Scalar> zero_gradients() {
        Gradients<Scalar> g;
        for (auto& p : parameters()) g.push_back(Matrix<Scalar>::Zero(p.value->rows(), p.value->cols()));
        return g;
    }

    Matrix<Scalar> forward(const Matrix<Scalar>& x, const ForwardOptions& opt, Trace<Scalar>* trace = nullptr) {
        if (x.cols() != in_width_)
            throw ShapeError(name_ + " expects input width " + std::to_string(in_width_) + ", got " +
                             std::to_string(x.cols()));
        Trace<Scalar> scratch;
        Trace<Scalar>& t = trace != nullptr ? *trace : scratch;
        t.caches.assign(layers_.size(), LayerCache<Scalar>{});
        Matrix<Scalar> h = x;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            h = std::visit([&](auto& l) { return l.forward(h, opt, t.caches[i]); }, layers_[i]);
        return h;
    }

    /// Accumulates parameter gradients into `grads` and returns d(loss)/d(input).
    Matrix<Scalar> backward(const Trace<Scalar>& trace, const Matrix<Scalar>& grad_out, Gradients<Scalar>& grads) const {
        if (trace.caches.size() != layers_.size()) throw std::logic_error(name_ + ": trace does not match network");
        std::vector<std::size_t> offsets(layers_.size() + 1, 0);
        for (std::size_t i = 0; i < layers_.size(); ++i)
            offsets[i + 1] = offsets[i] + std::visit([](auto& l) { return param_slots(l); }, layers_[i]);
        Matrix<Scalar> g = grad_out;
        for (std::size_t i = layers_.size(); i-- > 0;) {
            std::span<Matrix<Scalar>> slot(grads.data() + offsets[i], offsets[i + 1] - offsets[i]);
            g = std::visit([&](const auto& l) { return l.backward(trace.caches[i], g, slot); }, layers_[i]);
        }
        return g;
    }

private:
    template <typename L>
    static std::size_t param_slots(const L&) {
        if constexpr (std::is_same_v<L, Linear<Scalar>> || std::is_same_v<L, Conv2d<Scalar>> ||
                      std::is_same_v<L, BatchNorm<Scalar>>)
            return 2;
        else
            return 0;
    }

    std::string name_;
    int in_width_ = 0;
    int out_width_ = 0;
    std::vector<Layer<Scalar>> layers_;
};

}  // namespace dada

#endif  // DADA_NETWORK_HPP
