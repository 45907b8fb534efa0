#ifndef DADA_ARCHITECTURE_HPP
#define DADA_ARCHITECTURE_HPP

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "dada/layers.hpp"
#include "dada/network.hpp"
#include "dada/types.hpp"

namespace dada {

/// User-facing architecture description. Zero-valued widths are derived
/// from the preset.
struct ArchConfig {
    std::string preset = "desk";  // desk | full
    ImageShape input{3, 16, 16};
    int num_classes = 5;
    int feature_width = 64;  // d, width of each disentangled feature
    std::array<int, 3> conv_channels{0, 0, 0};
    int disentangler_hidden = 0;
    int domain_hidden = 0;
    int mine_hidden = 0;
    double dropout = 0.5;
    double leaky_slope = 0.2;
    InitOptions init;
};

enum class LayerKind { conv, batch_norm, relu, leaky_relu, max_pool, dropout, linear };

struct LayerSpec {
    LayerKind kind;
    ImageShape in_shape;  // for conv / spatial batch-norm / pooling; width-only layers use {1, 1, width}
    int out = 0;          // output channels (conv) or width (linear)
    int kernel = 0;
    int stride = 1;
    int padding = 0;
    double value = 0;  // dropout probability or leaky slope

    int in_width() const { return in_shape.size(); }
    int out_width() const;
    std::size_t parameter_count() const;
    /// Human-readable form, e.g. "Conv2D (3, 64, 5, 1, 2)" or "FC (8192, 3072)".
    std::string describe() const;
};

/// Widths after preset resolution; every field is positive.
struct ResolvedArch {
    ArchConfig config;
    int generator_width = 0;  // flat width of f_G
    int disentangler_hidden = 0;
    int domain_hidden = 0;
    int mine_hidden = 0;

    int feature_width() const { return config.feature_width; }
    int num_classes() const { return config.num_classes; }
};

ResolvedArch resolve_architecture(const ArchConfig& config);

/// Canonical one-line summary of every resolved width; two architectures
/// are parameter-compatible exactly when their summaries match.
std::string arch_signature(const ResolvedArch& arch);

std::vector<LayerSpec> generator_spec(const ResolvedArch& arch);
std::vector<LayerSpec> disentangler_spec(const ResolvedArch& arch);
std::vector<LayerSpec> class_identifier_spec(const ResolvedArch& arch);
std::vector<LayerSpec> domain_identifier_spec(const ResolvedArch& arch);
std::vector<LayerSpec> reconstructor_spec(const ResolvedArch& arch);
/// fc1_x, fc1_y, activation, output head of the statistic network.
std::vector<LayerSpec> statistic_spec(const ResolvedArch& arch);

std::size_t parameter_count(const std::vector<LayerSpec>& layers);

/// All component specs keyed by component name.
std::map<std::string, std::vector<LayerSpec>> component_specs(const ResolvedArch& arch);

template <typename Scalar>
Layer<Scalar> make_layer(const LayerSpec& s) {
    switch (s.kind) {
        case LayerKind::conv:
            return Conv2d<Scalar>(s.in_shape, s.out, s.kernel, s.stride, s.padding);
        case LayerKind::batch_norm:
            return BatchNorm<Scalar>(s.in_shape.channels, s.in_shape.height * s.in_shape.width);
        case LayerKind::relu:
            return ReLU<Scalar>{};
        case LayerKind::leaky_relu:
            return LeakyReLU<Scalar>{s.value};
        case LayerKind::max_pool:
            return MaxPool2d<Scalar>{s.in_shape, s.kernel};
        case LayerKind::dropout:
            return Dropout<Scalar>{s.value};
        case LayerKind::linear:
            return Linear<Scalar>(s.in_width(), s.out);
    }
    throw std::logic_error("unknown layer kind");
}

template <typename Scalar>
Network<Scalar> make_network(std::string name, const std::vector<LayerSpec>& specs) {
    if (specs.empty()) throw ShapeError(name + ": empty layer list");
    std::vector<Layer<Scalar>> layers;
    layers.reserve(specs.size());
    for (const auto& s : specs) layers.push_back(make_layer<Scalar>(s));
    Network<Scalar> net(std::move(name), specs.front().in_width(), std::move(layers));
    net.set_out_width(specs.back().out_width());
    return net;
}

}  // namespace dada

#endif  // DADA_ARCHITECTURE_HPP
