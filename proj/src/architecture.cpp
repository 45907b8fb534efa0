#include "dada/architecture.hpp"

#include <algorithm>
#include <sstream>

namespace dada {

namespace {

ImageShape flat(int width) { return {1, 1, width}; }

LayerSpec linear(int in, int out) { return {LayerKind::linear, flat(in), out}; }
LayerSpec bn(int width) { return {LayerKind::batch_norm, {width, 1, 1}, width}; }
LayerSpec bn2d(ImageShape s) { return {LayerKind::batch_norm, {s.channels, s.height, s.width}, s.channels}; }
LayerSpec relu(ImageShape s) { return {LayerKind::relu, s, 0}; }
LayerSpec leaky(int width, double slope) { return {LayerKind::leaky_relu, flat(width), 0, 0, 1, 0, slope}; }

std::string format_double(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

int LayerSpec::out_width() const {
    switch (kind) {
        case LayerKind::conv: {
            const int oh = (in_shape.height + 2 * padding - kernel) / stride + 1;
            const int ow = (in_shape.width + 2 * padding - kernel) / stride + 1;
            return out * oh * ow;
        }
        case LayerKind::max_pool:
            return in_shape.channels * (in_shape.height / kernel) * (in_shape.width / kernel);
        case LayerKind::linear:
            return out;
        default:
            return in_width();
    }
}

std::size_t LayerSpec::parameter_count() const {
    switch (kind) {
        case LayerKind::conv:
            return static_cast<std::size_t>(out) * in_shape.channels * kernel * kernel + out;
        case LayerKind::batch_norm:
            return 2 * static_cast<std::size_t>(in_shape.channels);
        case LayerKind::linear:
            return static_cast<std::size_t>(in_width()) * out + out;
        default:
            return 0;
    }
}

std::string LayerSpec::describe() const {
    std::ostringstream os;
    switch (kind) {
        case LayerKind::conv:
            os << "Conv2D (" << in_shape.channels << ", " << out << ", " << kernel << ", " << stride << ", "
               << padding << ")";
            break;
        case LayerKind::batch_norm:
            os << "BN";
            break;
        case LayerKind::relu:
            os << "ReLU";
            break;
        case LayerKind::leaky_relu:
            os << "LeakyReLU";
            break;
        case LayerKind::max_pool:
            os << "MaxPool";
            break;
        case LayerKind::dropout:
            os << "DropOut (" << format_double(value) << ")";
            break;
        case LayerKind::linear:
            os << "FC (" << in_width() << ", " << out << ")";
            break;
    }
    return os.str();
}

ResolvedArch resolve_architecture(const ArchConfig& config) {
    ResolvedArch r;
    r.config = config;
    ArchConfig& c = r.config;
    if (c.num_classes < 2) throw ConfigError("arch: num_classes must be >= 2");
    if (c.feature_width < 1) throw ConfigError("arch: feature_width must be positive");
    if (c.input.channels < 1 || c.input.height < 4 || c.input.width < 4)
        throw ConfigError("arch: input shape too small");
    if (c.input.height % 4 != 0 || c.input.width % 4 != 0)
        throw ConfigError("arch: input height and width must be divisible by 4 (two 2x2 pooling stages)");
    if (c.dropout < 0 || c.dropout >= 1) throw ConfigError("arch: dropout must lie in [0, 1)");

    if (c.preset == "full") {
        const std::array<int, 3> table{64, 64, 128};
        if (c.conv_channels != std::array<int, 3>{0, 0, 0} && c.conv_channels != table)
            throw ConfigError("arch: full preset fixes conv channels to 64, 64, 128");
        c.conv_channels = table;
        if (c.input != ImageShape{3, 32, 32}) throw ConfigError("arch: full preset expects 3x32x32 input");
        if (c.feature_width != 2048) throw ConfigError("arch: full preset fixes feature_width to 2048");
        auto fixed = [](int given, int value, const char* what) {
            if (given != 0 && given != value)
                throw ConfigError(std::string("arch: full preset fixes ") + what + " to " + std::to_string(value));
            return value;
        };
        r.disentangler_hidden = fixed(c.disentangler_hidden, 3072, "disentangler_hidden");
        r.domain_hidden = fixed(c.domain_hidden, 256, "domain_hidden");
        r.mine_hidden = fixed(c.mine_hidden, 512, "mine_hidden");
    } else if (c.preset == "desk") {
        // Full widths scaled down: conv channels / 4, hidden widths in the
        // same ratio to d as the full preset, with a floor for tiny d.
        if (c.conv_channels == std::array<int, 3>{0, 0, 0}) c.conv_channels = {16, 16, 32};
        const int d = c.feature_width;
        r.disentangler_hidden = c.disentangler_hidden > 0 ? c.disentangler_hidden : (3 * d) / 2;
        r.domain_hidden = c.domain_hidden > 0 ? c.domain_hidden : std::max(16, d / 2);
        r.mine_hidden = c.mine_hidden > 0 ? c.mine_hidden : std::max(16, d / 4);
    } else {
        throw ConfigError("arch: unknown preset '" + c.preset + "' (expected desk or full)");
    }
    for (int ch : c.conv_channels)
        if (ch < 1) throw ConfigError("arch: conv channels must be positive");
    r.generator_width = c.conv_channels[2] * (c.input.height / 4) * (c.input.width / 4);
    return r;
}

std::string arch_signature(const ResolvedArch& arch) {
    const auto& c = arch.config;
    std::ostringstream out;
    out << "preset=" << c.preset << " input=" << c.input.channels << 'x' << c.input.height << 'x' << c.input.width
        << " classes=" << c.num_classes << " d=" << c.feature_width << " conv=" << c.conv_channels[0] << ','
        << c.conv_channels[1] << ',' << c.conv_channels[2] << " disentangler=" << arch.disentangler_hidden
        << " domain=" << arch.domain_hidden << " mine=" << arch.mine_hidden;
    return out.str();
}

std::vector<LayerSpec> generator_spec(const ResolvedArch& arch) {
    const auto& c = arch.config;
    std::vector<LayerSpec> out;
    ImageShape s = c.input;
    for (int block = 0; block < 3; ++block) {
        LayerSpec conv{LayerKind::conv, s, c.conv_channels[block], 5, 1, 2};
        out.push_back(conv);
        s = {c.conv_channels[block], s.height, s.width};
        out.push_back(bn2d(s));
        out.push_back(relu(s));
        if (block < 2) {
            out.push_back({LayerKind::max_pool, s, 0, 2, 2});
            s = {s.channels, s.height / 2, s.width / 2};
        }
    }
    return out;
}

std::vector<LayerSpec> disentangler_spec(const ResolvedArch& arch) {
    const int h = arch.disentangler_hidden, d = arch.feature_width();
    return {linear(arch.generator_width, h),
            bn(h),
            relu(flat(h)),
            {LayerKind::dropout, flat(h), 0, 0, 1, 0, arch.config.dropout},
            linear(h, d),
            bn(d),
            relu(flat(d))};
}

std::vector<LayerSpec> class_identifier_spec(const ResolvedArch& arch) {
    // Softmax is folded into the losses, which consume logits.
    return {linear(arch.feature_width(), arch.num_classes()), bn(arch.num_classes())};
}

std::vector<LayerSpec> domain_identifier_spec(const ResolvedArch& arch) {
    const int h = arch.domain_hidden;
    const double slope = arch.config.leaky_slope;
    return {linear(arch.feature_width(), h), leaky(h, slope), linear(h, 2), leaky(2, slope)};
}

std::vector<LayerSpec> reconstructor_spec(const ResolvedArch& arch) {
    return {linear(2 * arch.feature_width(), arch.generator_width)};
}

std::vector<LayerSpec> statistic_spec(const ResolvedArch& arch) {
    const int d = arch.feature_width(), h = arch.mine_hidden;
    return {linear(d, h), linear(d, h), leaky(h, arch.config.leaky_slope), linear(h, 1)};
}

std::size_t parameter_count(const std::vector<LayerSpec>& layers) {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.parameter_count();
    return n;
}

std::map<std::string, std::vector<LayerSpec>> component_specs(const ResolvedArch& arch) {
    return {{"generator", generator_spec(arch)},
            {"disentangler_di", disentangler_spec(arch)},
            {"disentangler_ds", disentangler_spec(arch)},
            {"disentangler_ci", disentangler_spec(arch)},
            {"class_identifier", class_identifier_spec(arch)},
            {"domain_identifier", domain_identifier_spec(arch)},
            {"reconstructor", reconstructor_spec(arch)},
            {"statistic", statistic_spec(arch)}};
}

}  // namespace dada
