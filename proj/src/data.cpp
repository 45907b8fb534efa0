#include "dada/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <nlohmann/json.hpp>
#include <zlib.h>

#include "dada/container.hpp"

namespace dada {
namespace {

using Point = std::array<double, 2>;

double segment_distance(Point p, Point a, Point b) {
    const double bx = b[0] - a[0], by = b[1] - a[1];
    const double px = p[0] - a[0], py = p[1] - a[1];
    const double h = std::clamp((px * bx + py * by) / (bx * bx + by * by), 0.0, 1.0);
    return std::hypot(px - h * bx, py - h * by);
}

double box_distance(Point p, double half) {
    const double qx = std::abs(p[0]) - half, qy = std::abs(p[1]) - half;
    return std::hypot(std::max(qx, 0.0), std::max(qy, 0.0)) + std::min(std::max(qx, qy), 0.0);
}

// Signed distance to glyph `k` in the unit square [-1, 1]^2; negative inside.
double glyph_distance(int k, Point p, double stroke) {
    const double r = std::hypot(p[0], p[1]);
    switch (k) {
        case 0: return std::abs(r - 0.6) - stroke;
        case 1: return segment_distance(p, {0, -0.7}, {0, 0.7}) - stroke;
        case 2:
            return std::min(segment_distance(p, {-0.6, -0.3}, {0.6, -0.3}),
                            segment_distance(p, {-0.6, 0.3}, {0.6, 0.3})) -
                   stroke;
        case 3:
            return std::min(segment_distance(p, {0, -0.7}, {0, 0.7}), segment_distance(p, {-0.7, 0}, {0.7, 0})) - stroke;
        case 4:
            return std::min(segment_distance(p, {-0.6, -0.6}, {0.6, 0.6}),
                            segment_distance(p, {-0.6, 0.6}, {0.6, -0.6})) -
                   stroke;
        case 5: return std::abs(box_distance(p, 0.55)) - stroke;
        case 6:
            return std::min({segment_distance(p, {0, -0.65}, {0.65, 0.55}),
                             segment_distance(p, {0.65, 0.55}, {-0.65, 0.55}),
                             segment_distance(p, {-0.65, 0.55}, {0, -0.65})}) -
                   stroke;
        case 7: return r - 0.45;
        case 8:
            return std::min(segment_distance(p, {-0.4, -0.7}, {-0.4, 0.6}),
                            segment_distance(p, {-0.4, 0.6}, {0.5, 0.6})) -
                   stroke;
        case 9: return box_distance(p, 0.42);
        default: throw std::out_of_range("glyph class out of range");
    }
}

std::vector<DomainSpec> build_catalog() {
    std::vector<DomainSpec> c;
    DomainTransform textured;
    textured.foreground = {0.9, 0.9, 0.5};
    textured.background = {0.05, 0.05, 0.15};
    textured.texture_amplitude = 0.5;
    textured.texture_frequency = 4;
    textured.texture_angle = 30;
    textured.noise_std = 0.04;
    textured.rotation = 10;
    c.push_back({"textured", textured, 0});

    DomainTransform swapped;
    swapped.channel_order = {2, 0, 1};
    swapped.foreground = {0.5, 1.0, 0.7};
    swapped.background = {0.3, 0.1, 0.1};
    swapped.texture_amplitude = 0.3;
    swapped.texture_frequency = 5;
    swapped.texture_angle = 110;
    swapped.noise_std = 0.08;
    swapped.rotation = -10;
    c.push_back({"swapped", swapped, 0});

    DomainTransform dim;
    dim.foreground = {0.4, 0.4, 0.5};
    dim.background = {0.05, 0.05, 0.1};
    dim.noise_std = 0.15;
    dim.rotation = 15;
    c.push_back({"dim", dim, 0});

    DomainTransform tinted;
    tinted.foreground = {1.0, 0.6, 0.3};
    tinted.background = {0.1, 0.2, 0.35};
    tinted.noise_std = 0.05;
    c.push_back({"tinted", tinted, 0});

    DomainTransform negative;
    negative.invert = {true, true, true};
    negative.background = {0.1, 0.1, 0.1};
    negative.noise_std = 0.05;
    c.push_back({"negative", negative, 0});
    return c;
}

Rng domain_rng(std::uint64_t seed, std::size_t domain) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(domain), 0x5eedu};
    return Rng(seq);
}

void validate(const SynthConfig& c) {
    if (c.domains.size() < 2) throw ConfigError("synthetic data needs at least 2 domains (source plus one target)");
    if (c.num_classes < 2 || c.num_classes > max_glyph_classes)
        throw ConfigError("num_classes must lie in [2, " + std::to_string(max_glyph_classes) + "]");
    if (c.shape.channels != 3 || c.shape.height < 8 || c.shape.width < 8)
        throw ConfigError("synthetic images must be 3 x H x W with H, W >= 8");
    for (const auto& d : c.domains) {
        if (d.count < c.num_classes)
            throw ConfigError("domain '" + d.name + "' needs at least num_classes = " + std::to_string(c.num_classes) +
                              " examples, got " + std::to_string(d.count));
        auto order = d.transform.channel_order;
        std::sort(order.begin(), order.end());
        if (order != std::array<int, 3>{0, 1, 2}) throw ConfigError("domain '" + d.name + "': channel_order is not a permutation");
        if (d.transform.noise_std < 0) throw ConfigError("domain '" + d.name + "': negative noise_std");
    }
    if (!c.allow_identical_domains)
        for (std::size_t i = 0; i < c.domains.size(); ++i)
            for (std::size_t j = i + 1; j < c.domains.size(); ++j)
                if (c.domains[i].transform == c.domains[j].transform)
                    throw ConfigError("domains '" + c.domains[i].name + "' and '" + c.domains[j].name +
                                      "' have identical transforms (degenerate mixture)");
}

nlohmann::json transform_json(const DomainTransform& t) {
    return {{"channel_order", t.channel_order},   {"invert", t.invert},
            {"foreground", t.foreground},         {"background", t.background},
            {"texture_amplitude", t.texture_amplitude}, {"texture_frequency", t.texture_frequency},
            {"texture_angle", t.texture_angle},   {"noise_std", t.noise_std},
            {"rotation", t.rotation}};
}

DomainTransform transform_from(const nlohmann::json& j) {
    DomainTransform t;
    t.channel_order = j.at("channel_order").get<std::array<int, 3>>();
    t.invert = j.at("invert").get<std::array<bool, 3>>();
    t.foreground = j.at("foreground").get<std::array<double, 3>>();
    t.background = j.at("background").get<std::array<double, 3>>();
    t.texture_amplitude = j.at("texture_amplitude").get<double>();
    t.texture_frequency = j.at("texture_frequency").get<double>();
    t.texture_angle = j.at("texture_angle").get<double>();
    t.noise_std = j.at("noise_std").get<double>();
    t.rotation = j.at("rotation").get<double>();
    return t;
}

nlohmann::json manifest_json(const DatasetManifest& m) {
    nlohmann::json domains = nlohmann::json::array();
    for (const auto& d : m.config.domains)
        domains.push_back({{"name", d.name}, {"count", d.count}, {"transform", transform_json(d.transform)}});
    return {{"format_version", m.format_version},
            {"seed", m.config.seed},
            {"num_classes", m.config.num_classes},
            {"shape", {m.config.shape.channels, m.config.shape.height, m.config.shape.width}},
            {"allow_identical_domains", m.config.allow_identical_domains},
            {"domains", domains},
            {"source_size", m.source_size},
            {"target_size", m.target_size}};
}

DatasetManifest manifest_from(const nlohmann::json& j) {
    DatasetManifest m;
    m.format_version = j.at("format_version").get<std::string>();
    m.config.seed = j.at("seed").get<std::uint64_t>();
    m.config.num_classes = j.at("num_classes").get<int>();
    const auto shape = j.at("shape").get<std::array<int, 3>>();
    m.config.shape = {shape[0], shape[1], shape[2]};
    m.config.allow_identical_domains = j.at("allow_identical_domains").get<bool>();
    for (const auto& d : j.at("domains"))
        m.config.domains.push_back(
            {d.at("name").get<std::string>(), transform_from(d.at("transform")), d.at("count").get<int>()});
    m.source_size = j.at("source_size").get<std::size_t>();
    m.target_size = j.at("target_size").get<std::size_t>();
    return m;
}

void add_split(Container& c, const std::string& prefix, const std::vector<LabeledExample>& examples, int width) {
    Blob images{prefix + ".images", {static_cast<std::int64_t>(examples.size()), width}, {}};
    Blob labels{prefix + ".labels", {static_cast<std::int64_t>(examples.size())}, {}};
    Blob domains{prefix + ".domains", {static_cast<std::int64_t>(examples.size())}, {}};
    images.data.reserve(examples.size() * static_cast<std::size_t>(width));
    for (const auto& e : examples) {
        images.data.insert(images.data.end(), e.image.data(), e.image.data() + e.image.size());
        labels.data.push_back(static_cast<float>(e.class_label));
        domains.data.push_back(static_cast<float>(e.hidden_domain_id));
    }
    c.blobs.push_back(std::move(images));
    c.blobs.push_back(std::move(labels));
    c.blobs.push_back(std::move(domains));
}

std::vector<LabeledExample> read_split(const Container& c, const std::string& prefix, int width) {
    const Blob& images = c.blob(prefix + ".images");
    const Blob& labels = c.blob(prefix + ".labels");
    const Blob& domains = c.blob(prefix + ".domains");
    const auto n = labels.data.size();
    if (domains.data.size() != n || images.data.size() != n * static_cast<std::size_t>(width))
        throw DataError("dataset split '" + prefix + "' has inconsistent blob sizes");
    std::vector<LabeledExample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].image = Eigen::Map<const RowVector<float>>(images.data.data() + i * static_cast<std::size_t>(width), width);
        out[i].class_label = static_cast<int>(labels.data[i]);
        out[i].hidden_domain_id = static_cast<int>(domains.data[i]);
    }
    return out;
}

}  // namespace

const std::vector<DomainSpec>& target_style_catalog() {
    static const std::vector<DomainSpec> catalog = build_catalog();
    return catalog;
}

SynthConfig SynthConfig::standard(int target_domains, int source_count, int target_count) {
    const auto& catalog = target_style_catalog();
    if (target_domains < 1 || target_domains > static_cast<int>(catalog.size()))
        throw ConfigError("target_domains must lie in [1, " + std::to_string(catalog.size()) + "]");
    SynthConfig c;
    DomainTransform clean;
    clean.noise_std = 0.02;
    c.domains.push_back({"source", clean, source_count});
    for (int i = 0; i < target_domains; ++i) {
        DomainSpec d = catalog[static_cast<std::size_t>(i)];
        d.count = target_count;
        c.domains.push_back(d);
    }
    return c;
}

RowVector<float> render_glyph(int class_label, const DomainTransform& t, const ImageShape& shape, Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    const double scale = uniform(0.75, 1.0);
    const double shift_x = uniform(-0.15, 0.15), shift_y = uniform(-0.15, 0.15);
    const double angle = (uniform(-12, 12) + t.rotation) * std::numbers::pi / 180;
    const double stroke = uniform(0.10, 0.16);
    const double brightness = uniform(0.75, 1.0);
    const double floor = uniform(0.0, 0.1);
    const double phase = uniform(0, 2 * std::numbers::pi);
    const double tex_angle = t.texture_angle * std::numbers::pi / 180;
    const double edge = 2.0 / std::min(shape.height, shape.width);  // one pixel in glyph units
    const double c = std::cos(angle), s = std::sin(angle);

    const int h = shape.height, w = shape.width, plane = h * w;
    std::array<std::vector<double>, 3> rgb;
    for (auto& ch : rgb) ch.resize(static_cast<std::size_t>(plane));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double u = (x + 0.5) / w * 2 - 1, v = (y + 0.5) / h * 2 - 1;
            const double du = (u - shift_x) / scale, dv = (v - shift_y) / scale;
            const Point p{c * du + s * dv, -s * du + c * dv};
            const double mask = std::clamp(0.5 - glyph_distance(class_label, p, stroke) * scale / edge, 0.0, 1.0);
            double texture = 0;
            if (t.texture_amplitude != 0)
                texture = t.texture_amplitude * 0.5 *
                          (1 + std::sin(2 * std::numbers::pi * t.texture_frequency * 0.5 *
                                            (u * std::cos(tex_angle) + v * std::sin(tex_angle)) +
                                        phase));
            for (int k = 0; k < 3; ++k) {
                const double bg = t.background[static_cast<std::size_t>(k)] + floor + texture;
                const double fg = brightness * t.foreground[static_cast<std::size_t>(k)];
                rgb[static_cast<std::size_t>(k)][static_cast<std::size_t>(y * w + x)] = bg * (1 - mask) + fg * mask;
            }
        }
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    RowVector<float> out(3 * plane);
    for (int k = 0; k < 3; ++k) {
        const auto& src = rgb[static_cast<std::size_t>(t.channel_order[static_cast<std::size_t>(k)])];
        for (int i = 0; i < plane; ++i) {
            double value = std::clamp(src[static_cast<std::size_t>(i)], 0.0, 1.0);
            if (t.invert[static_cast<std::size_t>(k)]) value = 1 - value;
            if (t.noise_std > 0) value += t.noise_std * noise(rng);
            out(k * plane + i) = static_cast<float>(std::clamp(value, 0.0, 1.0));
        }
    }
    return out;
}

DomainMixture synth_generate(const SynthConfig& config) {
    validate(config);
    DomainMixture m;
    m.num_classes = config.num_classes;
    m.shape = config.shape;
    for (std::size_t d = 0; d < config.domains.size(); ++d) {
        const auto& spec = config.domains[d];
        m.domain_names.push_back(spec.name);
        Rng rng = domain_rng(config.seed, d);
        std::vector<int> labels(static_cast<std::size_t>(spec.count));
        for (int i = 0; i < spec.count; ++i) labels[static_cast<std::size_t>(i)] = i % config.num_classes;
        std::shuffle(labels.begin(), labels.end(), rng);
        auto& split = d == 0 ? m.source : m.target;
        for (int label : labels)
            split.push_back({render_glyph(label, spec.transform, config.shape, rng), label, static_cast<int>(d)});
    }
    m.manifest = {container_format_version, config, m.source.size(), m.target.size()};
    return m;
}

std::uint32_t mixture_checksum(const DomainMixture& m) {
    uLong crc = crc32(0L, Z_NULL, 0);
    for (const auto* split : {&m.source, &m.target}) {
        for (const auto& e : *split) {
            crc = crc32(crc, reinterpret_cast<const Bytef*>(e.image.data()),
                        static_cast<uInt>(e.image.size() * sizeof(float)));
            const std::int32_t meta[2] = {e.class_label, e.hidden_domain_id};
            crc = crc32(crc, reinterpret_cast<const Bytef*>(meta), sizeof(meta));
        }
    }
    return static_cast<std::uint32_t>(crc);
}

void save_mixture(const DomainMixture& m, const std::filesystem::path& path) {
    Container c{"dataset", manifest_json(m.manifest), {}};
    c.manifest["domain_names"] = m.domain_names;
    add_split(c, "source", m.source, m.shape.size());
    add_split(c, "target", m.target, m.shape.size());
    write_container(path, c);
}

DomainMixture load_mixture(const std::filesystem::path& path) {
    const Container c = read_container(path, "dataset");
    DomainMixture m;
    try {
        m.manifest = manifest_from(c.manifest);
        m.domain_names = c.manifest.at("domain_names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": malformed dataset manifest: " + e.what());
    }
    if (m.manifest.format_version != container_format_version)
        throw FormatVersionError(path.string() + ": dataset format version '" + m.manifest.format_version + "'");
    m.num_classes = m.manifest.config.num_classes;
    m.shape = m.manifest.config.shape;
    m.source = read_split(c, "source", m.shape.size());
    m.target = read_split(c, "target", m.shape.size());
    if (m.source.size() != m.manifest.source_size || m.target.size() != m.manifest.target_size)
        throw DataError(path.string() + ": split sizes disagree with manifest");
    return m;
}

Matrix<float> stack_images(const std::vector<LabeledExample>& examples, const std::vector<int>& indices) {
    if (examples.empty()) throw DataError("no examples to stack");
    Matrix<float> out(static_cast<Eigen::Index>(indices.size()), examples.front().image.size());
    for (std::size_t i = 0; i < indices.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = examples.at(static_cast<std::size_t>(indices[i])).image;
    return out;
}

Matrix<float> stack_images(const std::vector<LabeledExample>& examples) {
    std::vector<int> all(examples.size());
    std::iota(all.begin(), all.end(), 0);
    return stack_images(examples, all);
}

std::vector<int> labels_of(const std::vector<LabeledExample>& examples) {
    std::vector<int> out;
    out.reserve(examples.size());
    for (const auto& e : examples) out.push_back(e.class_label);
    return out;
}

BatchStream::BatchStream(const DomainMixture& m, int batch_size, std::uint64_t seed)
    : mixture_(&m), batch_size_(batch_size), seed_(seed) {
    if (m.source.empty() || m.target.empty()) throw DataError("batch stream needs non-empty source and target corpora");
    if (batch_size < 1) throw ConfigError("batch size must be positive");
    const std::size_t smaller = std::min(m.source.size(), m.target.size());
    if (static_cast<std::size_t>(batch_size) > smaller)
        throw ConfigError("batch size " + std::to_string(batch_size) + " exceeds the smaller corpus (" +
                          std::to_string(smaller) + " examples)");
    steps_per_epoch_ = static_cast<int>(smaller / static_cast<std::size_t>(batch_size));
    plan_epoch();
}

std::vector<int> BatchStream::permutation(std::size_t n, int epoch, int stream) const {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::seed_seq seq{static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32),
                      static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
    Rng rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

void BatchStream::plan_epoch() {
    source_order_ = permutation(mixture_->source.size(), epoch_, 0);
    target_order_ = permutation(mixture_->target.size(), epoch_, 1);
}

void BatchStream::seek(int epoch, int position) {
    if (epoch < 0 || position < 0 || position >= steps_per_epoch_) throw std::out_of_range("batch stream seek out of range");
    epoch_ = epoch;
    position_ = position;
    plan_epoch();
}

std::pair<std::vector<std::vector<int>>, std::vector<std::vector<int>>> BatchStream::epoch_plan(int epoch) const {
    const auto src = permutation(mixture_->source.size(), epoch, 0);
    const auto tgt = permutation(mixture_->target.size(), epoch, 1);
    std::pair<std::vector<std::vector<int>>, std::vector<std::vector<int>>> plan;
    const auto b = static_cast<std::ptrdiff_t>(batch_size_);
    for (int s = 0; s < steps_per_epoch_; ++s) {
        plan.first.emplace_back(src.begin() + s * b, src.begin() + (s + 1) * b);
        plan.second.emplace_back(tgt.begin() + s * b, tgt.begin() + (s + 1) * b);
    }
    return plan;
}

std::pair<SourceBatch, TargetBatch> BatchStream::next() {
    const auto b = static_cast<std::ptrdiff_t>(batch_size_);
    const std::vector<int> src(source_order_.begin() + position_ * b, source_order_.begin() + (position_ + 1) * b);
    const std::vector<int> tgt(target_order_.begin() + position_ * b, target_order_.begin() + (position_ + 1) * b);
    SourceBatch sb{stack_images(mixture_->source, src), {}};
    sb.labels.reserve(src.size());
    for (int i : src) sb.labels.push_back(mixture_->source[static_cast<std::size_t>(i)].class_label);
    TargetBatch tb{stack_images(mixture_->target, tgt)};
    if (++position_ == steps_per_epoch_) {
        position_ = 0;
        ++epoch_;
        plan_epoch();
    }
    return {std::move(sb), std::move(tb)};
}

}  // namespace dada
