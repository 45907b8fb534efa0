#ifndef DADA_DATA_HPP
#define DADA_DATA_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dada/types.hpp"

namespace dada {

/// Parametric style of one domain, applied to every rendered glyph.
struct DomainTransform {
    std::array<int, 3> channel_order{0, 1, 2};
    std::array<bool, 3> invert{false, false, false};
    std::array<double, 3> foreground{1, 1, 1};  // multiplies the glyph color
    std::array<double, 3> background{0, 0, 0};
    double texture_amplitude = 0;  // additive sinusoidal grating on the background
    double texture_frequency = 0;  // cycles across the image
    double texture_angle = 0;      // degrees
    double noise_std = 0;
    double rotation = 0;  // degrees added to every glyph

    bool operator==(const DomainTransform&) const = default;
};

struct DomainSpec {
    std::string name;
    DomainTransform transform;
    int count = 0;

    bool operator==(const DomainSpec&) const = default;
};

/// The first domain is the labeled source; the rest form the target mixture.
struct SynthConfig {
    std::uint64_t seed = 7;
    int num_classes = 5;
    ImageShape shape{3, 16, 16};
    std::vector<DomainSpec> domains;
    bool allow_identical_domains = false;

    /// Source plus `target_domains` styles drawn in order from a fixed catalog.
    static SynthConfig standard(int target_domains = 3, int source_count = 800, int target_count = 800);

    bool operator==(const SynthConfig&) const = default;
};

/// Fixed catalog of target styles, in the order `standard` uses them.
const std::vector<DomainSpec>& target_style_catalog();
inline constexpr int max_glyph_classes = 10;

struct LabeledExample {
    RowVector<float> image;  // C x H x W, channel-major
    int class_label = 0;
    int hidden_domain_id = 0;

    bool operator==(const LabeledExample& o) const {
        return class_label == o.class_label && hidden_domain_id == o.hidden_domain_id && image == o.image;
    }
};

struct DatasetManifest {
    std::string format_version;
    SynthConfig config;
    std::size_t source_size = 0;
    std::size_t target_size = 0;

    bool operator==(const DatasetManifest&) const = default;
};

struct DomainMixture {
    std::vector<LabeledExample> source;
    std::vector<LabeledExample> target;  // labels kept only for evaluation
    int num_classes = 0;
    std::vector<std::string> domain_names;
    ImageShape shape;
    DatasetManifest manifest;

    bool operator==(const DomainMixture&) const = default;
};

/// Renders one glyph of `class_label` under `transform` with per-example jitter.
RowVector<float> render_glyph(int class_label, const DomainTransform& transform, const ImageShape& shape, Rng& rng);

DomainMixture synth_generate(const SynthConfig& config);

/// crc32 over images, labels and domain ids of both splits.
std::uint32_t mixture_checksum(const DomainMixture& m);

void save_mixture(const DomainMixture& m, const std::filesystem::path& path);
DomainMixture load_mixture(const std::filesystem::path& path);

/// Stacks the images of `examples[indices]` into one row per example.
Matrix<float> stack_images(const std::vector<LabeledExample>& examples, const std::vector<int>& indices);
Matrix<float> stack_images(const std::vector<LabeledExample>& examples);
std::vector<int> labels_of(const std::vector<LabeledExample>& examples);

struct SourceBatch {
    Matrix<float> images;
    std::vector<int> labels;
};

/// Target records reach the trainer as images only.
struct TargetBatch {
    Matrix<float> images;
};

/// Paired source/target batches. Each epoch reshuffles both corpora with a
/// seed derived from (seed, epoch) and drops the remainder; the target side
/// samples uniformly from the pooled mixture.
class BatchStream {
public:
    BatchStream(const DomainMixture& m, int batch_size, std::uint64_t seed);

    int steps_per_epoch() const { return steps_per_epoch_; }
    int epoch() const { return epoch_; }
    int position() const { return position_; }  // batch index within the epoch
    void seek(int epoch, int position);

    /// Index lists for every batch of `epoch`, source then target.
    std::pair<std::vector<std::vector<int>>, std::vector<std::vector<int>>> epoch_plan(int epoch) const;

    std::pair<SourceBatch, TargetBatch> next();

private:
    std::vector<int> permutation(std::size_t n, int epoch, int stream) const;
    void plan_epoch();

    const DomainMixture* mixture_;
    int batch_size_;
    std::uint64_t seed_;
    int steps_per_epoch_;
    int epoch_ = 0;
    int position_ = 0;
    std::vector<int> source_order_;
    std::vector<int> target_order_;
};

}  // namespace dada

#endif  // DADA_DATA_HPP
