#ifndef DADA_CONFIG_HPP
#define DADA_CONFIG_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dada/data.hpp"
#include "dada/trainer.hpp"

namespace dada {

/// Knobs of the synthetic task; `synth()` expands them into a SynthConfig.
struct DataSettings {
    std::uint64_t seed = 7;
    int num_classes = 5;
    int target_domains = 3;
    int source_count = 800;
    int target_count = 800;  // per target domain
    int image_size = 16;
    bool allow_identical_domains = false;

    SynthConfig synth() const;
};

struct EvalSettings {
    std::uint64_t a_distance_seed = 1;
    double a_distance_l2 = 1e-3;
    int a_distance_iterations = 300;
    int checkpoint_every = 0;  // steps between checkpoints; 0 = every epoch
};

struct AblateSettings {
    int seeds = 3;
    std::vector<AblationLevel> levels{all_levels.begin(), all_levels.end()};
};

struct RunConfig {
    DataSettings data;
    ExperimentConfig experiment;
    EvalSettings eval;
    AblateSettings ablate;

    /// Copies data-derived fields (classes, image shape) into the architecture.
    void sync();
};

/// Every settable key, "section.name", in echo order.
const std::vector<std::string>& config_keys();

void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

/// Applies "section.name=value".
void apply_override(RunConfig& config, const std::string& assignment);

/// INI text into a config, starting from `base`. Unknown sections or keys
/// are errors.
RunConfig parse_run_config(const std::string& ini_text, RunConfig base = {});

/// Defaults, then the file (if any), then `env_seed`, then `overrides`.
RunConfig load_run_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides,
                          const std::optional<std::string>& env_seed = std::nullopt);

/// Fully resolved config as INI; parsing it back reproduces the config.
std::string to_ini(const RunConfig& config);

}  // namespace dada

#endif  // DADA_CONFIG_HPP
