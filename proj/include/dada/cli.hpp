#ifndef DADA_CLI_HPP
#define DADA_CLI_HPP

#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "dada/config.hpp"
#include "dada/data.hpp"

namespace dada::cli {

namespace fs = std::filesystem;

enum ExitCode : int { ok = 0, failure = 1, config_error = 2, data_error = 3, divergence = 4 };

// Files inside a run directory.
inline constexpr const char* config_file = "config.ini";
inline constexpr const char* metrics_file = "metrics.jsonl";
inline constexpr const char* checkpoint_file = "checkpoint.dada";
inline constexpr const char* evaluation_file = "evaluation.json";
inline constexpr const char* embeddings_file = "embeddings.csv";
inline constexpr const char* marker_file = "run.json";
inline constexpr const char* dataset_file = "dataset.dada";
inline constexpr const char* curves_plot = "curves.svg";
inline constexpr const char* confusion_plot = "confusion.svg";

/// A directory holding the completion marker.
bool is_complete(const fs::path& dir);

/// Loads `data` when given, otherwise generates the configured task.
DomainMixture load_or_generate(const RunConfig& config, const std::optional<fs::path>& data);

/// Trains into `dir`. Work happens in a sibling staging directory that is
/// renamed into place once the completion marker is written; an interrupted
/// staging directory with a matching config resumes from its checkpoint.
/// A completed `dir` is replaced only when `force` is set.
void train_run(const RunConfig& config, const DomainMixture& data, const fs::path& dir, bool force, std::ostream& log);

/// Scores a completed training run: target accuracy overall and per hidden
/// domain, confusion, A-distance on f_G and f_di, and the f_di embedding
/// export. Writes the evaluation file, appends records to the metrics file
/// and returns the evaluation record.
nlohmann::json evaluate_run(const fs::path& dir, const DomainMixture& data, std::ostream& log);
/// Same, with the run's config already resolved (eval.* overrides applied).
nlohmann::json evaluate_run(const fs::path& dir, const RunConfig& config, const DomainMixture& data, std::ostream& log);

/// "62.0" for one value, "62.0±2.0" (population spread) for several;
/// values are fractions, cells are percentages.
std::string format_cell(const std::vector<double>& values);

struct SummaryTable {
    std::vector<std::string> columns;  // target domains, then "average"
    std::vector<std::string> rows;     // ablation levels in canonical order
    std::vector<std::vector<std::string>> cells;
    std::vector<std::vector<int>> runs;  // run count behind each cell

    std::string to_text() const;
    std::string to_csv() const;
};

/// Rows are ablation levels, columns the hidden target domains plus their
/// average; each cell aggregates every run of that level.
SummaryTable summarize(const std::vector<fs::path>& run_dirs);

/// Renders loss/accuracy curves and, when an evaluation was recorded, a
/// confusion heatmap from `dir`'s metrics file alone.
std::vector<fs::path> plot_run(const fs::path& dir);

/// Entry point behind the `dada` executable.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dada::cli

#endif  // DADA_CLI_HPP
