#ifndef DADA_METRICS_HPP
#define DADA_METRICS_HPP

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <vector>

#include "dada/trainer.hpp"

namespace dada {

/// One JSON object per line. Step records carry "record": "step"; other
/// producers (evaluation, config echo) use their own record names.
nlohmann::json to_json(const LossReport& r);
LossReport report_from_json(const nlohmann::json& j);

class MetricsLog {
public:
    MetricsLog(const std::filesystem::path& path, bool append);
    void write(const nlohmann::json& record);
    void write(const LossReport& r) { write(to_json(r)); }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

/// All records of a metrics file. A partial final line (interrupted
/// writer) is ignored; malformed lines elsewhere raise DataError.
std::vector<nlohmann::json> read_metrics(const std::filesystem::path& path);
std::vector<LossReport> step_reports(const std::vector<nlohmann::json>& records);

struct EpochSummary {
    int epoch = 0;
    int steps = 0;
    double cross_entropy = 0;
    double source_accuracy = 0;
};

/// Per-epoch means of the source cross-entropy and batch accuracy.
std::vector<EpochSummary> epoch_summaries(const std::vector<LossReport>& reports);

struct ConvergenceCheck {
    double first_cross_entropy = 0;
    double last_cross_entropy = 0;
    double ratio = 0;
    double worst_accuracy_drop = 0;  // largest decrease between consecutive tail epochs
    bool cross_entropy_ok = false;
    bool accuracy_ok = false;
    bool passed() const { return cross_entropy_ok && accuracy_ok; }
};

/// The last epoch's cross-entropy must fall below `ratio_limit` of the
/// first's, and accuracy over the last `tail` epochs must not drop by more
/// than `tolerance` between consecutive epochs.
ConvergenceCheck check_convergence(const std::vector<EpochSummary>& epochs, double ratio_limit = 0.25, int tail = 5,
                                   double tolerance = 0.02);

}  // namespace dada

#endif  // DADA_METRICS_HPP
