#include "dada/eval.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>

namespace dada {

std::map<int, double> accuracy_by_domain(const std::vector<LabeledExample>& examples,
                                         const std::vector<int>& predictions) {
    if (predictions.size() != examples.size()) throw ShapeError("accuracy_by_domain: prediction count mismatch");
    std::map<int, std::pair<int, int>> tally;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        auto& [correct, seen] = tally[examples[i].hidden_domain_id];
        correct += predictions[i] == examples[i].class_label;
        ++seen;
    }
    std::map<int, double> out;
    for (const auto& [domain, cs] : tally) out[domain] = static_cast<double>(cs.first) / cs.second;
    return out;
}

ConfusionMatrix tally_confusion(const std::vector<int>& labels, const std::vector<int>& predictions, int num_classes) {
    if (labels.empty()) throw DataError("confusion: empty example set");
    if (labels.size() != predictions.size()) throw ShapeError("confusion: label/prediction count mismatch");
    ConfusionMatrix m;
    m.counts.setZero(num_classes, num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i], p = predictions[i];
        if (y < 0 || y >= num_classes || p < 0 || p >= num_classes)
            throw ShapeError("confusion: class index outside [0, " + std::to_string(num_classes) + ")");
        ++m.counts(y, p);
    }
    return m;
}

std::string feature_tag(FeatureTap tap) { return tap == FeatureTap::generator ? "f_G" : "f_di"; }

namespace {

struct Split {
    Matrix<double> train_x, test_x;
    Vector<double> train_y, test_y;
};

Split balanced_split(const Matrix<double>& source, const Matrix<double>& target, std::uint64_t seed) {
    const Eigen::Index per_side = std::min(source.rows(), target.rows());
    const Eigen::Index train_half = per_side / 2, test_half = per_side - train_half;
    Split s;
    s.train_x.resize(2 * train_half, source.cols());
    s.test_x.resize(2 * test_half, source.cols());
    s.train_y.resize(2 * train_half);
    s.test_y.resize(2 * test_half);
    int side = 0;
    for (const Matrix<double>* m : {&source, &target}) {
        std::vector<Eigen::Index> order(static_cast<std::size_t>(m->rows()));
        std::iota(order.begin(), order.end(), 0);
        Rng rng(seed);  // same stream per side, so swapping the sides mirrors the split
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index i = 0; i < train_half; ++i) {
            s.train_x.row(side * train_half + i) = m->row(order[static_cast<std::size_t>(i)]);
            s.train_y(side * train_half + i) = side;
        }
        for (Eigen::Index i = 0; i < test_half; ++i) {
            s.test_x.row(side * test_half + i) = m->row(order[static_cast<std::size_t>(train_half + i)]);
            s.test_y(side * test_half + i) = side;
        }
        ++side;
    }
    return s;
}

}  // namespace

ADistanceResult a_distance(const Matrix<double>& source, const Matrix<double>& target, std::uint64_t seed,
                           std::string tag, const ADistanceOptions& options) {
    if (source.rows() < 20 || target.rows() < 20)
        throw DataError("a_distance: need at least 20 examples per side (got " + std::to_string(source.rows()) + " and " +
                        std::to_string(target.rows()) + ")");
    if (source.cols() != target.cols()) throw ShapeError("a_distance: feature widths differ");
    if (!source.allFinite() || !target.allFinite()) throw DataError("a_distance: non-finite features");
    Split s = balanced_split(source, target, seed);

    const RowVector<double> mean = s.train_x.colwise().mean();
    RowVector<double> scale = ((s.train_x.rowwise() - mean).array().square().colwise().mean()).sqrt();
    scale = scale.unaryExpr([](double v) { return v > 1e-8 ? v : 1.0; });
    auto standardize = [&](Matrix<double>& x) { x = (x.rowwise() - mean).array().rowwise() / scale.array(); };
    standardize(s.train_x);
    standardize(s.test_x);

    Vector<double> w = Vector<double>::Zero(s.train_x.cols());
    double b = 0;
    const double n = static_cast<double>(s.train_x.rows());
    for (int it = 0; it < options.iterations; ++it) {
        const Vector<double> z = (s.train_x * w).array() + b;
        const Vector<double> residual = (1.0 / (1.0 + (-z.array()).exp())).matrix() - s.train_y;
        w -= options.learning_rate * (s.train_x.transpose() * residual / n + options.l2 * w);
        b -= options.learning_rate * residual.mean();
    }
    const Vector<double> z = (s.test_x * w).array() + b;
    int errors = 0;
    for (Eigen::Index i = 0; i < z.size(); ++i) errors += (z(i) > 0 ? 1.0 : 0.0) != s.test_y(i);
    ADistanceResult r;
    r.epsilon = static_cast<double>(errors) / static_cast<double>(z.size());
    r.d_a = 2.0 * (1.0 - 2.0 * r.epsilon);
    r.tag = std::move(tag);
    return r;
}

void write_embeddings(const Matrix<double>& features, const std::vector<LabeledExample>& examples,
                      const std::filesystem::path& path) {
    if (static_cast<std::size_t>(features.rows()) != examples.size())
        throw ShapeError("export_embeddings: feature rows do not match examples");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write embeddings to " + path.string());
    for (Eigen::Index j = 0; j < features.cols(); ++j) out << 'f' << j << ',';
    out << "class,domain\n";
    out << std::setprecision(9);
    for (Eigen::Index i = 0; i < features.rows(); ++i) {
        for (Eigen::Index j = 0; j < features.cols(); ++j) out << features(i, j) << ',';
        const auto& e = examples[static_cast<std::size_t>(i)];
        out << e.class_label << ',' << e.hidden_domain_id << '\n';
    }
    if (!out) throw DataError("failed while writing embeddings to " + path.string());
}

}  // namespace dada
