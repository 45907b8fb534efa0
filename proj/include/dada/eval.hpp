#ifndef DADA_EVAL_HPP
#define DADA_EVAL_HPP

#include <filesystem>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "dada/data.hpp"
#include "dada/losses.hpp"
#include "dada/model.hpp"

namespace dada {

struct ClassifierEvaluation {
    double accuracy = 0;
    std::vector<int> predictions;
    Matrix<double> probabilities;  // softmax of C(f_di), one row per example
};

/// Eval-mode predictions argmax C(D_di(G(x))), in batches of `batch_rows`.
template <typename Scalar>
ClassifierEvaluation evaluate_classifier(ComponentSet<Scalar>& cs, const std::vector<LabeledExample>& examples,
                                         int batch_rows = 256) {
    if (examples.empty()) throw DataError("evaluate_classifier: empty example list");
    ClassifierEvaluation out;
    out.probabilities.resize(static_cast<Eigen::Index>(examples.size()), cs.arch.num_classes());
    int correct = 0;
    for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(batch_rows)) {
        const std::size_t stop = std::min(examples.size(), start + static_cast<std::size_t>(batch_rows));
        std::vector<int> idx(stop - start);
        std::iota(idx.begin(), idx.end(), static_cast<int>(start));
        const Matrix<Scalar> x = stack_images(examples, idx).template cast<Scalar>();
        const ForwardOptions opt = ForwardOptions::eval();
        const Matrix<Scalar> logits = cs.classifier.forward(cs.di_head.forward(cs.generator.forward(x, opt), opt), opt);
        const Matrix<double> p = softmax(Matrix<double>(logits.template cast<double>()));
        for (Eigen::Index r = 0; r < p.rows(); ++r) {
            Eigen::Index arg;
            p.row(r).maxCoeff(&arg);
            out.predictions.push_back(static_cast<int>(arg));
            correct += static_cast<int>(arg) == examples[start + static_cast<std::size_t>(r)].class_label;
        }
        out.probabilities.middleRows(static_cast<Eigen::Index>(start), p.rows()) = p;
    }
    out.accuracy = static_cast<double>(correct) / static_cast<double>(examples.size());
    return out;
}

/// Accuracy per hidden domain id, from predictions aligned with `examples`.
std::map<int, double> accuracy_by_domain(const std::vector<LabeledExample>& examples, const std::vector<int>& predictions);

/// K x K counts; rows are true classes, columns predictions.
struct ConfusionMatrix {
    Eigen::Matrix<long, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> counts;

    long total() const { return counts.sum(); }
    double accuracy() const { return total() == 0 ? 0.0 : static_cast<double>(counts.trace()) / total(); }
};

ConfusionMatrix tally_confusion(const std::vector<int>& labels, const std::vector<int>& predictions, int num_classes);

template <typename Scalar>
ConfusionMatrix confusion(ComponentSet<Scalar>& cs, const std::vector<LabeledExample>& examples) {
    const auto eval = evaluate_classifier(cs, examples);
    return tally_confusion(labels_of(examples), eval.predictions, cs.arch.num_classes());
}

enum class FeatureTap { generator, domain_invariant };

std::string feature_tag(FeatureTap tap);

/// Eval-mode features of `examples`: f_G or f_di.
template <typename Scalar>
Matrix<double> extract_features(ComponentSet<Scalar>& cs, const std::vector<LabeledExample>& examples, FeatureTap tap,
                                int batch_rows = 256) {
    const int width = tap == FeatureTap::generator ? cs.arch.generator_width : cs.arch.feature_width();
    Matrix<double> out(static_cast<Eigen::Index>(examples.size()), width);
    for (std::size_t start = 0; start < examples.size(); start += static_cast<std::size_t>(batch_rows)) {
        const std::size_t stop = std::min(examples.size(), start + static_cast<std::size_t>(batch_rows));
        std::vector<int> idx(stop - start);
        std::iota(idx.begin(), idx.end(), static_cast<int>(start));
        const ForwardOptions opt = ForwardOptions::eval();
        Matrix<Scalar> f = cs.generator.forward(stack_images(examples, idx).template cast<Scalar>(), opt);
        if (tap == FeatureTap::domain_invariant) f = cs.di_head.forward(f, opt);
        out.middleRows(static_cast<Eigen::Index>(start), f.rows()) = f.template cast<double>();
    }
    return out;
}

struct ADistanceResult {
    double epsilon = 0;  // held-out error of the source/target classifier
    double d_a = 0;      // 2 (1 - 2 epsilon)
    std::string tag;
};

struct ADistanceOptions {
    double l2 = 1e-3;
    int iterations = 300;
    double learning_rate = 0.5;
};

/// Proxy A-distance from a regularized logistic regression separating the
/// two samples. Each side is subsampled to the smaller size and split in half
/// (seeded); the classifier is trained on one half and scored on the other.
ADistanceResult a_distance(const Matrix<double>& source, const Matrix<double>& target, std::uint64_t seed,
                           std::string tag = {}, const ADistanceOptions& options = {});

void write_embeddings(const Matrix<double>& features, const std::vector<LabeledExample>& examples,
                      const std::filesystem::path& path);

/// Writes f_di rows with "class" and "domain" columns as CSV with a header.
template <typename Scalar>
void export_embeddings(ComponentSet<Scalar>& cs, const std::vector<LabeledExample>& examples,
                       const std::filesystem::path& path) {
    write_embeddings(extract_features(cs, examples, FeatureTap::domain_invariant), examples, path);
}

}  // namespace dada

#endif  // DADA_EVAL_HPP
