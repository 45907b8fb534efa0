#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dada/eval.hpp"
#include "test_support.hpp"

namespace dada {
namespace {

namespace fs = std::filesystem;
using testing::random_matrix;

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "dada_test_eval";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

const DomainMixture& mixture() {
    static const DomainMixture m = synth_generate(SynthConfig::standard(2, 40, 30));
    return m;
}

ComponentSet<float> components(int feature_width = 4) {
    ArchConfig a;
    a.feature_width = feature_width;
    Rng rng(5);
    return build_components<float>(a, rng);
}

std::map<std::string, Matrix<float>> state(ComponentSet<float>& cs) {
    std::map<std::string, Matrix<float>> s;
    for (auto& p : cs.parameters()) s[p.name] = *p.value;
    for (auto& p : cs.buffers()) s["buffer:" + p.name] = *p.value;
    return s;
}

TEST(Confusion, PerfectClassifierIsDiagonal) {
    const std::vector<int> y{0, 1, 2, 2, 1, 0, 0};
    const auto m = tally_confusion(y, y, 3);
    EXPECT_EQ(m.total(), 7);
    EXPECT_DOUBLE_EQ(m.accuracy(), 1.0);
    EXPECT_EQ(m.counts(0, 0), 3);
    EXPECT_EQ(m.counts(1, 1), 2);
    EXPECT_EQ(m.counts(2, 2), 2);
    EXPECT_EQ(m.counts.sum(), m.counts.trace());
}

TEST(Confusion, ConstantPredictorFillsOneColumn) {
    const std::vector<int> y{0, 1, 2, 3, 3};
    const auto m = tally_confusion(y, std::vector<int>(y.size(), 0), 4);
    EXPECT_EQ(m.counts.col(0).sum(), 5);
    EXPECT_EQ(m.counts.rightCols(3).sum(), 0);
}

TEST(Confusion, MatchesBruteForceTally) {
    Rng rng(3);
    std::uniform_int_distribution<int> cls(0, 4);
    std::vector<int> y(20), p(20);
    for (int i = 0; i < 20; ++i) {
        y[static_cast<std::size_t>(i)] = cls(rng);
        p[static_cast<std::size_t>(i)] = cls(rng);
    }
    const auto m = tally_confusion(y, p, 5);
    for (int a = 0; a < 5; ++a)
        for (int b = 0; b < 5; ++b) {
            long expected = 0;
            for (std::size_t i = 0; i < y.size(); ++i) expected += y[i] == a && p[i] == b;
            EXPECT_EQ(m.counts(a, b), expected) << a << "," << b;
        }
}

TEST(Confusion, RowSumsAreClassHistogram) {
    auto cs = components();
    const auto& target = mixture().target;
    const auto m = confusion(cs, target);
    std::vector<long> histogram(5, 0);
    for (const auto& e : target) ++histogram[static_cast<std::size_t>(e.class_label)];
    for (int k = 0; k < 5; ++k) EXPECT_EQ(m.counts.row(k).sum(), histogram[static_cast<std::size_t>(k)]);
    EXPECT_EQ(m.total(), static_cast<long>(target.size()));
}

TEST(Confusion, Preconditions) {
    EXPECT_THROW(tally_confusion({}, {}, 3), DataError);
    EXPECT_THROW(tally_confusion({0, 1}, {0}, 3), ShapeError);
    EXPECT_THROW(tally_confusion({0, 3}, {0, 0}, 3), ShapeError);
    auto cs = components();
    EXPECT_THROW(confusion(cs, {}), DataError);
}

TEST(Classifier, PredictionsFollowTheInvariantPathway) {
    auto cs = components();
    const auto& target = mixture().target;
    const auto eval = evaluate_classifier(cs, target, 7);
    const ForwardOptions opt = ForwardOptions::eval();
    const Matrix<float> logits =
        cs.classifier.forward(cs.di_head.forward(cs.generator.forward(stack_images(target), opt), opt), opt);
    int correct = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index arg;
        logits.row(i).maxCoeff(&arg);
        EXPECT_EQ(eval.predictions[static_cast<std::size_t>(i)], arg);
        correct += arg == target[static_cast<std::size_t>(i)].class_label;
    }
    EXPECT_DOUBLE_EQ(eval.accuracy, static_cast<double>(correct) / static_cast<double>(target.size()));
    EXPECT_TRUE(((eval.probabilities.rowwise().sum().array() - 1.0).abs() < 1e-6).all());
}

TEST(Classifier, BatchingDoesNotChangePredictions) {
    auto cs = components();
    const auto a = evaluate_classifier(cs, mixture().target, 256);
    const auto b = evaluate_classifier(cs, mixture().target, 9);
    EXPECT_EQ(a.predictions, b.predictions);
    EXPECT_LT((a.probabilities - b.probabilities).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Classifier, EvaluationLeavesComponentsBitUnchanged) {
    auto cs = components();
    const auto before = state(cs);
    evaluate_classifier(cs, mixture().target);
    confusion(cs, mixture().source);
    extract_features(cs, mixture().source, FeatureTap::generator);
    export_embeddings(cs, mixture().source, scratch("unchanged.csv"));
    EXPECT_EQ(state(cs), before);
}

TEST(Classifier, PerDomainAccuracyGroupsByHiddenId) {
    std::vector<LabeledExample> ex(4);
    ex[0] = {RowVector<float>(), 0, 1};
    ex[1] = {RowVector<float>(), 1, 1};
    ex[2] = {RowVector<float>(), 2, 2};
    ex[3] = {RowVector<float>(), 3, 2};
    const auto acc = accuracy_by_domain(ex, {0, 0, 2, 3});
    EXPECT_DOUBLE_EQ(acc.at(1), 0.5);
    EXPECT_DOUBLE_EQ(acc.at(2), 1.0);
    EXPECT_THROW(accuracy_by_domain(ex, {0}), ShapeError);
}

TEST(ADistance, IdenticalDistributionsGiveNearZero) {
    Rng a(1), b(2);
    const auto r = a_distance(random_matrix(400, 16, a), random_matrix(400, 16, b), 9, "raw");
    EXPECT_NEAR(r.epsilon, 0.5, 0.05);
    EXPECT_NEAR(r.d_a, 0.0, 0.2);
    EXPECT_EQ(r.tag, "raw");
}

TEST(ADistance, DisjointCloudsGiveTwo) {
    Rng a(1), b(2);
    const Matrix<double> s = random_matrix(200, 8, a).array() + 10.0;
    const Matrix<double> t = random_matrix(200, 8, b).array() - 10.0;
    const auto r = a_distance(s, t, 4);
    EXPECT_DOUBLE_EQ(r.epsilon, 0.0);
    EXPECT_DOUBLE_EQ(r.d_a, 2.0);
}

TEST(ADistance, RangeAndDefinitionHold) {
    Rng rng(8);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix<double> s = random_matrix(60, 5, rng);
        const Matrix<double> t = random_matrix(45, 5, rng).array() + 0.3 * trial;
        const auto r = a_distance(s, t, static_cast<std::uint64_t>(trial));
        EXPECT_GE(r.epsilon, 0.0);
        EXPECT_LE(r.epsilon, 1.0);
        EXPECT_DOUBLE_EQ(r.d_a, 2.0 * (1.0 - 2.0 * r.epsilon));
    }
}

TEST(ADistance, SwappingSidesAgreesUpToSplitNoise) {
    Rng rng(12);
    for (double shift : {0.0, 0.2, 0.5, 3.0}) {
        const Matrix<double> s = random_matrix(250, 10, rng);
        const Matrix<double> t = random_matrix(250, 10, rng).array() + shift;
        EXPECT_LT(std::abs(a_distance(s, t, 3).d_a - a_distance(t, s, 3).d_a), 0.2) << shift;
    }
}

TEST(ADistance, SeedIsDeterministic) {
    Rng rng(4);
    const Matrix<double> s = random_matrix(80, 6, rng), t = random_matrix(90, 6, rng).array() + 0.4;
    EXPECT_EQ(a_distance(s, t, 21).epsilon, a_distance(s, t, 21).epsilon);
}

TEST(ADistance, Preconditions) {
    Rng rng(4);
    EXPECT_THROW(a_distance(random_matrix(19, 3, rng), random_matrix(40, 3, rng), 0), DataError);
    EXPECT_THROW(a_distance(random_matrix(40, 3, rng), random_matrix(40, 4, rng), 0), ShapeError);
}

TEST(Embeddings, ShapeAndHeader) {
    auto cs = components(4);
    std::vector<LabeledExample> ten(mixture().target.begin(), mixture().target.begin() + 10);
    const fs::path p = scratch("ten.csv");
    export_embeddings(cs, ten, p);
    std::ifstream in(p);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "f0,f1,f2,f3,class,domain");
    int rows = 0;
    for (std::string line; std::getline(in, line); ++rows) {
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 5);
        const auto& e = ten[static_cast<std::size_t>(rows)];
        EXPECT_EQ(line.substr(line.rfind(',', line.rfind(',') - 1) + 1),
                  std::to_string(e.class_label) + "," + std::to_string(e.hidden_domain_id));
    }
    EXPECT_EQ(rows, 10);
}

TEST(Embeddings, ReexportIsByteIdentical) {
    auto cs = components();
    export_embeddings(cs, mixture().source, scratch("a.csv"));
    export_embeddings(cs, mixture().source, scratch("b.csv"));
    EXPECT_EQ(slurp(scratch("a.csv")), slurp(scratch("b.csv")));
}

TEST(Embeddings, UnwritablePathIsDataError) {
    auto cs = components();
    EXPECT_THROW(export_embeddings(cs, mixture().source, scratch("missing-dir") / "x" / "e.csv"), DataError);
}

TEST(Features, WidthsFollowTheTap) {
    auto cs = components(6);
    EXPECT_EQ(extract_features(cs, mixture().source, FeatureTap::generator).cols(), cs.arch.generator_width);
    EXPECT_EQ(extract_features(cs, mixture().source, FeatureTap::domain_invariant).cols(), 6);
    EXPECT_EQ(feature_tag(FeatureTap::generator), "f_G");
    EXPECT_EQ(feature_tag(FeatureTap::domain_invariant), "f_di");
}

}  // namespace
}  // namespace dada
