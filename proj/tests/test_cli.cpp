#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dada/cli.hpp"
#include "dada/metrics.hpp"

namespace dada {
namespace {

namespace fs = std::filesystem;

const char* tiny_ini =
    "[data]\nsource_count = 60\ntarget_count = 30\ntarget_domains = 2\n\n"
    "[arch]\nfeature_width = 6\n\n"
    "[train]\nepochs = 2\nbatch_size = 10\nlevel = IV\n\n"
    "[ablate]\nseeds = 3\n";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root = fs::temp_directory_path() / "dada_test_cli" / info->name();
        fs::remove_all(root);
        fs::create_directories(root);
        config = root / "tiny.ini";
        std::ofstream(config) << tiny_ini;
        unsetenv("DADA_SEED");
    }
    void TearDown() override { unsetenv("DADA_SEED"); }

    int dada(std::vector<std::string> args) {
        args.insert(args.begin(), "dada");
        std::vector<const char*> argv;
        for (const auto& a : args) argv.push_back(a.c_str());
        out.str("");
        err.str("");
        return cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    }

    int train(const fs::path& dir, std::vector<std::string> extra = {}) {
        std::vector<std::string> args{"train", "--config", config.string(), "--out", dir.string()};
        args.insert(args.end(), extra.begin(), extra.end());
        return dada(args);
    }

    fs::path root, config;
    std::ostringstream out, err;
};

TEST_F(Cli, MissingConfigIsConfigErrorAndCreatesNothing) {
    const fs::path dir = root / "run";
    EXPECT_EQ(dada({"train", "--config", (root / "absent.ini").string(), "--out", dir.string()}), cli::config_error);
    EXPECT_FALSE(fs::exists(dir));
    EXPECT_FALSE(fs::exists(root / ".run.partial"));
    const std::string message = err.str();
    EXPECT_NE(message.find("absent.ini"), std::string::npos);
    EXPECT_EQ(std::count(message.begin(), message.end(), '\n'), 1);
}

TEST_F(Cli, MalformedInvocationsAreConfigErrors) {
    EXPECT_EQ(dada({"train", "--config", config.string(), "--out", (root / "a").string(), "--bogus"}),
              cli::config_error);
    EXPECT_EQ(dada({"frobnicate"}), cli::config_error);
    EXPECT_EQ(train(root / "a", {"--set", "train.unknown=1"}), cli::config_error);
    EXPECT_EQ(train(root / "a", {"--set", "train.epochs=zero"}), cli::config_error);
    EXPECT_FALSE(fs::exists(root / "a"));
    EXPECT_EQ(dada({"--help"}), cli::ok);
}

TEST_F(Cli, MissingDataFileIsDataError) {
    EXPECT_EQ(train(root / "run", {"--data", (root / "none.dada").string()}), cli::data_error);
    EXPECT_FALSE(fs::exists(root / "run"));
}

TEST_F(Cli, DivergenceHasItsOwnExitCode) {
    EXPECT_EQ(train(root / "run", {"--set", "optimizer.learning_rate=1e30"}), cli::divergence);
    EXPECT_FALSE(cli::is_complete(root / "run"));
}

TEST_F(Cli, TrainingTwiceGivesIdenticalMetrics) {
    ASSERT_EQ(train(root / "a"), cli::ok) << err.str();
    ASSERT_EQ(train(root / "b"), cli::ok) << err.str();
    for (const char* f : {cli::metrics_file, cli::config_file, cli::checkpoint_file})
        EXPECT_EQ(slurp(root / "a" / f), slurp(root / "b" / f)) << f;
    const auto records = read_metrics(root / "a" / cli::metrics_file);
    EXPECT_EQ(step_reports(records).size(), 12u);
    EXPECT_TRUE(cli::is_complete(root / "a"));
}

TEST_F(Cli, CompletedRunNeedsForce) {
    ASSERT_EQ(train(root / "run"), cli::ok);
    const std::string before = slurp(root / "run" / cli::metrics_file);
    EXPECT_EQ(train(root / "run", {"--set", "train.seed=3"}), cli::failure);
    EXPECT_NE(err.str().find("--force"), std::string::npos);
    EXPECT_EQ(slurp(root / "run" / cli::metrics_file), before);
    EXPECT_EQ(train(root / "run", {"--set", "train.seed=3", "--force"}), cli::ok);
    EXPECT_NE(slurp(root / "run" / cli::metrics_file), before);
}

TEST_F(Cli, EchoedConfigReproducesTheRun) {
    ASSERT_EQ(train(root / "a", {"--set", "train.seed=4", "--set", "weights.ring=0.5"}), cli::ok);
    const RunConfig echoed = load_run_config(root / "a" / cli::config_file, {});
    EXPECT_EQ(echoed.experiment.seed, 4u);
    EXPECT_DOUBLE_EQ(echoed.experiment.weights.ring, 0.5);
    EXPECT_EQ(dada({"train", "--config", (root / "a" / cli::config_file).string(), "--out", (root / "b").string()}),
              cli::ok);
    EXPECT_EQ(slurp(root / "a" / cli::metrics_file), slurp(root / "b" / cli::metrics_file));
}

TEST_F(Cli, SeedEnvironmentSitsBelowExplicitOverrides) {
    setenv("DADA_SEED", "6", 1);
    ASSERT_EQ(train(root / "env", {"--set", "train.epochs=1"}), cli::ok);
    EXPECT_EQ(load_run_config(root / "env" / cli::config_file, {}).experiment.seed, 6u);
    ASSERT_EQ(train(root / "set", {"--set", "train.epochs=1", "--set", "train.seed=2"}), cli::ok);
    EXPECT_EQ(load_run_config(root / "set" / cli::config_file, {}).experiment.seed, 2u);
}

TEST_F(Cli, InterruptedRunResumesToTheSameResult) {
    ASSERT_EQ(train(root / "full"), cli::ok);

    const RunConfig c = load_run_config(config, {});
    const DomainMixture data = cli::load_or_generate(c, std::nullopt);
    const fs::path staging = root / ".partial.partial";
    fs::create_directories(staging);
    std::ofstream(staging / cli::config_file) << to_ini(c);
    {
        Trainer<float> t(c.experiment, data);
        MetricsLog log(staging / cli::metrics_file, false);
        for (int i = 0; i < 6; ++i) log.write(t.step());
        t.save_checkpoint(staging / cli::checkpoint_file);
        log.write(t.step());  // written after the checkpoint, so it must be discarded
    }
    std::ostringstream quiet;
    cli::train_run(c, data, root / "partial", false, quiet);
    EXPECT_NE(quiet.str().find("resuming"), std::string::npos);
    const auto full = step_reports(read_metrics(root / "full" / cli::metrics_file));
    const auto resumed = step_reports(read_metrics(root / "partial" / cli::metrics_file));
    EXPECT_EQ(resumed, full);
    EXPECT_EQ(slurp(root / "full" / cli::checkpoint_file), slurp(root / "partial" / cli::checkpoint_file));
    EXPECT_FALSE(fs::exists(staging));
}

TEST_F(Cli, EvaluateRecordsAccuracyConfusionAndDistances) {
    ASSERT_EQ(train(root / "run"), cli::ok);
    EXPECT_EQ(dada({"evaluate", "--out", (root / "run").string()}), cli::ok) << err.str();
    const auto record = nlohmann::json::parse(slurp(root / "run" / cli::evaluation_file));
    EXPECT_EQ(record.at("level"), "IV");
    EXPECT_EQ(record.at("domains").size(), 2u);
    EXPECT_TRUE(record.at("a_distance").contains("f_G"));
    EXPECT_TRUE(record.at("a_distance").contains("f_di"));
    const std::string metrics = slurp(root / "run" / cli::metrics_file);
    int confusion = 0, distances = 0;
    long total = 0;
    for (const auto& r : read_metrics(root / "run" / cli::metrics_file)) {
        if (r.at("record") == "confusion") {
            ++confusion;
            for (const auto& row : r.at("counts"))
                for (const auto& v : row) total += v.get<long>();
        }
        distances += r.at("record") == "a_distance";
    }
    EXPECT_EQ(confusion, 1);
    EXPECT_EQ(distances, 2);
    EXPECT_EQ(total, 60);
    EXPECT_TRUE(fs::exists(root / "run" / cli::embeddings_file));

    EXPECT_EQ(dada({"evaluate", "--out", (root / "run").string()}), cli::ok);
    EXPECT_EQ(slurp(root / "run" / cli::metrics_file), metrics);
    EXPECT_EQ(dada({"evaluate", "--out", (root / "nothing").string()}), cli::data_error);
    EXPECT_EQ(dada({"evaluate", "--out", (root / "run").string(), "--set", "train.seed=1"}), cli::config_error);
}

TEST_F(Cli, PlotsRegenerateFromMetricsAlone) {
    ASSERT_EQ(train(root / "run"), cli::ok);
    ASSERT_EQ(dada({"evaluate", "--out", (root / "run").string()}), cli::ok);
    ASSERT_EQ(dada({"plot", "--out", (root / "run").string()}), cli::ok) << err.str();
    const std::string curves = slurp(root / "run" / cli::curves_plot);
    EXPECT_EQ(curves.rfind("<svg", 0), 0u);
    EXPECT_NE(curves.find("polyline"), std::string::npos);
    EXPECT_NE(slurp(root / "run" / cli::confusion_plot).find("<rect"), std::string::npos);

    fs::create_directories(root / "copy");
    fs::copy_file(root / "run" / cli::metrics_file, root / "copy" / cli::metrics_file);
    ASSERT_EQ(dada({"plot", "--out", (root / "copy").string()}), cli::ok);
    EXPECT_EQ(slurp(root / "copy" / cli::curves_plot), curves);
    EXPECT_EQ(slurp(root / "copy" / cli::confusion_plot), slurp(root / "run" / cli::confusion_plot));
    EXPECT_EQ(dada({"plot", "--out", (root / "empty").string()}), cli::data_error);
}

TEST_F(Cli, GenerateWritesALoadableDataset) {
    ASSERT_EQ(dada({"generate", "--config", config.string(), "--out", (root / "gen").string()}), cli::ok);
    const DomainMixture m = load_mixture(root / "gen" / cli::dataset_file);
    const DomainMixture expected = synth_generate(load_run_config(config, {}).data.synth());
    EXPECT_EQ(mixture_checksum(m), mixture_checksum(expected));
    ASSERT_EQ(train(root / "run", {"--data", (root / "gen" / cli::dataset_file).string(), "--set", "train.epochs=1"}),
              cli::ok);
}

TEST_F(Cli, AblateProducesOneRowPerLevelOverSeeds) {
    ASSERT_EQ(dada({"ablate", "--config", config.string(), "--out", (root / "abl").string(), "--set",
                    "train.epochs=1"}),
              cli::ok)
        << err.str();
    std::ifstream in(root / "abl" / "summary.csv");
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "level,textured,swapped,average");
    std::vector<std::string> levels;
    for (std::string line; std::getline(in, line);) {
        levels.push_back(line.substr(0, line.find(',')));
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 3);
        EXPECT_NE(line.find("±"), std::string::npos) << line;
    }
    EXPECT_EQ(levels, (std::vector<std::string>{"source_only", "I", "II", "III", "IV"}));
    EXPECT_TRUE(fs::exists(root / "abl" / "IV" / "seed-2" / cli::evaluation_file));

    EXPECT_EQ(dada({"ablate", "--config", config.string(), "--out", (root / "abl").string(), "--set",
                    "train.epochs=1"}),
              cli::failure);
}

TEST(Summary, CellFormatting) {
    EXPECT_EQ(cli::format_cell({0.62}), "62.0");
    EXPECT_EQ(cli::format_cell({0.60, 0.64}), "62.0±2.0");
    EXPECT_EQ(cli::format_cell({0.5, 0.5, 0.5}), "50.0±0.0");
    EXPECT_EQ(cli::format_cell({}), "-");
}

void fake_run(const fs::path& dir, const std::string& level, std::vector<std::pair<std::string, double>> domains) {
    fs::create_directories(dir);
    nlohmann::json d = nlohmann::json::array();
    for (const auto& [name, acc] : domains) d.push_back({{"name", name}, {"accuracy", acc}});
    std::ofstream(dir / cli::evaluation_file) << nlohmann::json{{"level", level}, {"domains", d}}.dump();
}

TEST(Summary, TableFromEvaluationRecords) {
    const fs::path root = fs::temp_directory_path() / "dada_test_cli" / "summary";
    fs::remove_all(root);
    fake_run(root / "a", "IV", {{"x", 0.60}, {"y", 0.80}});
    fake_run(root / "b", "IV", {{"x", 0.64}, {"y", 0.80}});
    fake_run(root / "c", "source_only", {{"x", 0.62}, {"y", 0.40}});
    const auto t = cli::summarize({root / "a", root / "b", root / "c"});
    EXPECT_EQ(t.columns, (std::vector<std::string>{"x", "y", "average"}));
    EXPECT_EQ(t.rows, (std::vector<std::string>{"source_only", "IV"}));
    EXPECT_EQ(t.cells[0], (std::vector<std::string>{"62.0", "40.0", "51.0"}));
    EXPECT_EQ(t.cells[1], (std::vector<std::string>{"62.0±2.0", "80.0±0.0", "71.0±1.0"}));
    EXPECT_EQ(t.to_csv(), "level,x,y,average\nsource_only,62.0,40.0,51.0\nIV,62.0±2.0,80.0±0.0,71.0±1.0\n");

    EXPECT_THROW(cli::summarize({}), ConfigError);
    fs::create_directories(root / "empty");
    EXPECT_THROW(cli::summarize({root / "a", root / "empty"}), DataError);
    fake_run(root / "other", "IV", {{"z", 0.5}});
    EXPECT_THROW(cli::summarize({root / "a", root / "other"}), DataError);
}

}  // namespace
}  // namespace dada
