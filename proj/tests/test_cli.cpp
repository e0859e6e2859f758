#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "cxr/cli.hpp"

namespace fs = std::filesystem;
using cxr::read_file;

namespace {

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        root_ = fs::temp_directory_path() / (std::string("cxr-cli-") + info->name());
        fs::remove_all(root_);
        fs::create_directories(root_);
    }
    void TearDown() override { fs::remove_all(root_); }

    std::string path(const std::string& rel) const { return (root_ / rel).string(); }

    int run(std::vector<std::string> args) {
        log_.str("");
        return cxr::cli::run(args, log_);
    }

    // 50 users, 100 items, 40 features, about 15 interactions per user.
    void make_data(const std::string& dir = "data") {
        ASSERT_EQ(run({"synth", "--users", "50", "--items", "100", "--features", "40", "--density", "0.15",
                       "--seed", "7", "--out",
                       path(dir)}),
                  0)
            << log_.str();
    }

    int train(const std::string& model, const std::string& out, std::vector<std::string> extra = {"--outer", "2"}) {
        std::vector<std::string> args{"train",  "--data",        path("data"), "--model", model, "--seed", "3",
                                      "--out",  path(out),       "--id-dim",   "8",       "--feature-dim", "8",
                                      "--hidden", "8,4",         "--epochs",   "2",       "--lr",    "0.01",
                                      "--batch-size", "32",      "--cf-triples-per-user", "1"};
        args.insert(args.end(), extra.begin(), extra.end());
        return run(args);
    }

    fs::path root_;
    std::ostringstream log_;
};

std::vector<std::string> data_lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        if (!line.empty() && line[0] != '#') out.push_back(line);
    return out;
}

}  // namespace

TEST_F(CliTest, SynthWritesDatasetAndIsReproducible) {
    make_data("a");
    make_data("b");
    EXPECT_TRUE(fs::exists(path("a/interactions.tsv")));
    auto manifest = nlohmann::json::parse(read_file(path("a/manifest.json")));
    EXPECT_EQ(manifest.at("seed"), 7);
    EXPECT_EQ(manifest.at("planted").size(), 50u);
    EXPECT_EQ(read_file(path("a/interactions.tsv")), read_file(path("b/interactions.tsv")));
    EXPECT_EQ(read_file(path("a/manifest.json")), read_file(path("b/manifest.json")));
    auto head = read_file(path("a/interactions.tsv")).substr(0, 40);
    EXPECT_EQ(head.rfind("# cxr interactions format_version=1", 0), 0u) << head;
}

TEST_F(CliTest, ConfigErrorsExitWithCodeTwo) {
    EXPECT_EQ(run({"synth", "--density", "1.5", "--seed", "1", "--out", path("x")}), 2);
    EXPECT_EQ(run({"synth", "--out", path("x")}), 2);
    EXPECT_NE(log_.str().find("--seed"), std::string::npos);
    EXPECT_FALSE(fs::exists(path("x/interactions.tsv")));
}

TEST_F(CliTest, ConfigFileMergesAndFlagsWin) {
    cxr::write_file(path("cfg.json"), R"({"seed": 7, "synth": {"users": 30, "items": 90, "features": 25}})");
    ASSERT_EQ(run({"--config", path("cfg.json"), "synth", "--users", "20", "--out", path("c")}), 0) << log_.str();
    auto manifest = nlohmann::json::parse(read_file(path("c/manifest.json")));
    EXPECT_EQ(manifest.at("seed"), 7);
    EXPECT_EQ(manifest.at("planted").size(), 20u);
    EXPECT_EQ(manifest.at("config").at("synth").at("features"), 25);
    cxr::write_file(path("bad.json"), R"({"seed": 7, "wibble": 3})");
    EXPECT_EQ(run({"--config", path("bad.json"), "synth", "--out", path("d")}), 2);
}

TEST_F(CliTest, PrepareReadsAnInteractionFile) {
    make_data();
    ASSERT_EQ(run({"prepare", "--input", path("data/interactions.tsv"), "--seed", "7", "--out", path("prep")}), 0)
        << log_.str();
    auto a = nlohmann::json::parse(read_file(path("data/manifest.json")));
    auto b = nlohmann::json::parse(read_file(path("prep/manifest.json")));
    EXPECT_EQ(a.at("split"), b.at("split"));
    EXPECT_EQ(a.at("vocabulary"), b.at("vocabulary"));
    EXPECT_EQ(run({"prepare", "--input", path("missing.tsv"), "--seed", "7", "--out", path("p2")}) == 0, false);
}

TEST_F(CliTest, TrainWritesDumpOnlyForPerturbationModels) {
    make_data();
    ASSERT_EQ(train("baseline", "base"), 0) << log_.str();
    EXPECT_TRUE(fs::exists(path("base/model.ckpt")));
    EXPECT_TRUE(fs::exists(path("base/run_log.jsonl")));
    EXPECT_FALSE(fs::exists(path("base/perturbations.tsv")));
    ASSERT_EQ(train("car", "car"), 0) << log_.str();
    auto dump = data_lines(read_file(path("car/perturbations.tsv")));
    ASSERT_GT(dump.size(), 1u);
    EXPECT_EQ(std::count(dump[1].begin(), dump[1].end(), '\t'), 7);
    // Retraining a non-perturbation model into the same directory must not
    // leave a stale dump behind.
    ASSERT_EQ(train("nar", "car"), 0) << log_.str();
    EXPECT_FALSE(fs::exists(path("car/perturbations.tsv")));
}

TEST_F(CliTest, CounterfactualLogHasOneEntryPerRound) {
    make_data();
    ASSERT_EQ(train("cnr", "cnr", {"--outer", "3"}), 0) << log_.str();
    int rounds = 0;
    for (const auto& line : data_lines(read_file(path("cnr/run_log.jsonl")))) {
        auto j = nlohmann::json::parse(line);
        EXPECT_FALSE(j.contains("wall_seconds"));
        if (j.at("phase") == "counterfactual") ++rounds;
    }
    EXPECT_EQ(rounds, 3);
    EXPECT_TRUE(fs::exists(path("cnr/perturbations.tsv")));
}

TEST_F(CliTest, EvaluateIsByteReproducible) {
    make_data();
    ASSERT_EQ(train("nar", "nar"), 0) << log_.str();
    for (const char* out : {"e1", "e2"})
        ASSERT_EQ(run({"evaluate", "--data", path("data"), "--checkpoint", path("nar"), "--model", "nar", "--seed", "5",
                       "--out", path(out)}),
                  0)
            << log_.str();
    EXPECT_EQ(read_file(path("e1/eval.json")), read_file(path("e2/eval.json")));
    EXPECT_EQ(read_file(path("e1/eval.csv")), read_file(path("e2/eval.csv")));
    auto csv = data_lines(read_file(path("e1/eval.csv")));
    ASSERT_EQ(csv.size(), 2u);
    EXPECT_EQ(csv[0], "Model,Precision,Recall,F1,Hit Rate,NDCG,MRR");
    EXPECT_NE(run({"evaluate", "--data", path("data"), "--checkpoint", path("nar"), "--model", "car", "--seed", "5",
                   "--out", path("e3")}),
              0);
    EXPECT_NE(log_.str().find("nar"), std::string::npos);
}

TEST_F(CliTest, ExplainAndReport) {
    make_data();
    ASSERT_EQ(train("nar", "nar"), 0) << log_.str();
    ASSERT_EQ(train("car", "car"), 0) << log_.str();
    ASSERT_EQ(train("cnr", "cnr"), 0) << log_.str();
    ASSERT_EQ(run({"explain", "--data", path("data"), "--run", path("nar"), "--run", path("car"), "--run",
                   path("cnr"), "--seed", "1", "--out", path("x")}),
              0)
        << log_.str();
    auto corr = data_lines(read_file(path("x/correlation.csv")));
    ASSERT_EQ(corr.size(), 5u);
    EXPECT_EQ(corr[0], "source,GT,NAR,CAR,CNR");
    for (std::size_t r = 1; r < 5; ++r) {
        std::vector<std::string> cells;
        std::istringstream row(corr[r]);
        for (std::string c; std::getline(row, c, ',');) cells.push_back(c);
        ASSERT_EQ(cells.size(), 5u);
        EXPECT_EQ(std::stod(cells[r]), 1.0) << corr[r];
    }
    auto rep = data_lines(read_file(path("x/explanation_report.csv")));
    ASSERT_EQ(rep.size(), 4u);
    EXPECT_EQ(rep[0], "Source,F1,NDCG");
    EXPECT_EQ(rep[1].rfind("NAR,", 0), 0u);
    EXPECT_TRUE(fs::exists(path("x/top_words.tsv")));
    EXPECT_TRUE(fs::exists(path("x/correlation_counts.csv")));

    ASSERT_EQ(run({"explain", "--data", path("data"), "--run", path("nar"), "--truth", "planted", "--seed", "1",
                   "--out", path("xp")}),
              0)
        << log_.str();

    fs::remove(path("car/perturbations.tsv"));
    EXPECT_EQ(run({"explain", "--data", path("data"), "--run", path("car"), "--seed", "1", "--out", path("y")}), 1);
    EXPECT_NE(log_.str().find("cxr train"), std::string::npos) << log_.str();
    EXPECT_EQ(run({"explain", "--data", path("data"), "--run", path("nar"), "--run", path("nar"), "--seed", "1",
                   "--out", path("y")}),
              2);

    ASSERT_EQ(run({"evaluate", "--data", path("data"), "--checkpoint", path("nar"), "--seed", "5", "--out",
                   path("en")}),
              0);
    ASSERT_EQ(run({"evaluate", "--data", path("data"), "--random", "--name", "Random", "--seed", "5", "--out",
                   path("er")}),
              0);
    ASSERT_EQ(run({"report", "--input", path("en/eval.json"), "--input", path("er/eval.json"), "--out", path("r")}), 0)
        << log_.str();
    auto table = data_lines(read_file(path("r/report.csv")));
    ASSERT_EQ(table.size(), 3u);
    EXPECT_EQ(table[2].rfind("Random,", 0), 0u);
}
