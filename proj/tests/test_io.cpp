#include <gtest/gtest.h>

#include <filesystem>
#include <limits>
#include <sstream>

#include "cxr/io.hpp"

namespace fs = std::filesystem;
using namespace cxr;

namespace {

const Dataset& small_data() {
    static const Dataset d = [] {
        SynthConfig c;
        c.users = 30;
        c.items = 60;
        c.features = 12;
        c.planted = 2;
        c.density = 0.2;
        return build_dataset(synth_generate(c, 21).records, c.max_rating, 21);
    }();
    return d;
}

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               (std::string("cxr-io-") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

}  // namespace

TEST(SparseFormat, RoundTripIsExact) {
    std::vector<double> v{0.0, 0.1, 0.0, -1.0 / 3.0, 1e-300, std::numeric_limits<double>::max()};
    auto s = format_sparse(v);
    EXPECT_EQ(s.rfind("1:0.1,3:", 0), 0u) << s;
    EXPECT_EQ(parse_sparse(s, v.size(), 1), v);
    EXPECT_EQ(parse_sparse("", 3, 1), std::vector<double>(3, 0.0));
    EXPECT_THROW(parse_sparse("7:1", 3, 1), ParseError);
    EXPECT_THROW(parse_sparse("1=2", 3, 1), ParseError);
}

TEST(CommentHeader, ConfigLineReadsBack) {
    std::stringstream s;
    nlohmann::json cfg = {{"seed", 4}, {"model", "car"}};
    write_comment_header(s, "thing", cfg);
    s << "payload\n";
    EXPECT_EQ(s.str().rfind("# cxr thing format_version=1\n# config ", 0), 0u);
    EXPECT_EQ(read_comment_config(s), cfg);
    std::istringstream none("payload\n");
    EXPECT_TRUE(read_comment_config(none).is_null());
}

TEST(Perturbations, DumpRoundTripKeepsTriplesAndDeltas) {
    const auto& d = small_data();
    Rng rng(3);
    auto triples = sample_bpr_triples(d, 1, rng);
    std::vector<PerturbationRecord> recs;
    for (std::size_t n = 0; n < 40; ++n) {
        PerturbationRecord r;
        r.triple = triples[n];
        r.kind = n % 2 ? PerturbationKind::Counterfactual : PerturbationKind::Adversarial;
        r.delta.assign(d.num_features(), 0.0);
        for (auto k : triple_features(d, r.triple).support) r.delta[k] = uniform(rng, -1, 1);
        r.l2 = l2_norm(r.delta);
        r.l1 = l1_norm(r.delta);
        r.flipped = n % 3 == 0;
        recs.push_back(r);
    }
    std::stringstream s;
    write_perturbations(s, d, recs, nlohmann::json::object());
    auto back = read_perturbations(s, d);
    ASSERT_EQ(back.size(), recs.size());
    for (std::size_t n = 0; n < recs.size(); ++n) {
        EXPECT_EQ(back[n].triple, recs[n].triple) << n;
        EXPECT_EQ(back[n].delta, recs[n].delta) << n;
        EXPECT_EQ(back[n].kind, recs[n].kind);
        EXPECT_EQ(back[n].flipped, recs[n].flipped);
        EXPECT_EQ(back[n].l2, recs[n].l2);
    }
}

TEST(Perturbations, RejectsMalformedLines) {
    const auto& d = small_data();
    std::istringstream short_line("u\ti\n");
    EXPECT_THROW(read_perturbations(short_line, d), ParseError);
    const auto& x = d.interactions[d.split.train[0]];
    const std::string head = d.user_ids[x.user] + "\t" + d.item_ids[x.item] + "\t" + d.item_ids[x.item];
    std::istringstream bad_flag(head + "\tadversarial\tmaybe\t0\t0\t\n");
    EXPECT_THROW(read_perturbations(bad_flag, d), ParseError);
    std::istringstream ok(head + "\tadversarial\tfalse\t0\t0\t\n");
    EXPECT_EQ(read_perturbations(ok, d).size(), 1u);
}

TEST_F(TempDir, PreparedDirectoryRoundTrip) {
    const auto& d = small_data();
    write_prepared(dir_, d, nlohmann::json{{"seed", 21}});
    auto p = load_prepared(dir_);
    EXPECT_EQ(p.dataset.split, d.split);
    EXPECT_EQ(p.dataset.vocab.words(), d.vocab.words());
    EXPECT_EQ(p.dataset.records, d.records);
    EXPECT_EQ(p.manifest.config.at("seed"), 21);
    // Editing the interaction file invalidates the manifest.
    auto text = read_file(dir_ / "interactions.tsv");
    write_file(dir_ / "interactions.tsv", text + "\n");
    EXPECT_THROW(load_prepared(dir_), ValidationError);
}

TEST_F(TempDir, WriteFileReplacesContent) {
    write_file(dir_ / "a.txt", "one");
    write_file(dir_ / "a.txt", "two");
    EXPECT_EQ(read_file(dir_ / "a.txt"), "two");
    EXPECT_THROW(read_file(dir_ / "missing.txt"), Error);
}

TEST(Reports, EvalJsonRoundTrip) {
    EvalReport r;
    r.precision = 0.1;
    r.recall = 1.0 / 3.0;
    r.f1 = 0.25;
    r.hit_rate = 0.5;
    r.ndcg = 0.123456789012345;
    r.mrr = 0.05;
    r.users_evaluated = 7;
    r.lists = 9;
    r.min_pool = 100;
    r.max_pool = 100;
    auto back = eval_report_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_TRUE(back == r);
    std::ostringstream csv;
    write_eval_csv(csv, {{"NAR", r}}, nlohmann::json::object());
    EXPECT_NE(csv.str().find("Model,Precision,Recall,F1,Hit Rate,NDCG,MRR\nNAR,0.1,"), std::string::npos);
}

TEST(Reports, RunLogOmitsWallTime) {
    EpochLog e;
    e.phase = "bpr";
    e.epoch = 1;
    e.clean_loss = 0.5;
    e.seconds = 12.0;
    std::ostringstream out;
    write_run_log(out, {e}, nlohmann::json::object());
    EXPECT_EQ(out.str().find("wall"), std::string::npos);
    EXPECT_NE(out.str().find("\"clean_loss\":0.5"), std::string::npos);
}
