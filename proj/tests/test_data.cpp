#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "cxr/data.hpp"

using namespace cxr;

namespace {

InteractionRecord rec(std::string u, std::string i, int rating, std::vector<FeatureMention> f = {}) {
    return {std::move(u), std::move(i), rating, std::move(f)};
}

// n positives (rating 5) for one user against items i000.., plus filler users.
std::vector<InteractionRecord> user_with_positives(const std::string& user, int n) {
    std::vector<InteractionRecord> out;
    for (int k = 0; k < n; ++k) {
        std::string item = "i" + std::string(k < 10 ? "00" : "0") + std::to_string(k);
        out.push_back(rec(user, item, 5, {{"sound", 1, 0.5}}));
    }
    return out;
}

}  // namespace

TEST(ParseInteractions, FormatEcho) {
    auto r = parse_interaction_line("u1\ti9\t5\tsound:2:0.8,pedal:1:-0.5", 5);
    EXPECT_EQ(r.user, "u1");
    EXPECT_EQ(r.item, "i9");
    EXPECT_EQ(r.rating, 5);
    ASSERT_EQ(r.features.size(), 2u);
    EXPECT_EQ(r.features[0].word, "sound");
    EXPECT_EQ(r.features[0].frequency, 2);
    EXPECT_DOUBLE_EQ(r.features[0].sentiment, 0.8);
    EXPECT_EQ(r.features[1].word, "pedal");
    EXPECT_EQ(r.features[1].frequency, 1);
    EXPECT_DOUBLE_EQ(r.features[1].sentiment, -0.5);
}

TEST(ParseInteractions, EmptyFeatureField) {
    auto r = parse_interaction_line("u1\ti9\t3\t", 5);
    EXPECT_TRUE(r.features.empty());
}

TEST(ParseInteractions, RatingAboveScaleIsValidationError) {
    EXPECT_THROW(parse_interaction_line("u1\ti9\t6\tsound:1:0.1", 5), ValidationError);
    EXPECT_THROW(parse_interaction_line("u1\ti9\t0\t", 5), ValidationError);
}

TEST(ParseInteractions, MalformedLineReportsLineNumber) {
    std::istringstream in("u1\ti1\t5\tsound:1:0.5\n# comment\n\nu2\ti2\tfive\t\n");
    try {
        parse_interactions(in, 5);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 4u);
    }
}

TEST(ParseInteractions, RejectsBadEntries) {
    EXPECT_THROW(parse_interaction_line("u1\ti1\t5", 5), ParseError);
    EXPECT_THROW(parse_interaction_line("u1\ti1\t5\tsound:1", 5), ParseError);
    EXPECT_THROW(parse_interaction_line("u1\ti1\t5\tsound:x:0.1", 5), ParseError);
    EXPECT_THROW(parse_interaction_line("u1\ti1\t5\tsound:-1:0.1", 5), ValidationError);
    EXPECT_THROW(parse_interaction_line("u1\ti1\t5\tsound:1:1.5", 5), ValidationError);
    EXPECT_THROW(parse_interaction_line("\ti1\t5\t", 5), ParseError);
}

TEST(ParseInteractions, DuplicateWordsMerge) {
    auto r = parse_interaction_line("u1\ti1\t5\tsound:1:1.0,sound:3:-1.0", 5);
    ASSERT_EQ(r.features.size(), 1u);
    EXPECT_EQ(r.features[0].frequency, 4);
    EXPECT_DOUBLE_EQ(r.features[0].sentiment, -0.5);
}

TEST(ParseInteractions, WriteThenParseRoundTrips) {
    std::vector<InteractionRecord> recs = {rec("u1", "i1", 4, {{"pedal", 1, -0.125}, {"sound", 3, 0.3}}),
                                           rec("u2", "i1", 2, {})};
    std::ostringstream out;
    write_interactions(out, recs);
    std::istringstream in(out.str());
    auto back = parse_interactions(in, 5);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].features[0].sentiment, -0.125);
    EXPECT_EQ(back[0].features[1].sentiment, 0.3);
    EXPECT_TRUE(back[1].features.empty());
}

TEST(LabelFeedback, TopTwoLevelsArePositive) {
    EXPECT_EQ(label_feedback(5, 5), Feedback::Positive);
    EXPECT_EQ(label_feedback(4, 5), Feedback::Positive);
    EXPECT_EQ(label_feedback(3, 5), Feedback::Unlabeled);
    EXPECT_EQ(label_feedback(1, 5), Feedback::Unlabeled);
}

TEST(ItemSentiment, ArithmeticMean) {
    std::vector<InteractionRecord> recs = {rec("u1", "i1", 5, {{"sound", 1, 0.8}}),
                                           rec("u2", "i1", 5, {{"sound", 2, -0.2}}),
                                           rec("u3", "i2", 5, {{"sound", 1, 1.0}})};
    EXPECT_DOUBLE_EQ(compute_item_sentiment(recs, "i1", "sound"), 0.3);
    EXPECT_DOUBLE_EQ(compute_item_sentiment(recs, "i2", "sound"), 1.0);
    EXPECT_DOUBLE_EQ(compute_item_sentiment(recs, "i2", "pedal"), 0.0);
    auto table = ItemSentimentTable::build(recs);
    EXPECT_DOUBLE_EQ(table.mean("i1", "sound"), 0.3);
    EXPECT_DOUBLE_EQ(table.mean("i9", "sound"), 0.0);
}

TEST(DecomposeFeatures, PointValues) {
    EXPECT_DOUBLE_EQ(user_feature_value(0, 5), 1.0);
    EXPECT_DOUBLE_EQ(item_feature_value(0, -0.7, 5), 3.0);
    EXPECT_DOUBLE_EQ(item_feature_value(3, 0.0, 5), 3.0);  // unmentioned item: midpoint (T+1)/2
    EXPECT_NEAR(user_feature_value(1e6, 5), 5.0, 1e-12);
    // Reference values from a 30-digit evaluation.
    EXPECT_NEAR(item_feature_value(2, -1.0, 5), 1.47681168808847022, 1e-12);
    EXPECT_NEAR(user_feature_value(2, 5), 4.04637662382305955, 1e-12);
}

TEST(DecomposeFeatures, SharedSupportAndRange) {
    auto r = rec("u1", "i1", 5, {{"sound", 2, 0.8}, {"pedal", 1, -0.5}});
    std::vector<InteractionRecord> all = {r};
    auto vocab = FeatureVocabulary::from_records(all);
    auto f = decompose_features(r, ItemSentimentTable::build(all), vocab, 5);
    EXPECT_EQ(f.user.indices, (std::vector<std::size_t>{0, 1}));  // pedal, sound
    EXPECT_EQ(f.item.indices, f.user.indices);
    for (double v : f.user.values) EXPECT_TRUE(v >= 1.0 && v <= 5.0);
    for (double v : f.item.values) EXPECT_TRUE(v >= 1.0 && v <= 5.0);
    auto dense = f.user.to_dense(vocab.size());
    EXPECT_EQ(dense.size(), 2u);
}

TEST(DecomposeFeatures, RangeAndMonotonicityProperty) {
    Rng rng(11);
    for (int n = 0; n < 2000; ++n) {
        const int T = 2 + static_cast<int>(uniform_index(rng, 9));
        const double f1 = uniform(rng, 0, 30), f2 = f1 + uniform(rng, 1e-3, 5);
        const double s = uniform(rng, -1, 1);
        const double u1 = user_feature_value(f1, T), u2 = user_feature_value(f2, T);
        EXPECT_GE(u1, 1.0);
        EXPECT_LE(u2, T);
        EXPECT_LE(u1, u2);
        const double x1 = item_feature_value(f1, s, T);
        const double x2 = item_feature_value(f1, std::min(1.0, s + 0.1), T);
        EXPECT_GE(x1, 1.0);
        EXPECT_LE(x1, T);
        EXPECT_LE(x1, x2);
    }
}

TEST(Vocabulary, LexicographicBijection) {
    std::vector<InteractionRecord> recs = {rec("u1", "i1", 5, {{"zeta", 1, 0.1}, {"alpha", 1, 0.1}}),
                                           rec("u2", "i1", 5, {{"mid", 1, 0.1}, {"alpha", 2, 0.3}})};
    auto v = FeatureVocabulary::from_records(recs);
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(v.word(0), "alpha");
    EXPECT_EQ(v.word(2), "zeta");
    for (std::size_t k = 0; k < v.size(); ++k) EXPECT_EQ(v.index(v.word(k)), k);
    EXPECT_FALSE(v.find("missing").has_value());
    EXPECT_THROW(FeatureVocabulary({"b", "a"}), ValidationError);
}

TEST(Split, TenPositivesGiveEightTwo) {
    auto d = build_dataset(user_with_positives("u1", 10), 5, 3);
    EXPECT_EQ(d.split.train.size(), 8u);
    EXPECT_EQ(d.split.test.size(), 2u);
}

TEST(Split, SmallUsersKeepEverythingInTrain) {
    auto d = build_dataset(user_with_positives("u1", 3), 5, 3);
    EXPECT_EQ(d.split.train.size(), 3u);
    EXPECT_TRUE(d.split.test.empty());
    auto d5 = build_dataset(user_with_positives("u1", 5), 5, 3);
    EXPECT_TRUE(d5.split.test.empty());
}

TEST(Split, SameSeedSamePartition) {
    auto recs = user_with_positives("u1", 17);
    auto more = user_with_positives("u2", 9);
    recs.insert(recs.end(), more.begin(), more.end());
    auto a = build_dataset(recs, 5, 42), b = build_dataset(recs, 5, 42);
    EXPECT_EQ(a.split, b.split);
}

TEST(Split, PartitionInvariantOnSyntheticData) {
    auto corpus = synth_generate(SynthConfig{}, 5);
    auto d = build_dataset(corpus.records, 5, 5);
    for (std::size_t u = 0; u < d.num_users(); ++u) {
        EXPECT_EQ(d.train_by_user[u].size() + d.test_by_user[u].size(), d.positives[u].size());
        EXPECT_EQ(d.test_by_user[u].empty(), d.positives[u].size() <= 5);
        if (!d.test_by_user[u].empty()) {
            EXPECT_GE(d.train_by_user[u].size(), 1u);
        }
    }
    std::set<std::size_t> train(d.split.train.begin(), d.split.train.end());
    for (auto t : d.split.test) EXPECT_EQ(train.count(t), 0u);
}

TEST(Split, EmptyDatasetIsAnError) {
    EXPECT_THROW(build_dataset({}, 5, 1), ValidationError);
    EXPECT_THROW(build_dataset({rec("u1", "i1", 2)}, 5, 1), ValidationError);  // no positives
}

TEST(Dataset, ManifestSplitIsValidated) {
    auto recs = user_with_positives("u1", 10);
    auto d = build_dataset(recs, 5, 1);
    auto again = build_dataset(recs, 5, 99, d.split);
    EXPECT_EQ(again.split, d.split);
    Split bad = d.split;
    bad.test.push_back(bad.train.front());
    EXPECT_THROW(build_dataset(recs, 5, 1, bad), ValidationError);
}

TEST(Dataset, ItemSentimentIgnoresHeldOutReviews) {
    // Ten positives on distinct items plus one other user on every item.
    auto recs = user_with_positives("u1", 10);
    auto d = build_dataset(recs, 5, 1);
    for (auto t : d.split.test) {
        // Only u1 reviewed these items and that review is held out, so s = 0.
        const auto& f = d.interactions[t].features.item;
        ASSERT_EQ(f.values.size(), 1u);
        EXPECT_DOUBLE_EQ(f.values[0], 3.0);
    }
    for (auto t : d.split.train) EXPECT_GT(d.interactions[t].features.item.values[0], 3.0);
}

TEST(Candidates, PoolOfHundredWithOnePositive) {
    std::vector<InteractionRecord> recs;
    for (int k = 0; k < 10; ++k) recs.push_back(rec("u0", "i" + std::to_string(1000 + k), 5));
    for (int k = 0; k < 1000; ++k) recs.push_back(rec("u1", "i" + std::to_string(1000 + k), 1));
    auto d = build_dataset(recs, 5, 1);
    const auto u = d.user_index("u0");
    const auto pos = d.item_index("i1003");
    auto pool = sample_candidates(d, u, pos, 100, 7);
    EXPECT_EQ(pool.size(), 100u);
    EXPECT_TRUE(std::is_sorted(pool.begin(), pool.end()));
    EXPECT_EQ(std::adjacent_find(pool.begin(), pool.end()), pool.end());
    std::size_t interacted = 0;
    for (auto i : pool) interacted += d.has_interacted(u, i) ? 1 : 0;
    EXPECT_EQ(interacted, 1u);
    EXPECT_EQ(pool, sample_candidates(d, u, pos, 100, 7));
    EXPECT_NE(pool, sample_candidates(d, u, pos, 100, 8));
}

TEST(Candidates, SmallCatalogTakesEverything) {
    std::vector<InteractionRecord> recs;
    for (int k = 0; k < 51; ++k) recs.push_back(rec("u1", "i" + std::to_string(100 + k), 1));
    recs.push_back(rec("u0", "i100", 5));
    auto d = build_dataset(recs, 5, 1);
    auto pool = sample_candidates(d, d.user_index("u0"), d.item_index("i100"), 100, 1);
    EXPECT_EQ(pool.size(), 51u);  // 50 non-interacted + the positive
}

TEST(GroundTruth, NonzeroSentimentOfEitherSign) {
    std::vector<InteractionRecord> recs = {
        rec("u1", "i1", 5, {{"sound", 2, 0.8}, {"pedal", 1, -0.5}, {"case", 1, 0.0}}),
        rec("u1", "i2", 3, {{"case", 2, 0.0}}), rec("u2", "i1", 4, {}), rec("u2", "i2", 5, {{"knob", 1, 0.2}})};
    auto d = build_dataset(recs, 5, 1);
    auto g = ground_truth_features(d, d.user_index("u1"));
    std::vector<std::size_t> expect = {d.vocab.index("pedal"), d.vocab.index("sound")};
    EXPECT_EQ(g, expect);
    // u2 has one featureless review and one featured.
    EXPECT_EQ(ground_truth_features(d, d.user_index("u2")), std::vector<std::size_t>{d.vocab.index("knob")});
}

TEST(GroundTruth, UserWithoutFeaturesIsEmpty) {
    auto d = build_dataset({rec("u1", "i1", 5, {{"sound", 1, 0.4}}), rec("u2", "i1", 5)}, 5, 1);
    EXPECT_TRUE(ground_truth_features(d, d.user_index("u2")).empty());
}

TEST(Synth, SizeFollowsDensity) {
    SynthConfig c;
    c.users = 50;
    c.items = 100;
    c.features = 40;
    c.density = 0.05;
    auto corpus = synth_generate(c, 7);
    EXPECT_EQ(corpus.records.size(), 250u);
}

TEST(Synth, NoiselessPositivesOnlyMentionPlantedWords) {
    SynthConfig c;
    c.noise = 0.0;
    auto corpus = synth_generate(c, 3);
    for (const auto& r : corpus.records) {
        if (label_feedback(r.rating, c.max_rating) != Feedback::Positive) continue;
        const auto& planted = corpus.planted.at(r.user);
        for (const auto& f : r.features) {
            EXPECT_NE(std::find(planted.begin(), planted.end(), f.word), planted.end());
            EXPECT_GT(f.sentiment, 0.0);
        }
    }
}

TEST(Synth, Deterministic) {
    auto a = synth_generate(SynthConfig{}, 9), b = synth_generate(SynthConfig{}, 9);
    std::ostringstream sa, sb;
    write_interactions(sa, a.records);
    write_interactions(sb, b.records);
    EXPECT_EQ(sa.str(), sb.str());
    auto c = synth_generate(SynthConfig{}, 10);
    std::ostringstream sc;
    write_interactions(sc, c.records);
    EXPECT_NE(sa.str(), sc.str());
}

TEST(Synth, InfeasibleConfigIsRejected) {
    SynthConfig c;
    c.density = 1.5;
    EXPECT_THROW(synth_generate(c, 1), ConfigError);
    c = SynthConfig{};
    c.planted = 40;
    EXPECT_THROW(synth_generate(c, 1), ConfigError);
}
