#ifndef CXR_DATA_HPP
#define CXR_DATA_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cxr/common.hpp"

namespace cxr {

// ===========================================================================
// Raw records

struct FeatureMention {
    std::string word;
    long frequency = 0;
    double sentiment = 0.0;

    bool operator==(const FeatureMention&) const = default;
};

/// One observed (user, item, rating, review features) line.
struct InteractionRecord {
    std::string user;
    std::string item;
    int rating = 0;
    std::vector<FeatureMention> features;

    bool operator==(const InteractionRecord&) const = default;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

template <class T>
bool parse_number(std::string_view s, T& out) {
    if (s.empty()) return false;
    if constexpr (std::is_floating_point_v<T>) {
        // from_chars for double is available in libstdc++ 11.
        auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        return res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
    } else {
        auto res = std::from_chars(s.data(), s.data() + s.size(), out);
        return res.ec == std::errc{} && res.ptr == s.data() + s.size();
    }
}

}  // namespace detail

/// Merge repeated words inside one record: frequencies add, sentiment becomes
/// the frequency-weighted mean (plain mean when all frequencies are zero).
inline void merge_duplicate_words(InteractionRecord& rec) {
    std::vector<FeatureMention> merged;
    std::map<std::string, std::size_t> pos;
    std::vector<long> counts;
    std::vector<double> weights;
    for (auto& f : rec.features) {
        auto [it, inserted] = pos.emplace(f.word, merged.size());
        if (inserted) {
            merged.push_back(f);
            counts.push_back(1);
            weights.push_back(static_cast<double>(f.frequency) * f.sentiment);
            continue;
        }
        auto& m = merged[it->second];
        const std::size_t k = it->second;
        const long total = m.frequency + f.frequency;
        weights[k] += static_cast<double>(f.frequency) * f.sentiment;
        ++counts[k];
        if (total > 0) {
            m.sentiment = weights[k] / static_cast<double>(total);
        } else {
            m.sentiment = m.sentiment + (f.sentiment - m.sentiment) / static_cast<double>(counts[k]);
        }
        m.frequency = total;
    }
    rec.features = std::move(merged);
}

/// Parse one `user<TAB>item<TAB>rating<TAB>word:freq:sentiment,...` line.
inline InteractionRecord parse_interaction_line(std::string_view line, int max_rating,
                                                std::size_t line_no = 1) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto fields = detail::split(line, '\t');
    if (fields.size() != 4)
        throw ParseError(line_no, "expected 4 tab-separated fields, got " +
                                      std::to_string(fields.size()));
    InteractionRecord rec;
    if (fields[0].empty()) throw ParseError(line_no, "empty user id");
    if (fields[1].empty()) throw ParseError(line_no, "empty item id");
    rec.user = std::string(fields[0]);
    rec.item = std::string(fields[1]);
    if (!detail::parse_number(fields[2], rec.rating))
        throw ParseError(line_no, "rating is not an integer: '" + std::string(fields[2]) + "'");
    if (rec.rating < 1 || rec.rating > max_rating)
        throw ValidationError("line " + std::to_string(line_no) + ": rating " +
                              std::to_string(rec.rating) + " outside [1, " +
                              std::to_string(max_rating) + "]");
    if (!fields[3].empty()) {
        for (auto entry : detail::split(fields[3], ',')) {
            auto parts = detail::split(entry, ':');
            if (parts.size() != 3 || parts[0].empty())
                throw ParseError(line_no, "feature entry must be word:freq:sentiment, got '" +
                                              std::string(entry) + "'");
            FeatureMention f;
            f.word = std::string(parts[0]);
            if (!detail::parse_number(parts[1], f.frequency))
                throw ParseError(line_no, "bad frequency in '" + std::string(entry) + "'");
            if (!detail::parse_number(parts[2], f.sentiment))
                throw ParseError(line_no, "bad sentiment in '" + std::string(entry) + "'");
            if (f.frequency < 0)
                throw ValidationError("line " + std::to_string(line_no) +
                                      ": negative frequency for '" + f.word + "'");
            if (f.sentiment < -1.0 || f.sentiment > 1.0)
                throw ValidationError("line " + std::to_string(line_no) +
                                      ": sentiment outside [-1, 1] for '" + f.word + "'");
            rec.features.push_back(std::move(f));
        }
    }
    merge_duplicate_words(rec);
    return rec;
}

/// Blank lines and lines starting with '#' are skipped; line numbers in
/// errors are 1-based physical lines.
inline std::vector<InteractionRecord> parse_interactions(std::istream& in, int max_rating) {
    if (max_rating < 2) throw ConfigError("max rating T must be >= 2");
    std::vector<InteractionRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r" || line[0] == '#') continue;
        out.push_back(parse_interaction_line(line, max_rating, line_no));
    }
    return out;
}

inline std::vector<InteractionRecord> parse_interactions(const std::string& path, int max_rating) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open interaction file: " + path);
    return parse_interactions(in, max_rating);
}

inline void write_interactions(std::ostream& out, const std::vector<InteractionRecord>& records) {
    for (const auto& r : records) {
        out << r.user << '\t' << r.item << '\t' << r.rating << '\t';
        for (std::size_t k = 0; k < r.features.size(); ++k) {
            if (k) out << ',';
            const auto& f = r.features[k];
            out << f.word << ':' << f.frequency << ':' << format_double(f.sentiment);
        }
        out << '\n';
    }
}

// ===========================================================================
// Labels

enum class Feedback { Positive, Unlabeled };

/// Ratings in the top two levels (4 and 5 on a five-star scale) are positive.
inline Feedback label_feedback(int rating, int max_rating) {
    return rating >= max_rating - 1 ? Feedback::Positive : Feedback::Unlabeled;
}

// ===========================================================================
// Vocabulary and sparse vectors

class FeatureVocabulary {
public:
    FeatureVocabulary() = default;

    /// Builds a lexicographically ordered vocabulary from every word seen.
    static FeatureVocabulary from_records(const std::vector<InteractionRecord>& records) {
        std::set<std::string> words;
        for (const auto& r : records)
            for (const auto& f : r.features) words.insert(f.word);
        return FeatureVocabulary(std::vector<std::string>(words.begin(), words.end()));
    }

    explicit FeatureVocabulary(std::vector<std::string> words) : words_(std::move(words)) {
        if (!std::is_sorted(words_.begin(), words_.end()))
            throw ValidationError("vocabulary must be lexicographically sorted");
        for (std::size_t k = 0; k < words_.size(); ++k) {
            if (!index_.emplace(words_[k], k).second)
                throw ValidationError("duplicate vocabulary word: " + words_[k]);
        }
    }

    std::size_t size() const { return words_.size(); }
    const std::string& word(std::size_t k) const { return words_.at(k); }
    const std::vector<std::string>& words() const { return words_; }

    std::optional<std::size_t> find(const std::string& w) const {
        auto it = index_.find(w);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    std::size_t index(const std::string& w) const {
        auto k = find(w);
        if (!k) throw ValidationError("word not in vocabulary: " + w);
        return *k;
    }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Sparse vector over the vocabulary index space; indices strictly ascending.
struct SparseVector {
    std::vector<std::size_t> indices;
    std::vector<double> values;

    std::size_t nnz() const { return indices.size(); }
    bool empty() const { return indices.empty(); }

    std::vector<double> to_dense(std::size_t dim) const {
        std::vector<double> d(dim, 0.0);
        for (std::size_t k = 0; k < indices.size(); ++k) d.at(indices[k]) = values[k];
        return d;
    }

    bool operator==(const SparseVector&) const = default;
};

/// Per-interaction decomposition: user-side and item-side vectors share one
/// support (the words mentioned in the review).
struct DecomposedFeatures {
    SparseVector user;
    SparseVector item;

    const std::vector<std::size_t>& support() const { return user.indices; }
};

// ===========================================================================
// Feature decomposition

/// User-side value: 1 + (T-1)(2 sigmoid(freq) - 1). Frequency 0 maps to 1,
/// saturating towards T.
inline double user_feature_value(double frequency, int max_rating) {
    return 1.0 + (max_rating - 1) * (2.0 / (1.0 + std::exp(-frequency)) - 1.0);
}

/// Item-side value: 1 + (T-1) sigmoid(freq * avg_sentiment).
inline double item_feature_value(double frequency, double avg_sentiment, int max_rating) {
    return 1.0 + (max_rating - 1) / (1.0 + std::exp(-frequency * avg_sentiment));
}

/// Mean sentiment per (item, word) over the records it was built from.
class ItemSentimentTable {
public:
    void add(const std::string& item, const std::string& word, double sentiment) {
        auto& acc = table_[{item, word}];
        acc.first += sentiment;
        acc.second += 1;
    }

    /// 0 (neutral) when nobody mentioned the word for this item.
    double mean(const std::string& item, const std::string& word) const {
        auto it = table_.find({item, word});
        if (it == table_.end() || it->second.second == 0) return 0.0;
        return it->second.first / static_cast<double>(it->second.second);
    }

    static ItemSentimentTable build(const std::vector<InteractionRecord>& records) {
        ItemSentimentTable t;
        for (const auto& r : records)
            for (const auto& f : r.features) t.add(r.item, f.word, f.sentiment);
        return t;
    }

private:
    std::map<std::pair<std::string, std::string>, std::pair<double, long>> table_;
};

inline double compute_item_sentiment(const std::vector<InteractionRecord>& records,
                                     const std::string& item, const std::string& word) {
    double sum = 0;
    long n = 0;
    for (const auto& r : records) {
        if (r.item != item) continue;
        for (const auto& f : r.features) {
            if (f.word == word) {
                sum += f.sentiment;
                ++n;
            }
        }
    }
    return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

inline DecomposedFeatures decompose_features(const InteractionRecord& record,
                                             const ItemSentimentTable& sentiments,
                                             const FeatureVocabulary& vocab, int max_rating) {
    if (max_rating < 2) throw ConfigError("max rating T must be >= 2");
    std::vector<std::pair<std::size_t, const FeatureMention*>> entries;
    entries.reserve(record.features.size());
    for (const auto& f : record.features) {
        if (f.frequency < 0) throw ValidationError("negative frequency for '" + f.word + "'");
        entries.emplace_back(vocab.index(f.word), &f);
    }
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    DecomposedFeatures out;
    for (const auto& [k, f] : entries) {
        const double freq = static_cast<double>(f->frequency);
        out.user.indices.push_back(k);
        out.user.values.push_back(user_feature_value(freq, max_rating));
        out.item.indices.push_back(k);
        out.item.values.push_back(
            item_feature_value(freq, sentiments.mean(record.item, f->word), max_rating));
    }
    return out;
}

// ===========================================================================
// Dataset

struct Interaction {
    std::size_t user = 0;
    std::size_t item = 0;
    int rating = 0;
    bool positive = false;
    DecomposedFeatures features;
};

struct Split {
    std::vector<std::size_t> train;  // interaction indices of training positives
    std::vector<std::size_t> test;   // interaction indices of held-out positives

    bool operator==(const Split&) const = default;
};

/// Immutable once built. Entities are indexed in lexicographic id order so
/// index order and id order agree everywhere (tie-breaking, reports).
class Dataset {
public:
    int max_rating = 5;
    std::uint64_t seed = 0;
    std::vector<std::string> user_ids;
    std::vector<std::string> item_ids;
    FeatureVocabulary vocab;
    std::vector<InteractionRecord> records;  // merged, sorted by (user, item)
    std::vector<Interaction> interactions;   // parallel to records
    Split split;

    // Derived indexes.
    std::vector<std::vector<std::size_t>> interacted;      // user -> sorted item indices
    std::vector<std::vector<std::size_t>> positives;       // user -> interaction indices
    std::vector<std::vector<std::size_t>> train_by_user;   // user -> interaction indices
    std::vector<std::vector<std::size_t>> test_by_user;    // user -> interaction indices
    std::vector<std::vector<std::size_t>> train_positive_items;  // user -> sorted items
    std::vector<SparseVector> user_profile;  // mean user-side features over training positives
    std::vector<SparseVector> item_profile;  // mean item-side features over training positives

    std::size_t num_users() const { return user_ids.size(); }
    std::size_t num_items() const { return item_ids.size(); }
    std::size_t num_features() const { return vocab.size(); }

    std::size_t user_index(const std::string& id) const { return lookup(user_ids, id, "user"); }
    std::size_t item_index(const std::string& id) const { return lookup(item_ids, id, "item"); }

    bool has_interacted(std::size_t user, std::size_t item) const {
        const auto& v = interacted.at(user);
        return std::binary_search(v.begin(), v.end(), item);
    }

    bool is_train_positive(std::size_t user, std::size_t item) const {
        const auto& v = train_positive_items.at(user);
        return std::binary_search(v.begin(), v.end(), item);
    }

private:
    static std::size_t lookup(const std::vector<std::string>& ids, const std::string& id,
                              const char* what) {
        auto it = std::lower_bound(ids.begin(), ids.end(), id);
        if (it == ids.end() || *it != id)
            throw ValidationError(std::string("unknown ") + what + " id: " + id);
        return static_cast<std::size_t>(it - ids.begin());
    }
};

namespace detail {

/// Folds repeated (user, item) lines: word frequencies add, the highest
/// rating wins.
inline std::vector<InteractionRecord> merge_records(std::vector<InteractionRecord> records) {
    std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
        return std::tie(a.user, a.item) < std::tie(b.user, b.item);
    });
    std::vector<InteractionRecord> out;
    for (auto& r : records) {
        if (!out.empty() && out.back().user == r.user && out.back().item == r.item) {
            auto& m = out.back();
            m.rating = std::max(m.rating, r.rating);
            for (auto& f : r.features) m.features.push_back(std::move(f));
            merge_duplicate_words(m);
        } else {
            out.push_back(std::move(r));
        }
    }
    for (auto& r : out)
        std::sort(r.features.begin(), r.features.end(),
                  [](const auto& a, const auto& b) { return a.word < b.word; });
    return out;
}

inline SparseVector mean_profile(const std::vector<const SparseVector*>& parts) {
    std::map<std::size_t, std::pair<double, long>> acc;
    for (const auto* p : parts)
        for (std::size_t k = 0; k < p->indices.size(); ++k) {
            auto& a = acc[p->indices[k]];
            a.first += p->values[k];
            a.second += 1;
        }
    SparseVector out;
    for (const auto& [k, a] : acc) {
        out.indices.push_back(k);
        out.values.push_back(a.first / static_cast<double>(a.second));
    }
    return out;
}

}  // namespace detail

/// Per-user 4:1 split of positives. Users with five or fewer positives keep
/// everything in training.
inline Split split_train_test(const std::vector<std::vector<std::size_t>>& positives_by_user,
                              std::uint64_t seed) {
    bool any = false;
    for (const auto& p : positives_by_user) any = any || !p.empty();
    if (!any) throw ValidationError("cannot split: dataset has no positive interactions");
    Rng rng(derive_seed(seed, {0x5e11}));
    Split s;
    for (const auto& pos : positives_by_user) {
        if (pos.size() <= 5) {
            s.train.insert(s.train.end(), pos.begin(), pos.end());
            continue;
        }
        auto shuffled = pos;
        shuffle(shuffled, rng);
        const auto n_test = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(pos.size())));
        s.test.insert(s.test.end(), shuffled.begin(), shuffled.begin() + static_cast<long>(n_test));
        s.train.insert(s.train.end(), shuffled.begin() + static_cast<long>(n_test), shuffled.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

/// Assemble a dataset. When `split` is given (e.g. loaded from a manifest)
/// it is validated and used instead of drawing a fresh one.
inline Dataset build_dataset(std::vector<InteractionRecord> raw, int max_rating, std::uint64_t seed,
                             std::optional<Split> split = std::nullopt) {
    if (raw.empty()) throw ValidationError("dataset is empty");
    Dataset d;
    d.max_rating = max_rating;
    d.seed = seed;
    for (const auto& r : raw)
        if (r.rating < 1 || r.rating > max_rating)
            throw ValidationError("rating " + std::to_string(r.rating) + " outside [1, T]");
    d.records = detail::merge_records(std::move(raw));
    {
        std::set<std::string> users, items;
        for (const auto& r : d.records) {
            users.insert(r.user);
            items.insert(r.item);
        }
        d.user_ids.assign(users.begin(), users.end());
        d.item_ids.assign(items.begin(), items.end());
    }
    d.vocab = FeatureVocabulary::from_records(d.records);
    const std::size_t M = d.num_users();

    d.interactions.resize(d.records.size());
    d.interacted.assign(M, {});
    d.positives.assign(M, {});
    for (std::size_t t = 0; t < d.records.size(); ++t) {
        auto& x = d.interactions[t];
        x.user = d.user_index(d.records[t].user);
        x.item = d.item_index(d.records[t].item);
        x.rating = d.records[t].rating;
        x.positive = label_feedback(x.rating, max_rating) == Feedback::Positive;
        d.interacted[x.user].push_back(x.item);
        if (x.positive) d.positives[x.user].push_back(t);
    }

    if (split) {
        std::vector<char> seen(d.records.size(), 0);
        for (auto idx : split->train) {
            if (idx >= d.records.size() || !d.interactions[idx].positive || seen[idx])
                throw ValidationError("split manifest does not match the interaction file");
            seen[idx] = 1;
        }
        for (auto idx : split->test) {
            if (idx >= d.records.size() || !d.interactions[idx].positive || seen[idx])
                throw ValidationError("split manifest does not match the interaction file");
            seen[idx] = 1;
        }
        for (std::size_t t = 0; t < d.records.size(); ++t)
            if (d.interactions[t].positive && !seen[t])
                throw ValidationError("split manifest does not cover every positive");
        d.split = std::move(*split);
    } else {
        d.split = split_train_test(d.positives, seed);
    }

    // Item sentiments come from every record except held-out positives.
    std::vector<char> is_test(d.records.size(), 0);
    for (auto t : d.split.test) is_test[t] = 1;
    std::vector<InteractionRecord> visible;
    for (std::size_t t = 0; t < d.records.size(); ++t)
        if (!is_test[t]) visible.push_back(d.records[t]);
    const auto sentiments = ItemSentimentTable::build(visible);
    for (std::size_t t = 0; t < d.records.size(); ++t)
        d.interactions[t].features =
            decompose_features(d.records[t], sentiments, d.vocab, max_rating);

    d.train_by_user.assign(M, {});
    d.test_by_user.assign(M, {});
    d.train_positive_items.assign(M, {});
    for (auto t : d.split.train) {
        d.train_by_user[d.interactions[t].user].push_back(t);
        d.train_positive_items[d.interactions[t].user].push_back(d.interactions[t].item);
    }
    for (auto t : d.split.test) d.test_by_user[d.interactions[t].user].push_back(t);
    for (auto& v : d.train_positive_items) std::sort(v.begin(), v.end());

    std::vector<std::vector<const SparseVector*>> user_parts(M), item_parts(d.num_items());
    for (auto t : d.split.train) {
        const auto& x = d.interactions[t];
        user_parts[x.user].push_back(&x.features.user);
        item_parts[x.item].push_back(&x.features.item);
    }
    d.user_profile.resize(M);
    d.item_profile.resize(d.num_items());
    for (std::size_t u = 0; u < M; ++u) d.user_profile[u] = detail::mean_profile(user_parts[u]);
    for (std::size_t i = 0; i < d.num_items(); ++i)
        d.item_profile[i] = detail::mean_profile(item_parts[i]);
    return d;
}

// ===========================================================================
// Evaluation support

/// Candidate pool for one held-out positive: the positive plus up to n-1
/// items the user never interacted with. The pool is sorted by item index.
inline std::vector<std::size_t> sample_candidates(const Dataset& d, std::size_t user,
                                                  std::size_t positive_item, std::size_t n,
                                                  std::uint64_t seed) {
    std::vector<std::size_t> pool_src;
    for (std::size_t i = 0; i < d.num_items(); ++i)
        if (!d.has_interacted(user, i)) pool_src.push_back(i);
    const std::size_t want = n == 0 ? 0 : std::min(n - 1, pool_src.size());
    Rng rng(derive_seed(seed, {0xca4d, user, positive_item}));
    for (std::size_t k = 0; k < want; ++k) {
        std::size_t j = k + uniform_index(rng, pool_src.size() - k);
        std::swap(pool_src[k], pool_src[j]);
    }
    std::vector<std::size_t> pool(pool_src.begin(), pool_src.begin() + static_cast<long>(want));
    pool.push_back(positive_item);
    std::sort(pool.begin(), pool.end());
    return pool;
}

/// Features the user expressed a nonzero sentiment about, across all of
/// their raw records.
inline std::vector<std::size_t> ground_truth_features(const Dataset& d, std::size_t user) {
    std::set<std::size_t> g;
    const auto& uid = d.user_ids.at(user);
    auto lo = std::lower_bound(d.records.begin(), d.records.end(), uid,
                               [](const InteractionRecord& r, const std::string& u) { return r.user < u; });
    for (auto it = lo; it != d.records.end() && it->user == uid; ++it)
        for (const auto& f : it->features)
            if (f.sentiment != 0.0) g.insert(d.vocab.index(f.word));
    return {g.begin(), g.end()};
}

// ===========================================================================
// Synthetic planted-preference data

struct SynthConfig {
    std::size_t users = 200;
    std::size_t items = 400;
    std::size_t features = 60;
    double density = 0.04;
    std::size_t planted = 3;   // preferred words per user
    double noise = 0.2;        // chance a positive review mentions a random extra word
    int max_rating = 5;
    double liked_fraction = 0.7;  // share of a user's interactions drawn from liked items

    void validate() const {
        if (users == 0 || items == 0 || features == 0)
            throw ConfigError("synthetic users, items and features must be positive");
        if (!(density > 0.0) || density > 1.0) throw ConfigError("density must lie in (0, 1]");
        if (planted == 0 || 2 * planted > features)
            throw ConfigError("planted preference count must satisfy 0 < 2*planted <= features");
        if (noise < 0.0 || noise > 1.0) throw ConfigError("noise must lie in [0, 1]");
        if (liked_fraction < 0.0 || liked_fraction > 1.0)
            throw ConfigError("liked fraction must lie in [0, 1]");
        if (max_rating < 3) throw ConfigError("synthetic data needs T >= 3");
    }
};

struct SyntheticCorpus {
    SynthConfig config;
    std::uint64_t seed = 0;
    std::vector<InteractionRecord> records;
    std::map<std::string, std::vector<std::string>> planted;  // user id -> preferred words
};

namespace detail {
inline std::string padded(char prefix, std::size_t v, std::size_t width) {
    std::string s = std::to_string(v);
    if (s.size() < width) s.insert(0, width - s.size(), '0');
    return std::string(1, prefix) + s;
}
inline std::size_t digits(std::size_t n) { return std::to_string(n > 0 ? n - 1 : 0).size(); }
}  // namespace detail

/// Users and items belong to word groups. Each user prefers `planted` words
/// of its group, each item carries `planted` aspect words of its group, and
/// an item is liked when it shares at least one aspect with the user's
/// preferences. Liked items get ratings T-1 or T and reviews mentioning the
/// shared words with positive sentiment; others get low ratings and
/// negative mentions of the item's aspects.
inline SyntheticCorpus synth_generate(const SynthConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::size_t P = cfg.features;
    const std::size_t group_size = 2 * cfg.planted;
    const std::size_t groups = P / group_size;
    Rng rng(derive_seed(seed, {0x5e7}));

    const auto wd = detail::digits(P), ud = detail::digits(cfg.users), id = detail::digits(cfg.items);
    auto word_name = [&](std::size_t k) { return detail::padded('w', k, wd); };

    auto pick = [&](std::size_t group, std::size_t count) {
        std::vector<std::size_t> words(group_size);
        for (std::size_t k = 0; k < group_size; ++k) words[k] = group * group_size + k;
        for (std::size_t k = 0; k < count; ++k)
            std::swap(words[k], words[k + uniform_index(rng, group_size - k)]);
        words.resize(count);
        std::sort(words.begin(), words.end());
        return words;
    };

    std::vector<std::size_t> user_group(cfg.users), item_group(cfg.items);
    std::vector<std::vector<std::size_t>> prefs(cfg.users), aspects(cfg.items);
    for (std::size_t u = 0; u < cfg.users; ++u) {
        user_group[u] = uniform_index(rng, groups);
        prefs[u] = pick(user_group[u], cfg.planted);
    }
    for (std::size_t i = 0; i < cfg.items; ++i) {
        item_group[i] = uniform_index(rng, groups);
        aspects[i] = pick(item_group[i], cfg.planted);
    }
    auto overlap = [&](std::size_t u, std::size_t i) {
        std::vector<std::size_t> out;
        std::set_intersection(prefs[u].begin(), prefs[u].end(), aspects[i].begin(),
                              aspects[i].end(), std::back_inserter(out));
        return out;
    };

    const auto total = static_cast<std::size_t>(
        std::llround(static_cast<double>(cfg.users) * static_cast<double>(cfg.items) * cfg.density));
    SyntheticCorpus corpus;
    corpus.config = cfg;
    corpus.seed = seed;
    const int T = cfg.max_rating;
    auto sentiment_in = [&](double lo, double hi) {
        // Three decimals so the text file round-trips exactly.
        return static_cast<double>(std::llround(uniform(rng, lo, hi) * 1000.0)) / 1000.0;
    };

    for (std::size_t u = 0; u < cfg.users; ++u) {
        const std::size_t n_u = total / cfg.users + (u < total % cfg.users ? 1 : 0);
        std::vector<std::size_t> liked, other;
        for (std::size_t i = 0; i < cfg.items; ++i)
            (overlap(u, i).empty() ? other : liked).push_back(i);
        const auto want_liked = std::min(
            liked.size(), static_cast<std::size_t>(std::llround(cfg.liked_fraction * static_cast<double>(n_u))));
        const auto want_other = std::min(other.size(), n_u - want_liked);
        std::vector<std::size_t> chosen;
        for (auto* bucket : {&liked, &other}) {
            const std::size_t want = bucket == &liked ? want_liked : want_other;
            for (std::size_t k = 0; k < want; ++k) {
                std::swap((*bucket)[k], (*bucket)[k + uniform_index(rng, bucket->size() - k)]);
                chosen.push_back((*bucket)[k]);
            }
        }
        std::sort(chosen.begin(), chosen.end());
        for (auto i : chosen) {
            InteractionRecord rec;
            rec.user = detail::padded('u', u, ud);
            rec.item = detail::padded('i', i, id);
            auto shared = overlap(u, i);
            if (!shared.empty()) {
                rec.rating = T - 1 + static_cast<int>(uniform_index(rng, 2));
                for (auto k : shared)
                    rec.features.push_back({word_name(k), 1 + static_cast<long>(uniform_index(rng, 3)),
                                            sentiment_in(0.3, 1.0)});
                if (uniform01(rng) < cfg.noise) {
                    std::size_t k;
                    do {
                        k = uniform_index(rng, P);
                    } while (std::binary_search(prefs[u].begin(), prefs[u].end(), k) ||
                             std::binary_search(shared.begin(), shared.end(), k));
                    double s = sentiment_in(-1.0, 1.0);
                    if (s == 0.0) s = 0.5;
                    rec.features.push_back({word_name(k), 1 + static_cast<long>(uniform_index(rng, 2)), s});
                }
            } else {
                rec.rating = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(T - 2)));
                const std::size_t n_words = 1 + uniform_index(rng, 2);
                for (std::size_t w = 0; w < n_words && w < aspects[i].size(); ++w) {
                    const auto k = aspects[i][w];
                    rec.features.push_back({word_name(k), 1 + static_cast<long>(uniform_index(rng, 2)),
                                            sentiment_in(-1.0, -0.3)});
                }
            }
            std::sort(rec.features.begin(), rec.features.end(),
                      [](const auto& a, const auto& b) { return a.word < b.word; });
            corpus.records.push_back(std::move(rec));
        }
        auto& planted_words = corpus.planted[detail::padded('u', u, ud)];
        for (auto k : prefs[u]) planted_words.push_back(word_name(k));
    }
    return corpus;
}

}  // namespace cxr

#endif  // CXR_DATA_HPP
