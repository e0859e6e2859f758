#ifndef CXR_EXPLAIN_HPP
#define CXR_EXPLAIN_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cxr/common.hpp"
#include "cxr/data.hpp"
#include "cxr/models.hpp"
#include "cxr/training.hpp"

namespace cxr {

enum class ExplanationSource { GT, NAR, CAR, CNR };

inline constexpr std::array<ExplanationSource, 4> kAllSources = {ExplanationSource::GT, ExplanationSource::NAR,
                                                                 ExplanationSource::CAR, ExplanationSource::CNR};

inline std::string to_string(ExplanationSource s) {
    switch (s) {
        case ExplanationSource::GT: return "GT";
        case ExplanationSource::NAR: return "NAR";
        case ExplanationSource::CAR: return "CAR";
        case ExplanationSource::CNR: return "CNR";
    }
    return "?";
}

inline ExplanationSource parse_source(const std::string& s) {
    if (s == "GT") return ExplanationSource::GT;
    if (s == "NAR") return ExplanationSource::NAR;
    if (s == "CAR") return ExplanationSource::CAR;
    if (s == "CNR") return ExplanationSource::CNR;
    throw ValidationError("unknown explanation source: " + s);
}

inline ExplanationSource source_for(ModelKind k) {
    switch (k) {
        case ModelKind::Nar: return ExplanationSource::NAR;
        case ModelKind::Car: return ExplanationSource::CAR;
        case ModelKind::Cnr: return ExplanationSource::CNR;
        case ModelKind::Baseline: break;
    }
    throw ConfigError("the ID-only baseline produces no explanations");
}

struct ExplanationVector {
    std::size_t user = 0;
    ExplanationSource source = ExplanationSource::GT;
    std::vector<double> values;  // one weight per vocabulary entry
    bool empty_input = false;    // no interactions / records to explain from
};

/// Mean attention weight per feature over the user's training positives
/// whose review mentions it.
inline ExplanationVector explanation_nar(const Model& m, const Dataset& d, std::size_t user) {
    if (m.kind() != ModelKind::Nar) throw ConfigError("explanation_nar needs a NAR model");
    ExplanationVector out{user, ExplanationSource::NAR, std::vector<double>(d.num_features(), 0.0), true};
    std::vector<double> sum(d.num_features(), 0.0);
    std::vector<long> count(d.num_features(), 0);
    for (auto t : d.train_by_user.at(user)) {
        const auto& support = d.interactions[t].features.support();
        if (support.empty()) continue;
        auto alpha = m.attention_weights(user, support);
        for (std::size_t k = 0; k < support.size(); ++k) {
            sum[support[k]] += alpha[k];
            ++count[support[k]];
        }
        out.empty_input = false;
    }
    for (std::size_t k = 0; k < sum.size(); ++k)
        if (count[k]) out.values[k] = sum[k] / static_cast<double>(count[k]);
    return out;
}

/// Mean |δ_k| over the user's perturbation records of one kind.
inline ExplanationVector explanation_perturb(std::size_t user, const std::vector<PerturbationRecord>& records,
                                             PerturbationKind kind, std::size_t num_features) {
    ExplanationVector out{user,
                          kind == PerturbationKind::Adversarial ? ExplanationSource::CAR : ExplanationSource::CNR,
                          std::vector<double>(num_features, 0.0), true};
    long n = 0;
    for (const auto& r : records) {
        if (r.triple.user != user || r.kind != kind) continue;
        if (r.delta.size() != num_features) throw ShapeError("perturbation record has the wrong dimension");
        for (std::size_t k = 0; k < num_features; ++k) out.values[k] += std::abs(r.delta[k]);
        ++n;
    }
    if (n) {
        out.empty_input = false;
        for (auto& v : out.values) v /= static_cast<double>(n);
    }
    return out;
}

/// 0/1 indicator of a ground-truth feature set.
inline ExplanationVector explanation_ground_truth(std::size_t user, const std::vector<std::size_t>& g,
                                                  std::size_t num_features) {
    ExplanationVector out{user, ExplanationSource::GT, std::vector<double>(num_features, 0.0), g.empty()};
    for (auto k : g) out.values.at(k) = 1.0;
    return out;
}

/// Indices of the k largest nonzero entries, descending; ties go to the
/// smaller index (the vocabulary is lexicographic, so this is word order).
inline std::vector<std::size_t> top_k_indices(std::span<const double> phi, std::size_t k) {
    if (k == 0) throw std::invalid_argument("top-k needs k >= 1");
    std::vector<std::size_t> idx;
    for (std::size_t q = 0; q < phi.size(); ++q)
        if (phi[q] != 0.0) idx.push_back(q);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return phi[a] > phi[b]; });
    if (idx.size() > k) idx.resize(k);
    return idx;
}

inline std::vector<std::string> top_k_words(std::span<const double> phi, const FeatureVocabulary& vocab,
                                            std::size_t k) {
    if (phi.size() != vocab.size()) throw ShapeError("explanation vector does not match vocabulary");
    std::vector<std::string> out;
    for (auto q : top_k_indices(phi, k)) out.push_back(vocab.word(q));
    return out;
}

/// Pearson correlation; nullopt when either vector is constant.
inline std::optional<double> pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: length mismatch");
    // Checked on the raw values: a rounded mean can leave a constant vector
    // with a tiny nonzero variance.
    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    };
    if (constant(a) || constant(b)) return std::nullopt;
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        ma += a[k];
        mb += b[k];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double da = a[k] - ma, db = b[k] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) return std::nullopt;
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

struct CorrelationMatrix {
    std::vector<ExplanationSource> sources;
    std::vector<std::vector<double>> mean;          // NaN when no user qualified
    std::vector<std::vector<std::size_t>> used;     // users contributing per pair
    std::vector<std::vector<std::size_t>> excluded; // constant-vector users per pair
    std::size_t users = 0;                          // size of the user intersection
};

/// Per-user Pearson correlation for every pair of sources, averaged over
/// the users present in all sources. The diagonal is exactly 1.
inline CorrelationMatrix pearson_matrix(
    const std::map<ExplanationSource, std::map<std::size_t, std::vector<double>>>& by_source) {
    CorrelationMatrix cm;
    for (const auto& [s, unused] : by_source) cm.sources.push_back(s);
    if (cm.sources.empty()) throw ValidationError("pearson_matrix: no sources");
    std::vector<std::size_t> users;
    for (const auto& [u, unused] : by_source.begin()->second) {
        bool everywhere = true;
        for (const auto& [s, vecs] : by_source) everywhere = everywhere && vecs.count(u);
        if (everywhere) users.push_back(u);
    }
    if (users.empty()) throw ValidationError("pearson_matrix: no user is present in every source");
    const std::size_t S = cm.sources.size();
    cm.users = users.size();
    cm.mean.assign(S, std::vector<double>(S, 0.0));
    cm.used.assign(S, std::vector<std::size_t>(S, 0));
    cm.excluded.assign(S, std::vector<std::size_t>(S, 0));
    for (std::size_t a = 0; a < S; ++a) {
        cm.mean[a][a] = 1.0;
        cm.used[a][a] = users.size();
        for (std::size_t b = a + 1; b < S; ++b) {
            const auto& va = by_source.at(cm.sources[a]);
            const auto& vb = by_source.at(cm.sources[b]);
            double sum = 0;
            std::size_t n = 0, skip = 0;
            for (auto u : users) {
                auto r = pearson(va.at(u), vb.at(u));
                if (!r) {
                    ++skip;
                    continue;
                }
                sum += *r;
                ++n;
            }
            const double m = n ? sum / static_cast<double>(n) : std::nan("");
            cm.mean[a][b] = cm.mean[b][a] = m;
            cm.used[a][b] = cm.used[b][a] = n;
            cm.excluded[a][b] = cm.excluded[b][a] = skip;
        }
    }
    return cm;
}

}  // namespace cxr

#endif  // CXR_EXPLAIN_HPP
