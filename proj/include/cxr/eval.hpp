#ifndef CXR_EVAL_HPP
#define CXR_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cxr/common.hpp"
#include "cxr/data.hpp"
#include "cxr/explain.hpp"
#include "cxr/models.hpp"
#include "json.hpp"

namespace cxr {

struct RankedList {
    std::size_t user = 0;
    std::vector<std::size_t> items;  // best first
    std::vector<bool> relevant;      // parallel to items
};

/// Scores the pool and sorts descending; equal scores keep item-id order.
inline RankedList rank_candidates(const std::function<double(std::size_t)>& score, std::size_t user,
                                  std::vector<std::size_t> pool, const std::set<std::size_t>& relevant) {
    std::sort(pool.begin(), pool.end());
    if (std::adjacent_find(pool.begin(), pool.end()) != pool.end())
        throw ValidationError("candidate pool contains duplicates");
    std::vector<std::pair<double, std::size_t>> scored;
    scored.reserve(pool.size());
    for (auto i : pool) scored.emplace_back(score(i), i);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    RankedList out;
    out.user = user;
    for (const auto& [s, i] : scored) {
        out.items.push_back(i);
        out.relevant.push_back(relevant.count(i) != 0);
    }
    return out;
}

struct EvalReport {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double hit_rate = 0;
    double ndcg = 0;
    double mrr = 0;
    std::size_t k = 10;
    std::size_t mrr_cutoff = 1;
    std::size_t users_evaluated = 0;
    std::size_t users_skipped = 0;
    std::size_t lists = 0;
    std::size_t min_pool = 0;
    std::size_t max_pool = 0;
};

inline bool operator==(const EvalReport& a, const EvalReport& b) {
    auto same = [](double x, double y) { return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y); };
    return same(a.precision, b.precision) && same(a.recall, b.recall) && same(a.f1, b.f1) &&
           same(a.hit_rate, b.hit_rate) && same(a.ndcg, b.ndcg) && same(a.mrr, b.mrr) && a.k == b.k &&
           a.users_evaluated == b.users_evaluated && a.lists == b.lists;
}

namespace detail {

inline double discount(std::size_t rank0) { return 1.0 / std::log2(static_cast<double>(rank0) + 2.0); }

struct ListMetrics {
    double precision, recall, f1, hit, ndcg, mrr;
};

inline ListMetrics list_metrics(const RankedList& l, std::size_t k) {
    const std::size_t n_rel = static_cast<std::size_t>(std::count(l.relevant.begin(), l.relevant.end(), true));
    const std::size_t cut = std::min(k, l.items.size());
    std::size_t hits = 0;
    double dcg = 0;
    for (std::size_t r = 0; r < cut; ++r) {
        if (!l.relevant[r]) continue;
        ++hits;
        dcg += discount(r);
    }
    double idcg = 0;
    for (std::size_t r = 0; r < std::min(k, n_rel); ++r) idcg += discount(r);
    ListMetrics m{};
    m.precision = static_cast<double>(hits) / static_cast<double>(k);
    m.recall = n_rel ? static_cast<double>(hits) / static_cast<double>(n_rel) : 0.0;
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.hit = hits > 0 ? 1.0 : 0.0;
    m.ndcg = idcg > 0 ? dcg / idcg : 0.0;
    m.mrr = !l.relevant.empty() && l.relevant[0] ? 1.0 : 0.0;
    return m;
}

}  // namespace detail

/// Precision/Recall/F1/HitRate/NDCG at k and MRR@1. Lists are averaged per
/// user first (users in index order), then across users.
inline EvalReport ranking_metrics(const std::vector<RankedList>& lists, std::size_t k = 10) {
    if (lists.empty()) throw ValidationError("ranking_metrics: no ranked lists");
    if (k == 0) throw std::invalid_argument("ranking_metrics: k must be positive");
    std::map<std::size_t, std::vector<const RankedList*>> by_user;
    for (const auto& l : lists) by_user[l.user].push_back(&l);
    EvalReport rep;
    rep.k = k;
    rep.lists = lists.size();
    rep.min_pool = lists.front().items.size();
    for (const auto& l : lists) {
        rep.min_pool = std::min(rep.min_pool, l.items.size());
        rep.max_pool = std::max(rep.max_pool, l.items.size());
    }
    for (const auto& [u, ls] : by_user) {
        detail::ListMetrics acc{0, 0, 0, 0, 0, 0};
        for (const auto* l : ls) {
            auto m = detail::list_metrics(*l, k);
            acc.precision += m.precision;
            acc.recall += m.recall;
            acc.f1 += m.f1;
            acc.hit += m.hit;
            acc.ndcg += m.ndcg;
            acc.mrr += m.mrr;
        }
        const double n = static_cast<double>(ls.size());
        rep.precision += acc.precision / n;
        rep.recall += acc.recall / n;
        rep.f1 += acc.f1 / n;
        rep.hit_rate += acc.hit / n;
        rep.ndcg += acc.ndcg / n;
        rep.mrr += acc.mrr / n;
    }
    const double U = static_cast<double>(by_user.size());
    rep.precision /= U;
    rep.recall /= U;
    rep.f1 /= U;
    rep.hit_rate /= U;
    rep.ndcg /= U;
    rep.mrr /= U;
    rep.users_evaluated = by_user.size();
    return rep;
}

// ===========================================================================
// Explanation metrics

struct ExplanationMetrics {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double ndcg = 0;
    std::size_t hits = 0;
    std::size_t listed = 0;  // |top-k|, may be < k when φ has few nonzeros
};

/// Top-k of φ against the ground-truth set g. nullopt when g is empty or φ
/// has no nonzero entry (the user is skipped).
inline std::optional<ExplanationMetrics> explanation_metrics(std::span<const double> phi,
                                                             const std::vector<std::size_t>& g, std::size_t k) {
    if (g.empty()) return std::nullopt;
    auto top = top_k_indices(phi, k);
    if (top.empty()) return std::nullopt;
    std::set<std::size_t> truth(g.begin(), g.end());
    ExplanationMetrics m;
    m.listed = top.size();
    double dcg = 0;
    for (std::size_t r = 0; r < top.size(); ++r) {
        if (!truth.count(top[r])) continue;
        ++m.hits;
        dcg += detail::discount(r);
    }
    double idcg = 0;
    for (std::size_t r = 0; r < std::min(k, truth.size()); ++r) idcg += detail::discount(r);
    m.precision = static_cast<double>(m.hits) / static_cast<double>(top.size());
    m.recall = static_cast<double>(m.hits) / static_cast<double>(truth.size());
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.ndcg = dcg / idcg;
    return m;
}

struct ExplanationReport {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double ndcg = 0;
    std::size_t k = 5;
    std::size_t users_evaluated = 0;
    std::size_t users_skipped = 0;
};

inline ExplanationReport explanation_report(const std::map<std::size_t, std::vector<double>>& phi,
                                            const std::map<std::size_t, std::vector<std::size_t>>& truth,
                                            std::size_t k) {
    ExplanationReport rep;
    rep.k = k;
    for (const auto& [u, g] : truth) {
        auto it = phi.find(u);
        std::optional<ExplanationMetrics> m;
        if (it != phi.end()) m = explanation_metrics(it->second, g, k);
        if (!m) {
            ++rep.users_skipped;
            continue;
        }
        rep.precision += m->precision;
        rep.recall += m->recall;
        rep.f1 += m->f1;
        rep.ndcg += m->ndcg;
        ++rep.users_evaluated;
    }
    if (rep.users_evaluated) {
        const double n = static_cast<double>(rep.users_evaluated);
        rep.precision /= n;
        rep.recall /= n;
        rep.f1 /= n;
        rep.ndcg /= n;
    }
    return rep;
}

// ===========================================================================
// Sampled ranking protocol

struct EvalSettings {
    std::size_t pool_size = 100;
    std::size_t k = 10;
    std::uint64_t seed = 0;
};

/// One ranked list per (user, held-out positive). `score(user, item)` is any
/// scorer; the model-backed one uses user/item profile features.
inline std::vector<RankedList> build_ranked_lists(const Dataset& d,
                                                  const std::function<double(std::size_t, std::size_t)>& score,
                                                  const EvalSettings& s) {
    std::vector<RankedList> lists;
    for (std::size_t u = 0; u < d.num_users(); ++u) {
        for (auto t : d.test_by_user[u]) {
            const auto item = d.interactions[t].item;
            auto pool = sample_candidates(d, u, item, s.pool_size, s.seed);
            lists.push_back(rank_candidates([&](std::size_t i) { return score(u, i); }, u, pool, {item}));
        }
    }
    return lists;
}

inline std::function<double(std::size_t, std::size_t)> model_scorer(const Model& m, const Dataset& d) {
    return [&m, &d](std::size_t u, std::size_t i) {
        auto pf = profile_features(d, u, i);
        return m.score(u, i, pf.user, pf.item);
    };
}

/// Scores from a seeded stream keyed by (user, item); a reference point for
/// the trained models.
inline std::function<double(std::size_t, std::size_t)> random_scorer(std::uint64_t seed) {
    return [seed](std::size_t u, std::size_t i) {
        Rng rng(derive_seed(seed, {0x7a4d, u, i}));
        return uniform01(rng);
    };
}

inline EvalReport evaluate_ranking(const Dataset& d, const std::function<double(std::size_t, std::size_t)>& score,
                                   const EvalSettings& s) {
    auto lists = build_ranked_lists(d, score, s);
    if (lists.empty()) throw ValidationError("no user has a held-out positive to rank (too few interactions per user)");
    auto rep = ranking_metrics(lists, s.k);
    std::size_t with_pos = 0;
    for (std::size_t u = 0; u < d.num_users(); ++u) with_pos += d.positives[u].empty() ? 0 : 1;
    rep.users_skipped = with_pos - rep.users_evaluated;
    return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1},
            {"hit_rate", r.hit_rate},   {"ndcg", r.ndcg},     {"mrr", r.mrr},
            {"k", r.k},                 {"mrr_cutoff", r.mrr_cutoff},
            {"users_evaluated", r.users_evaluated},
            {"users_skipped", r.users_skipped},
            {"lists", r.lists},
            {"min_pool", r.min_pool},
            {"max_pool", r.max_pool}};
}

}  // namespace cxr

#endif  // CXR_EVAL_HPP
