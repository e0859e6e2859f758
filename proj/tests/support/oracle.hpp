#ifndef CXR_TESTS_ORACLE_HPP
#define CXR_TESTS_ORACLE_HPP

// Brute-force reference implementations for the ranking and explanation
// metrics. They work from raw scores (rank = number of candidates placed
// ahead) rather than from sorted lists, so they share no code path with the
// library beyond the final arithmetic.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

namespace cxr::testing {

struct OracleList {
    std::size_t user = 0;
    std::map<std::size_t, double> scores;  // item -> score
    std::set<std::size_t> relevant;
};

struct OracleMetrics {
    double precision = 0, recall = 0, f1 = 0, hit = 0, ndcg = 0, mrr = 0;
};

/// Position of `item` in the ranking: candidates with a higher score, or an
/// equal score and a smaller id, come first.
inline std::size_t oracle_rank(const OracleList& l, std::size_t item) {
    const double s = l.scores.at(item);
    std::size_t ahead = 0;
    for (const auto& [j, sj] : l.scores)
        if (sj > s || (sj == s && j < item)) ++ahead;
    return ahead;
}

inline OracleMetrics oracle_list(const OracleList& l, std::size_t k) {
    std::vector<std::size_t> ranks;
    for (auto i : l.relevant) ranks.push_back(oracle_rank(l, i));
    std::sort(ranks.begin(), ranks.end());
    std::size_t hits = 0;
    double dcg = 0;
    for (auto r : ranks) {
        if (r >= k || r >= l.scores.size()) continue;
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
    double idcg = 0;
    for (std::size_t r = 0; r < std::min(k, l.relevant.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    OracleMetrics m;
    m.precision = static_cast<double>(hits) / static_cast<double>(k);
    m.recall = l.relevant.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(l.relevant.size());
    m.f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.hit = hits > 0 ? 1.0 : 0.0;
    m.ndcg = idcg > 0 ? dcg / idcg : 0.0;
    m.mrr = (!ranks.empty() && ranks.front() == 0) ? 1.0 : 0.0;
    return m;
}

/// Lists grouped by user (ascending), averaged within a user, then across users.
inline OracleMetrics oracle_metrics(const std::vector<OracleList>& lists, std::size_t k) {
    std::map<std::size_t, std::vector<OracleMetrics>> per_user;
    for (const auto& l : lists) per_user[l.user].push_back(oracle_list(l, k));
    OracleMetrics total;
    for (const auto& [u, ms] : per_user) {
        OracleMetrics s;
        for (const auto& m : ms) {
            s.precision += m.precision;
            s.recall += m.recall;
            s.f1 += m.f1;
            s.hit += m.hit;
            s.ndcg += m.ndcg;
            s.mrr += m.mrr;
        }
        const double n = static_cast<double>(ms.size());
        total.precision += s.precision / n;
        total.recall += s.recall / n;
        total.f1 += s.f1 / n;
        total.hit += s.hit / n;
        total.ndcg += s.ndcg / n;
        total.mrr += s.mrr / n;
    }
    const double users = static_cast<double>(per_user.size());
    total.precision /= users;
    total.recall /= users;
    total.f1 /= users;
    total.hit /= users;
    total.ndcg /= users;
    total.mrr /= users;
    return total;
}

struct OracleExplanation {
    double precision = 0, recall = 0, f1 = 0, ndcg = 0;
};

/// Top-k by repeated arg-max over the nonzero entries (first index wins a
/// tie), then the set overlap with g.
inline OracleExplanation oracle_explanation(const std::vector<double>& phi, const std::set<std::size_t>& g,
                                            std::size_t k) {
    std::vector<bool> taken(phi.size(), false);
    std::vector<std::size_t> top;
    while (top.size() < k) {
        std::size_t best = phi.size();
        for (std::size_t q = 0; q < phi.size(); ++q) {
            if (taken[q] || phi[q] == 0.0) continue;
            if (best == phi.size() || phi[q] > phi[best]) best = q;
        }
        if (best == phi.size()) break;
        taken[best] = true;
        top.push_back(best);
    }
    OracleExplanation o;
    std::size_t hits = 0;
    double dcg = 0;
    for (std::size_t r = 0; r < top.size(); ++r) {
        if (!g.count(top[r])) continue;
        ++hits;
        dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    }
    double idcg = 0;
    for (std::size_t r = 0; r < std::min(k, g.size()); ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
    o.precision = static_cast<double>(hits) / static_cast<double>(top.size());
    o.recall = static_cast<double>(hits) / static_cast<double>(g.size());
    o.f1 = o.precision + o.recall > 0 ? 2 * o.precision * o.recall / (o.precision + o.recall) : 0.0;
    o.ndcg = dcg / idcg;
    return o;
}

}  // namespace cxr::testing

#endif  // CXR_TESTS_ORACLE_HPP
