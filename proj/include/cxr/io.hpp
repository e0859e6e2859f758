#ifndef CXR_IO_HPP
#define CXR_IO_HPP

// Text artifacts written by the command-line driver. Every file opens with
// two comment lines: the artifact kind with the format version, and the
// run configuration as one line of JSON.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cxr/common.hpp"
#include "cxr/data.hpp"
#include "cxr/eval.hpp"
#include "cxr/explain.hpp"
#include "cxr/training.hpp"
#include "json.hpp"

namespace cxr {

inline void write_comment_header(std::ostream& out, const std::string& kind, const nlohmann::json& config) {
    out << "# cxr " << kind << " format_version=" << kFormatVersion << '\n';
    out << "# config " << config.dump() << '\n';
}

/// Reads the `# config` line back; null when the stream has none.
inline nlohmann::json read_comment_config(std::istream& in) {
    std::string line;
    while (std::getline(in, line) && !line.empty() && line[0] == '#') {
        if (line.rfind("# config ", 0) == 0) return nlohmann::json::parse(line.substr(9));
    }
    return nullptr;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Writes through a temporary name so a failed run never leaves a
/// half-written artifact under the final name.
inline void write_file(const std::filesystem::path& p, const std::string& content) {
    auto tmp = p;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + p.string());
        out << content;
        out.flush();
        if (!out) throw Error("write failed for " + p.string());
    }
    std::filesystem::rename(tmp, p);
}

inline std::string file_digest(const std::filesystem::path& p) {
    Fnv1a h;
    h.update(read_file(p));
    return hex64(h.value());
}

// ===========================================================================
// Sparse entries

inline std::string format_sparse(std::span<const double> v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (v[k] == 0.0) continue;
        if (!s.empty()) s += ',';
        s += std::to_string(k);
        s += ':';
        s += format_double(v[k]);
    }
    return s;
}

inline std::vector<double> parse_sparse(std::string_view s, std::size_t dim, std::size_t line_no) {
    std::vector<double> v(dim, 0.0);
    if (s.empty()) return v;
    for (auto entry : detail::split(s, ',')) {
        auto parts = detail::split(entry, ':');
        std::size_t idx = 0;
        double x = 0;
        if (parts.size() != 2 || !detail::parse_number(parts[0], idx) || !detail::parse_number(parts[1], x))
            throw ParseError(line_no, "sparse entry must be index:value, got '" + std::string(entry) + "'");
        if (idx >= dim) throw ParseError(line_no, "sparse index " + std::to_string(idx) + " out of range");
        v[idx] = x;
    }
    return v;
}

// ===========================================================================
// Dataset manifest

struct Manifest {
    int max_rating = 5;
    std::uint64_t seed = 0;
    std::size_t records = 0;
    std::vector<std::string> vocabulary;
    Split split;
    std::string interactions_digest;
    std::map<std::string, std::vector<std::string>> planted;  // synthetic runs only
    nlohmann::json config;
};

inline nlohmann::json to_json(const Manifest& m) {
    nlohmann::json j = {{"format_version", kFormatVersion},
                        {"kind", "dataset"},
                        {"max_rating", m.max_rating},
                        {"seed", m.seed},
                        {"records", m.records},
                        {"features", m.vocabulary.size()},
                        {"vocabulary", m.vocabulary},
                        {"split", {{"train", m.split.train}, {"test", m.split.test}}},
                        {"interactions_digest", m.interactions_digest},
                        {"config", m.config}};
    if (!m.planted.empty()) j["planted"] = m.planted;
    return j;
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
    if (j.value("kind", "") != "dataset") throw ValidationError("not a dataset manifest");
    if (j.at("format_version").get<int>() != kFormatVersion)
        throw ValidationError("unsupported manifest format version");
    Manifest m;
    m.max_rating = j.at("max_rating").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.records = j.at("records").get<std::size_t>();
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    m.split.train = j.at("split").at("train").get<std::vector<std::size_t>>();
    m.split.test = j.at("split").at("test").get<std::vector<std::size_t>>();
    m.interactions_digest = j.at("interactions_digest").get<std::string>();
    if (j.contains("planted")) m.planted = j.at("planted").get<std::map<std::string, std::vector<std::string>>>();
    m.config = j.value("config", nlohmann::json(nullptr));
    return m;
}

inline Manifest make_manifest(const Dataset& d, const std::string& digest, const nlohmann::json& config) {
    Manifest m;
    m.max_rating = d.max_rating;
    m.seed = d.seed;
    m.records = d.records.size();
    for (std::size_t k = 0; k < d.num_features(); ++k) m.vocabulary.push_back(d.vocab.word(k));
    m.split = d.split;
    m.interactions_digest = digest;
    m.config = config;
    return m;
}

/// Writes `interactions.tsv` and `manifest.json` into `dir`.
inline void write_prepared(const std::filesystem::path& dir, const Dataset& d, const nlohmann::json& config,
                           const std::map<std::string, std::vector<std::string>>& planted = {}) {
    std::ostringstream body;
    write_comment_header(body, "interactions", config);
    write_interactions(body, d.records);
    write_file(dir / "interactions.tsv", body.str());
    auto m = make_manifest(d, file_digest(dir / "interactions.tsv"), config);
    m.planted = planted;
    write_file(dir / "manifest.json", to_json(m).dump(2) + "\n");
}

struct PreparedData {
    Dataset dataset;
    Manifest manifest;
};

/// Rebuilds a dataset from a prepared directory, reusing the recorded split.
inline PreparedData load_prepared(const std::filesystem::path& dir) {
    const auto man_path = dir / "manifest.json";
    const auto data_path = dir / "interactions.tsv";
    auto m = manifest_from_json(nlohmann::json::parse(read_file(man_path)));
    if (file_digest(data_path) != m.interactions_digest)
        throw ValidationError("interactions.tsv does not match the digest recorded in manifest.json");
    std::istringstream in(read_file(data_path));
    auto records = parse_interactions(in, m.max_rating);
    auto d = build_dataset(std::move(records), m.max_rating, m.seed, m.split);
    if (d.records.size() != m.records) throw ValidationError("record count differs from the manifest");
    for (std::size_t k = 0; k < d.num_features(); ++k)
        if (m.vocabulary.at(k) != d.vocab.word(k)) throw ValidationError("vocabulary differs from the manifest");
    return {std::move(d), std::move(m)};
}

// ===========================================================================
// Perturbation dump

inline void write_perturbations(std::ostream& out, const Dataset& d, const std::vector<PerturbationRecord>& recs,
                                const nlohmann::json& config) {
    write_comment_header(out, "perturbations", config);
    out << "# user\tpos_item\tneg_item\tkind\tflipped\tl2\tl1\tdelta\n";
    for (const auto& r : recs) {
        out << d.user_ids.at(r.triple.user) << '\t' << d.item_ids.at(r.triple.pos) << '\t'
            << d.item_ids.at(r.triple.neg) << '\t' << to_string(r.kind) << '\t' << (r.flipped ? "true" : "false")
            << '\t' << format_double(r.l2) << '\t' << format_double(r.l1) << '\t' << format_sparse(r.delta) << '\n';
    }
}

inline std::vector<PerturbationRecord> read_perturbations(std::istream& in, const Dataset& d) {
    std::vector<PerturbationRecord> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        auto f = detail::split(line, '\t');
        if (f.size() != 8) throw ParseError(line_no, "perturbation line needs 8 tab-separated fields");
        PerturbationRecord r;
        r.triple.user = d.user_index(std::string(f[0]));
        r.triple.pos = d.item_index(std::string(f[1]));
        r.triple.neg = d.item_index(std::string(f[2]));
        // The (user, pos) pair names the training interaction whose review
        // features the perturbation was applied to.
        const auto& train = d.train_by_user.at(r.triple.user);
        auto it = std::find_if(train.begin(), train.end(),
                               [&](std::size_t t) { return d.interactions[t].item == r.triple.pos; });
        if (it == train.end()) throw ParseError(line_no, "no training interaction for this user and positive item");
        r.triple.interaction = *it;
        r.kind = parse_perturbation_kind(std::string(f[3]));
        if (f[4] != "true" && f[4] != "false") throw ParseError(line_no, "flipped must be true or false");
        r.flipped = f[4] == "true";
        if (!detail::parse_number(f[5], r.l2) || !detail::parse_number(f[6], r.l1))
            throw ParseError(line_no, "bad norm value");
        r.delta = parse_sparse(f[7], d.num_features(), line_no);
        out.push_back(std::move(r));
    }
    return out;
}

// ===========================================================================
// Explanation artifacts

inline void write_explanations(std::ostream& out, const Dataset& d, const std::vector<ExplanationVector>& vs,
                               const nlohmann::json& config) {
    write_comment_header(out, "explanations", config);
    out << "# user\tsource\tentries\n";
    for (const auto& v : vs)
        out << d.user_ids.at(v.user) << '\t' << to_string(v.source) << '\t' << format_sparse(v.values) << '\n';
}

inline void write_top_words(std::ostream& out, const Dataset& d, const std::vector<ExplanationVector>& vs,
                            std::size_t k, const nlohmann::json& config) {
    write_comment_header(out, "top_words", config);
    out << "# user\tsource\twords\n";
    for (const auto& v : vs) {
        auto words = top_k_words(v.values, d.vocab, k);
        out << d.user_ids.at(v.user) << '\t' << to_string(v.source) << '\t';
        for (std::size_t q = 0; q < words.size(); ++q) out << (q ? "," : "") << words[q];
        out << '\n';
    }
}

inline std::string csv_number(double x) { return std::isnan(x) ? std::string("nan") : format_double(x); }

inline void write_correlation_csv(std::ostream& out, const CorrelationMatrix& cm, const nlohmann::json& config) {
    write_comment_header(out, "correlation", config);
    out << "# users " << cm.users << '\n';
    out << "source";
    for (auto s : cm.sources) out << ',' << to_string(s);
    out << '\n';
    for (std::size_t a = 0; a < cm.sources.size(); ++a) {
        out << to_string(cm.sources[a]);
        for (std::size_t b = 0; b < cm.sources.size(); ++b) out << ',' << csv_number(cm.mean[a][b]);
        out << '\n';
    }
}

/// Per-pair user counts behind the correlation matrix.
inline void write_correlation_counts(std::ostream& out, const CorrelationMatrix& cm, const nlohmann::json& config) {
    write_comment_header(out, "correlation_counts", config);
    out << "source_a,source_b,users_used,users_excluded\n";
    for (std::size_t a = 0; a < cm.sources.size(); ++a)
        for (std::size_t b = a + 1; b < cm.sources.size(); ++b)
            out << to_string(cm.sources[a]) << ',' << to_string(cm.sources[b]) << ',' << cm.used[a][b] << ','
                << cm.excluded[a][b] << '\n';
}

inline nlohmann::json to_json(const ExplanationReport& r) {
    return {{"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}, {"ndcg", r.ndcg},
            {"k", r.k},                 {"users_evaluated", r.users_evaluated},
            {"users_skipped", r.users_skipped}};
}

inline void write_explanation_report_csv(std::ostream& out, const std::vector<std::pair<std::string, ExplanationReport>>& rows,
                                         const nlohmann::json& config) {
    write_comment_header(out, "explanation_report", config);
    out << "Source,F1,NDCG\n";
    for (const auto& [name, r] : rows) out << name << ',' << format_double(r.f1) << ',' << format_double(r.ndcg) << '\n';
}

// ===========================================================================
// Ranking reports

inline void write_eval_csv(std::ostream& out, const std::vector<std::pair<std::string, EvalReport>>& rows,
                           const nlohmann::json& config) {
    write_comment_header(out, "ranking_report", config);
    out << "Model,Precision,Recall,F1,Hit Rate,NDCG,MRR\n";
    for (const auto& [name, r] : rows)
        out << name << ',' << format_double(r.precision) << ',' << format_double(r.recall) << ','
            << format_double(r.f1) << ',' << format_double(r.hit_rate) << ',' << format_double(r.ndcg) << ','
            << format_double(r.mrr) << '\n';
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.hit_rate = j.at("hit_rate").get<double>();
    r.ndcg = j.at("ndcg").get<double>();
    r.mrr = j.at("mrr").get<double>();
    r.k = j.at("k").get<std::size_t>();
    r.mrr_cutoff = j.at("mrr_cutoff").get<std::size_t>();
    r.users_evaluated = j.at("users_evaluated").get<std::size_t>();
    r.users_skipped = j.at("users_skipped").get<std::size_t>();
    r.lists = j.at("lists").get<std::size_t>();
    r.min_pool = j.at("min_pool").get<std::size_t>();
    r.max_pool = j.at("max_pool").get<std::size_t>();
    return r;
}

// ===========================================================================
// Run log

inline void write_run_log(std::ostream& out, const std::vector<EpochLog>& log, const nlohmann::json& config) {
    write_comment_header(out, "run_log", config);
    for (const auto& e : log) out << to_json(e).dump() << '\n';
}

}  // namespace cxr

#endif  // CXR_IO_HPP
