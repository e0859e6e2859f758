#ifndef CXR_MODELS_HPP
#define CXR_MODELS_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxr/common.hpp"
#include "cxr/data.hpp"
#include "cxr/diff.hpp"
#include "json.hpp"

namespace cxr {

enum class ModelKind { Nar, Car, Cnr, Baseline };

inline std::string to_string(ModelKind k) {
    switch (k) {
        case ModelKind::Nar: return "nar";
        case ModelKind::Car: return "car";
        case ModelKind::Cnr: return "cnr";
        case ModelKind::Baseline: return "baseline";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "nar" || s == "NAR") return ModelKind::Nar;
    if (s == "car" || s == "CAR") return ModelKind::Car;
    if (s == "cnr" || s == "CNR") return ModelKind::Cnr;
    if (s == "baseline" || s == "BASELINE") return ModelKind::Baseline;
    throw ConfigError("unknown model kind: " + s);
}

/// CAR and CNR share one architecture; they differ only in training.
inline bool uses_feature_mapping(ModelKind k) { return k == ModelKind::Car || k == ModelKind::Cnr; }

struct ScorerConfig {
    ModelKind kind = ModelKind::Car;
    std::size_t id_dim = 350;       // m
    std::size_t feature_dim = 350;  // n
    std::vector<std::size_t> hidden{128, 64};
    std::string activation = "relu";

    void validate() const {
        if (id_dim == 0 || feature_dim == 0) throw ConfigError("embedding sizes must be positive");
        for (auto h : hidden)
            if (h == 0) throw ConfigError("hidden layer sizes must be positive");
        if (activation != "relu" && activation != "tanh")
            throw ConfigError("activation must be relu or tanh, got " + activation);
    }
};

inline nlohmann::json to_json(const ScorerConfig& c) {
    return {{"kind", to_string(c.kind)},
            {"id_dim", c.id_dim},
            {"feature_dim", c.feature_dim},
            {"hidden", c.hidden},
            {"activation", c.activation}};
}

inline ScorerConfig scorer_config_from_json(const nlohmann::json& j) {
    ScorerConfig c;
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.id_dim = j.at("id_dim").get<std::size_t>();
    c.feature_dim = j.at("feature_dim").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    c.activation = j.at("activation").get<std::string>();
    c.validate();
    return c;
}

/// Parameters plus the architecture that reads them.
///
/// Inputs to every scorer are dense feature vectors over the vocabulary;
/// zero entries are off-support. The ID branch is e_u ⊙ e_i. The feature
/// branch is
///   NAR:      f̃_u ⊙ f̃_i with f̃_u = Σ_k α_k w_k f_u^k, α = softmax_k(e_uᵀ M_a w_k)
///   CAR/CNR:  (E_u f_u) ⊙ (E_i f_i)
///   baseline: absent
/// and the concatenation feeds an MLP with a scalar linear output.
class Model {
public:
    Model() = default;

    Model(ScorerConfig cfg, std::size_t users, std::size_t items, std::size_t features,
          std::uint64_t seed)
        : config_(std::move(cfg)), users_(users), items_(items), features_(features), seed_(seed) {
        config_.validate();
        if (users == 0 || items == 0) throw ConfigError("model needs at least one user and item");
        if (config_.kind != ModelKind::Baseline && features == 0)
            throw ConfigError("feature-aware models need a non-empty vocabulary");
        declare();
        params_.init_uniform(seed, bias_names());
    }

    /// Rebuild around loaded parameters; shapes must match the declaration.
    static Model from_params(ScorerConfig cfg, std::size_t users, std::size_t items,
                             std::size_t features, std::uint64_t seed, const ParamStore& loaded) {
        Model m;
        m.config_ = std::move(cfg);
        m.users_ = users;
        m.items_ = items;
        m.features_ = features;
        m.seed_ = seed;
        m.config_.validate();
        m.declare();
        if (loaded.size() != m.params_.size()) throw ShapeError("checkpoint parameter count mismatch");
        for (const auto& p : loaded) {
            auto id = m.params_.id(p.name);
            auto& dst = m.params_[id];
            if (dst.rows != p.rows || dst.cols != p.cols)
                throw ShapeError("checkpoint shape mismatch for " + p.name);
            dst.value = p.value;
        }
        return m;
    }

    const ScorerConfig& config() const { return config_; }
    ModelKind kind() const { return config_.kind; }
    std::size_t num_users() const { return users_; }
    std::size_t num_items() const { return items_; }
    std::size_t num_features() const { return features_; }
    std::uint64_t seed() const { return seed_; }
    const ParamStore& params() const { return params_; }
    ParamStore& params() { return params_; }

    nlohmann::json header() const {
        return {{"format_version", kFormatVersion},
                {"scorer", to_json(config_)},
                {"users", users_},
                {"items", items_},
                {"features", features_},
                {"seed", seed_}};
    }

    // ---- graph builders --------------------------------------------------

    /// Records the score of (user, item) on `tape`. `f_user` and `f_item` are
    /// dense P-vectors (ignored by the baseline).
    Var score(Tape& tape, std::size_t user, std::size_t item, Var f_user, Var f_item) const {
        check_entity(user, item);
        Var e_u = tape.row(user_emb_, user);
        Var e_i = tape.row(item_emb_, item);
        Var id_part = tape.hadamard(e_u, e_i);
        if (config_.kind == ModelKind::Baseline) return mlp(tape, id_part);

        Var feat_part;
        if (config_.kind == ModelKind::Nar) {
            Var fu = attended(tape, e_u, f_user, *attn_user_);
            Var fi = attended(tape, e_i, f_item, *attn_item_);
            feat_part = tape.hadamard(fu, fi);
        } else {
            check_dense(tape, f_user, "user features");
            check_dense(tape, f_item, "item features");
            feat_part = tape.hadamard(tape.matvec(*map_user_, f_user), tape.matvec(*map_item_, f_item));
        }
        return mlp(tape, tape.concat(id_part, feat_part));
    }

    Var score_baseline(Tape& tape, std::size_t user, std::size_t item) const {
        if (config_.kind != ModelKind::Baseline) throw ConfigError("score_baseline on a non-baseline model");
        check_entity(user, item);
        return mlp(tape, tape.hadamard(tape.row(user_emb_, user), tape.row(item_emb_, item)));
    }

    // ---- plain evaluation ------------------------------------------------

    /// Score with optional user-feature perturbation (CAR/CNR: added before
    /// the user feature mapping).
    double score(std::size_t user, std::size_t item, std::span<const double> f_user,
                 std::span<const double> f_item,
                 std::optional<std::span<const double>> delta = std::nullopt) const {
        Tape tape(params_);
        Var fu = input_features(tape, f_user);
        if (delta) {
            if (!uses_feature_mapping(config_.kind))
                throw ConfigError("perturbations apply to CAR/CNR scorers only");
            if (delta->size() != features_)
                throw ShapeError("perturbation has " + std::to_string(delta->size()) +
                                 " entries, expected " + std::to_string(features_));
            fu = tape.add(fu, tape.input(*delta));
        }
        Var fi = input_features(tape, f_item);
        return tape.scalar(score(tape, user, item, fu, fi));
    }

    /// Attention weights of `user` over the support of `f_user` (NAR only).
    std::vector<double> attention_weights(std::size_t user, std::span<const std::size_t> support) const {
        if (config_.kind != ModelKind::Nar) throw ConfigError("attention weights exist only for NAR");
        if (support.empty()) throw ValidationError("attention over an empty support");
        check_entity(user, 0);
        Tape tape(params_);
        Var e_u = tape.row(user_emb_, user);
        Var logits = tape.row_dots(word_emb_, support, tape.matvec_transposed(*attn_user_, e_u));
        auto a = tape.value(tape.softmax(logits));
        return {a.begin(), a.end()};
    }

    ParamId user_embedding() const { return user_emb_; }
    ParamId item_embedding() const { return item_emb_; }

private:
    void declare() {
        const auto m = config_.id_dim, n = config_.feature_dim;
        user_emb_ = params_.add("user_embedding", users_, m);
        item_emb_ = params_.add("item_embedding", items_, m);
        std::size_t in = m;
        if (config_.kind == ModelKind::Nar) {
            word_emb_ = params_.add("word_embedding", features_, n);
            attn_user_ = params_.add("attention_user", m, n);
            attn_item_ = params_.add("attention_item", m, n);
            in += n;
        } else if (uses_feature_mapping(config_.kind)) {
            map_user_ = params_.add("feature_map_user", n, features_);
            map_item_ = params_.add("feature_map_item", n, features_);
            in += n;
        }
        layers_.clear();
        for (std::size_t l = 0; l < config_.hidden.size(); ++l) {
            const auto name = "mlp." + std::to_string(l);
            layers_.push_back({params_.add(name + ".weight", config_.hidden[l], in),
                               params_.add(name + ".bias", config_.hidden[l], 1)});
            in = config_.hidden[l];
        }
        layers_.push_back({params_.add("mlp.out.weight", 1, in), params_.add("mlp.out.bias", 1, 1)});
    }

    std::vector<std::string> bias_names() const {
        std::vector<std::string> out;
        for (const auto& p : params_)
            if (p.name.size() > 5 && p.name.compare(p.name.size() - 5, 5, ".bias") == 0) out.push_back(p.name);
        return out;
    }

    Var mlp(Tape& tape, Var x) const {
        for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
            x = tape.affine(layers_[l].weight, layers_[l].bias, x);
            x = config_.activation == "tanh" ? tape.tanh(x) : tape.relu(x);
        }
        return tape.affine(layers_.back().weight, layers_.back().bias, x);
    }

    /// Σ_k α_k w_k f^k over the nonzero support of `f`; zero vector when the
    /// support is empty.
    Var attended(Tape& tape, Var e, Var f, ParamId attention) const {
        check_dense(tape, f, "features");
        auto fv = tape.value(f);
        std::vector<std::size_t> support;
        for (std::size_t k = 0; k < fv.size(); ++k)
            if (fv[k] != 0.0) support.push_back(k);
        if (support.empty()) return tape.constant(config_.feature_dim, 0.0);
        Var logits = tape.row_dots(word_emb_, support, tape.matvec_transposed(attention, e));
        Var alpha = tape.softmax(logits);
        Var coeffs = tape.hadamard(alpha, tape.gather(f, support));
        return tape.weighted_rows(word_emb_, support, coeffs);
    }

    Var input_features(Tape& tape, std::span<const double> f) const {
        if (config_.kind == ModelKind::Baseline) return tape.input(std::span<const double>{});
        if (f.size() != features_)
            throw ShapeError("feature vector has " + std::to_string(f.size()) + " entries, expected " +
                             std::to_string(features_));
        return tape.input(f);
    }

    void check_dense(const Tape& tape, Var f, const char* what) const {
        if (tape.value(f).size() != features_)
            throw ShapeError(std::string(what) + " have " + std::to_string(tape.value(f).size()) +
                             " entries, expected " + std::to_string(features_));
    }

    void check_entity(std::size_t user, std::size_t item) const {
        if (user >= users_) throw ValidationError("unknown user index " + std::to_string(user));
        if (item >= items_) throw ValidationError("unknown item index " + std::to_string(item));
    }

    struct Layer {
        ParamId weight;
        ParamId bias;
    };

    ScorerConfig config_;
    std::size_t users_ = 0, items_ = 0, features_ = 0;
    std::uint64_t seed_ = 0;
    ParamStore params_;
    ParamId user_emb_, item_emb_;
    ParamId word_emb_;
    std::optional<ParamId> attn_user_, attn_item_, map_user_, map_item_;
    std::vector<Layer> layers_;
};

/// Feature inputs for a (user, item) pair that has no observed review: the
/// user's and item's mean decomposed features over training positives.
struct PairFeatures {
    std::vector<double> user;
    std::vector<double> item;
};

inline PairFeatures profile_features(const Dataset& d, std::size_t user, std::size_t item) {
    return {d.user_profile.at(user).to_dense(d.num_features()),
            d.item_profile.at(item).to_dense(d.num_features())};
}

inline void save_model(std::ostream& out, const Model& m, const nlohmann::json& config_echo = {}) {
    auto h = m.header();
    if (!config_echo.is_null()) h["config"] = config_echo;
    write_params(out, m.params(), m.seed(), h.dump());
}

struct LoadedModel {
    Model model;
    nlohmann::json header;
};

inline LoadedModel load_model(std::istream& in) {
    auto raw = read_params(in);
    auto h = nlohmann::json::parse(raw.header_json);
    auto cfg = scorer_config_from_json(h.at("scorer"));
    auto m = Model::from_params(cfg, h.at("users").get<std::size_t>(), h.at("items").get<std::size_t>(),
                                h.at("features").get<std::size_t>(), raw.init_seed, raw.store);
    return {std::move(m), std::move(h)};
}

}  // namespace cxr

#endif  // CXR_MODELS_HPP
