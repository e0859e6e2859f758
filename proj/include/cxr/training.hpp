#ifndef CXR_TRAINING_HPP
#define CXR_TRAINING_HPP

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cxr/common.hpp"
#include "cxr/data.hpp"
#include "cxr/diff.hpp"
#include "cxr/models.hpp"
#include "json.hpp"

namespace cxr {

enum class DistanceKind { L2, ElasticNet };

inline std::string to_string(DistanceKind k) { return k == DistanceKind::L2 ? "l2" : "elastic_net"; }
inline DistanceKind parse_distance_kind(const std::string& s) {
    if (s == "l2") return DistanceKind::L2;
    if (s == "elastic_net" || s == "elastic-net") return DistanceKind::ElasticNet;
    throw ConfigError("unknown distance kind: " + s);
}

struct TrainConfig {
    std::size_t epochs = 50;
    double lr = 0.001;
    std::size_t batch_size = 64;
    std::size_t negatives = 1;  // per positive, resampled every epoch
    double epsilon = 0.5;       // adversarial L2 radius
    double lambda = 1.0;        // adversarial loss weight
    double xi = 0.001;          // counterfactual distance weight
    std::size_t outer = 20;     // counterfactual alternations
    DistanceKind distance = DistanceKind::ElasticNet;
    std::size_t cf_steps = 100;
    double cf_lr = 0.05;
    double cf_tol = 1e-6;
    std::size_t cf_triples_per_user = 2;
    std::size_t cf_theta_epochs = 1;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size == 0) throw ConfigError("batch size must be positive");
        if (negatives == 0) throw ConfigError("negatives per positive must be positive");
        if (!(lr >= 0)) throw ConfigError("learning rate must be non-negative");
        if (!(epsilon >= 0)) throw ConfigError("epsilon must be non-negative");
        if (!(lambda >= 0)) throw ConfigError("lambda must be non-negative");
        if (!(xi >= 0)) throw ConfigError("xi must be non-negative");
        if (!(cf_lr > 0)) throw ConfigError("counterfactual step size must be positive");
        if (!(cf_tol >= 0)) throw ConfigError("counterfactual tolerance must be non-negative");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    return {{"epochs", c.epochs},
            {"lr", c.lr},
            {"batch_size", c.batch_size},
            {"negatives", c.negatives},
            {"epsilon", c.epsilon},
            {"lambda", c.lambda},
            {"xi", c.xi},
            {"outer", c.outer},
            {"distance", to_string(c.distance)},
            {"cf_steps", c.cf_steps},
            {"cf_lr", c.cf_lr},
            {"cf_tol", c.cf_tol},
            {"cf_triples_per_user", c.cf_triples_per_user},
            {"cf_theta_epochs", c.cf_theta_epochs},
            {"seed", c.seed}};
}

// ===========================================================================
// Triples

struct BprTriple {
    std::size_t user = 0;
    std::size_t pos = 0;
    std::size_t neg = 0;
    std::size_t interaction = 0;  // the observed (user, pos) interaction

    bool operator==(const BprTriple&) const = default;
};

/// Dense inputs for one triple. The user vector comes from the observed
/// review; both items use their profiles, as unseen candidates do at
/// evaluation time.
struct TripleFeatures {
    std::vector<double> user;
    std::vector<double> pos;
    std::vector<double> neg;
    std::vector<std::size_t> support;  // nonzero entries of `user`
};

inline TripleFeatures triple_features(const Dataset& d, const BprTriple& t) {
    const auto& x = d.interactions.at(t.interaction);
    const auto P = d.num_features();
    return {x.features.user.to_dense(P), d.item_profile.at(t.pos).to_dense(P), d.item_profile.at(t.neg).to_dense(P),
            x.features.user.indices};
}

/// One pass over every training positive with `negatives` uniformly drawn
/// non-positive items each, in shuffled order. Users whose training
/// positives cover the catalog are skipped (counted in `skipped`).
inline std::vector<BprTriple> sample_bpr_triples(const Dataset& d, std::size_t negatives, Rng& rng,
                                                 std::size_t* skipped = nullptr) {
    std::vector<BprTriple> out;
    std::size_t skip = 0;
    const auto N = d.num_items();
    for (std::size_t u = 0; u < d.num_users(); ++u) {
        if (d.train_by_user[u].empty()) continue;
        if (d.train_positive_items[u].size() >= N) {
            ++skip;
            continue;
        }
        for (auto t : d.train_by_user[u]) {
            for (std::size_t r = 0; r < negatives; ++r) {
                std::size_t j;
                do {
                    j = uniform_index(rng, N);
                } while (d.is_train_positive(u, j));
                out.push_back({u, d.interactions[t].item, j, t});
            }
        }
    }
    if (skip > 0 && !skipped)
        std::clog << "warning: " << skip << " user(s) skipped; their positives cover the catalog\n";
    if (skipped) *skipped = skip;
    shuffle(out, rng);
    return out;
}

/// -log σ(R_ui - R_uj) recorded on `tape`.
inline Var bpr_triple_loss(Tape& tape, const Model& m, const BprTriple& t, Var f_user, Var f_pos,
                           Var f_neg) {
    Var r_pos = m.score(tape, t.user, t.pos, f_user, f_pos);
    Var r_neg = m.score(tape, t.user, t.neg, f_user, f_neg);
    return tape.scale(tape.log_sigmoid(tape.sub(r_pos, r_neg)), -1.0);
}

/// Mean BPR loss of `triples` (optionally with user-feature perturbations
/// added, one dense vector per triple).
inline double bpr_loss(const Model& m, const Dataset& d, std::span<const BprTriple> triples,
                       std::span<const std::vector<double>> deltas = {}) {
    if (triples.empty()) throw ValidationError("bpr_loss over zero triples");
    double total = 0;
    for (std::size_t k = 0; k < triples.size(); ++k) {
        auto tf = triple_features(d, triples[k]);
        if (!deltas.empty())
            for (std::size_t q = 0; q < tf.user.size(); ++q) tf.user[q] += deltas[k][q];
        Tape tape(m.params());
        total += tape.scalar(bpr_triple_loss(tape, m, triples[k], tape.input(tf.user), tape.input(tf.pos),
                                             tape.input(tf.neg)));
    }
    return total / static_cast<double>(triples.size());
}

// ===========================================================================
// Perturbations

enum class PerturbationKind { Adversarial, Counterfactual };

inline std::string to_string(PerturbationKind k) {
    return k == PerturbationKind::Adversarial ? "adversarial" : "counterfactual";
}
inline PerturbationKind parse_perturbation_kind(const std::string& s) {
    if (s == "adversarial") return PerturbationKind::Adversarial;
    if (s == "counterfactual") return PerturbationKind::Counterfactual;
    throw ValidationError("unknown perturbation kind: " + s);
}

struct PerturbationRecord {
    BprTriple triple;
    std::vector<double> delta;  // dense over the vocabulary, zero off-support
    PerturbationKind kind = PerturbationKind::Adversarial;
    double l2 = 0;
    double l1 = 0;
    bool flipped = false;  // R_ui < R_uj with the perturbation applied
};

/// ‖δ‖₂² (+ ‖δ‖₁ for the elastic net).
inline double elastic_net_dist(std::span<const double> delta, DistanceKind kind = DistanceKind::ElasticNet) {
    double sq = 0, ab = 0;
    for (double x : delta) {
        sq += x * x;
        ab += std::abs(x);
    }
    return kind == DistanceKind::ElasticNet ? sq + ab : sq;
}

struct InputGradient {
    double loss = 0;
    std::vector<double> grad;  // d loss / d f_user, dense
};

/// BPR loss of one triple and its gradient w.r.t. the user feature vector.
inline InputGradient bpr_input_gradient(const Model& m, const BprTriple& t, const TripleFeatures& tf) {
    Tape tape(m.params());
    Var fu = tape.input(tf.user, true);
    Var loss = bpr_triple_loss(tape, m, t, fu, tape.input(tf.pos), tape.input(tf.neg));
    tape.backward(loss);
    auto g = tape.grad(fu);
    return {tape.scalar(loss), {g.begin(), g.end()}};
}

/// ε Δ/‖Δ‖₂ where Δ is the loss gradient restricted to the user's support.
/// A zero gradient gives a zero perturbation.
inline std::vector<double> fgsm_from_gradient(std::span<const double> grad,
                                              std::span<const std::size_t> support, double epsilon) {
    std::vector<double> delta(grad.size(), 0.0);
    double sq = 0;
    for (auto k : support) sq += grad[k] * grad[k];
    const double norm = std::sqrt(sq);
    if (norm == 0.0 || epsilon == 0.0) return delta;
    for (auto k : support) delta[k] = epsilon * grad[k] / norm;
    return delta;
}

inline std::vector<double> fgsm_perturbation(const Model& m, const BprTriple& t, const TripleFeatures& tf,
                                             double epsilon) {
    if (!uses_feature_mapping(m.kind())) throw ConfigError("adversarial perturbations need a CAR/CNR model");
    auto g = bpr_input_gradient(m, t, tf);
    return fgsm_from_gradient(g.grad, tf.support, epsilon);
}

inline PerturbationRecord make_record(const Model& m, const BprTriple& t, const TripleFeatures& tf,
                                      std::vector<double> delta, PerturbationKind kind) {
    PerturbationRecord r;
    r.triple = t;
    r.kind = kind;
    r.l2 = l2_norm(delta);
    r.l1 = l1_norm(delta);
    r.flipped = m.score(t.user, t.pos, tf.user, tf.pos, std::span<const double>(delta)) <
                m.score(t.user, t.neg, tf.user, tf.neg, std::span<const double>(delta));
    r.delta = std::move(delta);
    return r;
}

struct CounterfactualConfig {
    double xi = 0.001;
    DistanceKind distance = DistanceKind::ElasticNet;
    std::size_t steps = 100;
    double lr = 0.05;
    double tol = 1e-6;
};

inline CounterfactualConfig counterfactual_config(const TrainConfig& c) {
    return {c.xi, c.distance, c.cf_steps, c.cf_lr, c.cf_tol};
}

/// Searches a user-feature perturbation that reverses the decision
/// R_ui > R_uj with the model frozen. Minimizes
///   -log σ(R_uj(δ) - R_ui(δ)) + ξ dist(δ)
/// over δ on the user's support: gradient steps on the smooth part, then a
/// soft-threshold for the L1 term. Stops once the decision is flipped and
/// dist changes by less than `tol` between steps.
///
/// Throws std::invalid_argument if R_ui <= R_uj to begin with.
inline PerturbationRecord counterfactual_search(const Model& m, const BprTriple& t, const TripleFeatures& tf,
                                                const CounterfactualConfig& cfg) {
    if (!uses_feature_mapping(m.kind())) throw ConfigError("counterfactual search needs a CAR/CNR model");
    if (m.score(t.user, t.pos, tf.user, tf.pos) <= m.score(t.user, t.neg, tf.user, tf.neg))
        throw std::invalid_argument("counterfactual search: no ranking decision R_ui > R_uj to flip");

    const auto& support = tf.support;
    std::vector<double> delta(tf.user.size(), 0.0);
    std::vector<double> shifted = tf.user;
    double prev_dist = 0;
    for (std::size_t s = 0; s < cfg.steps; ++s) {
        for (auto k : support) shifted[k] = tf.user[k] + delta[k];
        Tape tape(m.params());
        Var fu = tape.input(shifted, true);
        Var r_pos = m.score(tape, t.user, t.pos, fu, tape.input(tf.pos));
        Var r_neg = m.score(tape, t.user, t.neg, fu, tape.input(tf.neg));
        Var flip_loss = tape.scale(tape.log_sigmoid(tape.sub(r_neg, r_pos)), -1.0);
        const bool flipped = tape.scalar(r_pos) < tape.scalar(r_neg);
        const double dist = elastic_net_dist(delta, cfg.distance);
        if (s > 0 && flipped && std::abs(dist - prev_dist) < cfg.tol) break;
        prev_dist = dist;
        tape.backward(flip_loss);
        auto g = tape.grad(fu);
        for (auto k : support) {
            double step = g[k] + cfg.xi * 2.0 * delta[k];
            double v = delta[k] - cfg.lr * step;
            if (cfg.distance == DistanceKind::ElasticNet) {
                const double thr = cfg.lr * cfg.xi;
                v = v > thr ? v - thr : (v < -thr ? v + thr : 0.0);
            }
            delta[k] = v;
        }
        if (!all_finite(delta)) throw TrainingError("counterfactual search diverged");
    }
    return make_record(m, t, tf, std::move(delta), PerturbationKind::Counterfactual);
}

// ===========================================================================
// Training loops

struct EpochLog {
    std::string phase;  // "bpr", "adversarial" or "counterfactual"
    std::size_t epoch = 0;
    double clean_loss = 0;
    std::optional<double> aux_loss;  // adversarial / augmented loss
    std::optional<double> flip_rate;
    std::optional<double> mean_dist;
    double seconds = 0;  // wall time; kept out of deterministic artifacts
};

inline nlohmann::json to_json(const EpochLog& e, bool with_time = false) {
    nlohmann::json j = {{"phase", e.phase}, {"epoch", e.epoch}, {"clean_loss", e.clean_loss}};
    j["aux_loss"] = e.aux_loss ? nlohmann::json(*e.aux_loss) : nlohmann::json(nullptr);
    if (e.flip_rate) j["flip_rate"] = *e.flip_rate;
    if (e.mean_dist) j["mean_dist"] = *e.mean_dist;
    if (with_time) j["wall_seconds"] = e.seconds;
    return j;
}

struct TrainResult {
    std::vector<EpochLog> log;
    std::vector<PerturbationRecord> perturbations;
};

namespace detail {

struct Example {
    BprTriple triple;
    const std::vector<double>* delta = nullptr;  // augmented examples only
};

class Trainer {
public:
    Trainer(Model& m, const Dataset& d, const TrainConfig& cfg)
        : model_(m), data_(d), cfg_(cfg), adam_(m.params(), AdamConfig{cfg.lr}),
          grads_(m.params()), rng_(derive_seed(cfg.seed, {0x7a1})) {
        cfg.validate();
        if (d.split.train.empty()) throw ValidationError("no training positives");
    }

    Rng& rng() { return rng_; }

    struct EpochLosses {
        double clean = 0;      // mean over examples without a perturbation
        double augmented = 0;  // mean over examples carrying a stored perturbation
        double adversarial = 0;  // mean loss under the per-step FGSM perturbation
    };

    /// One pass of Adam over the examples. With adversarial weight > 0,
    /// each example also contributes weight·loss at f_u + δ_adv, where δ_adv
    /// is computed against the parameters before the step.
    EpochLosses epoch(const std::vector<Example>& examples, double adversarial_weight) {
        double clean = 0, aug = 0, adv = 0;
        std::size_t n_clean = 0, n_aug = 0;
        const std::size_t B = cfg_.batch_size;
        for (std::size_t start = 0; start < examples.size(); start += B) {
            const std::size_t end = std::min(examples.size(), start + B);
            grads_.zero();
            grads_.scale = 1.0 / static_cast<double>(end - start);
            for (std::size_t k = start; k < end; ++k) {
                const auto& ex = examples[k];
                auto tf = triple_features(data_, ex.triple);
                if (ex.delta)
                    for (auto q : tf.support) tf.user[q] += (*ex.delta)[q];
                std::vector<double> user_grad;
                {
                    Tape tape(model_.params(), &grads_);
                    Var fu = tape.input(tf.user, adversarial_weight > 0);
                    Var loss = bpr_triple_loss(tape, model_, ex.triple, fu, tape.input(tf.pos), tape.input(tf.neg));
                    (ex.delta ? aug : clean) += tape.scalar(loss);
                    ++(ex.delta ? n_aug : n_clean);
                    tape.backward(loss);
                    if (adversarial_weight > 0) {
                        auto g = tape.grad(fu);
                        user_grad.assign(g.begin(), g.end());
                    }
                }
                if (adversarial_weight > 0) {
                    auto delta = fgsm_from_gradient(user_grad, tf.support, cfg_.epsilon);
                    for (auto q : tf.support) tf.user[q] += delta[q];
                    const double keep = grads_.scale;
                    grads_.scale = keep * adversarial_weight;
                    Tape tape(model_.params(), &grads_);
                    Var loss = bpr_triple_loss(tape, model_, ex.triple, tape.input(tf.user), tape.input(tf.pos),
                                               tape.input(tf.neg));
                    adv += tape.scalar(loss);
                    tape.backward(loss);
                    grads_.scale = keep;
                }
            }
            adam_.step(model_.params(), grads_);
        }
        if (!std::isfinite(clean) || !std::isfinite(aug) || !std::isfinite(adv))
            throw TrainingError("non-finite training loss; aborting");
        EpochLosses out;
        if (n_clean) out.clean = clean / static_cast<double>(n_clean);
        if (n_aug) out.augmented = aug / static_cast<double>(n_aug);
        if (n_clean) out.adversarial = adv / static_cast<double>(n_clean);
        return out;
    }

    std::vector<Example> clean_examples() {
        std::vector<Example> ex;
        for (const auto& t : sample_bpr_triples(data_, cfg_.negatives, rng_)) ex.push_back({t, nullptr});
        return ex;
    }

    /// `epochs` clean (or adversarially augmented) epochs, appended to `log`.
    void run(std::size_t epochs, double adversarial_weight, std::vector<EpochLog>& log) {
        for (std::size_t e = 0; e < epochs; ++e) {
            const auto t0 = std::chrono::steady_clock::now();
            auto ex = clean_examples();
            if (ex.empty()) throw ValidationError("no trainable triples");
            const auto losses = epoch(ex, adversarial_weight);
            EpochLog entry;
            entry.phase = adversarial_weight > 0 ? "adversarial" : "bpr";
            entry.epoch = log.size() + 1;
            entry.clean_loss = losses.clean;
            if (adversarial_weight > 0) entry.aux_loss = losses.adversarial;
            entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            log.push_back(entry);
        }
    }

private:
    Model& model_;
    const Dataset& data_;
    TrainConfig cfg_;
    Adam adam_;
    Gradients grads_;
    Rng rng_;
};

}  // namespace detail

/// Plain pairwise training with Adam for any model kind.
inline TrainResult train_bpr(Model& m, const Dataset& d, const TrainConfig& cfg) {
    detail::Trainer trainer(m, d, cfg);
    TrainResult r;
    trainer.run(cfg.epochs, 0.0, r.log);
    return r;
}

/// Clean loss plus λ times the loss under per-step FGSM perturbations of
/// the user features. λ = 0 follows exactly the train_bpr trajectory.
inline TrainResult train_adversarial(Model& m, const Dataset& d, const TrainConfig& cfg) {
    if (!uses_feature_mapping(m.kind())) throw ConfigError("adversarial training needs a CAR/CNR model");
    detail::Trainer trainer(m, d, cfg);
    TrainResult r;
    trainer.run(cfg.epochs, cfg.lambda, r.log);
    return r;
}

/// δ_adv for one triple per training positive against the final parameters.
inline std::vector<PerturbationRecord> adversarial_records(const Model& m, const Dataset& d, double epsilon,
                                                           std::uint64_t seed) {
    Rng rng(derive_seed(seed, {0xad7}));
    auto triples = sample_bpr_triples(d, 1, rng);
    std::sort(triples.begin(), triples.end(), [](const auto& a, const auto& b) {
        return std::tie(a.user, a.interaction, a.neg) < std::tie(b.user, b.interaction, b.neg);
    });
    std::vector<PerturbationRecord> out;
    out.reserve(triples.size());
    for (const auto& t : triples) {
        auto tf = triple_features(d, t);
        out.push_back(make_record(m, t, tf, fgsm_perturbation(m, t, tf, epsilon), PerturbationKind::Adversarial));
    }
    return out;
}

/// Up to `per_user` triples per user whose decision R_ui > R_uj currently
/// holds under `m`, sorted by (user, interaction).
inline std::vector<BprTriple> flippable_triples(const Model& m, const Dataset& d, std::size_t per_user, Rng& rng) {
    std::vector<BprTriple> out;
    for (std::size_t u = 0; u < d.num_users(); ++u) {
        const auto& pos = d.train_by_user[u];
        if (pos.empty() || d.train_positive_items[u].size() >= d.num_items()) continue;
        auto order = pos;
        shuffle(order, rng);
        std::size_t taken = 0;
        for (std::size_t a = 0; a < order.size() && taken < per_user; ++a) {
            const auto t = order[a];
            std::size_t j;
            do {
                j = uniform_index(rng, d.num_items());
            } while (d.is_train_positive(u, j));
            BprTriple tr{u, d.interactions[t].item, j, t};
            auto tf = triple_features(d, tr);
            if (tf.support.empty()) continue;
            if (m.score(u, tr.pos, tf.user, tf.pos) > m.score(u, j, tf.user, tf.neg)) {
                out.push_back(tr);
                ++taken;
            }
        }
    }
    return out;
}

/// Initial clean training, then `outer` rounds of
///   δ-step: counterfactual searches on sampled triples, θ frozen;
///   θ-step: Adam on fresh clean triples plus the perturbed examples, the
///           latter labelled with the flipped preference (j over i), which
///           is the same as raising the original-order loss on them.
/// Returns perturbation records searched against the final parameters.
inline TrainResult train_counterfactual(Model& m, const Dataset& d, const TrainConfig& cfg) {
    if (!uses_feature_mapping(m.kind())) throw ConfigError("counterfactual training needs a CAR/CNR model");
    detail::Trainer trainer(m, d, cfg);
    TrainResult r;
    trainer.run(cfg.epochs, 0.0, r.log);
    Rng search_rng(derive_seed(cfg.seed, {0xcf5}));
    const auto cf = counterfactual_config(cfg);
    for (std::size_t round = 1; round <= cfg.outer; ++round) {
        const auto t0 = std::chrono::steady_clock::now();
        std::vector<PerturbationRecord> records;
        for (const auto& t : flippable_triples(m, d, cfg.cf_triples_per_user, search_rng))
            records.push_back(counterfactual_search(m, t, triple_features(d, t), cf));
        std::size_t flipped = 0;
        double dist = 0;
        for (const auto& rec : records) {
            flipped += rec.flipped ? 1 : 0;
            dist += elastic_net_dist(rec.delta, cfg.distance);
        }
        double clean = 0, aug = 0;
        for (std::size_t e = 0; e < cfg.cf_theta_epochs; ++e) {
            auto ex = trainer.clean_examples();
            // Counterfactual world: under f_u + δ the user prefers j over i.
            for (const auto& rec : records)
                ex.push_back({BprTriple{rec.triple.user, rec.triple.neg, rec.triple.pos, rec.triple.interaction},
                              &rec.delta});
            shuffle(ex, trainer.rng());
            const auto losses = trainer.epoch(ex, 0.0);
            clean = losses.clean;
            aug = losses.augmented;
        }
        EpochLog entry;
        entry.phase = "counterfactual";
        entry.epoch = round;
        entry.clean_loss = clean;
        entry.aux_loss = aug;
        entry.flip_rate = records.empty() ? 0.0 : static_cast<double>(flipped) / static_cast<double>(records.size());
        entry.mean_dist = records.empty() ? 0.0 : dist / static_cast<double>(records.size());
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.log.push_back(entry);
    }
    // The dump must agree with the saved parameters, so the reported records
    // come from one more δ-step against the final θ.
    for (const auto& t : flippable_triples(m, d, cfg.cf_triples_per_user, search_rng))
        r.perturbations.push_back(counterfactual_search(m, t, triple_features(d, t), cf));
    return r;
}

/// Dispatch on model kind: NAR/baseline → BPR, CAR → adversarial, CNR →
/// counterfactual. CAR runs also produce final adversarial records.
inline TrainResult train_model(Model& m, const Dataset& d, const TrainConfig& cfg) {
    switch (m.kind()) {
        case ModelKind::Nar:
        case ModelKind::Baseline: return train_bpr(m, d, cfg);
        case ModelKind::Car: {
            auto r = train_adversarial(m, d, cfg);
            r.perturbations = adversarial_records(m, d, cfg.epsilon, cfg.seed);
            return r;
        }
        case ModelKind::Cnr: return train_counterfactual(m, d, cfg);
    }
    throw ConfigError("unknown model kind");
}

}  // namespace cxr

#endif  // CXR_TRAINING_HPP
