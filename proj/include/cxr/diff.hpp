#ifndef CXR_DIFF_HPP
#define CXR_DIFF_HPP

// Reverse-mode differentiation over small dense vectors, sized for the
// scoring networks in models.hpp. Values are computed eagerly as operations
// are recorded; backward() walks the record in reverse.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cxr/common.hpp"

namespace cxr {

struct ParamId {
    std::size_t index = 0;
};

struct Param {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> value;  // row-major

    std::size_t size() const { return rows * cols; }
    std::span<const double> row(std::size_t r) const { return {value.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {value.data() + r * cols, cols}; }
};

/// Named dense parameter arrays. Shapes are fixed once added.
class ParamStore {
public:
    ParamId add(const std::string& name, std::size_t rows, std::size_t cols) {
        if (index_.count(name)) throw ShapeError("duplicate parameter: " + name);
        if (rows == 0 || cols == 0) throw ShapeError("parameter " + name + " has an empty shape");
        index_[name] = params_.size();
        params_.push_back(Param{name, rows, cols, std::vector<double>(rows * cols, 0.0)});
        return ParamId{params_.size() - 1};
    }

    ParamId id(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ShapeError("no parameter named " + name);
        return ParamId{it->second};
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    Param& operator[](ParamId p) { return params_.at(p.index); }
    const Param& operator[](ParamId p) const { return params_.at(p.index); }

    std::size_t size() const { return params_.size(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }

    /// Uniform in [-0.5/sqrt(cols), 0.5/sqrt(cols)]; names listed in `zero`
    /// (biases) stay at 0. Each parameter draws from its own stream.
    void init_uniform(std::uint64_t seed, const std::vector<std::string>& zero = {}) {
        for (std::size_t p = 0; p < params_.size(); ++p) {
            auto& prm = params_[p];
            if (std::find(zero.begin(), zero.end(), prm.name) != zero.end()) {
                std::fill(prm.value.begin(), prm.value.end(), 0.0);
                continue;
            }
            Fnv1a h;
            h.update(prm.name);
            Rng rng(derive_seed(seed, {h.value()}));
            const double bound = 0.5 / std::sqrt(static_cast<double>(prm.cols));
            for (auto& v : prm.value) v = uniform(rng, -bound, bound);
        }
    }

    std::uint64_t digest() const {
        Fnv1a h;
        for (const auto& p : params_) {
            h.update(p.name);
            const std::uint64_t shape[2] = {p.rows, p.cols};
            h.update(shape, sizeof shape);
            h.update(p.value);
        }
        return h.value();
    }

    bool operator==(const ParamStore& o) const {
        if (params_.size() != o.params_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const auto& a = params_[i];
            const auto& b = o.params_[i];
            if (a.name != b.name || a.rows != b.rows || a.cols != b.cols) return false;
            if (!std::equal(a.value.begin(), a.value.end(), b.value.begin(), b.value.end(),
                            [](double x, double y) { return std::bit_cast<std::uint64_t>(x) ==
                                                            std::bit_cast<std::uint64_t>(y); }))
                return false;
        }
        return true;
    }

private:
    std::vector<Param> params_;
    std::map<std::string, std::size_t> index_;
};

/// Gradient buffers shaped like a ParamStore.
class Gradients {
public:
    Gradients() = default;
    explicit Gradients(const ParamStore& store) {
        for (const auto& p : store) g_.emplace_back(p.size(), 0.0);
    }

    std::span<double> operator[](ParamId p) { return g_.at(p.index); }
    std::span<const double> operator[](ParamId p) const { return g_.at(p.index); }
    std::size_t size() const { return g_.size(); }

    void zero() {
        for (auto& v : g_) std::fill(v.begin(), v.end(), 0.0);
    }

    bool all_finite() const {
        for (const auto& v : g_)
            if (!cxr::all_finite(v)) return false;
        return true;
    }

    /// Accumulation weight applied by the tape when it writes into this sink.
    double scale = 1.0;

private:
    std::vector<std::vector<double>> g_;
};

// ===========================================================================
// Tape

struct Var {
    std::uint32_t id = 0;
};

class Tape {
public:
    /// Parameter gradients go to `sink` when given; otherwise only inputs
    /// flagged as differentiable receive gradients.
    explicit Tape(const ParamStore& params, Gradients* sink = nullptr)
        : params_(params), sink_(sink) {
        if (sink_ && sink_->size() != params_.size())
            throw ShapeError("gradient sink does not match parameter store");
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::span<const double> value(Var v) const { return nodes_.at(v.id).value; }
    double scalar(Var v) const {
        const auto& n = nodes_.at(v.id);
        if (n.value.size() != 1) throw ShapeError(where(v.id, "scalar") + " is not a scalar");
        return n.value[0];
    }
    std::size_t size() const { return nodes_.size(); }

    /// Gradient of the last backward() target w.r.t. a differentiable input.
    std::span<const double> grad(Var v) const {
        const auto& n = nodes_.at(v.id);
        if (!n.differentiable_input)
            throw ShapeError(where(v.id, "grad") + " is not a differentiable input");
        if (!backward_done_) throw Error("grad requested before backward()");
        return n.grad;
    }

    // ---- leaves ----------------------------------------------------------

    Var input(std::span<const double> values, bool differentiable = false) {
        Var v = push("input", std::vector<double>(values.begin(), values.end()));
        nodes_[v.id].differentiable_input = differentiable;
        return v;
    }

    Var constant(std::size_t n, double fill) {
        return push("constant", std::vector<double>(n, fill));
    }

    /// Row `r` of a parameter table (embedding lookup).
    Var row(ParamId table, std::size_t r) {
        const auto& P = params_[table];
        if (r >= P.rows)
            throw ShapeError("row " + std::to_string(r) + " out of range for " + P.name + " (" +
                             std::to_string(P.rows) + " rows)");
        auto span = P.row(r);
        Var v = push("row:" + P.name, std::vector<double>(span.begin(), span.end()));
        if (sink_) {
            nodes_[v.id].backward = [this, table, r](Node& self) {
                auto g = (*sink_)[table];
                const auto c = params_[table].cols;
                for (std::size_t k = 0; k < c; ++k) g[r * c + k] += sink_->scale * self.grad[k];
            };
        }
        return v;
    }

    // ---- linear algebra --------------------------------------------------

    /// W x for W of shape rows x cols.
    Var matvec(ParamId W, Var x) {
        const auto& P = params_[W];
        check_len(x, P.cols, "matvec:" + P.name);
        std::vector<double> y(P.rows, 0.0);
        const auto& xv = nodes_[x.id].value;
        for (std::size_t c = 0; c < P.cols; ++c) {
            const double xc = xv[c];
            if (xc == 0.0) continue;
            for (std::size_t r = 0; r < P.rows; ++r) y[r] += P.value[r * P.cols + c] * xc;
        }
        Var v = push("matvec:" + P.name, std::move(y), {x});
        nodes_[v.id].backward = [this, W, x](Node& self) {
            const auto& P = params_[W];
            auto& xn = nodes_[x.id];
            for (std::size_t r = 0; r < P.rows; ++r) {
                const double gr = self.grad[r];
                if (gr == 0.0) continue;
                const double* w = P.value.data() + r * P.cols;
                for (std::size_t c = 0; c < P.cols; ++c) xn.grad[c] += w[c] * gr;
            }
            if (sink_) {
                auto g = (*sink_)[W];
                for (std::size_t r = 0; r < P.rows; ++r) {
                    const double gr = sink_->scale * self.grad[r];
                    if (gr == 0.0) continue;
                    for (std::size_t c = 0; c < P.cols; ++c) g[r * P.cols + c] += gr * xn.value[c];
                }
            }
        };
        return v;
    }

    /// Wᵀ x for W of shape rows x cols (x has `rows` entries).
    Var matvec_transposed(ParamId W, Var x) {
        const auto& P = params_[W];
        check_len(x, P.rows, "matvec_t:" + P.name);
        std::vector<double> y(P.cols, 0.0);
        const auto& xv = nodes_[x.id].value;
        for (std::size_t r = 0; r < P.rows; ++r) {
            const double xr = xv[r];
            const double* w = P.value.data() + r * P.cols;
            for (std::size_t c = 0; c < P.cols; ++c) y[c] += w[c] * xr;
        }
        Var v = push("matvec_t:" + P.name, std::move(y), {x});
        nodes_[v.id].backward = [this, W, x](Node& self) {
            const auto& P = params_[W];
            auto& xn = nodes_[x.id];
            for (std::size_t r = 0; r < P.rows; ++r) {
                const double* w = P.value.data() + r * P.cols;
                double acc = 0;
                for (std::size_t c = 0; c < P.cols; ++c) acc += w[c] * self.grad[c];
                xn.grad[r] += acc;
            }
            if (sink_) {
                auto g = (*sink_)[W];
                for (std::size_t r = 0; r < P.rows; ++r) {
                    const double xr = sink_->scale * xn.value[r];
                    for (std::size_t c = 0; c < P.cols; ++c) g[r * P.cols + c] += xr * self.grad[c];
                }
            }
        };
        return v;
    }

    /// W x + b, with b stored as a rows x 1 parameter.
    Var affine(ParamId W, ParamId b, Var x) {
        const auto& B = params_[b];
        const auto& P = params_[W];
        if (B.size() != P.rows) throw ShapeError("bias " + B.name + " does not match " + P.name);
        Var y = matvec(W, x);
        auto& yn = nodes_[y.id];
        for (std::size_t r = 0; r < P.rows; ++r) yn.value[r] += B.value[r];
        yn.op = "affine:" + P.name;
        if (sink_) {
            auto inner = std::move(yn.backward);
            yn.backward = [this, b, inner](Node& self) {
                inner(self);
                auto g = (*sink_)[b];
                for (std::size_t r = 0; r < g.size(); ++r) g[r] += sink_->scale * self.grad[r];
            };
        }
        return y;
    }

    /// Dot products of `v` with selected rows of a table: out[k] = table[rows[k]] · v.
    Var row_dots(ParamId table, std::span<const std::size_t> rows, Var v) {
        const auto& P = params_[table];
        check_len(v, P.cols, "row_dots:" + P.name);
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        for (auto r : idx)
            if (r >= P.rows) throw ShapeError("row_dots: row out of range for " + P.name);
        std::vector<double> out(idx.size(), 0.0);
        const auto& vv = nodes_[v.id].value;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double* w = P.value.data() + idx[k] * P.cols;
            double acc = 0;
            for (std::size_t c = 0; c < P.cols; ++c) acc += w[c] * vv[c];
            out[k] = acc;
        }
        Var o = push("row_dots:" + P.name, std::move(out), {v});
        nodes_[o.id].backward = [this, table, idx, v](Node& self) {
            const auto& P = params_[table];
            auto& vn = nodes_[v.id];
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double gk = self.grad[k];
                const double* w = P.value.data() + idx[k] * P.cols;
                for (std::size_t c = 0; c < P.cols; ++c) vn.grad[c] += w[c] * gk;
                if (sink_) {
                    auto g = (*sink_)[table];
                    const double s = sink_->scale * gk;
                    for (std::size_t c = 0; c < P.cols; ++c) g[idx[k] * P.cols + c] += s * vn.value[c];
                }
            }
        };
        return o;
    }

    /// Σ_k coeffs[k] · table[rows[k]].
    Var weighted_rows(ParamId table, std::span<const std::size_t> rows, Var coeffs) {
        const auto& P = params_[table];
        check_len(coeffs, rows.size(), "weighted_rows:" + P.name);
        std::vector<std::size_t> idx(rows.begin(), rows.end());
        for (auto r : idx)
            if (r >= P.rows) throw ShapeError("weighted_rows: row out of range for " + P.name);
        std::vector<double> out(P.cols, 0.0);
        const auto& a = nodes_[coeffs.id].value;
        for (std::size_t k = 0; k < idx.size(); ++k) {
            const double* w = P.value.data() + idx[k] * P.cols;
            for (std::size_t c = 0; c < P.cols; ++c) out[c] += a[k] * w[c];
        }
        Var o = push("weighted_rows:" + P.name, std::move(out), {coeffs});
        nodes_[o.id].backward = [this, table, idx, coeffs](Node& self) {
            const auto& P = params_[table];
            auto& an = nodes_[coeffs.id];
            for (std::size_t k = 0; k < idx.size(); ++k) {
                const double* w = P.value.data() + idx[k] * P.cols;
                double acc = 0;
                for (std::size_t c = 0; c < P.cols; ++c) acc += w[c] * self.grad[c];
                an.grad[k] += acc;
                if (sink_) {
                    auto g = (*sink_)[table];
                    const double s = sink_->scale * an.value[k];
                    for (std::size_t c = 0; c < P.cols; ++c) g[idx[k] * P.cols + c] += s * self.grad[c];
                }
            }
        };
        return o;
    }

    // ---- element-wise ----------------------------------------------------

    Var add(Var a, Var b) {
        check_same(a, b, "add");
        auto y = nodes_[a.id].value;
        const auto& bv = nodes_[b.id].value;
        for (std::size_t k = 0; k < y.size(); ++k) y[k] += bv[k];
        Var v = push("add", std::move(y), {a, b});
        nodes_[v.id].backward = [this, a, b](Node& self) {
            auto& ga = nodes_[a.id].grad;
            auto& gb = nodes_[b.id].grad;
            for (std::size_t k = 0; k < self.grad.size(); ++k) {
                ga[k] += self.grad[k];
                gb[k] += self.grad[k];
            }
        };
        return v;
    }

    Var sub(Var a, Var b) {
        check_same(a, b, "sub");
        auto y = nodes_[a.id].value;
        const auto& bv = nodes_[b.id].value;
        for (std::size_t k = 0; k < y.size(); ++k) y[k] -= bv[k];
        Var v = push("sub", std::move(y), {a, b});
        nodes_[v.id].backward = [this, a, b](Node& self) {
            auto& ga = nodes_[a.id].grad;
            auto& gb = nodes_[b.id].grad;
            for (std::size_t k = 0; k < self.grad.size(); ++k) {
                ga[k] += self.grad[k];
                gb[k] -= self.grad[k];
            }
        };
        return v;
    }

    Var hadamard(Var a, Var b) {
        check_same(a, b, "hadamard");
        auto y = nodes_[a.id].value;
        const auto& bv = nodes_[b.id].value;
        for (std::size_t k = 0; k < y.size(); ++k) y[k] *= bv[k];
        Var v = push("hadamard", std::move(y), {a, b});
        nodes_[v.id].backward = [this, a, b](Node& self) {
            auto& an = nodes_[a.id];
            auto& bn = nodes_[b.id];
            for (std::size_t k = 0; k < self.grad.size(); ++k) {
                an.grad[k] += self.grad[k] * bn.value[k];
                bn.grad[k] += self.grad[k] * an.value[k];
            }
        };
        return v;
    }

    Var scale(Var a, double s) {
        auto y = nodes_[a.id].value;
        for (auto& x : y) x *= s;
        Var v = push("scale", std::move(y), {a});
        nodes_[v.id].backward = [this, a, s](Node& self) {
            auto& ga = nodes_[a.id].grad;
            for (std::size_t k = 0; k < self.grad.size(); ++k) ga[k] += s * self.grad[k];
        };
        return v;
    }

    Var concat(Var a, Var b) {
        auto y = nodes_[a.id].value;
        const auto& bv = nodes_[b.id].value;
        const std::size_t na = y.size();
        y.insert(y.end(), bv.begin(), bv.end());
        Var v = push("concat", std::move(y), {a, b});
        nodes_[v.id].backward = [this, a, b, na](Node& self) {
            auto& ga = nodes_[a.id].grad;
            auto& gb = nodes_[b.id].grad;
            for (std::size_t k = 0; k < na; ++k) ga[k] += self.grad[k];
            for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += self.grad[na + k];
        };
        return v;
    }

    /// Sub-vector at the given positions.
    Var gather(Var a, std::span<const std::size_t> positions) {
        std::vector<std::size_t> idx(positions.begin(), positions.end());
        const auto& av = nodes_[a.id].value;
        std::vector<double> y(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            if (idx[k] >= av.size()) throw ShapeError(where(a.id, "gather") + ": index out of range");
            y[k] = av[idx[k]];
        }
        Var v = push("gather", std::move(y), {a});
        nodes_[v.id].backward = [this, a, idx](Node& self) {
            auto& ga = nodes_[a.id].grad;
            for (std::size_t k = 0; k < idx.size(); ++k) ga[idx[k]] += self.grad[k];
        };
        return v;
    }

    Var relu(Var a) {
        auto y = nodes_[a.id].value;
        for (auto& x : y) x = x > 0 ? x : 0.0;
        Var v = push("relu", std::move(y), {a});
        nodes_[v.id].backward = [this, a](Node& self) {
            auto& an = nodes_[a.id];
            for (std::size_t k = 0; k < self.grad.size(); ++k)
                if (an.value[k] > 0) an.grad[k] += self.grad[k];
        };
        return v;
    }

    Var tanh(Var a) {
        auto y = nodes_[a.id].value;
        for (auto& x : y) x = std::tanh(x);
        Var v = push("tanh", std::move(y), {a});
        nodes_[v.id].backward = [this, a](Node& self) {
            auto& ga = nodes_[a.id].grad;
            for (std::size_t k = 0; k < self.grad.size(); ++k)
                ga[k] += self.grad[k] * (1.0 - self.value[k] * self.value[k]);
        };
        return v;
    }

    Var sigmoid(Var a) {
        auto y = nodes_[a.id].value;
        for (auto& x : y) x = cxr::sigmoid(x);
        Var v = push("sigmoid", std::move(y), {a});
        nodes_[v.id].backward = [this, a](Node& self) {
            auto& ga = nodes_[a.id].grad;
            for (std::size_t k = 0; k < self.grad.size(); ++k)
                ga[k] += self.grad[k] * self.value[k] * (1.0 - self.value[k]);
        };
        return v;
    }

    Var log_sigmoid(Var a) {
        auto y = nodes_[a.id].value;
        for (auto& x : y) x = cxr::log_sigmoid(x);
        Var v = push("log_sigmoid", std::move(y), {a});
        nodes_[v.id].backward = [this, a](Node& self) {
            auto& an = nodes_[a.id];
            // d/dx log σ(x) = σ(-x)
            for (std::size_t k = 0; k < self.grad.size(); ++k)
                an.grad[k] += self.grad[k] * cxr::sigmoid(-an.value[k]);
        };
        return v;
    }

    Var softmax(Var a) {
        auto y = nodes_[a.id].value;
        if (y.empty()) throw ShapeError(where(a.id, "softmax") + ": empty input");
        const double mx = *std::max_element(y.begin(), y.end());
        double z = 0;
        for (auto& x : y) {
            x = std::exp(x - mx);
            z += x;
        }
        for (auto& x : y) x /= z;
        Var v = push("softmax", std::move(y), {a});
        nodes_[v.id].backward = [this, a](Node& self) {
            auto& ga = nodes_[a.id].grad;
            double dot = 0;
            for (std::size_t k = 0; k < self.grad.size(); ++k) dot += self.grad[k] * self.value[k];
            for (std::size_t k = 0; k < self.grad.size(); ++k)
                ga[k] += self.value[k] * (self.grad[k] - dot);
        };
        return v;
    }

    Var dot(Var a, Var b) {
        check_same(a, b, "dot");
        const auto& av = nodes_[a.id].value;
        const auto& bv = nodes_[b.id].value;
        double s = 0;
        for (std::size_t k = 0; k < av.size(); ++k) s += av[k] * bv[k];
        Var v = push("dot", {s}, {a, b});
        nodes_[v.id].backward = [this, a, b](Node& self) {
            auto& an = nodes_[a.id];
            auto& bn = nodes_[b.id];
            for (std::size_t k = 0; k < an.value.size(); ++k) {
                an.grad[k] += self.grad[0] * bn.value[k];
                bn.grad[k] += self.grad[0] * an.value[k];
            }
        };
        return v;
    }

    Var sum(Var a) {
        double s = 0;
        for (double x : nodes_[a.id].value) s += x;
        Var v = push("sum", {s}, {a});
        nodes_[v.id].backward = [this, a](Node& self) {
            for (auto& g : nodes_[a.id].grad) g += self.grad[0];
        };
        return v;
    }

    /// Scalar mean of several scalar nodes.
    Var mean(std::span<const Var> scalars) {
        if (scalars.empty()) throw ShapeError("mean of zero terms");
        std::vector<Var> xs(scalars.begin(), scalars.end());
        double s = 0;
        for (auto x : xs) s += scalar(x);
        const double n = static_cast<double>(xs.size());
        Var v = push("mean", {s / n}, {});
        nodes_[v.id].backward = [this, xs, n](Node& self) {
            for (auto x : xs) nodes_[x.id].grad[0] += self.grad[0] / n;
        };
        return v;
    }

    // ---- backward --------------------------------------------------------

    /// Seeds d(loss)/d(loss) = 1 and propagates. A tape supports one pass.
    void backward(Var loss) {
        if (backward_done_) throw Error("backward() already ran on this tape");
        auto& ln = nodes_.at(loss.id);
        if (ln.value.size() != 1) throw ShapeError(where(loss.id, "backward") + ": loss must be scalar");
        for (auto& n : nodes_) n.grad.assign(n.value.size(), 0.0);
        ln.grad[0] = 1.0;
        for (std::size_t k = loss.id + 1; k-- > 0;) {
            auto& n = nodes_[k];
            if (n.backward) n.backward(n);
        }
        backward_done_ = true;
    }

private:
    struct Node {
        std::string op;
        std::vector<double> value;
        std::vector<double> grad;
        std::function<void(Node&)> backward;
        bool differentiable_input = false;
    };

    Var push(std::string op, std::vector<double> value, std::initializer_list<Var> = {}) {
        if (backward_done_) throw Error("cannot record onto a tape after backward()");
        nodes_.push_back(Node{std::move(op), std::move(value), {}, {}, false});
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::string where(std::uint32_t id, const std::string& ctx) const {
        return ctx + " (node " + std::to_string(id) + " '" + nodes_.at(id).op + "')";
    }

    void check_len(Var x, std::size_t n, const std::string& ctx) const {
        const auto got = nodes_.at(x.id).value.size();
        if (got != n)
            throw ShapeError("shape mismatch in " + ctx + ": " + where(x.id, "input") + " has " +
                             std::to_string(got) + " entries, expected " + std::to_string(n));
    }
    void check_same(Var a, Var b, const char* ctx) const {
        check_len(b, nodes_.at(a.id).value.size(), ctx);
    }

    const ParamStore& params_;
    Gradients* sink_;
    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

// ===========================================================================
// Adam

struct AdamConfig {
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment accumulators for one ParamStore.
class Adam {
public:
    Adam(const ParamStore& store, AdamConfig cfg) : cfg_(cfg), m_(store), v_(store) {}

    std::uint64_t steps() const { return t_; }
    const Gradients& first_moment() const { return m_; }
    const Gradients& second_moment() const { return v_; }

    /// Throws TrainingError (leaving the store untouched) on non-finite grads.
    void step(ParamStore& store, const Gradients& grads) {
        if (grads.size() != store.size()) throw ShapeError("gradient count does not match store");
        if (!grads.all_finite()) throw TrainingError("non-finite gradient; aborting optimization");
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t p = 0; p < store.size(); ++p) {
            ParamId id{p};
            auto& val = store[id].value;
            auto g = grads[id];
            auto m = m_[id];
            auto v = v_[id];
            if (g.size() != val.size()) throw ShapeError("gradient shape mismatch for " + store[id].name);
            for (std::size_t k = 0; k < val.size(); ++k) {
                m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
                v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
                const double mh = m[k] / bc1;
                const double vh = v[k] / bc2;
                val[k] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
        }
    }

private:
    AdamConfig cfg_;
    Gradients m_;
    Gradients v_;
    std::uint64_t t_ = 0;
};

// ===========================================================================
// Finite differences

/// Relative error with a small absolute floor so that near-zero gradients
/// are judged on an absolute scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

/// Worst relative error between `analytic[k]` and the central difference
/// (f(x + h e_k) - f(x - h e_k)) / 2h over the coordinates in `coords`
/// (all coordinates when empty). `loss_at` must not retain `x`.
template <class F>
double finite_difference_check(F&& loss_at, std::vector<double> x, std::span<const double> analytic,
                               double step, std::span<const std::size_t> coords = {}) {
    if (!(step > 0)) throw std::invalid_argument("finite difference step must be positive");
    if (analytic.size() != x.size()) throw ShapeError("analytic gradient has wrong size");
    std::vector<std::size_t> all;
    if (coords.empty()) {
        all.resize(x.size());
        for (std::size_t k = 0; k < x.size(); ++k) all[k] = k;
        coords = all;
    }
    double worst = 0;
    for (auto k : coords) {
        const double orig = x[k];
        x[k] = orig + step;
        const double fp = loss_at(std::span<const double>(x));
        x[k] = orig - step;
        const double fm = loss_at(std::span<const double>(x));
        x[k] = orig;
        worst = std::max(worst, relative_error(analytic[k], (fp - fm) / (2 * step)));
    }
    return worst;
}

// ===========================================================================
// Checkpoint container: magic, version, header JSON text, then arrays with
// shape headers and little-endian f64 payload.

namespace detail {
inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}
inline std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw Error("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
inline constexpr char kCheckpointMagic[8] = {'C', 'X', 'R', 'P', 'A', 'R', 'M', 'S'};
}  // namespace detail

inline void write_params(std::ostream& out, const ParamStore& store, std::uint64_t init_seed,
                         const std::string& header_json) {
    out.write(detail::kCheckpointMagic, 8);
    detail::put_u64(out, static_cast<std::uint64_t>(kFormatVersion));
    detail::put_u64(out, init_seed);
    detail::put_u64(out, header_json.size());
    out.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
    detail::put_u64(out, store.size());
    for (const auto& p : store) {
        detail::put_u64(out, p.name.size());
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        detail::put_u64(out, p.rows);
        detail::put_u64(out, p.cols);
        for (double x : p.value) detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
    }
}

struct LoadedParams {
    ParamStore store;
    std::uint64_t init_seed = 0;
    std::string header_json;
};

inline LoadedParams read_params(std::istream& in) {
    char magic[8];
    if (!in.read(magic, 8) || !std::equal(magic, magic + 8, detail::kCheckpointMagic))
        throw Error("not a parameter checkpoint (bad magic)");
    const auto version = detail::get_u64(in);
    if (version != static_cast<std::uint64_t>(kFormatVersion))
        throw Error("unsupported checkpoint version " + std::to_string(version));
    LoadedParams out;
    out.init_seed = detail::get_u64(in);
    const auto hlen = detail::get_u64(in);
    if (hlen > (1u << 24)) throw Error("checkpoint header too large");
    out.header_json.resize(hlen);
    if (!in.read(out.header_json.data(), static_cast<std::streamsize>(hlen))) throw Error("truncated checkpoint");
    const auto count = detail::get_u64(in);
    for (std::uint64_t p = 0; p < count; ++p) {
        const auto nlen = detail::get_u64(in);
        if (nlen > 4096) throw Error("checkpoint parameter name too long");
        std::string name(nlen, '\0');
        if (!in.read(name.data(), static_cast<std::streamsize>(nlen))) throw Error("truncated checkpoint");
        const auto rows = detail::get_u64(in);
        const auto cols = detail::get_u64(in);
        auto id = out.store.add(name, rows, cols);
        for (auto& x : out.store[id].value) x = std::bit_cast<double>(detail::get_u64(in));
    }
    return out;
}

}  // namespace cxr

#endif  // CXR_DIFF_HPP
