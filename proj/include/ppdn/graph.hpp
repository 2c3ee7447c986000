#pragma once

// Recorded computation graph with reverse-mode differentiation.
//
// Nodes are appended by the builder methods and evaluated lazily by
// forward(); the insertion order is the topological order. A graph is
// rebuilt for every batch. The gate node is the identity in the forward
// pass; when blocked it returns zero gradient to its input, which is how
// one branch of a paired loss is excluded from the update.

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ppdn/tensor.hpp"

namespace ppdn {

struct NodeId {
    std::size_t index = std::numeric_limits<std::size_t>::max();

    friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

enum class OpKind {
    input,
    parameter,
    matmul,
    add,
    relu,
    l2_normalize,
    concat,
    squared_diff_sum,
    softmax_cross_entropy,
    scale,
    sum,
    gate,
};

inline const char* to_string(OpKind kind) {
    switch (kind) {
        case OpKind::input: return "input";
        case OpKind::parameter: return "parameter";
        case OpKind::matmul: return "matmul";
        case OpKind::add: return "add";
        case OpKind::relu: return "relu";
        case OpKind::l2_normalize: return "l2-normalize";
        case OpKind::concat: return "concat";
        case OpKind::squared_diff_sum: return "squared-diff-sum";
        case OpKind::softmax_cross_entropy: return "softmax-cross-entropy";
        case OpKind::scale: return "scale";
        case OpKind::sum: return "sum";
        case OpKind::gate: return "gate";
    }
    return "unknown";
}

enum class GateMode { open, blocked };

// What a blocked gate emits during forward(). hold_values reuses the value
// from the previous evaluation, so a finite-difference probe sees the gated
// branch as a constant exactly like backward() does.
enum class BlockedGates { pass_through, hold_values };

// Norm floor used by l2-normalize.
inline constexpr double l2_normalize_floor = 1e-12;

struct TapeEntry {
    OpKind kind = OpKind::input;
    std::vector<NodeId> inputs;
    Shape shape;
    Tensor value;
    Tensor grad;
    GateMode gate = GateMode::open;
    double factor = 1.0;
    std::vector<std::size_t> labels;
    std::string name;
    bool has_value = false;
};

using Bindings = std::map<NodeId, Tensor>;

class Graph {
public:
    NodeId input(Tensor value, std::string name = {}) {
        return add_leaf(OpKind::input, std::move(value), std::move(name));
    }

    NodeId parameter(Tensor value, std::string name = {}) {
        return add_leaf(OpKind::parameter, std::move(value), std::move(name));
    }

    NodeId matmul(NodeId a, NodeId b) {
        const auto& sa = shape(a);
        const auto& sb = shape(b);
        if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) {
            throw Error("matmul: incompatible shapes " + to_string(sa) + " x " + to_string(sb));
        }
        return push(OpKind::matmul, {a, b}, Shape{sa[0], sb[1]});
    }

    // Elementwise sum. The second operand may also be a vector broadcast
    // over the rows of a matrix (bias addition).
    NodeId add(NodeId a, NodeId b) {
        const auto& sa = shape(a);
        const auto& sb = shape(b);
        const bool broadcast = sa.size() == 2 && sb.size() == 1 && sb[0] == sa[1];
        if (sa != sb && !broadcast) {
            throw Error("add: incompatible shapes " + to_string(sa) + " + " + to_string(sb));
        }
        return push(OpKind::add, {a, b}, sa);
    }

    NodeId relu(NodeId a) { return push(OpKind::relu, {a}, shape(a)); }

    // Normalizes a vector, or each row of a matrix, to unit L2 norm.
    NodeId l2_normalize(NodeId a) {
        if (shape(a).size() > 2) throw Error("l2-normalize: rank > 2 not supported");
        return push(OpKind::l2_normalize, {a}, shape(a));
    }

    // Concatenates along the last axis.
    NodeId concat(std::span<const NodeId> parts) {
        if (parts.empty()) throw Error("concat: no inputs");
        Shape out = shape(parts[0]);
        for (std::size_t i = 1; i < parts.size(); ++i) {
            const auto& s = shape(parts[i]);
            if (s.size() != out.size() || (s.size() == 2 && s[0] != out[0])) {
                throw Error("concat: incompatible shapes " + to_string(out) + " and " + to_string(s));
            }
            out.back() += s.back();
        }
        return push(OpKind::concat, {parts.begin(), parts.end()}, out);
    }

    NodeId concat(std::initializer_list<NodeId> parts) {
        return concat(std::span<const NodeId>(parts.begin(), parts.size()));
    }

    // sum((a - b)^2) over all elements.
    NodeId squared_diff_sum(NodeId a, NodeId b) {
        if (shape(a) != shape(b)) {
            throw Error("squared-diff-sum: shapes " + to_string(shape(a)) + " and " + to_string(shape(b)));
        }
        return push(OpKind::squared_diff_sum, {a, b}, Shape{1});
    }

    // Sum over rows of -log softmax(logits)[label].
    NodeId softmax_cross_entropy(NodeId logits, std::vector<std::size_t> labels) {
        const auto& s = shape(logits);
        if (s.size() != 2 || s[0] != labels.size()) {
            throw Error("softmax-cross-entropy: logits " + to_string(s) + " with " +
                        std::to_string(labels.size()) + " labels");
        }
        for (auto y : labels) {
            if (y >= s[1]) {
                throw Error("softmax-cross-entropy: label " + std::to_string(y) + " out of range for " +
                            std::to_string(s[1]) + " classes");
            }
        }
        NodeId id = push(OpKind::softmax_cross_entropy, {logits}, Shape{1});
        nodes_[id.index].labels = std::move(labels);
        return id;
    }

    NodeId scale(NodeId a, double factor) {
        NodeId id = push(OpKind::scale, {a}, shape(a));
        nodes_[id.index].factor = factor;
        return id;
    }

    NodeId sum(NodeId a) { return push(OpKind::sum, {a}, Shape{1}); }

    NodeId gate(NodeId a, GateMode mode) {
        NodeId id = push(OpKind::gate, {a}, shape(a));
        nodes_[id.index].gate = mode;
        return id;
    }

    std::size_t size() const noexcept { return nodes_.size(); }
    const TapeEntry& entry(NodeId id) const { return nodes_.at(check(id)); }
    const Shape& shape(NodeId id) const { return entry(id).shape; }
    bool evaluated() const noexcept { return evaluated_; }
    bool differentiated() const noexcept { return differentiated_; }

    const Tensor& value(NodeId id) const {
        const auto& e = entry(id);
        const bool leaf = e.kind == OpKind::input || e.kind == OpKind::parameter;
        if (!evaluated_ && !leaf) throw Error("value of " + describe(id) + " requested before forward");
        return e.value;
    }

    const Tensor& grad(NodeId id) const {
        if (!differentiated_) throw Error("grad of " + describe(id) + " requested before backward");
        return entry(id).grad;
    }

    std::vector<NodeId> parameters() const {
        std::vector<NodeId> out;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].kind == OpKind::parameter) out.push_back(NodeId{i});
        }
        return out;
    }

    // Replaces the value of an input or parameter node. Invalidates the
    // previous evaluation.
    void set_value(NodeId id, Tensor value) {
        auto& e = nodes_.at(check(id));
        if (e.kind != OpKind::input && e.kind != OpKind::parameter) {
            throw Error("cannot bind " + describe(id) + ": not an input or parameter");
        }
        if (value.shape() != e.shape) {
            throw Error("binding for " + describe(id) + ": expected shape " + to_string(e.shape) +
                        ", got " + to_string(value.shape()));
        }
        e.value = std::move(value);
        evaluated_ = false;
        differentiated_ = false;
    }

    void forward(const Bindings& bindings = {}, BlockedGates blocked = BlockedGates::pass_through) {
        for (const auto& [id, t] : bindings) set_value(id, t);
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            auto& e = nodes_[i];
            if (e.kind == OpKind::input || e.kind == OpKind::parameter) continue;
            if (e.kind == OpKind::gate && e.gate == GateMode::blocked &&
                blocked == BlockedGates::hold_values && e.has_value) {
                continue;
            }
            e.value = evaluate(e);
            e.has_value = true;
            if (!e.value.all_finite()) throw NumericalError("non-finite value at " + describe(NodeId{i}));
        }
        evaluated_ = true;
        differentiated_ = false;
    }

    void backward(NodeId loss) {
        if (!evaluated_) throw Error("backward called before forward");
        const auto& root = entry(loss);
        if (root.value.size() != 1) {
            throw Error("backward: loss " + describe(loss) + " is not a scalar, shape " + to_string(root.shape));
        }
        for (auto& e : nodes_) e.grad = Tensor(e.shape, 0.0);
        nodes_[loss.index].grad.fill(1.0);
        for (std::size_t i = loss.index + 1; i-- > 0;) propagate(nodes_[i]);
        differentiated_ = true;
    }

    std::string describe(NodeId id) const {
        if (id.index >= nodes_.size()) return "node #" + std::to_string(id.index) + " (invalid)";
        const auto& e = nodes_[id.index];
        std::string s = "node #" + std::to_string(id.index) + " (" + to_string(e.kind);
        if (!e.name.empty()) s += " '" + e.name + "'";
        return s + ")";
    }

private:
    std::size_t check(NodeId id) const {
        if (id.index >= nodes_.size()) throw Error(describe(id) + " does not belong to this graph");
        return id.index;
    }

    NodeId add_leaf(OpKind kind, Tensor value, std::string name) {
        TapeEntry e;
        e.kind = kind;
        e.shape = value.shape();
        e.value = std::move(value);
        e.name = std::move(name);
        e.has_value = true;
        nodes_.push_back(std::move(e));
        evaluated_ = false;
        differentiated_ = false;
        return NodeId{nodes_.size() - 1};
    }

    NodeId push(OpKind kind, std::vector<NodeId> inputs, Shape shape) {
        for (auto in : inputs) check(in);
        TapeEntry e;
        e.kind = kind;
        e.inputs = std::move(inputs);
        e.value = Tensor(shape, 0.0);
        e.shape = std::move(shape);
        nodes_.push_back(std::move(e));
        evaluated_ = false;
        differentiated_ = false;
        return NodeId{nodes_.size() - 1};
    }

    const Tensor& in(const TapeEntry& e, std::size_t k) const { return nodes_[e.inputs[k].index].value; }
    Tensor& in_grad(const TapeEntry& e, std::size_t k) { return nodes_[e.inputs[k].index].grad; }

    Tensor evaluate(const TapeEntry& e) const {
        switch (e.kind) {
            case OpKind::matmul: {
                const Tensor& a = in(e, 0);
                const Tensor& b = in(e, 1);
                Tensor out(e.shape, 0.0);
                const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
                for (std::size_t i = 0; i < m; ++i) {
                    double* orow = out.data().data() + i * n;
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a[i * k + p];
                        if (av == 0.0) continue;
                        const double* brow = b.data().data() + p * n;
                        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
                    }
                }
                return out;
            }
            case OpKind::add: {
                const Tensor& a = in(e, 0);
                const Tensor& b = in(e, 1);
                Tensor out = a;
                if (a.shape() == b.shape()) {
                    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
                } else {
                    const std::size_t n = b.size();
                    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
                }
                return out;
            }
            case OpKind::relu: {
                Tensor out = in(e, 0);
                for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
                return out;
            }
            case OpKind::l2_normalize: {
                Tensor out = in(e, 0);
                for (std::size_t r = 0; r < out.rows(); ++r) {
                    auto row = out.row(r);
                    const double n = std::max(norm(row), l2_normalize_floor);
                    for (auto& v : row) v /= n;
                }
                return out;
            }
            case OpKind::concat: {
                Tensor out(e.shape, 0.0);
                std::size_t offset = 0;
                for (std::size_t k = 0; k < e.inputs.size(); ++k) {
                    const Tensor& part = in(e, k);
                    const std::size_t w = part.cols();
                    for (std::size_t r = 0; r < out.rows(); ++r) {
                        auto src = part.row(r);
                        std::copy(src.begin(), src.end(), out.row(r).begin() + static_cast<std::ptrdiff_t>(offset));
                    }
                    offset += w;
                }
                return out;
            }
            case OpKind::squared_diff_sum: {
                const Tensor& a = in(e, 0);
                const Tensor& b = in(e, 1);
                double s = 0.0;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    const double d = a[i] - b[i];
                    s += d * d;
                }
                return Tensor::scalar(s);
            }
            case OpKind::softmax_cross_entropy: {
                const Tensor& z = in(e, 0);
                double s = 0.0;
                for (std::size_t r = 0; r < z.rows(); ++r) {
                    auto row = z.row(r);
                    s += log_sum_exp(row) - row[e.labels[r]];
                }
                return Tensor::scalar(s);
            }
            case OpKind::scale: {
                Tensor out = in(e, 0);
                for (auto& v : out.data()) v *= e.factor;
                return out;
            }
            case OpKind::sum: {
                const auto d = in(e, 0).data();
                double s = 0.0;
                for (double v : d) s += v;
                return Tensor::scalar(s);
            }
            case OpKind::gate:
                return in(e, 0);
            case OpKind::input:
            case OpKind::parameter:
                break;
        }
        return e.value;
    }

    void propagate(const TapeEntry& e) {
        const Tensor& g = e.grad;
        switch (e.kind) {
            case OpKind::input:
            case OpKind::parameter:
                return;
            case OpKind::matmul: {
                const Tensor& a = in(e, 0);
                const Tensor& b = in(e, 1);
                const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
                Tensor& ga = in_grad(e, 0);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * b[p * n + j];
                        ga[i * k + p] += s;
                    }
                }
                Tensor& gb = in_grad(e, 1);
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        const double av = a[i * k + p];
                        if (av == 0.0) continue;
                        for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
                    }
                }
                return;
            }
            case OpKind::add: {
                Tensor& ga = in_grad(e, 0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                Tensor& gb = in_grad(e, 1);
                const std::size_t n = gb.size();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                return;
            }
            case OpKind::relu: {
                const Tensor& a = in(e, 0);
                Tensor& ga = in_grad(e, 0);
                for (std::size_t i = 0; i < g.size(); ++i) {
                    if (a[i] > 0.0) ga[i] += g[i];
                }
                return;
            }
            case OpKind::l2_normalize: {
                const Tensor& a = in(e, 0);
                Tensor& ga = in_grad(e, 0);
                for (std::size_t r = 0; r < a.rows(); ++r) {
                    auto x = a.row(r);
                    auto y = e.value.row(r);
                    auto gy = g.row(r);
                    auto gx = ga.row(r);
                    const double n = norm(x);
                    if (n > l2_normalize_floor) {
                        const double yg = dot(y, gy);
                        for (std::size_t c = 0; c < x.size(); ++c) gx[c] += (gy[c] - y[c] * yg) / n;
                    } else {
                        for (std::size_t c = 0; c < x.size(); ++c) gx[c] += gy[c] / l2_normalize_floor;
                    }
                }
                return;
            }
            case OpKind::concat: {
                std::size_t offset = 0;
                for (std::size_t k = 0; k < e.inputs.size(); ++k) {
                    Tensor& gp = in_grad(e, k);
                    const std::size_t w = gp.cols();
                    for (std::size_t r = 0; r < gp.rows(); ++r) {
                        auto src = g.row(r);
                        auto dst = gp.row(r);
                        for (std::size_t c = 0; c < w; ++c) dst[c] += src[offset + c];
                    }
                    offset += w;
                }
                return;
            }
            case OpKind::squared_diff_sum: {
                const Tensor& a = in(e, 0);
                const Tensor& b = in(e, 1);
                const double s = g[0];
                Tensor& ga = in_grad(e, 0);
                for (std::size_t i = 0; i < a.size(); ++i) ga[i] += 2.0 * (a[i] - b[i]) * s;
                Tensor& gb = in_grad(e, 1);
                for (std::size_t i = 0; i < a.size(); ++i) gb[i] -= 2.0 * (a[i] - b[i]) * s;
                return;
            }
            case OpKind::softmax_cross_entropy: {
                const Tensor& z = in(e, 0);
                Tensor& gz = in_grad(e, 0);
                const double s = g[0];
                for (std::size_t r = 0; r < z.rows(); ++r) {
                    auto row = z.row(r);
                    auto grow = gz.row(r);
                    const double lse = log_sum_exp(row);
                    for (std::size_t c = 0; c < row.size(); ++c) {
                        const double p = std::exp(row[c] - lse);
                        grow[c] += s * (p - (c == e.labels[r] ? 1.0 : 0.0));
                    }
                }
                return;
            }
            case OpKind::scale: {
                Tensor& ga = in_grad(e, 0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += e.factor * g[i];
                return;
            }
            case OpKind::sum: {
                Tensor& ga = in_grad(e, 0);
                for (auto& v : ga.data()) v += g[0];
                return;
            }
            case OpKind::gate: {
                if (e.gate == GateMode::blocked) return;
                Tensor& ga = in_grad(e, 0);
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                return;
            }
        }
    }

    static double log_sum_exp(std::span<const double> row) {
        const double m = *std::max_element(row.begin(), row.end());
        double s = 0.0;
        for (double v : row) s += std::exp(v - m);
        return m + std::log(s);
    }

    std::vector<TapeEntry> nodes_;
    bool evaluated_ = false;
    bool differentiated_ = false;
};

} // namespace ppdn
