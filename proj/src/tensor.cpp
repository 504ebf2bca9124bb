#include "mcbm/tensor.hpp"

#include "mcbm/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace mcbm::diff {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

namespace {

#ifdef NDEBUG
std::atomic<bool> g_finite_checks{false};
#else
std::atomic<bool> g_finite_checks{true};
#endif

void check_finite(const Node& n, const char* op) {
    if (!g_finite_checks.load(std::memory_order_relaxed)) {
        return;
    }
    for (double v : n.value) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value produced by ") + op);
        }
    }
}

// Builds an output node. Parents are recorded only when at least one of them
// is differentiable.
Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   std::vector<NodePtr> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    check_finite(*n, op);
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const NodePtr& p) { return p->requires_grad; });
    if (any) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (!t.defined()) {
        throw UsageError(std::string(op) + ": undefined tensor");
    }
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got shape " + to_string(t.shape()));
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                             " vs " + to_string(b.shape()));
    }
}

}  // namespace

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != value.size()) {
        grad.assign(value.size(), 0.0);
    }
    return grad;
}

std::size_t numel(const Shape& shape) noexcept {
    std::size_t n = 1;
    for (auto d : shape) {
        n *= d;
    }
    return n;
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "," : "") << shape[i];
    }
    os << ']';
    return os.str();
}

void set_finite_checks(bool enabled) noexcept { g_finite_checks.store(enabled); }
bool finite_checks() noexcept { return g_finite_checks.load(); }

// ---- Tensor -------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (diff::numel(shape) != values.size()) {
        throw DimensionError("tensor: " + std::to_string(values.size()) +
                             " values do not fill shape " + diff::to_string(shape));
    }
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const auto n = diff::numel(shape);
    return from(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({}, {v}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return from({n}, std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                      bool requires_grad) {
    return from({rows, cols}, std::move(values), requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) {
        throw UsageError("tensor: shape of undefined tensor");
    }
    return node_->shape;
}

std::size_t Tensor::rows() const {
    const auto& s = shape();
    return s.empty() ? 1 : s[0];
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    return s.size() < 2 ? 1 : s[1];
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("item: tensor of shape " + to_string(shape()) + " is not a scalar");
    }
    return node_->value[0];
}

void Tensor::zero_grad() {
    if (node_) {
        node_->grad.assign(node_->value.size(), 0.0);
    }
}

Tensor Tensor::clone(bool requires_grad) const {
    return from(shape(), node_->value, requires_grad);
}

// ---- backward -----------------------------------------------------------

void backward(const Tensor& loss) {
    if (!loss.defined()) {
        throw UsageError("backward: undefined loss");
    }
    if (loss.numel() != 1) {
        throw UsageError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
    }
    const NodePtr& root = loss.node();
    if (!root->requires_grad) {
        return;
    }

    // Iterative post-order DFS gives a topological order of the tape.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) {
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) {
            n->backward_fn(*n);
        }
    }
    // Discard the tape: interior nodes drop their history.
    for (Node* n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
        }
    }
}

// ---- linear algebra -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    if (b.rows() != k) {
        throw DimensionError("matmul: inner dimensions differ " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    }
    std::vector<double> out(m * n, 0.0);
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = av[i * k + p];
            const double* brow = bv.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) {
                orow[j] += aip * brow[j];
            }
        }
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result("matmul", {m, n}, std::move(out), {an, bn}, [an, bn, m, k, n](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            auto& ga = an->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* brow = bn->value.data() + p * n;
                    const double* grow = g.data() + i * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        acc += grow[j] * brow[j];
                    }
                    ga[i * k + p] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = an->value[i * k + p];
                    double* gbrow = gb.data() + p * n;
                    for (std::size_t j = 0; j < n; ++j) {
                        gbrow[j] += aip * grow[j];
                    }
                }
            }
        }
    });
}

Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    require_rank(input, 2, "affine");
    require_rank(weight, 2, "affine");
    require_rank(bias, 1, "affine");
    if (input.cols() != weight.rows() || bias.numel() != weight.cols()) {
        throw DimensionError("affine: input " + to_string(input.shape()) + ", weight " +
                             to_string(weight.shape()) + ", bias " + to_string(bias.shape()));
    }
    Tensor prod = matmul(input, weight);
    const std::size_t m = prod.rows(), n = prod.cols();
    std::vector<double> out(prod.values().begin(), prod.values().end());
    const auto bv = bias.values();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i * n + j] += bv[j];
        }
    }
    NodePtr pn = prod.node(), bn = bias.node();
    return make_result("affine", {m, n}, std::move(out), {pn, bn}, [pn, bn, m, n](Node& self) {
        if (pn->requires_grad) {
            auto& gp = pn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                gp[i] += self.grad[i];
            }
        }
        if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t j = 0; j < n; ++j) {
                    gb[j] += self.grad[i * n + j];
                }
            }
        }
    });
}

// ---- elementwise --------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.at(i) + b.at(i);
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result("add", a.shape(), std::move(out), {an, bn}, [an, bn](Node& self) {
        for (Node* p : {an.get(), bn.get()}) {
            if (p->requires_grad) {
                auto& gp = p->ensure_grad();
                for (std::size_t i = 0; i < gp.size(); ++i) {
                    gp[i] += self.grad[i];
                }
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.at(i) - b.at(i);
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result("sub", a.shape(), std::move(out), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& ga = an->ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += self.grad[i];
            }
        }
        if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] -= self.grad[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.at(i) * b.at(i);
    }
    NodePtr an = a.node(), bn = b.node();
    return make_result("mul", a.shape(), std::move(out), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad) {
            auto& ga = an->ensure_grad();
            for (std::size_t i = 0; i < ga.size(); ++i) {
                ga[i] += self.grad[i] * bn->value[i];
            }
        }
        if (bn->requires_grad) {
            auto& gb = bn->ensure_grad();
            for (std::size_t i = 0; i < gb.size(); ++i) {
                gb[i] += self.grad[i] * an->value[i];
            }
        }
    });
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) {
        v *= s;
    }
    NodePtr an = a.node();
    return make_result("scale", a.shape(), std::move(out), {an}, [an, s](Node& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += s * self.grad[i];
        }
    });
}

Tensor add_scalar(const Tensor& a, double s) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (auto& v : out) {
        v += s;
    }
    NodePtr an = a.node();
    return make_result("add_scalar", a.shape(), std::move(out), {an}, [an](Node& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += self.grad[i];
        }
    });
}

Tensor square(const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.at(i) * a.at(i);
    }
    NodePtr an = a.node();
    return make_result("square", a.shape(), std::move(out), {an}, [an](Node& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) {
            ga[i] += 2.0 * an->value[i] * self.grad[i];
        }
    });
}

Tensor relu(const Tensor& t) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = t.at(i) <= 0.0 ? 0.0 : t.at(i);
    }
    NodePtr tn = t.node();
    return make_result("relu", t.shape(), std::move(out), {tn}, [tn](Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < gt.size(); ++i) {
            if (tn->value[i] > 0.0) {
                gt[i] += self.grad[i];
            }
        }
    });
}

Tensor sigmoid(const Tensor& t) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = t.at(i);
        // Split by sign so exp never overflows.
        if (x >= 0.0) {
            out[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            out[i] = e / (1.0 + e);
        }
    }
    NodePtr tn = t.node();
    return make_result("sigmoid", t.shape(), std::move(out), {tn}, [tn](Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < gt.size(); ++i) {
            const double s = self.value[i];
            gt[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor tanh(const Tensor& t) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::tanh(t.at(i));
    }
    NodePtr tn = t.node();
    return make_result("tanh", t.shape(), std::move(out), {tn}, [tn](Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < gt.size(); ++i) {
            const double y = self.value[i];
            gt[i] += self.grad[i] * (1.0 - y * y);
        }
    });
}

// ---- softmax family -----------------------------------------------------

namespace {

struct AxisLayout {
    std::size_t groups;  // number of independent softmax groups
    std::size_t length;  // entries per group
    std::size_t stride;  // distance between consecutive entries of a group
    std::size_t step;    // distance between group starts
};

AxisLayout axis_layout(const Tensor& t, std::size_t axis, const char* op) {
    if (t.rank() == 1 && axis == 0) {
        return {1, t.numel(), 1, 0};
    }
    if (t.rank() == 2 && axis == 1) {
        return {t.rows(), t.cols(), 1, t.cols()};
    }
    if (t.rank() == 2 && axis == 0) {
        return {t.cols(), t.rows(), t.cols(), 1};
    }
    throw DimensionError(std::string(op) + ": invalid axis " + std::to_string(axis) +
                         " for shape " + to_string(t.shape()));
}

}  // namespace

Tensor log_softmax(const Tensor& t, std::size_t axis) {
    const AxisLayout L = axis_layout(t, axis, "log_softmax");
    std::vector<double> out(t.numel());
    const auto v = t.values();
    for (std::size_t g = 0; g < L.groups; ++g) {
        const std::size_t base = g * L.step;
        double mx = -INFINITY;
        for (std::size_t i = 0; i < L.length; ++i) {
            mx = std::max(mx, v[base + i * L.stride]);
        }
        double s = 0.0;
        for (std::size_t i = 0; i < L.length; ++i) {
            s += std::exp(v[base + i * L.stride] - mx);
        }
        const double lse = mx + std::log(s);
        for (std::size_t i = 0; i < L.length; ++i) {
            out[base + i * L.stride] = v[base + i * L.stride] - lse;
        }
    }
    NodePtr tn = t.node();
    return make_result("log_softmax", t.shape(), std::move(out), {tn}, [tn, L](Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t g = 0; g < L.groups; ++g) {
            const std::size_t base = g * L.step;
            double gs = 0.0;
            for (std::size_t i = 0; i < L.length; ++i) {
                gs += self.grad[base + i * L.stride];
            }
            for (std::size_t i = 0; i < L.length; ++i) {
                const std::size_t idx = base + i * L.stride;
                gt[idx] += self.grad[idx] - std::exp(self.value[idx]) * gs;
            }
        }
    });
}

Tensor softmax(const Tensor& t, std::size_t axis) {
    const AxisLayout L = axis_layout(t, axis, "softmax");
    std::vector<double> out(t.numel());
    const auto v = t.values();
    for (std::size_t g = 0; g < L.groups; ++g) {
        const std::size_t base = g * L.step;
        double mx = -INFINITY;
        for (std::size_t i = 0; i < L.length; ++i) {
            mx = std::max(mx, v[base + i * L.stride]);
        }
        double s = 0.0;
        for (std::size_t i = 0; i < L.length; ++i) {
            const double e = std::exp(v[base + i * L.stride] - mx);
            out[base + i * L.stride] = e;
            s += e;
        }
        for (std::size_t i = 0; i < L.length; ++i) {
            out[base + i * L.stride] /= s;
        }
    }
    NodePtr tn = t.node();
    return make_result("softmax", t.shape(), std::move(out), {tn}, [tn, L](Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t g = 0; g < L.groups; ++g) {
            const std::size_t base = g * L.step;
            double dot = 0.0;
            for (std::size_t i = 0; i < L.length; ++i) {
                const std::size_t idx = base + i * L.stride;
                dot += self.grad[idx] * self.value[idx];
            }
            for (std::size_t i = 0; i < L.length; ++i) {
                const std::size_t idx = base + i * L.stride;
                gt[idx] += self.value[idx] * (self.grad[idx] - dot);
            }
        }
    });
}

// ---- reductions and reshaping -------------------------------------------

Tensor sum(const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) {
        s += v;
    }
    NodePtr tn = t.node();
    return make_result("sum", {}, {s}, {tn}, [tn](Node& self) {
        auto& gt = tn->ensure_grad();
        for (auto& g : gt) {
            g += self.grad[0];
        }
    });
}

Tensor mean(const Tensor& t) {
    if (t.numel() == 0) {
        throw DimensionError("mean: empty tensor");
    }
    return scale(sum(t), 1.0 / static_cast<double>(t.numel()));
}

Tensor row_sum(const Tensor& t) {
    require_rank(t, 2, "row_sum");
    const std::size_t m = t.rows(), n = t.cols();
    std::vector<double> out(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            out[i] += t.at(i, j);
        }
    }
    NodePtr tn = t.node();
    return make_result("row_sum", {m}, std::move(out), {tn}, [tn, m, n](Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                gt[i * n + j] += self.grad[i];
            }
        }
    });
}

Tensor reshape(const Tensor& t, Shape shape) {
    if (numel(shape) != t.numel()) {
        throw DimensionError("reshape: cannot view " + to_string(t.shape()) + " as " +
                             to_string(shape));
    }
    std::vector<double> out(t.values().begin(), t.values().end());
    NodePtr tn = t.node();
    return make_result("reshape", std::move(shape), std::move(out), {tn}, [tn](Node& self) {
        auto& gt = tn->ensure_grad();
        for (std::size_t i = 0; i < gt.size(); ++i) {
            gt[i] += self.grad[i];
        }
    });
}

Tensor slice_cols(const Tensor& t, std::size_t offset, std::size_t width) {
    require_rank(t, 2, "slice_cols");
    const std::size_t m = t.rows(), n = t.cols();
    if (offset + width > n) {
        throw DimensionError("slice_cols: columns [" + std::to_string(offset) + ", " +
                             std::to_string(offset + width) + ") out of " + to_string(t.shape()));
    }
    std::vector<double> out(m * width);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            out[i * width + j] = t.at(i, offset + j);
        }
    }
    NodePtr tn = t.node();
    return make_result("slice_cols", {m, width}, std::move(out), {tn},
                       [tn, m, n, offset, width](Node& self) {
                           auto& gt = tn->ensure_grad();
                           for (std::size_t i = 0; i < m; ++i) {
                               for (std::size_t j = 0; j < width; ++j) {
                                   gt[i * n + offset + j] += self.grad[i * width + j];
                               }
                           }
                       });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw DimensionError("concat_cols: no inputs");
    }
    const std::size_t m = parts.front().rows();
    std::size_t n = 0;
    for (const auto& p : parts) {
        require_rank(p, 2, "concat_cols");
        if (p.rows() != m) {
            throw DimensionError("concat_cols: row counts differ");
        }
        n += p.cols();
    }
    std::vector<double> out(m * n);
    std::vector<NodePtr> nodes;
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.cols();
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
                out[i * n + off + j] = p.at(i, j);
            }
        }
        nodes.push_back(p.node());
        offsets.push_back(off);
        off += w;
    }
    auto captured = nodes;
    return make_result("concat_cols", {m, n}, std::move(out), std::move(nodes),
                       [captured, offsets, m, n](Node& self) {
                           for (std::size_t k = 0; k < captured.size(); ++k) {
                               Node* p = captured[k].get();
                               if (!p->requires_grad) {
                                   continue;
                               }
                               const std::size_t w = p->shape[1];
                               auto& gp = p->ensure_grad();
                               for (std::size_t i = 0; i < m; ++i) {
                                   for (std::size_t j = 0; j < w; ++j) {
                                       gp[i * w + j] += self.grad[i * n + offsets[k] + j];
                                   }
                               }
                           }
                       });
}

Tensor detach(const Tensor& t) { return t.clone(false); }

}  // namespace mcbm::diff
