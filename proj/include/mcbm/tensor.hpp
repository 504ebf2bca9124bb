#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mcbm::diff {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

namespace detail {

// One recorded operation. Parents are only kept while the node participates
// in a differentiable computation; backward() releases them afterwards.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
};

}  // namespace detail

// Dense row-major float64 array. Copies share the underlying node; values of
// a produced tensor are never modified except for parameters, which the
// optimizer updates in place between forward passes.
class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    // Shape {values.size()}.
    static Tensor vector(std::vector<double> values, bool requires_grad = false);
    // Shape {rows, cols}.
    static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                         bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return node_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return node_->value; }
    std::span<double> mutable_values() { return node_->value; }
    double item() const;
    double at(std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->ensure_grad(); }
    void zero_grad();

    // Deep copy with no history.
    Tensor clone(bool requires_grad = false) const;

    const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse sweep from a scalar loss; accumulates into every leaf that
// requires grad and then discards the recorded graph.
void backward(const Tensor& loss);

// When enabled, every op checks its output for NaN/Inf and throws
// NumericError. On by default in debug builds.
void set_finite_checks(bool enabled) noexcept;
bool finite_checks() noexcept;

class FiniteCheckScope {
public:
    explicit FiniteCheckScope(bool enabled) noexcept : previous_(finite_checks()) {
        set_finite_checks(enabled);
    }
    ~FiniteCheckScope() { set_finite_checks(previous_); }
    FiniteCheckScope(const FiniteCheckScope&) = delete;
    FiniteCheckScope& operator=(const FiniteCheckScope&) = delete;

private:
    bool previous_;
};

// ---- operations ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// input[B,I] · weight[I,O] + bias[O]
Tensor affine(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor square(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

Tensor relu(const Tensor& t);
Tensor sigmoid(const Tensor& t);
Tensor tanh(const Tensor& t);
// axis refers to a dimension of a rank-1 or rank-2 tensor.
Tensor softmax(const Tensor& t, std::size_t axis);
Tensor log_softmax(const Tensor& t, std::size_t axis);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
// [B,D] -> [B]
Tensor row_sum(const Tensor& t);

Tensor reshape(const Tensor& t, Shape shape);
// Columns [offset, offset + width) of a [B,D] tensor.
Tensor slice_cols(const Tensor& t, std::size_t offset, std::size_t width);
Tensor concat_cols(const std::vector<Tensor>& parts);
// Cuts the gradient path.
Tensor detach(const Tensor& t);

}  // namespace mcbm::diff
