#pragma once

// Dense double-precision tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle onto an immutable node of the computation graph.
// Operations on tensors that require gradients record a backward closure and
// references to their inputs; `backward()` walks the graph once in reverse
// topological order and accumulates into every reachable leaf.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace nst {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad; // empty until first accumulation
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into parents' grads.
    std::function<void(Node&)> backward_fn;

    std::vector<double>& grad_buffer();
};

} // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    /// Size of one axis; negative axes count from the back.
    std::size_t size(int axis) const;
    std::size_t numel() const;

    std::span<const double> values() const;
    /// Writable storage. Only for leaves that are not part of a live graph
    /// (parameter updates, test perturbations).
    std::span<double> mutable_values();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    bool has_grad() const;
    /// Accumulated gradient; zeros when nothing has been accumulated yet.
    std::vector<double> grad() const;
    void zero_grad();

    /// Back-propagates from a single-element tensor with seed 1.
    void backward() const;

    /// Copy of the values without graph history.
    Tensor detach() const;

    const char* op_name() const;
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

// ---- linear algebra -------------------------------------------------------

/// a[.., m, k] x b[.., k, n]. Leading batch axes must match, or one operand is
/// rank 2 and is shared across the other's batch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor swap_axes(const Tensor& x, int axis_a, int axis_b);
Tensor reshape(const Tensor& x, Shape shape);

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);
/// max(x, floor); gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& x, double floor);

// ---- explicit broadcasts --------------------------------------------------

/// x[.., d] + v[d]
Tensor add_last(const Tensor& x, const Tensor& v);
/// x[.., d] * v[d]
Tensor mul_last(const Tensor& x, const Tensor& v);
/// Inserts a new axis of length n at `axis` and repeats x along it.
Tensor expand(const Tensor& x, int axis, std::size_t n);

// ---- structure ------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end);
/// Circular shift along `axis`: out[i] = x[(i - shift) mod n].
Tensor roll(const Tensor& x, int axis, long shift);

// ---- reductions and normalisation -----------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Row-wise softmax over the last axis (row max subtracted first).
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
/// Population mean and standard deviation over the second-to-last axis:
/// x[.., S, C] -> ([.., C], [.., C]).
std::pair<Tensor, Tensor> reduce_mean_std(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);
Tensor mae_loss(const Tensor& pred, const Tensor& target);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& x) { return neg(x); }
inline Tensor operator+(const Tensor& x, double c) { return add_scalar(x, c); }
inline Tensor operator*(const Tensor& x, double c) { return mul_scalar(x, c); }
inline Tensor operator*(double c, const Tensor& x) { return mul_scalar(x, c); }

} // namespace nst
