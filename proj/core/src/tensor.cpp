#include "nst/tensor.hpp"

#include "nst/autograd.hpp"
#include "nst/errors.hpp"

#include <Eigen/Core>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace nst {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

const detail::Node& require(const std::shared_ptr<detail::Node>& node) {
    if (!node) {
        throw PreconditionError("operation on an undefined tensor");
    }
    return *node;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(fmt::format("{}: shape mismatch {} vs {}", op, shape_str(a.shape()),
                                         shape_str(b.shape())));
    }
}

void accumulate(detail::Node& node, std::span<const double> g) {
    if (!node.requires_grad) {
        return;
    }
    auto& buf = node.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
        buf[i] += g[i];
    }
}

std::size_t prod(const Shape& s, std::size_t begin, std::size_t end) {
    std::size_t p = 1;
    for (std::size_t i = begin; i < end; ++i) {
        p *= s[i];
    }
    return p;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = fwd(xv[i]);
    }
    return make_result(op, x.shape(), std::move(out), {x},
                       [deriv](std::span<const double> g, const auto& in) {
                           auto& node = *in[0];
                           auto& buf = node.grad_buffer();
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               buf[i] += g[i] * deriv(node.values[i]);
                           }
                       });
}

} // namespace

std::vector<double>& detail::Node::grad_buffer() {
    if (grad.empty()) {
        grad.assign(values.size(), 0.0);
    }
    return grad;
}

std::size_t shape_numel(const Shape& shape) {
    return prod(shape, 0, shape.size());
}

std::string shape_str(const Shape& shape) {
    return fmt::format("[{}]", fmt::join(shape, ", "));
}

std::size_t normalize_axis(int axis, std::size_t rank) {
    const long r = static_cast<long>(rank);
    const long a = axis < 0 ? axis + r : axis;
    if (a < 0 || a >= r) {
        throw DimensionError(fmt::format("axis {} out of range for rank {}", axis, rank));
    }
    return static_cast<std::size_t>(a);
}

void check_finite(std::span<const double> values, const char* what) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            throw NumericalError(fmt::format("{}: non-finite value at flat index {}", what, i));
        }
    }
}

bool grad_enabled() {
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) {
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard() {
    g_grad_enabled = previous_;
}

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError(fmt::format("{}: shape {} does not match {} values", op, shape_str(shape),
                                         values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->op = op;
    if (g_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (const auto& t : inputs) {
                node->parents.push_back(t.node());
            }
            node->backward_fn = [fn = std::move(backward)](detail::Node& self) {
                fn(self.grad, self.parents);
            };
        }
    }
    return Tensor(std::move(node));
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError(fmt::format("tensor of shape {} needs {} values, got {}", shape_str(shape),
                                         shape_numel(shape), values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    return require(node_).shape;
}

std::size_t Tensor::size(int axis) const {
    return shape()[normalize_axis(axis, rank())];
}

std::size_t Tensor::numel() const {
    return require(node_).values.size();
}

std::span<const double> Tensor::values() const {
    return require(node_).values;
}

std::span<double> Tensor::mutable_values() {
    require(node_);
    return node_->values;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError(fmt::format("item() on tensor of shape {}", shape_str(shape())));
    }
    return node_->values[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const auto& s = shape();
    if (index.size() != s.size()) {
        throw DimensionError(fmt::format("index of rank {} into shape {}", index.size(), shape_str(s)));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= s[axis]) {
            throw DimensionError(fmt::format("index {} out of range on axis {} of {}", i, axis, shape_str(s)));
        }
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->values[flat];
}

bool Tensor::requires_grad() const {
    return node_ && node_->requires_grad;
}

bool Tensor::has_grad() const {
    return node_ && !node_->grad.empty();
}

std::vector<double> Tensor::grad() const {
    const auto& n = require(node_);
    if (n.grad.empty()) {
        return std::vector<double>(n.values.size(), 0.0);
    }
    return n.grad;
}

void Tensor::zero_grad() {
    require(node_);
    node_->grad.clear();
}

const char* Tensor::op_name() const {
    return require(node_).op;
}

Tensor Tensor::detach() const {
    return from(shape(), std::vector<double>(values().begin(), values().end()));
}

void Tensor::backward() const {
    const auto& root = require(node_);
    if (root.values.size() != 1) {
        throw DimensionError(fmt::format("backward() needs a single-element tensor, got {}", shape_str(root.shape)));
    }
    if (!root.requires_grad) {
        return;
    }
    // Iterative post-order DFS; each node is visited once.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> seen;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::Node* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto* node : order) {
        if (node->backward_fn) {
            node->grad.assign(node->values.size(), 0.0);
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) {
            (*it)->backward_fn(**it);
        }
    }
}

// ---- linear algebra ----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa.size() < 2 || sb.size() < 2) {
        throw DimensionError(fmt::format("matmul needs rank >= 2 operands, got {} and {}", shape_str(sa),
                                         shape_str(sb)));
    }
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const std::size_t kb = sb[sb.size() - 2];
    const std::size_t n = sb[sb.size() - 1];
    const Shape lead_a(sa.begin(), sa.end() - 2);
    const Shape lead_b(sb.begin(), sb.end() - 2);
    if (k != kb) {
        throw DimensionError(fmt::format("matmul inner dimensions differ: {} x {}", shape_str(sa), shape_str(sb)));
    }
    Shape lead;
    bool share_a = false;
    bool share_b = false;
    if (lead_a == lead_b) {
        lead = lead_a;
    } else if (lead_b.empty()) {
        lead = lead_a;
        share_b = true;
    } else if (lead_a.empty()) {
        lead = lead_b;
        share_a = true;
    } else {
        throw DimensionError(fmt::format("matmul batch axes not broadcastable: {} x {}", shape_str(sa),
                                         shape_str(sb)));
    }
    const std::size_t batch = shape_numel(lead);
    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    std::vector<double> out(batch * m * n);
    const double* pa = a.values().data();
    const double* pb = b.values().data();

    if (share_b && batch > 1) {
        // One GEMM over the stacked rows of a.
        MutMap(out.data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(n)).noalias() =
            ConstMap(pa, static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(k)) *
            ConstMap(pb, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    } else {
        for (std::size_t i = 0; i < batch; ++i) {
            const double* ai = pa + (share_a ? 0 : i * m * k);
            const double* bi = pb + (share_b ? 0 : i * k * n);
            MutMap(out.data() + i * m * n, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n)).noalias() =
                ConstMap(ai, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k)) *
                ConstMap(bi, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
        }
    }
    return make_result(
        "matmul", std::move(out_shape), std::move(out), {a, b},
        [batch, m, k, n, share_a, share_b](std::span<const double> g, const auto& in) {
            auto& na = *in[0];
            auto& nb = *in[1];
            const auto M = static_cast<Eigen::Index>(m);
            const auto K = static_cast<Eigen::Index>(k);
            const auto N = static_cast<Eigen::Index>(n);
            if (share_b && batch > 1) {
                const auto BM = static_cast<Eigen::Index>(batch * m);
                ConstMap G(g.data(), BM, N);
                if (na.requires_grad) {
                    MutMap(na.grad_buffer().data(), BM, K).noalias() += G * ConstMap(nb.values.data(), K, N).transpose();
                }
                if (nb.requires_grad) {
                    MutMap(nb.grad_buffer().data(), K, N).noalias() +=
                        ConstMap(na.values.data(), BM, K).transpose() * G;
                }
                return;
            }
            for (std::size_t i = 0; i < batch; ++i) {
                ConstMap G(g.data() + i * m * n, M, N);
                const std::size_t oa = share_a ? 0 : i * m * k;
                const std::size_t ob = share_b ? 0 : i * k * n;
                if (na.requires_grad) {
                    MutMap(na.grad_buffer().data() + oa, M, K).noalias() +=
                        G * ConstMap(nb.values.data() + ob, K, N).transpose();
                }
                if (nb.requires_grad) {
                    MutMap(nb.grad_buffer().data() + ob, K, N).noalias() +=
                        ConstMap(na.values.data() + oa, M, K).transpose() * G;
                }
            }
        });
}

Tensor swap_axes(const Tensor& x, int axis_a, int axis_b) {
    const auto& s = x.shape();
    const std::size_t r = s.size();
    const std::size_t ia = normalize_axis(axis_a, r);
    const std::size_t ib = normalize_axis(axis_b, r);
    Shape out_shape = s;
    std::swap(out_shape[ia], out_shape[ib]);
    // Input strides permuted into output axis order.
    std::vector<std::size_t> in_stride(r, 1);
    for (std::size_t i = r; i-- > 1;) {
        in_stride[i - 1] = in_stride[i] * s[i];
    }
    std::vector<std::size_t> stride = in_stride;
    std::swap(stride[ia], stride[ib]);
    const std::size_t total = x.numel();
    std::vector<std::size_t> perm_index(total);
    {
        std::vector<std::size_t> idx(r, 0);
        std::size_t src = 0;
        for (std::size_t o = 0; o < total; ++o) {
            perm_index[o] = src;
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                src += stride[d];
                if (idx[d] < out_shape[d]) {
                    break;
                }
                src -= stride[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
    auto xv = x.values();
    std::vector<double> out(total);
    for (std::size_t o = 0; o < total; ++o) {
        out[o] = xv[perm_index[o]];
    }
    return make_result("swap_axes", std::move(out_shape), std::move(out), {x},
                       [perm = std::move(perm_index)](std::span<const double> g, const auto& in) {
                           auto& buf = in[0]->grad_buffer();
                           for (std::size_t o = 0; o < g.size(); ++o) {
                               buf[perm[o]] += g[o];
                           }
                       });
}

Tensor transpose_last2(const Tensor& x) {
    if (x.rank() < 2) {
        throw DimensionError(fmt::format("transpose needs rank >= 2, got {}", shape_str(x.shape())));
    }
    return swap_axes(x, -2, -1);
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw DimensionError(fmt::format("cannot reshape {} into {}", shape_str(x.shape()), shape_str(shape)));
    }
    auto xv = x.values();
    return make_result("reshape", std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x},
                       [](std::span<const double> g, const auto& in) { accumulate(*in[0], g); });
}

// ---- elementwise -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    return make_result("add", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, const auto& in) {
        accumulate(*in[0], g);
        accumulate(*in[1], g);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] - bv[i];
    }
    return make_result("sub", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, const auto& in) {
        accumulate(*in[0], g);
        if (in[1]->requires_grad) {
            auto& buf = in[1]->grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                buf[i] -= g[i];
            }
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    return make_result("mul", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, const auto& in) {
        auto& na = *in[0];
        auto& nb = *in[1];
        if (na.requires_grad) {
            auto& buf = na.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                buf[i] += g[i] * nb.values[i];
            }
        }
        if (nb.requires_grad) {
            auto& buf = nb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                buf[i] += g[i] * na.values[i];
            }
        }
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "div");
    auto av = a.values();
    auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] / bv[i];
    }
    return make_result("div", a.shape(), std::move(out), {a, b}, [](std::span<const double> g, const auto& in) {
        auto& na = *in[0];
        auto& nb = *in[1];
        if (na.requires_grad) {
            auto& buf = na.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                buf[i] += g[i] / nb.values[i];
            }
        }
        if (nb.requires_grad) {
            auto& buf = nb.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) {
                buf[i] -= g[i] * na.values[i] / (nb.values[i] * nb.values[i]);
            }
        }
    });
}

Tensor neg(const Tensor& x) {
    return mul_scalar(x, -1.0);
}

Tensor add_scalar(const Tensor& x, double c) {
    return unary(x, "add_scalar", [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
    return unary(x, "mul_scalar", [c](double v) { return v * c; }, [c](double) { return c; });
}

Tensor exp(const Tensor& x) {
    return unary(x, "exp", [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
    return unary(x, "log", [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor relu(const Tensor& x) {
    return unary(x, "relu", [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return unary(
        x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
        [](double v) { return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(-0.5 * v * v); });
}

Tensor tanh(const Tensor& x) {
    return unary(
        x, "tanh", [](double v) { return std::tanh(v); },
        [](double v) {
            const double t = std::tanh(v);
            return 1.0 - t * t;
        });
}

Tensor clamp_min(const Tensor& x, double floor) {
    return unary(
        x, "clamp_min", [floor](double v) { return v < floor ? floor : v; },
        [floor](double v) { return v < floor ? 0.0 : 1.0; });
}

// ---- explicit broadcasts -----------------------------------------------------

Tensor add_last(const Tensor& x, const Tensor& v) {
    if (v.rank() != 1 || x.rank() < 1 || x.size(-1) != v.size(0)) {
        throw DimensionError(fmt::format("add_last: cannot add {} to rows of {}", shape_str(v.shape()),
                                         shape_str(x.shape())));
    }
    const std::size_t d = v.size(0);
    auto xv = x.values();
    auto vv = v.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] + vv[i % d];
    }
    return make_result("add_last", x.shape(), std::move(out), {x, v},
                       [d](std::span<const double> g, const auto& in) {
                           accumulate(*in[0], g);
                           if (in[1]->requires_grad) {
                               auto& buf = in[1]->grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   buf[i % d] += g[i];
                               }
                           }
                       });
}

Tensor mul_last(const Tensor& x, const Tensor& v) {
    if (v.rank() != 1 || x.rank() < 1 || x.size(-1) != v.size(0)) {
        throw DimensionError(fmt::format("mul_last: cannot scale rows of {} by {}", shape_str(x.shape()),
                                         shape_str(v.shape())));
    }
    const std::size_t d = v.size(0);
    auto xv = x.values();
    auto vv = v.values();
    std::vector<double> out(xv.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * vv[i % d];
    }
    return make_result("mul_last", x.shape(), std::move(out), {x, v},
                       [d](std::span<const double> g, const auto& in) {
                           auto& nx = *in[0];
                           auto& nv = *in[1];
                           if (nx.requires_grad) {
                               auto& buf = nx.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   buf[i] += g[i] * nv.values[i % d];
                               }
                           }
                           if (nv.requires_grad) {
                               auto& buf = nv.grad_buffer();
                               for (std::size_t i = 0; i < g.size(); ++i) {
                                   buf[i % d] += g[i] * nx.values[i];
                               }
                           }
                       });
}

Tensor expand(const Tensor& x, int axis, std::size_t n) {
    const auto& s = x.shape();
    const std::size_t pos = normalize_axis(axis, s.size() + 1);
    const std::size_t outer = prod(s, 0, pos);
    const std::size_t inner = prod(s, pos, s.size());
    Shape out_shape = s;
    out_shape.insert(out_shape.begin() + static_cast<long>(pos), n);
    auto xv = x.values();
    std::vector<double> out(outer * n * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t j = 0; j < n; ++j) {
            std::copy_n(xv.data() + o * inner, inner, out.data() + (o * n + j) * inner);
        }
    }
    return make_result("expand", std::move(out_shape), std::move(out), {x},
                       [outer, inner, n](std::span<const double> g, const auto& in) {
                           auto& buf = in[0]->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t j = 0; j < n; ++j) {
                                   const double* src = g.data() + (o * n + j) * inner;
                                   for (std::size_t i = 0; i < inner; ++i) {
                                       buf[o * inner + i] += src[i];
                                   }
                               }
                           }
                       });
}

// ---- structure ---------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) {
        throw DimensionError("concat of zero tensors");
    }
    const Shape& s0 = parts[0].shape();
    const std::size_t ax = normalize_axis(axis, s0.size());
    std::vector<std::size_t> widths;
    std::size_t total_axis = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        bool ok = s.size() == s0.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            ok = (i == ax) || s[i] == s0[i];
        }
        if (!ok) {
            throw DimensionError(fmt::format("concat on axis {}: {} incompatible with {}", axis, shape_str(s),
                                             shape_str(s0)));
        }
        widths.push_back(s[ax]);
        total_axis += s[ax];
    }
    const std::size_t outer = prod(s0, 0, ax);
    const std::size_t inner = prod(s0, ax + 1, s0.size());
    Shape out_shape = s0;
    out_shape[ax] = total_axis;
    std::vector<double> out(outer * total_axis * inner);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto pv = parts[p].values();
        const std::size_t chunk = widths[p] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * total_axis * inner + offset * inner);
        }
        offset += widths[p];
    }
    return make_result("concat", std::move(out_shape), std::move(out), parts,
                       [outer, inner, total_axis, widths](std::span<const double> g, const auto& in) {
                           std::size_t off = 0;
                           for (std::size_t p = 0; p < in.size(); ++p) {
                               const std::size_t chunk = widths[p] * inner;
                               if (in[p]->requires_grad) {
                                   auto& buf = in[p]->grad_buffer();
                                   for (std::size_t o = 0; o < outer; ++o) {
                                       const double* src = g.data() + o * total_axis * inner + off * inner;
                                       for (std::size_t i = 0; i < chunk; ++i) {
                                           buf[o * chunk + i] += src[i];
                                       }
                                   }
                               }
                               off += widths[p];
                           }
                       });
}

Tensor slice(const Tensor& x, int axis, std::size_t begin, std::size_t end) {
    const auto& s = x.shape();
    const std::size_t ax = normalize_axis(axis, s.size());
    if (begin > end || end > s[ax]) {
        throw DimensionError(fmt::format("slice [{}, {}) out of range on axis {} of {}", begin, end, axis,
                                         shape_str(s)));
    }
    const std::size_t outer = prod(s, 0, ax);
    const std::size_t inner = prod(s, ax + 1, s.size());
    const std::size_t len = s[ax];
    const std::size_t width = end - begin;
    Shape out_shape = s;
    out_shape[ax] = width;
    auto xv = x.values();
    std::vector<double> out(outer * width * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(xv.data() + (o * len + begin) * inner, width * inner, out.data() + o * width * inner);
    }
    return make_result("slice", std::move(out_shape), std::move(out), {x},
                       [outer, inner, len, begin, width](std::span<const double> g, const auto& in) {
                           auto& buf = in[0]->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                               const double* src = g.data() + o * width * inner;
                               double* dst = buf.data() + (o * len + begin) * inner;
                               for (std::size_t i = 0; i < width * inner; ++i) {
                                   dst[i] += src[i];
                               }
                           }
                       });
}

Tensor roll(const Tensor& x, int axis, long shift) {
    const auto& s = x.shape();
    const std::size_t ax = normalize_axis(axis, s.size());
    const std::size_t outer = prod(s, 0, ax);
    const std::size_t inner = prod(s, ax + 1, s.size());
    const std::size_t len = s[ax];
    if (len == 0) {
        return x;
    }
    const long n = static_cast<long>(len);
    const std::size_t sh = static_cast<std::size_t>(((shift % n) + n) % n);
    auto xv = x.values();
    std::vector<double> out(xv.size());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < len; ++i) {
            const std::size_t src = (i + len - sh) % len;
            std::copy_n(xv.data() + (o * len + src) * inner, inner, out.data() + (o * len + i) * inner);
        }
    }
    return make_result("roll", s, std::move(out), {x},
                       [outer, inner, len, sh](std::span<const double> g, const auto& in) {
                           auto& buf = in[0]->grad_buffer();
                           for (std::size_t o = 0; o < outer; ++o) {
                               for (std::size_t i = 0; i < len; ++i) {
                                   const std::size_t src = (i + len - sh) % len;
                                   for (std::size_t j = 0; j < inner; ++j) {
                                       buf[(o * len + src) * inner + j] += g[(o * len + i) * inner + j];
                                   }
                               }
                           }
                       });
}

// ---- reductions and normalisation --------------------------------------------

Tensor sum(const Tensor& x) {
    auto xv = x.values();
    const double total = std::accumulate(xv.begin(), xv.end(), 0.0);
    return make_result("sum", {}, {total}, {x}, [](std::span<const double> g, const auto& in) {
        auto& buf = in[0]->grad_buffer();
        for (auto& b : buf) {
            b += g[0];
        }
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) {
        throw DimensionError("mean of an empty tensor");
    }
    return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor softmax_rows(const Tensor& x) {
    if (x.rank() < 1) {
        throw DimensionError("softmax_rows needs rank >= 1");
    }
    auto xv = x.values();
    check_finite(xv, "softmax_rows input");
    const std::size_t n = x.size(-1);
    const std::size_t rows = n == 0 ? 0 : xv.size() / n;
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * n;
        double* o = out.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            total += o[j];
        }
        const double inv = 1.0 / total;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] *= inv;
        }
    }
    std::vector<double> y = out;
    return make_result("softmax_rows", x.shape(), std::move(out), {x},
                       [y = std::move(y), n, rows](std::span<const double> g, const auto& in) {
                           auto& buf = in[0]->grad_buffer();
                           for (std::size_t r = 0; r < rows; ++r) {
                               const double* yr = y.data() + r * n;
                               const double* gr = g.data() + r * n;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < n; ++j) {
                                   dot += gr[j] * yr[j];
                               }
                               for (std::size_t j = 0; j < n; ++j) {
                                   buf[r * n + j] += yr[j] * (gr[j] - dot);
                               }
                           }
                       });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() < 1 || x.size(-1) == 0) {
        throw DimensionError(fmt::format("layer_norm needs a non-empty feature axis, got {}", shape_str(x.shape())));
    }
    const std::size_t d = x.size(-1);
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d}) {
        throw DimensionError(fmt::format("layer_norm: gain {} / bias {} do not match feature width {}",
                                         shape_str(gain.shape()), shape_str(bias.shape()), d));
    }
    auto xv = x.values();
    auto gv = gain.values();
    auto bv = bias.values();
    const std::size_t rows = xv.size() / d;
    std::vector<double> xhat(xv.size());
    std::vector<double> rstd(rows);
    std::vector<double> out(xv.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * d;
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            m += in[j];
        }
        m /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            var += (in[j] - m) * (in[j] - m);
        }
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (in[j] - m) * rstd[r];
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return make_result(
        "layer_norm", x.shape(), std::move(out), {x, gain, bias},
        [xhat = std::move(xhat), rstd = std::move(rstd), d, rows](std::span<const double> g, const auto& in) {
            auto& nx = *in[0];
            auto& ng = *in[1];
            auto& nb = *in[2];
            if (ng.requires_grad) {
                auto& bg = ng.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    bg[i % d] += g[i] * xhat[i];
                }
            }
            if (nb.requires_grad) {
                auto& bb = nb.grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    bb[i % d] += g[i];
                }
            }
            if (nx.requires_grad) {
                auto& buf = nx.grad_buffer();
                const double inv_d = 1.0 / static_cast<double>(d);
                for (std::size_t r = 0; r < rows; ++r) {
                    double mean_dh = 0.0;
                    double mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[r * d + j] * ng.values[j];
                        mean_dh += dh;
                        mean_dh_h += dh * xhat[r * d + j];
                    }
                    mean_dh *= inv_d;
                    mean_dh_h *= inv_d;
                    for (std::size_t j = 0; j < d; ++j) {
                        const double dh = g[r * d + j] * ng.values[j];
                        buf[r * d + j] += rstd[r] * (dh - mean_dh - xhat[r * d + j] * mean_dh_h);
                    }
                }
            }
        });
}

std::pair<Tensor, Tensor> reduce_mean_std(const Tensor& x) {
    if (x.rank() < 2) {
        throw DimensionError(fmt::format("reduce_mean_std needs [.., S, C], got {}", shape_str(x.shape())));
    }
    const std::size_t S = x.size(-2);
    const std::size_t C = x.size(-1);
    if (S == 0) {
        throw DataError("reduce_mean_std: empty window (S == 0)");
    }
    const std::size_t outer = x.numel() / (S * C);
    Shape stat_shape(x.shape().begin(), x.shape().end() - 2);
    stat_shape.push_back(C);
    auto xv = x.values();
    std::vector<double> mu(outer * C, 0.0);
    std::vector<double> sd(outer * C, 0.0);
    const double inv_s = 1.0 / static_cast<double>(S);
    for (std::size_t o = 0; o < outer; ++o) {
        const double* base = xv.data() + o * S * C;
        for (std::size_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
                m += base[s * C + c];
            }
            m *= inv_s;
            double var = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
                const double dev = base[s * C + c] - m;
                var += dev * dev;
            }
            mu[o * C + c] = m;
            sd[o * C + c] = std::sqrt(var * inv_s);
        }
    }
    std::vector<double> mu_copy = mu;
    std::vector<double> sd_copy = sd;
    Tensor mean_t = make_result("reduce_mean", stat_shape, std::move(mu), {x},
                                [outer, S, C, inv_s](std::span<const double> g, const auto& in) {
                                    auto& buf = in[0]->grad_buffer();
                                    for (std::size_t o = 0; o < outer; ++o) {
                                        for (std::size_t s = 0; s < S; ++s) {
                                            for (std::size_t c = 0; c < C; ++c) {
                                                buf[(o * S + s) * C + c] += g[o * C + c] * inv_s;
                                            }
                                        }
                                    }
                                });
    Tensor std_t = make_result(
        "reduce_std", std::move(stat_shape), std::move(sd), {x},
        [outer, S, C, inv_s, mu = std::move(mu_copy), sd = std::move(sd_copy)](std::span<const double> g,
                                                                             const auto& in) {
            auto& node = *in[0];
            auto& buf = node.grad_buffer();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t c = 0; c < C; ++c) {
                    const double s_oc = sd[o * C + c];
                    if (s_oc == 0.0) {
                        continue; // subgradient 0 at a constant column
                    }
                    const double k = g[o * C + c] * inv_s / s_oc;
                    for (std::size_t s = 0; s < S; ++s) {
                        const std::size_t i = (o * S + s) * C + c;
                        buf[i] += k * (node.values[i] - mu[o * C + c]);
                    }
                }
            }
        });
    return {std::move(mean_t), std::move(std_t)};
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    auto pv = pred.values();
    auto tv = target.values();
    const double n = static_cast<double>(pv.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        const double e = pv[i] - tv[i];
        total += e * e;
    }
    return make_result("mse_loss", {}, {total / n}, {pred, target},
                       [n](std::span<const double> g, const auto& in) {
                           auto& np = *in[0];
                           auto& nt = *in[1];
                           const double k = 2.0 * g[0] / n;
                           if (np.requires_grad) {
                               auto& buf = np.grad_buffer();
                               for (std::size_t i = 0; i < buf.size(); ++i) {
                                   buf[i] += k * (np.values[i] - nt.values[i]);
                               }
                           }
                           if (nt.requires_grad) {
                               auto& buf = nt.grad_buffer();
                               for (std::size_t i = 0; i < buf.size(); ++i) {
                                   buf[i] -= k * (np.values[i] - nt.values[i]);
                               }
                           }
                       });
}

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mae_loss");
    auto pv = pred.values();
    auto tv = target.values();
    const double n = static_cast<double>(pv.size());
    double total = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        total += std::abs(pv[i] - tv[i]);
    }
    return make_result("mae_loss", {}, {total / n}, {pred, target},
                       [n](std::span<const double> g, const auto& in) {
                           auto& np = *in[0];
                           auto& nt = *in[1];
                           const double k = g[0] / n;
                           for (std::size_t i = 0; i < np.values.size(); ++i) {
                               const double e = np.values[i] - nt.values[i];
                               const double sgn = e > 0.0 ? 1.0 : (e < 0.0 ? -1.0 : 0.0);
                               if (np.requires_grad) {
                                   np.grad_buffer()[i] += k * sgn;
                               }
                               if (nt.requires_grad) {
                                   nt.grad_buffer()[i] -= k * sgn;
                               }
                           }
                       });
}

} // namespace nst
