#pragma once

// Hooks for defining new differentiable operations outside tensor.cpp.

#include "nst/tensor.hpp"

#include <functional>
#include <vector>

namespace nst {

/// Builds the result node of a custom op. When recording is enabled and any
/// input requires gradients, `backward` is stored and later invoked with the
/// result's gradient and the input nodes (in the order given); it must add
/// into `inputs[i]->grad_buffer()` only for inputs with requires_grad set.
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      const std::vector<std::shared_ptr<detail::Node>>& inputs)>;

Tensor make_result(const char* op, Shape shape, std::vector<double> values,
                   const std::vector<Tensor>& inputs, BackwardFn backward);

/// Throws NumericalError naming `what` if any value is NaN or infinite.
void check_finite(std::span<const double> values, const char* what);

/// Converts a possibly negative axis to an index in [0, rank).
std::size_t normalize_axis(int axis, std::size_t rank);

} // namespace nst
