#pragma once

#include "nst/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace nst {

/// Named trainable tensors. Iteration follows registration order, so two
/// models built from the same config enumerate parameters identically.
class ParameterSet {
public:
    /// Registers a leaf tensor (requires_grad is forced on). Paths are unique.
    Tensor add(const std::string& path, Shape shape, std::vector<double> values);

    bool contains(const std::string& path) const;
    const Tensor& get(const std::string& path) const;
    Tensor& get(const std::string& path);

    std::size_t size() const { return entries_.size(); }
    std::size_t count() const;
    /// Number of scalars in parameters whose path starts with `prefix`.
    std::size_t count_prefix(const std::string& prefix) const;

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using Rng = std::mt19937_64;

/// Glorot-style uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
std::vector<double> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

/// y = x W + b over the last axis; W is [in, out].
struct Linear {
    Tensor weight;
    Tensor bias; // undefined when the layer has no bias

    static Linear create(ParameterSet& params, const std::string& path, std::size_t in, std::size_t out,
                         bool with_bias, Rng& rng);
    Tensor operator()(const Tensor& x) const;
};

struct LayerNormParams {
    Tensor gain;
    Tensor bias;

    static LayerNormParams create(ParameterSet& params, const std::string& path, std::size_t width);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, 1e-5); }
};

/// Inverted dropout; identity when `training` is false or rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

} // namespace nst
