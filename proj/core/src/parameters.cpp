#include "nst/parameters.hpp"

#include "nst/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace nst {

Tensor ParameterSet::add(const std::string& path, Shape shape, std::vector<double> values) {
    if (index_.count(path) != 0) {
        throw ConfigError(fmt::format("duplicate parameter path '{}'", path));
    }
    Tensor t = Tensor::from(std::move(shape), std::move(values), true);
    index_.emplace(path, entries_.size());
    entries_.emplace_back(path, t);
    return t;
}

bool ParameterSet::contains(const std::string& path) const {
    return index_.count(path) != 0;
}

const Tensor& ParameterSet::get(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) {
        throw ConfigError(fmt::format("unknown parameter path '{}'", path));
    }
    return entries_[it->second].second;
}

Tensor& ParameterSet::get(const std::string& path) {
    auto it = index_.find(path);
    if (it == index_.end()) {
        throw ConfigError(fmt::format("unknown parameter path '{}'", path));
    }
    return entries_[it->second].second;
}

std::size_t ParameterSet::count() const {
    return count_prefix("");
}

std::size_t ParameterSet::count_prefix(const std::string& prefix) const {
    std::size_t n = 0;
    for (const auto& [path, t] : entries_) {
        if (path.compare(0, prefix.size(), prefix) == 0) {
            n += t.numel();
        }
    }
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& [path, t] : entries_) {
        t.zero_grad();
    }
}

std::vector<double> xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    std::vector<double> w(fan_in * fan_out);
    for (auto& v : w) {
        v = dist(rng);
    }
    return w;
}

Linear Linear::create(ParameterSet& params, const std::string& path, std::size_t in, std::size_t out,
                      bool with_bias, Rng& rng) {
    Linear layer;
    layer.weight = params.add(path + ".weight", {in, out}, xavier_uniform(in, out, rng));
    if (with_bias) {
        layer.bias = params.add(path + ".bias", {out}, std::vector<double>(out, 0.0));
    }
    return layer;
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_last(y, bias) : y;
}

LayerNormParams LayerNormParams::create(ParameterSet& params, const std::string& path, std::size_t width) {
    return {params.add(path + ".gain", {width}, std::vector<double>(width, 1.0)),
            params.add(path + ".bias", {width}, std::vector<double>(width, 0.0))};
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
    if (!training || rate <= 0.0) {
        return x;
    }
    if (rate >= 1.0) {
        throw ConfigError(fmt::format("dropout rate must be < 1, got {}", rate));
    }
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) {
        m = keep(rng) ? scale : 0.0;
    }
    return mul(x, Tensor::from(x.shape(), std::move(mask)));
}

} // namespace nst
