#include "nst/stationarization.hpp"

#include "nst/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace nst {

DenormMode parse_denorm_mode(std::string_view text) {
    if (text == "inverse") {
        return DenormMode::inverse;
    }
    if (text == "literal") {
        return DenormMode::literal;
    }
    throw ConfigError(fmt::format("unknown de-normalisation mode '{}' (expected inverse|literal)", text));
}

std::string_view to_string(DenormMode mode) {
    return mode == DenormMode::inverse ? "inverse" : "literal";
}

NormalizedWindow normalize(const Tensor& x, double epsilon) {
    if (!(epsilon > 0.0)) {
        throw ConfigError(fmt::format("normalisation epsilon must be positive, got {}", epsilon));
    }
    if (x.rank() < 2) {
        throw DimensionError(fmt::format("normalize expects [.., S, C], got {}", shape_str(x.shape())));
    }
    const std::size_t S = x.size(-2);
    const std::size_t C = x.size(-1);
    if (S < 2) {
        throw PreconditionError(fmt::format("normalize needs at least 2 time steps, got {}", S));
    }
    auto xv = x.values();
    for (std::size_t i = 0; i < xv.size(); ++i) {
        if (!std::isfinite(xv[i])) {
            const std::size_t c = i % C;
            const std::size_t row = (i / C) % S;
            throw DataError(fmt::format("non-finite input value at (t={}, c={})", row, c));
        }
    }
    auto [mu, sd] = reduce_mean_std(x);
    Tensor sigma = clamp_min(sd, epsilon);
    const int stat_axis = static_cast<int>(mu.rank()) - 1;
    Tensor centered = sub(x, expand(mu, stat_axis, S));
    Tensor normalized = div(centered, expand(sigma, stat_axis, S));
    return {normalized, {mu, sigma}};
}

NormalizedWindow normalize(const SeriesWindow& window, double epsilon) {
    return normalize(window.x, epsilon);
}

Tensor denormalize(const Tensor& y_prime, const StationaryStats& stats, DenormMode mode) {
    const auto& ys = y_prime.shape();
    const auto& ms = stats.mu.shape();
    bool ok = ys.size() >= 2 && ms.size() + 1 == ys.size() && stats.sigma.shape() == ms;
    for (std::size_t i = 0; ok && i + 2 < ys.size(); ++i) {
        ok = ys[i] == ms[i];
    }
    ok = ok && ys.back() == ms.back();
    if (!ok) {
        throw DimensionError(fmt::format("denormalize: prediction {} incompatible with statistics {}",
                                         shape_str(ys), shape_str(ms)));
    }
    const std::size_t O = y_prime.size(-2);
    const int axis = static_cast<int>(ms.size()) - 1;
    Tensor mu = expand(stats.mu, axis, O);
    Tensor sigma = expand(stats.sigma, axis, O);
    if (mode == DenormMode::inverse) {
        return add(mul(sigma, y_prime), mu);
    }
    return mul(sigma, add(y_prime, mu));
}

ForecastBatch wrap_model(const BaseForward& base_forward, const SeriesWindow& window, double epsilon,
                         DenormMode mode) {
    auto normalized = normalize(window, epsilon);
    Tensor y_prime = base_forward(normalized.x);
    Tensor y_hat = denormalize(y_prime, normalized.stats, mode);
    return {y_prime, y_hat};
}

} // namespace nst
