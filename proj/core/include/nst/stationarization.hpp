#pragma once

// Series Stationarization: per-window z-normalisation of the model input and
// restoration of the window statistics on the model output.

#include "nst/tensor.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <string_view>

namespace nst {

/// A raw past window x[S, C] and, when known, its future target[O, C].
struct SeriesWindow {
    Tensor x;
    std::optional<Tensor> target;
    std::size_t start = 0; // row of x[0] in the source dataset
};

/// Per-variable window mean and floored standard deviation, shape [.., C].
struct StationaryStats {
    Tensor mu;
    Tensor sigma;
};

struct NormalizedWindow {
    Tensor x;
    StationaryStats stats;
};

/// y' is the model-space prediction; y_hat the de-normalised forecast.
struct ForecastBatch {
    Tensor y_prime;
    Tensor y_hat;
};

enum class DenormMode {
    inverse, // sigma * y' + mu, the exact inverse of normalize
    literal, // sigma * (y' + mu), as printed in the original formulation
};

DenormMode parse_denorm_mode(std::string_view text);
std::string_view to_string(DenormMode mode);

inline constexpr double kDefaultEpsilon = 1e-5;

/// x[.., S, C] -> ((x - mu) / max(sigma, eps), stats). Requires S >= 2 and
/// finite input; stats.sigma carries the floored value.
NormalizedWindow normalize(const Tensor& x, double epsilon = kDefaultEpsilon);
NormalizedWindow normalize(const SeriesWindow& window, double epsilon = kDefaultEpsilon);

/// y'[.., O, C] -> y_hat[.., O, C] using stats[.., C].
Tensor denormalize(const Tensor& y_prime, const StationaryStats& stats, DenormMode mode = DenormMode::inverse);

using BaseForward = std::function<Tensor(const Tensor&)>;

/// Normalises the window, runs the base model on it, de-normalises its output.
ForecastBatch wrap_model(const BaseForward& base_forward, const SeriesWindow& window,
                         double epsilon = kDefaultEpsilon, DenormMode mode = DenormMode::inverse);

} // namespace nst
