#pragma once

// Forecast errors and stationarity analytics.

#include "nst/tensor.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nst {

struct ErrorMetrics {
    double mse = 0.0;
    double mae = 0.0;
};

/// Means over every entry; shapes must match.
ErrorMetrics mse_mae(const Tensor& pred, const Tensor& truth);
ErrorMetrics mse_mae(std::span<const double> pred, std::span<const double> truth);

/// pred, truth [N, O, C] -> one entry per horizon step.
std::vector<ErrorMetrics> per_horizon(const Tensor& pred, const Tensor& truth);

struct OlsFit {
    Eigen::VectorXd beta;
    Eigen::VectorXd residuals;
    Eigen::VectorXd std_errors;
    double sigma2 = 0.0; // SSR / (n - k)
};

/// Ordinary least squares through the normal equations. Throws
/// DegenerateSeriesError when the design is singular or the fit is exact.
OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

struct AdfResult {
    double statistic = 0.0;
    std::size_t lag_order = 0;
    std::size_t nobs = 0;
    std::string regression = "c"; // constant, no trend
};

/// floor(12 (T / 100)^(1/4)), capped so the regression keeps 10 residual
/// degrees of freedom.
std::size_t schwert_lag(std::size_t length);

inline constexpr std::size_t kAdfMinLength = 20;

/// Augmented Dickey-Fuller t-statistic of gamma in
///   dy_t = alpha + gamma y_{t-1} + sum_i beta_i dy_{t-i} + e_t.
AdfResult adf_statistic(std::span<const double> series, std::optional<std::size_t> max_lag = std::nullopt);

/// Mean of per-column statistics of a [T, C] tensor.
struct MultiAdf {
    std::vector<AdfResult> per_variable;
    double mean = 0.0;
};
MultiAdf adf_columns(const Tensor& series);

struct RelativeStationarity {
    std::vector<double> per_variable; // percent
    double aggregate = 0.0;           // mean over variables
};

/// 100 * adf(pred) / adf(truth) per column of [T', C] sequences.
RelativeStationarity relative_stationarity(const Tensor& pred, const Tensor& truth);

struct EvalReport {
    ErrorMetrics overall;
    std::vector<ErrorMetrics> horizon;
    std::optional<RelativeStationarity> relative; // absent when the test split is too short
    std::size_t windows = 0;
};

} // namespace nst
