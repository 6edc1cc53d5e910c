#include "nst/metrics.hpp"

#include "nst/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace nst {

ErrorMetrics mse_mae(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw DimensionError(fmt::format("mse_mae: {} predictions against {} targets", pred.size(), truth.size()));
    }
    if (pred.empty()) {
        throw DimensionError("mse_mae: empty input");
    }
    double se = 0.0;
    double ae = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - truth[i];
        se += d * d;
        ae += std::abs(d);
    }
    const auto n = static_cast<double>(pred.size());
    return {se / n, ae / n};
}

ErrorMetrics mse_mae(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape()) {
        throw DimensionError(
            fmt::format("mse_mae: shape {} against {}", shape_str(pred.shape()), shape_str(truth.shape())));
    }
    return mse_mae(pred.values(), truth.values());
}

std::vector<ErrorMetrics> per_horizon(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape() || pred.rank() != 3) {
        throw DimensionError(fmt::format("per_horizon: expected matching [N, O, C], got {} and {}",
                                         shape_str(pred.shape()), shape_str(truth.shape())));
    }
    const std::size_t n = pred.size(0);
    const std::size_t o = pred.size(1);
    const std::size_t c = pred.size(2);
    const auto p = pred.values();
    const auto y = truth.values();
    std::vector<ErrorMetrics> out(o);
    for (std::size_t h = 0; h < o; ++h) {
        double se = 0.0;
        double ae = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                const double d = p[(i * o + h) * c + j] - y[(i * o + h) * c + j];
                se += d * d;
                ae += std::abs(d);
            }
        }
        const auto count = static_cast<double>(n * c);
        out[h] = {se / count, ae / count};
    }
    return out;
}

OlsFit ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    const auto n = x.rows();
    const auto k = x.cols();
    if (n != y.size()) {
        throw DimensionError(fmt::format("ols: {} design rows against {} responses", n, y.size()));
    }
    if (n <= k) {
        throw DegenerateSeriesError(fmt::format("ols: {} observations for {} regressors", n, k));
    }
    // Unit-norm column scaling keeps the conditioning test scale-free.
    Eigen::VectorXd norms = x.colwise().norm().transpose();
    for (Eigen::Index j = 0; j < k; ++j) {
        if (!(norms(j) > 0.0)) {
            throw DegenerateSeriesError(fmt::format("ols: regressor {} is identically zero", j));
        }
    }
    const Eigen::MatrixXd xs = x * norms.cwiseInverse().asDiagonal();
    const Eigen::MatrixXd gram = xs.transpose() * xs;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * hi)) {
        throw DegenerateSeriesError(fmt::format("ols: singular design (eigenvalue ratio {:.3g})", lo / hi));
    }
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    const Eigen::VectorXd beta_s = ldlt.solve(xs.transpose() * y);
    OlsFit fit;
    fit.beta = norms.cwiseInverse().asDiagonal() * beta_s;
    fit.residuals = y - x * fit.beta;
    const double ssr = fit.residuals.squaredNorm();
    if (!(ssr > 1e-24 * y.squaredNorm())) {
        throw DegenerateSeriesError("ols: regression fits exactly; residual variance is zero");
    }
    fit.sigma2 = ssr / static_cast<double>(n - k);
    const Eigen::MatrixXd inv_s = ldlt.solve(Eigen::MatrixXd::Identity(k, k));
    fit.std_errors = (fit.sigma2 * inv_s.diagonal()).cwiseSqrt().cwiseQuotient(norms);
    return fit;
}

std::size_t schwert_lag(std::size_t length) {
    const auto p = static_cast<std::size_t>(std::floor(12.0 * std::pow(static_cast<double>(length) / 100.0, 0.25)));
    // Residual dof = (T - 1 - p) - (p + 2) >= 10.
    const std::size_t cap = length >= 13 ? (length - 13) / 2 : 0;
    return std::min(p, cap);
}

AdfResult adf_statistic(std::span<const double> y, std::optional<std::size_t> max_lag) {
    const std::size_t t_len = y.size();
    if (t_len < kAdfMinLength) {
        throw PreconditionError(fmt::format("adf: series of length {} is shorter than {}", t_len, kAdfMinLength));
    }
    for (std::size_t i = 0; i < t_len; ++i) {
        if (!std::isfinite(y[i])) {
            throw DataError(fmt::format("adf: non-finite value at index {}", i));
        }
    }
    const std::size_t p = max_lag ? *max_lag : schwert_lag(t_len);
    if (t_len < 2 * p + 13) {
        throw PreconditionError(fmt::format("adf: lag {} leaves fewer than 10 residual degrees of freedom at T = {}", p,
                                            t_len));
    }
    const std::size_t nobs = t_len - 1 - p;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(nobs), static_cast<Eigen::Index>(p + 2));
    Eigen::VectorXd dy(static_cast<Eigen::Index>(nobs));
    for (std::size_t r = 0; r < nobs; ++r) {
        const std::size_t t = r + p + 1; // dy_t = y_t - y_{t-1}
        const auto row = static_cast<Eigen::Index>(r);
        dy(row) = y[t] - y[t - 1];
        x(row, 0) = 1.0;
        x(row, 1) = y[t - 1];
        for (std::size_t i = 1; i <= p; ++i) {
            x(row, static_cast<Eigen::Index>(i + 1)) = y[t - i] - y[t - i - 1];
        }
    }
    const OlsFit fit = ols(x, dy);
    AdfResult r;
    r.statistic = fit.beta(1) / fit.std_errors(1);
    r.lag_order = p;
    r.nobs = nobs;
    if (!std::isfinite(r.statistic)) {
        throw DegenerateSeriesError("adf: statistic is not finite");
    }
    return r;
}

MultiAdf adf_columns(const Tensor& series) {
    if (series.rank() != 2) {
        throw DimensionError(fmt::format("adf_columns: expected [T, C], got {}", shape_str(series.shape())));
    }
    const std::size_t t_len = series.size(0);
    const std::size_t c = series.size(1);
    const auto v = series.values();
    MultiAdf out;
    std::vector<double> col(t_len);
    for (std::size_t j = 0; j < c; ++j) {
        for (std::size_t t = 0; t < t_len; ++t) {
            col[t] = v[t * c + j];
        }
        try {
            out.per_variable.push_back(adf_statistic(col));
        } catch (const Error&) {
            rethrow_with_context(fmt::format("variable {}", j));
        }
        out.mean += out.per_variable.back().statistic;
    }
    out.mean /= static_cast<double>(c);
    return out;
}

RelativeStationarity relative_stationarity(const Tensor& pred, const Tensor& truth) {
    if (pred.shape() != truth.shape() || pred.rank() != 2) {
        throw DimensionError(fmt::format("relative_stationarity: expected matching [T, C], got {} and {}",
                                         shape_str(pred.shape()), shape_str(truth.shape())));
    }
    const MultiAdf p = adf_columns(pred);
    const MultiAdf t = adf_columns(truth);
    RelativeStationarity out;
    for (std::size_t j = 0; j < p.per_variable.size(); ++j) {
        const double denom = t.per_variable[j].statistic;
        if (std::abs(denom) < 1e-9) {
            throw NumericalError(fmt::format("relative_stationarity: ground-truth ADF of variable {} is zero", j));
        }
        out.per_variable.push_back(100.0 * p.per_variable[j].statistic / denom);
        out.aggregate += out.per_variable.back();
    }
    out.aggregate /= static_cast<double>(out.per_variable.size());
    return out;
}

} // namespace nst
