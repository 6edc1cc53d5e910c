#pragma once

// Brute-force check of the attention-recovery identity
//
//   Softmax(Q K^T / sqrt(d)) == Softmax((sigma^2 Q' K'^T + 1 mu_Q^T K^T) / sqrt(d))
//
// for stacks of strictly linear, per-time-point maps and inputs whose
// variables share one variance. Q, K come from the raw series, Q', K' from
// the normalised series. Everything here uses plain Eigen matrices and is
// independent of the autodiff tensor path used by the model.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace nst::oracle {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Vector = Eigen::VectorXd;

enum class Activation { none, tanh };

/// Embedding W_f [C, d] followed by per-layer query/key/value maps [d, d].
/// No biases, so every map satisfies f(ax + by) = a f(x) + b f(y) unless an
/// embedding activation is switched on.
struct LinearStack {
    struct Layer {
        Matrix query;
        Matrix key;
        Matrix value;
    };

    Matrix embedding;
    std::vector<Layer> layers;
    bool residual = false;                     // E_l = A V + E_{l-1}
    Activation embedding_activation = Activation::none;

    std::size_t width() const { return static_cast<std::size_t>(embedding.cols()); }
    static LinearStack random(std::size_t channels, std::size_t width, std::size_t n_layers, std::mt19937_64& rng,
                              bool residual = false);
};

Matrix softmax_rows(const Matrix& scores);

/// Rescales each column to unit population variance (and keeps its mean), so
/// that all variables share one variance. Throws PreconditionError on a
/// constant column.
Matrix shared_variance_project(const Matrix& x);

/// Softmax(Q K^T / sqrt(d)) of the first layer, from the raw series.
Matrix raw_attention_map(const LinearStack& stack, const Matrix& x);

struct ExactFactors {
    double tau = 1.0;  // sigma_x^2
    Vector delta;      // K mu_Q, one entry per key
};

/// Exact first-layer factors. Throws PreconditionError if the columns of x do
/// not share a population variance within `variance_tolerance` (relative).
ExactFactors exact_factors(const LinearStack& stack, const Matrix& x, double variance_tolerance = 1e-9);

/// First-layer attention rebuilt from the normalised series and exact factors.
Matrix reconstructed_attention_map(const LinearStack& stack, const Matrix& x, double variance_tolerance = 1e-9);

struct LayerDeviation {
    std::size_t layer = 0;
    double exact = 0.0;  // max |A_raw - A_rebuilt| with per-layer exact factors
    double shared = 0.0; // same, with first-layer factors reused by every layer
};

struct OracleReport {
    std::vector<LayerDeviation> layers;
    double tolerance = 1e-6;
    bool passed = false; // every exact deviation within tolerance
};

/// Runs the raw stack and the normalised stack side by side and compares the
/// attention map of every layer.
OracleReport multilayer_identity_check(const LinearStack& stack, const Matrix& x, double tolerance = 1e-6);

struct ExpansionCheck {
    double expansion = 0.0; // max |Q'K'^T - (QK^T - 1 mu_Q^T K^T - Q mu_K 1^T + mu_Q.mu_K 11^T) / sigma^2|
    double row_constant_drop = 0.0; // softmax change from dropping the row-constant terms
};

ExpansionCheck expansion_identity(const LinearStack& stack, const Matrix& x);

/// Sampling ranges for random single-layer instances.
struct InstanceRanges {
    std::size_t min_len = 2;
    std::size_t max_len = 16;
    std::size_t max_channels = 4;
    std::size_t max_width = 8;
    double entry_bound = 10.0;  // base entries ~ U(-10, 10)
    double min_scale = 0.1;     // common std after projection, log-uniform
    double max_scale = 100.0;
};

struct Instance {
    LinearStack stack;
    Matrix x;
    double scale = 1.0;
};

Instance random_instance(std::mt19937_64& rng, const InstanceRanges& ranges = {}, std::size_t n_layers = 1);

struct InstanceResult {
    std::size_t index = 0;
    std::size_t length = 0;
    std::size_t channels = 0;
    std::size_t width = 0;
    double scale = 1.0;
    double deviation = 0.0;
    double expansion = 0.0;
    double row_constant_drop = 0.0;
    bool passed = false;
};

struct VerifySummary {
    std::vector<InstanceResult> instances;
    double tolerance = 1e-6;
    std::size_t failures = 0;
    double worst_deviation = 0.0;
    std::size_t worst_index = 0;
    bool passed() const { return failures == 0; }
};

/// Checks `count` random single-layer instances drawn from `seed`.
VerifySummary verify_instances(std::size_t count, std::uint64_t seed, double tolerance,
                               const InstanceRanges& ranges = {});

} // namespace nst::oracle
