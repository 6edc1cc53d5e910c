#pragma once

// De-stationary Attention and the projector that learns its factors.
//
//   scores = (tau * Q' K'^T + 1 Delta^T) / sqrt(d_k),  out = Softmax(scores) V'
//
// tau > 0 rescales the stationarised dot products, Delta shifts every key
// column. Both are produced once per window from the raw (un-normalised)
// series and shared by every attention layer and head of the model.

#include "nst/parameters.hpp"
#include "nst/stationarization.hpp"
#include "nst/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nst {

enum class AttentionMode { both, tau_only, delta_only, vanilla };
/// Which window statistic feeds which factor head.
enum class FactorPairing {
    main,     // tau <- (x, sigma), Delta <- (x, mu)
    appendix, // tau <- (x, mu),    Delta <- (x, sigma)
};

AttentionMode parse_attention_mode(std::string_view text);
std::string_view to_string(AttentionMode mode);
FactorPairing parse_factor_pairing(std::string_view text);
std::string_view to_string(FactorPairing pairing);

inline bool uses_tau(AttentionMode m) { return m == AttentionMode::both || m == AttentionMode::tau_only; }
inline bool uses_delta(AttentionMode m) { return m == AttentionMode::both || m == AttentionMode::delta_only; }

/// tau: [B] (or [] for a single window), strictly positive.
/// delta: [B, S] (or [S]).
struct DestatFactors {
    Tensor tau;
    Tensor delta;

    /// tau = 1, Delta = 0 for `batch` windows (batch 0 means unbatched).
    static DestatFactors identity(std::size_t batch, std::size_t length);
};

struct AttentionConfig {
    std::size_t d_k = 64;    // per-head width
    std::size_t n_heads = 8;
    AttentionMode mode = AttentionMode::both;
    bool causal_mask = false;

    std::size_t d_model() const { return d_k * n_heads; }
};

/// Blocked (query, key) pairs shared by every batch entry and head.
struct AttentionMask {
    std::size_t queries = 0;
    std::size_t keys = 0;
    std::vector<std::uint8_t> blocked; // row-major [queries, keys]

    static AttentionMask causal(std::size_t queries, std::size_t keys);
};

inline constexpr double kMaskedScore = -1e9;

/// Per-call options that are not part of the attention contract proper.
struct AttentionRuntime {
    double dropout = 0.0;
    bool training = false;
    Rng* rng = nullptr;
    Tensor* weights_out = nullptr; // receives the softmax weights when set
};

/// Rescaled pre-softmax scores: (tau*raw + Delta) * scale, then the mask is
/// added. raw is [B?, G.., Lq, Lk]; factors are indexed by the leading batch
/// axis and shared across the remaining G axes. Factors unused by `mode` (and
/// Delta when `apply_delta` is false) are treated as 1 and 0.
Tensor destat_scores(const Tensor& raw, const DestatFactors& factors, AttentionMode mode, bool apply_delta,
                     double scale, const AttentionMask* mask);

/// Single-head De-stationary Attention on Q'[.., Lq, d], K'[.., Lk, d], V'[.., Lk, d].
Tensor destationary_attention(const Tensor& q, const Tensor& k, const Tensor& v, const DestatFactors& factors,
                              const AttentionConfig& config, const AttentionMask* mask = nullptr,
                              bool apply_delta = true, const AttentionRuntime& runtime = {});

/// Splits [.., L, n_heads*d_k] into heads, runs destationary_attention per head
/// with the shared factors, merges heads and applies `output`.
Tensor multi_head_destat(const Tensor& q, const Tensor& k, const Tensor& v, const Linear& output,
                         const DestatFactors& factors, const AttentionConfig& config,
                         const AttentionMask* mask = nullptr, bool apply_delta = true,
                         const AttentionRuntime& runtime = {});

/// Query/key/value/output projections around multi_head_destat.
struct MultiHeadAttention {
    Linear query;
    Linear key;
    Linear value;
    Linear output;

    static MultiHeadAttention create(ParameterSet& params, const std::string& path, std::size_t d_model, Rng& rng);
    Tensor operator()(const Tensor& queries, const Tensor& keys, const DestatFactors& factors,
                      const AttentionConfig& config, const AttentionMask* mask, bool apply_delta,
                      const AttentionRuntime& runtime = {}) const;
};

/// One factor head: a learned temporal reduction of the raw window (kernel 3
/// over the variable axis, circular) concatenated with a window statistic,
/// followed by a two-layer perceptron.
struct ProjectorHead {
    Tensor series_kernel; // [3, S]
    Linear hidden;        // [2C -> hidden]
    Linear output;        // [hidden -> out], zero-initialised

    Tensor operator()(const Tensor& raw_x, const Tensor& statistic) const;
};

struct ProjectorParams {
    ProjectorHead tau_head;   // out = 1, yields log tau
    ProjectorHead delta_head; // out = S
    std::size_t input_len = 0;
    std::size_t channels = 0;
    FactorPairing pairing = FactorPairing::main;

    static ProjectorParams create(ParameterSet& params, const std::string& path, std::size_t input_len,
                                  std::size_t channels, std::size_t hidden, FactorPairing pairing, Rng& rng);
};

/// tau = exp(MLP_tau(x, stat_tau)), Delta = MLP_delta(x, stat_delta), from the
/// raw window x[.., S, C].
DestatFactors project_factors(const ProjectorParams& params, const Tensor& raw_x, const StationaryStats& stats);

} // namespace nst
