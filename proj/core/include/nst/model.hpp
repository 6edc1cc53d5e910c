#pragma once

// Encoder-decoder Non-stationary Transformer.
//
//   normalize -> factors from the raw window -> embed -> N encoder layers
//   -> decoder input [x'_{S/2:S}; 0] -> M decoder layers -> linear head
//   -> last O rows -> de-normalize
//
// Every attention block is De-stationary Attention sharing one (tau, Delta)
// pair per window; decoder self-attention is causal and never shifts by Delta.

#include "nst/attention.hpp"
#include "nst/parameters.hpp"
#include "nst/stationarization.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace nst {

struct ModelConfig {
    std::size_t input_len = 96; // S, must be even
    std::size_t pred_len = 96;  // O
    std::size_t channels = 7;   // C
    std::size_t d_model = 512;
    std::size_t n_heads = 8;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 1;
    std::size_t ffn_width = 2048;
    std::size_t projector_hidden = 128;
    double epsilon = kDefaultEpsilon;
    double dropout = 0.05;
    AttentionMode mode = AttentionMode::both;
    bool stationarize = true;
    FactorPairing pairing = FactorPairing::main;
    DenormMode denorm = DenormMode::inverse;
    std::uint64_t seed = 2021;

    std::size_t label_len() const { return input_len / 2; }
    std::size_t decoder_len() const { return label_len() + pred_len; }
    AttentionConfig attention() const;

    /// Throws ConfigError naming the offending field.
    void validate(bool require_layers = true) const;

    std::vector<std::pair<std::string, std::string>> to_key_values() const;
    /// Inverse of to_key_values; unknown keys are rejected.
    static ModelConfig from_key_values(const std::vector<std::pair<std::string, std::string>>& kv);
};

/// x'[.., S, C] -> [x'_{S/2:S}; zeros(O, C)] of shape [.., S/2 + O, C].
Tensor build_decoder_input(const Tensor& x_norm, std::size_t pred_len);

/// Fixed sinusoidal position table [length, width].
Tensor sinusoidal_positions(std::size_t length, std::size_t width);

struct ParameterCounts {
    std::size_t base = 0;
    std::size_t projector = 0;
};

/// Intermediate values captured during a forward pass.
struct ForwardTrace {
    DestatFactors factors;
    std::vector<Tensor> encoder_outputs;
    std::vector<Tensor> decoder_self_attention; // pre-residual block outputs
    std::vector<Tensor> encoder_attention_weights;
};

class Model {
public:
    enum class Layers { required, allow_empty };

    explicit Model(ModelConfig config, Layers layers = Layers::required);

    /// x is [S, C] or [B, S, C]. `training` enables dropout.
    ForecastBatch forward(const Tensor& x, bool training = false, ForwardTrace* trace = nullptr);
    ForecastBatch forward(const SeriesWindow& window, bool training = false, ForwardTrace* trace = nullptr);

    /// The encoder-decoder stack on already-prepared inputs; returns the head
    /// output over the whole decoder length [B, S/2 + O, C].
    Tensor run_network(const Tensor& encoder_in, const Tensor& decoder_in, const DestatFactors& factors,
                       bool training, ForwardTrace* trace = nullptr);

    /// Factors used for a batch of raw windows (identity when the mode needs none).
    DestatFactors factors_for(const Tensor& raw_x, const StationaryStats& stats) const;

    ParameterSet& parameters() { return params_; }
    const ParameterSet& parameters() const { return params_; }
    const ModelConfig& config() const { return config_; }

    /// Reseeds the dropout stream.
    void reseed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

private:
    struct EncoderLayer {
        MultiHeadAttention attention;
        LayerNormParams norm1;
        LayerNormParams norm2;
        Linear ffn1;
        Linear ffn2;
    };
    struct DecoderLayer {
        MultiHeadAttention self_attention;
        MultiHeadAttention cross_attention;
        LayerNormParams norm1;
        LayerNormParams norm2;
        LayerNormParams norm3;
        Linear ffn1;
        Linear ffn2;
    };

    Tensor embed(const Linear& projection, const Tensor& x, bool training);
    Tensor feed_forward(const Linear& ffn1, const Linear& ffn2, const Tensor& x, bool training);
    Tensor drop(const Tensor& x, bool training);

    ModelConfig config_;
    ParameterSet params_;
    Linear encoder_embedding_;
    Linear decoder_embedding_;
    std::vector<EncoderLayer> encoder_;
    std::vector<DecoderLayer> decoder_;
    Linear head_;
    ProjectorParams projector_;
    Rng dropout_rng_;
};

/// Base-model parameters versus the factor projector.
ParameterCounts count_parameters(const ParameterSet& params);

/// Text checkpoint: header line, `config <key> <value>` lines, then one
/// `param <path> <rank> <dims..>` line per tensor followed by a line of values.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

inline constexpr const char* kCheckpointHeader = "nst-checkpoint 1";

} // namespace nst
