#include "nst/model.hpp"

#include "nst/errors.hpp"
#include "nst/text.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <cmath>
#include <fstream>
#include <sstream>

namespace nst {

AttentionConfig ModelConfig::attention() const {
    return {n_heads == 0 ? 0 : d_model / n_heads, n_heads, mode, false};
}

void ModelConfig::validate(bool require_layers) const {
    auto fail = [](const char* field, const std::string& why) {
        throw ConfigError(fmt::format("model.{}: {}", field, why));
    };
    if (input_len < 2 || input_len % 2 != 0) {
        fail("input_len", fmt::format("must be even and >= 2, got {}", input_len));
    }
    if (pred_len < 1) {
        fail("pred_len", "must be >= 1");
    }
    if (channels < 1) {
        fail("channels", "must be >= 1");
    }
    if (d_model < 1) {
        fail("d_model", "must be >= 1");
    }
    if (n_heads < 1 || d_model % n_heads != 0) {
        fail("n_heads", fmt::format("must divide d_model={}, got {}", d_model, n_heads));
    }
    if (require_layers && encoder_layers < 1) {
        fail("encoder_layers", "must be >= 1");
    }
    if (require_layers && decoder_layers < 1) {
        fail("decoder_layers", "must be >= 1");
    }
    if (ffn_width < 1) {
        fail("ffn_width", "must be >= 1");
    }
    if (projector_hidden < 1) {
        fail("projector_hidden", "must be >= 1");
    }
    if (!(epsilon > 0.0)) {
        fail("epsilon", "must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        fail("dropout", "must lie in [0, 1)");
    }
}

std::vector<std::pair<std::string, std::string>> ModelConfig::to_key_values() const {
    return {
        {"input_len", std::to_string(input_len)},
        {"pred_len", std::to_string(pred_len)},
        {"channels", std::to_string(channels)},
        {"d_model", std::to_string(d_model)},
        {"n_heads", std::to_string(n_heads)},
        {"encoder_layers", std::to_string(encoder_layers)},
        {"decoder_layers", std::to_string(decoder_layers)},
        {"ffn_width", std::to_string(ffn_width)},
        {"projector_hidden", std::to_string(projector_hidden)},
        {"epsilon", fmt::format("{}", epsilon)},
        {"dropout", fmt::format("{}", dropout)},
        {"mode", std::string(to_string(mode))},
        {"stationarize", stationarize ? "true" : "false"},
        {"pairing", std::string(to_string(pairing))},
        {"denorm", std::string(to_string(denorm))},
        {"seed", std::to_string(seed)},
    };
}

ModelConfig ModelConfig::from_key_values(const std::vector<std::pair<std::string, std::string>>& kv) {
    ModelConfig c;
    for (const auto& [key, value] : kv) {
        const std::string field = "model." + key;
        if (key == "input_len") {
            c.input_len = parse_size(value, field);
        } else if (key == "pred_len") {
            c.pred_len = parse_size(value, field);
        } else if (key == "channels") {
            c.channels = parse_size(value, field);
        } else if (key == "d_model") {
            c.d_model = parse_size(value, field);
        } else if (key == "n_heads") {
            c.n_heads = parse_size(value, field);
        } else if (key == "encoder_layers") {
            c.encoder_layers = parse_size(value, field);
        } else if (key == "decoder_layers") {
            c.decoder_layers = parse_size(value, field);
        } else if (key == "ffn_width") {
            c.ffn_width = parse_size(value, field);
        } else if (key == "projector_hidden") {
            c.projector_hidden = parse_size(value, field);
        } else if (key == "epsilon") {
            c.epsilon = parse_double(value, field);
        } else if (key == "dropout") {
            c.dropout = parse_double(value, field);
        } else if (key == "mode") {
            c.mode = parse_attention_mode(value);
        } else if (key == "stationarize") {
            c.stationarize = parse_bool(value, field);
        } else if (key == "pairing") {
            c.pairing = parse_factor_pairing(value);
        } else if (key == "denorm") {
            c.denorm = parse_denorm_mode(value);
        } else if (key == "seed") {
            c.seed = parse_u64(value, field);
        } else {
            throw ConfigError(fmt::format("unknown model key '{}'", key));
        }
    }
    return c;
}

Tensor build_decoder_input(const Tensor& x_norm, std::size_t pred_len) {
    if (x_norm.rank() < 2) {
        throw DimensionError(fmt::format("decoder input needs [.., S, C], got {}", shape_str(x_norm.shape())));
    }
    const std::size_t S = x_norm.size(-2);
    if (S % 2 != 0) {
        throw ConfigError(fmt::format("input length must be even to take the S/2 label, got {}", S));
    }
    Tensor label = slice(x_norm, -2, S / 2, S);
    if (pred_len == 0) {
        return label;
    }
    Shape zero_shape = x_norm.shape();
    zero_shape[zero_shape.size() - 2] = pred_len;
    return concat({label, Tensor::zeros(std::move(zero_shape))}, -2);
}

Tensor sinusoidal_positions(std::size_t length, std::size_t width) {
    std::vector<double> table(length * width);
    for (std::size_t pos = 0; pos < length; ++pos) {
        for (std::size_t i = 0; i < width; ++i) {
            const double exponent = static_cast<double>(i - i % 2) / static_cast<double>(width);
            const double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
            table[pos * width + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    }
    return Tensor::from({length, width}, std::move(table));
}

Model::Model(ModelConfig config, Layers layers) : config_(std::move(config)) {
    config_.validate(layers == Layers::required);
    Rng rng(config_.seed);
    dropout_rng_.seed(config_.seed ^ 0x9e3779b97f4a7c15ULL);
    const std::size_t d = config_.d_model;
    encoder_embedding_ = Linear::create(params_, "encoder.embedding", config_.channels, d, false, rng);
    for (std::size_t l = 0; l < config_.encoder_layers; ++l) {
        const std::string p = fmt::format("encoder.layer{}", l);
        EncoderLayer layer;
        layer.attention = MultiHeadAttention::create(params_, p + ".attention", d, rng);
        layer.norm1 = LayerNormParams::create(params_, p + ".norm1", d);
        layer.ffn1 = Linear::create(params_, p + ".ffn1", d, config_.ffn_width, true, rng);
        layer.ffn2 = Linear::create(params_, p + ".ffn2", config_.ffn_width, d, true, rng);
        layer.norm2 = LayerNormParams::create(params_, p + ".norm2", d);
        encoder_.push_back(std::move(layer));
    }
    decoder_embedding_ = Linear::create(params_, "decoder.embedding", config_.channels, d, false, rng);
    for (std::size_t l = 0; l < config_.decoder_layers; ++l) {
        const std::string p = fmt::format("decoder.layer{}", l);
        DecoderLayer layer;
        layer.self_attention = MultiHeadAttention::create(params_, p + ".self_attention", d, rng);
        layer.norm1 = LayerNormParams::create(params_, p + ".norm1", d);
        layer.cross_attention = MultiHeadAttention::create(params_, p + ".cross_attention", d, rng);
        layer.norm2 = LayerNormParams::create(params_, p + ".norm2", d);
        layer.ffn1 = Linear::create(params_, p + ".ffn1", d, config_.ffn_width, true, rng);
        layer.ffn2 = Linear::create(params_, p + ".ffn2", config_.ffn_width, d, true, rng);
        layer.norm3 = LayerNormParams::create(params_, p + ".norm3", d);
        decoder_.push_back(std::move(layer));
    }
    head_ = Linear::create(params_, "head", d, config_.channels, true, rng);
    projector_ = ProjectorParams::create(params_, "projector", config_.input_len, config_.channels,
                                         config_.projector_hidden, config_.pairing, rng);
}

Tensor Model::drop(const Tensor& x, bool training) {
    return dropout(x, config_.dropout, training, dropout_rng_);
}

Tensor Model::embed(const Linear& projection, const Tensor& x, bool training) {
    Tensor values = projection(x); // [B, L, d]
    Tensor pe = expand(sinusoidal_positions(x.size(-2), config_.d_model), 0, x.size(0));
    return drop(add(values, pe), training);
}

Tensor Model::feed_forward(const Linear& ffn1, const Linear& ffn2, const Tensor& x, bool training) {
    return ffn2(drop(gelu(ffn1(x)), training));
}

DestatFactors Model::factors_for(const Tensor& raw_x, const StationaryStats& stats) const {
    const std::size_t batch = raw_x.rank() == 3 ? raw_x.size(0) : 0;
    if (config_.mode == AttentionMode::vanilla) {
        return DestatFactors::identity(batch, config_.input_len);
    }
    return project_factors(projector_, raw_x, stats);
}

Tensor Model::run_network(const Tensor& encoder_in, const Tensor& decoder_in, const DestatFactors& factors,
                          bool training, ForwardTrace* trace) {
    if (encoder_.empty() || decoder_.empty()) {
        throw ConfigError("forward requires at least one encoder and one decoder layer");
    }
    const AttentionConfig attn = config_.attention();
    AttentionRuntime runtime{config_.dropout, training, &dropout_rng_, nullptr};

    Tensor enc = embed(encoder_embedding_, encoder_in, training);
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
        auto& layer = encoder_[l];
        try {
            Tensor weights;
            AttentionRuntime rt = runtime;
            if (trace) {
                rt.weights_out = &weights;
            }
            Tensor a = layer.attention(enc, enc, factors, attn, nullptr, true, rt);
            enc = layer.norm1(add(enc, drop(a, training)));
            enc = layer.norm2(add(enc, drop(feed_forward(layer.ffn1, layer.ffn2, enc, training), training)));
            if (trace) {
                trace->encoder_attention_weights.push_back(weights);
                trace->encoder_outputs.push_back(enc);
            }
        } catch (const Error&) {
            rethrow_with_context(fmt::format("encoder layer {}", l));
        }
    }

    const std::size_t dec_len = decoder_in.size(-2);
    const AttentionMask causal = AttentionMask::causal(dec_len, dec_len);
    const bool cross_delta = enc.size(-2) == config_.input_len;
    Tensor dec = embed(decoder_embedding_, decoder_in, training);
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
        auto& layer = decoder_[l];
        try {
            // Decoder self-attention never applies the Delta shift.
            Tensor s = layer.self_attention(dec, dec, factors, attn, &causal, false, runtime);
            if (trace) {
                trace->decoder_self_attention.push_back(s);
            }
            dec = layer.norm1(add(dec, drop(s, training)));
            Tensor c = layer.cross_attention(dec, enc, factors, attn, nullptr, cross_delta, runtime);
            dec = layer.norm2(add(dec, drop(c, training)));
            dec = layer.norm3(add(dec, drop(feed_forward(layer.ffn1, layer.ffn2, dec, training), training)));
        } catch (const Error&) {
            rethrow_with_context(fmt::format("decoder layer {}", l));
        }
    }
    return head_(dec);
}

ForecastBatch Model::forward(const Tensor& x, bool training, ForwardTrace* trace) {
    const bool unbatched = x.rank() == 2;
    Tensor batch_x = unbatched ? reshape(x, {1, x.size(0), x.size(1)}) : x;
    if (batch_x.rank() != 3 || batch_x.size(1) != config_.input_len || batch_x.size(2) != config_.channels) {
        throw DimensionError(fmt::format("model expects [B, {}, {}] input, got {}", config_.input_len,
                                         config_.channels, shape_str(x.shape())));
    }
    Tensor x_model = batch_x;
    StationaryStats stats;
    if (config_.stationarize) {
        auto normalized = normalize(batch_x, config_.epsilon);
        x_model = normalized.x;
        stats = normalized.stats;
    } else if (config_.mode != AttentionMode::vanilla) {
        auto [mu, sd] = reduce_mean_std(batch_x);
        stats = {mu, clamp_min(sd, config_.epsilon)};
    }
    DestatFactors factors = factors_for(batch_x, stats);
    if (trace) {
        trace->factors = factors;
    }
    Tensor decoder_in = build_decoder_input(x_model, config_.pred_len);
    Tensor out = run_network(x_model, decoder_in, factors, training, trace);
    Tensor y_prime = slice(out, -2, config_.label_len(), config_.decoder_len());
    Tensor y_hat = config_.stationarize ? denormalize(y_prime, stats, config_.denorm) : y_prime;
    if (unbatched) {
        y_prime = reshape(y_prime, {config_.pred_len, config_.channels});
        y_hat = reshape(y_hat, {config_.pred_len, config_.channels});
    }
    return {y_prime, y_hat};
}

ForecastBatch Model::forward(const SeriesWindow& window, bool training, ForwardTrace* trace) {
    return forward(window.x, training, trace);
}

ParameterCounts count_parameters(const ParameterSet& params) {
    const std::size_t projector = params.count_prefix("projector.");
    return {params.count() - projector, projector};
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
    std::ofstream out(path);
    if (!out) {
        throw DataError(fmt::format("cannot open checkpoint '{}' for writing", path.string()));
    }
    out << kCheckpointHeader << '\n';
    for (const auto& [key, value] : model.config().to_key_values()) {
        out << "config " << key << ' ' << value << '\n';
    }
    for (const auto& [name, tensor] : model.parameters()) {
        out << fmt::format("param {} {} {}\n", name, tensor.rank(), fmt::join(tensor.shape(), " "));
        out << fmt::format("{}\n", fmt::join(tensor.values(), " "));
    }
    out << "end\n";
    if (!out) {
        throw DataError(fmt::format("failed writing checkpoint '{}'", path.string()));
    }
}

Model load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
    }
    std::string line;
    if (!std::getline(in, line) || line != kCheckpointHeader) {
        throw DataError(fmt::format("'{}' is not a version-1 checkpoint", path.string()));
    }
    std::vector<std::pair<std::string, std::string>> kv;
    std::vector<std::pair<std::string, std::vector<double>>> tensors;
    std::size_t line_no = 1;
    bool ended = false;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "config") {
            std::string key;
            std::string value;
            ls >> key >> value;
            kv.emplace_back(key, value);
        } else if (tag == "param") {
            std::string name;
            std::size_t rank = 0;
            ls >> name >> rank;
            std::size_t n = 1;
            for (std::size_t i = 0; i < rank; ++i) {
                std::size_t d = 0;
                ls >> d;
                n *= d;
            }
            std::string values_line;
            if (!ls || !std::getline(in, values_line)) {
                throw DataError(fmt::format("{}:{}: truncated parameter '{}'", path.string(), line_no, name));
            }
            ++line_no;
            auto values = parse_doubles(values_line, fmt::format("{}:{}", path.string(), line_no));
            if (values.size() != n) {
                throw DataError(fmt::format("{}:{}: parameter '{}' expects {} values, found {}", path.string(),
                                            line_no, name, n, values.size()));
            }
            tensors.emplace_back(name, std::move(values));
        } else if (tag == "end") {
            ended = true;
            break;
        } else if (!tag.empty()) {
            throw DataError(fmt::format("{}:{}: unexpected record '{}'", path.string(), line_no, tag));
        }
    }
    if (!ended) {
        throw DataError(fmt::format("checkpoint '{}' is truncated", path.string()));
    }
    Model model(ModelConfig::from_key_values(kv));
    auto& params = model.parameters();
    if (tensors.size() != params.size()) {
        throw DataError(fmt::format("checkpoint has {} tensors, model expects {}", tensors.size(), params.size()));
    }
    for (auto& [name, values] : tensors) {
        Tensor& t = params.get(name);
        if (t.numel() != values.size()) {
            throw DataError(fmt::format("parameter '{}' size mismatch", name));
        }
        std::copy(values.begin(), values.end(), t.mutable_values().begin());
    }
    return model;
}

} // namespace nst
