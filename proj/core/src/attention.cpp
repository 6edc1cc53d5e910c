#include "nst/attention.hpp"

#include "nst/autograd.hpp"
#include "nst/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace nst {

AttentionMode parse_attention_mode(std::string_view text) {
    if (text == "both") {
        return AttentionMode::both;
    }
    if (text == "tau_only") {
        return AttentionMode::tau_only;
    }
    if (text == "delta_only") {
        return AttentionMode::delta_only;
    }
    if (text == "vanilla") {
        return AttentionMode::vanilla;
    }
    throw ConfigError(fmt::format("unknown attention mode '{}' (expected both|tau_only|delta_only|vanilla)", text));
}

std::string_view to_string(AttentionMode mode) {
    switch (mode) {
    case AttentionMode::both:
        return "both";
    case AttentionMode::tau_only:
        return "tau_only";
    case AttentionMode::delta_only:
        return "delta_only";
    case AttentionMode::vanilla:
        return "vanilla";
    }
    return "?";
}

FactorPairing parse_factor_pairing(std::string_view text) {
    if (text == "main") {
        return FactorPairing::main;
    }
    if (text == "appendix") {
        return FactorPairing::appendix;
    }
    throw ConfigError(fmt::format("unknown factor pairing '{}' (expected main|appendix)", text));
}

std::string_view to_string(FactorPairing pairing) {
    return pairing == FactorPairing::main ? "main" : "appendix";
}

DestatFactors DestatFactors::identity(std::size_t batch, std::size_t length) {
    if (batch == 0) {
        return {Tensor::scalar(1.0), Tensor::zeros({length})};
    }
    return {Tensor::full({batch}, 1.0), Tensor::zeros({batch, length})};
}

AttentionMask AttentionMask::causal(std::size_t queries, std::size_t keys) {
    AttentionMask mask{queries, keys, std::vector<std::uint8_t>(queries * keys, 0)};
    for (std::size_t i = 0; i < queries; ++i) {
        for (std::size_t j = i + 1; j < keys; ++j) {
            mask.blocked[i * keys + j] = 1;
        }
    }
    return mask;
}

Tensor destat_scores(const Tensor& raw, const DestatFactors& factors, AttentionMode mode, bool apply_delta,
                     double scale, const AttentionMask* mask) {
    if (raw.rank() < 2) {
        throw DimensionError(fmt::format("attention scores need rank >= 2, got {}", shape_str(raw.shape())));
    }
    const std::size_t lq = raw.size(-2);
    const std::size_t lk = raw.size(-1);
    const bool with_tau = uses_tau(mode);
    const bool with_delta = uses_delta(mode) && apply_delta;

    std::size_t batch = 1;
    if (with_tau || with_delta) {
        const Tensor& tau = factors.tau;
        if (!tau.defined() || tau.rank() > 1) {
            throw DimensionError("tau must be a scalar or a [B] vector");
        }
        if (tau.rank() == 1) {
            batch = tau.size(0);
            if (raw.rank() < 3 || raw.size(0) != batch) {
                throw DimensionError(fmt::format("tau for {} windows does not match scores {}", batch,
                                                 shape_str(raw.shape())));
            }
        }
        if (with_tau) {
            for (double t : tau.values()) {
                if (!(t > 0.0)) {
                    throw PreconditionError(fmt::format("tau must be positive, got {}", t));
                }
            }
        }
        if (with_delta) {
            const Shape expected = tau.rank() == 1 ? Shape{batch, lk} : Shape{lk};
            if (!factors.delta.defined() || factors.delta.shape() != expected) {
                throw DimensionError(fmt::format("delta shape {} does not match key length {} (expected {})",
                                                 factors.delta.defined() ? shape_str(factors.delta.shape()) : "none",
                                                 lk, shape_str(expected)));
            }
        }
    }
    if (mask && (mask->queries != lq || mask->keys != lk)) {
        throw DimensionError(fmt::format("mask [{}, {}] does not match scores [{}, {}]", mask->queries, mask->keys,
                                         lq, lk));
    }
    const std::size_t group = raw.numel() / (batch * lq * lk);
    auto rv = raw.values();
    std::vector<double> out(rv.size());
    const double* tv = with_tau ? factors.tau.values().data() : nullptr;
    const double* dv = with_delta ? factors.delta.values().data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
        const double t = tv ? tv[b] : 1.0;
        for (std::size_t g = 0; g < group; ++g) {
            const std::size_t base = (b * group + g) * lq * lk;
            for (std::size_t i = 0; i < lq; ++i) {
                for (std::size_t j = 0; j < lk; ++j) {
                    const std::size_t idx = base + i * lk + j;
                    double s = t * rv[idx];
                    if (dv) {
                        s += dv[b * lk + j];
                    }
                    s *= scale;
                    if (mask && mask->blocked[i * lk + j]) {
                        s += kMaskedScore;
                    }
                    out[idx] = s;
                }
            }
        }
    }
    std::vector<Tensor> inputs{raw};
    if (with_tau) {
        inputs.push_back(factors.tau);
    }
    if (with_delta) {
        inputs.push_back(factors.delta);
    }
    return make_result(
        "destat_scores", raw.shape(), std::move(out), inputs,
        [batch, group, lq, lk, scale, with_tau, with_delta](std::span<const double> g, const auto& in) {
            auto& nraw = *in[0];
            detail::Node* ntau = with_tau ? in[1].get() : nullptr;
            detail::Node* ndelta = with_delta ? in[with_tau ? 2 : 1].get() : nullptr;
            const std::size_t block = group * lq * lk;
            for (std::size_t b = 0; b < batch; ++b) {
                const double t = ntau ? ntau->values[b] : 1.0;
                const std::size_t base = b * block;
                if (nraw.requires_grad) {
                    auto& buf = nraw.grad_buffer();
                    for (std::size_t i = 0; i < block; ++i) {
                        buf[base + i] += g[base + i] * t * scale;
                    }
                }
                if (ntau && ntau->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < block; ++i) {
                        acc += g[base + i] * nraw.values[base + i];
                    }
                    ntau->grad_buffer()[b] += acc * scale;
                }
                if (ndelta && ndelta->requires_grad) {
                    auto& buf = ndelta->grad_buffer();
                    for (std::size_t r = 0; r < group * lq; ++r) {
                        for (std::size_t j = 0; j < lk; ++j) {
                            buf[b * lk + j] += g[base + r * lk + j] * scale;
                        }
                    }
                }
            }
        });
}

Tensor destationary_attention(const Tensor& q, const Tensor& k, const Tensor& v, const DestatFactors& factors,
                              const AttentionConfig& config, const AttentionMask* mask, bool apply_delta,
                              const AttentionRuntime& runtime) {
    if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank() || q.size(-1) != k.size(-1) ||
        k.size(-2) != v.size(-2)) {
        throw DimensionError(fmt::format("attention operands incompatible: Q {} K {} V {}", shape_str(q.shape()),
                                         shape_str(k.shape()), shape_str(v.shape())));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.size(-1)));
    Tensor raw = matmul(q, transpose_last2(k));
    Tensor scores = destat_scores(raw, factors, config.mode, apply_delta, scale, mask);
    Tensor weights = softmax_rows(scores);
    if (runtime.weights_out) {
        *runtime.weights_out = weights;
    }
    if (runtime.training && runtime.dropout > 0.0) {
        if (!runtime.rng) {
            throw PreconditionError("attention dropout requires an RNG");
        }
        weights = dropout(weights, runtime.dropout, true, *runtime.rng);
    }
    return matmul(weights, v);
}

namespace {

Tensor split_heads(const Tensor& x, std::size_t n_heads) {
    const std::size_t d_model = x.size(-1);
    if (n_heads == 0 || d_model % n_heads != 0) {
        throw ConfigError(fmt::format("model width {} is not divisible by {} heads", d_model, n_heads));
    }
    Shape s = x.shape();
    s.back() = n_heads;
    s.push_back(d_model / n_heads);
    // [.., L, H, dk] -> [.., H, L, dk]
    return swap_axes(reshape(x, std::move(s)), -3, -2);
}

Tensor merge_heads(const Tensor& x) {
    Tensor t = swap_axes(x, -3, -2); // [.., L, H, dk]
    Shape s(t.shape().begin(), t.shape().end() - 2);
    s.push_back(t.size(-2) * t.size(-1));
    return reshape(t, std::move(s));
}

} // namespace

Tensor multi_head_destat(const Tensor& q, const Tensor& k, const Tensor& v, const Linear& output,
                         const DestatFactors& factors, const AttentionConfig& config, const AttentionMask* mask,
                         bool apply_delta, const AttentionRuntime& runtime) {
    if (q.size(-1) != config.d_model()) {
        throw ConfigError(fmt::format("query width {} differs from d_k * heads = {} * {}", q.size(-1), config.d_k,
                                      config.n_heads));
    }
    Tensor heads = destationary_attention(split_heads(q, config.n_heads), split_heads(k, config.n_heads),
                                          split_heads(v, config.n_heads), factors, config, mask, apply_delta,
                                          runtime);
    return output(merge_heads(heads));
}

MultiHeadAttention MultiHeadAttention::create(ParameterSet& params, const std::string& path, std::size_t d_model,
                                              Rng& rng) {
    MultiHeadAttention m;
    m.query = Linear::create(params, path + ".query", d_model, d_model, true, rng);
    m.key = Linear::create(params, path + ".key", d_model, d_model, true, rng);
    m.value = Linear::create(params, path + ".value", d_model, d_model, true, rng);
    m.output = Linear::create(params, path + ".output", d_model, d_model, true, rng);
    return m;
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& keys, const DestatFactors& factors,
                                      const AttentionConfig& config, const AttentionMask* mask, bool apply_delta,
                                      const AttentionRuntime& runtime) const {
    return multi_head_destat(query(queries), key(keys), value(keys), output, factors, config, mask, apply_delta,
                             runtime);
}

Tensor ProjectorHead::operator()(const Tensor& raw_x, const Tensor& statistic) const {
    const std::size_t S = raw_x.size(-2);
    if (series_kernel.shape() != Shape{3, S}) {
        throw ConfigError(fmt::format("projector built for input length {}, window has {}", series_kernel.size(1), S));
    }
    // z[c] = sum_k sum_t w[k, t] * x[t, (c + k - 1) mod C]
    Tensor z;
    for (std::size_t k = 0; k < 3; ++k) {
        Tensor w_k = slice(series_kernel, 0, k, k + 1); // [1, S]
        Tensor term = matmul(w_k, roll(raw_x, -1, 1 - static_cast<long>(k)));
        z = z.defined() ? add(z, term) : term;
    }
    Shape flat(raw_x.shape().begin(), raw_x.shape().end() - 2);
    flat.push_back(raw_x.size(-1));
    Tensor features = concat({reshape(z, flat), statistic}, -1);
    return output(relu(hidden(features)));
}

ProjectorParams ProjectorParams::create(ParameterSet& params, const std::string& path, std::size_t input_len,
                                        std::size_t channels, std::size_t hidden, FactorPairing pairing, Rng& rng) {
    if (input_len == 0 || channels == 0 || hidden == 0) {
        throw ConfigError("projector dimensions must be positive");
    }
    auto make_head = [&](const std::string& name, std::size_t out) {
        ProjectorHead head;
        head.series_kernel =
            params.add(path + "." + name + ".series_kernel", {3, input_len}, xavier_uniform(3 * input_len, 1, rng));
        head.hidden = Linear::create(params, path + "." + name + ".hidden", 2 * channels, hidden, true, rng);
        head.output = Linear::create(params, path + "." + name + ".output", hidden, out, true, rng);
        for (auto& w : head.output.weight.mutable_values()) {
            w = 0.0;
        }
        return head;
    };
    ProjectorParams p;
    p.tau_head = make_head("tau", 1);
    p.delta_head = make_head("delta", input_len);
    p.input_len = input_len;
    p.channels = channels;
    p.pairing = pairing;
    return p;
}

DestatFactors project_factors(const ProjectorParams& params, const Tensor& raw_x, const StationaryStats& stats) {
    if (raw_x.rank() < 2 || raw_x.size(-2) != params.input_len || raw_x.size(-1) != params.channels) {
        throw ConfigError(fmt::format("projector expects [.., {}, {}] windows, got {}", params.input_len,
                                      params.channels, shape_str(raw_x.shape())));
    }
    const bool main = params.pairing == FactorPairing::main;
    const Tensor& tau_stat = main ? stats.sigma : stats.mu;
    const Tensor& delta_stat = main ? stats.mu : stats.sigma;
    Tensor log_tau = params.tau_head(raw_x, tau_stat);  // [.., 1]
    Tensor delta = params.delta_head(raw_x, delta_stat); // [.., S]
    if (delta.size(-1) != params.input_len) {
        throw ConfigError(fmt::format("delta head emits {} values for input length {}", delta.size(-1),
                                      params.input_len));
    }
    Shape tau_shape(log_tau.shape().begin(), log_tau.shape().end() - 1);
    return {exp(reshape(log_tau, std::move(tau_shape))), delta};
}

} // namespace nst
