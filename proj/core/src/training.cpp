#include "nst/training.hpp"

#include "nst/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

namespace nst {

OptimState OptimState::create(const ParameterSet& params, AdamConfig config) {
    OptimState s;
    s.config = config;
    for (const auto& [path, t] : params) {
        s.m.emplace_back(t.numel(), 0.0);
        s.v.emplace_back(t.numel(), 0.0);
    }
    return s;
}

void adam_step(ParameterSet& params, OptimState& state) {
    if (state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError(fmt::format("adam: optimiser tracks {} tensors, model has {}", state.m.size(),
                                         params.size()));
    }
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    std::size_t i = 0;
    for (auto& [path, t] : params) {
        grads.push_back(t.grad());
        if (grads.back().size() != state.m[i].size()) {
            throw DimensionError(fmt::format("adam: moment size mismatch for '{}'", path));
        }
        for (double g : grads.back()) {
            if (!std::isfinite(g)) {
                throw NumericalError(fmt::format("adam: non-finite gradient in '{}'", path));
            }
        }
        ++i;
    }

    ++state.step;
    const auto& c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    i = 0;
    for (auto& [path, t] : params) {
        auto w = t.mutable_values();
        auto& m = state.m[i];
        auto& v = state.v[i];
        const auto& g = grads[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
            const double m_hat = m[j] / bc1;
            const double v_hat = v[j] / bc2;
            w[j] -= c.lr * m_hat / (std::sqrt(v_hat) + c.eps);
        }
        ++i;
    }
}

std::string_view to_string(LossSpace space) {
    return space == LossSpace::original ? "original" : "normalized";
}

LossSpace parse_loss_space(std::string_view text) {
    if (text == "original") {
        return LossSpace::original;
    }
    if (text == "normalized") {
        return LossSpace::normalized;
    }
    throw ConfigError(fmt::format("train.loss: unknown value '{}' (original, normalized)", text));
}

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw ConfigError("train.batch_size must be at least 1");
    }
    if (epochs == 0) {
        throw ConfigError("train.epochs must be at least 1");
    }
    if (!(lr >= 0.0) || !std::isfinite(lr)) {
        throw ConfigError(fmt::format("train.lr must be a non-negative number, got {}", lr));
    }
    if (train_stride == 0 || eval_stride == 0) {
        throw ConfigError("train.train_stride and train.eval_stride must be at least 1");
    }
}

namespace {

struct Snapshot {
    std::vector<std::vector<double>> values;
};

Snapshot snapshot(const ParameterSet& params) {
    Snapshot s;
    for (const auto& [path, t] : params) {
        s.values.emplace_back(t.values().begin(), t.values().end());
    }
    return s;
}

void restore(ParameterSet& params, const Snapshot& s) {
    std::size_t i = 0;
    for (auto& [path, t] : params) {
        std::copy(s.values[i].begin(), s.values[i].end(), t.mutable_values().begin());
        ++i;
    }
}

void check_channels(const Model& model, const Dataset& data) {
    if (model.config().channels != data.cols()) {
        throw ConfigError(fmt::format("model.channels is {} but the dataset has {} columns", model.config().channels,
                                      data.cols()));
    }
}

/// Forecasts for the given windows in batches, stacked to [N, O, C].
Tensor forecast(Model& model, const Dataset& data, const std::vector<std::size_t>& starts, std::size_t batch_size) {
    NoGradGuard no_grad;
    const auto& cfg = model.config();
    std::vector<double> out;
    out.reserve(starts.size() * cfg.pred_len * cfg.channels);
    for (std::size_t b = 0; b < starts.size(); b += batch_size) {
        const std::size_t e = std::min(starts.size(), b + batch_size);
        const std::span<const std::size_t> batch(starts.data() + b, e - b);
        const ForecastBatch f = model.forward(gather_inputs(data, batch, cfg.input_len), false);
        out.insert(out.end(), f.y_hat.values().begin(), f.y_hat.values().end());
    }
    return Tensor::from({starts.size(), cfg.pred_len, cfg.channels}, std::move(out));
}

} // namespace

TrainResult train(Model& model, const Dataset& data, const SplitSpec& split, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint, const EpochCallback& on_epoch) {
    config.validate();
    check_channels(model, data);
    const auto& cfg = model.config();
    const auto train_starts = window_starts(data.rows, split, Split::train, cfg.input_len, cfg.pred_len,
                                            config.train_stride);
    const auto val_starts = window_starts(data.rows, split, Split::val, cfg.input_len, cfg.pred_len,
                                          config.eval_stride);
    const Tensor val_truth = gather_targets(data, val_starts, cfg.input_len, cfg.pred_len);

    ParameterSet& params = model.parameters();
    OptimState state = OptimState::create(params, {config.lr});
    std::mt19937_64 shuffle_rng(config.seed);
    model.reseed_dropout(config.seed ^ 0x9e3779b97f4a7c15ULL);

    TrainResult result;
    Snapshot best;
    std::size_t since_best = 0;
    std::vector<std::size_t> order(train_starts.size());
    std::vector<std::size_t> batch;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), shuffle_rng);

        double loss_sum = 0.0;
        std::size_t loss_count = 0;
        std::size_t batch_index = 0;
        for (std::size_t b = 0; b < order.size(); b += config.batch_size, ++batch_index) {
            const std::size_t e = std::min(order.size(), b + config.batch_size);
            batch.clear();
            for (std::size_t i = b; i < e; ++i) {
                batch.push_back(train_starts[order[i]]);
            }
            const Tensor x = gather_inputs(data, batch, cfg.input_len);
            const Tensor y = gather_targets(data, batch, cfg.input_len, cfg.pred_len);

            params.zero_grad();
            Tensor loss;
            if (config.loss == LossSpace::original) {
                loss = mse_loss(model.forward(x, true).y_hat, y);
            } else {
                const ForecastBatch f = model.forward(x, true);
                const NormalizedWindow n = normalize(x, cfg.epsilon);
                const Tensor mu = expand(n.stats.mu, -2, cfg.pred_len);
                const Tensor sigma = expand(n.stats.sigma, -2, cfg.pred_len);
                loss = mse_loss(f.y_prime, (y - mu) / sigma);
            }
            const double value = loss.item();
            if (!std::isfinite(value)) {
                throw NumericalError(fmt::format("training diverged: loss {} at epoch {} batch {}", value, epoch,
                                                 batch_index));
            }
            loss.backward();
            try {
                adam_step(params, state);
            } catch (const Error&) {
                rethrow_with_context(fmt::format("epoch {} batch {}", epoch, batch_index));
            }
            loss_sum += value * static_cast<double>(batch.size());
            loss_count += batch.size();
        }

        const ErrorMetrics val = mse_mae(forecast(model, data, val_starts, 64), val_truth);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(loss_count);
        rec.val_mse = val.mse;
        rec.val_mae = val.mae;
        rec.lr = state.config.lr;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (on_epoch) {
            on_epoch(rec);
        }

        if (!std::isfinite(val.mse)) {
            throw NumericalError(fmt::format("validation MSE is {} after epoch {}", val.mse, epoch));
        }
        if (result.best_epoch == 0 || val.mse < result.best_val_mse) {
            result.best_epoch = epoch;
            result.best_val_mse = val.mse;
            best = snapshot(params);
            since_best = 0;
            if (checkpoint) {
                save_checkpoint(*checkpoint, model);
            }
        } else if (++since_best >= config.patience) {
            result.stopped_early = epoch < config.epochs;
            break;
        }
        if (config.lr_decay) {
            state.config.lr *= 0.5;
        }
    }
    restore(params, best);
    return result;
}

std::pair<Tensor, Tensor> chronological_forecast(Model& model, const Dataset& data, const SplitSpec& split,
                                                 Split which, std::size_t batch_size) {
    check_channels(model, data);
    const auto& cfg = model.config();
    const auto starts = window_starts(data.rows, split, which, cfg.input_len, cfg.pred_len, cfg.pred_len);
    const Tensor pred = forecast(model, data, starts, batch_size);
    const Tensor truth = gather_targets(data, starts, cfg.input_len, cfg.pred_len);
    const std::size_t rows = starts.size() * cfg.pred_len;
    return {reshape(pred, {rows, cfg.channels}), reshape(truth, {rows, cfg.channels})};
}

EvalReport evaluate(Model& model, const Dataset& data, const SplitSpec& split, const EvalOptions& options) {
    check_channels(model, data);
    if (options.batch_size == 0) {
        throw ConfigError("eval batch_size must be at least 1");
    }
    const auto& cfg = model.config();
    const auto starts = window_starts(data.rows, split, options.split, cfg.input_len, cfg.pred_len, options.stride);
    const Tensor pred = forecast(model, data, starts, options.batch_size);
    const Tensor truth = gather_targets(data, starts, cfg.input_len, cfg.pred_len);

    EvalReport report;
    report.windows = starts.size();
    report.overall = mse_mae(pred, truth);
    report.horizon = per_horizon(pred, truth);
    const auto [chrono_pred, chrono_truth] =
        chronological_forecast(model, data, split, options.split, options.batch_size);
    if (chrono_pred.size(0) >= kAdfMinLength) {
        report.relative = relative_stationarity(chrono_pred, chrono_truth);
    }
    return report;
}

} // namespace nst
