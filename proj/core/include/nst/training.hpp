#pragma once

// Adam, the mini-batch training loop with early stopping, and evaluation.

#include "nst/data.hpp"
#include "nst/metrics.hpp"
#include "nst/model.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace nst {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct OptimState {
    AdamConfig config;
    std::size_t step = 0;
    std::vector<std::vector<double>> m; // per parameter, registration order
    std::vector<std::vector<double>> v;

    static OptimState create(const ParameterSet& params, AdamConfig config = {});
};

/// One bias-corrected Adam update from the accumulated gradients. Throws
/// NumericalError naming the parameter before touching anything if a
/// gradient is not finite.
void adam_step(ParameterSet& params, OptimState& state);

enum class LossSpace { original, normalized };

std::string_view to_string(LossSpace space);
LossSpace parse_loss_space(std::string_view text);

struct TrainConfig {
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::size_t patience = 3;
    double lr = 1e-4;
    bool lr_decay = false; // halve the rate after every epoch
    std::uint64_t seed = 2021;
    LossSpace loss = LossSpace::original;
    std::size_t train_stride = 1;
    std::size_t eval_stride = 1;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_mse = 0.0;
    double val_mae = 0.0;
    double lr = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_mse = 0.0;
    bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Trains on the train split, early-stops on validation MSE and leaves the
/// best parameters in the model. Writes a checkpoint at every improvement
/// when `checkpoint` is set.
TrainResult train(Model& model, const Dataset& data, const SplitSpec& split, const TrainConfig& config,
                  const std::optional<std::filesystem::path>& checkpoint = std::nullopt,
                  const EpochCallback& on_epoch = {});

struct EvalOptions {
    Split split = Split::test;
    std::size_t batch_size = 64;
    std::size_t stride = 1;
};

/// Forecasts every window of the split. Relative stationarity uses the
/// predictions of non-overlapping windows (stride O) laid end to end.
EvalReport evaluate(Model& model, const Dataset& data, const SplitSpec& split, const EvalOptions& options = {});

/// Forecasts of non-overlapping windows, concatenated: (pred, truth) [T', C].
std::pair<Tensor, Tensor> chronological_forecast(Model& model, const Dataset& data, const SplitSpec& split,
                                                 Split which, std::size_t batch_size = 64);

} // namespace nst
