#pragma once

// Declarative run description loaded from YAML.
//
//   version: 1
//   output_dir: runs/example
//   data:
//     synthetic: {kind: trend_seasonal, length: 4000, channels: 3, seed: 7}
//     # or: csv: data/etth1.csv
//     missing: strict            # strict | forward_fill
//     split: [7, 2, 2]
//   model:  {input_len: 48, pred_len: 24, d_model: 64, mode: both, ...}
//   train:  {epochs: 10, lr: 0.001, batch_size: 32, ...}
//
// Unknown keys are rejected. Errors name the line and the dotted field.

#include "nst/data.hpp"
#include "nst/model.hpp"
#include "nst/training.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace nst::cli {

inline constexpr int kRunConfigVersion = 1;

struct RunConfig {
    std::filesystem::path output_dir;
    std::optional<std::filesystem::path> csv;
    std::optional<SyntheticSpec> synthetic;
    MissingPolicy missing = MissingPolicy::strict;
    SplitSpec split;
    ModelConfig model;
    bool channels_set = false;
    TrainConfig train;
};

/// `key=value` with a dotted key, e.g. `model.d_model=32`.
struct Override {
    std::string key;
    std::string value;
};

Override parse_override(const std::string& text);

/// Relative csv and output paths resolve against `base_dir`.
RunConfig parse_run_config(const std::string& yaml_text, const std::vector<Override>& overrides = {},
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path, const std::vector<Override>& overrides = {});

/// Fully resolved YAML (every field written out). Parsing it back yields the same config.
std::string to_yaml(const RunConfig& config);

/// Loads or generates the series and fills model.channels from it.
Dataset load_dataset(RunConfig& config);

} // namespace nst::cli
