#pragma once

// Multivariate series storage, CSV ingestion, chronological splits,
// sliding windows and synthetic generators.

#include "nst/stationarization.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nst {

/// T x C observations, row-major.
struct Dataset {
    std::string name;
    std::vector<std::string> columns;
    std::vector<double> values;
    std::size_t rows = 0;
    std::string step;            // free-form sampling description
    std::size_t filled_cells = 0; // cells forward-filled during ingestion

    std::size_t cols() const { return columns.size(); }
    double at(std::size_t t, std::size_t c) const { return values[t * cols() + c]; }
    std::span<const double> row(std::size_t t) const { return {values.data() + t * cols(), cols()}; }
    std::vector<double> column(std::size_t c) const;
    /// Rows [begin, end) as a [end - begin, C] tensor.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;

    bool operator==(const Dataset& other) const = default;
};

enum class MissingPolicy { strict, forward_fill };

struct CsvOptions {
    MissingPolicy missing = MissingPolicy::strict;
};

/// Comma-separated, header row, optional leading timestamp column (detected
/// by header name or by non-numeric content). Errors carry file line and column.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options = {});
void write_csv(const Dataset& data, const std::filesystem::path& path);

enum class Split { train, val, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

/// Chronological train/val/test ratios.
struct SplitSpec {
    double train = 7.0;
    double val = 2.0;
    double test = 2.0;

    void validate() const;
};

/// Rows [begin, end) of one split. `own_begin` is where the split proper
/// starts; rows before it are the context prefix borrowed from the preceding
/// split so that its first target is predictable.
struct Segment {
    std::size_t begin = 0;
    std::size_t own_begin = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - begin; }
};

Segment segment_for(std::size_t rows, const SplitSpec& spec, Split split, std::size_t input_len);

/// Start rows of every window (x = rows t..t+S, target = rows t+S..t+S+O)
/// inside the split, in increasing order. Throws DataError naming the split
/// when the segment is shorter than S + O.
std::vector<std::size_t> window_starts(std::size_t rows, const SplitSpec& spec, Split split, std::size_t input_len,
                                       std::size_t pred_len, std::size_t stride = 1);

std::vector<SeriesWindow> make_windows(const Dataset& data, const SplitSpec& spec, Split split, std::size_t input_len,
                                       std::size_t pred_len, std::size_t stride = 1);

/// Stacked inputs [B, S, C] and targets [B, O, C] for the given start rows.
Tensor gather_inputs(const Dataset& data, std::span<const std::size_t> starts, std::size_t input_len);
Tensor gather_targets(const Dataset& data, std::span<const std::size_t> starts, std::size_t input_len,
                      std::size_t pred_len);

enum class SyntheticKind { trend_seasonal, regime_scale, random_walk, ar1, white_noise };

std::string_view to_string(SyntheticKind kind);
SyntheticKind parse_synthetic_kind(std::string_view text);

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::trend_seasonal;
    std::size_t length = 4000;
    std::size_t channels = 1;
    std::uint64_t seed = 1;

    double noise_std = 1.0;
    double phi = 0.5;              // ar1
    double amplitude = 5.0;        // trend_seasonal
    double period = 24.0;          // trend_seasonal, channel c uses period * (1 + c / 4)
    double trend_slope = 0.01;     // trend_seasonal, per step
    std::size_t regimes = 4;       // trend_seasonal, regime_scale: equal-length pieces
    double regime_scale_max = 4.0; // piece scales log-uniform in [1, max]
    double regime_level_max = 0.0; // regime_scale: piece levels uniform in [-max, max]

    void validate() const;
};

/// Deterministic per seed. Noise is drawn row by row from one normal stream,
/// so white_noise, ar1 with phi = 0 and trend_seasonal share their noise.
Dataset generate_synthetic(const SyntheticSpec& spec);

} // namespace nst
