#include "nst/data.hpp"

#include "nst/errors.hpp"
#include "nst/text.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

namespace nst {

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    for (;;) {
        const auto comma = line.find(',', pos);
        if (comma == std::string_view::npos) {
            out.push_back(trim(line.substr(pos)));
            return out;
        }
        out.push_back(trim(line.substr(pos, comma - pos)));
        pos = comma + 1;
    }
}

std::string unquote(std::string_view s) {
    if (s.size() >= 2 && s.front() == '"' && s.back() == '"') {
        s = s.substr(1, s.size() - 2);
    }
    return std::string(s);
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char ch) { return std::tolower(ch); });
    return out;
}

bool is_missing(std::string_view cell) {
    const std::string l = lower(cell);
    return l.empty() || l == "na" || l == "nan" || l == "null";
}

bool is_timestamp_name(std::string_view name) {
    const std::string l = lower(name);
    return l == "date" || l == "time" || l == "timestamp" || l == "datetime" || l == "ds";
}

const char* split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    }
    return "?";
}

} // namespace

std::vector<double> Dataset::column(std::size_t c) const {
    if (c >= cols()) {
        throw DimensionError(fmt::format("column {} out of range for {} columns", c, cols()));
    }
    std::vector<double> out(rows);
    for (std::size_t t = 0; t < rows; ++t) {
        out[t] = at(t, c);
    }
    return out;
}

Tensor Dataset::slice_rows(std::size_t begin, std::size_t end) const {
    if (begin > end || end > rows) {
        throw DimensionError(fmt::format("row range [{}, {}) outside {} rows", begin, end, rows));
    }
    const auto first = values.begin() + static_cast<std::ptrdiff_t>(begin * cols());
    const auto last = values.begin() + static_cast<std::ptrdiff_t>(end * cols());
    return Tensor::from({end - begin, cols()}, std::vector<double>(first, last));
}

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
    std::ifstream in(path);
    if (!in) {
        throw DataError(fmt::format("cannot open '{}'", path.string()));
    }
    std::string line;
    std::size_t line_no = 0;
    std::vector<std::string_view> header;
    std::string header_line;
    while (std::getline(in, line)) {
        ++line_no;
        if (!trim(line).empty()) {
            header_line = line;
            header = split_fields(header_line);
            break;
        }
    }
    if (header.empty()) {
        throw DataError(fmt::format("'{}' is empty", path.string()));
    }

    Dataset data;
    data.name = path.stem().string();
    bool has_timestamp = is_timestamp_name(unquote(header[0]));
    bool decided = has_timestamp;
    std::vector<double> previous;

    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw DataError(fmt::format("line {}: expected {} fields, found {}", line_no, header.size(), fields.size()));
        }
        if (!decided) {
            has_timestamp = !is_missing(fields[0]) && !try_parse_double(fields[0]).has_value();
            decided = true;
        }
        const std::size_t first = has_timestamp ? 1 : 0;
        if (first >= fields.size()) {
            throw DataError(fmt::format("'{}' has no feature columns", path.string()));
        }
        std::vector<double> row;
        row.reserve(fields.size() - first);
        for (std::size_t j = first; j < fields.size(); ++j) {
            if (is_missing(fields[j])) {
                if (options.missing == MissingPolicy::strict) {
                    throw DataError(fmt::format("line {}, column '{}': missing value (strict mode)", line_no,
                                                unquote(header[j])));
                }
                if (previous.empty()) {
                    throw DataError(fmt::format("line {}, column '{}': missing value with no earlier row to fill from",
                                                line_no, unquote(header[j])));
                }
                row.push_back(previous[j - first]);
                ++data.filled_cells;
                continue;
            }
            const auto v = try_parse_double(fields[j]);
            if (!v || !std::isfinite(*v)) {
                throw DataError(fmt::format("line {}, column '{}': cannot parse '{}'", line_no, unquote(header[j]),
                                            fields[j]));
            }
            row.push_back(*v);
        }
        data.values.insert(data.values.end(), row.begin(), row.end());
        previous = std::move(row);
        ++data.rows;
    }
    if (data.rows == 0) {
        throw DataError(fmt::format("'{}' has a header but no data rows", path.string()));
    }
    for (std::size_t j = has_timestamp ? 1 : 0; j < header.size(); ++j) {
        data.columns.push_back(unquote(header[j]));
    }
    return data;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) {
        throw DataError(fmt::format("cannot write '{}'", path.string()));
    }
    for (std::size_t c = 0; c < data.cols(); ++c) {
        out << (c ? "," : "") << data.columns[c];
    }
    out << '\n';
    for (std::size_t t = 0; t < data.rows; ++t) {
        for (std::size_t c = 0; c < data.cols(); ++c) {
            out << (c ? "," : "") << fmt::format("{}", data.at(t, c));
        }
        out << '\n';
    }
    if (!out) {
        throw DataError(fmt::format("write to '{}' failed", path.string()));
    }
}

std::string_view to_string(Split split) {
    return split_name(split);
}

Split parse_split(std::string_view text) {
    if (text == "train") {
        return Split::train;
    }
    if (text == "val") {
        return Split::val;
    }
    if (text == "test") {
        return Split::test;
    }
    throw ConfigError(fmt::format("split: unknown value '{}' (train, val, test)", text));
}

void SplitSpec::validate() const {
    if (!(train > 0.0) || !(val > 0.0) || !(test > 0.0) || !std::isfinite(train + val + test)) {
        throw ConfigError(fmt::format("split: ratios must be positive, got {}:{}:{}", train, val, test));
    }
}

Segment segment_for(std::size_t rows, const SplitSpec& spec, Split split, std::size_t input_len) {
    spec.validate();
    const double total = spec.train + spec.val + spec.test;
    const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(rows) * spec.train / total));
    const auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(rows) * spec.val / total));
    Segment seg;
    switch (split) {
    case Split::train:
        seg = {0, 0, n_train};
        break;
    case Split::val:
        seg = {n_train, n_train, n_train + n_val};
        break;
    case Split::test:
        seg = {n_train + n_val, n_train + n_val, rows};
        break;
    }
    if (split != Split::train) {
        if (seg.begin < input_len) {
            throw DataError(fmt::format("{} split: {} preceding rows cannot supply a context of {}", split_name(split),
                                        seg.begin, input_len));
        }
        seg.begin -= input_len;
    }
    return seg;
}

std::vector<std::size_t> window_starts(std::size_t rows, const SplitSpec& spec, Split split, std::size_t input_len,
                                       std::size_t pred_len, std::size_t stride) {
    if (input_len == 0 || stride == 0) {
        throw ConfigError("window length and stride must be positive");
    }
    const Segment seg = segment_for(rows, spec, split, input_len);
    const std::size_t span = input_len + pred_len;
    if (seg.length() < span) {
        throw DataError(fmt::format("{} split has {} rows, fewer than input_len + pred_len = {}", split_name(split),
                                    seg.length(), span));
    }
    std::vector<std::size_t> starts;
    for (std::size_t t = seg.begin; t + span <= seg.end; t += stride) {
        if (t + input_len < seg.own_begin || t + span > seg.end) {
            throw DataError(fmt::format("window at row {} leaks across the {} split boundary", t, split_name(split)));
        }
        starts.push_back(t);
    }
    return starts;
}

std::vector<SeriesWindow> make_windows(const Dataset& data, const SplitSpec& spec, Split split, std::size_t input_len,
                                       std::size_t pred_len, std::size_t stride) {
    std::vector<SeriesWindow> out;
    for (std::size_t t : window_starts(data.rows, spec, split, input_len, pred_len, stride)) {
        SeriesWindow w;
        w.x = data.slice_rows(t, t + input_len);
        w.target = data.slice_rows(t + input_len, t + input_len + pred_len);
        w.start = t;
        out.push_back(std::move(w));
    }
    return out;
}

namespace {

Tensor gather(const Dataset& data, std::span<const std::size_t> starts, std::size_t offset, std::size_t len) {
    const std::size_t c = data.cols();
    std::vector<double> out;
    out.reserve(starts.size() * len * c);
    for (std::size_t t : starts) {
        if (t + offset + len > data.rows) {
            throw DimensionError(fmt::format("window rows [{}, {}) outside {} rows", t + offset, t + offset + len,
                                             data.rows));
        }
        const auto first = data.values.begin() + static_cast<std::ptrdiff_t>((t + offset) * c);
        out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(len * c));
    }
    return Tensor::from({starts.size(), len, c}, std::move(out));
}

} // namespace

Tensor gather_inputs(const Dataset& data, std::span<const std::size_t> starts, std::size_t input_len) {
    return gather(data, starts, 0, input_len);
}

Tensor gather_targets(const Dataset& data, std::span<const std::size_t> starts, std::size_t input_len,
                      std::size_t pred_len) {
    return gather(data, starts, input_len, pred_len);
}

std::string_view to_string(SyntheticKind kind) {
    switch (kind) {
    case SyntheticKind::trend_seasonal: return "trend_seasonal";
    case SyntheticKind::regime_scale: return "regime_scale";
    case SyntheticKind::random_walk: return "random_walk";
    case SyntheticKind::ar1: return "ar1";
    case SyntheticKind::white_noise: return "white_noise";
    }
    return "?";
}

SyntheticKind parse_synthetic_kind(std::string_view text) {
    for (auto k : {SyntheticKind::trend_seasonal, SyntheticKind::regime_scale, SyntheticKind::random_walk,
                   SyntheticKind::ar1, SyntheticKind::white_noise}) {
        if (to_string(k) == text) {
            return k;
        }
    }
    throw ConfigError(fmt::format(
        "synthetic.kind: unknown generator '{}' (trend_seasonal, regime_scale, random_walk, ar1, white_noise)", text));
}

void SyntheticSpec::validate() const {
    if (length == 0 || channels == 0) {
        throw ConfigError("synthetic: length and channels must be positive");
    }
    if (!(noise_std >= 0.0)) {
        throw ConfigError("synthetic.noise_std must be non-negative");
    }
    if (kind == SyntheticKind::ar1 && !(std::abs(phi) < 1.0)) {
        throw ConfigError(fmt::format("synthetic.phi: |phi| must be below 1, got {}", phi));
    }
    if (!(period > 0.0)) {
        throw ConfigError("synthetic.period must be positive");
    }
    if (regimes == 0) {
        throw ConfigError("synthetic.regimes must be at least 1");
    }
    if (!(regime_scale_max >= 1.0)) {
        throw ConfigError("synthetic.regime_scale_max must be at least 1");
    }
    if (!(regime_level_max >= 0.0)) {
        throw ConfigError("synthetic.regime_level_max must be non-negative");
    }
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t n = spec.length;
    const std::size_t cdim = spec.channels;

    Dataset data;
    data.name = std::string(to_string(spec.kind));
    data.step = "1";
    data.rows = n;
    data.values.assign(n * cdim, 0.0);
    for (std::size_t c = 0; c < cdim; ++c) {
        data.columns.push_back(fmt::format("x{}", c));
    }

    // Regime parameters come from their own stream so the noise stream stays
    // identical across kinds.
    std::mt19937_64 regime_rng(spec.seed ^ 0x5bd1e9955bd1e995ULL);
    std::uniform_real_distribution<double> log_scale(0.0, std::log(spec.regime_scale_max));
    std::uniform_real_distribution<double> level(-spec.regime_level_max, spec.regime_level_max);
    std::vector<double> scales(spec.regimes * cdim);
    std::vector<double> levels(spec.regimes * cdim);
    for (std::size_t i = 0; i < scales.size(); ++i) {
        scales[i] = std::exp(log_scale(regime_rng));
        levels[i] = spec.regime_level_max > 0.0 ? level(regime_rng) : 0.0;
    }
    auto regime_of = [&](std::size_t t) { return std::min(spec.regimes - 1, t * spec.regimes / n); };

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> prev(cdim, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        for (std::size_t c = 0; c < cdim; ++c) {
            const double e = spec.noise_std * normal(rng);
            double y = 0.0;
            switch (spec.kind) {
            case SyntheticKind::white_noise:
                y = e;
                break;
            case SyntheticKind::ar1:
                y = (t == 0 ? 0.0 : spec.phi * prev[c]) + e;
                break;
            case SyntheticKind::random_walk:
                y = (t == 0 ? 0.0 : prev[c]) + e;
                break;
            case SyntheticKind::regime_scale: {
                const std::size_t r = regime_of(t) * cdim + c;
                y = levels[r] + scales[r] * e;
                break;
            }
            case SyntheticKind::trend_seasonal: {
                const std::size_t r = regime_of(t) * cdim + c;
                const double period = spec.period * (1.0 + static_cast<double>(c) / 4.0);
                const double phase = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(cdim);
                const double wave =
                    spec.amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) / period + phase);
                y = spec.trend_slope * static_cast<double>(t) + scales[r] * (wave + e);
                break;
            }
            }
            data.values[t * cdim + c] = y;
            prev[c] = y;
        }
    }
    return data;
}

} // namespace nst
