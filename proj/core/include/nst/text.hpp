#pragma once

// Strict scalar parsing shared by the CSV reader, checkpoints and configs.
// Failures throw ConfigError (or DataError for parse_doubles) naming `field`.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nst {

std::string_view trim(std::string_view s);
std::optional<double> try_parse_double(std::string_view s);

double parse_double(std::string_view s, const std::string& field);
std::size_t parse_size(std::string_view s, const std::string& field);
std::uint64_t parse_u64(std::string_view s, const std::string& field);
bool parse_bool(std::string_view s, const std::string& field);
/// Whitespace-separated doubles.
std::vector<double> parse_doubles(std::string_view s, const std::string& where);

} // namespace nst
