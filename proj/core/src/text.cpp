#include "nst/text.hpp"

#include "nst/errors.hpp"

#include <fmt/format.h>

#include <charconv>

namespace nst {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::optional<double> try_parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') {
        s.remove_prefix(1);
    }
    double v = 0.0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || ptr != end) {
        return std::nullopt;
    }
    return v;
}

double parse_double(std::string_view s, const std::string& field) {
    auto v = try_parse_double(s);
    if (!v) {
        throw ConfigError(fmt::format("{}: '{}' is not a number", field, s));
    }
    return *v;
}

std::uint64_t parse_u64(std::string_view s, const std::string& field) {
    s = trim(s);
    std::uint64_t v = 0;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (s.empty() || ec != std::errc() || ptr != end) {
        throw ConfigError(fmt::format("{}: '{}' is not a non-negative integer", field, s));
    }
    return v;
}

std::size_t parse_size(std::string_view s, const std::string& field) {
    return static_cast<std::size_t>(parse_u64(s, field));
}

bool parse_bool(std::string_view s, const std::string& field) {
    s = trim(s);
    if (s == "true" || s == "1" || s == "yes") {
        return true;
    }
    if (s == "false" || s == "0" || s == "no") {
        return false;
    }
    throw ConfigError(fmt::format("{}: '{}' is not a boolean", field, s));
}

std::vector<double> parse_doubles(std::string_view s, const std::string& where) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t' || s[pos] == '\r')) {
            ++pos;
        }
        if (pos >= s.size()) {
            break;
        }
        auto next = s.find_first_of(" \t\r", pos);
        if (next == std::string_view::npos) {
            next = s.size();
        }
        auto v = try_parse_double(s.substr(pos, next - pos));
        if (!v) {
            throw DataError(fmt::format("{}: bad number '{}'", where, s.substr(pos, next - pos)));
        }
        out.push_back(*v);
        pos = next;
    }
    return out;
}

} // namespace nst
