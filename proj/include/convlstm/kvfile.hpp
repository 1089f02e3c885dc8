#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace convlstm {

// Flat `key = value` text with `#` comments and blank lines.
// Entries keep file order; duplicate keys are rejected.
using KeyValueList = std::vector<std::pair<std::string, std::string>>;

KeyValueList parse_key_values(std::string_view text, const std::string& origin);
KeyValueList read_key_value_file(const std::filesystem::path& path);
std::string format_key_values(const KeyValueList& kv);

// Strict scalar parsers; they throw ConfigError naming `key` on bad input.
std::size_t parse_count(const std::string& key, const std::string& value);
std::int64_t parse_int(const std::string& key, const std::string& value);
double parse_real(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
std::vector<std::size_t> parse_count_list(const std::string& key, const std::string& value);

// Shortest decimal text that parses back to the same double.
std::string format_real(double v);

}  // namespace convlstm
