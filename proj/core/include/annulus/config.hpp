#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "annulus/synthvideo.hpp"

namespace annulus {

/// Ordered `key = value` pairs. Blank lines and `#` comments are ignored;
/// a line without `=` or a repeated key is a ConfigError.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

/// Typed conversions; throw ConfigError naming the key.
int parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
std::uint64_t parse_u64(const std::string& key, const std::string& value);
std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value);
std::string format_double(double v);

/// Sets one SynthConfig field by name; unknown keys are a ConfigError.
void set_synth_value(SynthConfig& cfg, const std::string& key, const std::string& value);
SynthConfig synth_config_from(const KeyValues& kv);
KeyValues synth_config_values(const SynthConfig& cfg);

}  // namespace annulus
