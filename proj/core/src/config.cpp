#include "annulus/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "annulus/errors.hpp"

namespace annulus {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class V>
V parse_number(const std::string& key, const std::string& value, const char* kind) {
  V out{};
  const char* first = value.data();
  const char* last = first + value.size();
  const auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc() || ptr != last || value.empty()) {
    throw ConfigError("config: " + key + " expects " + kind + ", got '" + value + "'");
  }
  return out;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    const bool repeated = std::any_of(out.begin(), out.end(), [&](const auto& kv) { return kv.first == key; });
    if (repeated) throw ConfigError("config: key '" + key + "' given twice");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  return parse_number<int>(key, value, "an integer");
}

double parse_double(const std::string& key, const std::string& value) {
  return parse_number<double>(key, value, "a number");
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  return parse_number<std::uint64_t>(key, value, "a non-negative integer");
}

std::vector<std::uint64_t> parse_u64_list(const std::string& key, const std::string& value) {
  std::vector<std::uint64_t> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_u64(key, trim(item)));
  if (out.empty()) throw ConfigError("config: " + key + " expects a comma-separated list");
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void set_synth_value(SynthConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "frames") cfg.frames = parse_int(key, value);
  else if (key == "height") cfg.height = parse_int(key, value);
  else if (key == "width") cfg.width = parse_int(key, value);
  else if (key == "cycles") cfg.cycles = parse_double(key, value);
  else if (key == "spacing_mm") cfg.spacing_mm = parse_double(key, value);
  else if (key == "amplitude_mm") cfg.amplitude_mm = parse_double(key, value);
  else if (key == "annulus_width_mm") cfg.annulus_width_mm = parse_double(key, value);
  else if (key == "speckle_strength") cfg.speckle_strength = parse_double(key, value);
  else if (key == "speckle_correlation") cfg.speckle_correlation = parse_double(key, value);
  else if (key == "speckle_blur_px") cfg.speckle_blur_px = parse_double(key, value);
  else if (key == "annotation_density") cfg.annotation_density = parse_double(key, value);
  else if (key == "exit_fraction") cfg.exit_fraction = parse_double(key, value);
  else if (key == "systole_fraction") cfg.systole_fraction = parse_double(key, value);
  else if (key == "half_angle_deg") cfg.half_angle_deg = parse_double(key, value);
  else throw ConfigError("synth config: unknown key '" + key + "'");
}

SynthConfig synth_config_from(const KeyValues& kv) {
  SynthConfig cfg;
  for (const auto& [k, v] : kv) set_synth_value(cfg, k, v);
  validate(cfg);
  return cfg;
}

KeyValues synth_config_values(const SynthConfig& cfg) {
  return {{"frames", std::to_string(cfg.frames)},
          {"height", std::to_string(cfg.height)},
          {"width", std::to_string(cfg.width)},
          {"cycles", format_double(cfg.cycles)},
          {"spacing_mm", format_double(cfg.spacing_mm)},
          {"amplitude_mm", format_double(cfg.amplitude_mm)},
          {"annulus_width_mm", format_double(cfg.annulus_width_mm)},
          {"speckle_strength", format_double(cfg.speckle_strength)},
          {"speckle_correlation", format_double(cfg.speckle_correlation)},
          {"speckle_blur_px", format_double(cfg.speckle_blur_px)},
          {"annotation_density", format_double(cfg.annotation_density)},
          {"exit_fraction", format_double(cfg.exit_fraction)},
          {"systole_fraction", format_double(cfg.systole_fraction)},
          {"half_angle_deg", format_double(cfg.half_angle_deg)}};
}

}  // namespace annulus
