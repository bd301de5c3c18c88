#include "annulus/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "annulus/errors.hpp"

namespace annulus {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("truncated checkpoint: " + what);
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

nlohmann::json config_json(const ModelConfig& c) {
  return {{"input_size", c.input_size}, {"n_downsamples", c.n_downsamples},
          {"base_channels", c.base_channels}, {"groups", c.groups},
          {"n_landmarks", c.n_landmarks}};
}

ModelConfig config_from(const nlohmann::json& j) {
  ModelConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.n_downsamples = j.at("n_downsamples").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.groups = j.at("groups").get<int>();
  c.n_landmarks = j.at("n_landmarks").get<int>();
  return c;
}

struct Section {
  const char* prefix;
  ParameterSet<float> Checkpoint::*member;
};

constexpr Section kSections[] = {
    {"", &Checkpoint::params},
    {"adam.m/", &Checkpoint::adam_m},
    {"adam.v/", &Checkpoint::adam_v},
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const Section& s : kSections) {
    for (const auto& t : (ckpt.*s.member).tensors) {
      table.push_back({{"name", std::string(s.prefix) + t.name}, {"shape", t.shape}, {"offset", offset}});
      offset += t.size();
    }
  }
  const nlohmann::json header = {{"config", config_json(ckpt.config)},
                                 {"step", ckpt.step},
                                 {"rng_state", ckpt.rng_state},
                                 {"tensors", table},
                                 {"total_values", offset}};
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write("ALCK", 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const Section& s : kSections) {
    for (const auto& t : (ckpt.*s.member).tensors) {
      for (float v : t.data) put_u32(out, std::bit_cast<std::uint32_t>(v));
    }
  }
  if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "ALCK", 4) != 0) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  const std::uint32_t version = get_u32(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t header_len = get_u32(in, "header length");
  if (header_len > (64u << 20)) throw FormatError(path.string() + ": implausible header length");
  std::string text(header_len, '\0');
  if (!in.read(text.data(), header_len)) throw FormatError(path.string() + ": truncated header");

  Checkpoint ckpt;
  std::vector<std::pair<std::string, std::vector<int>>> entries;
  std::uint64_t total = 0;
  try {
    const nlohmann::json header = nlohmann::json::parse(text);
    ckpt.config = config_from(header.at("config"));
    ckpt.step = header.at("step").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
    total = header.at("total_values").get<std::uint64_t>();
    std::uint64_t expected_offset = 0;
    for (const auto& e : header.at("tensors")) {
      if (e.at("offset").get<std::uint64_t>() != expected_offset) {
        throw FormatError(path.string() + ": tensor table offsets are not contiguous");
      }
      auto shape = e.at("shape").get<std::vector<int>>();
      std::uint64_t n = 1;
      for (int d : shape) {
        if (d < 0) throw FormatError(path.string() + ": negative tensor dimension");
        n *= static_cast<std::uint64_t>(d);
      }
      expected_offset += n;
      entries.emplace_back(e.at("name").get<std::string>(), std::move(shape));
    }
    if (expected_offset != total) throw FormatError(path.string() + ": tensor table size mismatch");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }

  for (auto& [name, shape] : entries) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    Tensor<float> t{name, shape, std::vector<float>(n)};
    std::vector<unsigned char> raw(4 * n);
    if (n > 0 && !in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
      throw FormatError(path.string() + ": truncated tensor data for " + name);
    }
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) |
                              static_cast<std::uint32_t>(raw[4 * i + 1]) << 8 |
                              static_cast<std::uint32_t>(raw[4 * i + 2]) << 16 |
                              static_cast<std::uint32_t>(raw[4 * i + 3]) << 24;
      t.data[i] = std::bit_cast<float>(u);
    }
    ParameterSet<float>* dest = &ckpt.params;
    for (const Section& s : kSections) {
      const std::string prefix = s.prefix;
      if (!prefix.empty() && name.compare(0, prefix.size(), prefix) == 0) {
        dest = &(ckpt.*s.member);
        t.name = name.substr(prefix.size());
      }
    }
    dest->tensors.push_back(std::move(t));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw FormatError(path.string() + ": trailing bytes after tensor data");
  }

  // The tensor table must match the architecture the config describes.
  const ParameterSet<float> layout = Network<float>(ckpt.config).zero_parameters();
  auto same_layout = [&](const ParameterSet<float>& p) {
    if (p.tensors.size() != layout.tensors.size()) return false;
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
      if (p.tensors[i].name != layout.tensors[i].name || p.tensors[i].shape != layout.tensors[i].shape) {
        return false;
      }
    }
    return true;
  };
  if (!same_layout(ckpt.params)) throw FormatError(path.string() + ": tensors do not match the config");
  if (!ckpt.adam_m.tensors.empty() && !(same_layout(ckpt.adam_m) && same_layout(ckpt.adam_v))) {
    throw FormatError(path.string() + ": optimizer state does not match the config");
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.config == expected)) {
    throw ConfigError(path.string() + ": checkpoint was trained with a different model config");
  }
  return ckpt;
}

}  // namespace annulus
