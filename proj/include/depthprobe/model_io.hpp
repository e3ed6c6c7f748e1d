#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "depthprobe/model.hpp"

// .dpw weight container:
//   bytes 0-3   magic "DPW1"
//   bytes 4-7   little-endian u32 header length H
//   bytes 8..   UTF-8 JSON header: {"config": {...}, "tensors": [{name,
//               dtype:"f32", shape:[rows, cols], offset, length_bytes}, ...]}
//   payload     concatenated row-major little-endian f32 tensors; offsets
//               are relative to the first payload byte (8 + H).

namespace depthprobe {

inline constexpr char kDpwMagic[4] = {'D', 'P', 'W', '1'};

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
  return nlohmann::json{
      {"num_layers", cfg.num_layers},   {"d_model", cfg.d_model},
      {"num_heads", cfg.num_heads},     {"d_ff", cfg.d_ff},
      {"vocab_size", cfg.vocab_size},   {"max_seq_len", cfg.max_seq_len},
      {"objective", objective_name(cfg.objective)},
  };
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.num_layers = j.at("num_layers").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.num_heads = j.at("num_heads").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.objective = objective_from_name(j.at("objective").get<std::string>());
  cfg.validate();
  return cfg;
}

namespace detail {

inline void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32_le(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize_model(const Model& m) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for_each_tensor(m.params, [&](const std::string& name, const Mat<float>& t) {
    const std::uint64_t bytes = t.size() * 4;
    tensors.push_back({{"name", name},
                       {"dtype", "f32"},
                       {"shape", {t.rows(), t.cols()}},
                       {"offset", offset},
                       {"length_bytes", bytes}});
    offset += bytes;
  });
  const nlohmann::json header = {{"config", config_to_json(m.config)}, {"tensors", tensors}};
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(8 + header_text.size() + offset);
  out.insert(out.end(), kDpwMagic, kDpwMagic + 4);
  detail::put_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  for_each_tensor(m.params, [&](const std::string& name, const Mat<float>& t) {
    for (size_t i = 0; i < t.size(); ++i) {
      if (!std::isfinite(t.data()[i]))
        throw FormatError("save_model: non-finite weight in tensor " + name);
      detail::put_u32_le(out, std::bit_cast<std::uint32_t>(t.data()[i]));
    }
  });
  return out;
}

inline Model deserialize_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 8) throw FormatError("dpw: file too short for magic and header length");
  if (std::memcmp(bytes.data(), kDpwMagic, 4) != 0)
    throw FormatError("dpw: bad magic, not a DPW1 container");
  const std::uint32_t header_len = detail::get_u32_le(bytes.data() + 4);
  if (bytes.size() < 8ull + header_len) throw FormatError("dpw: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dpw: malformed JSON header: ") + e.what());
  }

  Model m;
  try {
    m.config = config_from_json(header.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dpw: bad config: ") + e.what());
  }
  m.params = ParamSet<float>::shaped(m.config);

  struct Entry {
    std::uint64_t offset = 0;
    std::uint64_t length = 0;
    int rows = 0;
    int cols = 0;
  };
  std::map<std::string, Entry> index;
  try {
    for (const auto& t : header.at("tensors")) {
      Entry e;
      e.offset = t.at("offset").get<std::uint64_t>();
      e.length = t.at("length_bytes").get<std::uint64_t>();
      e.rows = t.at("shape").at(0).get<int>();
      e.cols = t.at("shape").at(1).get<int>();
      if (t.at("dtype").get<std::string>() != "f32")
        throw FormatError("dpw: unsupported dtype for tensor " + t.at("name").get<std::string>());
      index[t.at("name").get<std::string>()] = e;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("dpw: bad tensor index: ") + e.what());
  }

  const std::uint8_t* payload = bytes.data() + 8 + header_len;
  const std::uint64_t payload_size = bytes.size() - 8 - header_len;
  for_each_tensor(m.params, [&](const std::string& name, Mat<float>& t) {
    const auto it = index.find(name);
    if (it == index.end()) throw FormatError("dpw: missing tensor " + name);
    const Entry& e = it->second;
    if (e.rows != t.rows() || e.cols != t.cols())
      throw FormatError("dpw: shape mismatch for tensor " + name + ": header says (" +
                        std::to_string(e.rows) + ", " + std::to_string(e.cols) +
                        "), config implies (" + std::to_string(t.rows()) + ", " +
                        std::to_string(t.cols()) + ")");
    if (e.length != t.size() * 4)
      throw FormatError("dpw: payload length mismatch for tensor " + name);
    if (e.offset + e.length > payload_size)
      throw FormatError("dpw: truncated payload for tensor " + name);
    const std::uint8_t* src = payload + e.offset;
    for (size_t i = 0; i < t.size(); ++i) {
      const float v = std::bit_cast<float>(detail::get_u32_le(src + 4 * i));
      if (!std::isfinite(v)) throw FormatError("dpw: non-finite weight in tensor " + name);
      t.data()[i] = v;
    }
  });
  return m;
}

inline void save_model(const Model& m, const std::string& path) {
  const auto bytes = serialize_model(m);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("save_model: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("save_model: write failed for " + path);
}

inline Model load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("load_model: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

// FNV-1a 64-bit content hash, used as the model fingerprint in manifests.
inline std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("fingerprint: cannot open " + path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[16384];
  while (in) {
    in.read(buf, sizeof(buf));
    const std::streamsize got = in.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<std::uint8_t>(buf[i]);
      h *= 0x100000001b3ull;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace depthprobe
