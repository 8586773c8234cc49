#pragma once

// The ASCDW1 tensor envelope:
//   "ASCDW1"                      6 magic bytes
//   uint32 little-endian          byte length N of the header
//   N bytes UTF-8 JSON            {"config": ..., "tensors": [{"name", "shape"}, ...], ...}
//   float32 little-endian         every tensor's payload, in manifest order
// Model weights and world feature tensors share this layout.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ascd/error.hpp"
#include "ascd/model.hpp"
#include "ascd/numerics.hpp"

namespace ascd {

inline constexpr char kEnvelopeMagic[] = "ASCDW1";

struct TensorEnvelope {
  nlohmann::json header = nlohmann::json::object();  // everything except "tensors"
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw IoError("envelope: no tensor named " + name);
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

}  // namespace detail

inline std::string encode_envelope(const nlohmann::json& header,
                                   const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  nlohmann::json full = header;
  full["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : tensors) {
    full["tensors"].push_back({{"name", name}, {"shape", t->shape}});
  }
  const std::string text = full.dump();
  std::string out(kEnvelopeMagic, 6);
  detail::put_u32(out, std::uint32_t(text.size()));
  out += text;
  for (const auto& [name, t] : tensors) {
    for (float v : t->data) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline TensorEnvelope decode_envelope(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 6, kEnvelopeMagic) != 0) {
    throw IoError("envelope: bad magic");
  }
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint32_t header_len = detail::get_u32(data + 6);
  if (bytes.size() < 10 + std::size_t(header_len)) throw IoError("envelope: truncated header");
  TensorEnvelope env;
  try {
    env.header = nlohmann::json::parse(bytes.substr(10, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("envelope: header is not JSON: ") + e.what());
  }
  std::size_t offset = 10 + header_len;
  for (const auto& entry : env.header.at("tensors")) {
    Tensor t(entry.at("shape").get<std::vector<std::size_t>>());
    if (offset + 4 * t.size() > bytes.size()) throw IoError("envelope: truncated payload");
    for (float& v : t.data) {
      v = std::bit_cast<float>(detail::get_u32(data + offset));
      offset += 4;
    }
    env.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  if (offset != bytes.size()) throw IoError("envelope: trailing bytes");
  env.header.erase("tensors");
  return env;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads},       {"d_model", c.d_model},
          {"d_head", c.d_head},     {"vocab_size", c.vocab_size}, {"n_visual", c.n_visual},
          {"max_seq", c.max_seq},   {"d_ff", c.d_ff}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_head = j.at("d_head").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.n_visual = j.at("n_visual").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.d_ff = j.value("d_ff", 4 * c.d_model);
  return c;
}

inline std::string encode_weights(const Weights& w) {
  return encode_envelope({{"format", "ascd-weights"}, {"config", config_to_json(w.config)}},
                         w.named_tensors());
}

inline Weights decode_weights(const std::string& bytes) {
  TensorEnvelope env = decode_envelope(bytes);
  Weights w;
  try {
    w = Weights::zeros(config_from_json(env.header.at("config")));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("weights: bad config header: ") + e.what());
  }
  auto slots = w.named_tensors();
  if (slots.size() != env.tensors.size()) throw IoError("weights: tensor count mismatch");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].first != env.tensors[i].first || slots[i].second->shape != env.tensors[i].second.shape) {
      throw IoError("weights: manifest mismatch at " + env.tensors[i].first);
    }
    *slots[i].second = std::move(env.tensors[i].second);
  }
  w.validate();
  return w;
}

inline void save_weights(const std::string& path, const Weights& w) {
  write_file(path, encode_weights(w));
}

inline Weights load_weights(const std::string& path) { return decode_weights(read_file(path)); }

}  // namespace ascd
