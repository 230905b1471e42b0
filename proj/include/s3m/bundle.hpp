#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3m/model.hpp"
#include "s3m/trace.hpp"

namespace s3m {

namespace detail {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320).
inline std::uint32_t crc32(const unsigned char* data, std::size_t len,
                           std::uint32_t crc = 0) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

inline void put_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline void put_f64_le(std::string& out, double d) {
  std::uint64_t bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= std::uint64_t(p[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace detail

// A trained model plus everything needed to apply it: the vocabulary it was
// trained with (carrying its trim level) and the sequence cap.
struct ModelBundle {
  S3MModel model;
  Vocabulary vocab;
  std::size_t max_len = 100;

  int trim_level() const { return vocab.trim_level; }
};

// Bundle file layout:
//   "S3M1" | u32 LE header length | header JSON (UTF-8)
//   | parameters as raw little-endian f64, in ParamStore registration order
//   | u32 LE CRC-32 over everything after the magic.
// The header lists the parameter names and shapes, so the float section is
// self-describing.
inline std::string serialize_bundle(const ModelBundle& b) {
  nlohmann::json header;
  header["format_version"] = 1;
  header["config"] = {{"embed_dim", b.model.config.embed_dim},
                      {"hidden_dim", b.model.config.hidden_dim},
                      {"classifier_hidden", b.model.config.classifier_hidden},
                      {"vocab_size", b.model.config.vocab_size},
                      {"seed", b.model.config.seed}};
  header["trim_level"] = b.vocab.trim_level;
  header["max_len"] = b.max_len;
  nlohmann::json params = nlohmann::json::array();
  for (const std::string& name : b.model.params.names()) {
    const Tensor& t = b.model.params.get(name);
    params.push_back({{"name", name}, {"shape", t.shape}});
  }
  header["params"] = params;
  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [token, id] : b.vocab.token_to_id) vocab[token] = id;
  header["vocab"] = vocab;  // nlohmann objects are key-sorted: deterministic dump

  std::string header_bytes = header.dump();
  std::string out = "S3M1";
  detail::put_u32_le(out, static_cast<std::uint32_t>(header_bytes.size()));
  out += header_bytes;
  for (const std::string& name : b.model.params.names())
    for (double v : b.model.params.get(name).values) detail::put_f64_le(out, v);

  std::uint32_t crc = detail::crc32(
      reinterpret_cast<const unsigned char*>(out.data()) + 4, out.size() - 4);
  detail::put_u32_le(out, crc);
  return out;
}

inline ModelBundle deserialize_bundle(const std::string& bytes,
                                      const std::string& origin = "<memory>") {
  auto fail = [&](const std::string& why) -> ModelBundle {
    throw std::runtime_error("model bundle '" + origin + "': " + why);
  };
  if (bytes.size() < 12 || bytes.compare(0, 4, "S3M1") != 0)
    fail("not an S3M1 bundle (bad magic)");
  const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());

  std::uint32_t stored_crc = detail::get_u32_le(p + bytes.size() - 4);
  std::uint32_t actual_crc = detail::crc32(p + 4, bytes.size() - 8);
  if (stored_crc != actual_crc)
    fail("checksum mismatch (file truncated or corrupted)");

  std::uint32_t header_len = detail::get_u32_le(p + 4);
  if (8 + std::size_t(header_len) + 4 > bytes.size()) fail("header length out of range");
  nlohmann::json header =
      nlohmann::json::parse(bytes.substr(8, header_len), nullptr, false);
  if (header.is_discarded()) fail("header is not valid JSON");
  if (!header.contains("format_version") || header["format_version"].get<int>() != 1)
    fail("unsupported format version");

  ModelBundle b;
  const auto& cfg = header.at("config");
  ModelConfig mc;
  mc.embed_dim = cfg.at("embed_dim").get<std::size_t>();
  mc.hidden_dim = cfg.at("hidden_dim").get<std::size_t>();
  mc.classifier_hidden = cfg.at("classifier_hidden").get<std::size_t>();
  mc.vocab_size = cfg.at("vocab_size").get<std::size_t>();
  mc.seed = cfg.at("seed").get<std::uint64_t>();
  mc.validate();
  b.model.config = mc;
  b.max_len = header.at("max_len").get<std::size_t>();
  b.vocab.trim_level = header.at("trim_level").get<int>();
  for (const auto& [token, id] : header.at("vocab").items())
    b.vocab.token_to_id[token] = id.get<std::int32_t>();
  if (b.vocab.size() != mc.vocab_size)
    fail("vocabulary has " + std::to_string(b.vocab.size()) +
         " ids but config says " + std::to_string(mc.vocab_size));

  auto layout = detail::param_layout(mc);
  const auto& plist = header.at("params");
  if (plist.size() != layout.size()) fail("unexpected parameter count");

  std::size_t off = 8 + header_len;
  std::size_t float_bytes = bytes.size() - off - 4;
  std::size_t expect = 0;
  for (auto& [name, shape] : layout) {
    std::size_t n = shape.size() == 2 ? shape[0] * shape[1] : shape[0];
    expect += n;
  }
  if (float_bytes != expect * 8)
    fail("parameter payload is " + std::to_string(float_bytes) + " bytes, expected " +
         std::to_string(expect * 8));

  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& [name, shape] = layout[i];
    if (plist[i].at("name").get<std::string>() != name)
      fail("parameter order mismatch at '" + name + "'");
    Tensor t = shape.size() == 2 ? Tensor::zeros(shape[0], shape[1])
                                 : Tensor::zeros(shape[0]);
    for (double& v : t.values) {
      v = detail::get_f64_le(p + off);
      off += 8;
    }
    b.model.params.add(name, std::move(t));
  }
  return b;
}

inline void save_bundle(const ModelBundle& b, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write model bundle: " + path);
  std::string bytes = serialize_bundle(b);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write on model bundle: " + path);
}

inline ModelBundle load_bundle(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model bundle: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return deserialize_bundle(bytes, path);
}

}  // namespace s3m
