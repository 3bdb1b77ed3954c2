#include "rpmf/model_io.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>

#include "rpmf/errors.hpp"
#include "rpmf/json_convert.hpp"

namespace rpmf {

using nlohmann::json;

namespace {

constexpr char kB64Alphabet[] =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

int b64_value(char c) {
  if (c >= 'A' && c <= 'Z') return c - 'A';
  if (c >= 'a' && c <= 'z') return c - 'a' + 26;
  if (c >= '0' && c <= '9') return c - '0' + 52;
  if (c == '+') return 62;
  if (c == '/') return 63;
  return -1;
}

std::vector<uint8_t> tensor_bytes_le(const ad::Mat<float>& m) {
  std::vector<uint8_t> bytes;
  bytes.reserve(static_cast<size_t>(m.size()) * 4);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    auto u = std::bit_cast<uint32_t>(*(m.data() + i));
    bytes.push_back(static_cast<uint8_t>(u & 0xff));
    bytes.push_back(static_cast<uint8_t>((u >> 8) & 0xff));
    bytes.push_back(static_cast<uint8_t>((u >> 16) & 0xff));
    bytes.push_back(static_cast<uint8_t>((u >> 24) & 0xff));
  }
  return bytes;
}

void fill_tensor_le(ad::Mat<float>& m, std::span<const uint8_t> bytes,
                    const std::string& name) {
  if (bytes.size() != static_cast<size_t>(m.size()) * 4) {
    throw DataError("checkpoint tensor " + name + ": expected " +
                    std::to_string(m.size() * 4) + " bytes, got " +
                    std::to_string(bytes.size()));
  }
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    size_t o = static_cast<size_t>(i) * 4;
    uint32_t u = static_cast<uint32_t>(bytes[o]) | (static_cast<uint32_t>(bytes[o + 1]) << 8) |
                 (static_cast<uint32_t>(bytes[o + 2]) << 16) |
                 (static_cast<uint32_t>(bytes[o + 3]) << 24);
    *(m.data() + i) = std::bit_cast<float>(u);
  }
}

}  // namespace

std::string base64_encode(std::span<const uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    uint32_t v = (static_cast<uint32_t>(bytes[i]) << 16) |
                 (static_cast<uint32_t>(bytes[i + 1]) << 8) | bytes[i + 2];
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back(kB64Alphabet[v & 63]);
  }
  if (i + 1 == bytes.size()) {
    uint32_t v = static_cast<uint32_t>(bytes[i]) << 16;
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back('=');
    out.push_back('=');
  } else if (i + 2 == bytes.size()) {
    uint32_t v = (static_cast<uint32_t>(bytes[i]) << 16) |
                 (static_cast<uint32_t>(bytes[i + 1]) << 8);
    out.push_back(kB64Alphabet[(v >> 18) & 63]);
    out.push_back(kB64Alphabet[(v >> 12) & 63]);
    out.push_back(kB64Alphabet[(v >> 6) & 63]);
    out.push_back('=');
  }
  return out;
}

std::vector<uint8_t> base64_decode(std::string_view text) {
  std::vector<uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  uint32_t acc = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=' || c == '\n' || c == '\r') continue;
    int v = b64_value(c);
    if (v < 0) throw DataError("base64: invalid character");
    acc = (acc << 6) | static_cast<uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<uint8_t>((acc >> bits) & 0xff));
    }
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelParams& params) {
  json tensors = json::object();
  for (const auto& [name, mat] : params.named_tensors()) {
    tensors[name] = {{"shape", json::array({mat->rows(), mat->cols()})},
                     {"data", base64_encode(tensor_bytes_le(*mat))}};
  }
  json catalog = json::array();
  for (const auto& name : params.variable_names) catalog.push_back(name);
  json doc = {{"format_version", kCheckpointFormatVersion},
              {"config", to_json(params.config)},
              {"norm_stats", to_json(params.norm_stats)},
              {"catalog", std::move(catalog)},
              {"tensors", std::move(tensors)}};
  std::ofstream f(path);
  if (!f) throw DataError("cannot open for writing: " + path);
  f << doc.dump() << "\n";
  if (!f) throw DataError("write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open checkpoint: " + path);
  json doc;
  try {
    f >> doc;
  } catch (const json::exception& e) {
    throw DataError(path + ": malformed checkpoint JSON: " + e.what());
  }
  try {
    int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw DataError(path + ": unsupported checkpoint format_version " +
                      std::to_string(version));
    }
    ModelConfig cfg = model_config_from_json(doc.at("config"));
    NormStats stats = norm_stats_from_json(doc.at("norm_stats"));
    std::vector<std::string> names = doc.at("catalog").get<std::vector<std::string>>();
    ModelParams params = ModelParams::init(cfg, std::move(stats), std::move(names), 0);
    const auto& tensors = doc.at("tensors");
    for (auto& [name, mat] : params.named_tensors()) {
      if (!tensors.contains(name)) {
        throw DataError(path + ": checkpoint missing tensor '" + name + "'");
      }
      const auto& entry = tensors.at(name);
      const auto& shape = entry.at("shape");
      if (shape.at(0).get<Eigen::Index>() != mat->rows() ||
          shape.at(1).get<Eigen::Index>() != mat->cols()) {
        throw DataError(path + ": tensor '" + name + "' has shape [" +
                        std::to_string(shape.at(0).get<long>()) + "," +
                        std::to_string(shape.at(1).get<long>()) +
                        "], expected [" + std::to_string(mat->rows()) + "," +
                        std::to_string(mat->cols()) + "]");
      }
      fill_tensor_le(*mat, base64_decode(entry.at("data").get<std::string>()), name);
    }
    return params;
  } catch (const json::exception& e) {
    throw DataError(path + ": bad checkpoint: " + e.what());
  }
}

}  // namespace rpmf
