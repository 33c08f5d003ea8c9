#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "spanedit/errors.hpp"
#include "spanedit/model.hpp"

// Binary checkpoint layout, all integers little-endian:
//   8 bytes  magic "SPANEDIT"
//   u32      format version
//   u32      bytes per value (8)
//   u64      metadata length, then that many bytes of UTF-8 JSON
//            {"model": ModelConfig, "vocab": [surfaces...], "extra": {...}}
//   u64      parameter count, then per parameter:
//            u64 name length, name bytes, u64 rank, rank x u64 dims,
//            product(dims) IEEE-754 doubles
namespace spanedit {

inline constexpr char kCheckpointMagic[8] = {'S', 'P', 'A', 'N', 'E', 'D', 'I', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<std::string> vocab;
  nlohmann::json extra = nlohmann::json::object();
};

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  T out;
  auto* src = reinterpret_cast<const unsigned char*>(&v);
  auto* dst = reinterpret_cast<unsigned char*>(&out);
  for (std::size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
  return out;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated checkpoint " + path.string());
  return to_little(v);
}

inline std::string get_bytes(std::istream& in, std::uint64_t n, const std::filesystem::path& path) {
  if (n > (1ULL << 32)) throw IoError("corrupt checkpoint " + path.string() + ": implausible length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw IoError("truncated checkpoint " + path.string());
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Model& model,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  nlohmann::ordered_json meta;
  meta["model"] = model.config().to_json();
  meta["vocab"] = model.vocab().surfaces();
  meta["extra"] = extra;
  const std::string text = meta.dump();
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, sizeof(double));
  detail::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  const Parameters& params = model.parameters();
  detail::put<std::uint64_t>(out, params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    const std::string& name = params.name(p);
    const NArray& v = params.value(p);
    detail::put<std::uint64_t>(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint64_t>(out, v.shape().rank());
    for (std::size_t d = 0; d < v.shape().rank(); ++d) detail::put<std::uint64_t>(out, v.shape()[d]);
    for (double x : v.values()) detail::put<double>(out, x);
  }
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

// Reads metadata and parameters; the model is rebuilt from the stored
// configuration and vocabulary, then every parameter is overwritten.
inline Model load_checkpoint(const std::filesystem::path& path, Checkpoint* info = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw IoError("not a checkpoint file: " + path.string());
  const auto version = detail::get<std::uint32_t>(in, path);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  const auto width = detail::get<std::uint32_t>(in, path);
  if (width != sizeof(double))
    throw IoError("unsupported value width " + std::to_string(width) + " in " + path.string());
  const std::string text = detail::get_bytes(in, detail::get<std::uint64_t>(in, path), path);
  Checkpoint ck;
  try {
    const nlohmann::json meta = nlohmann::json::parse(text);
    ck.config = ModelConfig::from_json(meta.at("model"));
    ck.vocab = meta.at("vocab").get<std::vector<std::string>>();
    if (meta.contains("extra")) ck.extra = meta.at("extra");
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
  }
  if (ck.vocab.size() < static_cast<std::size_t>(Vocab::kReserved))
    throw IoError("corrupt checkpoint vocabulary in " + path.string());
  Model model(ck.config, Vocab(std::vector<std::string>(ck.vocab.begin() + Vocab::kReserved, ck.vocab.end())));
  Parameters& params = model.parameters();
  const auto count = detail::get<std::uint64_t>(in, path);
  if (count != params.size())
    throw IoError("checkpoint " + path.string() + " holds " + std::to_string(count) + " parameters, model expects " +
                  std::to_string(params.size()));
  for (std::uint64_t p = 0; p < count; ++p) {
    const std::string name = detail::get_bytes(in, detail::get<std::uint64_t>(in, path), path);
    const auto id = params.find(name);
    if (!id) throw IoError("unknown parameter '" + name + "' in " + path.string());
    NArray& dst = params.value(*id);
    const auto rank = detail::get<std::uint64_t>(in, path);
    if (rank != dst.shape().rank()) throw IoError("rank mismatch for parameter '" + name + "'");
    for (std::size_t d = 0; d < rank; ++d)
      if (detail::get<std::uint64_t>(in, path) != dst.shape()[d])
        throw IoError("shape mismatch for parameter '" + name + "'");
    for (double& x : dst.values()) x = detail::get<double>(in, path);
  }
  if (info) *info = std::move(ck);
  return model;
}

}  // namespace spanedit
