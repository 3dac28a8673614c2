/* Copyright 2026 The avsync Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Binary tensor files, model checkpoints and on-disk corpora.
//
// Tensor file:  "SYFG" u16 version, u8 dtype (1 = f32, 2 = f64), u8 rank,
//               rank x u64 dims, row-major little-endian payload.
// Checkpoint:   "SYFG" u16 version, u8 kind (0x43), u32 manifest length,
//               JSON manifest, then every listed tensor as f64 LE in order.

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "avsync/config.hpp"
#include "avsync/encoder.hpp"
#include "avsync/error.hpp"
#include "avsync/synth.hpp"
#include "avsync/tensor.hpp"
#include "avsync/trainer.hpp"

namespace avsync::io {

inline constexpr std::array<char, 4> kMagic{'S', 'Y', 'F', 'G'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint8_t kCheckpointKind = 0x43;

enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

inline std::size_t dtype_size(DType d) { return d == DType::kF32 ? 4 : 8; }

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw IoError("truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i)
    v |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return v;
}

inline void put_header(std::string& out, std::uint8_t kind) {
  out.append(kMagic.data(), kMagic.size());
  put_le<std::uint16_t>(out, kVersion);
  out.push_back(static_cast<char>(kind));
}

inline std::uint8_t get_header(const std::string& in, std::size_t& pos) {
  if (in.size() < 7 || std::memcmp(in.data(), kMagic.data(), 4) != 0) throw IoError("bad magic");
  pos = 4;
  const auto version = get_le<std::uint16_t>(in, pos);
  if (version != kVersion) throw IoError("unsupported version " + std::to_string(version));
  return static_cast<std::uint8_t>(in[pos++]);
}

inline void put_f64(std::string& out, std::span<const double> xs) {
  for (double x : xs) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(x));
}

inline void get_f64(const std::string& in, std::size_t& pos, std::span<double> out) {
  for (double& x : out) x = std::bit_cast<double>(get_le<std::uint64_t>(in, pos));
}

}  // namespace detail

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot open " + p.string());
  return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + p.string());
}

// --- tensor file ----------------------------------------------------------

inline std::string encode_tensor(const Tensor& t, DType dtype = DType::kF64) {
  if (t.rank() > 255) throw IoError("rank too large");
  std::string out;
  detail::put_header(out, static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<char>(t.rank()));
  for (std::size_t d : t.shape()) detail::put_le<std::uint64_t>(out, d);
  if (dtype == DType::kF64) {
    detail::put_f64(out, t.values());
  } else {
    for (double x : t.values()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(x)));
  }
  return out;
}

inline Tensor decode_tensor(const std::string& in, DType* dtype_out = nullptr) {
  std::size_t pos = 0;
  const std::uint8_t code = detail::get_header(in, pos);
  if (code != 1 && code != 2) throw IoError("not a tensor file (dtype code " + std::to_string(code) + ")");
  const auto dtype = static_cast<DType>(code);
  if (pos >= in.size()) throw IoError("truncated file");
  const std::size_t rank = static_cast<unsigned char>(in[pos++]);
  Shape shape(rank);
  for (auto& d : shape) d = detail::get_le<std::uint64_t>(in, pos);
  const std::size_t n = element_count(shape);
  if (in.size() - pos != n * dtype_size(dtype))
    throw IoError("payload length does not match shape " + shape_string(shape));
  Tensor t(shape);
  if (dtype == DType::kF64) {
    detail::get_f64(in, pos, t.span());
  } else {
    for (std::size_t i = 0; i < n; ++i) t[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(in, pos));
  }
  if (dtype_out) *dtype_out = dtype;
  return t;
}

inline void save_tensor(const std::filesystem::path& p, const Tensor& t, DType dtype = DType::kF64) {
  write_file(p, encode_tensor(t, dtype));
}
inline Tensor load_tensor(const std::filesystem::path& p) { return decode_tensor(read_file(p)); }

// Headerless mono PCM, 32-bit IEEE-754 little-endian.
inline std::vector<double> decode_pcm_f32(const std::string& bytes) {
  if (bytes.size() % 4 != 0) throw IoError("PCM length is not a multiple of 4 bytes");
  std::vector<double> out(bytes.size() / 4);
  std::size_t pos = 0;
  for (auto& x : out) x = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, pos));
  return out;
}

// --- checkpoint -----------------------------------------------------------

namespace detail {

inline std::vector<std::pair<std::string, Tensor>> encoder_tensors(const nn::ToyEncoder& e,
                                                                   const std::string& prefix) {
  std::vector<std::pair<std::string, Tensor>> out;
  e.params.for_each([&](const std::string& n, nn::ParamKind, const Tensor& t) { out.emplace_back(prefix + n, t); });
  for (std::size_t i = 0; i < e.bn.size(); ++i) {
    const auto& s = e.bn[i];
    out.emplace_back(prefix + "block" + std::to_string(i) + ".bn.running_mean",
                     Tensor({s.running_mean.size()}, s.running_mean));
    out.emplace_back(prefix + "block" + std::to_string(i) + ".bn.running_var",
                     Tensor({s.running_var.size()}, s.running_var));
  }
  return out;
}

}  // namespace detail

inline std::string encode_checkpoint(const train::SyncModel& m, const train::TrainConfig& cfg) {
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (auto& t : detail::encoder_tensors(m.visual, "visual.")) tensors.push_back(std::move(t));
  for (auto& t : detail::encoder_tensors(m.audio, "audio.")) tensors.push_back(std::move(t));
  tensors.emplace_back("log_inv_tau", Tensor({1}, m.tau.log_inv_tau));
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& [n, t] : tensors) layers.push_back({{"name", n}, {"shape", t.shape()}});
  const nlohmann::json manifest{{"format", "avsync-checkpoint"},
                                {"visual", config::to_json(m.visual.config)},
                                {"audio", config::to_json(m.audio.config)},
                                {"tau", m.tau.tau()},
                                {"train", config::to_json(cfg)},
                                {"tensors", layers}};
  const std::string text = manifest.dump();
  std::string out;
  detail::put_header(out, kCheckpointKind);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  for (const auto& [n, t] : tensors) detail::put_f64(out, t.values());
  return out;
}

struct Checkpoint {
  train::SyncModel model;
  nlohmann::json manifest;
};

inline Checkpoint decode_checkpoint(const std::string& in) {
  std::size_t pos = 0;
  if (detail::get_header(in, pos) != kCheckpointKind) throw IoError("not a checkpoint file");
  const auto len = detail::get_le<std::uint32_t>(in, pos);
  if (pos + len > in.size()) throw IoError("truncated manifest");
  Checkpoint ck;
  try {
    ck.manifest = nlohmann::json::parse(in.substr(pos, len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad checkpoint manifest: ") + e.what());
  }
  pos += len;
  nn::EncoderConfig vc, ac;
  config::read(ck.manifest.at("visual"), vc, "visual");
  config::read(ck.manifest.at("audio"), ac, "audio");
  Rng unused(0);
  auto& m = ck.model;
  m.visual = nn::ToyEncoder::init(vc, unused);
  m.audio = nn::ToyEncoder::init(ac, unused);

  std::vector<std::pair<std::string, Tensor*>> slots;
  auto collect = [&](nn::ToyEncoder& e, const std::string& prefix) {
    e.params.for_each([&](const std::string& n, nn::ParamKind, Tensor& t) { slots.emplace_back(prefix + n, &t); });
  };
  collect(m.visual, "visual.");
  collect(m.audio, "audio.");
  std::vector<std::pair<std::string, Shape>> order;
  for (const auto& l : ck.manifest.at("tensors")) order.emplace_back(l.at("name").get<std::string>(), l.at("shape").get<Shape>());

  std::map<std::string, Tensor> loaded;
  for (const auto& [name, shape] : order) {
    Tensor t(shape);
    if (pos + t.size() * 8 > in.size()) throw IoError("truncated payload at " + name);
    detail::get_f64(in, pos, t.span());
    loaded.emplace(name, std::move(t));
  }
  if (pos != in.size()) throw IoError("trailing bytes in checkpoint");
  auto take = [&](const std::string& name, const Shape& expect) -> Tensor& {
    auto it = loaded.find(name);
    if (it == loaded.end()) throw IoError("checkpoint lacks " + name);
    if (it->second.shape() != expect) throw IoError("shape mismatch for " + name);
    return it->second;
  };
  for (auto& [name, slot] : slots) *slot = take(name, slot->shape());
  for (auto* e : {&m.visual, &m.audio}) {
    const std::string prefix = e == &m.visual ? "visual." : "audio.";
    for (std::size_t i = 0; i < e->bn.size(); ++i) {
      auto& s = e->bn[i];
      const std::string b = prefix + "block" + std::to_string(i) + ".bn.";
      s.running_mean = take(b + "running_mean", {s.running_mean.size()}).values();
      s.running_var = take(b + "running_var", {s.running_var.size()}).values();
    }
  }
  m.tau.log_inv_tau = take("log_inv_tau", {1})[0];
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& p, const train::SyncModel& m,
                            const train::TrainConfig& cfg) {
  write_file(p, encode_checkpoint(m, cfg));
}
inline Checkpoint load_checkpoint(const std::filesystem::path& p) { return decode_checkpoint(read_file(p)); }

// --- corpus ---------------------------------------------------------------

// Directory layout: manifest.json, visual_map.syfg, audio_map.syfg and one
// <id>.visual.syfg / <id>.audio.syfg pair per video.
inline void save_corpus(const std::filesystem::path& dir, const synth::Corpus& c) {
  if (!std::filesystem::is_directory(dir)) throw IoError("output directory does not exist: " + dir.string());
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& v : c.videos) {
    videos.push_back({{"id", v.id},
                      {"length", v.length},
                      {"audio_offset", v.audio_offset},
                      {"silent_mask", v.silent_mask},
                      {"offscreen_mask", v.offscreen_mask}});
    save_tensor(dir / (v.id + ".visual.syfg"), v.visual_view);
    save_tensor(dir / (v.id + ".audio.syfg"), v.audio_view);
  }
  save_tensor(dir / "visual_map.syfg", c.visual_map);
  save_tensor(dir / "audio_map.syfg", c.audio_map);
  const nlohmann::json manifest{{"format", "avsync-corpus"},
                                {"config", config::to_json(c.config)},
                                {"videos", videos}};
  write_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

// Loads views and masks; latent tracks are not stored and stay empty. With
// `errors` set, videos that fail to load are reported there and skipped.
inline synth::Corpus load_corpus(const std::filesystem::path& dir, std::vector<std::string>* errors = nullptr) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad corpus manifest: ") + e.what());
  }
  synth::Corpus c;
  config::read(manifest.at("config"), c.config, "corpus");
  c.visual_map = load_tensor(dir / "visual_map.syfg");
  c.audio_map = load_tensor(dir / "audio_map.syfg");
  for (const auto& jv : manifest.at("videos")) {
    synth::LatentVideo v;
    try {
      v.id = jv.at("id").get<std::string>();
      v.length = jv.at("length").get<std::size_t>();
      v.audio_offset = jv.at("audio_offset").get<int>();
      v.silent_mask = jv.at("silent_mask").get<std::vector<std::uint8_t>>();
      v.offscreen_mask = jv.at("offscreen_mask").get<std::vector<std::uint8_t>>();
      v.visual_view = load_tensor(dir / (v.id + ".visual.syfg"));
      v.audio_view = load_tensor(dir / (v.id + ".audio.syfg"));
      if (v.visual_view.shape() != Shape{v.length, c.config.visual_obs_dim()} ||
          v.audio_view.shape() != Shape{c.config.audio_rows(), c.config.audio_features})
        throw IoError("view shapes of " + v.id + " disagree with the manifest");
    } catch (const std::exception& e) {
      if (!errors) throw;
      errors->push_back((v.id.empty() ? std::string("?") : v.id) + ": " + e.what());
      continue;
    }
    c.videos.push_back(std::move(v));
  }
  return c;
}

}  // namespace avsync::io
