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

#include <catch2/catch_amalgamated.hpp>

#include <bit>
#include <cstring>
#include <filesystem>

#include "avsync/config.hpp"
#include "avsync/io.hpp"
#include "support.hpp"

using Catch::Approx;
using namespace avsync;
namespace fs = std::filesystem;

namespace {

bool same_bits(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tensor files round-trip bit-exactly", "[io]") {
  Rng rng(1);
  std::uniform_int_distribution<int> rank(0, 4), dim(0, 5), kind(0, 9);
  for (int i = 0; i < 10000; ++i) {
    Shape s(static_cast<std::size_t>(rank(rng)));
    for (auto& d : s) d = static_cast<std::size_t>(dim(rng));
    Tensor t = random_normal(s, rng, 10.0);
    for (auto& x : t.values()) {
      const int k = kind(rng);
      if (k == 0) x = -0.0;
      if (k == 1) x = std::ldexp(x, 900);
      if (k == 2) x = std::numeric_limits<double>::denorm_min() * 3;
      if (k == 3) x = std::numeric_limits<double>::infinity();
    }
    const std::string bytes = io::encode_tensor(t);
    REQUIRE(bytes.substr(0, 4) == "SYFG");
    REQUIRE(same_bits(io::decode_tensor(bytes), t));
  }
}

TEST_CASE("tensor file layout", "[io]") {
  Tensor t({2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  const std::string b = io::encode_tensor(t);
  CHECK(b.size() == 4 + 2 + 1 + 1 + 2 * 8 + 6 * 8);
  CHECK(b[4] == 1);
  CHECK(b[5] == 0);
  CHECK(b[6] == 2);
  CHECK(b[7] == 2);
  CHECK(b[8] == 2);
  CHECK(b[16] == 3);
  double first;
  std::memcpy(&first, b.data() + 24, 8);
  CHECK(first == 1.0);

  SECTION("single precision") {
    const std::string f = io::encode_tensor(t, io::DType::kF32);
    CHECK(f.size() == 24 + 6 * 4);
    io::DType d{};
    const Tensor back = io::decode_tensor(f, &d);
    CHECK(d == io::DType::kF32);
    CHECK(back.values() == t.values());
  }
  SECTION("corrupted inputs") {
    CHECK_THROWS_AS(io::decode_tensor("XXXX" + b.substr(4)), IoError);
    CHECK_THROWS_AS(io::decode_tensor(b.substr(0, b.size() - 1)), IoError);
    CHECK_THROWS_AS(io::decode_tensor(b + "x"), IoError);
    CHECK_THROWS_AS(io::decode_tensor(b.substr(0, 3)), IoError);
    std::string v = b;
    v[4] = 9;
    CHECK_THROWS_AS(io::decode_tensor(v), IoError);
    std::string code = b;
    code[6] = 7;
    CHECK_THROWS_AS(io::decode_tensor(code), IoError);
  }
  SECTION("files") {
    testing::TempDir dir("tensor");
    io::save_tensor(dir / "t.syfg", t);
    CHECK(same_bits(io::load_tensor(dir / "t.syfg"), t));
    CHECK_THROWS_AS(io::load_tensor(dir / "missing.syfg"), IoError);
    CHECK_THROWS_AS(io::save_tensor(dir / "no" / "t.syfg", t), IoError);
  }
}

TEST_CASE("pcm decoding", "[io]") {
  std::string bytes;
  for (float f : {0.5f, -1.0f, 0.25f}) {
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
  }
  CHECK(io::decode_pcm_f32(bytes) == std::vector<double>{0.5, -1.0, 0.25});
  CHECK_THROWS_AS(io::decode_pcm_f32(bytes.substr(1)), IoError);
  CHECK(io::decode_pcm_f32("").empty());
}

TEST_CASE("checkpoints round-trip", "[io]") {
  synth::CorpusConfig cc;
  auto cfg = train::TrainConfig::desk(cc);
  cfg.seed = 4;
  auto m = train::SyncModel::init(cfg);
  m.tau = loss::Temperature::from_tau(0.037);
  m.visual.bn[0].running_mean[1] = 0.123;
  m.audio.bn.back().running_var[0] = 7.5;
  const std::string bytes = io::encode_checkpoint(m, cfg);
  const auto ck = io::decode_checkpoint(bytes);
  CHECK(ck.model.tau.log_inv_tau == m.tau.log_inv_tau);
  std::vector<const Tensor*> a, b;
  m.visual.params.for_each([&](const std::string&, nn::ParamKind, const Tensor& t) { a.push_back(&t); });
  ck.model.visual.params.for_each([&](const std::string&, nn::ParamKind, const Tensor& t) { b.push_back(&t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(same_bits(*a[i], *b[i]));
  CHECK(ck.model.visual.bn[0].running_mean == m.visual.bn[0].running_mean);
  CHECK(ck.model.audio.bn.back().running_var == m.audio.bn.back().running_var);
  CHECK(io::encode_checkpoint(ck.model, cfg) == bytes);

  CHECK_THROWS_AS(io::decode_checkpoint(bytes.substr(0, bytes.size() - 8)), IoError);
  CHECK_THROWS_AS(io::decode_checkpoint(bytes + "zz"), IoError);
  CHECK_THROWS_AS(io::decode_checkpoint(io::encode_tensor(Tensor({1}, 1.0))), IoError);
}

TEST_CASE("corpus directories", "[io]") {
  synth::CorpusConfig cc;
  cc.n_videos = 3;
  cc.length = 50;
  std::vector<synth::DefectPlan> plans(3);
  plans[1].audio_offset = -4;
  const auto c = synth::generate_corpus(cc, plans);
  testing::TempDir dir("corpus");
  io::save_corpus(dir.path(), c);
  const auto back = io::load_corpus(dir.path());
  REQUIRE(back.videos.size() == 3);
  CHECK(back.videos[1].audio_offset == -4);
  CHECK(same_bits(back.videos[2].audio_view, c.videos[2].audio_view));
  CHECK(same_bits(back.visual_map, c.visual_map));
  CHECK(config::to_json(back.config) == config::to_json(c.config));
  CHECK_THROWS_AS(io::save_corpus(dir / "absent", c), IoError);

  SECTION("missing video files are collected") {
    fs::remove(dir / "vid1.audio.syfg");
    CHECK_THROWS(io::load_corpus(dir.path()));
    std::vector<std::string> errors;
    const auto part = io::load_corpus(dir.path(), &errors);
    CHECK(part.videos.size() == 2);
    REQUIRE(errors.size() == 1);
    CHECK(errors[0].find("vid1") == 0);
  }
  SECTION("missing manifest") { CHECK_THROWS_AS(io::load_corpus(dir / "absent"), IoError); }
}

TEST_CASE("run configs", "[config]") {
  SECTION("presets") {
    CHECK(config::preset_names() == std::vector<std::string>{"desk", "full"});
    auto d = config::preset("desk");
    d.train.learning_rate = 1.0;
    CHECK(config::preset("desk").train.learning_rate == 5e-3);
    const auto p = config::preset("full");
    CHECK(p.train.batch.batch_size == 256);
    CHECK(p.train.learning_rate == 1e-4);
    CHECK(p.train.epochs_main + p.train.epochs_bn_tune == 650);
    CHECK(p.train.batch.w_easy == 0.1);
    CHECK_THROWS_AS(config::preset("huge"), InvalidConfig);
  }
  SECTION("json round trip") {
    for (const auto& name : config::preset_names()) {
      const auto rc = config::preset(name);
      const auto j = config::to_json(rc);
      CHECK(config::to_json(config::from_json(j)) == j);
    }
  }
  SECTION("overlay") {
    const auto rc = config::from_json(nlohmann::json::parse(
        R"({"corpus": {"n_videos": 5, "seed": 3}, "train": {"epochs_main": 2, "loss": "infonce"}})"));
    CHECK(rc.corpus.n_videos == 5);
    CHECK(rc.corpus.seed == 3);
    CHECK(rc.train.epochs_main == 2);
    CHECK(rc.train.loss == loss::LossKind::kInfoNce);
    CHECK(rc.train.learning_rate == 5e-3);
  }
  SECTION("unknown keys and bad values are rejected") {
    for (const char* doc : {R"({"colour": 1})", R"({"corpus": {"n_video": 5}})",
                            R"({"train": {"batch": {"size": 2}}})", R"({"audit": {"w": 15, "x": 0}})",
                            R"({"train": {"learning_rate": -1}})", R"({"corpus": {"length": 20}})",
                            R"({"train": {"loss": "hinge"}})", R"({"preset": "huge"})", R"([1, 2])",
                            R"({"corpus": {"n_videos": "many"}})"})
      CHECK_THROWS_AS(config::from_json(nlohmann::json::parse(doc)), InvalidConfig);
  }
  SECTION("derived encoders follow the corpus") {
    const auto rc = config::from_json(nlohmann::json::parse(R"({"corpus": {"audio_features": 12}})"));
    CHECK(rc.train.audio.input_shape == synth::audio_input_shape(rc.corpus));
  }
}

TEST_CASE("defect recipes", "[config]") {
  config::DefectRecipe d;
  d.fraction = 0.2;
  const auto plans = config::make_defects(d, 50, 7);
  std::size_t bad = 0, offscreen = 0;
  for (const auto& p : plans) {
    if (p.audio_offset != 0) {
      REQUIRE(std::abs(p.audio_offset) >= 3);
      REQUIRE(std::abs(p.audio_offset) <= 15);
    }
    if (p.offscreen_fraction > 0.0) {
      ++offscreen;
      REQUIRE(p.offscreen_begin + p.offscreen_fraction <= 1.0);
    }
    bad += p.audio_offset != 0 || p.offscreen_fraction > 0.0;
  }
  CHECK(bad == 10);
  CHECK(offscreen == 5);
  CHECK(config::make_defects(d, 50, 7).size() == 50);
  d.fraction = 1.5;
  CHECK_THROWS_AS(config::make_defects(d, 50, 7), InvalidConfig);
}
