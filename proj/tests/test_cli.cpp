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

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>

#include <json.hpp>

#include "avsync/io.hpp"
#include "support.hpp"

using namespace avsync;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string cli_path() {
  const char* p = std::getenv("AVSYNC_CLI");
  return p ? p : "avsync";
}

Run run(const std::string& args, const fs::path& scratch) {
  const fs::path o = scratch / "stdout.txt", e = scratch / "stderr.txt";
  const std::string cmd = cli_path() + " " + args + " > '" + o.string() + "' 2> '" + e.string() + "'";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = testing::slurp(o);
  r.err = testing::slurp(e);
  return r;
}

// Relative path -> contents, skipping the timestamped sidecar.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> m;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "run.log") continue;
    m[fs::relative(e.path(), root).string()] = testing::slurp(e.path());
  }
  return m;
}

const char* kSmallConfig = R"({
  "corpus": {"n_videos": 6, "length": 50},
  "held_out_videos": 4,
  "defects": {"fraction": 0.5},
  "train": {"epochs_main": 2, "epochs_bn_tune": 1, "steps_per_epoch": 2, "tau_warmup_epochs": 0}
})";

struct Workspace {
  testing::TempDir dir{"cli"};
  fs::path config = dir / "config.json";
  Workspace() {
    io::write_file(config, kSmallConfig);
  }
  fs::path make(const std::string& name) {
    fs::create_directories(dir / name);
    return dir / name;
  }
  std::string cfg() const { return "--config '" + config.string() + "'"; }
};

}  // namespace

TEST_CASE("argument and input errors", "[cli]") {
  Workspace w;
  CHECK(run("--help", w.dir.path()).code == 0);
  CHECK(run("", w.dir.path()).code == 2);
  CHECK(run("frobnicate", w.dir.path()).code == 2);
  CHECK(run("gen-data --out '" + (w.dir / "absent").string() + "'", w.dir.path()).code == 2);
  CHECK(run("gen-data", w.dir.path()).code == 2);
  CHECK(run("gen-data --preset huge --out '" + w.dir.path().string() + "'", w.dir.path()).code == 2);
  CHECK(run("gen-data --threads 0 --out '" + w.dir.path().string() + "'", w.dir.path()).code == 2);
  io::write_file(w.dir / "bad.json", R"({"corpus": {"n_vidoes": 3}})");
  const Run bad = run("gen-data --config '" + (w.dir / "bad.json").string() + "' --out '" + w.dir.path().string() + "'",
                      w.dir.path());
  CHECK(bad.code == 2);
  CHECK(bad.err.find("n_vidoes") != std::string::npos);
  io::write_file(w.dir / "broken.json", "{");
  CHECK(run("gen-data --config '" + (w.dir / "broken.json").string() + "' --out '" + w.dir.path().string() + "'",
            w.dir.path()).code == 2);
  const fs::path out = w.make("o");
  CHECK(run("train --data '" + (w.dir / "nodata").string() + "' --out '" + out.string() + "'", w.dir.path()).code == 2);
  CHECK(run("eval --oracle --checkpoint x --data d --out '" + out.string() + "'", w.dir.path()).code == 2);
  CHECK(run("mel --out '" + out.string() + "'", w.dir.path()).code == 2);
}

TEST_CASE("pipeline reruns are byte-identical", "[cli]") {
  Workspace w;
  const fs::path d1 = w.make("data1"), d2 = w.make("data2");
  REQUIRE(run("gen-data " + w.cfg() + " --out '" + d1.string() + "'", w.dir.path()).code == 0);
  REQUIRE(run("gen-data " + w.cfg() + " --out '" + d2.string() + "'", w.dir.path()).code == 0);
  CHECK(tree(d1) == tree(d2));
  CHECK(fs::exists(d1 / "run.log"));
  const auto manifest = nlohmann::json::parse(testing::slurp(d1 / "train" / "manifest.json"));
  CHECK(manifest["videos"].size() == 6);
  CHECK(nlohmann::json::parse(testing::slurp(d1 / "test" / "manifest.json"))["videos"].size() == 4);

  const fs::path d3 = w.make("data3");
  REQUIRE(run("gen-data " + w.cfg() + " --seed 99 --out '" + d3.string() + "'", w.dir.path()).code == 0);
  CHECK(tree(d1 / "train") != tree(d3 / "train"));

  const fs::path t1 = w.make("train1"), t2 = w.make("train2");
  const std::string data = " --data '" + (d1 / "train").string() + "'";
  const Run tr = run("train " + w.cfg() + data + " --out '" + t1.string() + "'", w.dir.path());
  REQUIRE(tr.code == 0);
  REQUIRE(run("train " + w.cfg() + data + " --out '" + t2.string() + "'", w.dir.path()).code == 0);
  CHECK(tree(t1) == tree(t2));
  const std::string diag = testing::slurp(t1 / "diagnostics.jsonl");
  std::size_t lines = 0;
  for (std::size_t p = 0; (p = diag.find('\n', p)) != std::string::npos; ++p) ++lines;
  CHECK(lines == 3);
  std::istringstream in(diag);
  for (std::string line; std::getline(in, line);) CHECK(nlohmann::json::parse(line).contains("loss"));

  const fs::path i1 = w.make("train_infonce");
  REQUIRE(run("train " + w.cfg() + data + " --loss infonce --out '" + i1.string() + "'", w.dir.path()).code == 0);
  CHECK(testing::slurp(i1 / "model.syfg") != testing::slurp(t1 / "model.syfg"));

  const std::string test_data = " --data '" + (d1 / "test").string() + "'";
  const std::string ck = " --checkpoint '" + (t1 / "model.syfg").string() + "'";
  const fs::path e1 = w.make("eval1"), e2 = w.make("eval2"), e3 = w.make("eval3");
  REQUIRE(run("eval" + ck + test_data + " --out '" + e1.string() + "'", w.dir.path()).code == 0);
  REQUIRE(run("eval" + ck + test_data + " --threads 3 --out '" + e2.string() + "'", w.dir.path()).code == 0);
  CHECK(tree(e1) == tree(e2));
  REQUIRE(run("eval --oracle" + data + " --out '" + e3.string() + "'", w.dir.path()).code == 0);
  const auto acc = nlohmann::json::parse(testing::slurp(e3 / "accuracy.json"));
  REQUIRE(acc["accuracy"].size() == 6);
  for (const auto& a : acc["accuracy"]) CHECK(a.get<double>() == 1.0);
  CHECK(testing::slurp(e3 / "accuracy.txt").find("Clip length") == 0);

  const fs::path a1 = w.make("audit1"), a2 = w.make("audit2"), a3 = w.make("audit3");
  REQUIRE(run("audit" + ck + test_data + " --out '" + a1.string() + "'", w.dir.path()).code == 0);
  REQUIRE(run("audit" + ck + test_data + " --threads 4 --out '" + a2.string() + "'", w.dir.path()).code == 0);
  CHECK(tree(a1) == tree(a2));
  REQUIRE(run("audit --oracle" + test_data + " --out '" + a3.string() + "'", w.dir.path()).code == 0);
  const auto sum = nlohmann::json::parse(testing::slurp(a3 / "summary.json"));
  CHECK(sum["reports"] == 4);
  CHECK(sum["thresholds"]["prob_at_offset"] == 0.9);
  CHECK(sum["thresholds"]["offscreen_ratio"] == 0.2);
  CHECK(sum["keep"].get<int>() + sum["drop"].get<int>() == 4);
  // planted offsets are recovered and kept; offscreen videos are dropped
  int offscreen = 0;
  const auto test_manifest = nlohmann::json::parse(testing::slurp(d1 / "test" / "manifest.json"));
  for (const auto& v : test_manifest["videos"]) {
    const auto mask = v["offscreen_mask"].get<std::vector<int>>();
    offscreen += std::count(mask.begin(), mask.end(), 1) > 0;
  }
  CHECK(offscreen == 1);
  CHECK(sum["drop"].get<int>() == offscreen);
  for (const auto& e : fs::directory_iterator(a3 / "reports")) {
    const auto r = nlohmann::json::parse(testing::slurp(e.path()));
    for (const char* k : {"video_id", "offset", "prob_at_offset", "offscreen_ratio", "segments", "tau", "verdict"})
      CHECK(r.contains(k));
  }

  SECTION("shape mismatch between checkpoint and corpus") {
    io::write_file(w.dir / "wide.json", R"({"corpus": {"n_videos": 2, "length": 50, "audio_features": 12}, "held_out_videos": 1})");
    const fs::path dw = w.make("wide");
    REQUIRE(run("gen-data --config '" + (w.dir / "wide.json").string() + "' --out '" + dw.string() + "'", w.dir.path()).code == 0);
    const fs::path ew = w.make("eval_wide");
    CHECK(run("eval" + ck + " --data '" + (dw / "test").string() + "' --out '" + ew.string() + "'", w.dir.path()).code == 2);
  }
  SECTION("missing videos are listed and the audit continues") {
    fs::remove(d1 / "test" / "vid7.visual.syfg");
    const fs::path a4 = w.make("audit4");
    const Run r = run("audit --oracle" + test_data + " --out '" + a4.string() + "'", w.dir.path());
    CHECK(r.code == 0);
    const auto s = nlohmann::json::parse(testing::slurp(a4 / "summary.json"));
    CHECK(s["reports"] == 3);
    REQUIRE(s["errors"].size() == 1);
    CHECK(s["errors"][0].get<std::string>().find("vid7") == 0);
  }
}

TEST_CASE("divergence exits with code 3 and keeps a partial checkpoint", "[cli]") {
  Workspace w;
  const fs::path d = w.make("data");
  REQUIRE(run("gen-data " + w.cfg() + " --out '" + d.string() + "'", w.dir.path()).code == 0);
  io::write_file(w.dir / "hot.json",
                 R"({"corpus": {"n_videos": 6, "length": 50}, "train": {"epochs_main": 2, "epochs_bn_tune": 0, "steps_per_epoch": 2, "learning_rate": 1e306}})");
  const fs::path t = w.make("train");
  const Run r = run("train --config '" + (w.dir / "hot.json").string() + "' --data '" + (d / "train").string() +
                        "' --out '" + t.string() + "'",
                    w.dir.path());
  CHECK(r.code == 3);
  CHECK(r.err.find("TrainingDiverged") != std::string::npos);
  CHECK(fs::exists(t / "model.partial.syfg"));
  CHECK_FALSE(fs::exists(t / "model.syfg"));
  CHECK_NOTHROW(io::load_checkpoint(t / "model.partial.syfg"));
}

TEST_CASE("gradcheck command", "[cli]") {
  Workspace w;
  const fs::path o = w.make("gc");
  const Run ok = run("gradcheck --out '" + o.string() + "'", w.dir.path());
  CHECK(ok.code == 0);
  for (const char* name : {"loss.bbce", "loss.infonce", "loss.bce", "loss.contrastive", "loss.pm"})
    CHECK(ok.out.find(name) != std::string::npos);
  const auto j = nlohmann::json::parse(testing::slurp(o / "gradcheck.json"));
  CHECK(j["passed"] == true);
  const Run bad = run("gradcheck --inject-fault loss.bbce", w.dir.path());
  CHECK(bad.code == 1);
  CHECK(bad.err.find("loss.bbce") != std::string::npos);
  CHECK(run("gradcheck --inject-fault loss.hinge", w.dir.path()).code == 2);
  const Run again = run("gradcheck", w.dir.path());
  CHECK(again.out == ok.out);
}

TEST_CASE("mel command", "[cli]") {
  Workspace w;
  const fs::path o = w.make("mel");
  const Run r = run("mel --tone 440 --seconds 0.4 --out '" + o.string() + "'", w.dir.path());
  REQUIRE(r.code == 0);
  CHECK(r.out.find("32x80") != std::string::npos);
  CHECK(io::load_tensor(o / "mel.syfg").shape() == Shape{32, 80});

  std::string pcm;
  for (int i = 0; i < 6400; ++i) {
    const float f = static_cast<float>(std::sin(0.1 * i));
    const auto u = std::bit_cast<std::uint32_t>(f);
    for (int k = 0; k < 4; ++k) pcm.push_back(static_cast<char>((u >> (8 * k)) & 0xff));
  }
  io::write_file(w.dir / "sig.pcm", pcm);
  const Run p = run("mel --input '" + (w.dir / "sig.pcm").string() + "' --out '" + o.string() + "'", w.dir.path());
  CHECK(p.code == 0);
  io::save_tensor(w.dir / "sig.syfg", Tensor({6400}, 0.25));
  CHECK(run("mel --input '" + (w.dir / "sig.syfg").string() + "' --out '" + o.string() + "'", w.dir.path()).code == 0);
  io::save_tensor(w.dir / "sq.syfg", Tensor({80, 80}, 0.25));
  CHECK(run("mel --input '" + (w.dir / "sq.syfg").string() + "' --out '" + o.string() + "'", w.dir.path()).code == 2);
}
