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

// Command implementations behind the avsync executable. Each returns an
// exit code: 0 ok, 1 check failure, 2 input/IO error, 3 numeric divergence.

#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "avsync/config.hpp"
#include "avsync/dsp.hpp"
#include "avsync/error.hpp"
#include "avsync/eval.hpp"
#include "avsync/gradcheck.hpp"
#include "avsync/io.hpp"
#include "avsync/sync_quality.hpp"
#include "avsync/synth.hpp"
#include "avsync/trainer.hpp"

namespace avsync::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kCheckFailed = 1, kInputError = 2, kDiverged = 3 };

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string preset = "desk";
  std::optional<std::string> loss;
  unsigned threads = 1;
};

// Preset, then config file, then flags.
inline config::RunConfig resolve_config(const CommonOptions& o) {
  config::RunConfig rc;
  if (!o.config_path.empty()) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(io::read_file(o.config_path));
    } catch (const nlohmann::json::exception& e) {
      throw InvalidConfig(std::string("cannot parse config: ") + e.what());
    }
    if (!j.contains("preset")) j["preset"] = o.preset;
    rc = config::from_json(j);
  } else {
    rc = config::preset(o.preset);
  }
  if (o.seed) {
    rc.corpus.seed = *o.seed;
    rc.train.seed = *o.seed;
  }
  if (o.loss) rc.train.loss = loss::loss_kind_from_string(*o.loss);
  rc.validate();
  return rc;
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { io::write_file(p, j.dump(2) + "\n"); }

inline fs::path require_dir(const std::string& out) {
  if (out.empty()) throw IoError("--out is required");
  const fs::path p(out);
  if (!fs::is_directory(p)) throw IoError("output directory does not exist: " + out);
  return p;
}

// Timestamps only ever go to this sidecar file.
inline void append_log(const fs::path& dir, const std::string& line) {
  std::ofstream f(dir / "run.log", std::ios::app);
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", std::gmtime(&now));
  f << buf << ' ' << line << '\n';
}

// Runs f(i) for i in [0, n) on up to `threads` workers; results are placed
// by index, so output never depends on scheduling.
template <class F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
  const unsigned t = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(n)));
  if (t <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(t);
  for (unsigned w = 0; w < t; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += t) f(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const train::TrainingDiverged& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return kInputError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
}

// --- gen-data -------------------------------------------------------------

// Writes <out>/train and <out>/test. Both splits share the observation maps;
// planted defects only touch the test split.
inline int cmd_gen_data(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const config::RunConfig rc = resolve_config(o);
    const fs::path dir = require_dir(o.out);
    synth::CorpusConfig cc = rc.corpus;
    const std::size_t n_train = cc.n_videos;
    cc.n_videos = n_train + rc.held_out_videos;
    std::vector<synth::DefectPlan> plans(cc.n_videos);
    const auto test_plans = config::make_defects(rc.defects, rc.held_out_videos, cc.seed);
    std::copy(test_plans.begin(), test_plans.end(), plans.begin() + static_cast<std::ptrdiff_t>(n_train));
    const synth::Corpus all = synth::generate_corpus(cc, plans);
    auto [tr, te] = synth::split_corpus(all, n_train);
    fs::create_directories(dir / "train");
    fs::create_directories(dir / "test");
    io::save_corpus(dir / "train", tr);
    io::save_corpus(dir / "test", te);
    write_json(dir / "config.json", config::to_json(rc));
    append_log(dir, "gen-data train=" + std::to_string(tr.videos.size()) + " test=" + std::to_string(te.videos.size()));
    out << "wrote " << tr.videos.size() << " train and " << te.videos.size() << " test videos to " << dir.string() << '\n';
    return kOk;
  });
}

// --- train ----------------------------------------------------------------

inline int cmd_train(const CommonOptions& o, const std::string& corpus_dir, std::ostream& out,
                     std::ostream& err) {
  return guarded(err, [&] {
    config::RunConfig rc = resolve_config(o);
    const fs::path dir = require_dir(o.out);
    const synth::Corpus corpus = io::load_corpus(corpus_dir);
    if (rc.preset == "desk" && o.config_path.empty()) {
      rc.train.visual = train::synthetic_visual_encoder(synth::visual_input_shape(corpus.config));
      rc.train.audio = train::synthetic_audio_encoder(synth::audio_input_shape(corpus.config));
    }
    write_json(dir / "train_config.json", config::to_json(rc.train));
    std::ofstream diag(dir / "diagnostics.jsonl", std::ios::trunc);
    if (!diag) throw IoError("cannot write diagnostics");
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const train::TrainResult res = train::train(corpus, rc.train, [&](const train::EpochRecord& r, const train::SyncModel&) {
        diag << train::to_json(r).dump() << '\n';
        diag.flush();
      });
      io::save_checkpoint(dir / "model.syfg", res.model, rc.train);
      const auto& last = res.diagnostics.back();
      out << "trained " << res.diagnostics.size() << " epochs, final loss " << last.loss << ", tau " << last.tau
          << '\n';
    } catch (const train::TrainingDiverged& e) {
      io::save_checkpoint(dir / "model.partial.syfg", e.last_good(), rc.train);
      append_log(dir, std::string("train diverged: ") + e.what());
      throw;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_log(dir, "train seconds=" + std::to_string(secs));
    return kOk;
  });
}

// --- eval -----------------------------------------------------------------

inline std::vector<eval::VideoEmbeddings> embed_corpus(const std::optional<train::SyncModel>& model,
                                                       const synth::Corpus& corpus, unsigned threads) {
  std::vector<eval::VideoEmbeddings> v(corpus.videos.size());
  if (model) {
    if (synth::visual_input_shape(corpus.config) != model->visual.config.input_shape ||
        synth::audio_input_shape(corpus.config) != model->audio.config.input_shape)
      throw ShapeError("checkpoint input shapes do not match the corpus");
  }
  parallel_for(v.size(), threads, [&](std::size_t i) {
    v[i] = model ? train::embed_video(*model, corpus, i) : train::oracle_video(corpus, i);
  });
  return v;
}

inline int cmd_eval(const CommonOptions& o, const std::string& checkpoint, const std::string& corpus_dir,
                    bool oracle, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const fs::path dir = require_dir(o.out);
    if (oracle == !checkpoint.empty()) throw InvalidInput("pass exactly one of --checkpoint or --oracle");
    const synth::Corpus corpus = io::load_corpus(corpus_dir);
    std::optional<train::SyncModel> model;
    if (!oracle) model = io::load_checkpoint(checkpoint).model;
    const auto videos = embed_corpus(model, corpus, o.threads);
    const eval::AccuracyTable t = eval::accuracy_table(videos);
    const std::string label = oracle ? "oracle" : "model";
    nlohmann::json j = eval::to_json(t);
    j["source"] = label;
    j["videos"] = videos.size();
    write_json(dir / "accuracy.json", j);
    io::write_file(dir / "accuracy.txt", eval::to_text(t, label));
    out << eval::to_text(t, label);
    return kOk;
  });
}

// --- audit ----------------------------------------------------------------

inline int cmd_audit(const CommonOptions& o, const std::string& checkpoint, const std::string& corpus_dir,
                     bool oracle, std::optional<double> tau_override, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const config::RunConfig rc = resolve_config(o);
    const fs::path dir = require_dir(o.out);
    if (oracle == !checkpoint.empty()) throw InvalidInput("pass exactly one of --checkpoint or --oracle");
    std::vector<std::string> errors;
    const synth::Corpus corpus = io::load_corpus(corpus_dir, &errors);
    std::optional<train::SyncModel> model;
    double tau = tau_override.value_or(synth::kOracleTau);
    if (!oracle) {
      model = io::load_checkpoint(checkpoint).model;
      if (!tau_override) tau = model->tau.tau();
    }
    const auto videos = embed_corpus(model, corpus, o.threads);
    std::vector<std::optional<quality::SyncReport>> reports(videos.size());
    std::vector<std::string> report_errors(videos.size());
    parallel_for(videos.size(), o.threads, [&](std::size_t i) {
      try {
        reports[i] = quality::sync_report(videos[i].audio, videos[i].visual, tau, rc.audit, videos[i].id);
      } catch (const Error& e) {
        report_errors[i] = videos[i].id + ": " + e.what();
      }
    });
    fs::create_directories(dir / "reports");
    std::vector<quality::SyncReport> ok;
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (!reports[i]) {
        errors.push_back(report_errors[i]);
        continue;
      }
      write_json(dir / "reports" / (reports[i]->video_id + ".json"), quality::to_json(*reports[i]));
      ok.push_back(*reports[i]);
    }
    nlohmann::json summary;
    if (ok.empty()) {
      summary = {{"reports", 0}, {"errors", errors}};
    } else {
      quality::AuditSummary s = quality::dataset_audit(ok, rc.audit.thresholds);
      s.errors = errors;
      summary = quality::to_json(s);
    }
    summary["tau"] = tau;
    write_json(dir / "summary.json", summary);
    out << "audited " << ok.size() << " videos";
    if (!ok.empty()) out << ": keep " << summary["keep"].get<std::uint64_t>() << ", drop " << summary["drop"].get<std::uint64_t>();
    out << ", " << errors.size() << " errors\n";
    return kOk;
  });
}

// --- gradcheck ------------------------------------------------------------

inline int cmd_gradcheck(const CommonOptions& o, const std::vector<std::string>& inject, std::ostream& out,
                         std::ostream& err) {
  return guarded(err, [&] {
    gradcheck::Options opt;
    if (o.seed) opt.seed = *o.seed;
    const auto names = gradcheck::case_names();
    for (const auto& f : inject) {
      if (std::find(names.begin(), names.end(), f) == names.end())
        throw InvalidInput("unknown gradcheck case '" + f + "'");
      opt.sign_flip.insert(f);
    }
    const gradcheck::Report rep = gradcheck::run_suite(opt);
    for (const auto& c : rep.cases)
      out << std::left << std::setw(24) << c.name << std::right << std::setw(6) << c.instances << "  max_rel_err "
          << std::scientific << std::setprecision(3) << c.max_rel_error << std::defaultfloat << "  "
          << (c.passed ? "ok" : "FAIL") << '\n';
    out << rep.instances() << " instances, tolerance " << rep.tolerance << '\n';
    if (!o.out.empty()) write_json(require_dir(o.out) / "gradcheck.json", gradcheck::to_json(rep));
    if (!rep.passed()) {
      err << "gradient check failed:";
      for (const auto& n : rep.offenders()) err << ' ' << n;
      err << '\n';
      return kCheckFailed;
    }
    return kOk;
  });
}

// --- mel ------------------------------------------------------------------

// Input is a rank-1 tensor file, raw little-endian f32 PCM, or a generated tone.
inline int cmd_mel(const CommonOptions& o, const std::string& input, std::optional<double> tone_hz,
                   double seconds, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const config::RunConfig rc = resolve_config(o);
    const fs::path dir = require_dir(o.out);
    const dsp::MelConfig& mc = rc.corpus.mel;
    std::vector<double> signal;
    if (!input.empty()) {
      const std::string bytes = io::read_file(input);
      if (bytes.compare(0, 4, std::string(io::kMagic.begin(), io::kMagic.end())) == 0) {
        const Tensor t = io::decode_tensor(bytes);
        if (t.rank() != 1) throw InvalidInput("signal file must hold a rank-1 tensor");
        signal = t.values();
      } else {
        signal = io::decode_pcm_f32(bytes);
      }
    } else if (tone_hz) {
      const auto n = static_cast<std::size_t>(std::llround(seconds * mc.sample_rate));
      const double w = 2.0 * std::acos(-1.0) * *tone_hz / mc.sample_rate;
      signal.resize(n);
      for (std::size_t i = 0; i < n; ++i) signal[i] = std::sin(w * static_cast<double>(i));
    } else {
      throw InvalidInput("pass --input or --tone");
    }
    const dsp::MelSpectrogram m = dsp::mel_spectrogram(signal, mc);
    io::save_tensor(dir / "mel.syfg", m.values);
    out << "mel grid " << m.values.dim(0) << "x" << m.values.dim(1) << '\n';
    return kOk;
  });
}

}  // namespace avsync::cli
