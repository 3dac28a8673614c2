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

#include <malloc.h>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "avsync/commands.hpp"

namespace {

void add_common(CLI::App* app, avsync::cli::CommonOptions& o, std::optional<std::uint64_t>& seed,
                std::optional<std::string>& loss) {
  app->add_option("--config", o.config_path, "JSON run config");
  app->add_option("--seed", seed, "overrides corpus and training seeds");
  app->add_option("--out", o.out, "existing output directory");
  app->add_option("--preset", o.preset, "desk or full")->check(CLI::IsMember(avsync::config::preset_names()));
  app->add_option("--loss", loss, "bbce, infonce, bce, contrastive or pm");
  app->add_option("--threads", o.threads, "worker threads for per-video work")->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  // Large short-lived activations; keep them off mmap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  namespace cli = avsync::cli;
  CLI::App app{"avsync: audio-visual synchronisation toolkit"};
  app.require_subcommand(1);

  cli::CommonOptions o;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> loss;
  std::string checkpoint, data, input;
  bool oracle = false;
  std::optional<double> tau, tone;
  double seconds = 2.0;
  std::vector<std::string> faults;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  add_common(gen, o, seed, loss);

  auto* tr = app.add_subcommand("train", "train encoders on a corpus");
  add_common(tr, o, seed, loss);
  tr->add_option("--data", data, "corpus directory")->required();

  auto* ev = app.add_subcommand("eval", "offset accuracy by clip length");
  add_common(ev, o, seed, loss);
  ev->add_option("--data", data, "corpus directory")->required();
  ev->add_option("--checkpoint", checkpoint, "model file");
  ev->add_flag("--oracle", oracle, "use the generator's ground-truth embeddings");

  auto* au = app.add_subcommand("audit", "per-video sync reports and dataset summary");
  add_common(au, o, seed, loss);
  au->add_option("--data", data, "corpus directory")->required();
  au->add_option("--checkpoint", checkpoint, "model file");
  au->add_flag("--oracle", oracle, "use the generator's ground-truth embeddings");
  au->add_option("--tau", tau, "temperature override");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  add_common(gc, o, seed, loss);
  gc->add_option("--inject-fault", faults, "flip the analytic gradient sign of a case");

  auto* me = app.add_subcommand("mel", "log-mel spectrogram of a signal");
  add_common(me, o, seed, loss);
  me->add_option("--input", input, "rank-1 tensor file of samples");
  me->add_option("--tone", tone, "sine frequency in Hz");
  me->add_option("--seconds", seconds, "tone duration")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : cli::kInputError;
  }
  o.seed = seed;
  o.loss = loss;

  if (gen->parsed()) return cli::cmd_gen_data(o, std::cout, std::cerr);
  if (tr->parsed()) return cli::cmd_train(o, data, std::cout, std::cerr);
  if (ev->parsed()) return cli::cmd_eval(o, checkpoint, data, oracle, std::cout, std::cerr);
  if (au->parsed()) return cli::cmd_audit(o, checkpoint, data, oracle, tau, std::cout, std::cerr);
  if (gc->parsed()) return cli::cmd_gradcheck(o, faults, std::cout, std::cerr);
  return cli::cmd_mel(o, input, tone, seconds, std::cout, std::cerr);
}
