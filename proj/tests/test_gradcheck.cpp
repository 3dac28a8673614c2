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

#include <chrono>

#include "avsync/gradcheck.hpp"

using Catch::Approx;
using namespace avsync;
using namespace avsync::gradcheck;

TEST_CASE("relative error and central differences", "[gradcheck]") {
  const std::vector<double> a{1.0, -2.0, 0.5}, n{1.0, -2.0, 0.5 + 1e-7};
  CHECK(relative_error(a, a) == 0.0);
  CHECK(relative_error(a, n) == Approx(1e-7 / 2.0));
  const std::vector<double> z{0.0, 0.0};
  CHECK(relative_error(z, std::vector<double>{1e-9, 0.0}) == Approx(1e-9 / 1e-8));
  const std::vector<double> neg{-1.0, 2.0, -0.5};
  CHECK(relative_error(a, neg) == Approx(2.0));

  // central differences are exact on quadratics up to rounding
  Objective f = [](const std::vector<double>& x) { return 3.0 * x[0] * x[0] - x[0] * x[1] + 0.5 * x[1]; };
  const auto g = numeric_gradient(f, {0.4, -1.5}, 1e-6);
  CHECK(g[0] == Approx(6.0 * 0.4 + 1.5).epsilon(1e-8));
  CHECK(g[1] == Approx(-0.4 + 0.5).epsilon(1e-8));
}

TEST_CASE("full suite passes quickly", "[gradcheck]") {
  const auto t0 = std::chrono::steady_clock::now();
  const Report rep = run_suite();
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(secs < 120.0);
  CHECK(rep.instances() >= 1000);
  CHECK(rep.epsilon == 1e-6);
  CHECK(rep.tolerance == 1e-5);
  for (const auto& c : rep.cases) {
    INFO(c.name << " " << c.max_rel_error);
    CHECK(c.passed);
    CHECK(c.max_rel_error < 1e-5);
    CHECK(c.instances > 0);
  }
  CHECK(rep.passed());
  CHECK(rep.offenders().empty());
  const auto names = case_names();
  for (const char* k : {"loss.bbce", "loss.infonce", "loss.bce", "loss.contrastive", "loss.pm", "nn.conv2d",
                        "nn.batchnorm_train", "nn.batchnorm_eval", "nn.prelu", "nn.blurpool", "nn.dropblock",
                        "nn.dense", "nn.l2_normalize", "nn.encoder"})
    CHECK(std::find(names.begin(), names.end(), k) != names.end());
  const auto j = to_json(rep);
  CHECK(j["cases"].size() == names.size());
}

TEST_CASE("other seeds pass too", "[gradcheck]") {
  for (std::uint64_t s : {2, 3, 4}) {
    Options o;
    o.seed = s;
    o.instances = 32;
    o.encoder_instances = 8;
    const Report rep = run_suite(o);
    for (const auto& c : rep.cases) {
      INFO("seed " << s << " " << c.name << " " << c.max_rel_error);
      CHECK(c.passed);
    }
  }
}

TEST_CASE("every injected sign flip is caught", "[gradcheck]") {
  for (const auto& name : case_names()) {
    Options o;
    o.instances = 4;
    o.encoder_instances = 2;
    o.sign_flip = {name};
    const Report rep = run_suite(o);
    INFO(name);
    CHECK_FALSE(rep.passed());
    CHECK(rep.offenders() == std::vector<std::string>{name});
  }
}
