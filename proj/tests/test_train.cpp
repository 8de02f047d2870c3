// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "aligncruse/param_io.hpp"
#include "aligncruse/train.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace acrs;
using namespace acrs::train;

namespace {

ParamStore small_store(std::uint64_t seed) {
  ParamStore s;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  s.params()["a"] = Tensor({3, 2});
  s.params()["b"] = Tensor({4});
  for (auto& [name, t] : s.params())
    for (auto& v : t.values()) v = g(rng);
  return s;
}

TrainConfig micro_config() {
  TrainConfig c = TrainConfig::toy();
  c.train_data.clip_len_s = 0.6;
  c.train_data.delay_s = {0.0, 0.2};
  c.eval_data.clip_len_s = 0.6;
  c.eval_data.delay_s = {0.0, 0.2};
  c.train_clips = 5;
  c.val_clips = 2;
  c.eval_clips = 2;
  c.batch_size = 2;
  c.epochs = 2;
  c.seed = 17;
  return c;
}

void check_same_params(const ParamStore& a, const ParamStore& b, const std::string& what = "") {
  INFO(what);
  for (const auto& [name, t] : a.params()) {
    INFO(name);
    REQUIRE(b.param(name).storage() == t.storage());
  }
  for (const auto& [name, t] : a.buffers()) {
    INFO(name);
    REQUIRE(b.buffer(name).storage() == t.storage());
  }
}

}  // namespace

TEST_CASE("adam with zero gradient and no decay is the identity") {
  auto store = small_store(1);
  const auto before = store;
  Adam adam({1e-2, 0.9, 0.999, 1e-8, 0.0, 5.0});
  for (int i = 0; i < 3; ++i) REQUIRE(adam.step(store, store.zeros_like()));
  check_same_params(before, store);
}

TEST_CASE("first adam step moves each coordinate by about lr against its gradient") {
  auto store = small_store(2);
  const auto before = store;
  auto grads = store.zeros_like();
  grads["a"][0] = 0.3;
  grads["a"][1] = -2.0;
  grads["b"][3] = 1e-3;
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.clip_norm = 0.0;
  Adam adam(cfg);
  REQUIRE(adam.step(store, grads));
  auto expect = [&](const std::string& n, int i, double g) {
    const double step = g == 0 ? 0.0 : cfg.lr * g / (std::abs(g) + cfg.eps);
    CHECK(store.param(n)[i] == doctest::Approx(before.param(n)[i] - step).epsilon(1e-12));
  };
  expect("a", 0, 0.3);
  expect("a", 1, -2.0);
  expect("a", 2, 0.0);
  expect("b", 3, 1e-3);
  CHECK(adam.steps() == 1);
}

TEST_CASE("weight decay is decoupled from the gradient") {
  auto store = small_store(3);
  const auto before = store;
  AdamConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  Adam adam(cfg);
  REQUIRE(adam.step(store, store.zeros_like()));
  for (const auto& [name, t] : before.params())
    for (Index i = 0; i < t.size(); ++i) CHECK(store.param(name)[i] == doctest::Approx(t[i] * (1 - 0.05)).epsilon(1e-14));
}

TEST_CASE("gradients are clipped to the global norm") {
  auto store = small_store(4);
  auto grads = store.zeros_like();
  grads["a"][0] = 6.0;
  grads["b"][0] = 8.0;
  CHECK(grad_norm(grads) == doctest::Approx(10.0));
  Adam adam;
  REQUIRE(adam.step(store, grads));
  CHECK(adam.last_grad_norm() == doctest::Approx(10.0));
  const auto st = adam.export_state();
  CHECK(st.at("adam.m/a")[0] == doctest::Approx(0.1 * 3.0).epsilon(1e-14));
  CHECK(st.at("adam.m/b")[0] == doctest::Approx(0.1 * 4.0).epsilon(1e-14));
}

TEST_CASE("non-finite gradients skip the step") {
  auto store = small_store(5);
  const auto before = store;
  auto grads = store.zeros_like();
  grads["b"][1] = std::nan("");
  Adam adam;
  CHECK_FALSE(adam.step(store, grads));
  CHECK(adam.steps() == 0);
  check_same_params(before, store);
  grads["b"][1] = INFINITY;
  CHECK_FALSE(adam.step(store, grads));
}

TEST_CASE("optimizer state round-trips through export and import") {
  auto s1 = small_store(6), s2 = small_store(6);
  auto grads = s1.zeros_like();
  grads["a"][2] = 0.7;
  Adam a1;
  a1.step(s1, grads);
  Adam a2;
  a2.import_state(a1.export_state(), a1.steps());
  s2 = s1;
  a1.step(s1, grads);
  a2.step(s2, grads);
  check_same_params(s1, s2);
}

TEST_CASE("running statistics follow the momentum update") {
  auto store = init_params(ModelConfig::preset("tiny"), 1);
  std::map<std::string, ad::BatchStats> stats;
  stats["enc0"] = {{1, 2, 3, 4}, {2, 2, 2, 2}};
  update_running_stats(store, stats, 0.1);
  CHECK(store.buffer("enc0.bn.mean")[2] == doctest::Approx(0.3));
  CHECK(store.buffer("enc0.bn.var")[0] == doctest::Approx(0.9 + 0.2));
  CHECK(store.buffer("enc1.bn.mean")[0] == 0.0);
}

TEST_CASE("loss is zero for a perfect estimate, non-negative and cell-order invariant") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  Tensor s({1, 2, 6, 9}), e({1, 2, 6, 9});
  for (auto& v : s.values()) v = g(rng);
  for (auto& v : e.values()) v = g(rng);
  ad::Graph graph;
  CHECK(ad::compressed_mse(graph.constant(s), s, {}).value()[0] == 0.0);
  const double base = ad::compressed_mse(graph.constant(e), s, {}).value()[0];
  CHECK(base > 0.0);
  // Same permutation of (t, f) cells applied to both spectra.
  std::vector<int> perm(54);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Tensor sp(s.shape()), ep(e.shape());
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 54; ++i) {
      sp[c * 54 + i] = s[c * 54 + perm[static_cast<std::size_t>(i)]];
      ep[c * 54 + i] = e[c * 54 + perm[static_cast<std::size_t>(i)]];
    }
  CHECK(ad::compressed_mse(graph.constant(ep), sp, {}).value()[0] == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("enhancement loss of a unit mask on the target is zero") {
  const dsp::StftConfig stft_cfg;
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0, 0.1);
  std::vector<double> x(3200);
  for (auto& v : x) v = g(rng);
  const auto spec = ad::spectrum_tensor({dsp::stft(dsp::AudioClip(x), stft_cfg)});
  ad::Graph graph;
  const int frames = spec.dim(2);
  auto mask = graph.constant(Tensor({1, 1, frames, 161}, 1.0));
  const double l = enhancement_loss(mask, spec, spec, stft_cfg).value()[0];
  CHECK(l >= 0.0);
  CHECK(l == 0.0);
}

TEST_CASE("divergence monitor needs consecutive bad epochs") {
  DivergenceMonitor m{10.0, 3};
  CHECK_FALSE(m.update(1.0));
  CHECK_FALSE(m.update(11.0));
  CHECK_FALSE(m.update(12.0));
  CHECK_FALSE(m.update(5.0));
  CHECK(m.bad == 0);
  CHECK_FALSE(m.update(20.0));
  CHECK_FALSE(m.update(NAN));
  CHECK(m.update(30.0));
}

TEST_CASE("training configuration round-trips through JSON") {
  auto c = micro_config();
  c.adam.lr = 3.5e-4;
  c.model.variant = Variant::kCruse;
  c.eval_far = eval::FarAlignment::kGlobal;
  c.train_data.nonlinearities = {data::Nonlinearity::kTanh};
  const auto back = TrainConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.model == c.model);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"epoch": 3})"), Error);
  CHECK_THROWS_AS(TrainConfig::from_json(R"({"train_data": {"delay_s": [0.5]}})"), Error);
  CHECK_THROWS_AS(TrainConfig::from_json("{"), Error);
}

TEST_CASE("training is deterministic, resumable bit-exactly, and logs metrics") {
  const auto dir = std::filesystem::temp_directory_path() / "acrs_test_train";
  std::filesystem::remove_all(dir);
  auto cfg = micro_config();

  Trainer a(cfg);
  a.run();
  REQUIRE(a.history().size() == 2);
  CHECK(std::isfinite(a.history()[0].loss));

  Trainer b(cfg);
  b.run();
  check_same_params(a.params(), b.params(), "rerun");

  auto cfg_disk = cfg;
  cfg_disk.out_dir = dir.string();
  cfg_disk.epochs = 1;
  Trainer c(cfg_disk);
  c.run();
  const auto ckpt = (dir / "checkpoint_epoch001.acrs").string();
  REQUIRE(std::filesystem::exists(ckpt));
  REQUIRE(std::filesystem::exists(dir / "latest.acrs"));
  cfg_disk.epochs = 2;
  Trainer d = Trainer::resume(ckpt, cfg_disk);
  CHECK(d.epoch() == 1);
  d.run();
  check_same_params(a.params(), d.params(), "resume");
  CHECK(d.history().back().loss == a.history().back().loss);

  std::ifstream metrics(dir / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"epoch", "loss", "val_erle_db", "align_top1", "wall_s"}) CHECK(j.contains(key));
    ++lines;
  }
  CHECK(lines == 2);

  auto other = cfg_disk;
  other.adam.lr = 0.5;
  CHECK_THROWS_AS(Trainer::resume(ckpt, other), Error);
  auto other_model = cfg_disk;
  other_model.model.d_max = 32;
  CHECK_THROWS_AS(Trainer::resume(ckpt, other_model), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero learning rate freezes parameters and the loss") {
  auto cfg = micro_config();
  cfg.adam.lr = 0.0;
  cfg.epochs = 3;
  Trainer t(cfg);
  const ParamStore init = t.params();
  t.run();
  for (const auto& [name, p] : init.params()) REQUIRE(t.params().param(name).storage() == p.storage());
  CHECK(t.history()[1].loss == t.history()[0].loss);
  CHECK(t.history()[2].loss == t.history()[0].loss);
}

TEST_CASE("manifest-backed training reads clips from disk") {
  const auto dir = std::filesystem::temp_directory_path() / "acrs_test_train_data";
  std::filesystem::remove_all(dir);
  auto cfg = micro_config();
  std::vector<data::Scenario> set;
  for (int i = 0; i < 3; ++i) set.push_back(data::synth_scenario(cfg.train_data, static_cast<std::uint64_t>(i)));
  data::write_scenarios(set, dir.string(), "t");
  cfg.data_manifest = (dir / "manifest.jsonl").string();
  cfg.epochs = 1;
  Trainer t(cfg);
  CHECK(t.config().train_clips == 3);
  t.run();
  CHECK(std::isfinite(t.history()[0].loss));
  std::filesystem::remove_all(dir);
}
