// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <sstream>

#include "aligncruse/eval.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace acrs;
using namespace acrs::eval;

namespace {

dsp::AudioClip noise_clip(std::size_t n, std::uint64_t seed) {
  return dsp::AudioClip(data::speech_surrogate(n, seed, -20, 16000));
}

}  // namespace

TEST_CASE("ERLE of scaled and silent outputs") {
  const auto mic = noise_clip(8000, 1);
  CHECK(erle(mic, mic) == doctest::Approx(0.0).epsilon(1e-12));
  auto half = mic;
  for (auto& v : half.samples) v *= 0.5;
  CHECK(erle(mic, half) == doctest::Approx(10 * std::log10(4.0)).epsilon(1e-12));
  CHECK(erle(mic, dsp::AudioClip(std::vector<double>(8000, 0.0))) == kErleMax);
  auto loud = mic;
  for (auto& v : loud.samples) v *= 1000.0;
  CHECK(erle(mic, loud) == kErleMin);
  CHECK_THROWS_AS(erle(mic, dsp::AudioClip(std::vector<double>(10, 0.0))), Error);
}

TEST_CASE("aggregate uses the sample deviation for the 95% interval") {
  const auto a = aggregate({1.0, 2.0, 3.0, 4.0});
  CHECK(a.n == 4);
  CHECK(a.mean == doctest::Approx(2.5));
  CHECK(a.ci95 == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-12));
  CHECK(aggregate({}).n == 0);
  CHECK(aggregate({7.0}).ci95 == 0.0);
}

TEST_CASE("sample delays map to the nearest frame") {
  CHECK(delay_to_frames(0, 160) == 0);
  CHECK(delay_to_frames(79, 160) == 0);
  CHECK(delay_to_frames(80, 160) == 1);
  CHECK(delay_to_frames(4800, 160) == 30);
}

TEST_CASE("global aligner recovers every delay of a noiseless long-delay set") {
  data::ScenarioConfig cfg = data::ScenarioConfig::long_delay("H");
  cfg.clip_len_s = 2.5;
  cfg.snr_db = {data::kInf, data::kInf};
  std::vector<data::Scenario> set;
  for (int i = 0; i < 8; ++i) set.push_back(data::synth_scenario(cfg, static_cast<std::uint64_t>(i)));
  auto clips = clips_from_scenarios(set, "h");
  clips.push_back(clips.front());
  clips.back().delay_samples = -1;
  const auto r = delay_recovery_report(clips, Aligner::kGlobal, 16000);
  CHECK(r.delay_scored == 8);
  CHECK(r.skipped == 1);
  CHECK(r.delay_success == 1.0);
  for (int i = 0; i < 8; ++i) CHECK(*r.rows[static_cast<std::size_t>(i)].abs_err_frames == 0);
}

TEST_CASE("model reports carry per-clip rows and a summary") {
  auto cfg = ModelConfig::preset("tiny");
  const auto store = init_params(cfg, 3);
  std::vector<data::Scenario> set;
  auto scfg = data::ScenarioConfig::long_delay("M");
  scfg.clip_len_s = 1.0;
  for (int i = 0; i < 3; ++i) set.push_back(data::synth_scenario(scfg, static_cast<std::uint64_t>(i)));
  const auto clips = clips_from_scenarios(set, "m");
  ModelEvalOptions o;
  const auto r = evaluate_model(clips, cfg, store, o);
  REQUIRE(r.rows.size() == 3);
  CHECK(r.delay_scored == 3);
  for (const auto& row : r.rows) {
    CHECK(row.erle_db.has_value());
    CHECK(*row.est_delay_frames >= 0);
    CHECK(*row.est_delay_frames < cfg.d_max);
  }
  std::istringstream lines(r.to_jsonl());
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (n < 3) CHECK(j.contains("abs_delay_err_frames"));
    else CHECK(j.contains("erle_db_mean"));
    ++n;
  }
  CHECK(n == 4);
  CHECK(r.text_table().find("align_cruse") != std::string::npos);

  o.far = FarAlignment::kOracle;
  const auto ro = evaluate_model(clips, cfg, store, o);
  CHECK(ro.delay_scored == 0);
  cfg.variant = Variant::kCruse;
  const auto rc = evaluate_model(clips, cfg, init_params(cfg, 3), {"cruse", AlignMode::kUtterance, FarAlignment::kGlobal});
  CHECK(rc.delay_scored == 0);
  CHECK(rc.erle.n == 3);
}

TEST_CASE("far-end alignment options") {
  EvalClip c;
  c.mic = noise_clip(20000, 1);
  c.far = noise_clip(20000, 1);
  c.delay_samples = 100;
  const auto o = align_far(c, FarAlignment::kOracle, 1000);
  CHECK(o.samples[150] == c.far.samples[50]);
  CHECK(align_far(c, FarAlignment::kNone, 1000).samples == c.far.samples);
  c.delay_samples = -1;
  CHECK_THROWS_AS(align_far(c, FarAlignment::kOracle, 1000), Error);
  CHECK_THROWS_AS(parse_far_alignment("best"), Error);
}

TEST_CASE("runtime benchmark reports positive throughput") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto rt = benchmark_runtime(cfg, init_params(cfg, 1), 0.5);
  CHECK(rt.ms_per_frame > 0);
  CHECK(rt.real_time_factor > 0);
  CHECK(rt.real_time_factor < 1.0);
}
