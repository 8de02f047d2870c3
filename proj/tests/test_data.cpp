// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <filesystem>
#include <random>

#include "aligncruse/alignment.hpp"
#include "aligncruse/data.hpp"
#include "aligncruse/wav.hpp"
#include "doctest.h"

using namespace acrs;
using namespace acrs::data;

namespace {

ScenarioConfig short_config() {
  ScenarioConfig c;
  c.clip_len_s = 2.0;
  c.delay_s = {0.0, 0.3};
  c.rt60_s = {0.1, 0.3};
  return c;
}

double mean_energy(const std::vector<double>& h, std::size_t from, std::size_t to) {
  double e = 0;
  for (std::size_t i = from; i < to; ++i) e += h[i] * h[i];
  return e / static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("child seeds are distinct and deterministic") {
  CHECK(child_seed(7, 1) == child_seed(7, 1));
  CHECK(child_seed(7, 1) != child_seed(7, 2));
  CHECK(child_seed(7, 1) != child_seed(8, 1));
}

TEST_CASE("scenario synthesis is bit-exact for a seed") {
  const auto cfg = short_config();
  for (std::uint64_t seed : {1u, 2u, 99u}) {
    const auto a = synth_scenario(cfg, seed);
    const auto b = synth_scenario(cfg, seed);
    CHECK(a.mic.samples == b.mic.samples);
    CHECK(a.far.samples == b.far.samples);
    CHECK(a.target.samples == b.target.samples);
    CHECK(a.delay == b.delay);
  }
  CHECK(synth_scenario(cfg, 1).mic.samples != synth_scenario(cfg, 2).mic.samples);
}

TEST_CASE("mixing hits the drawn SER and SNR") {
  auto cfg = short_config();
  cfg.nonlinearities = {Nonlinearity::kNone, Nonlinearity::kHardClip, Nonlinearity::kTanh};
  for (std::uint64_t seed = 10; seed < 30; ++seed) {
    const auto s = synth_scenario(cfg, seed);
    INFO("seed " << seed);
    REQUIRE(s.draws.near_active);
    CHECK(std::abs(energy_ratio_db(s.near.samples, s.echo.samples) - s.draws.ser_db) < 0.1);
    std::vector<double> sig(s.mic.size());
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = s.near.samples[i] + s.echo.samples[i];
    CHECK(std::abs(energy_ratio_db(sig, s.noise.samples) - s.draws.snr_db) < 0.1);
    for (std::size_t i = 0; i < sig.size(); ++i) CHECK(s.mic.samples[i] == doctest::Approx(sig[i] + s.noise.samples[i]).epsilon(1e-12));
    CHECK(s.target.samples == s.near.samples);
    for (double v : s.mic.samples) REQUIRE(std::abs(v) <= 1.0);
  }
}

TEST_CASE("unit echo path with zero delay and no noise gives mic = near + far") {
  ScenarioConfig cfg = short_config();
  cfg.delay_s = {0, 0};
  cfg.rt60_s = {0, 0};
  cfg.ser_db = {kInf, kInf};
  cfg.snr_db = {kInf, kInf};
  cfg.level_db = {-30, -30};
  const auto s = synth_scenario(cfg, 5);
  REQUIRE(s.delay == 0);
  for (std::size_t i = 0; i < s.mic.size(); ++i) CHECK(s.mic.samples[i] == s.near.samples[i] + s.far.samples[i]);
}

TEST_CASE("far-end single talk leaves the mic as echo plus noise") {
  auto cfg = short_config();
  cfg.double_talk_prob = 0.0;
  const auto s = synth_scenario(cfg, 3);
  CHECK_FALSE(s.draws.near_active);
  CHECK(std::isinf(s.draws.ser_db));
  CHECK(energy(s.target.samples) == 0.0);
  for (std::size_t i = 0; i < s.mic.size(); ++i)
    CHECK(s.mic.samples[i] == doctest::Approx(s.echo.samples[i] + s.noise.samples[i]).epsilon(1e-12));
}

TEST_CASE("room impulse response has the RT60 length, unit energy and a 60 dB envelope") {
  for (double rt60 : {0.1, 0.3, 0.6}) {
    const auto h = make_rir(rt60, 42);
    INFO("rt60 " << rt60);
    CHECK(h.size() == static_cast<std::size_t>(std::ceil(rt60 * 16000)));
    CHECK(energy(h) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(h[0] > 0);
    for (std::size_t i = 1; i < h.size(); ++i) REQUIRE(std::abs(h[i]) < h[0]);
    // Least-squares slope of block log-energy over the tail, extrapolated to the RT60.
    const std::size_t block = 160;
    std::vector<double> xs, ys;
    for (std::size_t b = 1; (b + 1) * block <= h.size(); ++b) {
      xs.push_back((static_cast<double>(b) + 0.5) * block);
      ys.push_back(10 * std::log10(mean_energy(h, b * block, (b + 1) * block)));
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
    mx /= xs.size();
    my /= ys.size();
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) sxy += (xs[i] - mx) * (ys[i] - my), sxx += (xs[i] - mx) * (xs[i] - mx);
    const double decay_db = sxy / sxx * rt60 * 16000;
    CHECK(decay_db == doctest::Approx(-60.0).epsilon(0.05));
  }
  CHECK_THROWS_AS(make_rir(0.01, 1), Error);
  CHECK_THROWS_AS(make_rir(1.5, 1), Error);
}

TEST_CASE("FFT convolution matches the direct sum") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<double> x(3000), h(700);
  for (auto& v : x) v = g(rng);
  for (auto& v : h) v = g(rng);
  const auto y = convolve_truncated(x, h);
  REQUIRE(y.size() == x.size());
  for (std::size_t n = 0; n < x.size(); n += 37) {
    double acc = 0;
    for (std::size_t k = 0; k < h.size() && k <= n; ++k) acc += h[k] * x[n - k];
    CHECK(y[n] == doctest::Approx(acc).epsilon(1e-9));
  }
}

TEST_CASE("long-delay sets draw delays from their ranges") {
  for (const char* kind : {"M", "H"}) {
    const auto set = long_delay_set(kind, 6, 11, 1.5);
    const double lo = std::string(kind) == "M" ? 0.3 : 0.5, hi = std::string(kind) == "M" ? 0.5 : 1.0;
    for (const auto& s : set) {
      CHECK(s.delay >= static_cast<int>(lo * 16000));
      CHECK(s.delay <= static_cast<int>(hi * 16000));
      CHECK_FALSE(s.draws.near_active);
    }
  }
  CHECK_THROWS_AS(ScenarioConfig::long_delay("X"), Error);
}

TEST_CASE("cross-correlation recovers the delay of linear noiseless scenarios") {
  ScenarioConfig cfg = ScenarioConfig::long_delay("M");
  cfg.clip_len_s = 3.0;
  cfg.snr_db = {kInf, kInf};
  cfg.rt60_s = {0.1, 0.3};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = synth_scenario(cfg, seed);
    const auto est = align::global_delay(s.mic, s.far, 16000);
    CHECK(est.delay == s.delay);
  }
}

TEST_CASE("invalid scenario configurations are rejected") {
  ScenarioConfig c;
  c.delay_s = {0.5, 0.2};
  CHECK_THROWS_AS(c.validate(), Error);
  c = ScenarioConfig();
  c.rt60_s = {0.01, 0.2};
  CHECK_THROWS_AS(c.validate(), Error);
  c = ScenarioConfig();
  c.double_talk_prob = 1.5;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK_THROWS_AS(parse_nonlinearity("cubic"), Error);
}

TEST_CASE("written sets round-trip through the manifest") {
  const auto dir = std::filesystem::temp_directory_path() / "acrs_test_manifest";
  std::filesystem::remove_all(dir);
  const auto rows = make_ld_set("M", 2, 3, dir.string(), 1.0);
  const auto back = read_manifest((dir / "manifest.jsonl").string());
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(back[i].id == rows[i].id);
    CHECK(back[i].delay_samples == rows[i].delay_samples);
    CHECK_FALSE(back[i].ser_db.has_value());
    const auto mic = wav::read(back[i].mic_path);
    CHECK(mic.size() == 16000);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("a configured corpus directory feeds the sources") {
  const auto dir = std::filesystem::temp_directory_path() / "acrs_test_corpus";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  std::vector<double> tone(8000);
  for (std::size_t i = 0; i < tone.size(); ++i) tone[i] = 0.1 * std::sin(0.05 * static_cast<double>(i));
  wav::write((dir / "a.wav").string(), dsp::AudioClip(tone));
  ScenarioConfig cfg = short_config();
  cfg.corpus_dir = dir.string();
  const auto s = synth_scenario(cfg, 1);
  CHECK(s.draws.far_file == (dir / "a.wav").string());
  CHECK(s.far.size() == 32000);
  cfg.corpus_dir = (dir / "missing").string();
  cfg.allow_surrogate = false;
  CHECK_THROWS_AS(synth_scenario(cfg, 1), Error);
  std::filesystem::remove_all(dir);
}
