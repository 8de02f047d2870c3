// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <random>

#include "aligncruse/alignment.hpp"
#include "aligncruse/data.hpp"
#include "doctest.h"

using namespace acrs;
using namespace acrs::align;

namespace {

dsp::AudioClip speech(std::size_t n, std::uint64_t seed) {
  return dsp::AudioClip(data::speech_surrogate(n, seed, -20.0, 16000));
}

dsp::AudioClip delayed(const dsp::AudioClip& x, int d, double gain = 0.5) {
  auto y = apply_delay(x, d);
  for (auto& v : y.samples) v *= gain;
  return y;
}

std::vector<double> direct_xcorr(const std::vector<double>& mic, const std::vector<double>& far, int max_delay) {
  std::vector<double> out;
  for (int d = 0; d <= max_delay; ++d) {
    double c = 0, em = 0, ef = 0;
    for (std::size_t n = static_cast<std::size_t>(d); n < mic.size() && n - d < far.size(); ++n) {
      c += mic[n] * far[n - d];
      em += mic[n] * mic[n];
      ef += far[n - d] * far[n - d];
    }
    out.push_back(em > 0 && ef > 0 ? std::clamp(c / std::sqrt(em * ef), -1.0, 1.0) : 0.0);
  }
  return out;
}

}  // namespace

TEST_CASE("FFT normalized cross-correlation matches the direct sum") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (auto [n_mic, n_far, max_d] : {std::tuple{500, 500, 120}, {700, 400, 300}, {256, 900, 255}}) {
    std::vector<double> mic(n_mic), far(n_far);
    for (auto& v : mic) v = g(rng);
    for (auto& v : far) v = g(rng);
    const auto fast = normalized_xcorr(mic, far, max_d);
    const auto slow = direct_xcorr(mic, far, max_d);
    REQUIRE(fast.size() == slow.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(std::abs(fast[i] - slow[i]) < 1e-9);
      CHECK(std::abs(fast[i]) <= 1.0);
    }
  }
}

TEST_CASE("global delay recovers pure shifts") {
  const auto far = speech(48000, 1);
  for (int d : {0, 1, 37, 4800, 12345, 16000}) {
    const auto est = global_delay(delayed(far, d), far, 16000);
    CHECK(est.delay == d);
    CHECK(est.confidence > 0.99);
  }
}

TEST_CASE("global delay rejects silent and short inputs") {
  const dsp::AudioClip silent(std::vector<double>(32000, 0.0));
  CHECK_THROWS_AS(global_delay(speech(32000, 2), silent, 1000), Error);
  try {
    global_delay(speech(32000, 2), silent, 1000);
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNoSignal);
  }
  CHECK_THROWS_AS(global_delay(speech(8000, 2), speech(8000, 3), 100), Error);
  CHECK_THROWS_AS(global_delay(speech(32000, 2), speech(32000, 3), 20000), Error);
}

TEST_CASE("online estimator warms up, then locks onto the delay") {
  const auto far = speech(5 * 16000, 4);
  const int d = 6000;
  const auto est = online_delay(delayed(far, d), far, 16000);
  REQUIRE(est.per_frame.size() == 500);
  const OnlineOptions opts;
  for (std::size_t k = 0; k < est.per_frame.size(); ++k) {
    const long seen = static_cast<long>(k + 1) * opts.hop;
    if (seen >= 3 * 16000) CHECK(est.per_frame[k] == d);
  }
}

TEST_CASE("online estimator follows a delay step within one window") {
  const auto far = speech(10 * 16000, 5);
  auto mic = delayed(far, 3000);
  const auto late = delayed(far, 9000);
  for (std::size_t i = 5 * 16000; i < mic.size(); ++i) mic.samples[i] = late.samples[i];
  const auto est = online_delay(mic, far, 16000);
  CHECK(est.per_frame[(4 * 16000) / 160] == 3000);
  CHECK(est.per_frame.back() == 9000);
}

TEST_CASE("online estimator holds its estimate while the far end is silent") {
  auto far = speech(8 * 16000, 6);
  for (std::size_t i = 4 * 16000; i < far.size(); ++i) far.samples[i] = 0.0;
  const auto mic = delayed(far, 2000);
  OnlineDelayEstimator est(4000);
  std::vector<DelayEstimate> track;
  for (std::size_t i = 0; i + 160 <= mic.size(); i += 160)
    track.push_back(est.push(std::span(mic.samples).subspan(i, 160), std::span(far.samples).subspan(i, 160)));
  const auto& before = track[(4 * 16000) / 160 - 1];
  CHECK(before.delay == 2000);
  // Far-end window goes silent once the trailing 2 s contain no signal.
  const auto& after = track.back();
  CHECK(after.delay == 2000);
  CHECK(after.confidence < before.confidence);
}

TEST_CASE("online alignment re-times the far end causally") {
  const auto far = speech(4 * 16000, 7);
  const auto mic = delayed(far, 800, 1.0);
  const auto aligned = online_align(mic, far, 2000);
  REQUIRE(aligned.size() == mic.size());
  for (std::size_t i = 3 * 16000; i < mic.size(); ++i) CHECK(aligned.samples[i] == doctest::Approx(mic.samples[i]));
}

TEST_CASE("apply_delay shifts and keeps the length") {
  const dsp::AudioClip x(std::vector<double>{1, 2, 3, 4});
  CHECK(apply_delay(x, 2).samples == std::vector<double>{0, 0, 1, 2});
  CHECK(apply_delay(x, 0).samples == x.samples);
  CHECK(apply_delay(x, 9).samples == std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(apply_delay(x, -1), Error);
}
