// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "aligncruse/dsp.hpp"
#include "aligncruse/wav.hpp"
#include "doctest.h"

using namespace acrs;
using namespace acrs::dsp;

namespace {

std::vector<Complex> direct_dft(const std::vector<double>& x) {
  const auto n = x.size();
  std::vector<Complex> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    Complex acc = 0;
    for (std::size_t i = 0; i < n; ++i)
      acc += x[i] * std::polar(1.0, -2.0 * std::numbers::pi * double(k * i) / double(n));
    out[k] = acc;
  }
  return out;
}

std::vector<double> noise(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 0.3);
  std::vector<double> x(n);
  for (auto& v : x) v = dist(rng);
  return x;
}

}  // namespace

TEST_CASE("sqrt-hann window satisfies COLA at half overlap") {
  const auto w = make_sqrt_hann(320);
  REQUIRE(w.size() == 320);
  for (int i = 0; i < 160; ++i) CHECK(w[i] * w[i] + w[i + 160] * w[i + 160] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(w[0] == 0.0);
  CHECK_THROWS_AS(make_sqrt_hann(321), Error);
  CHECK_THROWS_AS(make_sqrt_hann(0), Error);
}

TEST_CASE("real FFT agrees with a direct DFT") {
  for (int n : {8, 320, 17 * 2}) {
    const auto x = noise(static_cast<std::size_t>(n), 7u + static_cast<unsigned>(n));
    const auto ref = direct_dft(x);
    RealFft fft(n);
    std::vector<Complex> half(static_cast<std::size_t>(n / 2 + 1));
    fft.forward(x, half);
    for (std::size_t k = 0; k < half.size(); ++k) CHECK(std::abs(half[k] - ref[k]) < 1e-10);
    std::vector<double> back(static_cast<std::size_t>(n));
    fft.inverse(half, back);
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-12));
  }
}

TEST_CASE("frame counting and shape") {
  StftConfig cfg;
  CHECK(cfg.num_bins() == 161);
  CHECK(cfg.num_frames(16000) == 99);
  CHECK(cfg.num_frames(319) == 0);
  CHECK(cfg.num_frames(320) == 1);
  const auto spec = stft(AudioClip(std::vector<double>(16000, 0.0)), cfg);
  CHECK(spec.frames() == 99);
  CHECK(spec.bins() == 161);
  CHECK_THROWS_AS(stft(AudioClip(std::vector<double>(100, 0.0)), cfg), Error);
}

TEST_CASE("stft of a pure tone peaks at its bin") {
  StftConfig cfg;
  std::vector<double> x(16000);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(2 * std::numbers::pi * 1000.0 * double(i) / 16000.0);
  const auto spec = stft(AudioClip(x), cfg);
  Eigen::Index arg = 0;
  spec.data.row(10).cwiseAbs().maxCoeff(&arg);
  CHECK(arg == 20);
}

TEST_CASE("stft/istft interior round trip") {
  StftConfig cfg;
  for (unsigned seed = 0; seed < 10; ++seed) {
    const auto x = noise(8000 + seed * 37, seed);
    const auto spec = stft(AudioClip(x), cfg);
    const auto y = istft(spec, cfg);
    REQUIRE(y.size() == cfg.synthesis_length(spec.frames()));
    for (std::size_t i = 320; i + 320 < y.size(); ++i) CHECK(std::abs(y.samples[i] - x[i]) < 1e-9);
  }
}

TEST_CASE("log power floor") {
  SpectralFrames f;
  f.data = ComplexMatrix::Zero(2, 3);
  f.data(1, 2) = Complex(3, 4);
  const Tensor lp = log_power(f);
  CHECK(lp.shape() == Shape{1, 2, 3});
  CHECK(lp[0] == doctest::Approx(std::log(1e-12)));
  CHECK(lp[5] == doctest::Approx(std::log(25.0 + 1e-12)));
}

TEST_CASE("streaming analysis and synthesis match batch processing") {
  StftConfig cfg;
  const auto x = noise(5000, 3);
  const auto spec = stft(AudioClip(x), cfg);
  const auto ref = istft(spec, cfg);
  StreamingAnalyzer ana(cfg);
  StreamingSynthesizer syn(cfg);
  std::vector<double> out;
  int frame = 0;
  std::size_t pos = 0;
  std::mt19937 rng(5);
  while (pos < x.size()) {
    const std::size_t len = std::min<std::size_t>(1 + rng() % 400, x.size() - pos);
    for (const auto& s : ana.push(std::span<const double>(x.data() + pos, len))) {
      for (int k = 0; k < cfg.num_bins(); ++k) CHECK(std::abs(s[k] - spec.data(frame, k)) < 1e-12);
      const auto y = syn.push(s);
      out.insert(out.end(), y.begin(), y.end());
      ++frame;
    }
    pos += len;
  }
  const auto tail = syn.flush();
  out.insert(out.end(), tail.begin(), tail.end());
  CHECK(frame == spec.frames());
  REQUIRE(out.size() == ref.size());
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(std::abs(out[i] - ref.samples[i]) < 1e-12);
}

TEST_CASE("wav round trip through 16-bit PCM") {
  const auto path = std::filesystem::temp_directory_path() / "acrs_test_roundtrip.wav";
  std::vector<double> x = {0.0, 0.5, -0.5, 0.999, -1.0, 1.5};
  wav::write(path.string(), AudioClip(x));
  const auto y = wav::read(path.string());
  REQUIRE(y.size() == x.size());
  CHECK(y.sample_rate == 16000);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y.samples[i] - std::clamp(x[i], -1.0, 32767.0 / 32768)) <= 1.0 / 32768);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(wav::read("/nonexistent/file.wav"), Error);
}
