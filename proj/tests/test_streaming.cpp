// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <random>

#include "aligncruse/data.hpp"
#include "aligncruse/streaming.hpp"
#include "doctest.h"

using namespace acrs;

namespace {

template <typename Scalar>
std::vector<double> run_stream(const ModelConfig& cfg, const ParamStore& store, const dsp::AudioClip& mic,
                               const dsp::AudioClip& far, std::mt19937_64& rng, int max_chunk,
                               std::vector<int>* track = nullptr) {
  StreamingEnhancer<Scalar> s(cfg, store);
  std::vector<double> out;
  std::size_t pos = 0;
  std::uniform_int_distribution<int> chunk(1, max_chunk);
  while (pos < mic.size()) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(chunk(rng)), mic.size() - pos);
    const auto y = s.push(std::span(mic.samples).subspan(pos, n), std::span(far.samples).subspan(pos, n));
    out.insert(out.end(), y.begin(), y.end());
    pos += n;
  }
  const auto tail = s.flush();
  out.insert(out.end(), tail.begin(), tail.end());
  if (track) *track = s.delay_track();
  return out;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct Case {
  ModelConfig cfg;
  ParamStore store;
  dsp::AudioClip mic, far;
};

Case make_case(const std::string& preset, Variant v, std::size_t len, std::uint64_t seed) {
  auto cfg = ModelConfig::preset(preset);
  cfg.variant = v;
  auto store = init_params(cfg, seed);
  // Non-trivial running statistics exercise the folded batch norm.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 2.0), m(-0.5, 0.5);
  for (auto& [name, t] : store.buffers())
    for (auto& x : t.values()) x = name.find(".var") != std::string::npos ? u(rng) : m(rng);
  for (auto& [name, t] : store.params())
    if (name.find(".bn.") != std::string::npos)
      for (auto& x : t.values()) x += m(rng);
  dsp::AudioClip mic(data::speech_surrogate(len, seed + 1, -22, 16000));
  dsp::AudioClip far(data::speech_surrogate(len, seed + 2, -22, 16000));
  return {cfg, std::move(store), std::move(mic), std::move(far)};
}

}  // namespace

TEST_CASE("streaming matches one-shot enhancement for any chunking") {
  std::mt19937_64 rng(1);
  for (Variant v : {Variant::kAlignCruse, Variant::kCruse}) {
    auto c = make_case("tiny", v, 16000 + 77, 3);
    const auto ref = enhance(c.mic, c.far, c.store, c.cfg, {AlignMode::kCausal, false});
    for (int max_chunk : {1, 160, 500, 4000}) {
      std::vector<int> track;
      const auto out = run_stream<double>(c.cfg, c.store, c.mic, c.far, rng, max_chunk, &track);
      REQUIRE(out.size() == c.mic.size());
      INFO(to_string(v) << " chunk " << max_chunk);
      CHECK(max_abs_diff(out, ref.enhanced.samples) < 1e-6);
      if (v == Variant::kAlignCruse) {
        REQUIRE(static_cast<int>(track.size()) == ref.delay.rows());
        for (int t = 0; t < ref.delay.rows(); ++t) CHECK(track[static_cast<std::size_t>(t)] == ref.delay.argmax(t));
      }
    }
  }
}

TEST_CASE("streaming at the default configuration matches one-shot") {
  std::mt19937_64 rng(2);
  auto c = make_case("default", Variant::kAlignCruse, 8000, 5);
  const auto ref = enhance(c.mic, c.far, c.store, c.cfg);
  const auto out = run_stream<double>(c.cfg, c.store, c.mic, c.far, rng, 160);
  CHECK(max_abs_diff(out, ref.enhanced.samples) < 1e-6);
  const auto out_f = run_stream<float>(c.cfg, c.store, c.mic, c.far, rng, 160);
  CHECK(max_abs_diff(out_f, ref.enhanced.samples) < 1e-3);
}

TEST_CASE("streaming model frame masks match the batch mask") {
  auto c = make_case("tiny", Variant::kAlignCruse, 4800, 7);
  const auto ref = enhance(c.mic, c.far, c.store, c.cfg);
  const dsp::StftConfig stft_cfg;
  const auto mf = features(dsp::stft(c.mic, stft_cfg));
  const auto ff = features(dsp::stft(c.far, stft_cfg));
  StreamingModel<double> m(c.cfg, c.store);
  std::vector<double> mask(161);
  const int frames = mf.dim(2);
  for (int t = 0; t < frames; ++t) {
    m.step(std::span(mf.data() + t * 161, 161), std::span(ff.data() + t * 161, 161), mask);
    for (int k = 0; k < 161; ++k) REQUIRE(std::abs(mask[static_cast<std::size_t>(k)] - ref.mask[t * 161 + k]) < 1e-9);
  }
  CHECK(m.frames() == frames);
  m.reset();
  CHECK(m.frames() == 0);
}

TEST_CASE("reset restarts the stream from a clean state") {
  std::mt19937_64 rng(4);
  auto c = make_case("tiny", Variant::kAlignCruse, 3200, 9);
  StreamingEnhancer<double> s(c.cfg, c.store);
  auto first = s.push(c.mic.samples, c.far.samples);
  auto tail = s.flush();
  first.insert(first.end(), tail.begin(), tail.end());
  s.reset();
  auto second = s.push(c.mic.samples, c.far.samples);
  tail = s.flush();
  second.insert(second.end(), tail.begin(), tail.end());
  CHECK(first == second);
  CHECK(s.latency_samples() == 320);
}

TEST_CASE("identity mask streams the mic through") {
  auto c = make_case("tiny", Variant::kAlignCruse, 4000, 2);
  StreamingEnhancer<double> s(c.cfg, c.store, true);
  auto out = s.push(c.mic.samples, c.far.samples);
  const auto tail = s.flush();
  out.insert(out.end(), tail.begin(), tail.end());
  REQUIRE(out.size() == c.mic.size());
  for (std::size_t i = 320; i + 320 < out.size(); ++i) REQUIRE(std::abs(out[i] - c.mic.samples[i]) < 1e-9);
}
