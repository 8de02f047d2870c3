// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <random>

#include "aligncruse/data.hpp"
#include "aligncruse/grad_check.hpp"
#include "aligncruse/model.hpp"
#include "doctest.h"

using namespace acrs;

namespace {

// White noise, so short clips are never silent.
std::vector<double> noise(std::size_t n, std::uint64_t seed, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double mean = 0.0, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(mean, scale);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Hand count: conv blocks carry weight, bias, gamma, beta.
Index hand_count(const ModelConfig& c) {
  const Index kt = c.conv_kt, kf = c.conv_kf;
  Index n = 0;
  Index in = 1;
  for (std::size_t i = 0; i < c.mic_channels.size(); ++i) {
    if (i == c.far_channels.size()) in += c.far_channels.back();
    n += in * c.mic_channels[i] * kt * kf + 3 * c.mic_channels[i];
    in = c.mic_channels[i];
  }
  in = 1;
  for (int co : c.far_channels) {
    n += in * co * kt * kf + 3 * co;
    in = co;
  }
  if (c.variant == Variant::kAlignCruse) {
    const Index pooled = c.enc_bins(static_cast<int>(c.far_channels.size()) - 1) / c.align_pool;
    n += (c.mic_channels[c.far_channels.size() - 1] * pooled + 1) * c.proj;
    n += (c.far_channels.back() * pooled + 1) * c.proj;
  }
  const Index h = static_cast<Index>(c.mic_channels.back()) * c.bottleneck_bins();
  n += 2 * 3 * h * h + 3 * h;
  Index dec_in = c.mic_channels.back();
  for (std::size_t k = 0; k < c.dec_channels.size(); ++k) {
    const Index enc_c = c.mic_channels[c.mic_channels.size() - 1 - k];
    n += enc_c * dec_in + dec_in;
    n += dec_in * c.dec_channels[k] * c.dec_kf + 3 * c.dec_channels[k];
    dec_in = c.dec_channels[k];
  }
  n += c.mic_channels[0] * dec_in + dec_in;
  n += dec_in * c.dec_kf + 1 + 1;
  return n;
}

ModelConfig cruse_of(ModelConfig c) {
  c.variant = Variant::kCruse;
  return c;
}

struct Run {
  Tensor mask;
  Tensor delay;
};

Run run_forward(const ModelConfig& cfg, const ParamStore& store, const Tensor& mic, const Tensor& far,
                AlignMode mode, bool train = false) {
  ad::Graph g;
  BoundParams p = bind(g, store, nullptr);
  auto r = forward(p, cfg, g.constant(mic), g.constant(far), {mode, train});
  return {r.mask.value(), r.delay.valid() ? r.delay.value() : Tensor()};
}

// Brute-force sum over delays of D[d] times the far map shifted by d frames.
Tensor brute_soft_shift(const Tensor& x, const Tensor& d, bool per_frame) {
  Tensor y(x.shape());
  const int d_max = d.dim(-1);
  for (int n = 0; n < x.dim(0); ++n)
    for (int c = 0; c < x.dim(1); ++c)
      for (int t = 0; t < x.dim(2); ++t)
        for (int f = 0; f < x.dim(3); ++f) {
          double acc = 0;
          for (int k = 0; k < d_max && k <= t; ++k) {
            const double w = per_frame ? d[(static_cast<Index>(n) * x.dim(2) + t) * d_max + k]
                                       : d[static_cast<Index>(n) * d_max + k];
            acc += w * x.at(n, c, t - k, f);
          }
          y.at(n, c, t, f) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("parameter counts match a hand count and the budget") {
  for (const char* preset : {"default", "tiny", "paper"}) {
    const auto cfg = ModelConfig::preset(preset);
    INFO(preset);
    CHECK(count_params(cfg) == hand_count(cfg));
    CHECK(count_params(cruse_of(cfg)) == hand_count(cruse_of(cfg)));
    CHECK(init_params(cfg, 1).num_params() == count_params(cfg));
  }
  const auto cfg = ModelConfig::preset("default");
  CHECK(count_params(cfg) >= 700000);
  CHECK(count_params(cfg) <= 800000);
  const Index delta = count_params(cfg) - count_params(cruse_of(cfg));
  CHECK(delta >= 5000);
  CHECK(delta <= 20000);
  CHECK(delta == (40 * 10 + 1) * 16 + (24 * 10 + 1) * 16);
}

TEST_CASE("frequency geometry of the default and tiny presets") {
  const auto cfg = ModelConfig::preset("default");
  CHECK(cfg.bins() == 161);
  CHECK(cfg.enc_bins(0) == 80);
  CHECK(cfg.enc_bins(1) == 40);
  CHECK(cfg.enc_bins(2) == 20);
  CHECK(cfg.bottleneck_bins() == 10);
  CHECK(cfg.gru_hidden() == 320);
  CHECK(cfg.align_bins() == 10);
  const auto paper = ModelConfig::preset("paper");
  CHECK(paper.enc_bins(0) == 81);
  CHECK(paper.bottleneck_bins() == 11);
  CHECK(paper.gru_hidden() == 352);
}

TEST_CASE("config maps round-trip and reject unknown keys") {
  auto cfg = ModelConfig::preset("tiny");
  cfg.align_decay = 0.987654321;
  CHECK(ModelConfig::from_map(cfg.to_map()) == cfg);
  CHECK_THROWS_AS(cfg.set("depth", "3"), Error);
  CHECK_THROWS_AS(cfg.set("d_max", "x"), Error);
  CHECK_THROWS_AS(ModelConfig::preset("huge"), Error);
  auto bad = cfg;
  bad.dec_channels = {8};
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = cfg;
  bad.align_decay = 0.0;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("validate_params catches layout mismatches") {
  const auto cfg = ModelConfig::preset("tiny");
  auto store = init_params(cfg, 3);
  CHECK_NOTHROW(validate_params(store, cfg));
  CHECK_THROWS_AS(validate_params(store, cruse_of(cfg)), Error);
  store.param("gru.b") = Tensor({3});
  CHECK_THROWS_AS(validate_params(store, cfg), Error);
}

TEST_CASE("zero mask logits give half the gain") {
  const auto cfg = ModelConfig::preset("tiny");
  auto store = init_params(cfg, 5);
  store.param("mask.w").fill(0.0);
  store.param("mask.b").fill(0.0);
  store.param("mask.gain")[0] = 1.7;
  std::mt19937_64 rng(1);
  const auto mic = random_tensor({1, 1, 12, 161}, rng, -8, 3);
  const auto far = random_tensor({1, 1, 12, 161}, rng, -8, 3);
  for (AlignMode mode : {AlignMode::kUtterance, AlignMode::kCausal}) {
    const auto r = run_forward(cfg, store, mic, far, mode);
    CHECK(r.mask.shape() == Shape{1, 1, 12, 161});
    for (double v : r.mask.values()) REQUIRE(v == doctest::Approx(0.85).epsilon(1e-15));
  }
}

TEST_CASE("mask stays in [0, g] and delay distributions sum to one") {
  std::mt19937_64 rng(2);
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto cfg = ModelConfig::preset("tiny");
    auto store = init_params(cfg, seed);
    store.param("mask.gain")[0] = 0.5 + static_cast<double>(seed);
    const int t = 5 + static_cast<int>(seed) * 3;
    const auto mic = random_tensor({2, 1, t, 161}, rng, -6, 4);
    const auto far = random_tensor({2, 1, t, 161}, rng, -6, 4);
    for (AlignMode mode : {AlignMode::kUtterance, AlignMode::kCausal}) {
      const auto r = run_forward(cfg, store, mic, far, mode, seed % 2 == 0);
      for (double v : r.mask.values()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= store.param("mask.gain")[0]);
      }
      const int rows = static_cast<int>(r.delay.size() / cfg.d_max);
      CHECK(rows == (mode == AlignMode::kUtterance ? 2 : 2 * t));
      for (int row = 0; row < rows; ++row) {
        double s = 0;
        for (int d = 0; d < cfg.d_max; ++d) s += r.delay[static_cast<Index>(row) * cfg.d_max + d];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("align block output equals the brute-force weighted shift") {
  const auto cfg = ModelConfig::preset("tiny");
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const auto store = init_params(cfg, static_cast<std::uint64_t>(trial));
    const int t = 4 + trial * 9;
    const auto xm = random_tensor({2, 10, t, 40}, rng);
    const auto xf = random_tensor({2, 6, t, 40}, rng);
    for (AlignMode mode : {AlignMode::kUtterance, AlignMode::kCausal}) {
      ad::Graph g;
      auto p = bind(g, store, nullptr);
      auto a = align_block(p, cfg, g.constant(xm), g.constant(xf), mode);
      const auto want = brute_soft_shift(xf, a.delay.value(), mode == AlignMode::kCausal);
      for (Index i = 0; i < want.size(); ++i) REQUIRE(std::abs(a.aligned.value()[i] - want[i]) < 1e-10);
    }
  }
}

TEST_CASE("one-hot delay weights shift by whole frames") {
  std::mt19937_64 rng(8);
  const auto x = random_tensor({1, 3, 20, 7}, rng);
  for (int d : {0, 1, 5, 19, 25}) {
    Tensor w({1, 30});
    w[d] = 1.0;
    ad::Graph g;
    const auto y = ad::soft_shift(g.constant(x), g.constant(w)).value();
    for (int c = 0; c < 3; ++c)
      for (int t = 0; t < 20; ++t)
        for (int f = 0; f < 7; ++f) REQUIRE(y.at(0, c, t, f) == (t >= d ? x.at(0, c, t - d, f) : 0.0));
  }
}

TEST_CASE("align argmax follows the relative shift of matched features") {
  auto cfg = ModelConfig::preset("tiny");
  auto store = init_params(cfg, 11);
  std::mt19937_64 rng(12);
  // The query sees the first six mic channels through the key weights.
  auto& qw = store.param("align.q.w");
  const auto& kw = store.param("align.k.w");
  qw.fill(0.0);
  const int pooled = cfg.align_bins();
  for (int r = 0; r < cfg.proj; ++r)
    for (int c = 0; c < 6; ++c)
      for (int f = 0; f < pooled; ++f) qw[(static_cast<Index>(r) * 10 + c) * pooled + f] = 3.0 * kw[(static_cast<Index>(r) * 6 + c) * pooled + f];
  store.param("align.q.b").fill(0.0);
  store.param("align.k.b").fill(0.0);
  const int t = 60;
  for (int d : {3, 17, 40}) {
    const auto far = random_tensor({1, 6, t + 1, 40}, rng);
    auto make_mic = [&](int shift, int frames) {
      Tensor m({1, 10, frames, 40});
      for (int c = 0; c < 6; ++c)
        for (int i = shift; i < frames; ++i)
          for (int f = 0; f < 40; ++f) m.at(0, c, i, f) = far.at(0, c, i - shift, f);
      return m;
    };
    Tensor far_t({1, 6, t, 40});
    std::copy_n(far.data(), 0, far_t.data());
    for (int c = 0; c < 6; ++c)
      for (int i = 0; i < t; ++i)
        for (int f = 0; f < 40; ++f) far_t.at(0, c, i, f) = far.at(0, c, i, f);
    ad::Graph g;
    auto p = bind(g, store, nullptr);
    auto a = align_block(p, cfg, g.constant(make_mic(d, t)), g.constant(far_t), AlignMode::kUtterance);
    auto b = align_block(p, cfg, g.constant(make_mic(d + 1, t + 1)), g.constant(far), AlignMode::kUtterance);
    DelayDistribution da{a.delay.value(), AlignMode::kUtterance};
    DelayDistribution db{b.delay.value(), AlignMode::kUtterance};
    CHECK(da.argmax() == d);
    CHECK(db.argmax() == d + 1);
  }
}

TEST_CASE("skip block is a 1x1 convolution added to the decoder path") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto store = init_params(cfg, 4);
  std::mt19937_64 rng(5);
  const auto enc = random_tensor({1, 8, 3, 11}, rng);
  const auto dec = random_tensor({1, 8, 3, 11}, rng);
  ad::Graph g;
  auto p = bind(g, store, nullptr);
  const auto y = skip_block(p, "skip0", g.constant(enc), g.constant(dec)).value();
  const auto& w = store.param("skip0.w");
  const auto& b = store.param("skip0.b");
  for (int o = 0; o < 8; ++o)
    for (int t = 0; t < 3; ++t)
      for (int f = 0; f < 11; ++f) {
        double acc = b[o] + dec.at(0, o, t, f);
        for (int c = 0; c < 8; ++c) acc += w[o * 8 + c] * enc.at(0, c, t, f);
        CHECK(y.at(0, o, t, f) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("apply_mask rejects negative and misshaped masks") {
  dsp::SpectralFrames spec;
  spec.data = dsp::ComplexMatrix::Constant(2, 3, dsp::Complex(1.0, -2.0));
  Tensor m({2, 3}, 0.5);
  const auto out = apply_mask(m, spec);
  CHECK(out.data(1, 2) == dsp::Complex(0.5, -1.0));
  m[4] = -1e-9;
  CHECK_THROWS_AS(apply_mask(m, spec), Error);
  CHECK_THROWS_AS(apply_mask(Tensor({3, 3}, 1.0), spec), Error);
}

TEST_CASE("identity mask reconstructs the interior of the mic signal") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto store = init_params(cfg, 1);
  const dsp::AudioClip mic(data::speech_surrogate(8000, 1, -20, 16000));
  const dsp::AudioClip far(data::speech_surrogate(8000, 2, -20, 16000));
  const auto r = enhance(mic, far, store, cfg, {AlignMode::kCausal, true});
  REQUIRE(r.enhanced.size() == mic.size());
  for (std::size_t i = 320; i + 320 < mic.size(); ++i) REQUIRE(std::abs(r.enhanced.samples[i] - mic.samples[i]) < 1e-9);
}

TEST_CASE("enhance is causal end to end") {
  const auto cfg = ModelConfig::preset("tiny");
  const auto store = init_params(cfg, 9);
  const dsp::AudioClip mic(data::speech_surrogate(6400, 3, -20, 16000));
  const dsp::AudioClip far(data::speech_surrogate(6400, 4, -20, 16000));
  const auto base = enhance(mic, far, store, cfg);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> g(0.0, 0.1);
  for (int k : {0, 3, 17, 30}) {
    const std::size_t cut = static_cast<std::size_t>(k) * 160 + 320;
    auto mic2 = mic, far2 = far;
    for (std::size_t i = cut; i < mic.size(); ++i) mic2.samples[i] += g(rng), far2.samples[i] += g(rng);
    const auto pert = enhance(mic2, far2, store, cfg);
    for (std::size_t i = 0; i <= static_cast<std::size_t>(k) * 160; ++i)
      REQUIRE(pert.enhanced.samples[i] == base.enhanced.samples[i]);
  }
}

TEST_CASE("cruse_forward takes stacked mic and aligned far features") {
  const auto cfg = cruse_of(ModelConfig::preset("tiny"));
  const auto store = init_params(cfg, 2);
  std::mt19937_64 rng(3);
  const auto stacked = random_tensor({1, 2, 9, 161}, rng, -5, 2);
  ad::Graph g;
  auto p = bind(g, store, nullptr);
  auto r = cruse_forward(p, cfg, stacked, {});
  CHECK(r.mask.shape() == Shape{1, 1, 9, 161});
  CHECK_FALSE(r.delay.valid());
  CHECK_THROWS_AS(cruse_forward(p, cfg, Tensor({1, 3, 9, 161}), {}), Error);
  CHECK_THROWS_AS(cruse_forward(p, ModelConfig::preset("tiny"), stacked, {}), Error);
}

TEST_CASE("forward rejects bad shapes and gains") {
  const auto cfg = ModelConfig::preset("tiny");
  auto store = init_params(cfg, 2);
  CHECK_THROWS_AS(run_forward(cfg, store, Tensor({1, 1, 4, 160}), Tensor({1, 1, 4, 160}), AlignMode::kCausal), Error);
  CHECK_THROWS_AS(run_forward(cfg, store, Tensor({1, 1, 4, 161}), Tensor({1, 1, 5, 161}), AlignMode::kCausal), Error);
  store.param("mask.gain")[0] = 0.0;
  CHECK_THROWS_AS(run_forward(cfg, store, Tensor({1, 1, 4, 161}), Tensor({1, 1, 4, 161}), AlignMode::kCausal), Error);
}

TEST_CASE("end-to-end gradients of the tiny model match finite differences") {
  for (Variant variant : {Variant::kAlignCruse, Variant::kCruse}) {
    for (AlignMode mode : {AlignMode::kUtterance, AlignMode::kCausal}) {
      if (variant == Variant::kCruse && mode == AlignMode::kCausal) continue;
      auto cfg = ModelConfig::preset("tiny");
      cfg.variant = variant;
      cfg.d_max = 6;
      const auto store = init_params(cfg, 21);
      const dsp::StftConfig stft_cfg;
      const dsp::AudioClip mic(noise(1600, 5, 0.05)), far(noise(1600, 6, 0.05)), near(noise(1600, 7, 0.02));
      const auto ms = dsp::stft(mic, stft_cfg);
      const auto ref = ad::spectrum_tensor({dsp::stft(near, stft_cfg)});
      const auto spec = ad::spectrum_tensor({ms});
      const auto mic_f = features(ms), far_f = features(dsp::stft(far, stft_cfg));
      std::vector<std::string> names;
      std::vector<Tensor> inputs;
      for (const auto& [name, t] : store.params()) names.push_back(name), inputs.push_back(t);
      ad::ScalarFn fn = [&](ad::Graph& g, const std::vector<ad::Var>& in) {
        BoundParams p;
        p.store = &store;
        for (std::size_t i = 0; i < names.size(); ++i) p.vars.emplace(names[i], in[i]);
        auto r = forward(p, cfg, g.constant(mic_f), g.constant(far_f), {mode, true});
        auto y = ad::stft(ad::istft(ad::mask_spectrum(r.mask, spec), stft_cfg), stft_cfg);
        return ad::compressed_mse(y, ref, {});
      };
      {
        ad::Graph g;
        std::vector<ad::Var> leaves;
        for (const auto& t : inputs) leaves.push_back(g.constant(t));
        REQUIRE(fn(g, leaves).value()[0] > 1e-8);
      }
      ad::GradCheckOptions opts;
      opts.samples_per_input = 6;
      const auto res = ad::grad_check(fn, inputs, opts);
      INFO(to_string(variant) << "/" << to_string(mode) << ": " << res.describe());
      CHECK(res.max_rel_error < 1e-3);
    }
  }
}
