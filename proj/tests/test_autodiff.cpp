// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <cmath>
#include <random>

#include "aligncruse/autodiff.hpp"
#include "aligncruse/grad_check.hpp"
#include "doctest.h"

using namespace acrs;
using namespace acrs::ad;

namespace {

constexpr double kOpTolerance = 1e-4;

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// Direct-loop oracle for the causal convolution.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, const ConvGeometry& geo) {
  const int n_n = x.dim(0), ci = x.dim(1), t_n = x.dim(2), f_n = x.dim(3);
  const int co = w.dim(0), kt_n = w.dim(2), kf_n = w.dim(3);
  const int fo = (f_n + geo.pad_f_lo + geo.pad_f_hi - kf_n) / geo.stride_f + 1;
  Tensor y({n_n, co, t_n, fo});
  for (int n = 0; n < n_n; ++n)
    for (int o = 0; o < co; ++o)
      for (int t = 0; t < t_n; ++t)
        for (int j = 0; j < fo; ++j) {
          double acc = b[o];
          for (int c = 0; c < ci; ++c)
            for (int kt = 0; kt < kt_n; ++kt)
              for (int kf = 0; kf < kf_n; ++kf) {
                const int ts = t - (kt_n - 1) + kt, fs = j * geo.stride_f - geo.pad_f_lo + kf;
                if (ts >= 0 && fs >= 0 && fs < f_n) acc += w.at(o, c, kt, kf) * x.at(n, c, ts, fs);
              }
          y.at(n, o, t, j) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("graph contracts") {
  Graph g;
  Var x = g.variable(Tensor({2}, 1.0));
  CHECK_THROWS_AS(g.backward(x), Error);
  Var s = sum(x);
  g.backward(s);
  CHECK(g.grad(x)[0] == 1.0);
  CHECK_THROWS_AS(g.backward(s), Error);
  g.reset();
  Var bad = g.constant(Tensor({1}, -1.0));
  Tensor inf_in({1}, 1e308);
  Var big = g.constant(inf_in);
  CHECK_THROWS_AS(mul(big, big), Error);
  (void)bad;
}

TEST_CASE("parameter gradients accumulate into sinks") {
  Tensor w({3}, 2.0), gw;
  for (int rep = 0; rep < 2; ++rep) {
    Graph g;
    Var p = g.parameter(w, &gw);
    g.backward(sum(mul(p, p)));
  }
  REQUIRE(gw.size() == 3);
  CHECK(gw[0] == doctest::Approx(8.0));
}

TEST_CASE("conv2d_causal matches the direct oracle and frequency arithmetic") {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3, 5, 11}, rng);
  const Tensor w = random_tensor({4, 3, 2, 3}, rng);
  const Tensor b = random_tensor({4}, rng);
  for (ConvGeometry geo : {ConvGeometry{1, 1, 1}, ConvGeometry{2, 1, 1}, ConvGeometry{2, 0, 1}}) {
    Graph g;
    const Tensor y = conv2d_causal(g.constant(x), g.constant(w), g.constant(b), geo).value();
    const Tensor ref = conv_oracle(x, w, b, geo);
    REQUIRE(y.shape() == ref.shape());
    for (Index i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
  CHECK(conv_out_bins(161, 3, {2, 1, 1}) == 81);
  CHECK(conv_out_bins(81, 3, {2, 1, 1}) == 41);
  CHECK(conv_out_bins(41, 3, {2, 1, 1}) == 21);
  CHECK(conv_out_bins(21, 3, {2, 1, 1}) == 11);
  CHECK(conv_out_bins(161, 3, {2, 0, 1}) == 80);
  CHECK(transpose_out_bins(11, 3, TransposeGeometry::with_output_padding(2, 0)) == 21);
  CHECK(transpose_out_bins(81, 3, TransposeGeometry::with_output_padding(2, 0)) == 161);
  CHECK(transpose_out_bins(80, 3, {2, 0, 0}) == 161);
}

TEST_CASE("conv2d_transpose is the adjoint of a stride-s convolution") {
  std::mt19937_64 rng(2);
  const Tensor x = random_tensor({1, 2, 3, 9}, rng);
  const Tensor w = random_tensor({2, 3, 1, 3}, rng);  // (Ci, Co, 1, Kf) for transpose
  const ConvGeometry cg{2, 1, 1};
  const TransposeGeometry tg{2, 1, 1};
  const int fo = transpose_out_bins(9, 3, tg);
  const Tensor u = random_tensor({1, 3, 3, fo}, rng);
  // <T(x), u> == <x, C(u)> with C using the same kernel laid out (Co=2, Ci=3).
  Tensor wc({2, 3, 1, 3});
  for (int a = 0; a < 2; ++a)
    for (int c = 0; c < 3; ++c)
      for (int k = 0; k < 3; ++k) wc.at(a, c, 0, k) = w.at(a, c, 0, k);
  Graph g;
  const Tensor tx = conv2d_transpose(g.constant(x), g.constant(w), g.constant(Tensor({3})), tg).value();
  const Tensor cu = conv2d_causal(g.constant(u), g.constant(wc), g.constant(Tensor({2})), cg).value();
  REQUIRE(cu.shape() == x.shape());
  CHECK(tx.vec().dot(u.vec()) == doctest::Approx(x.vec().dot(cu.vec())).epsilon(1e-12));
}

TEST_CASE("causal convolution ignores future frames") {
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({1, 2, 8, 7}, rng);
  const Tensor w = random_tensor({3, 2, 2, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  Graph g;
  const Tensor y0 = conv2d_causal(g.constant(x), g.constant(w), g.constant(b), {}).value();
  for (int f = 0; f < 7; ++f) x.at(0, 1, 5, f) += 10.0;
  const Tensor y1 = conv2d_causal(g.constant(x), g.constant(w), g.constant(b), {}).value();
  for (int c = 0; c < 3; ++c)
    for (int t = 0; t < 5; ++t)
      for (int f = 0; f < 7; ++f) CHECK(y0.at(0, c, t, f) == y1.at(0, c, t, f));
}

TEST_CASE("gradient checks per op") {
  const auto checks = check_all_ops();
  CHECK(checks.size() >= 25);
  for (const auto& c : checks) {
    INFO(c.op << ": " << c.result.describe());
    CHECK(c.result.checked > 0);
    CHECK(c.result.max_rel_error < kOpTolerance);
  }
}

TEST_CASE("istft op matches the dsp reference") {
  std::mt19937_64 rng(4);
  const dsp::StftConfig cfg;
  std::vector<double> x(2000);
  std::normal_distribution<double> dist;
  for (auto& v : x) v = dist(rng);
  const auto spec = dsp::stft(dsp::AudioClip(x), cfg);
  const auto ref = dsp::istft(spec, cfg);
  Graph g;
  const Tensor st = spectrum_tensor({spec});
  const Tensor y = ad::istft(g.constant(st), cfg).value();
  REQUIRE(y.size() == static_cast<Index>(ref.size()));
  for (Index i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(ref.samples[static_cast<std::size_t>(i)]).epsilon(1e-12));
  const Tensor s2 = ad::stft(g.constant(Tensor({1, 2000}, x)), cfg).value();
  CHECK((s2.vec() - st.vec()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("compressed loss identities") {
  std::mt19937_64 rng(5);
  const Tensor s = random_tensor({1, 2, 4, 6}, rng);
  Graph g;
  CHECK(compressed_mse(g.constant(s), s, {}).value()[0] == 0.0);
  Tensor zero({1, 2, 1, 1}), unit({1, 2, 1, 1});
  unit[0] = 1.0;
  for (double beta : {0.0, 0.3, 0.7, 1.0})
    CHECK(std::abs(compressed_mse(g.constant(unit), zero, {0.3, beta, 1e-12}).value()[0] - 1.0) < 1e-12);
}

TEST_CASE("softmax rows are normalized and delay scores match brute force") {
  std::mt19937_64 rng(6);
  const Tensor q = random_tensor({1, 7, 3}, rng), k = random_tensor({1, 7, 3}, rng);
  Graph g;
  const Tensor s = delay_scores(g.constant(q), g.constant(k), 5).value();
  for (int d = 0; d < 5; ++d) {
    double ref = 0;
    for (int t = d; t < 7; ++t)
      for (int j = 0; j < 3; ++j) ref += q[t * 3 + j] * k[(t - d) * 3 + j];
    CHECK(s[d] == doctest::Approx(ref).epsilon(1e-12));
  }
  const Tensor sc = causal_delay_scores(g.constant(q), g.constant(k), 5, 1.0).value();
  for (int d = 0; d < 5; ++d) CHECK(sc[6 * 5 + d] == doctest::Approx(s[d]).epsilon(1e-12));
  const Tensor p = softmax_lastdim(g.constant(random_tensor({3, 9}, rng, 20.0))).value();
  for (int r = 0; r < 3; ++r) CHECK(p.matrix(3, 9).row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}
