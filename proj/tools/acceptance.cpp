// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

// Acceptance gate: one PASS/FAIL line per criterion. Exit status 0 only when
// every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <string>

#include "CLI11.hpp"
#include "aligncruse/alignment.hpp"
#include "aligncruse/data.hpp"
#include "aligncruse/eval.hpp"
#include "aligncruse/grad_check.hpp"
#include "aligncruse/log.hpp"
#include "aligncruse/model.hpp"
#include "aligncruse/streaming.hpp"
#include "aligncruse/train.hpp"

using namespace acrs;

namespace {

// Tolerances and thresholds.
constexpr double kOpGradTol = 1e-4;
constexpr double kModelGradTol = 1e-3;
constexpr double kRoundTripTol = 1e-6;
constexpr int kRoundTripClips = 100;
constexpr double kAlignOracleTol = 1e-10;
constexpr int kAlignOracleInstances = 50;
constexpr int kAlignerTrials = 100;
constexpr int kNoiselessRequired = 100;
constexpr int kNoisyRequired = 99;
constexpr double kNoisySnrDb = 20.0;
constexpr double kNoisyConfidence = 0.4;
constexpr double kValLossDrop = 0.30;
constexpr double kAlignSuccess = 0.90;
constexpr double kToyErleDb = 10.0;
constexpr double kBaselineGapDb = 5.0;
constexpr Index kParamsMin = 700000, kParamsMax = 800000;
constexpr Index kDeltaMin = 5000, kDeltaMax = 20000;
constexpr double kStreamTol = 1e-6;
constexpr double kMaxRtf = 1.0;
constexpr double kLossIdentityTol = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[96];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// White noise, so short clips are never silent.
std::vector<double> noise(std::size_t n, std::uint64_t seed, double sd) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> x(n);
  for (auto& v : x) v = g(rng);
  return x;
}

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, scale);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

// ------------------------------------------------------------- criterion 1

double model_grad_error(Variant variant, AlignMode mode) {
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
    return train::enhancement_loss(r.mask, spec, ref, stft_cfg);
  };
  {
    // A silent clip would make every gradient vanish and the check vacuous.
    ad::Graph g;
    std::vector<ad::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.constant(t));
    if (!(fn(g, leaves).value()[0] > 1e-8)) return INFINITY;
  }
  ad::GradCheckOptions opts;
  opts.samples_per_input = 6;
  return ad::grad_check(fn, inputs, opts).max_rel_error;
}

Outcome gradients() {
  double worst_op = 0;
  std::string worst_name;
  const auto checks = ad::check_all_ops();
  for (const auto& c : checks)
    if (c.result.max_rel_error >= worst_op) worst_op = c.result.max_rel_error, worst_name = c.op;
  double worst_model = 0;
  worst_model = std::max(worst_model, model_grad_error(Variant::kAlignCruse, AlignMode::kUtterance));
  worst_model = std::max(worst_model, model_grad_error(Variant::kAlignCruse, AlignMode::kCausal));
  worst_model = std::max(worst_model, model_grad_error(Variant::kCruse, AlignMode::kUtterance));
  return {worst_op < kOpGradTol && worst_model < kModelGradTol,
          std::to_string(checks.size()) + " ops, worst " + worst_name + " " + fmt("%.2e", worst_op) + " (tol 1e-4); " +
              "tiny model end to end " + fmt("%.2e", worst_model) + " (tol 1e-3)"};
}

// ------------------------------------------------------------- criterion 2

Outcome stft_round_trip() {
  const dsp::StftConfig cfg;
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> len(1000, 48000);
  double worst = 0;
  for (int i = 0; i < kRoundTripClips; ++i) {
    const int n = len(rng);
    std::vector<double> xs = data::speech_surrogate(static_cast<std::size_t>(n), static_cast<std::uint64_t>(i), -20, 16000);
    if (i % 2 == 0) {
      const Tensor w = random_tensor({n}, rng, 0.3);
      xs.assign(w.values().begin(), w.values().end());
    }
    const auto y = dsp::istft(dsp::stft(dsp::AudioClip(xs), cfg), cfg);
    for (std::size_t k = static_cast<std::size_t>(cfg.win_len()); k + cfg.win_len() < y.size(); ++k)
      worst = std::max(worst, std::abs(y.samples[k] - xs[k]));
  }
  return {worst < kRoundTripTol,
          std::to_string(kRoundTripClips) + " clips, max interior error " + fmt("%.2e", worst) + " (tol 1e-6)"};
}

// ------------------------------------------------------------- criterion 3

Outcome causality() {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 0.1);
  int checks = 0;
  std::string broken;

  // STFT: frames that end before the perturbation.
  {
    const dsp::StftConfig cfg;
    const auto x = data::speech_surrogate(8000, 1, -20, 16000);
    const auto base = dsp::stft(dsp::AudioClip(x), cfg);
    for (int p : {320, 1000, 4321, 7999}) {
      auto y = x;
      for (std::size_t i = static_cast<std::size_t>(p); i < y.size(); ++i) y[i] += g(rng);
      const auto pert = dsp::stft(dsp::AudioClip(y), cfg);
      for (int t = 0; t * cfg.hop() + cfg.win_len() <= p; ++t)
        if (pert.data.row(t) != base.data.row(t)) broken = "stft";
      ++checks;
    }
  }
  // Causal convolution: output frames before the perturbed frame.
  {
    const auto x = random_tensor({1, 2, 12, 9}, rng);
    const auto w = random_tensor({3, 2, 4, 3}, rng), b = random_tensor({3}, rng);
    ad::Graph graph;
    const Tensor base = ad::conv2d_causal(graph.constant(x), graph.constant(w), graph.constant(b), {2, 0, 1}).value();
    for (int k : {0, 5, 11}) {
      auto y = x;
      for (int c = 0; c < 2; ++c)
        for (int t = k; t < 12; ++t)
          for (int f = 0; f < 9; ++f) y.at(0, c, t, f) += 1.0;
      const Tensor pert =
          ad::conv2d_causal(graph.constant(y), graph.constant(w), graph.constant(b), {2, 0, 1}).value();
      for (int o = 0; o < 3; ++o)
        for (int t = 0; t < k; ++t)
          for (int f = 0; f < base.dim(3); ++f)
            if (pert.at(0, o, t, f) != base.at(0, o, t, f)) broken = "conv2d_causal";
      ++checks;
    }
  }
  // Online aligner: estimates for hops before the perturbation.
  {
    const auto far = data::speech_surrogate(48000, 2, -20, 16000);
    const dsp::AudioClip f(far);
    const auto mic = align::apply_delay(f, 3000);
    const auto base = align::online_delay(mic, f, 8000);
    for (int p : {16000, 30000, 40000}) {
      auto m2 = mic;
      auto f2 = f;
      for (std::size_t i = static_cast<std::size_t>(p); i < m2.size(); ++i) m2.samples[i] += g(rng), f2.samples[i] += g(rng);
      const auto pert = align::online_delay(m2, f2, 8000);
      for (std::size_t h = 0; (h + 1) * 160 <= static_cast<std::size_t>(p); ++h)
        if (pert.per_frame[h] != base.per_frame[h]) broken = "online_delay";
      ++checks;
    }
  }
  // End-to-end enhancement, both variants.
  for (Variant v : {Variant::kAlignCruse, Variant::kCruse}) {
    auto cfg = ModelConfig::preset("tiny");
    cfg.variant = v;
    const auto store = init_params(cfg, 9);
    const dsp::AudioClip mic(data::speech_surrogate(9600, 3, -20, 16000));
    const dsp::AudioClip far(data::speech_surrogate(9600, 4, -20, 16000));
    const auto base = enhance(mic, far, store, cfg);
    for (int k : {0, 7, 31, 55}) {
      const std::size_t cut = static_cast<std::size_t>(k) * 160 + 320;
      auto mic2 = mic, far2 = far;
      for (std::size_t i = cut; i < mic.size(); ++i) mic2.samples[i] += g(rng), far2.samples[i] += g(rng);
      const auto pert = enhance(mic2, far2, store, cfg);
      for (std::size_t i = 0; i <= static_cast<std::size_t>(k) * 160; ++i)
        if (pert.enhanced.samples[i] != base.enhanced.samples[i]) broken = "enhance";
      ++checks;
    }
  }
  return {broken.empty(), broken.empty() ? std::to_string(checks) + " perturbations, prefixes bit-identical"
                                         : "prefix changed in " + broken};
}

// ------------------------------------------------------------- criterion 4

Outcome align_oracle() {
  const auto cfg = ModelConfig::preset("tiny");
  std::mt19937_64 rng(4);
  double worst = 0;
  for (int i = 0; i < kAlignOracleInstances; ++i) {
    const auto store = init_params(cfg, static_cast<std::uint64_t>(100 + i));
    const int t = 3 + (i * 7) % 90;
    const int n = 1 + i % 2;
    const auto xm = random_tensor({n, cfg.mic_channels[1], t, cfg.enc_bins(1)}, rng);
    const auto xf = random_tensor({n, cfg.far_channels[1], t, cfg.enc_bins(1)}, rng);
    const AlignMode mode = i % 2 ? AlignMode::kCausal : AlignMode::kUtterance;
    ad::Graph g;
    const auto p = bind(g, store, nullptr);
    const auto a = align_block(p, cfg, g.constant(xm), g.constant(xf), mode);
    const Tensor& d = a.delay.value();
    const int d_max = d.dim(-1);
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < xf.dim(1); ++c)
        for (int tt = 0; tt < t; ++tt)
          for (int f = 0; f < xf.dim(3); ++f) {
            double want = 0;
            for (int k = 0; k < d_max && k <= tt; ++k) {
              const double w = mode == AlignMode::kCausal ? d[(static_cast<Index>(b) * t + tt) * d_max + k]
                                                          : d[static_cast<Index>(b) * d_max + k];
              want += w * xf.at(b, c, tt - k, f);
            }
            worst = std::max(worst, std::abs(a.aligned.value().at(b, c, tt, f) - want));
          }
  }
  bool exact = true;
  const auto x = random_tensor({1, 3, 40, 5}, rng);
  for (int shift : {0, 1, 9, 39, 45}) {
    Tensor w({1, 50});
    w[shift] = 1.0;
    Tensor wc({1, 40, 50});
    for (int tt = 0; tt < 40; ++tt) wc[tt * 50 + shift] = 1.0;
    ad::Graph g;
    const Tensor y = ad::soft_shift(g.constant(x), g.constant(w)).value();
    const Tensor yc = ad::soft_shift_causal(g.constant(x), g.constant(wc)).value();
    for (int c = 0; c < 3; ++c)
      for (int tt = 0; tt < 40; ++tt)
        for (int f = 0; f < 5; ++f) {
          const double want = tt >= shift ? x.at(0, c, tt - shift, f) : 0.0;
          exact = exact && y.at(0, c, tt, f) == want && yc.at(0, c, tt, f) == want;
        }
  }
  return {worst < kAlignOracleTol && exact, std::to_string(kAlignOracleInstances) + " instances, max error " +
                                                fmt("%.2e", worst) + " (tol 1e-10); one-hot shift " +
                                                (exact ? "exact" : "NOT exact")};
}

// ------------------------------------------------------------- criterion 5

Outcome classical_aligner() {
  constexpr int kMaxDelay = 16000;
  constexpr std::size_t kLen = 48000;
  int noiseless = 0, noisy = 0, confident = 0;
  double min_conf = 1.0;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> delay(0, kMaxDelay);
  for (int i = 0; i < kAlignerTrials; ++i) {
    const int d = i == 0 ? 0 : (i == 1 ? kMaxDelay : delay(rng));
    const dsp::AudioClip far(data::speech_surrogate(kLen, 5000 + static_cast<std::uint64_t>(i), -20, 16000));
    const auto mic = align::apply_delay(far, d);
    if (align::global_delay(mic, far, kMaxDelay).delay == d) ++noiseless;
  }
  for (int i = 0; i < kAlignerTrials; ++i) {
    constexpr int d = 8000;
    const dsp::AudioClip far(data::speech_surrogate(kLen, 6000 + static_cast<std::uint64_t>(i), -20, 16000));
    auto mic = align::apply_delay(far, d);
    for (auto& v : mic.samples) v *= 0.5;
    const double sigma = std::sqrt(data::energy(mic.samples) / static_cast<double>(kLen) / std::pow(10.0, kNoisySnrDb / 10));
    std::normal_distribution<double> noise(0.0, sigma);
    for (auto& v : mic.samples) v += noise(rng);
    const auto est = align::global_delay(mic, far, kMaxDelay);
    if (est.delay == d) ++noisy;
    if (est.confidence > kNoisyConfidence) ++confident;
    min_conf = std::min(min_conf, est.confidence);
  }
  return {noiseless >= kNoiselessRequired && noisy >= kNoisyRequired && confident >= kNoisyRequired,
          "noiseless " + std::to_string(noiseless) + "/100 (need 100); 20 dB " + std::to_string(noisy) +
              "/100 (need 99), confidence > 0.4 in " + std::to_string(confident) + "/100, min " + fmt("%.3f", min_conf)};
}

// ---------------------------------------------------------- criteria 6, 7

struct ToyRuns {
  bool done = false;
  std::vector<train::EpochMetrics> history;
  eval::EvalReport align_cruse, align_cruse_causal, cruse;
};

train::TrainConfig toy_config(Variant v, std::uint64_t seed, const std::string& out_dir) {
  auto cfg = train::TrainConfig::toy();
  cfg.seed = seed;
  cfg.model.variant = v;
  cfg.oracle_align_train = v == Variant::kCruse;
  if (!out_dir.empty()) cfg.out_dir = out_dir + "/" + to_string(v);
  return cfg;
}

ToyRuns& toy_runs(std::uint64_t seed, const std::string& out_dir, bool need_baseline) {
  static ToyRuns runs;
  if (!runs.done) {
    train::Trainer t(toy_config(Variant::kAlignCruse, seed, out_dir));
    t.run();
    runs.history = t.history();
    runs.align_cruse = t.evaluate(AlignMode::kUtterance);
    runs.align_cruse_causal = t.evaluate(AlignMode::kCausal);
    runs.done = true;
  }
  if (need_baseline && runs.cruse.rows.empty()) {
    train::Trainer t(toy_config(Variant::kCruse, seed, out_dir));
    t.run();
    runs.cruse = t.evaluate(AlignMode::kUtterance);
  }
  return runs;
}

Outcome toy_training(std::uint64_t seed, const std::string& out_dir) {
  const auto& r = toy_runs(seed, out_dir, false);
  const double first = r.history.front().val_loss, last = r.history.back().val_loss;
  const double drop = (first - last) / first;
  const bool a = drop >= kValLossDrop;
  const bool b = r.align_cruse.delay_success >= kAlignSuccess;
  const bool c = r.align_cruse.erle.mean > kToyErleDb;
  std::vector<double> errs;
  for (const auto& row : r.align_cruse.rows)
    if (row.est_delay_frames && row.true_delay_frames) errs.push_back(*row.est_delay_frames - *row.true_delay_frames);
  std::sort(errs.begin(), errs.end());
  const double median_err = errs.empty() ? 0.0 : errs[errs.size() / 2];
  // Diagnostic only: how tightly the estimates cluster around their own offset.
  const auto near_median = std::count_if(errs.begin(), errs.end(), [&](double e) { return std::abs(e - median_err) <= 1; });
  const double consistency = errs.empty() ? 0.0 : static_cast<double>(near_median) / static_cast<double>(errs.size());
  return {a && b && c, std::string("(a) val loss ") + fmt("%.4f", first) + " -> " + fmt("%.4f", last) + ", drop " +
                           fmt("%.1f%%", 100 * drop) + (a ? " ok" : " FAIL") + "; (b) align +-1 frame " +
                           fmt("%.1f%%", 100 * r.align_cruse.delay_success) + " over " +
                           std::to_string(r.align_cruse.delay_scored) + " clips, median error " +
                           fmt("%+.0f", median_err) + " frames, " + fmt("%.0f%%", 100 * consistency) +
                           " within +-1 of it" + (b ? " ok" : " FAIL") + "; (c) ERLE " +
                           fmt("%.2f dB", r.align_cruse.erle.mean) + (c ? " ok" : " FAIL") + "; causal mode ERLE " +
                           fmt("%.2f dB", r.align_cruse_causal.erle.mean) + ", align " +
                           fmt("%.1f%%", 100 * r.align_cruse_causal.delay_success)};
}

Outcome baseline_ordering(std::uint64_t seed, const std::string& out_dir) {
  const auto& r = toy_runs(seed, out_dir, true);
  const double gap = r.align_cruse.erle.mean - r.cruse.erle.mean;
  return {gap > kBaselineGapDb, "ERLE Align-CRUSE " + fmt("%.2f", r.align_cruse.erle.mean) + " dB vs CRUSE unaligned " +
                                    fmt("%.2f", r.cruse.erle.mean) + " dB, gap " + fmt("%.2f dB", gap) +
                                    " (need > 5 dB)"};
}

// ------------------------------------------------------------- criterion 8

Outcome param_budget() {
  auto cfg = ModelConfig::preset("default");
  const Index full = count_params(cfg);
  cfg.variant = Variant::kCruse;
  const Index delta = full - count_params(cfg);
  const ParamStore store = init_params(ModelConfig::preset("default"), 1);
  const bool consistent = store.num_params() == full;
  return {full >= kParamsMin && full <= kParamsMax && delta >= kDeltaMin && delta <= kDeltaMax && consistent,
          "default " + std::to_string(full) + " params (need 700000..800000), delta " + std::to_string(delta) +
              " (need 5000..20000)" + (consistent ? "" : ", store count disagrees")};
}

// ------------------------------------------------------------- criterion 9

Outcome streaming() {
  const auto cfg = ModelConfig::preset("default");
  auto store = init_params(cfg, 5);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.5, 2.0), m(-0.5, 0.5);
  for (auto& [name, t] : store.buffers())
    for (auto& x : t.values()) x = name.find(".var") != std::string::npos ? u(rng) : m(rng);
  const dsp::AudioClip mic(data::speech_surrogate(32000, 6, -22, 16000));
  const dsp::AudioClip far(data::speech_surrogate(32000, 7, -22, 16000));
  const auto ref = enhance(mic, far, store, cfg);
  StreamingEnhancer<double> s(cfg, store);
  std::vector<double> out;
  const int hop = cfg.win_len / 2;
  for (std::size_t i = 0; i < mic.size(); i += static_cast<std::size_t>(hop)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(hop), mic.size() - i);
    const auto y = s.push(std::span(mic.samples).subspan(i, n), std::span(far.samples).subspan(i, n));
    out.insert(out.end(), y.begin(), y.end());
  }
  const auto tail = s.flush();
  out.insert(out.end(), tail.begin(), tail.end());
  double worst = out.size() == ref.enhanced.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(out.size(), ref.enhanced.size()); ++i)
    worst = std::max(worst, std::abs(out[i] - ref.enhanced.samples[i]));
  const auto rt = eval::benchmark_runtime(cfg, store, 10.0);
  return {worst < kStreamTol && rt.real_time_factor < kMaxRtf,
          "1-frame chunks max deviation " + fmt("%.2e", worst) + " (tol 1e-6); RTF " + fmt("%.4f", rt.real_time_factor) +
              " (" + fmt("%.4f", rt.ms_per_frame) + " ms/frame, need RTF < 1)"};
}

// ------------------------------------------------------------ criterion 10

Outcome loss_identities() {
  std::mt19937_64 rng(10);
  bool zero = true;
  ad::Graph g;
  for (int i = 0; i < 20; ++i) {
    const auto s = random_tensor({1 + i % 3, 2, 1 + i % 7, 1 + i % 11}, rng, 1.0 + i);
    for (double beta : {0.0, 0.3, 0.7, 1.0})
      zero = zero && ad::compressed_mse(g.constant(s), s, {0.3, beta, 1e-12}).value()[0] == 0.0;
  }
  Tensor silent({1, 2, 1, 1}), unit({1, 2, 1, 1});
  unit[0] = 1.0;
  double worst = 0;
  for (double beta : {0.0, 0.25, 0.5, 0.7, 1.0})
    for (double c : {0.3, 0.5, 1.0})
      worst = std::max(worst, std::abs(ad::compressed_mse(g.constant(unit), silent, {c, beta, 1e-12}).value()[0] - 1.0));
  return {zero && worst < kLossIdentityTol, std::string("L(S,S) ") + (zero ? "= 0" : "!= 0") +
                                                " on 20 spectra; hand example |L - 1| " + fmt("%.1e", worst) +
                                                " (tol 1e-12)"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks: one PASS/FAIL line per criterion"};
  std::vector<int> only;
  std::uint64_t seed = 1;
  std::string out_dir;
  app.add_option("--only", only, "Run only these criteria (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--seed", seed, "Seed of the toy trainings")->capture_default_str();
  app.add_option("--out-dir", out_dir, "Keep toy training metrics and checkpoints here");
  CLI11_PARSE(app, argc, argv);
  log::set_level(log::Level::kWarn);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient checks", gradients},
      {"stft round trip", stft_round_trip},
      {"causality", causality},
      {"align block oracle", align_oracle},
      {"classical aligner recovery", classical_aligner},
      {"toy training", [&] { return toy_training(seed, out_dir); }},
      {"baseline ordering", [&] { return baseline_ordering(seed, out_dir); }},
      {"parameter budget", param_budget},
      {"streaming equivalence", streaming},
      {"loss identities", loss_identities},
  };
  const std::set<int> selected(only.begin(), only.end());
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failed;
    std::printf("criterion %2d %s  %-27s %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
