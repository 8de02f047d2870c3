// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "aligncruse/log.hpp"
#include "aligncruse/wav.hpp"
#include "json.hpp"

namespace acrs::data {
namespace {

namespace fs = std::filesystem;
using Rng = std::mt19937_64;

enum Stream : std::uint64_t { kFar = 1, kNear, kNoise, kRir, kDraw, kNearRir };

double uniform(Rng& rng, const Range& r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  return std::sqrt(energy(x) / static_cast<double>(x.size()));
}

void scale_to_level(std::vector<double>& x, double level_db) {
  const double r = rms(x);
  if (r <= 0) return;
  const double g = std::pow(10.0, level_db / 20.0) / r;
  for (auto& v : x) v *= g;
}

// Two-pole resonator coefficients for centre `f` and bandwidth `bw` in Hz.
struct Resonator {
  double a1, a2, gain;
  double y1 = 0, y2 = 0;
  Resonator(double f, double bw, int sr) {
    const double r = std::exp(-std::numbers::pi * bw / sr);
    a1 = 2 * r * std::cos(2 * std::numbers::pi * f / sr);
    a2 = -r * r;
    gain = 1 - r;
  }
  double operator()(double x) {
    const double y = gain * x + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    return y;
  }
};

std::vector<double> pink_noise(std::size_t n, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<double> out(n);
  double s = 0;
  for (auto& v : out) {
    s = 0.85 * s + g(rng);
    v = s;
  }
  return out;
}

std::vector<std::string> corpus_files(const std::string& dir) {
  std::vector<std::string> files;
  if (dir.empty() || !fs::is_directory(dir)) return files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<double> corpus_segment(const std::string& file, std::size_t n, std::uint64_t seed, double level_db,
                                   int sample_rate) {
  const auto clip = wav::read(file);
  require(clip.sample_rate == sample_rate, ErrorKind::kConfig, "corpus file '" + file + "' is not " +
                                                                   std::to_string(sample_rate) + " Hz");
  require(!clip.samples.empty(), ErrorKind::kIo, "corpus file '" + file + "' is empty");
  Rng rng(seed);
  const std::size_t start =
      clip.size() > n ? std::uniform_int_distribution<std::size_t>(0, clip.size() - n)(rng) : 0;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = clip.samples[(start + i) % clip.size()];
  scale_to_level(out, level_db);
  return out;
}

std::vector<double> source(const ScenarioDraws& d, const std::string& file, std::uint64_t seed, double level,
                           int sample_rate) {
  if (!file.empty()) return corpus_segment(file, d.length, seed, level, sample_rate);
  return speech_surrogate(d.length, seed, level, sample_rate);
}

std::vector<double> apply_nonlinearity(std::vector<double> x, Nonlinearity nl, double param) {
  if (nl == Nonlinearity::kHardClip) {
    double peak = 0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    const double thr = param * peak;
    for (auto& v : x) v = std::clamp(v, -thr, thr);
  } else if (nl == Nonlinearity::kTanh) {
    double peak = 0;
    for (double v : x) peak = std::max(peak, std::abs(v));
    if (peak > 0)
      for (auto& v : x) v = peak * std::tanh(param * v / peak) / param;
  }
  return x;
}

nlohmann::json optional_db(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace

const char* to_string(Nonlinearity n) {
  switch (n) {
    case Nonlinearity::kHardClip: return "hard_clip";
    case Nonlinearity::kTanh: return "tanh";
    default: return "none";
  }
}

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "none") return Nonlinearity::kNone;
  if (s == "hard_clip") return Nonlinearity::kHardClip;
  if (s == "tanh") return Nonlinearity::kTanh;
  fail(ErrorKind::kConfig, "unknown nonlinearity '" + s + "' (none|hard_clip|tanh)");
}

ScenarioConfig ScenarioConfig::long_delay(const std::string& kind) {
  ScenarioConfig c;
  if (kind == "M") c.delay_s = {0.3, 0.5};
  else if (kind == "H") c.delay_s = {0.5, 1.0};
  else fail(ErrorKind::kConfig, "unknown long-delay set '" + kind + "' (M|H)");
  c.double_talk_prob = 0.0;
  return c;
}

void ScenarioConfig::validate() const {
  require(delay_s.lo >= 0 && delay_s.lo <= delay_s.hi && delay_s.hi <= 1.0, ErrorKind::kConfig,
          "delay range must satisfy 0 <= lo <= hi <= 1 s");
  require(rt60_s.lo <= rt60_s.hi && (rt60_s.hi == 0 || (rt60_s.lo >= 0.05 && rt60_s.hi <= 1.0)), ErrorKind::kConfig,
          "rt60 range must lie in [0.05, 1.0] s (or be 0 for a unit impulse)");
  require(ser_db.lo <= ser_db.hi && snr_db.lo <= snr_db.hi && level_db.lo <= level_db.hi && gain_db.lo <= gain_db.hi,
          ErrorKind::kConfig, "ranges must satisfy lo <= hi");
  require(clip_len_s * sample_rate >= 320, ErrorKind::kConfig, "clip shorter than one analysis window");
  require(double_talk_prob >= 0 && double_talk_prob <= 1, ErrorKind::kConfig, "double_talk_prob must lie in [0, 1]");
  require(!nonlinearities.empty(), ErrorKind::kConfig, "nonlinearity list is empty");
}

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

double energy(const std::vector<double>& x) {
  double e = 0;
  for (double v : x) e += v * v;
  return e;
}

double energy_ratio_db(const std::vector<double>& num, const std::vector<double>& den) {
  return 10.0 * std::log10(energy(num) / energy(den));
}

std::vector<double> speech_surrogate(std::size_t n, std::uint64_t seed, double level_db, int sample_rate) {
  Rng rng(seed);
  std::vector<double> out(n, 0.0);
  const auto ms = [&](double lo, double hi) {
    return static_cast<std::size_t>(std::uniform_real_distribution<double>(lo, hi)(rng) * sample_rate / 1000.0);
  };
  std::normal_distribution<double> gauss;
  std::uniform_real_distribution<double> unit;
  std::size_t pos = ms(0, 200);
  double lp = 0;
  while (pos < n) {
    const std::size_t len = std::max<std::size_t>(ms(80, 300), 16);
    const double level = std::pow(10.0, std::uniform_real_distribution<double>(-12.0, 0.0)(rng) / 20.0);
    Resonator f1(std::uniform_real_distribution<double>(300, 900)(rng), 120, sample_rate);
    Resonator f2(std::uniform_real_distribution<double>(900, 2500)(rng), 180, sample_rate);
    Resonator f3(std::uniform_real_distribution<double>(2500, 3800)(rng), 250, sample_rate);
    const double tilt = std::uniform_real_distribution<double>(0.5, 0.9)(rng);
    const double fric = unit(rng) < 0.25 ? 0.6 : 0.05;
    for (std::size_t i = 0; i < len && pos + i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(len));
      const double e = gauss(rng);
      lp = tilt * lp + e;
      const double voiced = 4.0 * f1(e) + 3.0 * f2(e) + 1.5 * f3(e) + 0.2 * lp;
      out[pos + i] = level * w * (voiced + fric * e);
    }
    pos += len + (unit(rng) < 0.15 ? ms(300, 800) : ms(30, 250));
  }
  scale_to_level(out, level_db);
  return out;
}

std::vector<double> make_rir(double rt60_s, std::uint64_t seed, int sample_rate) {
  require(rt60_s >= 0.05 && rt60_s <= 1.0, ErrorKind::kConfig, "rt60 must lie in [0.05, 1.0] s");
  const auto len = static_cast<std::size_t>(std::ceil(rt60_s * sample_rate));
  Rng rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<double> h(len);
  const double k = 3.0 * std::log(10.0) / (rt60_s * sample_rate);
  double tail_peak = 0, tail_energy = 0;
  for (std::size_t n = 0; n < len; ++n) {
    h[n] = gauss(rng) * std::exp(-k * static_cast<double>(n));
    if (n > 0) tail_peak = std::max(tail_peak, std::abs(h[n])), tail_energy += h[n] * h[n];
  }
  // Direct path carries at least as much energy as the reverberant tail.
  h[0] = std::max(2.0 * tail_peak, std::sqrt(tail_energy));
  const double norm = std::sqrt(energy(h));
  for (auto& v : h) v /= norm;
  return h;
}

std::vector<double> convolve_truncated(const std::vector<double>& x, const std::vector<double>& h) {
  std::vector<double> y(x.size(), 0.0);
  if (x.empty() || h.empty()) return y;
  if (h.size() <= 64) {
    for (std::size_t n = 0; n < x.size(); ++n) {
      double acc = 0;
      for (std::size_t k = 0; k < h.size() && k <= n; ++k) acc += h[k] * x[n - k];
      y[n] = acc;
    }
    return y;
  }
  std::size_t nfft = 1;
  while (nfft < x.size() + h.size()) nfft <<= 1;
  dsp::RealFft fft(static_cast<int>(nfft));
  std::vector<dsp::Complex> a(nfft), b(nfft), fa(nfft), fb(nfft);
  std::copy(x.begin(), x.end(), a.begin());
  std::copy(h.begin(), h.end(), b.begin());
  fft.forward_full(a, fa);
  fft.forward_full(b, fb);
  for (std::size_t i = 0; i < nfft; ++i) fa[i] *= fb[i];
  fft.inverse_full(fa, a);
  for (std::size_t n = 0; n < y.size(); ++n) y[n] = a[n].real();
  return y;
}

ScenarioDraws draw_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(child_seed(seed, kDraw));
  ScenarioDraws d;
  d.seed = seed;
  d.far_seed = child_seed(seed, kFar);
  d.near_seed = child_seed(seed, kNear);
  d.noise_seed = child_seed(seed, kNoise);
  d.rir_seed = child_seed(seed, kRir);
  d.near_rir_seed = child_seed(seed, kNearRir);
  d.near_reverb = cfg.near_reverb;
  d.length = static_cast<std::size_t>(std::llround(cfg.clip_len_s * cfg.sample_rate));
  d.delay_samples = static_cast<int>(std::lround(uniform(rng, cfg.delay_s) * cfg.sample_rate));
  d.ser_db = uniform(rng, cfg.ser_db);
  d.snr_db = uniform(rng, cfg.snr_db);
  d.rt60_s = uniform(rng, cfg.rt60_s);
  d.nonlinearity = cfg.nonlinearities[std::uniform_int_distribution<std::size_t>(0, cfg.nonlinearities.size() - 1)(rng)];
  d.nl_param = d.nonlinearity == Nonlinearity::kHardClip ? uniform(rng, {0.3, 0.8})
               : d.nonlinearity == Nonlinearity::kTanh   ? uniform(rng, {1.0, 4.0})
                                                         : 0.0;
  d.near_active = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.double_talk_prob;
  d.far_level_db = uniform(rng, cfg.level_db);
  d.near_level_db = uniform(rng, cfg.level_db);
  d.gain_db = uniform(rng, cfg.gain_db);
  const auto files = corpus_files(cfg.corpus_dir);
  if (!cfg.corpus_dir.empty() && files.empty()) {
    require(cfg.allow_surrogate, ErrorKind::kIo, "corpus '" + cfg.corpus_dir + "' has no WAV files");
    log::warn("corpus_missing", "no WAV files in '" + cfg.corpus_dir + "'; using the speech surrogate");
  }
  if (!files.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, files.size() - 1);
    d.far_file = files[pick(rng)];
    d.near_file = files[pick(rng)];
  }
  if (!d.near_active) d.ser_db = kInf;
  return d;
}

Scenario build_scenario(const ScenarioConfig& cfg, const ScenarioDraws& d) {
  const int sr = cfg.sample_rate;
  Scenario s;
  s.draws = d;
  s.delay = d.delay_samples;
  s.far = dsp::AudioClip(source(d, d.far_file, d.far_seed, d.far_level_db, sr), sr);
  std::vector<double> near =
      d.near_active ? source(d, d.near_file, d.near_seed, d.near_level_db, sr) : std::vector<double>(d.length, 0.0);
  s.rir = d.rt60_s > 0 ? make_rir(d.rt60_s, d.rir_seed, sr) : std::vector<double>{1.0};
  if (d.near_active && d.near_reverb && d.rt60_s > 0) near = convolve_truncated(near, make_rir(d.rt60_s, d.near_rir_seed, sr));

  std::vector<double> shifted(d.length, 0.0);
  if (static_cast<std::size_t>(d.delay_samples) < d.length)
    std::copy(s.far.samples.begin(), s.far.samples.end() - d.delay_samples, shifted.begin() + d.delay_samples);
  std::vector<double> echo = convolve_truncated(apply_nonlinearity(std::move(shifted), d.nonlinearity, d.nl_param), s.rir);
  if (std::isfinite(d.ser_db) && energy(echo) > 0 && energy(near) > 0) {
    const double g = std::sqrt(energy(near) / (energy(echo) * std::pow(10.0, d.ser_db / 10.0)));
    for (auto& v : echo) v *= g;
  }
  std::vector<double> noise(d.length, 0.0);
  if (std::isfinite(d.snr_db)) {
    Rng rng(d.noise_seed);
    noise = pink_noise(d.length, rng);
    std::vector<double> sig(d.length);
    for (std::size_t i = 0; i < d.length; ++i) sig[i] = near[i] + echo[i];
    if (energy(sig) > 0) {
      const double g = std::sqrt(energy(sig) / (energy(noise) * std::pow(10.0, d.snr_db / 10.0)));
      for (auto& v : noise) v *= g;
    } else {
      std::fill(noise.begin(), noise.end(), 0.0);
    }
  }
  std::vector<double> mic(d.length);
  for (std::size_t i = 0; i < d.length; ++i) mic[i] = near[i] + echo[i] + noise[i];

  double g = std::pow(10.0, d.gain_db / 20.0);
  double peak = 0;
  for (double v : mic) peak = std::max(peak, std::abs(v) * g);
  if (peak > 0.99) g *= 0.99 / peak;
  if (g != 1.0)
    for (auto* x : {&mic, &near, &echo, &noise})
      for (auto& v : *x) v *= g;
  double far_peak = 0;
  for (double v : s.far.samples) far_peak = std::max(far_peak, std::abs(v));
  if (far_peak > 0.99)
    for (auto& v : s.far.samples) v *= 0.99 / far_peak;

  s.mic = dsp::AudioClip(std::move(mic), sr);
  s.target = dsp::AudioClip(near, sr);
  s.near = dsp::AudioClip(std::move(near), sr);
  s.echo = dsp::AudioClip(std::move(echo), sr);
  s.noise = dsp::AudioClip(std::move(noise), sr);
  return s;
}

Scenario synth_scenario(const ScenarioConfig& cfg, std::uint64_t seed) {
  return build_scenario(cfg, draw_scenario(cfg, seed));
}

std::vector<Scenario> long_delay_set(const std::string& kind, int n, std::uint64_t seed, double clip_len_s) {
  require(n >= 1, ErrorKind::kConfig, "dataset size must be >= 1");
  ScenarioConfig cfg = ScenarioConfig::long_delay(kind);
  cfg.clip_len_s = clip_len_s;
  std::vector<Scenario> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(synth_scenario(cfg, child_seed(seed, 1000 + static_cast<std::uint64_t>(i))));
  return out;
}

std::vector<ManifestRow> write_generated(int n, const std::function<Scenario(int)>& make, const std::string& out_dir,
                                         const std::string& prefix) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  require(!ec && fs::is_directory(out_dir), ErrorKind::kIo, "cannot create output directory '" + out_dir + "'");
  const std::string manifest = (fs::path(out_dir) / "manifest.jsonl").string();
  std::ofstream out(manifest, std::ios::trunc);
  require(out.good(), ErrorKind::kIo, "cannot write '" + manifest + "'");
  std::vector<ManifestRow> rows;
  for (int i = 0; i < n; ++i) {
    const Scenario s = make(i);
    ManifestRow r;
    char id[64];
    std::snprintf(id, sizeof id, "%s%05d", prefix.c_str(), i);
    r.id = id;
    r.mic_path = r.id + "_mic.wav";
    r.far_path = r.id + "_far.wav";
    r.target_path = r.id + "_target.wav";
    r.delay_samples = s.delay;
    if (std::isfinite(s.draws.ser_db)) r.ser_db = s.draws.ser_db;
    if (std::isfinite(s.draws.snr_db)) r.snr_db = s.draws.snr_db;
    r.rt60_s = s.draws.rt60_s;
    r.nonlinearity = to_string(s.draws.nonlinearity);
    r.seed = s.draws.seed;
    wav::write((fs::path(out_dir) / r.mic_path).string(), s.mic);
    wav::write((fs::path(out_dir) / r.far_path).string(), s.far);
    wav::write((fs::path(out_dir) / r.target_path).string(), s.target);
    nlohmann::json j = {{"id", r.id},
                        {"mic_path", r.mic_path},
                        {"far_path", r.far_path},
                        {"target_path", r.target_path},
                        {"delay_samples", r.delay_samples},
                        {"ser_db", optional_db(s.draws.ser_db)},
                        {"snr_db", optional_db(s.draws.snr_db)},
                        {"rt60_s", r.rt60_s},
                        {"nonlinearity", r.nonlinearity},
                        {"seed", r.seed}};
    out << j.dump() << '\n';
    rows.push_back(std::move(r));
  }
  require(out.good(), ErrorKind::kIo, "write failed on '" + manifest + "'");
  return rows;
}

std::vector<ManifestRow> write_scenarios(const std::vector<Scenario>& set, const std::string& out_dir,
                                         const std::string& prefix) {
  return write_generated(static_cast<int>(set.size()), [&](int i) { return set[static_cast<std::size_t>(i)]; }, out_dir,
                         prefix);
}

std::vector<ManifestRow> make_ld_set(const std::string& kind, int n, std::uint64_t seed, const std::string& out_dir,
                                     double clip_len_s) {
  require(n >= 1, ErrorKind::kConfig, "dataset size must be >= 1");
  ScenarioConfig cfg = ScenarioConfig::long_delay(kind);
  cfg.clip_len_s = clip_len_s;
  return write_generated(
      n, [&](int i) { return synth_scenario(cfg, child_seed(seed, 1000 + static_cast<std::uint64_t>(i))); }, out_dir,
      "ld" + kind + "_");
}

std::vector<ManifestRow> read_manifest(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::kIo, "cannot open manifest '" + path + "'");
  const fs::path dir = fs::path(path).parent_path();
  std::vector<ManifestRow> rows;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kIo, path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    ManifestRow r;
    r.id = j.value("id", "row" + std::to_string(line_no));
    auto resolve = [&](const char* key) {
      const std::string p = j.value(key, std::string());
      if (p.empty()) return p;
      return fs::path(p).is_absolute() ? p : (dir / p).string();
    };
    r.mic_path = resolve("mic_path");
    r.far_path = resolve("far_path");
    r.target_path = resolve("target_path");
    r.delay_samples = j.contains("delay_samples") && j["delay_samples"].is_number() ? j["delay_samples"].get<int>() : -1;
    if (j.contains("ser_db") && j["ser_db"].is_number()) r.ser_db = j["ser_db"].get<double>();
    if (j.contains("snr_db") && j["snr_db"].is_number()) r.snr_db = j["snr_db"].get<double>();
    r.rt60_s = j.value("rt60_s", 0.0);
    r.nonlinearity = j.value("nonlinearity", std::string("none"));
    r.seed = j.value("seed", std::uint64_t{0});
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace acrs::data
