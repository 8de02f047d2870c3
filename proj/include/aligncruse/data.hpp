// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "aligncruse/dsp.hpp"

namespace acrs::data {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Nonlinearity { kNone, kHardClip, kTanh };
const char* to_string(Nonlinearity n);
Nonlinearity parse_nonlinearity(const std::string& s);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct ScenarioConfig {
  Range delay_s = {0.0, 1.0};
  Range ser_db = {-10.0, 10.0};
  Range snr_db = {0.0, 40.0};
  Range rt60_s = {0.1, 0.5};
  // Nonlinearity drawn uniformly from this list per scenario.
  std::vector<Nonlinearity> nonlinearities = {Nonlinearity::kNone};
  double clip_len_s = 10.0;
  // Probability that the near end talks; 0 gives far-end single talk only.
  double double_talk_prob = 1.0;
  // Near-end talker reverberates in the same room through its own response.
  bool near_reverb = true;
  // Source RMS level in dBFS and an overall mix gain applied before the
  // peak guard.
  Range level_db = {-28.0, -18.0};
  Range gain_db = {0.0, 0.0};
  // Directory of mono 16 kHz WAVs used as sources instead of the surrogate.
  std::string corpus_dir;
  bool allow_surrogate = true;
  std::uint64_t seed = 0;
  int sample_rate = dsp::kSampleRate;

  // Long-delay test sets: "M" draws [0.3, 0.5] s, "H" draws [0.5, 1.0] s.
  static ScenarioConfig long_delay(const std::string& kind);
  void validate() const;
};

/// Every random draw of a scenario. Building from the same draws is bit-exact.
struct ScenarioDraws {
  std::uint64_t seed = 0;
  std::uint64_t far_seed = 0, near_seed = 0, noise_seed = 0, rir_seed = 0, near_rir_seed = 0;
  bool near_reverb = true;
  int delay_samples = 0;
  double ser_db = kInf;  // inf: echo left at its natural level
  double snr_db = kInf;  // inf: no noise
  double rt60_s = 0.0;   // 0: unit-impulse echo path
  Nonlinearity nonlinearity = Nonlinearity::kNone;
  double nl_param = 0.0;  // clip threshold (fraction of peak) or tanh drive
  bool near_active = true;
  double far_level_db = -20.0, near_level_db = -20.0;
  double gain_db = 0.0;
  std::size_t length = 0;
  std::string far_file, near_file;  // corpus sources, empty for surrogates
};

struct Scenario {
  dsp::AudioClip far;
  dsp::AudioClip near;
  dsp::AudioClip echo;
  dsp::AudioClip noise;
  std::vector<double> rir;
  int delay = 0;
  dsp::AudioClip mic;
  dsp::AudioClip target;
  ScenarioDraws draws;
};

// Derives an independent child seed.
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t stream);

// Syllable-like bursts of formant-shaped noise separated by pauses, scaled to
// `level_db` dBFS RMS.
std::vector<double> speech_surrogate(std::size_t n, std::uint64_t seed, double level_db, int sample_rate);

// Exponentially decaying noise with an RT60 envelope, unit energy, and a
// positive direct-path tap at n = 0 holding at least half the energy.
std::vector<double> make_rir(double rt60_s, std::uint64_t seed, int sample_rate = dsp::kSampleRate);

// Full linear convolution truncated to x.size().
std::vector<double> convolve_truncated(const std::vector<double>& x, const std::vector<double>& h);

ScenarioDraws draw_scenario(const ScenarioConfig& cfg, std::uint64_t seed);
Scenario build_scenario(const ScenarioConfig& cfg, const ScenarioDraws& draws);
Scenario synth_scenario(const ScenarioConfig& cfg, std::uint64_t seed);

double energy(const std::vector<double>& x);
double energy_ratio_db(const std::vector<double>& num, const std::vector<double>& den);

struct ManifestRow {
  std::string id;
  std::string mic_path, far_path, target_path;
  int delay_samples = 0;
  std::optional<double> ser_db, snr_db;  // absent when infinite
  double rt60_s = 0.0;
  std::string nonlinearity;
  std::uint64_t seed = 0;
};

// Scenario set with delays from the LD-M or LD-H range, far-end single talk.
std::vector<Scenario> long_delay_set(const std::string& kind, int n, std::uint64_t seed, double clip_len_s);

// Writes <id>_mic.wav, <id>_far.wav, <id>_target.wav and manifest.jsonl.
std::vector<ManifestRow> make_ld_set(const std::string& kind, int n, std::uint64_t seed, const std::string& out_dir,
                                     double clip_len_s = 10.0);
// Synthesizes and writes one scenario at a time, so memory stays bounded.
std::vector<ManifestRow> write_generated(int n, const std::function<Scenario(int)>& make, const std::string& out_dir,
                                         const std::string& prefix);
std::vector<ManifestRow> write_scenarios(const std::vector<Scenario>& set, const std::string& out_dir,
                                         const std::string& prefix);
std::vector<ManifestRow> read_manifest(const std::string& path);

}  // namespace acrs::data
