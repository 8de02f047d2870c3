// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aligncruse/data.hpp"
#include "aligncruse/dsp.hpp"
#include "aligncruse/model.hpp"

namespace acrs::eval {

inline constexpr double kErleEps = 1e-12;
inline constexpr double kErleMin = -20.0;
inline constexpr double kErleMax = 80.0;

// 10 log10((sum mic^2 + eps) / (sum enhanced^2 + eps)), clamped to [-20, 80] dB.
double erle(const dsp::AudioClip& mic, const dsp::AudioClip& enhanced);

struct Aggregate {
  double mean = 0.0;
  double ci95 = 0.0;  // 1.96 sigma / sqrt(n), sample standard deviation
  int n = 0;
};
Aggregate aggregate(const std::vector<double>& values);

// One clip to score. The target is optional; when present it must be silent
// for ERLE to be meaningful.
struct EvalClip {
  std::string id;
  dsp::AudioClip mic, far;
  std::optional<dsp::AudioClip> target;
  int delay_samples = -1;  // -1: unknown
};
std::vector<EvalClip> clips_from_manifest(const std::string& manifest_path);
std::vector<EvalClip> clips_from_scenarios(const std::vector<data::Scenario>& set, const std::string& prefix);

// Far-end preprocessing applied before the model sees it.
enum class FarAlignment { kNone, kOnline, kGlobal, kOracle };
const char* to_string(FarAlignment a);
FarAlignment parse_far_alignment(const std::string& s);
dsp::AudioClip align_far(const EvalClip& clip, FarAlignment how, int max_delay);

struct ClipRow {
  std::string id;
  std::optional<double> erle_db;
  std::optional<int> est_delay_frames;
  std::optional<int> true_delay_frames;
  std::optional<int> abs_err_frames;
};

struct Runtime {
  double ms_per_frame = 0.0;
  double real_time_factor = 0.0;
};

struct EvalReport {
  std::string system;
  std::vector<ClipRow> rows;
  Aggregate erle;
  // Fraction of clips with a delay estimate within +-1 frame of the truth.
  double delay_success = 0.0;
  int delay_scored = 0;
  int skipped = 0;  // clips without ground-truth delay
  std::optional<Runtime> runtime;

  // One JSON object per clip followed by a summary object.
  std::string to_jsonl() const;
  std::string summary_json() const;
  std::string text_table() const;
};

// Frame index closest to a sample delay.
int delay_to_frames(int delay_samples, int hop);

struct ModelEvalOptions {
  std::string name = "align_cruse";
  AlignMode mode = AlignMode::kUtterance;
  FarAlignment far = FarAlignment::kNone;
  int max_delay = 16000;  // classical aligner search range, samples
  bool score_erle = true;
};

// Enhances every clip and scores ERLE and (for Align-CRUSE) the delay argmax.
// The utterance argmax is used in utterance mode, the final frame's in causal mode.
EvalReport evaluate_model(const std::vector<EvalClip>& clips, const ModelConfig& cfg, const ParamStore& params,
                          const ModelEvalOptions& opts = {});

enum class Aligner { kGlobal, kOnline };
const char* to_string(Aligner a);
// Delay recovery of a classical aligner (final online estimate in online mode).
EvalReport delay_recovery_report(const std::vector<EvalClip>& clips, Aligner aligner, int max_delay);

// Frame-by-frame streaming throughput of the float engine.
Runtime benchmark_runtime(const ModelConfig& cfg, const ParamStore& params, double seconds, std::uint64_t seed = 1);

// Table of several reports, one line per system.
std::string comparison_table(const std::vector<EvalReport>& reports);

}  // namespace acrs::eval
