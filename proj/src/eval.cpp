// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/eval.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "aligncruse/alignment.hpp"
#include "aligncruse/log.hpp"
#include "aligncruse/streaming.hpp"
#include "aligncruse/wav.hpp"
#include "json.hpp"

namespace acrs::eval {
namespace {

using nlohmann::json;

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void finish(EvalReport& r) {
  std::vector<double> erles;
  int ok = 0;
  r.delay_scored = 0;
  for (const auto& row : r.rows) {
    if (row.erle_db) erles.push_back(*row.erle_db);
    if (row.abs_err_frames) {
      ++r.delay_scored;
      if (*row.abs_err_frames <= 1) ++ok;
    }
  }
  r.erle = aggregate(erles);
  r.delay_success = r.delay_scored > 0 ? static_cast<double>(ok) / r.delay_scored : 0.0;
  if (r.skipped > 0)
    log::warn("missing_ground_truth", std::to_string(r.skipped) + " clips without ground-truth delay were not scored");
}

void score_delay(ClipRow& row, const EvalClip& clip, int est_frames, int hop, int& skipped) {
  row.est_delay_frames = est_frames;
  if (clip.delay_samples < 0) {
    ++skipped;
    return;
  }
  row.true_delay_frames = delay_to_frames(clip.delay_samples, hop);
  row.abs_err_frames = std::abs(est_frames - *row.true_delay_frames);
}

}  // namespace

double erle(const dsp::AudioClip& mic, const dsp::AudioClip& enhanced) {
  require(mic.size() == enhanced.size(), ErrorKind::kShape,
          "erle: mic has " + std::to_string(mic.size()) + " samples, enhanced " + std::to_string(enhanced.size()));
  const double num = data::energy(mic.samples) + kErleEps;
  const double den = data::energy(enhanced.samples) + kErleEps;
  return std::clamp(10.0 * std::log10(num / den), kErleMin, kErleMax);
}

Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.n = static_cast<int>(values.size());
  if (a.n == 0) return a;
  for (double v : values) a.mean += v;
  a.mean /= a.n;
  if (a.n > 1) {
    double ss = 0;
    for (double v : values) ss += (v - a.mean) * (v - a.mean);
    a.ci95 = 1.96 * std::sqrt(ss / (a.n - 1)) / std::sqrt(static_cast<double>(a.n));
  }
  return a;
}

std::vector<EvalClip> clips_from_manifest(const std::string& manifest_path) {
  std::vector<EvalClip> clips;
  for (const auto& row : data::read_manifest(manifest_path)) {
    EvalClip c;
    c.id = row.id;
    c.mic = wav::read(row.mic_path);
    c.far = wav::read(row.far_path);
    if (!row.target_path.empty()) c.target = wav::read(row.target_path);
    c.delay_samples = row.delay_samples;
    clips.push_back(std::move(c));
  }
  return clips;
}

std::vector<EvalClip> clips_from_scenarios(const std::vector<data::Scenario>& set, const std::string& prefix) {
  std::vector<EvalClip> clips;
  clips.reserve(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    EvalClip c;
    c.id = prefix + std::to_string(i);
    c.mic = set[i].mic;
    c.far = set[i].far;
    c.target = set[i].target;
    c.delay_samples = set[i].delay;
    clips.push_back(std::move(c));
  }
  return clips;
}

const char* to_string(FarAlignment a) {
  switch (a) {
    case FarAlignment::kOnline: return "online";
    case FarAlignment::kGlobal: return "global";
    case FarAlignment::kOracle: return "oracle";
    default: return "none";
  }
}

FarAlignment parse_far_alignment(const std::string& s) {
  if (s == "none") return FarAlignment::kNone;
  if (s == "online") return FarAlignment::kOnline;
  if (s == "global") return FarAlignment::kGlobal;
  if (s == "oracle") return FarAlignment::kOracle;
  fail(ErrorKind::kConfig, "unknown far-end alignment '" + s + "' (none|online|global|oracle)");
}

dsp::AudioClip align_far(const EvalClip& clip, FarAlignment how, int max_delay) {
  switch (how) {
    case FarAlignment::kOnline: return align::online_align(clip.mic, clip.far, max_delay);
    case FarAlignment::kGlobal: return align::apply_delay(clip.far, align::global_delay(clip.mic, clip.far, max_delay).delay);
    case FarAlignment::kOracle:
      require(clip.delay_samples >= 0, ErrorKind::kConfig, "oracle alignment needs a ground-truth delay for " + clip.id);
      return align::apply_delay(clip.far, clip.delay_samples);
    default: return clip.far;
  }
}

int delay_to_frames(int delay_samples, int hop) {
  return static_cast<int>(std::lround(static_cast<double>(delay_samples) / hop));
}

EvalReport evaluate_model(const std::vector<EvalClip>& clips, const ModelConfig& cfg, const ParamStore& params,
                          const ModelEvalOptions& opts) {
  EvalReport r;
  r.system = opts.name;
  const int hop = cfg.win_len / 2;
  for (const auto& clip : clips) {
    ClipRow row;
    row.id = clip.id;
    if (clip.target && opts.score_erle && data::energy(clip.target->samples) > 0)
      log::warn("not_far_end_single_talk", clip.id + " has near-end speech; ERLE is not meaningful");
    const dsp::AudioClip far = align_far(clip, opts.far, opts.max_delay);
    const auto res = enhance(clip.mic, far, params, cfg, {opts.mode, false});
    if (opts.score_erle) row.erle_db = erle(clip.mic, res.enhanced);
    if (res.delay.probs.size() > 0 && opts.far == FarAlignment::kNone) {
      const int est = opts.mode == AlignMode::kUtterance ? res.delay.argmax() : res.delay.argmax(res.delay.rows() - 1);
      score_delay(row, clip, est, hop, r.skipped);
    }
    r.rows.push_back(std::move(row));
  }
  finish(r);
  return r;
}

const char* to_string(Aligner a) { return a == Aligner::kGlobal ? "global_xcorr" : "online_xcorr"; }

EvalReport delay_recovery_report(const std::vector<EvalClip>& clips, Aligner aligner, int max_delay) {
  EvalReport r;
  r.system = to_string(aligner);
  for (const auto& clip : clips) {
    ClipRow row;
    row.id = clip.id;
    const auto est = aligner == Aligner::kGlobal ? align::global_delay(clip.mic, clip.far, max_delay)
                                                 : align::online_delay(clip.mic, clip.far, max_delay);
    score_delay(row, clip, delay_to_frames(est.delay, dsp::StftConfig().hop()), dsp::StftConfig().hop(), r.skipped);
    r.rows.push_back(std::move(row));
  }
  finish(r);
  return r;
}

Runtime benchmark_runtime(const ModelConfig& cfg, const ParamStore& params, double seconds, std::uint64_t seed) {
  require(seconds > 0, ErrorKind::kConfig, "benchmark duration must be positive");
  const auto n = static_cast<std::size_t>(seconds * dsp::kSampleRate);
  const auto mic = data::speech_surrogate(n, data::child_seed(seed, 1), -20, dsp::kSampleRate);
  const auto far = data::speech_surrogate(n, data::child_seed(seed, 2), -20, dsp::kSampleRate);
  StreamingEnhancer<float> s(cfg, params);
  const int hop = cfg.win_len / 2;
  // Warm-up pass so allocation and cache effects stay out of the timing.
  for (std::size_t i = 0; i + hop <= std::min<std::size_t>(n, 50 * hop); i += hop)
    s.push(std::span(mic).subspan(i, hop), std::span(far).subspan(i, hop));
  s.reset();
  long frames = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i + hop <= n; i += hop) {
    s.push(std::span(mic).subspan(i, hop), std::span(far).subspan(i, hop));
    ++frames;
  }
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  Runtime rt;
  rt.ms_per_frame = frames > 0 ? 1000.0 * elapsed / frames : 0.0;
  rt.real_time_factor = elapsed / seconds;
  return rt;
}

std::string EvalReport::summary_json() const {
  json j = {{"system", system},
            {"clips", rows.size()},
            {"erle_db_mean", erle.mean},
            {"erle_db_ci95", erle.ci95},
            {"delay_success_pm1", delay_scored > 0 ? json(delay_success) : json(nullptr)},
            {"delay_scored", delay_scored},
            {"skipped", skipped}};
  if (runtime) {
    j["ms_per_frame"] = runtime->ms_per_frame;
    j["real_time_factor"] = runtime->real_time_factor;
  }
  return j.dump();
}

std::string EvalReport::to_jsonl() const {
  std::ostringstream os;
  for (const auto& row : rows) {
    json j = {{"system", system},
              {"id", row.id},
              {"erle_db", opt(row.erle_db)},
              {"align_argmax_frames", opt(row.est_delay_frames)},
              {"true_delay_frames", opt(row.true_delay_frames)},
              {"abs_delay_err_frames", opt(row.abs_err_frames)}};
    os << j.dump() << '\n';
  }
  os << summary_json() << '\n';
  return os.str();
}

std::string EvalReport::text_table() const { return comparison_table({*this}); }

std::string comparison_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %6s %18s %14s\n", "system", "clips", "ERLE dB (95% CI)", "delay +-1 fr");
  os << line;
  for (const auto& r : reports) {
    const std::string erle_s =
        r.erle.n > 0 ? fmt("%.2f", r.erle.mean) + " +- " + fmt("%.2f", r.erle.ci95) : std::string("-");
    const std::string delay_s = r.delay_scored > 0 ? fmt("%.1f%%", 100.0 * r.delay_success) : std::string("-");
    std::snprintf(line, sizeof line, "%-28s %6zu %18s %14s\n", r.system.c_str(), r.rows.size(), erle_s.c_str(),
                  delay_s.c_str());
    os << line;
    if (r.runtime) {
      std::snprintf(line, sizeof line, "%-28s %.4f ms/frame, RTF %.4f\n", "", r.runtime->ms_per_frame,
                    r.runtime->real_time_factor);
      os << line;
    }
  }
  return os.str();
}

}  // namespace acrs::eval
