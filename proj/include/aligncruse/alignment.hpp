// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <deque>
#include <span>
#include <vector>

#include "aligncruse/dsp.hpp"

// Cross-correlation delay estimators for aligning the far end to the mic.
namespace acrs::align {

struct DelayEstimate {
  int delay = 0;            // samples, far end lags the mic by this much
  double confidence = 0.0;  // normalized correlation at `delay`
  bool warming_up = false;
  std::vector<int> per_frame;  // online mode: estimate after every hop
};

// Normalized cross-correlation between mic[n] and far[n - d] over the
// overlap, for d in [0, max_delay]. Computed with FFTs.
std::vector<double> normalized_xcorr(std::span<const double> mic, std::span<const double> far, int max_delay);

// Whole-clip estimate; ties go to the smaller delay.
DelayEstimate global_delay(const dsp::AudioClip& mic, const dsp::AudioClip& far, int max_delay);

struct OnlineOptions {
  int hop = 160;
  int window = 32000;         // trailing correlation window, samples
  int warmup = 16000;         // samples before the first estimate
  double hysteresis = 0.05;
  double silence_rms = 1e-4;  // far-end window RMS below this holds the estimate
  double confidence_decay = 0.95;
};

/// Frame-rate estimator over past samples only.
class OnlineDelayEstimator {
 public:
  OnlineDelayEstimator(int max_delay, const OnlineOptions& opts = {});

  // One hop of mic and far-end samples (exactly opts.hop each).
  DelayEstimate push(std::span<const double> mic_hop, std::span<const double> far_hop);
  void reset();
  int max_delay() const { return max_delay_; }

 private:
  void recompute_sums();

  int max_delay_;
  OnlineOptions opts_;
  int blocks_;  // window length in hops
  AlignedVector<double> far_hist_;  // last max_delay + hop far samples, oldest first
  AlignedVector<double> mic_buf_;
  std::deque<std::vector<double>> corr_ring_, energy_ring_;
  std::deque<double> mic_energy_ring_, far_energy_ring_;
  std::vector<double> corr_sum_, energy_sum_;
  double mic_energy_ = 0.0, far_energy_ = 0.0;
  long samples_ = 0;
  long frames_ = 0;
  int held_ = 0;
  double confidence_ = 0.0;
};

// Runs the online estimator over a clip; per_frame holds every hop's estimate.
DelayEstimate online_delay(const dsp::AudioClip& mic, const dsp::AudioClip& far, int max_delay,
                           const OnlineOptions& opts = {});

// Far end re-timed hop by hop with the online estimates (no look-ahead).
dsp::AudioClip online_align(const dsp::AudioClip& mic, const dsp::AudioClip& far, int max_delay,
                            const OnlineOptions& opts = {});

// Zero prefix of `delay` samples, tail cropped so the length is unchanged.
dsp::AudioClip apply_delay(const dsp::AudioClip& x, int delay);

}  // namespace acrs::align
