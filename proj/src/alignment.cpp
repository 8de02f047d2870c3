// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/alignment.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "aligncruse/log.hpp"

namespace acrs::align {
namespace {

int next_pow2(std::size_t n) {
  int p = 1;
  while (static_cast<std::size_t>(p) < n) p <<= 1;
  return p;
}

double normalized(double corr, double e1, double e2) {
  const double den = std::sqrt(e1 * e2);
  if (!(den > 1e-300)) return 0.0;
  return std::clamp(corr / den, -1.0, 1.0);
}

}  // namespace

std::vector<double> normalized_xcorr(std::span<const double> mic, std::span<const double> far, int max_delay) {
  require(max_delay >= 0, ErrorKind::kConfig, "max_delay must be non-negative");
  const int n = next_pow2(mic.size() + far.size());
  dsp::RealFft fft(n);
  std::vector<dsp::Complex> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
  std::vector<dsp::Complex> fa(static_cast<std::size_t>(n)), fb(static_cast<std::size_t>(n));
  std::copy(mic.begin(), mic.end(), a.begin());
  std::copy(far.begin(), far.end(), b.begin());
  fft.forward_full(a, fa);
  fft.forward_full(b, fb);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= std::conj(fb[i]);
  fft.inverse_full(fa, a);

  // Prefix energies: mic tail from d, far head of the overlap length.
  const auto lm = static_cast<long>(mic.size()), lf = static_cast<long>(far.size());
  std::vector<double> pm(static_cast<std::size_t>(lm) + 1, 0.0), pf(static_cast<std::size_t>(lf) + 1, 0.0);
  for (long i = 0; i < lm; ++i) pm[static_cast<std::size_t>(i + 1)] = pm[static_cast<std::size_t>(i)] + mic[static_cast<std::size_t>(i)] * mic[static_cast<std::size_t>(i)];
  for (long i = 0; i < lf; ++i) pf[static_cast<std::size_t>(i + 1)] = pf[static_cast<std::size_t>(i)] + far[static_cast<std::size_t>(i)] * far[static_cast<std::size_t>(i)];
  std::vector<double> out(static_cast<std::size_t>(max_delay) + 1, 0.0);
  for (int d = 0; d <= max_delay; ++d) {
    if (d >= lm) break;
    const long overlap = std::min(lf, lm - d);
    if (overlap <= 0) break;
    const double em = pm[static_cast<std::size_t>(d + overlap)] - pm[static_cast<std::size_t>(d)];
    const double ef = pf[static_cast<std::size_t>(overlap)];
    out[static_cast<std::size_t>(d)] = normalized(a[static_cast<std::size_t>(d)].real(), em, ef);
  }
  return out;
}

DelayEstimate global_delay(const dsp::AudioClip& mic, const dsp::AudioClip& far, int max_delay) {
  require(max_delay >= 0 && max_delay <= 16000, ErrorKind::kConfig, "max_delay must lie in [0, 16000] samples");
  require(mic.sample_rate == far.sample_rate, ErrorKind::kConfig, "sample-rate mismatch");
  require(mic.size() >= static_cast<std::size_t>(mic.sample_rate) && far.size() >= static_cast<std::size_t>(far.sample_rate),
          ErrorKind::kShape, "global_delay needs at least one second of audio");
  const bool silent = std::all_of(far.samples.begin(), far.samples.end(), [](double v) { return v == 0.0; });
  require(!silent, ErrorKind::kNoSignal, "far end is silent");
  const auto c = normalized_xcorr(mic.samples, far.samples, max_delay);
  DelayEstimate est;
  est.delay = 0;
  est.confidence = c[0];
  for (int d = 1; d <= max_delay; ++d)
    if (c[static_cast<std::size_t>(d)] > est.confidence) {
      est.confidence = c[static_cast<std::size_t>(d)];
      est.delay = d;
    }
  return est;
}

OnlineDelayEstimator::OnlineDelayEstimator(int max_delay, const OnlineOptions& opts)
    : max_delay_(max_delay), opts_(opts) {
  require(max_delay >= 0, ErrorKind::kConfig, "max_delay must be non-negative");
  require(opts.hop > 0 && opts.window >= opts.hop && opts.hysteresis >= 0 && opts.confidence_decay >= 0 &&
              opts.confidence_decay <= 1,
          ErrorKind::kConfig, "invalid online aligner options");
  blocks_ = opts.window / opts.hop;
  reset();
}

void OnlineDelayEstimator::reset() {
  far_hist_.assign(static_cast<std::size_t>(max_delay_ + opts_.hop), 0.0);
  mic_buf_.assign(static_cast<std::size_t>(opts_.hop), 0.0);
  corr_ring_.clear();
  energy_ring_.clear();
  mic_energy_ring_.clear();
  far_energy_ring_.clear();
  corr_sum_.assign(static_cast<std::size_t>(max_delay_) + 1, 0.0);
  energy_sum_.assign(static_cast<std::size_t>(max_delay_) + 1, 0.0);
  mic_energy_ = far_energy_ = 0.0;
  samples_ = frames_ = 0;
  held_ = 0;
  confidence_ = 0.0;
}

void OnlineDelayEstimator::recompute_sums() {
  std::fill(corr_sum_.begin(), corr_sum_.end(), 0.0);
  std::fill(energy_sum_.begin(), energy_sum_.end(), 0.0);
  mic_energy_ = far_energy_ = 0.0;
  for (std::size_t b = 0; b < corr_ring_.size(); ++b) {
    for (std::size_t d = 0; d < corr_sum_.size(); ++d) {
      corr_sum_[d] += corr_ring_[b][d];
      energy_sum_[d] += energy_ring_[b][d];
    }
    mic_energy_ += mic_energy_ring_[b];
    far_energy_ += far_energy_ring_[b];
  }
}

DelayEstimate OnlineDelayEstimator::push(std::span<const double> mic_hop, std::span<const double> far_hop) {
  const int hop = opts_.hop;
  require(static_cast<int>(mic_hop.size()) == hop && static_cast<int>(far_hop.size()) == hop, ErrorKind::kShape,
          "online aligner expects exactly one hop of samples per call");
  // Slide the far history by one hop.
  std::copy(far_hist_.begin() + hop, far_hist_.end(), far_hist_.begin());
  std::copy(far_hop.begin(), far_hop.end(), far_hist_.end() - hop);

  const auto len = static_cast<Eigen::Index>(hop);
  std::copy(mic_hop.begin(), mic_hop.end(), mic_buf_.begin());
  Eigen::Map<const Eigen::VectorXd> m(mic_buf_.data(), len);
  std::vector<double> corr(static_cast<std::size_t>(max_delay_) + 1), energy(corr.size());
  const auto base = static_cast<Eigen::Index>(far_hist_.size()) - len;
  for (int d = 0; d <= max_delay_; ++d) {
    Eigen::Map<const Eigen::VectorXd> f(far_hist_.data() + base - d, len);
    corr[static_cast<std::size_t>(d)] = m.dot(f);
    energy[static_cast<std::size_t>(d)] = f.squaredNorm();
  }
  const double me = m.squaredNorm();
  const double fe = energy[0];
  for (std::size_t d = 0; d < corr.size(); ++d) {
    corr_sum_[d] += corr[d];
    energy_sum_[d] += energy[d];
  }
  mic_energy_ += me;
  far_energy_ += fe;
  corr_ring_.push_back(std::move(corr));
  energy_ring_.push_back(std::move(energy));
  mic_energy_ring_.push_back(me);
  far_energy_ring_.push_back(fe);
  if (static_cast<int>(corr_ring_.size()) > blocks_) {
    const auto& oc = corr_ring_.front();
    const auto& oe = energy_ring_.front();
    for (std::size_t d = 0; d < corr_sum_.size(); ++d) {
      corr_sum_[d] -= oc[d];
      energy_sum_[d] -= oe[d];
    }
    mic_energy_ -= mic_energy_ring_.front();
    far_energy_ -= far_energy_ring_.front();
    corr_ring_.pop_front();
    energy_ring_.pop_front();
    mic_energy_ring_.pop_front();
    far_energy_ring_.pop_front();
  }
  samples_ += hop;
  if (++frames_ % blocks_ == 0) recompute_sums();

  DelayEstimate est;
  if (samples_ < opts_.warmup) {
    est.delay = held_;
    est.confidence = 0.0;
    est.warming_up = true;
    return est;
  }
  const double window_len = static_cast<double>(corr_ring_.size()) * hop;
  const bool silent = std::sqrt(std::max(far_energy_, 0.0) / window_len) < opts_.silence_rms ||
                      std::sqrt(std::max(mic_energy_, 0.0) / window_len) < opts_.silence_rms;
  if (silent) {
    confidence_ *= opts_.confidence_decay;
  } else {
    int best = 0;
    double best_c = -2.0;
    for (int d = 0; d <= max_delay_; ++d) {
      const double c = normalized(corr_sum_[static_cast<std::size_t>(d)], mic_energy_, energy_sum_[static_cast<std::size_t>(d)]);
      if (c > best_c) {
        best_c = c;
        best = d;
      }
    }
    const double held_c = normalized(corr_sum_[static_cast<std::size_t>(held_)], mic_energy_,
                                     energy_sum_[static_cast<std::size_t>(held_)]);
    if (best_c > held_c + opts_.hysteresis) {
      held_ = best;
      confidence_ = best_c;
    } else {
      confidence_ = held_c;
    }
  }
  est.delay = held_;
  est.confidence = confidence_;
  return est;
}

DelayEstimate online_delay(const dsp::AudioClip& mic, const dsp::AudioClip& far, int max_delay,
                           const OnlineOptions& opts) {
  require(mic.sample_rate == far.sample_rate, ErrorKind::kConfig, "sample-rate mismatch");
  OnlineDelayEstimator est(max_delay, opts);
  DelayEstimate last;
  std::vector<double> m(static_cast<std::size_t>(opts.hop)), f(m.size());
  std::vector<int> track;
  for (std::size_t start = 0; start + m.size() <= mic.size(); start += m.size()) {
    for (std::size_t i = 0; i < m.size(); ++i) {
      m[i] = mic.samples[start + i];
      f[i] = start + i < far.size() ? far.samples[start + i] : 0.0;
    }
    last = est.push(m, f);
    track.push_back(last.delay);
  }
  last.per_frame = std::move(track);
  return last;
}

dsp::AudioClip online_align(const dsp::AudioClip& mic, const dsp::AudioClip& far, int max_delay,
                            const OnlineOptions& opts) {
  const DelayEstimate est = online_delay(mic, far, max_delay, opts);
  dsp::AudioClip out(std::vector<double>(mic.size(), 0.0), mic.sample_rate);
  const auto hop = static_cast<std::size_t>(opts.hop);
  int d = 0;
  for (std::size_t n = 0; n < out.size(); ++n) {
    // Hop k is re-timed with the estimate available once it has arrived.
    const std::size_t k = n / hop;
    if (k < est.per_frame.size()) d = est.per_frame[k];
    const long src = static_cast<long>(n) - d;
    if (src >= 0 && static_cast<std::size_t>(src) < far.size()) out.samples[n] = far.samples[static_cast<std::size_t>(src)];
  }
  return out;
}

dsp::AudioClip apply_delay(const dsp::AudioClip& x, int delay) {
  require(delay >= 0, ErrorKind::kConfig, "delay must be non-negative");
  dsp::AudioClip out(std::vector<double>(x.size(), 0.0), x.sample_rate);
  if (static_cast<std::size_t>(delay) > x.size()) {
    log::warn("delay_exceeds_length", "delay " + std::to_string(delay) + " exceeds clip length; output is silent");
    return out;
  }
  std::copy(x.samples.begin(), x.samples.end() - delay, out.samples.begin() + delay);
  return out;
}

}  // namespace acrs::align
