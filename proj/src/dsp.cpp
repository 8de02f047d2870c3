// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/dsp.hpp"

#include <cmath>
#include <numbers>

#include <unsupported/Eigen/FFT>

namespace acrs::dsp {

std::vector<double> make_sqrt_hann(int win_len) {
  require(win_len >= 2 && win_len % 2 == 0, ErrorKind::kConfig,
          "window length must be even and >= 2, got " + std::to_string(win_len));
  std::vector<double> w(static_cast<std::size_t>(win_len));
  for (int i = 0; i < win_len; ++i) {
    double hann = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win_len);
    w[static_cast<std::size_t>(i)] = std::sqrt(std::max(hann, 0.0));
  }
  return w;
}

StftConfig::StftConfig(int win_len, int sample_rate)
    : sample_rate_(sample_rate),
      win_len_(win_len),
      hop_(win_len / 2),
      fft_len_(win_len),
      window_(make_sqrt_hann(win_len)) {
  require(sample_rate > 0, ErrorKind::kConfig, "sample rate must be positive");
}

int StftConfig::num_frames(std::size_t len) const {
  if (len < static_cast<std::size_t>(win_len_)) return 0;
  return static_cast<int>((len - static_cast<std::size_t>(win_len_)) / static_cast<std::size_t>(hop_)) + 1;
}

std::size_t StftConfig::synthesis_length(int frames) const {
  if (frames <= 0) return 0;
  return static_cast<std::size_t>(frames - 1) * static_cast<std::size_t>(hop_) +
         static_cast<std::size_t>(win_len_);
}

struct RealFft::Impl {
  mutable Eigen::FFT<double> fft;
  mutable std::vector<Complex> full_in;
  mutable std::vector<Complex> full_out;
};

RealFft::RealFft(int n) : n_(n), impl_(std::make_unique<Impl>()) {
  require(n > 0, ErrorKind::kConfig, "fft length must be positive");
  impl_->full_in.resize(static_cast<std::size_t>(n));
  impl_->full_out.resize(static_cast<std::size_t>(n));
}
RealFft::~RealFft() = default;
RealFft::RealFft(RealFft&&) noexcept = default;
RealFft& RealFft::operator=(RealFft&&) noexcept = default;

void RealFft::forward(std::span<const double> in, std::span<Complex> half) const {
  auto& buf = impl_->full_in;
  for (int i = 0; i < n_; ++i) buf[static_cast<std::size_t>(i)] = Complex(in[static_cast<std::size_t>(i)], 0.0);
  impl_->fft.fwd(impl_->full_out.data(), buf.data(), n_);
  for (int k = 0; k <= n_ / 2; ++k) half[static_cast<std::size_t>(k)] = impl_->full_out[static_cast<std::size_t>(k)];
}

void RealFft::inverse(std::span<const Complex> half, std::span<double> out) const {
  auto& buf = impl_->full_in;
  const int nyq = n_ / 2;
  buf[0] = Complex(half[0].real(), 0.0);
  for (int k = 1; k < (n_ + 1) / 2; ++k) {
    buf[static_cast<std::size_t>(k)] = half[static_cast<std::size_t>(k)];
    buf[static_cast<std::size_t>(n_ - k)] = std::conj(half[static_cast<std::size_t>(k)]);
  }
  if (n_ % 2 == 0) buf[static_cast<std::size_t>(nyq)] = Complex(half[static_cast<std::size_t>(nyq)].real(), 0.0);
  impl_->fft.inv(impl_->full_out.data(), buf.data(), n_);
  for (int i = 0; i < n_; ++i) out[static_cast<std::size_t>(i)] = impl_->full_out[static_cast<std::size_t>(i)].real();
}

void RealFft::forward_full(std::span<const Complex> in, std::span<Complex> out) const {
  impl_->fft.fwd(out.data(), in.data(), n_);
}

void RealFft::inverse_full(std::span<const Complex> in, std::span<Complex> out) const {
  impl_->fft.inv(out.data(), in.data(), n_);
}

SpectralFrames stft(const AudioClip& clip, const StftConfig& cfg) {
  const int frames = cfg.num_frames(clip.size());
  require(frames > 0, ErrorKind::kShape,
          "clip of " + std::to_string(clip.size()) + " samples is shorter than one window");
  const int win = cfg.win_len();
  const auto& w = cfg.window();
  RealFft fft(cfg.fft_len());
  SpectralFrames out;
  out.win_len = win;
  out.hop = cfg.hop();
  out.data.resize(frames, cfg.num_bins());
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_len()), 0.0);
  std::vector<Complex> spec(static_cast<std::size_t>(cfg.num_bins()));
  for (int t = 0; t < frames; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(cfg.hop());
    for (int i = 0; i < win; ++i)
      buf[static_cast<std::size_t>(i)] = clip.samples[start + static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
    fft.forward(buf, spec);
    for (int k = 0; k < cfg.num_bins(); ++k) out.data(t, k) = spec[static_cast<std::size_t>(k)];
  }
  return out;
}

AudioClip istft(const SpectralFrames& frames, const StftConfig& cfg) {
  require(frames.bins() == cfg.num_bins(), ErrorKind::kShape,
          "spectrum has " + std::to_string(frames.bins()) + " bins, config expects " +
              std::to_string(cfg.num_bins()));
  AudioClip out(std::vector<double>(cfg.synthesis_length(frames.frames()), 0.0), cfg.sample_rate());
  RealFft fft(cfg.fft_len());
  std::vector<Complex> spec(static_cast<std::size_t>(cfg.num_bins()));
  std::vector<double> buf(static_cast<std::size_t>(cfg.fft_len()));
  const auto& w = cfg.window();
  for (int t = 0; t < frames.frames(); ++t) {
    for (int k = 0; k < cfg.num_bins(); ++k) spec[static_cast<std::size_t>(k)] = frames.data(t, k);
    fft.inverse(spec, buf);
    const std::size_t start = static_cast<std::size_t>(t) * static_cast<std::size_t>(cfg.hop());
    for (int i = 0; i < cfg.win_len(); ++i)
      out.samples[start + static_cast<std::size_t>(i)] += buf[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
  }
  return out;
}

Tensor log_power(const SpectralFrames& frames) {
  Tensor out({1, frames.frames(), frames.bins()});
  Index i = 0;
  for (int t = 0; t < frames.frames(); ++t)
    for (int k = 0; k < frames.bins(); ++k) out[i++] = std::log(std::norm(frames.data(t, k)) + kLogPowerFloor);
  return out;
}

StreamingAnalyzer::StreamingAnalyzer(const StftConfig& cfg)
    : cfg_(cfg), fft_(cfg.fft_len()), frame_(static_cast<std::size_t>(cfg.fft_len()), 0.0) {}

std::vector<std::vector<Complex>> StreamingAnalyzer::push(std::span<const double> samples) {
  std::vector<std::vector<Complex>> out;
  const auto win = static_cast<std::size_t>(cfg_.win_len());
  const auto hop = static_cast<std::size_t>(cfg_.hop());
  const auto& w = cfg_.window();
  for (double s : samples) {
    backlog_.push_back(s);
    if (backlog_.size() == win) {
      for (std::size_t i = 0; i < win; ++i) frame_[i] = backlog_[i] * w[i];
      std::vector<Complex> spec(static_cast<std::size_t>(cfg_.num_bins()));
      fft_.forward(frame_, spec);
      out.push_back(std::move(spec));
      backlog_.erase(backlog_.begin(), backlog_.begin() + static_cast<std::ptrdiff_t>(hop));
    }
  }
  return out;
}

void StreamingAnalyzer::reset() { backlog_.clear(); }

StreamingSynthesizer::StreamingSynthesizer(const StftConfig& cfg)
    : cfg_(cfg),
      fft_(cfg.fft_len()),
      overlap_(static_cast<std::size_t>(cfg.win_len()), 0.0),
      frame_(static_cast<std::size_t>(cfg.fft_len()), 0.0) {}

std::vector<double> StreamingSynthesizer::push(std::span<const Complex> spectrum) {
  require(static_cast<int>(spectrum.size()) == cfg_.num_bins(), ErrorKind::kShape,
          "synthesis frame has wrong bin count");
  fft_.inverse(spectrum, frame_);
  const auto win = static_cast<std::size_t>(cfg_.win_len());
  const auto hop = static_cast<std::size_t>(cfg_.hop());
  const auto& w = cfg_.window();
  for (std::size_t i = 0; i < win; ++i) overlap_[i] += frame_[i] * w[i];
  std::vector<double> out(overlap_.begin(), overlap_.begin() + static_cast<std::ptrdiff_t>(hop));
  std::copy(overlap_.begin() + static_cast<std::ptrdiff_t>(hop), overlap_.end(), overlap_.begin());
  std::fill(overlap_.end() - static_cast<std::ptrdiff_t>(hop), overlap_.end(), 0.0);
  return out;
}

std::vector<double> StreamingSynthesizer::flush() {
  const auto win = static_cast<std::size_t>(cfg_.win_len());
  const auto hop = static_cast<std::size_t>(cfg_.hop());
  std::vector<double> out(overlap_.begin(), overlap_.begin() + static_cast<std::ptrdiff_t>(win - hop));
  std::fill(overlap_.begin(), overlap_.end(), 0.0);
  return out;
}

void StreamingSynthesizer::reset() { std::fill(overlap_.begin(), overlap_.end(), 0.0); }

}  // namespace acrs::dsp
