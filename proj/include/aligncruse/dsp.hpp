// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <complex>
#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "aligncruse/tensor.hpp"

namespace acrs::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr double kLogPowerFloor = 1e-12;

using Complex = std::complex<double>;
using ComplexMatrix = Eigen::Matrix<Complex, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AudioClip {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  AudioClip() = default;
  explicit AudioClip(std::vector<double> s, int rate = kSampleRate)
      : samples(std::move(s)), sample_rate(rate) {}

  std::size_t size() const { return samples.size(); }
};

// Periodic square-root Hann window; squared copies at 50% overlap sum to one.
std::vector<double> make_sqrt_hann(int win_len);

class StftConfig {
 public:
  explicit StftConfig(int win_len = 320, int sample_rate = kSampleRate);

  int sample_rate() const { return sample_rate_; }
  int win_len() const { return win_len_; }
  int hop() const { return hop_; }
  int fft_len() const { return fft_len_; }
  int num_bins() const { return fft_len_ / 2 + 1; }
  const std::vector<double>& window() const { return window_; }

  /// Frames for a clip of `len` samples (no padding); zero when len < win_len.
  int num_frames(std::size_t len) const;
  /// Samples produced by overlap-add of `frames` frames.
  std::size_t synthesis_length(int frames) const;

 private:
  int sample_rate_;
  int win_len_;
  int hop_;
  int fft_len_;
  std::vector<double> window_;
};

struct SpectralFrames {
  ComplexMatrix data;  // frames x bins
  int win_len = 320;
  int hop = 160;

  int frames() const { return static_cast<int>(data.rows()); }
  int bins() const { return static_cast<int>(data.cols()); }
};

/// Real-input transform of fixed length. Forward is unnormalized, inverse
/// carries the 1/n factor.
class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(RealFft&&) noexcept;
  RealFft& operator=(RealFft&&) noexcept;

  int size() const { return n_; }
  // First n/2+1 bins of the transform of `in` (length n).
  void forward(std::span<const double> in, std::span<Complex> half) const;
  // Real signal whose spectrum is the conjugate-symmetric extension of `half`.
  // Imaginary parts of the DC and Nyquist bins are ignored.
  void inverse(std::span<const Complex> half, std::span<double> out) const;
  // Full complex transforms, used for correlation.
  void forward_full(std::span<const Complex> in, std::span<Complex> out) const;
  void inverse_full(std::span<const Complex> in, std::span<Complex> out) const;

 private:
  struct Impl;
  int n_;
  std::unique_ptr<Impl> impl_;
};

SpectralFrames stft(const AudioClip& clip, const StftConfig& cfg);
AudioClip istft(const SpectralFrames& frames, const StftConfig& cfg);

/// ln(|X|^2 + 1e-12) as a (1, frames, bins) tensor.
Tensor log_power(const SpectralFrames& frames);

/// Incremental analysis: feed samples, get complete frames as they fill.
class StreamingAnalyzer {
 public:
  explicit StreamingAnalyzer(const StftConfig& cfg);
  // Appends samples; returns spectra of every frame completed by them.
  std::vector<std::vector<Complex>> push(std::span<const double> samples);
  void reset();

 private:
  StftConfig cfg_;
  RealFft fft_;
  std::vector<double> backlog_;
  std::vector<double> frame_;
};

/// Incremental overlap-add synthesis. Each frame finalizes `hop` samples.
class StreamingSynthesizer {
 public:
  explicit StreamingSynthesizer(const StftConfig& cfg);
  std::vector<double> push(std::span<const Complex> spectrum);
  // Remaining overlap tail (win_len - hop samples).
  std::vector<double> flush();
  void reset();

 private:
  StftConfig cfg_;
  RealFft fft_;
  std::vector<double> overlap_;
  std::vector<double> frame_;
};

}  // namespace acrs::dsp
