// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <deque>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "aligncruse/dsp.hpp"
#include "aligncruse/model.hpp"

namespace acrs {

/// Frame-by-frame inference with batch norm folded into the convolutions.
/// Equivalent to the graph forward in causal align mode with frozen
/// statistics. The parameter set is copied, so one store can feed many
/// independent streams.
template <typename Scalar>
class StreamingModel {
 public:
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  StreamingModel(const ModelConfig& cfg, const ParamStore& params);
  ~StreamingModel();
  StreamingModel(StreamingModel&&) noexcept;
  StreamingModel& operator=(StreamingModel&&) noexcept;

  // One frame of log-power features in, mask out (all of length bins()).
  // `delay` receives the frame's delay distribution when non-null and the
  // model has an align block.
  void step(std::span<const Scalar> mic_feat, std::span<const Scalar> far_feat, std::span<Scalar> mask,
            std::vector<double>* delay = nullptr);
  void reset();

  int bins() const;
  long frames() const;
  const ModelConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Sample-domain streaming: arbitrary chunks of mic and far-end audio in,
/// enhanced audio out, one hop per completed frame. Algorithmic latency is
/// one window (20 ms at the default configuration).
template <typename Scalar>
class StreamingEnhancer {
 public:
  StreamingEnhancer(const ModelConfig& cfg, const ParamStore& params, bool identity_mask = false);

  std::vector<double> push(std::span<const double> mic, std::span<const double> far);
  // Overlap tail, padded or trimmed so the total output matches the mic input length.
  std::vector<double> flush();
  void reset();

  // Argmax of each processed frame's delay distribution (empty for CRUSE).
  const std::vector<int>& delay_track() const { return delay_track_; }
  // Moves the track out, leaving it empty, so long streams stay bounded.
  std::vector<int> take_delay_track() { return std::exchange(delay_track_, {}); }
  int latency_samples() const { return stft_.win_len(); }

 private:
  std::vector<double> process_ready();

  dsp::StftConfig stft_;
  StreamingModel<Scalar> model_;
  dsp::StreamingAnalyzer mic_ana_;
  dsp::StreamingAnalyzer far_ana_;
  dsp::StreamingSynthesizer synth_;
  std::deque<std::vector<dsp::Complex>> mic_q_;
  std::deque<std::vector<dsp::Complex>> far_q_;
  std::vector<Scalar> mic_feat_, far_feat_, mask_;
  std::vector<double> delay_;
  std::vector<int> delay_track_;
  bool identity_mask_;
  std::size_t mic_in_ = 0;
  std::size_t emitted_ = 0;
};

extern template class StreamingModel<float>;
extern template class StreamingModel<double>;
extern template class StreamingEnhancer<float>;
extern template class StreamingEnhancer<double>;

}  // namespace acrs
