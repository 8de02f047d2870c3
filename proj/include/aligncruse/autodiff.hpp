// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <functional>
#include <vector>

#include "aligncruse/dsp.hpp"
#include "aligncruse/tensor.hpp"

// Reverse-mode differentiation over a tape of coarse-grained ops. Every op
// here is exactly one layer of the network (or one stage of the loss), with a
// hand-written backward pass.
namespace acrs::ad {

class Graph;

class Var {
 public:
  Var() = default;

  bool valid() const { return graph_ != nullptr; }
  int id() const { return id_; }
  Graph* graph() const { return graph_; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Graph;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, Var self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);
  // Leaf whose gradient is added into `*grad_sink` when backward() finishes.
  Var parameter(const Tensor& value, Tensor* grad_sink);

  const Tensor& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].value; }
  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }
  // Gradient of the last backward() root with respect to `v` (zeros if unused).
  const Tensor& grad(Var v);

  // Root must hold exactly one element. A graph can be differentiated once;
  // call reset() before recording the next step.
  void backward(Var loss);
  void reset();
  std::size_t size() const { return nodes_.size(); }

  // --- op authoring ---
  // Records an op output. Non-finite values raise ErrorKind::kNumeric.
  Var record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn);
  // Gradient buffer of `v` during backward, or nullptr if it needs none.
  Tensor* grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Tensor* sink = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool differentiated_ = false;
};

inline const Tensor& Var::value() const { return graph_->value(*this); }

// ---------------------------------------------------------------- geometry

struct ConvGeometry {
  int stride_f = 1;
  int pad_f_lo = 1;
  int pad_f_hi = 1;
};
int conv_out_bins(int bins, int kernel_f, const ConvGeometry& geo);

struct TransposeGeometry {
  int stride_f = 1;
  int crop_f_lo = 1;
  int crop_f_hi = 1;

  // Symmetric-padding convention: output (f-1)*s - 2 + k + out_pad.
  static TransposeGeometry with_output_padding(int stride_f, int out_pad) {
    return {stride_f, 1, 1 - out_pad};
  }
};
int transpose_out_bins(int bins, int kernel_f, const TransposeGeometry& geo);

// ---------------------------------------------------------------- layers

// x (N, Ci, T, F), w (Co, Ci, Kt, Kf), b (Co). Time is padded with Kt-1 zero
// frames on the past side only, so output frame t sees input frames <= t.
Var conv2d_causal(Var x, Var w, Var b, const ConvGeometry& geo);

// x (N, Ci, T, F), w (Ci, Co, 1, Kf), b (Co). Frequency-only transposed
// convolution; the adjoint of conv2d_causal with Kt = 1 and matching geometry.
Var conv2d_transpose(Var x, Var w, Var b, const TransposeGeometry& geo);

struct BatchStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased
};
inline constexpr double kBatchNormEps = 1e-5;

// Normalizes each channel over (N, T, F) with batch statistics.
Var batch_norm_train(Var x, Var gamma, Var beta, BatchStats* stats = nullptr);
// Uses frozen statistics only.
Var batch_norm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean,
                     const Tensor& running_var);

Var elu(Var x);
Var sigmoid(Var x);
Var tanh(Var x);
Var softmax_lastdim(Var x);

// Non-overlapping max over frequency windows of `k`; remainder bins dropped.
Var max_pool_freq(Var x, int k);

// Affine map over the last dimension: y = x W^T + b; w (out, in).
Var linear(Var x, Var w, Var b);

// (N, C, T, F) <-> (N, T, C*F), channel-major within a frame.
Var flatten_cf(Var x);
Var unflatten_cf(Var x, int channels);

Var concat_channels(Var a, Var b);
Var add(Var a, Var b);
Var mul(Var a, Var b);
// x times a one-element tensor.
Var scale(Var x, Var s);

struct GruWeights {
  Var w_ih;  // (3h, n), gate order r, z, n
  Var w_hh;  // (3h, h)
  Var bias;  // (3h)
};
// x (N, T, n) -> (N, T, h). h0 is (N, h) or empty for zeros; the final
// hidden state is written to `h_last` when non-null.
Var gru(Var x, const GruWeights& weights, const Tensor& h0 = {}, Tensor* h_last = nullptr);

// --------------------------------------------------------------- alignment

// score[n, d] = sum_t q[n, t] . k[n, t - d], terms with t - d < 0 vanish.
// q, k are (N, T, p); result (N, d_max).
Var delay_scores(Var q, Var k, int d_max);
// Running form: score[n, t, d] = decay * score[n, t-1, d] + q[n, t] . k[n, t-d].
Var causal_delay_scores(Var q, Var k, int d_max, double decay);
// y[n, :, t, :] = sum_d D[n, d] x[n, :, t - d, :] with D (N, d_max).
Var soft_shift(Var x, Var weights);
// Per-frame weights D (N, T, d_max): y[n, :, t, :] = sum_d D[n, t, d] x[n, :, t-d, :].
Var soft_shift_causal(Var x, Var weights);

// ---------------------------------------------------------------- spectra

// mask (N, 1, T, F) times a fixed complex spectrum stored as (N, 2, T, F).
Var mask_spectrum(Var mask, const Tensor& spectrum);
// (N, 2, T, F) spectrum -> (N, L) waveform by overlap-add.
Var istft(Var spectrum, const dsp::StftConfig& cfg);
// (N, L) waveform -> (N, 2, T, F).
Var stft(Var signal, const dsp::StftConfig& cfg);

struct CompressedMseConfig {
  double compression = 0.3;
  double blend = 0.7;  // weight of the complex term
  double eps = 1e-12;
};
// Mean over (N, T, F) of blend*|Sc - Ec|^2 + (1-blend)*(|S|^c - |E|^c)^2,
// where Xc = X |X|^(c-1). Reference is fixed. Returns a one-element tensor.
Var compressed_mse(Var estimate, const Tensor& reference, const CompressedMseConfig& cfg);

// ---------------------------------------------------------------- helpers

Var sum(Var x);
// sum(x * weights) with fixed weights; the usual probe for gradient checks.
Var weighted_sum(Var x, const Tensor& weights);

// Conversions between dsp spectra and (N, 2, T, F) tensors.
Tensor spectrum_tensor(const std::vector<dsp::SpectralFrames>& frames);
dsp::SpectralFrames spectrum_frames(const Tensor& spectrum, int n, const dsp::StftConfig& cfg);

}  // namespace acrs::ad
