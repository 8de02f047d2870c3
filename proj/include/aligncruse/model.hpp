// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aligncruse/autodiff.hpp"
#include "aligncruse/dsp.hpp"

namespace acrs {

enum class Variant { kAlignCruse, kCruse };
enum class AlignMode { kUtterance, kCausal };

const char* to_string(Variant v);
const char* to_string(AlignMode m);
Variant parse_variant(const std::string& s);
AlignMode parse_align_mode(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::kAlignCruse;
  // Encoder depths. The first two run on the mic branch before alignment, the
  // rest on the concatenation of mic and aligned far-end maps.
  std::vector<int> mic_channels = {16, 40, 72, 32};
  std::vector<int> far_channels = {8, 24};
  std::vector<int> dec_channels = {32, 48, 48};
  int conv_kt = 4;
  int conv_kf = 3;
  int stride_f = 2;
  // Frequency padding of every encoder conv. (0, 1) halves 161 bins to 80.
  int pad_f_lo = 0;
  int pad_f_hi = 1;
  int dec_kf = 3;
  int align_pool = 4;
  int proj = 16;
  int d_max = 100;
  double align_decay = 0.99;
  // Scale of the uniform init bound of the Q/K projections.
  double align_init_scale = 1.0;
  double init_gain = 1.0;
  int win_len = 320;

  static ModelConfig preset(const std::string& name);

  void validate() const;
  int bins() const { return win_len / 2 + 1; }
  // Bins after encoder stage i (0-based).
  int enc_bins(int stage) const;
  int bottleneck_bins() const { return enc_bins(static_cast<int>(mic_channels.size()) - 1); }
  int gru_hidden() const { return mic_channels.back() * bottleneck_bins(); }
  int align_bins() const { return enc_bins(static_cast<int>(far_channels.size()) - 1) / align_pool; }

  // Flat key=value form, used for the parameter-file metadata record.
  std::map<std::string, std::string> to_map() const;
  static ModelConfig from_map(const std::map<std::string, std::string>& kv);
  // Applies one key=value override; unknown keys raise kConfig.
  void set(const std::string& key, const std::string& value);
  bool operator==(const ModelConfig&) const = default;
};

/// Named parameters plus non-learned buffers (batch-norm running statistics).
class ParamStore {
 public:
  std::map<std::string, Tensor>& params() { return params_; }
  const std::map<std::string, Tensor>& params() const { return params_; }
  std::map<std::string, Tensor>& buffers() { return buffers_; }
  const std::map<std::string, Tensor>& buffers() const { return buffers_; }

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);
  const Tensor& buffer(const std::string& name) const;
  Tensor& buffer(const std::string& name);
  bool has_param(const std::string& name) const { return params_.count(name) != 0; }

  Index num_params() const;
  // Gradient tensors shaped like every parameter, zero-filled.
  std::map<std::string, Tensor> zeros_like() const;

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> buffers_;
};

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);
// Checks names and shapes against a freshly built layout; raises kShape.
void validate_params(const ParamStore& store, const ModelConfig& cfg);
Index count_params(const ModelConfig& cfg);

/// Per-utterance (d) or per-frame (t, d) probabilities over integer delays.
struct DelayDistribution {
  Tensor probs;
  AlignMode mode = AlignMode::kUtterance;

  int d_max() const { return probs.dim(-1); }
  int rows() const { return mode == AlignMode::kUtterance ? 1 : probs.dim(0); }
  int argmax(int row = 0) const;
  // Argmax of the distribution summed over rows.
  int mean_argmax() const;
};

// --------------------------------------------------------------- graph forward

/// Parameters as graph leaves. When `grads` is given, gradients land there.
struct BoundParams {
  std::map<std::string, ad::Var> vars;
  const ParamStore* store = nullptr;

  ad::Var operator[](const std::string& name) const;
};
BoundParams bind(ad::Graph& g, const ParamStore& store, std::map<std::string, Tensor>* grads);

struct ForwardOptions {
  AlignMode mode = AlignMode::kUtterance;
  bool train = false;  // batch statistics instead of running statistics
};

struct ForwardResult {
  ad::Var mask;   // (N, 1, T, F)
  ad::Var delay;  // (N, d) or (N, T, d); invalid for the CRUSE variant
  std::map<std::string, ad::BatchStats> batch_stats;
};

struct AlignResult {
  ad::Var aligned;
  ad::Var delay;
};

// x_mic (N, Cm, T, F), x_far (N, Cf, T, F).
AlignResult align_block(const BoundParams& p, const ModelConfig& cfg, ad::Var x_mic, ad::Var x_far,
                        AlignMode mode);
// conv1x1(enc) + dec.
ad::Var skip_block(const BoundParams& p, const std::string& name, ad::Var enc, ad::Var dec);

// mic_feat, far_feat: (N, 1, T, F) log-power features. For the CRUSE variant
// the far features must already be aligned.
ForwardResult forward(const BoundParams& p, const ModelConfig& cfg, ad::Var mic_feat,
                      ad::Var far_feat, const ForwardOptions& opts);
// Two-channel form: stacked (N, 2, T, F), channel 0 mic, channel 1 aligned far end.
ForwardResult cruse_forward(const BoundParams& p, const ModelConfig& cfg, const Tensor& stacked,
                            const ForwardOptions& opts);

// Encoder/decoder geometry shared by graph and streaming code.
ad::ConvGeometry encoder_geometry(const ModelConfig& cfg);
ad::TransposeGeometry decoder_geometry(const ModelConfig& cfg, int in_bins, int target_bins);

// ---------------------------------------------------------------- inference

dsp::SpectralFrames apply_mask(const Tensor& mask, const dsp::SpectralFrames& mic);

struct EnhanceOptions {
  AlignMode mode = AlignMode::kCausal;
  bool identity_mask = false;
};

struct EnhanceResult {
  dsp::AudioClip enhanced;
  DelayDistribution delay;
  Tensor mask;  // (T, F)
};

EnhanceResult enhance(const dsp::AudioClip& mic, const dsp::AudioClip& far, const ParamStore& params,
                      const ModelConfig& cfg, const EnhanceOptions& opts = {});

// (1, 1, T, F) log-power features of a clip.
Tensor features(const dsp::SpectralFrames& spec);

}  // namespace acrs
