// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "aligncruse/autodiff.hpp"
#include "aligncruse/data.hpp"
#include "aligncruse/eval.hpp"
#include "aligncruse/model.hpp"

namespace acrs::train {

// Masked mic spectrum, resynthesized and re-analyzed, against the target spectrum.
ad::Var enhancement_loss(ad::Var mask, const Tensor& mic_spec, const Tensor& target_spec,
                         const dsp::StftConfig& stft_cfg, const ad::CompressedMseConfig& loss_cfg = {});

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double clip_norm = 5.0;     // global gradient norm; 0 disables
};

class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}

  // One update. Returns false, leaving parameters and moments untouched,
  // when any gradient is non-finite.
  bool step(ParamStore& store, const std::map<std::string, Tensor>& grads);

  long steps() const { return steps_; }
  double last_grad_norm() const { return last_norm_; }
  const AdamConfig& config() const { return cfg_; }
  void set_config(const AdamConfig& cfg) { cfg_ = cfg; }

  // Moments as "adam.m/<param>" and "adam.v/<param>" records.
  std::map<std::string, Tensor> export_state() const;
  void import_state(const std::map<std::string, Tensor>& extra, long steps);

 private:
  AdamConfig cfg_;
  long steps_ = 0;
  double last_norm_ = 0.0;
  std::map<std::string, Tensor> m_, v_;
};

double grad_norm(const std::map<std::string, Tensor>& grads);

// running = (1 - momentum) running + momentum batch, for every recorded block.
void update_running_stats(ParamStore& store, const std::map<std::string, ad::BatchStats>& stats, double momentum);

/// Counts consecutive epochs whose loss exceeds `factor` times the first
/// epoch's loss (non-finite losses count too).
struct DivergenceMonitor {
  double factor = 10.0;
  int patience = 3;
  double initial = 0.0;
  int bad = 0;
  int seen = 0;

  // Returns true once `patience` bad epochs have accumulated.
  bool update(double epoch_loss);
};

/// One training example as tensors of shape (1, C, T, F).
struct Example {
  Tensor mic_feat, far_feat;
  Tensor mic_spec, target_spec;
  int delay_frames = 0;
};
// `align_far` re-times the far end with the ground-truth delay before analysis.
Example make_example(const data::Scenario& s, const ModelConfig& cfg, bool align_far);

struct Batch {
  Tensor mic_feat, far_feat, mic_spec, target_spec;
  std::vector<int> delay_frames;
};
Batch stack(const std::vector<Example>& examples);

struct TrainConfig {
  ModelConfig model = ModelConfig::preset("tiny");
  data::ScenarioConfig train_data;
  // Held-out far-end single-talk clips used for ERLE and align accuracy.
  data::ScenarioConfig eval_data;
  int train_clips = 200;
  int val_clips = 20;
  int eval_clips = 50;
  int batch_size = 16;
  int epochs = 20;
  AdamConfig adam;
  ad::CompressedMseConfig loss;
  double bn_momentum = 0.1;
  // Far end shifted by the true delay for training (baseline models).
  bool oracle_align_train = false;
  // Far-end alignment applied when scoring ERLE.
  eval::FarAlignment eval_far = eval::FarAlignment::kNone;
  double divergence_factor = 10.0;
  int divergence_patience = 3;
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: no metrics or checkpoints on disk
  // Training clips from a manifest written by write_scenarios instead of
  // on-the-fly synthesis; train_clips is then the manifest size.
  std::string data_manifest;

  // Desk-scale experiment: tiny model, 4 s clips with 0.3-0.5 s delays.
  static TrainConfig toy();
  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;      // mean training loss
  double val_loss = 0.0;  // held-out loss with running statistics
  double val_erle_db = 0.0;
  double align_top1 = 0.0;  // success within +-1 frame; 0 for CRUSE
  double wall_s = 0.0;
  int skipped_steps = 0;
  double grad_norm = 0.0;  // last step, before clipping

  std::string to_json() const;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);
  // Restores parameters, optimizer state and history from a checkpoint.
  // The configuration must match the one the checkpoint was written with.
  static Trainer resume(const std::string& checkpoint, const TrainConfig& cfg);

  // Runs until cfg.epochs epochs are complete. Raises kNumeric on divergence.
  void run();
  EpochMetrics run_epoch();

  double validation_loss();
  eval::EvalReport evaluate(AlignMode mode = AlignMode::kUtterance) const;

  void save_checkpoint(const std::string& path) const;

  const ParamStore& params() const { return store_; }
  ParamStore& params() { return store_; }
  const std::vector<EpochMetrics>& history() const { return history_; }
  const TrainConfig& config() const { return cfg_; }
  int epoch() const { return epoch_; }
  const std::vector<eval::EvalClip>& eval_clips() const { return eval_clips_; }

 private:
  data::Scenario train_scenario(int i) const;
  double batch_loss(const Batch& b, bool train, std::map<std::string, Tensor>* grads,
                    std::map<std::string, ad::BatchStats>* stats) const;

  TrainConfig cfg_;
  ParamStore store_;
  Adam adam_;
  int epoch_ = 0;
  DivergenceMonitor divergence_;
  std::vector<EpochMetrics> history_;
  std::vector<data::ManifestRow> rows_;
  std::vector<std::vector<int>> batches_;
  std::vector<Example> val_examples_;
  std::vector<eval::EvalClip> eval_clips_;
};

}  // namespace acrs::train
