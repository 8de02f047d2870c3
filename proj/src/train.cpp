// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "aligncruse/log.hpp"
#include "aligncruse/param_io.hpp"
#include "aligncruse/wav.hpp"
#include "json.hpp"

namespace acrs::train {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum SeedStream : std::uint64_t {
  kInit = 1,
  kPartition = 2,
  kTrainClip = 10000,
  kValClip = 20000,
  kEvalClip = 30000,
  kEpochOrder = 100000,
};

json range_json(const data::Range& r) { return json::array({r.lo, r.hi}); }

data::Range range_from(const json& j, const std::string& key) {
  require(j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number(), ErrorKind::kConfig,
          "'" + key + "' must be a [lo, hi] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

json scenario_json(const data::ScenarioConfig& c) {
  json nl = json::array();
  for (auto n : c.nonlinearities) nl.push_back(data::to_string(n));
  return {{"delay_s", range_json(c.delay_s)},
          {"ser_db", range_json(c.ser_db)},
          {"snr_db", range_json(c.snr_db)},
          {"rt60_s", range_json(c.rt60_s)},
          {"nonlinearities", nl},
          {"clip_len_s", c.clip_len_s},
          {"double_talk_prob", c.double_talk_prob},
          {"near_reverb", c.near_reverb},
          {"level_db", range_json(c.level_db)},
          {"gain_db", range_json(c.gain_db)},
          {"corpus_dir", c.corpus_dir},
          {"allow_surrogate", c.allow_surrogate}};
}

void scenario_from(const json& j, data::ScenarioConfig& c, const std::string& where) {
  require(j.is_object(), ErrorKind::kConfig, "'" + where + "' must be an object");
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "delay_s") c.delay_s = range_from(v, key);
      else if (key == "ser_db") c.ser_db = range_from(v, key);
      else if (key == "snr_db") c.snr_db = range_from(v, key);
      else if (key == "rt60_s") c.rt60_s = range_from(v, key);
      else if (key == "level_db") c.level_db = range_from(v, key);
      else if (key == "gain_db") c.gain_db = range_from(v, key);
      else if (key == "clip_len_s") c.clip_len_s = v.get<double>();
      else if (key == "double_talk_prob") c.double_talk_prob = v.get<double>();
      else if (key == "near_reverb") c.near_reverb = v.get<bool>();
      else if (key == "corpus_dir") c.corpus_dir = v.get<std::string>();
      else if (key == "allow_surrogate") c.allow_surrogate = v.get<bool>();
      else if (key == "nonlinearities") {
        c.nonlinearities.clear();
        for (const auto& n : v) c.nonlinearities.push_back(data::parse_nonlinearity(n.get<std::string>()));
      } else {
        fail(ErrorKind::kConfig, "unknown key '" + where + "." + key + "'");
      }
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, "bad value for '" + where + "." + key + "': " + e.what());
    }
  }
}

std::string metrics_path(const std::string& dir) { return (fs::path(dir) / "metrics.jsonl").string(); }

EpochMetrics metrics_from(const json& j) {
  EpochMetrics m;
  m.epoch = j.at("epoch").get<int>();
  m.loss = j.at("loss").get<double>();
  m.val_loss = j.at("val_loss").get<double>();
  m.val_erle_db = j.at("val_erle_db").get<double>();
  m.align_top1 = j.at("align_top1").get<double>();
  m.wall_s = j.at("wall_s").get<double>();
  m.skipped_steps = j.at("skipped_steps").get<int>();
  m.grad_norm = j.at("grad_norm").get<double>();
  return m;
}

// Configuration fields that may change between a checkpoint and its resumption.
json resumable_view(const std::string& cfg_json) {
  json j = json::parse(cfg_json);
  j.erase("epochs");
  j.erase("out_dir");
  return j;
}

}  // namespace

// -------------------------------------------------------------------- loss

ad::Var enhancement_loss(ad::Var mask, const Tensor& mic_spec, const Tensor& target_spec,
                         const dsp::StftConfig& stft_cfg, const ad::CompressedMseConfig& loss_cfg) {
  ad::Var est = ad::stft(ad::istft(ad::mask_spectrum(mask, mic_spec), stft_cfg), stft_cfg);
  require(est.shape() == target_spec.shape(), ErrorKind::kShape,
          "loss: estimate " + shape_string(est.shape()) + " vs target " + shape_string(target_spec.shape()));
  // The reference takes the same resynthesis path, so edge frames match too.
  ad::Graph ref_graph;
  const Tensor reference = ad::stft(ad::istft(ref_graph.constant(target_spec), stft_cfg), stft_cfg).value();
  return ad::compressed_mse(est, reference, loss_cfg);
}

// -------------------------------------------------------------- optimizer

double grad_norm(const std::map<std::string, Tensor>& grads) {
  double ss = 0;
  for (const auto& [name, g] : grads)
    for (double v : g.values()) ss += v * v;
  return std::sqrt(ss);
}

bool Adam::step(ParamStore& store, const std::map<std::string, Tensor>& grads) {
  last_norm_ = grad_norm(grads);
  if (!std::isfinite(last_norm_)) return false;
  const double clip = cfg_.clip_norm > 0 && last_norm_ > cfg_.clip_norm ? cfg_.clip_norm / last_norm_ : 1.0;
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (auto& [name, p] : store.params()) {
    auto git = grads.find(name);
    require(git != grads.end() && git->second.shape() == p.shape(), ErrorKind::kShape,
            "adam: missing or misshaped gradient for '" + name + "'");
    const Tensor& g = git->second;
    Tensor& m = m_[name];
    Tensor& v = v_[name];
    if (m.empty()) m = Tensor(p.shape());
    if (v.empty()) v = Tensor(p.shape());
    for (Index i = 0; i < p.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double update = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + cfg_.eps);
      p[i] -= cfg_.lr * (update + cfg_.weight_decay * p[i]);
    }
  }
  return true;
}

std::map<std::string, Tensor> Adam::export_state() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : m_) out["adam.m/" + name] = t;
  for (const auto& [name, t] : v_) out["adam.v/" + name] = t;
  return out;
}

void Adam::import_state(const std::map<std::string, Tensor>& extra, long steps) {
  m_.clear();
  v_.clear();
  for (const auto& [key, t] : extra) {
    if (key.rfind("adam.m/", 0) == 0) m_[key.substr(7)] = t;
    else if (key.rfind("adam.v/", 0) == 0) v_[key.substr(7)] = t;
  }
  steps_ = steps;
}

void update_running_stats(ParamStore& store, const std::map<std::string, ad::BatchStats>& stats, double momentum) {
  for (const auto& [block, s] : stats) {
    Tensor& mean = store.buffer(block + ".bn.mean");
    Tensor& var = store.buffer(block + ".bn.var");
    require(static_cast<Index>(s.mean.size()) == mean.size(), ErrorKind::kShape, "running stats of " + block);
    for (Index c = 0; c < mean.size(); ++c) {
      mean[c] = (1.0 - momentum) * mean[c] + momentum * s.mean[static_cast<std::size_t>(c)];
      var[c] = (1.0 - momentum) * var[c] + momentum * s.var[static_cast<std::size_t>(c)];
    }
  }
}

// ---------------------------------------------------------------- batches

Example make_example(const data::Scenario& s, const ModelConfig& cfg, bool align_far) {
  const dsp::StftConfig stft_cfg(cfg.win_len, s.mic.sample_rate);
  dsp::AudioClip far = s.far;
  if (align_far) {
    std::vector<double> shifted(far.size(), 0.0);
    for (std::size_t i = static_cast<std::size_t>(s.delay); i < far.size(); ++i) shifted[i] = s.far.samples[i - s.delay];
    far.samples = std::move(shifted);
  }
  const auto mic_spec = dsp::stft(s.mic, stft_cfg);
  Example e;
  e.mic_feat = features(mic_spec);
  e.far_feat = features(dsp::stft(far, stft_cfg));
  e.mic_spec = ad::spectrum_tensor({mic_spec});
  e.target_spec = ad::spectrum_tensor({dsp::stft(s.target, stft_cfg)});
  e.delay_frames = eval::delay_to_frames(s.delay, stft_cfg.hop());
  return e;
}

Batch stack(const std::vector<Example>& examples) {
  require(!examples.empty(), ErrorKind::kShape, "empty batch");
  auto cat = [&](Tensor Example::*field) {
    Shape shape = (examples.front().*field).shape();
    const Index each = (examples.front().*field).size();
    shape[0] = static_cast<int>(examples.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const Tensor& t = examples[i].*field;
      require(t.size() == each, ErrorKind::kShape, "batch examples differ in length");
      std::copy_n(t.data(), each, out.data() + static_cast<Index>(i) * each);
    }
    return out;
  };
  Batch b;
  b.mic_feat = cat(&Example::mic_feat);
  b.far_feat = cat(&Example::far_feat);
  b.mic_spec = cat(&Example::mic_spec);
  b.target_spec = cat(&Example::target_spec);
  for (const auto& e : examples) b.delay_frames.push_back(e.delay_frames);
  return b;
}

// ----------------------------------------------------------------- config

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.model = ModelConfig::preset("tiny");
  c.model.align_init_scale = 0.05;
  c.train_data.clip_len_s = 4.0;
  c.train_data.delay_s = {0.3, 0.5};
  c.train_data.rt60_s = {0.1, 0.3};
  c.train_data.snr_db = {20.0, 40.0};
  c.train_data.double_talk_prob = 0.8;
  c.eval_data = data::ScenarioConfig::long_delay("M");
  c.eval_data.clip_len_s = 4.0;
  c.eval_data.rt60_s = c.train_data.rt60_s;
  c.eval_data.snr_db = c.train_data.snr_db;
  c.adam.lr = 2e-3;
  return c;
}

void TrainConfig::validate() const {
  model.validate();
  train_data.validate();
  eval_data.validate();
  require(train_clips >= 1 && val_clips >= 1 && eval_clips >= 1, ErrorKind::kConfig, "clip counts must be >= 1");
  require(batch_size >= 1, ErrorKind::kConfig, "batch_size must be >= 1");
  require(epochs >= 0, ErrorKind::kConfig, "epochs must be >= 0");
  require(adam.lr >= 0 && adam.beta1 >= 0 && adam.beta1 < 1 && adam.beta2 >= 0 && adam.beta2 < 1 && adam.eps > 0 &&
              adam.weight_decay >= 0 && adam.clip_norm >= 0,
          ErrorKind::kConfig, "invalid optimizer settings");
  require(bn_momentum >= 0 && bn_momentum <= 1, ErrorKind::kConfig, "bn_momentum must lie in [0, 1]");
  require(loss.compression > 0 && loss.blend >= 0 && loss.blend <= 1 && loss.eps > 0, ErrorKind::kConfig,
          "invalid loss settings");
  require(divergence_factor > 1 && divergence_patience >= 1, ErrorKind::kConfig, "invalid divergence settings");
  const double max_delay_frames = std::max(train_data.delay_s.hi, eval_data.delay_s.hi) * train_data.sample_rate /
                                  (model.win_len / 2);
  if (model.variant == Variant::kAlignCruse && max_delay_frames >= model.d_max)
    log::warn("delay_beyond_dmax", "data delays reach " + std::to_string(max_delay_frames) +
                                       " frames but d_max is " + std::to_string(model.d_max));
}

std::string TrainConfig::to_json() const {
  json model_j = json::object();
  for (const auto& [k, v] : model.to_map()) model_j[k] = v;
  json j = {{"model", model_j},
            {"train_data", scenario_json(train_data)},
            {"eval_data", scenario_json(eval_data)},
            {"train_clips", train_clips},
            {"val_clips", val_clips},
            {"eval_clips", eval_clips},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"lr", adam.lr},
            {"beta1", adam.beta1},
            {"beta2", adam.beta2},
            {"adam_eps", adam.eps},
            {"weight_decay", adam.weight_decay},
            {"clip_norm", adam.clip_norm},
            {"loss_compression", loss.compression},
            {"loss_blend", loss.blend},
            {"loss_eps", loss.eps},
            {"bn_momentum", bn_momentum},
            {"oracle_align_train", oracle_align_train},
            {"eval_far", eval::to_string(eval_far)},
            {"divergence_factor", divergence_factor},
            {"divergence_patience", divergence_patience},
            {"seed", seed},
            {"out_dir", out_dir},
            {"data_manifest", data_manifest}};
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  require(j.is_object(), ErrorKind::kConfig, "config must be a JSON object");
  TrainConfig c = toy();
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "model") {
        if (v.is_string()) {
          c.model = ModelConfig::preset(v.get<std::string>());
        } else {
          require(v.is_object(), ErrorKind::kConfig, "'model' must be a preset name or an object");
          if (v.contains("preset")) c.model = ModelConfig::preset(v["preset"].get<std::string>());
          for (const auto& [mk, mv] : v.items())
            if (mk != "preset") c.model.set(mk, mv.is_string() ? mv.get<std::string>() : mv.dump());
        }
      } else if (key == "train_data") scenario_from(v, c.train_data, key);
      else if (key == "eval_data") scenario_from(v, c.eval_data, key);
      else if (key == "train_clips") c.train_clips = v.get<int>();
      else if (key == "val_clips") c.val_clips = v.get<int>();
      else if (key == "eval_clips") c.eval_clips = v.get<int>();
      else if (key == "batch_size") c.batch_size = v.get<int>();
      else if (key == "epochs") c.epochs = v.get<int>();
      else if (key == "lr") c.adam.lr = v.get<double>();
      else if (key == "beta1") c.adam.beta1 = v.get<double>();
      else if (key == "beta2") c.adam.beta2 = v.get<double>();
      else if (key == "adam_eps") c.adam.eps = v.get<double>();
      else if (key == "weight_decay") c.adam.weight_decay = v.get<double>();
      else if (key == "clip_norm") c.adam.clip_norm = v.get<double>();
      else if (key == "loss_compression") c.loss.compression = v.get<double>();
      else if (key == "loss_blend") c.loss.blend = v.get<double>();
      else if (key == "loss_eps") c.loss.eps = v.get<double>();
      else if (key == "bn_momentum") c.bn_momentum = v.get<double>();
      else if (key == "oracle_align_train") c.oracle_align_train = v.get<bool>();
      else if (key == "eval_far") c.eval_far = eval::parse_far_alignment(v.get<std::string>());
      else if (key == "divergence_factor") c.divergence_factor = v.get<double>();
      else if (key == "divergence_patience") c.divergence_patience = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "out_dir") c.out_dir = v.get<std::string>();
      else if (key == "data_manifest") c.data_manifest = v.get<std::string>();
      else fail(ErrorKind::kConfig, "unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      fail(ErrorKind::kConfig, "bad value for '" + key + "': " + e.what());
    }
  }
  c.validate();
  return c;
}

std::string EpochMetrics::to_json() const {
  return json({{"epoch", epoch},
               {"loss", loss},
               {"val_loss", val_loss},
               {"val_erle_db", val_erle_db},
               {"align_top1", align_top1},
               {"wall_s", wall_s},
               {"skipped_steps", skipped_steps},
               {"grad_norm", grad_norm}})
      .dump();
}

// ---------------------------------------------------------------- trainer

bool DivergenceMonitor::update(double epoch_loss) {
  if (seen++ == 0) initial = epoch_loss;
  if (!std::isfinite(epoch_loss) || epoch_loss > factor * initial) ++bad;
  else bad = 0;
  return bad >= patience;
}

Trainer::Trainer(const TrainConfig& cfg) : cfg_(cfg), adam_(cfg.adam) {
  cfg_.validate();
  divergence_.factor = cfg_.divergence_factor;
  divergence_.patience = cfg_.divergence_patience;
  if (!cfg_.data_manifest.empty()) {
    rows_ = data::read_manifest(cfg_.data_manifest);
    require(!rows_.empty(), ErrorKind::kIo, "manifest '" + cfg_.data_manifest + "' is empty");
    cfg_.train_clips = static_cast<int>(rows_.size());
  }
  store_ = init_params(cfg_.model, data::child_seed(cfg_.seed, kInit));

  std::vector<int> order(static_cast<std::size_t>(cfg_.train_clips));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(data::child_seed(cfg_.seed, kPartition));
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg_.batch_size))
    batches_.emplace_back(order.begin() + static_cast<long>(i),
                          order.begin() + static_cast<long>(std::min(order.size(), i + cfg_.batch_size)));

  for (int i = 0; i < cfg_.val_clips; ++i)
    val_examples_.push_back(make_example(
        data::synth_scenario(cfg_.train_data, data::child_seed(cfg_.seed, kValClip + static_cast<std::uint64_t>(i))),
        cfg_.model, cfg_.oracle_align_train));
  std::vector<data::Scenario> eval_set;
  for (int i = 0; i < cfg_.eval_clips; ++i)
    eval_set.push_back(
        data::synth_scenario(cfg_.eval_data, data::child_seed(cfg_.seed, kEvalClip + static_cast<std::uint64_t>(i))));
  eval_clips_ = eval::clips_from_scenarios(eval_set, "eval");
}

data::Scenario Trainer::train_scenario(int i) const {
  if (!rows_.empty()) {
    const auto& row = rows_[static_cast<std::size_t>(i)];
    data::Scenario s;
    s.mic = wav::read(row.mic_path);
    s.far = wav::read(row.far_path);
    s.target = row.target_path.empty() ? dsp::AudioClip(std::vector<double>(s.mic.size(), 0.0), s.mic.sample_rate)
                                       : wav::read(row.target_path);
    require(row.delay_samples >= 0 || !cfg_.oracle_align_train, ErrorKind::kIo,
            row.id + ": oracle alignment needs a ground-truth delay");
    s.delay = std::max(row.delay_samples, 0);
    require(s.far.size() == s.mic.size() && s.target.size() == s.mic.size(), ErrorKind::kShape,
            row.id + ": mic, far and target lengths differ");
    return s;
  }
  return data::synth_scenario(cfg_.train_data, data::child_seed(cfg_.seed, kTrainClip + static_cast<std::uint64_t>(i)));
}

double Trainer::batch_loss(const Batch& b, bool train, std::map<std::string, Tensor>* grads,
                           std::map<std::string, ad::BatchStats>* stats) const {
  ad::Graph g;
  BoundParams p = bind(g, store_, grads);
  ForwardResult fr = forward(p, cfg_.model, g.constant(b.mic_feat), g.constant(b.far_feat),
                             {AlignMode::kUtterance, train});
  ad::Var loss = enhancement_loss(fr.mask, b.mic_spec, b.target_spec, dsp::StftConfig(cfg_.model.win_len), cfg_.loss);
  if (grads) g.backward(loss);
  if (stats) *stats = std::move(fr.batch_stats);
  return loss.value()[0];
}

double Trainer::validation_loss() {
  double total = 0;
  for (std::size_t i = 0; i < val_examples_.size(); i += static_cast<std::size_t>(cfg_.batch_size)) {
    const std::vector<Example> chunk(val_examples_.begin() + static_cast<long>(i),
                                     val_examples_.begin() +
                                         static_cast<long>(std::min(val_examples_.size(), i + cfg_.batch_size)));
    total += batch_loss(stack(chunk), false, nullptr, nullptr) * static_cast<double>(chunk.size());
  }
  return total / static_cast<double>(val_examples_.size());
}

eval::EvalReport Trainer::evaluate(AlignMode mode) const {
  eval::ModelEvalOptions o;
  o.name = to_string(cfg_.model.variant);
  o.mode = mode;
  o.far = cfg_.eval_far;
  return eval::evaluate_model(eval_clips_, cfg_.model, store_, o);
}

EpochMetrics Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  ++epoch_;
  std::vector<std::size_t> order(batches_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(data::child_seed(cfg_.seed, kEpochOrder + static_cast<std::uint64_t>(epoch_)));
  std::shuffle(order.begin(), order.end(), rng);

  EpochMetrics m;
  m.epoch = epoch_;
  std::vector<double> losses(batches_.size(), 0.0);
  for (std::size_t bi : order) {
    std::vector<Example> ex;
    for (int clip : batches_[bi]) ex.push_back(make_example(train_scenario(clip), cfg_.model, cfg_.oracle_align_train));
    const Batch b = stack(ex);
    std::map<std::string, Tensor> grads = store_.zeros_like();
    std::map<std::string, ad::BatchStats> stats;
    try {
      losses[bi] = batch_loss(b, true, &grads, &stats);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kNumeric) throw;
      log::warn("non_finite_step", std::string("skipped batch: ") + e.what());
      losses[bi] = std::numeric_limits<double>::quiet_NaN();
      ++m.skipped_steps;
      continue;
    }
    if (!adam_.step(store_, grads)) {
      log::warn("non_finite_gradient", "skipped optimizer step");
      ++m.skipped_steps;
      m.grad_norm = adam_.last_grad_norm();
      continue;
    }
    m.grad_norm = adam_.last_grad_norm();
    update_running_stats(store_, stats, cfg_.bn_momentum);
  }
  double total = 0;
  std::size_t count = 0;
  for (std::size_t bi = 0; bi < batches_.size(); ++bi) {
    total += losses[bi] * static_cast<double>(batches_[bi].size());
    count += batches_[bi].size();
  }
  m.loss = total / static_cast<double>(count);
  m.val_loss = validation_loss();
  const auto report = evaluate(AlignMode::kUtterance);
  m.val_erle_db = report.erle.mean;
  m.align_top1 = report.delay_success;
  m.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  history_.push_back(m);
  log::info("epoch", m.to_json());

  if (!cfg_.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(cfg_.out_dir, ec);
    std::ofstream out(metrics_path(cfg_.out_dir), std::ios::app);
    require(out.good(), ErrorKind::kIo, "cannot append to " + metrics_path(cfg_.out_dir));
    out << m.to_json() << '\n';
    char name[64];
    std::snprintf(name, sizeof name, "checkpoint_epoch%03d.acrs", epoch_);
    save_checkpoint((fs::path(cfg_.out_dir) / name).string());
    save_checkpoint((fs::path(cfg_.out_dir) / "latest.acrs").string());
  }

  if (divergence_.update(m.loss))
    fail(ErrorKind::kNumeric, "training diverged: loss " + std::to_string(m.loss) + " above " +
                                  std::to_string(divergence_.factor) + "x the first-epoch loss " +
                                  std::to_string(divergence_.initial) + " for " + std::to_string(divergence_.bad) +
                                  " epochs (epoch " + std::to_string(epoch_) + ")");
  return m;
}

void Trainer::run() {
  while (epoch_ < cfg_.epochs) run_epoch();
}

void Trainer::save_checkpoint(const std::string& path) const {
  json hist = json::array();
  for (const auto& m : history_) hist.push_back(json::parse(m.to_json()));
  json state = {{"epoch", epoch_},
                {"adam_steps", adam_.steps()},
                {"initial_loss", divergence_.initial},
                {"bad_epochs", divergence_.bad},
                {"history", hist},
                {"config", cfg_.to_json()}};
  io::save(path, cfg_.model, store_, io::Dtype::kF64, adam_.export_state(), state.dump());
}

Trainer Trainer::resume(const std::string& checkpoint, const TrainConfig& cfg) {
  auto file = io::load(checkpoint, &cfg.model);
  require(!file.train_state.empty(), ErrorKind::kIo, checkpoint + " holds no training state");
  json state;
  try {
    state = json::parse(file.train_state);
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, checkpoint + ": corrupt training state: " + e.what());
  }
  Trainer t(cfg);
  require(resumable_view(state.at("config").get<std::string>()) == resumable_view(t.cfg_.to_json()),
          ErrorKind::kConfig, "resume: configuration differs from the one in " + checkpoint);
  t.store_ = std::move(file.store);
  t.adam_.import_state(file.extra, state.at("adam_steps").get<long>());
  t.epoch_ = state.at("epoch").get<int>();
  t.divergence_.initial = state.at("initial_loss").get<double>();
  t.divergence_.bad = state.at("bad_epochs").get<int>();
  t.divergence_.seen = t.epoch_;
  for (const auto& m : state.at("history")) t.history_.push_back(metrics_from(m));
  return t;
}

}  // namespace acrs::train
