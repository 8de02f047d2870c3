// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "aligncruse/log.hpp"

namespace acrs {
namespace {

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

int parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::kConfig, "config key '" + key + "': expected an integer, got '" + value + "'");
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used == value.size()) return v;
  } catch (const std::exception&) {
  }
  fail(ErrorKind::kConfig, "config key '" + key + "': expected a number, got '" + value + "'");
}

std::vector<int> parse_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, item));
  return out;
}

// Parameter shapes of the whole network, in a fixed order.
struct Layout {
  std::vector<std::pair<std::string, Shape>> params;
  std::vector<std::pair<std::string, Shape>> buffers;
};

void add_conv_block(Layout& l, const std::string& name, Shape w, int co) {
  l.params.push_back({name + ".w", std::move(w)});
  l.params.push_back({name + ".b", {co}});
  l.params.push_back({name + ".bn.gamma", {co}});
  l.params.push_back({name + ".bn.beta", {co}});
  l.buffers.push_back({name + ".bn.mean", {co}});
  l.buffers.push_back({name + ".bn.var", {co}});
}

Layout build_layout(const ModelConfig& cfg) {
  cfg.validate();
  Layout l;
  const int kt = cfg.conv_kt, kf = cfg.conv_kf;
  const int nf = static_cast<int>(cfg.far_channels.size());
  const int ns = static_cast<int>(cfg.mic_channels.size());
  int in = 1;
  for (int i = 0; i < ns; ++i) {
    if (i == nf) in += cfg.far_channels.back();
    add_conv_block(l, "enc" + std::to_string(i), {cfg.mic_channels[i], in, kt, kf}, cfg.mic_channels[i]);
    in = cfg.mic_channels[i];
  }
  in = 1;
  for (int i = 0; i < nf; ++i) {
    add_conv_block(l, "far" + std::to_string(i), {cfg.far_channels[i], in, kt, kf}, cfg.far_channels[i]);
    in = cfg.far_channels[i];
  }
  if (cfg.variant == Variant::kAlignCruse) {
    const int pooled = cfg.align_bins();
    l.params.push_back({"align.q.w", {cfg.proj, cfg.mic_channels[nf - 1] * pooled}});
    l.params.push_back({"align.q.b", {cfg.proj}});
    l.params.push_back({"align.k.w", {cfg.proj, cfg.far_channels.back() * pooled}});
    l.params.push_back({"align.k.b", {cfg.proj}});
  }
  const int h = cfg.gru_hidden();
  l.params.push_back({"gru.w_ih", {3 * h, h}});
  l.params.push_back({"gru.w_hh", {3 * h, h}});
  l.params.push_back({"gru.b", {3 * h}});
  int dec_in = cfg.mic_channels.back();
  const int nd = static_cast<int>(cfg.dec_channels.size());
  for (int k = 0; k < nd; ++k) {
    const int enc_c = cfg.mic_channels[static_cast<std::size_t>(ns - 1 - k)];
    l.params.push_back({"skip" + std::to_string(k) + ".w", {dec_in, enc_c, 1, 1}});
    l.params.push_back({"skip" + std::to_string(k) + ".b", {dec_in}});
    add_conv_block(l, "dec" + std::to_string(k), {dec_in, cfg.dec_channels[k], 1, cfg.dec_kf},
                   cfg.dec_channels[k]);
    dec_in = cfg.dec_channels[k];
  }
  l.params.push_back({"skip" + std::to_string(nd) + ".w", {dec_in, cfg.mic_channels[0], 1, 1}});
  l.params.push_back({"skip" + std::to_string(nd) + ".b", {dec_in}});
  l.params.push_back({"mask.w", {dec_in, 1, 1, cfg.dec_kf}});
  l.params.push_back({"mask.b", {1}});
  l.params.push_back({"mask.gain", {1}});
  return l;
}

double fan_in_bound(const std::string& name, const Shape& s) {
  if (name.rfind("gru.", 0) == 0) return 1.0 / std::sqrt(static_cast<double>(s[1]));
  if (name.rfind("dec", 0) == 0 || name == "mask.w")  // (Ci, Co, 1, Kf)
    return 1.0 / std::sqrt(static_cast<double>(s[0] * s[3]));
  Index fan = 1;
  for (std::size_t i = 1; i < s.size(); ++i) fan *= s[i];
  return 1.0 / std::sqrt(static_cast<double>(fan));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

ad::Var conv_block(const BoundParams& p, const ModelConfig& cfg, const std::string& name, ad::Var x,
                   const ForwardOptions& opts, ForwardResult& res) {
  ad::Var y = ad::conv2d_causal(x, p[name + ".w"], p[name + ".b"], encoder_geometry(cfg));
  if (opts.train) {
    ad::BatchStats stats;
    y = ad::batch_norm_train(y, p[name + ".bn.gamma"], p[name + ".bn.beta"], &stats);
    res.batch_stats[name] = std::move(stats);
  } else {
    y = ad::batch_norm_infer(y, p[name + ".bn.gamma"], p[name + ".bn.beta"],
                             p.store->buffer(name + ".bn.mean"), p.store->buffer(name + ".bn.var"));
  }
  return ad::elu(y);
}

ad::Var transpose_block(const BoundParams& p, const ModelConfig& cfg, const std::string& name,
                        ad::Var x, int target_bins, const ForwardOptions& opts, ForwardResult& res) {
  ad::Var y = ad::conv2d_transpose(x, p[name + ".w"], p[name + ".b"],
                                   decoder_geometry(cfg, x.value().dim(3), target_bins));
  if (opts.train) {
    ad::BatchStats stats;
    y = ad::batch_norm_train(y, p[name + ".bn.gamma"], p[name + ".bn.beta"], &stats);
    res.batch_stats[name] = std::move(stats);
  } else {
    y = ad::batch_norm_infer(y, p[name + ".bn.gamma"], p[name + ".bn.beta"],
                             p.store->buffer(name + ".bn.mean"), p.store->buffer(name + ".bn.var"));
  }
  return ad::elu(y);
}

}  // namespace

const char* to_string(Variant v) { return v == Variant::kAlignCruse ? "align_cruse" : "cruse"; }
const char* to_string(AlignMode m) { return m == AlignMode::kUtterance ? "utterance" : "causal"; }

Variant parse_variant(const std::string& s) {
  if (s == "align_cruse") return Variant::kAlignCruse;
  if (s == "cruse") return Variant::kCruse;
  fail(ErrorKind::kConfig, "unknown model variant '" + s + "' (align_cruse|cruse)");
}

AlignMode parse_align_mode(const std::string& s) {
  if (s == "utterance") return AlignMode::kUtterance;
  if (s == "causal") return AlignMode::kCausal;
  fail(ErrorKind::kConfig, "unknown align mode '" + s + "' (utterance|causal)");
}

// ------------------------------------------------------------------ config

ModelConfig ModelConfig::preset(const std::string& name) {
  ModelConfig c;
  if (name == "default") return c;
  if (name == "paper") {
    c.pad_f_lo = 1;
    c.pad_f_hi = 1;
    c.proj = 64;
    return c;
  }
  if (name == "tiny") {
    c.mic_channels = {4, 10, 18, 8};
    c.far_channels = {2, 6};
    c.dec_channels = {8, 12, 12};
    c.d_max = 64;
    return c;
  }
  fail(ErrorKind::kConfig, "unknown model preset '" + name + "' (default|tiny|paper)");
}

int ModelConfig::enc_bins(int stage) const {
  int f = bins();
  for (int i = 0; i <= stage; ++i) f = ad::conv_out_bins(f, conv_kf, {stride_f, pad_f_lo, pad_f_hi});
  return f;
}

void ModelConfig::validate() const {
  auto positive = [](const std::vector<int>& v) {
    return !v.empty() && std::all_of(v.begin(), v.end(), [](int c) { return c > 0; });
  };
  require(positive(mic_channels) && positive(far_channels) && positive(dec_channels), ErrorKind::kConfig,
          "channel lists must be non-empty and positive");
  require(far_channels.size() < mic_channels.size(), ErrorKind::kConfig,
          "far branch must be shorter than the mic branch");
  require(dec_channels.size() + 1 == mic_channels.size(), ErrorKind::kConfig,
          "decoder needs one stage per encoder stage after the first");
  require(d_max >= 1, ErrorKind::kConfig, "d_max must be >= 1");
  require(proj >= 1, ErrorKind::kConfig, "projection size p must be >= 1");
  require(conv_kt >= 1 && conv_kf >= 1 && dec_kf >= 1 && stride_f >= 1, ErrorKind::kConfig,
          "kernel sizes and stride must be positive");
  require(pad_f_lo >= 0 && pad_f_hi >= 0, ErrorKind::kConfig, "padding must be non-negative");
  require(align_pool >= 1, ErrorKind::kConfig, "align_pool must be >= 1");
  require(align_decay > 0 && align_decay <= 1, ErrorKind::kConfig, "align_decay must lie in (0, 1]");
  require(init_gain > 0 && std::isfinite(init_gain), ErrorKind::kConfig, "init_gain must be positive");
  require(win_len >= 4 && win_len % 2 == 0, ErrorKind::kConfig, "win_len must be even and >= 4");
  const auto nf = static_cast<int>(far_channels.size());
  require(bottleneck_bins() >= 1, ErrorKind::kConfig, "encoder reduces frequency to zero bins");
  require(enc_bins(nf - 1) >= align_pool, ErrorKind::kConfig, "align pooling wider than feature map");
  const int ns = static_cast<int>(mic_channels.size());
  for (int k = 0; k < ns; ++k) {
    const int in = enc_bins(ns - 1 - k);
    const int target = k + 1 < ns ? enc_bins(ns - 2 - k) : bins();
    const int full = (in - 1) * stride_f + dec_kf - pad_f_lo;
    require(full >= target, ErrorKind::kConfig,
            "decoder stage cannot reach " + std::to_string(target) + " bins");
  }
}

std::map<std::string, std::string> ModelConfig::to_map() const {
  std::map<std::string, std::string> kv;
  kv["variant"] = to_string(variant);
  kv["mic_channels"] = join(mic_channels);
  kv["far_channels"] = join(far_channels);
  kv["dec_channels"] = join(dec_channels);
  kv["conv_kt"] = std::to_string(conv_kt);
  kv["conv_kf"] = std::to_string(conv_kf);
  kv["stride_f"] = std::to_string(stride_f);
  kv["pad_f_lo"] = std::to_string(pad_f_lo);
  kv["pad_f_hi"] = std::to_string(pad_f_hi);
  kv["dec_kf"] = std::to_string(dec_kf);
  kv["align_pool"] = std::to_string(align_pool);
  kv["proj"] = std::to_string(proj);
  kv["d_max"] = std::to_string(d_max);
  std::ostringstream os;
  os.precision(17);
  os << align_decay;
  kv["align_decay"] = os.str();
  os.str("");
  os << align_init_scale;
  kv["align_init_scale"] = os.str();
  os.str("");
  os << init_gain;
  kv["init_gain"] = os.str();
  kv["win_len"] = std::to_string(win_len);
  return kv;
}

void ModelConfig::set(const std::string& key, const std::string& value) {
  if (key == "variant") variant = parse_variant(value);
  else if (key == "mic_channels") mic_channels = parse_list(key, value);
  else if (key == "far_channels") far_channels = parse_list(key, value);
  else if (key == "dec_channels") dec_channels = parse_list(key, value);
  else if (key == "conv_kt") conv_kt = parse_int(key, value);
  else if (key == "conv_kf") conv_kf = parse_int(key, value);
  else if (key == "stride_f") stride_f = parse_int(key, value);
  else if (key == "pad_f_lo") pad_f_lo = parse_int(key, value);
  else if (key == "pad_f_hi") pad_f_hi = parse_int(key, value);
  else if (key == "dec_kf") dec_kf = parse_int(key, value);
  else if (key == "align_pool") align_pool = parse_int(key, value);
  else if (key == "proj") proj = parse_int(key, value);
  else if (key == "d_max") d_max = parse_int(key, value);
  else if (key == "align_decay") align_decay = parse_double(key, value);
  else if (key == "align_init_scale") align_init_scale = parse_double(key, value);
  else if (key == "init_gain") init_gain = parse_double(key, value);
  else if (key == "win_len") win_len = parse_int(key, value);
  else fail(ErrorKind::kConfig, "unknown model config key '" + key + "'");
}

ModelConfig ModelConfig::from_map(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  for (const auto& [k, v] : kv) c.set(k, v);
  c.validate();
  return c;
}

// ------------------------------------------------------------- parameters

const Tensor& ParamStore::param(const std::string& name) const {
  auto it = params_.find(name);
  require(it != params_.end(), ErrorKind::kShape, "missing parameter '" + name + "'");
  return it->second;
}

Tensor& ParamStore::param(const std::string& name) {
  auto it = params_.find(name);
  require(it != params_.end(), ErrorKind::kShape, "missing parameter '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::buffer(const std::string& name) const {
  auto it = buffers_.find(name);
  require(it != buffers_.end(), ErrorKind::kShape, "missing buffer '" + name + "'");
  return it->second;
}

Tensor& ParamStore::buffer(const std::string& name) {
  auto it = buffers_.find(name);
  require(it != buffers_.end(), ErrorKind::kShape, "missing buffer '" + name + "'");
  return it->second;
}

Index ParamStore::num_params() const {
  Index n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

std::map<std::string, Tensor> ParamStore::zeros_like() const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : params_) out.emplace(name, Tensor(t.shape()));
  return out;
}

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  const Layout l = build_layout(cfg);
  std::mt19937_64 rng(seed);
  ParamStore store;
  for (const auto& [name, shape] : l.params) {
    Tensor t(shape);
    if (ends_with(name, ".bn.gamma")) {
      t.fill(1.0);
    } else if (name == "mask.gain") {
      t.fill(cfg.init_gain);
    } else if (ends_with(name, ".w") || name == "gru.w_ih" || name == "gru.w_hh") {
      double bound = fan_in_bound(name, shape);
      if (name.rfind("align.", 0) == 0) bound *= cfg.align_init_scale;
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.values()) v = dist(rng);
    }
    store.params().emplace(name, std::move(t));
  }
  for (const auto& [name, shape] : l.buffers)
    store.buffers().emplace(name, Tensor(shape, ends_with(name, ".var") ? 1.0 : 0.0));
  return store;
}

void validate_params(const ParamStore& store, const ModelConfig& cfg) {
  const Layout l = build_layout(cfg);
  require(store.params().size() == l.params.size(), ErrorKind::kShape,
          "parameter set has " + std::to_string(store.params().size()) + " tensors, config expects " +
              std::to_string(l.params.size()));
  for (const auto& [name, shape] : l.params)
    require(store.param(name).shape() == shape, ErrorKind::kShape,
            "parameter '" + name + "' has shape " + shape_string(store.param(name).shape()) +
                ", config expects " + shape_string(shape));
  for (const auto& [name, shape] : l.buffers)
    require(store.buffer(name).shape() == shape, ErrorKind::kShape,
            "buffer '" + name + "' has shape " + shape_string(store.buffer(name).shape()));
  require(store.param("mask.gain")[0] > 0, ErrorKind::kContract, "mask gain must be positive");
}

Index count_params(const ModelConfig& cfg) {
  Index n = 0;
  for (const auto& [name, shape] : build_layout(cfg).params) n += shape_size(shape);
  return n;
}

int DelayDistribution::argmax(int row) const {
  const int d = d_max();
  const double* p = probs.data() + static_cast<Index>(row) * d;
  return static_cast<int>(std::max_element(p, p + d) - p);
}

int DelayDistribution::mean_argmax() const {
  const int d = d_max();
  std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
  for (int r = 0; r < rows(); ++r)
    for (int i = 0; i < d; ++i) acc[static_cast<std::size_t>(i)] += probs[static_cast<Index>(r) * d + i];
  return static_cast<int>(std::max_element(acc.begin(), acc.end()) - acc.begin());
}

// ----------------------------------------------------------------- forward

ad::Var BoundParams::operator[](const std::string& name) const {
  auto it = vars.find(name);
  require(it != vars.end(), ErrorKind::kShape, "missing parameter '" + name + "'");
  return it->second;
}

BoundParams bind(ad::Graph& g, const ParamStore& store, std::map<std::string, Tensor>* grads) {
  BoundParams p;
  p.store = &store;
  for (const auto& [name, t] : store.params()) {
    if (grads) {
      Tensor& sink = (*grads)[name];
      if (sink.empty()) sink = Tensor(t.shape());
      p.vars.emplace(name, g.parameter(t, &sink));
    } else {
      p.vars.emplace(name, g.constant(t));
    }
  }
  return p;
}

ad::ConvGeometry encoder_geometry(const ModelConfig& cfg) {
  return {cfg.stride_f, cfg.pad_f_lo, cfg.pad_f_hi};
}

ad::TransposeGeometry decoder_geometry(const ModelConfig& cfg, int in_bins, int target_bins) {
  const int full = (in_bins - 1) * cfg.stride_f + cfg.dec_kf;
  const int hi = full - cfg.pad_f_lo - target_bins;
  require(hi >= 0, ErrorKind::kShape,
          "decoder cannot expand " + std::to_string(in_bins) + " to " + std::to_string(target_bins) + " bins");
  return {cfg.stride_f, cfg.pad_f_lo, hi};
}

AlignResult align_block(const BoundParams& p, const ModelConfig& cfg, ad::Var x_mic, ad::Var x_far,
                        AlignMode mode) {
  const Tensor& m = x_mic.value();
  const Tensor& f = x_far.value();
  require(m.rank() == 4 && f.rank() == 4 && m.dim(0) == f.dim(0) && m.dim(2) == f.dim(2) &&
              m.dim(3) == f.dim(3),
          ErrorKind::kShape,
          "align_block: mic " + shape_string(m.shape()) + " and far " + shape_string(f.shape()) +
              " must share batch, time and frequency");
  require(m.dim(2) >= 1, ErrorKind::kShape, "align_block: need at least one frame");
  ad::Var q = ad::linear(ad::flatten_cf(ad::max_pool_freq(x_mic, cfg.align_pool)), p["align.q.w"], p["align.q.b"]);
  ad::Var k = ad::linear(ad::flatten_cf(ad::max_pool_freq(x_far, cfg.align_pool)), p["align.k.w"], p["align.k.b"]);
  if (mode == AlignMode::kUtterance) {
    ad::Var d = ad::softmax_lastdim(ad::delay_scores(q, k, cfg.d_max));
    return {ad::soft_shift(x_far, d), d};
  }
  ad::Var d = ad::softmax_lastdim(ad::causal_delay_scores(q, k, cfg.d_max, cfg.align_decay));
  return {ad::soft_shift_causal(x_far, d), d};
}

ad::Var skip_block(const BoundParams& p, const std::string& name, ad::Var enc, ad::Var dec) {
  const Tensor& e = enc.value();
  const Tensor& d = dec.value();
  require(e.rank() == 4 && d.rank() == 4 && e.dim(0) == d.dim(0) && e.dim(2) == d.dim(2) &&
              e.dim(3) == d.dim(3),
          ErrorKind::kShape,
          "skip_block " + name + ": encoder " + shape_string(e.shape()) + " vs decoder " +
              shape_string(d.shape()));
  return ad::add(ad::conv2d_causal(enc, p[name + ".w"], p[name + ".b"], {1, 0, 0}), dec);
}

ForwardResult forward(const BoundParams& p, const ModelConfig& cfg, ad::Var mic_feat, ad::Var far_feat,
                      const ForwardOptions& opts) {
  const Tensor& m = mic_feat.value();
  const Tensor& f = far_feat.value();
  require(m.rank() == 4 && m.dim(1) == 1 && m.dim(3) == cfg.bins(), ErrorKind::kShape,
          "forward: mic features must be (N, 1, T, " + std::to_string(cfg.bins()) + "), got " +
              shape_string(m.shape()));
  require(f.shape() == m.shape(), ErrorKind::kShape,
          "forward: far features " + shape_string(f.shape()) + " differ from mic " + shape_string(m.shape()));
  require(m.dim(2) >= 1, ErrorKind::kShape, "forward: need at least one frame");
  require(p["mask.gain"].value()[0] > 0, ErrorKind::kContract, "mask gain must be positive");

  ForwardResult res;
  const int ns = static_cast<int>(cfg.mic_channels.size());
  const int nf = static_cast<int>(cfg.far_channels.size());
  std::vector<ad::Var> enc(static_cast<std::size_t>(ns));
  ad::Var x = mic_feat, y = far_feat;
  for (int i = 0; i < nf; ++i) {
    x = enc[static_cast<std::size_t>(i)] = conv_block(p, cfg, "enc" + std::to_string(i), x, opts, res);
    y = conv_block(p, cfg, "far" + std::to_string(i), y, opts, res);
  }
  if (cfg.variant == Variant::kAlignCruse) {
    AlignResult a = align_block(p, cfg, x, y, opts.mode);
    y = a.aligned;
    res.delay = a.delay;
  }
  x = ad::concat_channels(x, y);
  for (int i = nf; i < ns; ++i)
    x = enc[static_cast<std::size_t>(i)] = conv_block(p, cfg, "enc" + std::to_string(i), x, opts, res);

  const int bottleneck_c = x.value().dim(1);
  x = ad::unflatten_cf(ad::gru(ad::flatten_cf(x), {p["gru.w_ih"], p["gru.w_hh"], p["gru.b"]}), bottleneck_c);

  const int nd = static_cast<int>(cfg.dec_channels.size());
  for (int k = 0; k < nd; ++k) {
    x = skip_block(p, "skip" + std::to_string(k), enc[static_cast<std::size_t>(ns - 1 - k)], x);
    x = transpose_block(p, cfg, "dec" + std::to_string(k), x, cfg.enc_bins(ns - 2 - k), opts, res);
  }
  x = skip_block(p, "skip" + std::to_string(nd), enc[0], x);
  x = ad::conv2d_transpose(x, p["mask.w"], p["mask.b"], decoder_geometry(cfg, x.value().dim(3), cfg.bins()));
  res.mask = ad::scale(ad::sigmoid(x), p["mask.gain"]);
  return res;
}

ForwardResult cruse_forward(const BoundParams& p, const ModelConfig& cfg, const Tensor& stacked,
                            const ForwardOptions& opts) {
  require(cfg.variant == Variant::kCruse, ErrorKind::kConfig, "cruse_forward needs the cruse variant");
  require(stacked.rank() == 4 && stacked.dim(1) == 2, ErrorKind::kShape,
          "cruse_forward: expected (N, 2, T, F), got " + shape_string(stacked.shape()));
  const int n_n = stacked.dim(0), t_n = stacked.dim(2), f_n = stacked.dim(3);
  Tensor mic({n_n, 1, t_n, f_n}), far({n_n, 1, t_n, f_n});
  const Index plane = static_cast<Index>(t_n) * f_n;
  for (int n = 0; n < n_n; ++n) {
    std::copy_n(stacked.data() + static_cast<Index>(n) * 2 * plane, plane, mic.data() + n * plane);
    std::copy_n(stacked.data() + (static_cast<Index>(n) * 2 + 1) * plane, plane, far.data() + n * plane);
  }
  ad::Graph& g = *p.vars.begin()->second.graph();
  return forward(p, cfg, g.constant(std::move(mic)), g.constant(std::move(far)), opts);
}

// --------------------------------------------------------------- inference

Tensor features(const dsp::SpectralFrames& spec) {
  Tensor lp = dsp::log_power(spec);
  lp.reshape({1, 1, spec.frames(), spec.bins()});
  return lp;
}

dsp::SpectralFrames apply_mask(const Tensor& mask, const dsp::SpectralFrames& mic) {
  require(mask.rank() >= 2 && mask.dim(-2) == mic.frames() && mask.dim(-1) == mic.bins() &&
              mask.size() == static_cast<Index>(mic.frames()) * mic.bins(),
          ErrorKind::kShape,
          "apply_mask: mask " + shape_string(mask.shape()) + " vs spectrum " +
              std::to_string(mic.frames()) + "x" + std::to_string(mic.bins()));
  dsp::SpectralFrames out = mic;
  for (int t = 0; t < mic.frames(); ++t)
    for (int k = 0; k < mic.bins(); ++k) {
      const double m = mask[static_cast<Index>(t) * mic.bins() + k];
      require(m >= 0, ErrorKind::kContract, "apply_mask: negative mask value");
      out.data(t, k) = m * mic.data(t, k);
    }
  return out;
}

EnhanceResult enhance(const dsp::AudioClip& mic, const dsp::AudioClip& far, const ParamStore& params,
                      const ModelConfig& cfg, const EnhanceOptions& opts) {
  require(mic.sample_rate == far.sample_rate, ErrorKind::kConfig,
          "sample-rate mismatch: mic " + std::to_string(mic.sample_rate) + " Hz, far " +
              std::to_string(far.sample_rate) + " Hz");
  const dsp::StftConfig stft_cfg(cfg.win_len, mic.sample_rate);
  require(mic.size() >= static_cast<std::size_t>(stft_cfg.win_len()), ErrorKind::kShape,
          "enhance: mic shorter than one window");
  dsp::AudioClip far_fit = far;
  const auto diff = static_cast<long>(far.size()) - static_cast<long>(mic.size());
  if (std::labs(diff) > stft_cfg.hop())
    log::write(log::Level::kWarn, "length_mismatch",
               "far end differs from mic by " + std::to_string(diff) + " samples; fitted to mic length");
  far_fit.samples.resize(mic.size(), 0.0);

  const auto mic_spec = dsp::stft(mic, stft_cfg);
  const auto far_spec = dsp::stft(far_fit, stft_cfg);
  ad::Graph g;
  BoundParams p = bind(g, params, nullptr);
  ForwardResult fr = forward(p, cfg, g.constant(features(mic_spec)), g.constant(features(far_spec)),
                             {opts.mode, false});
  EnhanceResult res;
  res.mask = fr.mask.value();
  res.mask.reshape({mic_spec.frames(), mic_spec.bins()});
  if (opts.identity_mask) res.mask.fill(1.0);
  if (fr.delay.valid()) {
    res.delay.mode = opts.mode;
    res.delay.probs = fr.delay.value();
    if (opts.mode == AlignMode::kUtterance) res.delay.probs.reshape({cfg.d_max});
    else res.delay.probs.reshape({mic_spec.frames(), cfg.d_max});
  }
  res.enhanced = dsp::istft(apply_mask(res.mask, mic_spec), stft_cfg);
  res.enhanced.samples.resize(mic.size(), 0.0);
  return res;
}

}  // namespace acrs
