// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/streaming.hpp"

#include <cmath>

namespace acrs {
namespace {

template <typename Scalar>
using RMat = typename StreamingModel<Scalar>::Mat;
template <typename Scalar>
using CVec = typename StreamingModel<Scalar>::Vec;

template <typename Scalar>
void elu_inplace(RMat<Scalar>& x) {
  x = x.unaryExpr([](Scalar v) { return v > Scalar(0) ? v : Scalar(std::expm1(v)); });
}

// Per-channel affine of batch norm with frozen statistics.
struct Folded {
  std::vector<double> scale, shift;
};

Folded fold_bn(const ParamStore& p, const std::string& name) {
  const Tensor& g = p.param(name + ".bn.gamma");
  const Tensor& b = p.param(name + ".bn.beta");
  const Tensor& m = p.buffer(name + ".bn.mean");
  const Tensor& v = p.buffer(name + ".bn.var");
  Folded f;
  for (Index c = 0; c < g.size(); ++c) {
    const double s = g[c] / std::sqrt(v[c] + ad::kBatchNormEps);
    f.scale.push_back(s);
    f.shift.push_back(b[c] - m[c] * s);
  }
  return f;
}

template <typename Scalar>
struct ConvLayer {
  int ci = 0, co = 0, kt = 0, kf = 0, fin = 0, fout = 0;
  ad::ConvGeometry geo;
  RMat<Scalar> w;  // (co, ci*kt*kf), BN scale folded in
  CVec<Scalar> bias;
  std::vector<RMat<Scalar>> hist;  // ring of the last kt input frames
  int head = 0;
  RMat<Scalar> col;

  void init(const ParamStore& p, const std::string& name, const ModelConfig& cfg, int in_bins) {
    const Tensor& wt = p.param(name + ".w");
    const Tensor& b = p.param(name + ".b");
    co = wt.dim(0), ci = wt.dim(1), kt = wt.dim(2), kf = wt.dim(3);
    geo = encoder_geometry(cfg);
    fin = in_bins;
    fout = ad::conv_out_bins(fin, kf, geo);
    const Folded f = fold_bn(p, name);
    const Index k = static_cast<Index>(ci) * kt * kf;
    w.resize(co, k);
    bias.resize(co);
    for (int o = 0; o < co; ++o) {
      for (Index i = 0; i < k; ++i) w(o, i) = static_cast<Scalar>(wt[o * k + i] * f.scale[o]);
      bias(o) = static_cast<Scalar>(b[o] * f.scale[o] + f.shift[o]);
    }
    hist.assign(static_cast<std::size_t>(kt), RMat<Scalar>::Zero(ci, fin));
    col.resize(k, fout);
    head = 0;
  }

  void reset() {
    for (auto& h : hist) h.setZero();
    head = 0;
  }

  RMat<Scalar> apply(const RMat<Scalar>& x) {
    hist[static_cast<std::size_t>(head)] = x;
    head = (head + 1) % kt;
    col.setZero();
    for (int c = 0; c < ci; ++c)
      for (int t = 0; t < kt; ++t) {
        // t = 0 is the oldest frame in the window.
        const RMat<Scalar>& frame = hist[static_cast<std::size_t>((head + t) % kt)];
        for (int f = 0; f < kf; ++f) {
          const Index row = (static_cast<Index>(c) * kt + t) * kf + f;
          for (int j = 0; j < fout; ++j) {
            const int fs = j * geo.stride_f - geo.pad_f_lo + f;
            if (fs >= 0 && fs < fin) col(row, j) = frame(c, fs);
          }
        }
      }
    RMat<Scalar> y = w * col;
    y.colwise() += bias;
    elu_inplace<Scalar>(y);
    return y;
  }
};

template <typename Scalar>
struct TransposeLayer {
  int ci = 0, co = 0, kf = 0, fin = 0, fout = 0;
  ad::TransposeGeometry geo;
  RMat<Scalar> wt;  // (co*kf, ci)
  CVec<Scalar> bias;
  bool bn_elu = true;

  void init(const ParamStore& p, const std::string& name, const ModelConfig& cfg, int in_bins, int target,
            bool with_bn) {
    const Tensor& w = p.param(name + ".w");
    const Tensor& b = p.param(name + ".b");
    ci = w.dim(0), co = w.dim(1), kf = w.dim(3);
    fin = in_bins;
    geo = decoder_geometry(cfg, fin, target);
    fout = target;
    bn_elu = with_bn;
    Folded f;
    if (with_bn) f = fold_bn(p, name);
    else f = {std::vector<double>(static_cast<std::size_t>(co), 1.0), std::vector<double>(static_cast<std::size_t>(co), 0.0)};
    wt.resize(static_cast<Index>(co) * kf, ci);
    bias.resize(co);
    for (int c = 0; c < ci; ++c)
      for (int o = 0; o < co; ++o)
        for (int k = 0; k < kf; ++k)
          wt(static_cast<Index>(o) * kf + k, c) = static_cast<Scalar>(w[(static_cast<Index>(c) * co + o) * kf + k] * f.scale[o]);
    for (int o = 0; o < co; ++o) bias(o) = static_cast<Scalar>(b[o] * f.scale[o] + f.shift[o]);
  }

  RMat<Scalar> apply(const RMat<Scalar>& x) const {
    const RMat<Scalar> z = wt * x;
    RMat<Scalar> y(co, fout);
    for (int o = 0; o < co; ++o) {
      y.row(o).setConstant(bias(o));
      for (int k = 0; k < kf; ++k)
        for (int i = 0; i < fin; ++i) {
          const int j = i * geo.stride_f - geo.crop_f_lo + k;
          if (j >= 0 && j < fout) y(o, j) += z(static_cast<Index>(o) * kf + k, i);
        }
    }
    if (bn_elu) elu_inplace<Scalar>(y);
    return y;
  }
};

template <typename Scalar>
struct SkipLayer {
  RMat<Scalar> w;
  CVec<Scalar> b;

  void init(const ParamStore& p, const std::string& name) {
    const Tensor& wt = p.param(name + ".w");
    const Tensor& bt = p.param(name + ".b");
    w.resize(wt.dim(0), wt.dim(1));
    for (Index i = 0; i < wt.size(); ++i) w.data()[i] = static_cast<Scalar>(wt[i]);
    b = bt.vec().cast<Scalar>();
  }

  RMat<Scalar> apply(const RMat<Scalar>& enc, const RMat<Scalar>& dec) const {
    RMat<Scalar> y = w * enc + dec;
    y.colwise() += b;
    return y;
  }
};

template <typename Scalar>
RMat<Scalar> to_mat(const Tensor& t, Index rows, Index cols) {
  return t.matrix(rows, cols).template cast<Scalar>();
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

}  // namespace

template <typename Scalar>
struct StreamingModel<Scalar>::Impl {
  ModelConfig cfg;
  std::vector<ConvLayer<Scalar>> enc, far;
  std::vector<TransposeLayer<Scalar>> dec;
  TransposeLayer<Scalar> mask;
  std::vector<SkipLayer<Scalar>> skip;
  Scalar gain = 1;

  RMat<Scalar> w_ih, w_hh;
  CVec<Scalar> gru_b, h;

  bool align = false;
  RMat<Scalar> q_w, k_w;
  CVec<Scalar> q_b, k_b;
  std::vector<CVec<Scalar>> k_ring;
  std::vector<RMat<Scalar>> far_ring;
  std::vector<double> score;
  long t = 0;

  CVec<Scalar> pool_flat(const RMat<Scalar>& x) const {
    const int k = cfg.align_pool;
    const int fp = static_cast<int>(x.cols()) / k;
    CVec<Scalar> out(x.rows() * fp);
    for (Index c = 0; c < x.rows(); ++c)
      for (int j = 0; j < fp; ++j) out(c * fp + j) = x.row(c).segment(static_cast<Index>(j) * k, k).maxCoeff();
    return out;
  }

  RMat<Scalar> align_frame(const RMat<Scalar>& xm, const RMat<Scalar>& xf, std::vector<double>* delay) {
    const int dm = cfg.d_max;
    const auto slot = static_cast<std::size_t>(t % dm);
    const CVec<Scalar> q = q_w * pool_flat(xm) + q_b;
    k_ring[slot] = k_w * pool_flat(xf) + k_b;
    far_ring[slot] = xf;
    const long reach = std::min<long>(dm, t + 1);
    for (int d = 0; d < dm; ++d) {
      double dot = 0;
      if (d < reach) {
        const CVec<Scalar>& kv = k_ring[static_cast<std::size_t>((t - d) % dm)];
        for (Index i = 0; i < q.size(); ++i) dot += static_cast<double>(q(i)) * static_cast<double>(kv(i));
      }
      score[static_cast<std::size_t>(d)] = cfg.align_decay * score[static_cast<std::size_t>(d)] + dot;
    }
    const double mx = *std::max_element(score.begin(), score.end());
    std::vector<double> p(static_cast<std::size_t>(dm));
    double z = 0;
    for (int d = 0; d < dm; ++d) z += (p[static_cast<std::size_t>(d)] = std::exp(score[static_cast<std::size_t>(d)] - mx));
    for (auto& v : p) v /= z;
    RMat<Scalar> out = RMat<Scalar>::Zero(xf.rows(), xf.cols());
    for (int d = 0; d < reach; ++d)
      out += static_cast<Scalar>(p[static_cast<std::size_t>(d)]) * far_ring[static_cast<std::size_t>((t - d) % dm)];
    if (delay) *delay = std::move(p);
    return out;
  }

  void gru_step(const CVec<Scalar>& x) {
    const Index hn = h.size();
    const CVec<Scalar> a = w_ih * x + gru_b;
    const CVec<Scalar> u = w_hh * h;
    CVec<Scalar> hn_vec(hn);
    for (Index i = 0; i < hn; ++i) {
      const Scalar r = sigmoid<Scalar>(a(i) + u(i));
      const Scalar z = sigmoid<Scalar>(a(hn + i) + u(hn + i));
      const Scalar n = std::tanh(a(2 * hn + i) + r * u(2 * hn + i));
      hn_vec(i) = (Scalar(1) - z) * n + z * h(i);
    }
    h = std::move(hn_vec);
  }

  void reset() {
    for (auto& l : enc) l.reset();
    for (auto& l : far) l.reset();
    h.setZero();
    for (auto& k : k_ring) k.setZero();
    for (auto& f : far_ring) f.setZero();
    std::fill(score.begin(), score.end(), 0.0);
    t = 0;
  }
};

template <typename Scalar>
StreamingModel<Scalar>::StreamingModel(const ModelConfig& cfg, const ParamStore& params)
    : impl_(std::make_unique<Impl>()) {
  validate_params(params, cfg);
  Impl& m = *impl_;
  m.cfg = cfg;
  const int ns = static_cast<int>(cfg.mic_channels.size());
  const int nf = static_cast<int>(cfg.far_channels.size());
  int f = cfg.bins();
  for (int i = 0; i < ns; ++i) {
    m.enc.emplace_back().init(params, "enc" + std::to_string(i), cfg, f);
    if (i < nf) m.far.emplace_back().init(params, "far" + std::to_string(i), cfg, f);
    f = m.enc.back().fout;
  }
  const int nd = static_cast<int>(cfg.dec_channels.size());
  for (int k = 0; k < nd; ++k) {
    m.skip.emplace_back().init(params, "skip" + std::to_string(k));
    m.dec.emplace_back().init(params, "dec" + std::to_string(k), cfg, cfg.enc_bins(ns - 1 - k),
                              cfg.enc_bins(ns - 2 - k), true);
  }
  m.skip.emplace_back().init(params, "skip" + std::to_string(nd));
  m.mask.init(params, "mask", cfg, cfg.enc_bins(0), cfg.bins(), false);
  m.gain = static_cast<Scalar>(params.param("mask.gain")[0]);

  const int hsz = cfg.gru_hidden();
  m.w_ih = to_mat<Scalar>(params.param("gru.w_ih"), 3 * hsz, hsz);
  m.w_hh = to_mat<Scalar>(params.param("gru.w_hh"), 3 * hsz, hsz);
  m.gru_b = params.param("gru.b").vec().cast<Scalar>();
  m.h = CVec<Scalar>::Zero(hsz);

  m.align = cfg.variant == Variant::kAlignCruse;
  if (m.align) {
    const Tensor& qw = params.param("align.q.w");
    const Tensor& kw = params.param("align.k.w");
    m.q_w = to_mat<Scalar>(qw, qw.dim(0), qw.dim(1));
    m.k_w = to_mat<Scalar>(kw, kw.dim(0), kw.dim(1));
    m.q_b = params.param("align.q.b").vec().cast<Scalar>();
    m.k_b = params.param("align.k.b").vec().cast<Scalar>();
    m.k_ring.assign(static_cast<std::size_t>(cfg.d_max), CVec<Scalar>::Zero(cfg.proj));
    m.far_ring.assign(static_cast<std::size_t>(cfg.d_max),
                      RMat<Scalar>::Zero(cfg.far_channels.back(), cfg.enc_bins(nf - 1)));
    m.score.assign(static_cast<std::size_t>(cfg.d_max), 0.0);
  }
}

template <typename Scalar>
StreamingModel<Scalar>::~StreamingModel() = default;
template <typename Scalar>
StreamingModel<Scalar>::StreamingModel(StreamingModel&&) noexcept = default;
template <typename Scalar>
StreamingModel<Scalar>& StreamingModel<Scalar>::operator=(StreamingModel&&) noexcept = default;

template <typename Scalar>
int StreamingModel<Scalar>::bins() const {
  return impl_->cfg.bins();
}
template <typename Scalar>
long StreamingModel<Scalar>::frames() const {
  return impl_->t;
}
template <typename Scalar>
const ModelConfig& StreamingModel<Scalar>::config() const {
  return impl_->cfg;
}
template <typename Scalar>
void StreamingModel<Scalar>::reset() {
  impl_->reset();
}

template <typename Scalar>
void StreamingModel<Scalar>::step(std::span<const Scalar> mic_feat, std::span<const Scalar> far_feat,
                                  std::span<Scalar> mask, std::vector<double>* delay) {
  Impl& m = *impl_;
  const int nb = m.cfg.bins();
  require(static_cast<int>(mic_feat.size()) == nb && static_cast<int>(far_feat.size()) == nb &&
              static_cast<int>(mask.size()) == nb,
          ErrorKind::kShape, "streaming step: feature frames must hold " + std::to_string(nb) + " bins");
  const int ns = static_cast<int>(m.enc.size());
  const int nf = static_cast<int>(m.far.size());
  std::vector<RMat<Scalar>> enc(static_cast<std::size_t>(ns));
  RMat<Scalar> x = Eigen::Map<const RMat<Scalar>>(mic_feat.data(), 1, nb);
  RMat<Scalar> y = Eigen::Map<const RMat<Scalar>>(far_feat.data(), 1, nb);
  for (int i = 0; i < nf; ++i) {
    x = enc[static_cast<std::size_t>(i)] = m.enc[static_cast<std::size_t>(i)].apply(x);
    y = m.far[static_cast<std::size_t>(i)].apply(y);
  }
  if (m.align) y = m.align_frame(x, y, delay);
  RMat<Scalar> cat(x.rows() + y.rows(), x.cols());
  cat << x, y;
  x = std::move(cat);
  for (int i = nf; i < ns; ++i) x = enc[static_cast<std::size_t>(i)] = m.enc[static_cast<std::size_t>(i)].apply(x);

  const Index rows = x.rows(), cols = x.cols();
  m.gru_step(Eigen::Map<const CVec<Scalar>>(x.data(), rows * cols));
  x = Eigen::Map<const RMat<Scalar>>(m.h.data(), rows, cols);

  const int nd = static_cast<int>(m.dec.size());
  for (int k = 0; k < nd; ++k) {
    x = m.skip[static_cast<std::size_t>(k)].apply(enc[static_cast<std::size_t>(ns - 1 - k)], x);
    x = m.dec[static_cast<std::size_t>(k)].apply(x);
  }
  x = m.skip[static_cast<std::size_t>(nd)].apply(enc[0], x);
  const RMat<Scalar> logits = m.mask.apply(x);
  for (int j = 0; j < nb; ++j) mask[static_cast<std::size_t>(j)] = m.gain * sigmoid<Scalar>(logits(0, j));
  ++m.t;
}

// ---------------------------------------------------------------- enhancer

template <typename Scalar>
StreamingEnhancer<Scalar>::StreamingEnhancer(const ModelConfig& cfg, const ParamStore& params, bool identity_mask)
    : stft_(cfg.win_len),
      model_(cfg, params),
      mic_ana_(stft_),
      far_ana_(stft_),
      synth_(stft_),
      mic_feat_(static_cast<std::size_t>(cfg.bins())),
      far_feat_(static_cast<std::size_t>(cfg.bins())),
      mask_(static_cast<std::size_t>(cfg.bins())),
      identity_mask_(identity_mask) {}

template <typename Scalar>
std::vector<double> StreamingEnhancer<Scalar>::push(std::span<const double> mic, std::span<const double> far) {
  mic_in_ += mic.size();
  for (auto& s : mic_ana_.push(mic)) mic_q_.push_back(std::move(s));
  for (auto& s : far_ana_.push(far)) far_q_.push_back(std::move(s));
  return process_ready();
}

template <typename Scalar>
std::vector<double> StreamingEnhancer<Scalar>::process_ready() {
  std::vector<double> out;
  const bool align = model_.config().variant == Variant::kAlignCruse;
  while (!mic_q_.empty() && !far_q_.empty()) {
    const auto& ms = mic_q_.front();
    const auto& fs = far_q_.front();
    for (std::size_t k = 0; k < ms.size(); ++k) {
      mic_feat_[k] = static_cast<Scalar>(std::log(std::norm(ms[k]) + dsp::kLogPowerFloor));
      far_feat_[k] = static_cast<Scalar>(std::log(std::norm(fs[k]) + dsp::kLogPowerFloor));
    }
    model_.step(mic_feat_, far_feat_, mask_, align ? &delay_ : nullptr);
    if (align) delay_track_.push_back(static_cast<int>(std::max_element(delay_.begin(), delay_.end()) - delay_.begin()));
    std::vector<dsp::Complex> masked(ms.size());
    for (std::size_t k = 0; k < ms.size(); ++k)
      masked[k] = identity_mask_ ? ms[k] : static_cast<double>(mask_[k]) * ms[k];
    const auto y = synth_.push(masked);
    out.insert(out.end(), y.begin(), y.end());
    mic_q_.pop_front();
    far_q_.pop_front();
  }
  emitted_ += out.size();
  return out;
}

template <typename Scalar>
std::vector<double> StreamingEnhancer<Scalar>::flush() {
  // Mic frames without a matching far-end frame see a silent far end.
  while (mic_q_.size() > far_q_.size())
    far_q_.emplace_back(static_cast<std::size_t>(stft_.num_bins()), dsp::Complex(0.0, 0.0));
  std::vector<double> out = process_ready();
  emitted_ -= out.size();
  if (model_.frames() > 0) {
    const auto tail = synth_.flush();
    out.insert(out.end(), tail.begin(), tail.end());
  }
  const std::size_t want = mic_in_ > emitted_ ? mic_in_ - emitted_ : 0;
  out.resize(want, 0.0);
  emitted_ += out.size();
  return out;
}

template <typename Scalar>
void StreamingEnhancer<Scalar>::reset() {
  model_.reset();
  mic_ana_.reset();
  far_ana_.reset();
  synth_.reset();
  mic_q_.clear();
  far_q_.clear();
  delay_track_.clear();
  mic_in_ = emitted_ = 0;
}

template class StreamingModel<float>;
template class StreamingModel<double>;
template class StreamingEnhancer<float>;
template class StreamingEnhancer<double>;

}  // namespace acrs
