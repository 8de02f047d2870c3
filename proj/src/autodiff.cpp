// Copyright 2026 The aligncruse Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "aligncruse/autodiff.hpp"

#include <cmath>
#include <limits>

namespace acrs::ad {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, int rank, const char* what) {
  require(t.rank() == rank, ErrorKind::kShape,
          std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
              shape_string(t.shape()));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::kShape,
          std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
              shape_string(b.shape()));
}

ConstMatMap block(const Tensor& t, Index offset, Index rows, Index cols) {
  return ConstMatMap(t.data() + offset, rows, cols);
}
MatMap block(Tensor& t, Index offset, Index rows, Index cols) {
  return MatMap(t.data() + offset, rows, cols);
}

// Column matrix for one batch item of a causal convolution:
// row (c*kt_n + kt)*kf_n + kf, column t*fo + j.
void im2col(const Tensor& x, int n, int kt_n, int kf_n, const ConvGeometry& geo, int fo,
            RowMatrix& col) {
  const int ci_n = x.dim(1), t_n = x.dim(2), f_n = x.dim(3);
  col.setZero(static_cast<Index>(ci_n) * kt_n * kf_n, static_cast<Index>(t_n) * fo);
  for (int c = 0; c < ci_n; ++c)
    for (int kt = 0; kt < kt_n; ++kt)
      for (int kf = 0; kf < kf_n; ++kf) {
        double* row = col.row((static_cast<Index>(c) * kt_n + kt) * kf_n + kf).data();
        for (int t = 0; t < t_n; ++t) {
          const int ts = t - (kt_n - 1) + kt;
          if (ts < 0) continue;
          const double* src = x.data() + ((static_cast<Index>(n) * ci_n + c) * t_n + ts) * f_n;
          double* dst = row + static_cast<Index>(t) * fo;
          for (int j = 0; j < fo; ++j) {
            const int fs = j * geo.stride_f - geo.pad_f_lo + kf;
            if (fs >= 0 && fs < f_n) dst[j] = src[fs];
          }
        }
      }
}

void col2im_add(const RowMatrix& col, int n, int kt_n, int kf_n, const ConvGeometry& geo, int fo,
                Tensor& gx) {
  const int ci_n = gx.dim(1), t_n = gx.dim(2), f_n = gx.dim(3);
  for (int c = 0; c < ci_n; ++c)
    for (int kt = 0; kt < kt_n; ++kt)
      for (int kf = 0; kf < kf_n; ++kf) {
        const double* row = col.row((static_cast<Index>(c) * kt_n + kt) * kf_n + kf).data();
        for (int t = 0; t < t_n; ++t) {
          const int ts = t - (kt_n - 1) + kt;
          if (ts < 0) continue;
          double* dst = gx.data() + ((static_cast<Index>(n) * ci_n + c) * t_n + ts) * f_n;
          const double* src = row + static_cast<Index>(t) * fo;
          for (int j = 0; j < fo; ++j) {
            const int fs = j * geo.stride_f - geo.pad_f_lo + kf;
            if (fs >= 0 && fs < f_n) dst[fs] += src[j];
          }
        }
      }
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ------------------------------------------------------------------- graph

Var Graph::constant(Tensor value) {
  return record("constant", std::move(value), {}, nullptr);
}

Var Graph::variable(Tensor value) {
  Var v = record("variable", std::move(value), {}, nullptr);
  nodes_.back().requires_grad = true;
  return v;
}

Var Graph::parameter(const Tensor& value, Tensor* grad_sink) {
  Var v = variable(value);
  nodes_.back().sink = grad_sink;
  return v;
}

Var Graph::record(const char* op, Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
  require(!differentiated_, ErrorKind::kContract,
          "cannot record onto a differentiated graph; call reset()");
  if (!value.all_finite()) fail(ErrorKind::kNumeric, std::string("non-finite output from ") + op);
  Node node;
  node.value = std::move(value);
  for (const Var& in : inputs) {
    require(in.graph() == this, ErrorKind::kContract, std::string(op) + ": input from another graph");
    node.requires_grad = node.requires_grad || requires_grad(in);
  }
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

const Tensor& Graph::grad(Var v) {
  Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

Tensor* Graph::grad_buffer(Var v) {
  Node& node = nodes_[static_cast<std::size_t>(v.id())];
  if (!node.requires_grad) return nullptr;
  if (node.grad.empty()) node.grad = Tensor(node.value.shape());
  return &node.grad;
}

void Graph::backward(Var loss) {
  require(!differentiated_, ErrorKind::kContract,
          "backward() already ran on this graph; call reset() first");
  require(loss.graph() == this, ErrorKind::kContract, "loss belongs to another graph");
  require(value(loss).size() == 1, ErrorKind::kContract,
          "backward() root must be a scalar, got " + shape_string(value(loss).shape()));
  differentiated_ = true;
  for (auto& node : nodes_) node.grad = Tensor();
  Node& root = nodes_[static_cast<std::size_t>(loss.id())];
  if (!root.requires_grad) return;
  root.grad = Tensor(root.value.shape(), 1.0);
  for (int i = loss.id(); i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.backward && !node.grad.empty()) node.backward(*this, Var(this, i));
  }
  for (auto& node : nodes_) {
    if (!node.sink || node.grad.empty()) continue;
    if (node.sink->empty()) *node.sink = Tensor(node.value.shape());
    require_same_shape(*node.sink, node.grad, "parameter gradient");
    node.sink->vec() += node.grad.vec();
  }
}

void Graph::reset() {
  nodes_.clear();
  differentiated_ = false;
}

// ---------------------------------------------------------------- geometry

int conv_out_bins(int bins, int kernel_f, const ConvGeometry& geo) {
  const int span = bins + geo.pad_f_lo + geo.pad_f_hi - kernel_f;
  if (span < 0) return 0;
  return span / geo.stride_f + 1;
}

int transpose_out_bins(int bins, int kernel_f, const TransposeGeometry& geo) {
  return (bins - 1) * geo.stride_f + kernel_f - geo.crop_f_lo - geo.crop_f_hi;
}

// ------------------------------------------------------------ convolutions

Var conv2d_causal(Var x, Var w, Var b, const ConvGeometry& geo) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  require_rank(X, 4, "conv2d_causal input");
  require_rank(W, 4, "conv2d_causal weight");
  const int n_n = X.dim(0), ci_n = X.dim(1), t_n = X.dim(2), f_n = X.dim(3);
  const int co_n = W.dim(0), kt_n = W.dim(2), kf_n = W.dim(3);
  require(W.dim(1) == ci_n, ErrorKind::kShape,
          "conv2d_causal: weight expects " + std::to_string(W.dim(1)) + " input channels, got " +
              std::to_string(ci_n));
  require(B.size() == co_n, ErrorKind::kShape, "conv2d_causal: bias size mismatch");
  require(geo.stride_f >= 1, ErrorKind::kConfig, "conv2d_causal: stride must be >= 1");
  const int fo = conv_out_bins(f_n, kf_n, geo);
  require(fo >= 1, ErrorKind::kShape, "conv2d_causal: no output bins");

  Tensor Y({n_n, co_n, t_n, fo});
  const Index k_size = static_cast<Index>(ci_n) * kt_n * kf_n;
  const Index cols = static_cast<Index>(t_n) * fo;
  ConstMatMap wm(W.data(), co_n, k_size);
  RowMatrix col;
  for (int n = 0; n < n_n; ++n) {
    im2col(X, n, kt_n, kf_n, geo, fo, col);
    auto yn = block(Y, static_cast<Index>(n) * co_n * cols, co_n, cols);
    yn.noalias() = wm * col;
    yn.colwise() += B.vec();
  }

  return x.graph()->record("conv2d_causal", std::move(Y), {x, w, b},
                           [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    const Tensor& Xv = g.value(x);
    const Tensor& Wv = g.value(w);
    Tensor* gx = g.grad_buffer(x);
    Tensor* gw = g.grad_buffer(w);
    Tensor* gb = g.grad_buffer(b);
    ConstMatMap wmv(Wv.data(), co_n, k_size);
    RowMatrix colv, dcol;
    for (int n = 0; n < n_n; ++n) {
      auto gyn = block(gy, static_cast<Index>(n) * co_n * cols, co_n, cols);
      if (gb) gb->vec() += gyn.rowwise().sum();
      if (gw) {
        im2col(Xv, n, kt_n, kf_n, geo, fo, colv);
        MatMap(gw->data(), co_n, k_size).noalias() += gyn * colv.transpose();
      }
      if (gx) {
        dcol.noalias() = wmv.transpose() * gyn;
        col2im_add(dcol, n, kt_n, kf_n, geo, fo, *gx);
      }
    }
  });
}

Var conv2d_transpose(Var x, Var w, Var b, const TransposeGeometry& geo) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& B = b.value();
  require_rank(X, 4, "conv2d_transpose input");
  require_rank(W, 4, "conv2d_transpose weight");
  const int n_n = X.dim(0), ci_n = X.dim(1), t_n = X.dim(2), f_n = X.dim(3);
  const int co_n = W.dim(1), kf_n = W.dim(3);
  require(W.dim(0) == ci_n, ErrorKind::kShape,
          "conv2d_transpose: weight expects " + std::to_string(W.dim(0)) +
              " input channels, got " + std::to_string(ci_n));
  require(W.dim(2) == 1, ErrorKind::kShape, "conv2d_transpose: time kernel must be 1 (causal)");
  require(B.size() == co_n, ErrorKind::kShape, "conv2d_transpose: bias size mismatch");
  const int fo = transpose_out_bins(f_n, kf_n, geo);
  require(fo >= 1 && geo.crop_f_lo >= 0 && geo.crop_f_hi >= 0, ErrorKind::kShape,
          "conv2d_transpose: invalid output geometry");

  const Index cols = static_cast<Index>(t_n) * f_n;
  const Index zrows = static_cast<Index>(co_n) * kf_n;
  ConstMatMap wm(W.data(), ci_n, zrows);
  Tensor Y({n_n, co_n, t_n, fo});
  RowMatrix z;
  for (int n = 0; n < n_n; ++n) {
    z.noalias() = wm.transpose() * block(X, static_cast<Index>(n) * ci_n * cols, ci_n, cols);
    for (int o = 0; o < co_n; ++o) {
      double* yo = Y.data() + (static_cast<Index>(n) * co_n + o) * t_n * fo;
      for (int t = 0; t < t_n; ++t) std::fill(yo + static_cast<Index>(t) * fo, yo + static_cast<Index>(t + 1) * fo, B[o]);
      for (int kf = 0; kf < kf_n; ++kf) {
        const double* zr = z.row(static_cast<Index>(o) * kf_n + kf).data();
        for (int t = 0; t < t_n; ++t)
          for (int i = 0; i < f_n; ++i) {
            const int j = i * geo.stride_f - geo.crop_f_lo + kf;
            if (j >= 0 && j < fo) yo[static_cast<Index>(t) * fo + j] += zr[static_cast<Index>(t) * f_n + i];
          }
      }
    }
  }

  return x.graph()->record("conv2d_transpose", std::move(Y), {x, w, b},
                           [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    const Tensor& Xv = g.value(x);
    const Tensor& Wv = g.value(w);
    Tensor* gx = g.grad_buffer(x);
    Tensor* gw = g.grad_buffer(w);
    Tensor* gb = g.grad_buffer(b);
    ConstMatMap wmv(Wv.data(), ci_n, zrows);
    RowMatrix dz(zrows, cols);
    for (int n = 0; n < n_n; ++n) {
      dz.setZero();
      for (int o = 0; o < co_n; ++o) {
        const double* go = gy.data() + (static_cast<Index>(n) * co_n + o) * t_n * fo;
        if (gb) {
          double s = 0;
          for (Index i = 0; i < static_cast<Index>(t_n) * fo; ++i) s += go[i];
          (*gb)[o] += s;
        }
        for (int kf = 0; kf < kf_n; ++kf) {
          double* dzr = dz.row(static_cast<Index>(o) * kf_n + kf).data();
          for (int t = 0; t < t_n; ++t)
            for (int i = 0; i < f_n; ++i) {
              const int j = i * geo.stride_f - geo.crop_f_lo + kf;
              if (j >= 0 && j < fo) dzr[static_cast<Index>(t) * f_n + i] = go[static_cast<Index>(t) * fo + j];
            }
        }
      }
      if (gx) block(*gx, static_cast<Index>(n) * ci_n * cols, ci_n, cols).noalias() += wmv * dz;
      if (gw)
        MatMap(gw->data(), ci_n, zrows).noalias() +=
            block(Xv, static_cast<Index>(n) * ci_n * cols, ci_n, cols) * dz.transpose();
    }
  });
}

// ------------------------------------------------------------- batch norm

Var batch_norm_train(Var x, Var gamma, Var beta, BatchStats* stats) {
  const Tensor& X = x.value();
  require_rank(X, 4, "batch_norm input");
  const int n_n = X.dim(0), c_n = X.dim(1);
  const Index inner = static_cast<Index>(X.dim(2)) * X.dim(3);
  require(gamma.value().size() == c_n && beta.value().size() == c_n, ErrorKind::kShape,
          "batch_norm: affine parameter size mismatch");
  const double count = static_cast<double>(n_n) * static_cast<double>(inner);
  std::vector<double> mean(static_cast<std::size_t>(c_n), 0.0), var(static_cast<std::size_t>(c_n), 0.0);
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c) {
      const double* p = X.data() + (static_cast<Index>(n) * c_n + c) * inner;
      double s = 0;
      for (Index i = 0; i < inner; ++i) s += p[i];
      mean[static_cast<std::size_t>(c)] += s;
    }
  for (auto& m : mean) m /= count;
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c) {
      const double* p = X.data() + (static_cast<Index>(n) * c_n + c) * inner;
      const double m = mean[static_cast<std::size_t>(c)];
      double s = 0;
      for (Index i = 0; i < inner; ++i) s += (p[i] - m) * (p[i] - m);
      var[static_cast<std::size_t>(c)] += s;
    }
  for (auto& v : var) v /= count;
  std::vector<double> inv_std(static_cast<std::size_t>(c_n));
  for (int c = 0; c < c_n; ++c) inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(var[static_cast<std::size_t>(c)] + kBatchNormEps);

  const Tensor& G = gamma.value();
  const Tensor& Bt = beta.value();
  Tensor Y(X.shape());
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c) {
      const Index off = (static_cast<Index>(n) * c_n + c) * inner;
      const double m = mean[static_cast<std::size_t>(c)], s = inv_std[static_cast<std::size_t>(c)];
      for (Index i = 0; i < inner; ++i) Y[off + i] = G[c] * (X[off + i] - m) * s + Bt[c];
    }
  if (stats) {
    stats->mean = mean;
    stats->var = var;
  }

  return x.graph()->record("batch_norm_train", std::move(Y), {x, gamma, beta},
                           [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    const Tensor& Xv = g.value(x);
    const Tensor& Gv = g.value(gamma);
    Tensor* gx = g.grad_buffer(x);
    Tensor* gg = g.grad_buffer(gamma);
    Tensor* gbt = g.grad_buffer(beta);
    for (int c = 0; c < c_n; ++c) {
      const double m = mean[static_cast<std::size_t>(c)], s = inv_std[static_cast<std::size_t>(c)];
      double sum_dy = 0, sum_dy_xhat = 0;
      for (int n = 0; n < n_n; ++n) {
        const Index off = (static_cast<Index>(n) * c_n + c) * inner;
        for (Index i = 0; i < inner; ++i) {
          sum_dy += gy[off + i];
          sum_dy_xhat += gy[off + i] * (Xv[off + i] - m) * s;
        }
      }
      if (gg) (*gg)[c] += sum_dy_xhat;
      if (gbt) (*gbt)[c] += sum_dy;
      if (gx) {
        const double k = Gv[c] * s / count;
        for (int n = 0; n < n_n; ++n) {
          const Index off = (static_cast<Index>(n) * c_n + c) * inner;
          for (Index i = 0; i < inner; ++i) {
            const double xhat = (Xv[off + i] - m) * s;
            (*gx)[off + i] += k * (count * gy[off + i] - sum_dy - xhat * sum_dy_xhat);
          }
        }
      }
    }
  });
}

Var batch_norm_infer(Var x, Var gamma, Var beta, const Tensor& running_mean,
                     const Tensor& running_var) {
  const Tensor& X = x.value();
  require_rank(X, 4, "batch_norm input");
  const int n_n = X.dim(0), c_n = X.dim(1);
  const Index inner = static_cast<Index>(X.dim(2)) * X.dim(3);
  require(running_mean.size() == c_n && running_var.size() == c_n, ErrorKind::kContract,
          "batch_norm: inference requires frozen running statistics");
  require(gamma.value().size() == c_n && beta.value().size() == c_n, ErrorKind::kShape,
          "batch_norm: affine parameter size mismatch");
  std::vector<double> mean(running_mean.values().begin(), running_mean.values().end());
  std::vector<double> inv_std(static_cast<std::size_t>(c_n));
  for (int c = 0; c < c_n; ++c) inv_std[static_cast<std::size_t>(c)] = 1.0 / std::sqrt(running_var[c] + kBatchNormEps);
  const Tensor& G = gamma.value();
  const Tensor& Bt = beta.value();
  Tensor Y(X.shape());
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c) {
      const Index off = (static_cast<Index>(n) * c_n + c) * inner;
      const double m = mean[static_cast<std::size_t>(c)], s = inv_std[static_cast<std::size_t>(c)];
      for (Index i = 0; i < inner; ++i) Y[off + i] = G[c] * (X[off + i] - m) * s + Bt[c];
    }
  return x.graph()->record("batch_norm_infer", std::move(Y), {x, gamma, beta},
                           [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    const Tensor& Xv = g.value(x);
    const Tensor& Gv = g.value(gamma);
    Tensor* gx = g.grad_buffer(x);
    Tensor* gg = g.grad_buffer(gamma);
    Tensor* gbt = g.grad_buffer(beta);
    for (int n = 0; n < n_n; ++n)
      for (int c = 0; c < c_n; ++c) {
        const Index off = (static_cast<Index>(n) * c_n + c) * inner;
        const double m = mean[static_cast<std::size_t>(c)], s = inv_std[static_cast<std::size_t>(c)];
        for (Index i = 0; i < inner; ++i) {
          if (gx) (*gx)[off + i] += gy[off + i] * Gv[c] * s;
          if (gg) (*gg)[c] += gy[off + i] * (Xv[off + i] - m) * s;
          if (gbt) (*gbt)[c] += gy[off + i];
        }
      }
  });
}

// ------------------------------------------------------------- activations

Var elu(Var x) {
  const Tensor& X = x.value();
  Tensor Y(X.shape());
  for (Index i = 0; i < X.size(); ++i) Y[i] = X[i] > 0 ? X[i] : std::expm1(X[i]);
  return x.graph()->record("elu", std::move(Y), {x}, [=](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    const Tensor& Xv = g.value(x);
    const Tensor& Yv = g.value(self);
    for (Index i = 0; i < Xv.size(); ++i) (*gx)[i] += gy[i] * (Xv[i] > 0 ? 1.0 : Yv[i] + 1.0);
  });
}

Var sigmoid(Var x) {
  const Tensor& X = x.value();
  Tensor Y(X.shape());
  for (Index i = 0; i < X.size(); ++i) Y[i] = stable_sigmoid(X[i]);
  return x.graph()->record("sigmoid", std::move(Y), {x}, [=](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    const Tensor& Yv = g.value(self);
    for (Index i = 0; i < Yv.size(); ++i) (*gx)[i] += gy[i] * Yv[i] * (1.0 - Yv[i]);
  });
}

Var tanh(Var x) {
  const Tensor& X = x.value();
  Tensor Y(X.shape());
  for (Index i = 0; i < X.size(); ++i) Y[i] = std::tanh(X[i]);
  return x.graph()->record("tanh", std::move(Y), {x}, [=](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    const Tensor& Yv = g.value(self);
    for (Index i = 0; i < Yv.size(); ++i) (*gx)[i] += gy[i] * (1.0 - Yv[i] * Yv[i]);
  });
}

Var softmax_lastdim(Var x) {
  const Tensor& X = x.value();
  require(X.rank() >= 1 && X.dim(-1) >= 1, ErrorKind::kShape, "softmax: empty last dimension");
  const Index d = X.dim(-1);
  const Index rows = X.size() / d;
  Tensor Y(X.shape());
  for (Index r = 0; r < rows; ++r) {
    const double* in = X.data() + r * d;
    double* out = Y.data() + r * d;
    const double mx = *std::max_element(in, in + d);
    double s = 0;
    for (Index i = 0; i < d; ++i) s += (out[i] = std::exp(in[i] - mx));
    for (Index i = 0; i < d; ++i) out[i] /= s;
  }
  return x.graph()->record("softmax", std::move(Y), {x}, [=](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    const Tensor& Yv = g.value(self);
    for (Index r = 0; r < rows; ++r) {
      double dot = 0;
      for (Index i = 0; i < d; ++i) dot += gy[r * d + i] * Yv[r * d + i];
      for (Index i = 0; i < d; ++i) (*gx)[r * d + i] += Yv[r * d + i] * (gy[r * d + i] - dot);
    }
  });
}

// ----------------------------------------------------------------- pooling

Var max_pool_freq(Var x, int k) {
  const Tensor& X = x.value();
  require_rank(X, 4, "max_pool_freq input");
  require(k >= 1, ErrorKind::kConfig, "max_pool_freq: kernel must be >= 1");
  const int f_n = X.dim(3);
  require(f_n >= k, ErrorKind::kShape,
          "max_pool_freq: " + std::to_string(f_n) + " bins < kernel " + std::to_string(k));
  const int fo = f_n / k;
  const Index rows = X.size() / f_n;
  Tensor Y({X.dim(0), X.dim(1), X.dim(2), fo});
  std::vector<Index> arg(static_cast<std::size_t>(rows * fo));
  for (Index r = 0; r < rows; ++r)
    for (int j = 0; j < fo; ++j) {
      Index best = r * f_n + static_cast<Index>(j) * k;
      for (int i = 1; i < k; ++i) {
        const Index idx = r * f_n + static_cast<Index>(j) * k + i;
        if (X[idx] > X[best]) best = idx;
      }
      Y[r * fo + j] = X[best];
      arg[static_cast<std::size_t>(r * fo + j)] = best;
    }
  return x.graph()->record("max_pool_freq", std::move(Y), {x},
                           [x, arg = std::move(arg)](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    for (std::size_t i = 0; i < arg.size(); ++i) (*gx)[arg[i]] += gy[static_cast<Index>(i)];
  });
}

// ------------------------------------------------------------------ linear

Var linear(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  require_rank(W, 2, "linear weight");
  const int in_n = W.dim(1), out_n = W.dim(0);
  require(X.rank() >= 1 && X.dim(-1) == in_n, ErrorKind::kShape,
          "linear: input " + shape_string(X.shape()) + " vs weight " + shape_string(W.shape()));
  require(b.value().size() == out_n, ErrorKind::kShape, "linear: bias size mismatch");
  const Index rows = X.size() / in_n;
  Shape out_shape = X.shape();
  out_shape.back() = out_n;
  Tensor Y(out_shape);
  auto ym = block(Y, 0, rows, out_n);
  ym.noalias() = block(X, 0, rows, in_n) * ConstMatMap(W.data(), out_n, in_n).transpose();
  ym.rowwise() += b.value().vec().transpose();
  return x.graph()->record("linear", std::move(Y), {x, w, b}, [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    auto gym = block(gy, 0, rows, out_n);
    if (Tensor* gx = g.grad_buffer(x))
      block(*gx, 0, rows, in_n).noalias() += gym * ConstMatMap(g.value(w).data(), out_n, in_n);
    if (Tensor* gw = g.grad_buffer(w))
      block(*gw, 0, out_n, in_n).noalias() += gym.transpose() * block(g.value(x), 0, rows, in_n);
    if (Tensor* gb = g.grad_buffer(b)) gb->vec() += gym.colwise().sum().transpose();
  });
}

// ------------------------------------------------------------------ layout

Var flatten_cf(Var x) {
  const Tensor& X = x.value();
  require_rank(X, 4, "flatten_cf input");
  const int n_n = X.dim(0), c_n = X.dim(1), t_n = X.dim(2), f_n = X.dim(3);
  Tensor Y({n_n, t_n, c_n * f_n});
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c)
      for (int t = 0; t < t_n; ++t)
        for (int f = 0; f < f_n; ++f)
          Y[(static_cast<Index>(n) * t_n + t) * c_n * f_n + c * f_n + f] = X.at(n, c, t, f);
  return x.graph()->record("flatten_cf", std::move(Y), {x}, [=](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    for (int n = 0; n < n_n; ++n)
      for (int c = 0; c < c_n; ++c)
        for (int t = 0; t < t_n; ++t)
          for (int f = 0; f < f_n; ++f)
            gx->at(n, c, t, f) += gy[(static_cast<Index>(n) * t_n + t) * c_n * f_n + c * f_n + f];
  });
}

Var unflatten_cf(Var x, int channels) {
  const Tensor& X = x.value();
  require_rank(X, 3, "unflatten_cf input");
  require(channels > 0 && X.dim(2) % channels == 0, ErrorKind::kShape,
          "unflatten_cf: feature size not divisible by channel count");
  const int n_n = X.dim(0), t_n = X.dim(1), c_n = channels, f_n = X.dim(2) / channels;
  Tensor Y({n_n, c_n, t_n, f_n});
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c)
      for (int t = 0; t < t_n; ++t)
        for (int f = 0; f < f_n; ++f)
          Y.at(n, c, t, f) = X[(static_cast<Index>(n) * t_n + t) * c_n * f_n + c * f_n + f];
  return x.graph()->record("unflatten_cf", std::move(Y), {x}, [=](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor& gy = g.grad(self);
    for (int n = 0; n < n_n; ++n)
      for (int c = 0; c < c_n; ++c)
        for (int t = 0; t < t_n; ++t)
          for (int f = 0; f < f_n; ++f)
            (*gx)[(static_cast<Index>(n) * t_n + t) * c_n * f_n + c * f_n + f] += gy.at(n, c, t, f);
  });
}

Var concat_channels(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank(A, 4, "concat_channels");
  require_rank(B, 4, "concat_channels");
  require(A.dim(0) == B.dim(0) && A.dim(2) == B.dim(2) && A.dim(3) == B.dim(3), ErrorKind::kShape,
          "concat_channels: " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  const int n_n = A.dim(0), ca = A.dim(1), cb = B.dim(1);
  const Index inner = static_cast<Index>(A.dim(2)) * A.dim(3);
  Tensor Y({n_n, ca + cb, A.dim(2), A.dim(3)});
  for (int n = 0; n < n_n; ++n) {
    std::copy_n(A.data() + static_cast<Index>(n) * ca * inner, ca * inner,
                Y.data() + static_cast<Index>(n) * (ca + cb) * inner);
    std::copy_n(B.data() + static_cast<Index>(n) * cb * inner, cb * inner,
                Y.data() + (static_cast<Index>(n) * (ca + cb) + ca) * inner);
  }
  return a.graph()->record("concat_channels", std::move(Y), {a, b}, [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    Tensor* ga = g.grad_buffer(a);
    Tensor* gb = g.grad_buffer(b);
    for (int n = 0; n < n_n; ++n) {
      const double* src = gy.data() + static_cast<Index>(n) * (ca + cb) * inner;
      if (ga)
        for (Index i = 0; i < ca * inner; ++i) (*ga)[static_cast<Index>(n) * ca * inner + i] += src[i];
      if (gb)
        for (Index i = 0; i < cb * inner; ++i) (*gb)[static_cast<Index>(n) * cb * inner + i] += src[ca * inner + i];
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor Y(a.value().shape());
  Y.vec() = a.value().vec() + b.value().vec();
  return a.graph()->record("add", std::move(Y), {a, b}, [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* ga = g.grad_buffer(a)) ga->vec() += gy.vec();
    if (Tensor* gb = g.grad_buffer(b)) gb->vec() += gy.vec();
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a.value(), b.value(), "mul");
  Tensor Y(a.value().shape());
  Y.vec() = a.value().vec().cwiseProduct(b.value().vec());
  return a.graph()->record("mul", std::move(Y), {a, b}, [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* ga = g.grad_buffer(a)) ga->vec() += gy.vec().cwiseProduct(g.value(b).vec());
    if (Tensor* gb = g.grad_buffer(b)) gb->vec() += gy.vec().cwiseProduct(g.value(a).vec());
  });
}

Var scale(Var x, Var s) {
  require(s.value().size() == 1, ErrorKind::kShape, "scale: factor must hold one element");
  Tensor Y(x.value().shape());
  Y.vec() = x.value().vec() * s.value()[0];
  return x.graph()->record("scale", std::move(Y), {x, s}, [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    if (Tensor* gx = g.grad_buffer(x)) gx->vec() += gy.vec() * g.value(s)[0];
    if (Tensor* gs = g.grad_buffer(s)) (*gs)[0] += gy.vec().dot(g.value(x).vec());
  });
}

// --------------------------------------------------------------------- GRU

Var gru(Var x, const GruWeights& weights, const Tensor& h0, Tensor* h_last) {
  const Tensor& X = x.value();
  const Tensor& Wih = weights.w_ih.value();
  const Tensor& Whh = weights.w_hh.value();
  const Tensor& Bias = weights.bias.value();
  require_rank(X, 3, "gru input");
  require_rank(Wih, 2, "gru w_ih");
  require_rank(Whh, 2, "gru w_hh");
  const int n_n = X.dim(0), t_n = X.dim(1), in_n = X.dim(2);
  const int h_n = Whh.dim(1);
  require(Wih.dim(0) == 3 * h_n && Wih.dim(1) == in_n && Whh.dim(0) == 3 * h_n &&
              Bias.size() == 3 * h_n,
          ErrorKind::kShape, "gru: weight shapes inconsistent with input " + shape_string(X.shape()));
  require(h0.empty() || (h0.size() == static_cast<Index>(n_n) * h_n), ErrorKind::kShape,
          "gru: initial state must be (N, h)");

  ConstMatMap wih(Wih.data(), 3 * h_n, in_n);
  ConstMatMap whh(Whh.data(), 3 * h_n, h_n);
  // Input projections for every (n, t) row at once.
  RowMatrix a = block(X, 0, static_cast<Index>(n_n) * t_n, in_n) * wih.transpose();
  a.rowwise() += Bias.vec().transpose();

  struct Saved {
    std::vector<RowMatrix> r, z, nn, un, hprev;
  };
  auto saved = std::make_shared<Saved>();
  saved->r.resize(static_cast<std::size_t>(t_n));
  saved->z.resize(static_cast<std::size_t>(t_n));
  saved->nn.resize(static_cast<std::size_t>(t_n));
  saved->un.resize(static_cast<std::size_t>(t_n));
  saved->hprev.resize(static_cast<std::size_t>(t_n));

  RowMatrix h = h0.empty() ? RowMatrix::Zero(n_n, h_n) : RowMatrix(ConstMatMap(h0.data(), n_n, h_n));
  Tensor Y({n_n, t_n, h_n});
  RowMatrix at(n_n, 3 * h_n), u;
  for (int t = 0; t < t_n; ++t) {
    for (int n = 0; n < n_n; ++n) at.row(n) = a.row(static_cast<Index>(n) * t_n + t);
    u.noalias() = h * whh.transpose();
    RowMatrix r = (at.leftCols(h_n) + u.leftCols(h_n)).unaryExpr(&stable_sigmoid);
    RowMatrix z = (at.middleCols(h_n, h_n) + u.middleCols(h_n, h_n)).unaryExpr(&stable_sigmoid);
    RowMatrix un = u.rightCols(h_n);
    RowMatrix nn = (at.rightCols(h_n).array() + r.array() * un.array()).tanh().matrix();
    RowMatrix hn = ((1.0 - z.array()) * nn.array() + z.array() * h.array()).matrix();
    for (int n = 0; n < n_n; ++n)
      Eigen::Map<Eigen::RowVectorXd>(Y.data() + (static_cast<Index>(n) * t_n + t) * h_n, h_n) = hn.row(n);
    const auto ti = static_cast<std::size_t>(t);
    saved->r[ti] = std::move(r);
    saved->z[ti] = std::move(z);
    saved->nn[ti] = std::move(nn);
    saved->un[ti] = std::move(un);
    saved->hprev[ti] = std::move(h);
    h = std::move(hn);
  }
  if (h_last) *h_last = Tensor({n_n, h_n}, std::vector<double>(h.data(), h.data() + h.size()));

  Var w_ih = weights.w_ih, w_hh = weights.w_hh, bias = weights.bias;
  return x.graph()->record("gru", std::move(Y), {x, w_ih, w_hh, bias},
                           [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    ConstMatMap wihv(g.value(w_ih).data(), 3 * h_n, in_n);
    ConstMatMap whhv(g.value(w_hh).data(), 3 * h_n, h_n);
    RowMatrix da(static_cast<Index>(n_n) * t_n, 3 * h_n);
    RowMatrix carry = RowMatrix::Zero(n_n, h_n);
    RowMatrix gwhh = RowMatrix::Zero(3 * h_n, h_n);
    RowMatrix du(n_n, 3 * h_n);
    for (int t = t_n - 1; t >= 0; --t) {
      const auto ti = static_cast<std::size_t>(t);
      const auto& r = saved->r[ti];
      const auto& z = saved->z[ti];
      const auto& nn = saved->nn[ti];
      const auto& un = saved->un[ti];
      const auto& hp = saved->hprev[ti];
      RowMatrix gh = carry;
      for (int n = 0; n < n_n; ++n)
        gh.row(n) += Eigen::Map<const Eigen::RowVectorXd>(gy.data() + (static_cast<Index>(n) * t_n + t) * h_n, h_n);
      const auto dnn = (gh.array() * (1.0 - z.array())).eval();
      const auto dz = (gh.array() * (hp.array() - nn.array())).eval();
      const auto dan = (dnn * (1.0 - nn.array().square())).eval();
      const auto dr = (dan * un.array()).eval();
      const auto dar = (dr * r.array() * (1.0 - r.array())).eval();
      const auto daz = (dz * z.array() * (1.0 - z.array())).eval();
      du.leftCols(h_n) = dar.matrix();
      du.middleCols(h_n, h_n) = daz.matrix();
      du.rightCols(h_n) = (dan * r.array()).matrix();
      for (int n = 0; n < n_n; ++n) {
        const Index row = static_cast<Index>(n) * t_n + t;
        da.row(row).head(h_n) = dar.row(n);
        da.row(row).segment(h_n, h_n) = daz.row(n);
        da.row(row).tail(h_n) = dan.row(n);
      }
      carry = (gh.array() * z.array()).matrix();
      carry.noalias() += du * whhv;
      gwhh.noalias() += du.transpose() * hp;
    }
    if (Tensor* gx = g.grad_buffer(x))
      block(*gx, 0, static_cast<Index>(n_n) * t_n, in_n).noalias() += da * wihv;
    if (Tensor* gw = g.grad_buffer(w_ih))
      block(*gw, 0, 3 * h_n, in_n).noalias() +=
          da.transpose() * block(g.value(x), 0, static_cast<Index>(n_n) * t_n, in_n);
    if (Tensor* gw = g.grad_buffer(w_hh)) block(*gw, 0, 3 * h_n, h_n) += gwhh;
    if (Tensor* gb = g.grad_buffer(bias)) gb->vec() += da.colwise().sum().transpose();
  });
}

// --------------------------------------------------------------- alignment

Var delay_scores(Var q, Var k, int d_max) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  require_rank(Q, 3, "delay_scores query");
  require_same_shape(Q, K, "delay_scores");
  require(d_max >= 1, ErrorKind::kConfig, "delay_scores: d_max must be >= 1");
  const int n_n = Q.dim(0), t_n = Q.dim(1), p_n = Q.dim(2);
  require(t_n >= 1, ErrorKind::kShape, "delay_scores: need at least one frame");
  Tensor S({n_n, d_max});
  for (int n = 0; n < n_n; ++n) {
    auto qm = block(Q, static_cast<Index>(n) * t_n * p_n, t_n, p_n);
    auto km = block(K, static_cast<Index>(n) * t_n * p_n, t_n, p_n);
    for (int d = 0; d < std::min(d_max, t_n); ++d)
      S[static_cast<Index>(n) * d_max + d] =
          qm.bottomRows(t_n - d).cwiseProduct(km.topRows(t_n - d)).sum();
  }
  return q.graph()->record("delay_scores", std::move(S), {q, k}, [=](Graph& g, Var self) {
    const Tensor& gs = g.grad(self);
    Tensor* gq = g.grad_buffer(q);
    Tensor* gk = g.grad_buffer(k);
    for (int n = 0; n < n_n; ++n) {
      const Index off = static_cast<Index>(n) * t_n * p_n;
      auto qm = block(g.value(q), off, t_n, p_n);
      auto km = block(g.value(k), off, t_n, p_n);
      for (int d = 0; d < std::min(d_max, t_n); ++d) {
        const double gd = gs[static_cast<Index>(n) * d_max + d];
        if (gq) block(*gq, off, t_n, p_n).bottomRows(t_n - d) += gd * km.topRows(t_n - d);
        if (gk) block(*gk, off, t_n, p_n).topRows(t_n - d) += gd * qm.bottomRows(t_n - d);
      }
    }
  });
}

Var causal_delay_scores(Var q, Var k, int d_max, double decay) {
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  require_rank(Q, 3, "causal_delay_scores query");
  require_same_shape(Q, K, "causal_delay_scores");
  require(d_max >= 1, ErrorKind::kConfig, "causal_delay_scores: d_max must be >= 1");
  const int n_n = Q.dim(0), t_n = Q.dim(1), p_n = Q.dim(2);
  Tensor S({n_n, t_n, d_max});
  for (int n = 0; n < n_n; ++n) {
    const Index off = static_cast<Index>(n) * t_n * p_n;
    auto qm = block(Q, off, t_n, p_n);
    auto km = block(K, off, t_n, p_n);
    double* s = S.data() + static_cast<Index>(n) * t_n * d_max;
    for (int t = 0; t < t_n; ++t) {
      for (int d = 0; d < d_max; ++d) {
        const double prev = t > 0 ? s[static_cast<Index>(t - 1) * d_max + d] : 0.0;
        const double cur = t - d >= 0 ? qm.row(t).dot(km.row(t - d)) : 0.0;
        s[static_cast<Index>(t) * d_max + d] = decay * prev + cur;
      }
    }
  }
  return q.graph()->record("causal_delay_scores", std::move(S), {q, k}, [=](Graph& g, Var self) {
    const Tensor& gs = g.grad(self);
    Tensor* gq = g.grad_buffer(q);
    Tensor* gk = g.grad_buffer(k);
    std::vector<double> acc(static_cast<std::size_t>(d_max));
    for (int n = 0; n < n_n; ++n) {
      const Index off = static_cast<Index>(n) * t_n * p_n;
      auto qm = block(g.value(q), off, t_n, p_n);
      auto km = block(g.value(k), off, t_n, p_n);
      const double* gsn = gs.data() + static_cast<Index>(n) * t_n * d_max;
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int t = t_n - 1; t >= 0; --t)
        for (int d = 0; d < d_max; ++d) {
          auto& a = acc[static_cast<std::size_t>(d)];
          a = gsn[static_cast<Index>(t) * d_max + d] + decay * a;
          if (t - d < 0 || a == 0.0) continue;
          if (gq) block(*gq, off, t_n, p_n).row(t) += a * km.row(t - d);
          if (gk) block(*gk, off, t_n, p_n).row(t - d) += a * qm.row(t);
        }
    }
  });
}

Var soft_shift(Var x, Var weights) {
  const Tensor& X = x.value();
  const Tensor& D = weights.value();
  require_rank(X, 4, "soft_shift input");
  require_rank(D, 2, "soft_shift weights");
  require(D.dim(0) == X.dim(0), ErrorKind::kShape, "soft_shift: batch mismatch");
  const int n_n = X.dim(0), c_n = X.dim(1), t_n = X.dim(2), f_n = X.dim(3), d_n = D.dim(1);
  Tensor Y(X.shape());
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c) {
      const Index base = (static_cast<Index>(n) * c_n + c) * t_n * f_n;
      auto xm = block(X, base, t_n, f_n);
      auto ym = block(Y, base, t_n, f_n);
      for (int d = 0; d < std::min(d_n, t_n); ++d)
        ym.bottomRows(t_n - d) += D[static_cast<Index>(n) * d_n + d] * xm.topRows(t_n - d);
    }
  return x.graph()->record("soft_shift", std::move(Y), {x, weights}, [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    const Tensor& Xv = g.value(x);
    const Tensor& Dv = g.value(weights);
    Tensor* gx = g.grad_buffer(x);
    Tensor* gd = g.grad_buffer(weights);
    for (int n = 0; n < n_n; ++n)
      for (int c = 0; c < c_n; ++c) {
        const Index base = (static_cast<Index>(n) * c_n + c) * t_n * f_n;
        auto gym = block(gy, base, t_n, f_n);
        auto xm = block(Xv, base, t_n, f_n);
        for (int d = 0; d < std::min(d_n, t_n); ++d) {
          if (gx) block(*gx, base, t_n, f_n).topRows(t_n - d) += Dv[static_cast<Index>(n) * d_n + d] * gym.bottomRows(t_n - d);
          if (gd) (*gd)[static_cast<Index>(n) * d_n + d] += gym.bottomRows(t_n - d).cwiseProduct(xm.topRows(t_n - d)).sum();
        }
      }
  });
}

Var soft_shift_causal(Var x, Var weights) {
  const Tensor& X = x.value();
  const Tensor& D = weights.value();
  require_rank(X, 4, "soft_shift_causal input");
  require_rank(D, 3, "soft_shift_causal weights");
  require(D.dim(0) == X.dim(0) && D.dim(1) == X.dim(2), ErrorKind::kShape,
          "soft_shift_causal: weights must be (N, T, d_max)");
  const int n_n = X.dim(0), c_n = X.dim(1), t_n = X.dim(2), f_n = X.dim(3), d_n = D.dim(2);
  Tensor Y(X.shape());
  for (int n = 0; n < n_n; ++n)
    for (int c = 0; c < c_n; ++c) {
      const Index base = (static_cast<Index>(n) * c_n + c) * t_n * f_n;
      for (int t = 0; t < t_n; ++t) {
        double* y = Y.data() + base + static_cast<Index>(t) * f_n;
        const double* dw = D.data() + (static_cast<Index>(n) * t_n + t) * d_n;
        for (int d = 0; d < std::min(d_n, t + 1); ++d) {
          const double* xs = X.data() + base + static_cast<Index>(t - d) * f_n;
          for (int f = 0; f < f_n; ++f) y[f] += dw[d] * xs[f];
        }
      }
    }
  return x.graph()->record("soft_shift_causal", std::move(Y), {x, weights}, [=](Graph& g, Var self) {
    const Tensor& gy = g.grad(self);
    const Tensor& Xv = g.value(x);
    const Tensor& Dv = g.value(weights);
    Tensor* gx = g.grad_buffer(x);
    Tensor* gd = g.grad_buffer(weights);
    for (int n = 0; n < n_n; ++n)
      for (int c = 0; c < c_n; ++c) {
        const Index base = (static_cast<Index>(n) * c_n + c) * t_n * f_n;
        for (int t = 0; t < t_n; ++t) {
          const double* gyt = gy.data() + base + static_cast<Index>(t) * f_n;
          const Index drow = (static_cast<Index>(n) * t_n + t) * d_n;
          for (int d = 0; d < std::min(d_n, t + 1); ++d) {
            const Index xs = base + static_cast<Index>(t - d) * f_n;
            double dot = 0;
            for (int f = 0; f < f_n; ++f) {
              if (gx) (*gx)[xs + f] += Dv[drow + d] * gyt[f];
              dot += gyt[f] * Xv[xs + f];
            }
            if (gd) (*gd)[drow + d] += dot;
          }
        }
      }
  });
}

// ----------------------------------------------------------------- spectra

Var mask_spectrum(Var mask, const Tensor& spectrum) {
  const Tensor& M = mask.value();
  require_rank(M, 4, "mask_spectrum mask");
  require_rank(spectrum, 4, "mask_spectrum spectrum");
  require(M.dim(1) == 1 && spectrum.dim(1) == 2 && M.dim(0) == spectrum.dim(0) &&
              M.dim(2) == spectrum.dim(2) && M.dim(3) == spectrum.dim(3),
          ErrorKind::kShape,
          "mask_spectrum: mask " + shape_string(M.shape()) + " vs spectrum " +
              shape_string(spectrum.shape()));
  const int n_n = M.dim(0);
  const Index plane = static_cast<Index>(M.dim(2)) * M.dim(3);
  Tensor Y(spectrum.shape());
  for (int n = 0; n < n_n; ++n)
    for (int part = 0; part < 2; ++part)
      for (Index i = 0; i < plane; ++i)
        Y[(static_cast<Index>(n) * 2 + part) * plane + i] =
            M[static_cast<Index>(n) * plane + i] * spectrum[(static_cast<Index>(n) * 2 + part) * plane + i];
  return mask.graph()->record("mask_spectrum", std::move(Y), {mask},
                              [=](Graph& g, Var self) {
    Tensor* gm = g.grad_buffer(mask);
    if (!gm) return;
    const Tensor& gy = g.grad(self);
    for (int n = 0; n < n_n; ++n)
      for (Index i = 0; i < plane; ++i) {
        const Index re = (static_cast<Index>(n) * 2) * plane + i;
        const Index im = re + plane;
        (*gm)[static_cast<Index>(n) * plane + i] += gy[re] * spectrum[re] + gy[im] * spectrum[im];
      }
  });
}

Var istft(Var spectrum, const dsp::StftConfig& cfg) {
  const Tensor& S = spectrum.value();
  require_rank(S, 4, "istft spectrum");
  require(S.dim(1) == 2 && S.dim(3) == cfg.num_bins(), ErrorKind::kShape,
          "istft: expected (N, 2, T, " + std::to_string(cfg.num_bins()) + "), got " +
              shape_string(S.shape()));
  const int n_n = S.dim(0), t_n = S.dim(2), f_n = S.dim(3);
  const auto len = static_cast<int>(cfg.synthesis_length(t_n));
  const int win = cfg.win_len(), hop = cfg.hop(), nfft = cfg.fft_len();
  Tensor Y({n_n, len});
  dsp::RealFft fft(nfft);
  std::vector<dsp::Complex> half(static_cast<std::size_t>(f_n));
  std::vector<double> frame(static_cast<std::size_t>(nfft));
  const auto& w = cfg.window();
  for (int n = 0; n < n_n; ++n)
    for (int t = 0; t < t_n; ++t) {
      for (int k = 0; k < f_n; ++k)
        half[static_cast<std::size_t>(k)] = {S.at(n, 0, t, k), S.at(n, 1, t, k)};
      fft.inverse(half, frame);
      double* y = Y.data() + static_cast<Index>(n) * len + static_cast<Index>(t) * hop;
      for (int i = 0; i < win; ++i) y[i] += frame[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
    }
  return spectrum.graph()->record("istft", std::move(Y), {spectrum},
                                  [=](Graph& g, Var self) {
    Tensor* gs = g.grad_buffer(spectrum);
    if (!gs) return;
    const Tensor& gy = g.grad(self);
    dsp::RealFft fftb(nfft);
    std::vector<double> buf(static_cast<std::size_t>(nfft), 0.0);
    std::vector<dsp::Complex> spec(static_cast<std::size_t>(f_n));
    const auto& wv = cfg.window();
    for (int n = 0; n < n_n; ++n)
      for (int t = 0; t < t_n; ++t) {
        const double* go = gy.data() + static_cast<Index>(n) * len + static_cast<Index>(t) * hop;
        for (int i = 0; i < win; ++i) buf[static_cast<std::size_t>(i)] = go[i] * wv[static_cast<std::size_t>(i)];
        fftb.forward(buf, spec);
        for (int k = 0; k < f_n; ++k) {
          const bool edge = (k == 0) || (2 * k == nfft);
          const double c = (edge ? 1.0 : 2.0) / nfft;
          gs->at(n, 0, t, k) += c * spec[static_cast<std::size_t>(k)].real();
          if (!edge) gs->at(n, 1, t, k) += c * spec[static_cast<std::size_t>(k)].imag();
        }
      }
  });
}

Var stft(Var signal, const dsp::StftConfig& cfg) {
  const Tensor& X = signal.value();
  require_rank(X, 2, "stft signal");
  const int n_n = X.dim(0), len = X.dim(1);
  const int t_n = cfg.num_frames(static_cast<std::size_t>(len));
  require(t_n > 0, ErrorKind::kShape, "stft: signal shorter than one window");
  const int f_n = cfg.num_bins(), win = cfg.win_len(), hop = cfg.hop(), nfft = cfg.fft_len();
  Tensor S({n_n, 2, t_n, f_n});
  dsp::RealFft fft(nfft);
  std::vector<double> buf(static_cast<std::size_t>(nfft), 0.0);
  std::vector<dsp::Complex> spec(static_cast<std::size_t>(f_n));
  const auto& w = cfg.window();
  for (int n = 0; n < n_n; ++n)
    for (int t = 0; t < t_n; ++t) {
      const double* x = X.data() + static_cast<Index>(n) * len + static_cast<Index>(t) * hop;
      for (int i = 0; i < win; ++i) buf[static_cast<std::size_t>(i)] = x[i] * w[static_cast<std::size_t>(i)];
      fft.forward(buf, spec);
      for (int k = 0; k < f_n; ++k) {
        S.at(n, 0, t, k) = spec[static_cast<std::size_t>(k)].real();
        S.at(n, 1, t, k) = spec[static_cast<std::size_t>(k)].imag();
      }
    }
  return signal.graph()->record("stft", std::move(S), {signal}, [=](Graph& g, Var self) {
    Tensor* gx = g.grad_buffer(signal);
    if (!gx) return;
    const Tensor& gs = g.grad(self);
    dsp::RealFft fftb(nfft);
    std::vector<dsp::Complex> full(static_cast<std::size_t>(nfft)), out(static_cast<std::size_t>(nfft));
    const auto& wv = cfg.window();
    for (int n = 0; n < n_n; ++n)
      for (int t = 0; t < t_n; ++t) {
        std::fill(full.begin(), full.end(), dsp::Complex(0.0, 0.0));
        for (int k = 0; k < f_n; ++k) full[static_cast<std::size_t>(k)] = {gs.at(n, 0, t, k), gs.at(n, 1, t, k)};
        fftb.inverse_full(full, out);
        double* gxo = gx->data() + static_cast<Index>(n) * len + static_cast<Index>(t) * hop;
        for (int i = 0; i < win; ++i)
          gxo[i] += wv[static_cast<std::size_t>(i)] * nfft * out[static_cast<std::size_t>(i)].real();
      }
  });
}

Var compressed_mse(Var estimate, const Tensor& reference, const CompressedMseConfig& cfg) {
  const Tensor& E = estimate.value();
  require_same_shape(E, reference, "compressed_mse");
  require_rank(E, 4, "compressed_mse estimate");
  require(E.dim(1) == 2, ErrorKind::kShape, "compressed_mse: expected (N, 2, T, F)");
  require(cfg.compression > 0 && cfg.compression <= 1 && cfg.blend >= 0 && cfg.blend <= 1,
          ErrorKind::kConfig, "compressed_mse: invalid compression or blend");
  const int n_n = E.dim(0);
  const Index plane = static_cast<Index>(E.dim(2)) * E.dim(3);
  const double count = static_cast<double>(n_n) * static_cast<double>(plane);
  const double c = cfg.compression, beta = cfg.blend, eps = cfg.eps;

  // Compressed forms with |X|^2 floored at eps before the fractional power.
  auto phase_factor = [=](double p) { return std::pow(std::max(p, eps), 0.5 * (c - 1.0)); };
  auto magnitude = [=](double p) { return p * std::pow(std::max(p, eps), 0.5 * (c - 2.0)); };

  double total = 0;
  for (int n = 0; n < n_n; ++n)
    for (Index i = 0; i < plane; ++i) {
      const Index re = static_cast<Index>(n) * 2 * plane + i, im = re + plane;
      const double sp = reference[re] * reference[re] + reference[im] * reference[im];
      const double ep = E[re] * E[re] + E[im] * E[im];
      const double sf = phase_factor(sp), ef = phase_factor(ep);
      const double dre = reference[re] * sf - E[re] * ef;
      const double dim = reference[im] * sf - E[im] * ef;
      const double dm = magnitude(sp) - magnitude(ep);
      total += beta * (dre * dre + dim * dim) + (1.0 - beta) * dm * dm;
    }
  Tensor L({1}, total / count);

  return estimate.graph()->record("compressed_mse", std::move(L), {estimate},
                                  [=](Graph& g, Var self) {
    Tensor* ge = g.grad_buffer(estimate);
    if (!ge) return;
    const double gl = g.grad(self)[0] / count;
    const Tensor& Ev = g.value(estimate);
    for (int n = 0; n < n_n; ++n)
      for (Index i = 0; i < plane; ++i) {
        const Index re = static_cast<Index>(n) * 2 * plane + i, im = re + plane;
        const double a = Ev[re], b = Ev[im];
        const double sp = reference[re] * reference[re] + reference[im] * reference[im];
        const double ep = a * a + b * b;
        const double sf = phase_factor(sp), ef = phase_factor(ep);
        const double dfdp = ep > eps ? 0.5 * (c - 1.0) * std::pow(ep, 0.5 * (c - 3.0)) : 0.0;
        const double u_re = -2.0 * beta * (reference[re] * sf - a * ef);
        const double u_im = -2.0 * beta * (reference[im] * sf - b * ef);
        const double proj = a * u_re + b * u_im;
        double ga = ef * u_re + 2.0 * a * dfdp * proj;
        double gb = ef * u_im + 2.0 * b * dfdp * proj;
        const double dmdp = ep > eps ? 0.5 * c * std::pow(ep, 0.5 * c - 1.0)
                                     : std::pow(eps, 0.5 * (c - 2.0));
        const double v = -2.0 * (1.0 - beta) * (magnitude(sp) - magnitude(ep)) * dmdp;
        ga += v * 2.0 * a;
        gb += v * 2.0 * b;
        (*ge)[re] += gl * ga;
        (*ge)[im] += gl * gb;
      }
  });
}

// ----------------------------------------------------------------- helpers

Var sum(Var x) {
  Tensor s({1}, x.value().vec().sum());
  return x.graph()->record("sum", std::move(s), {x}, [=](Graph& g, Var self) {
    if (Tensor* gx = g.grad_buffer(x)) gx->vec().array() += g.grad(self)[0];
  });
}

Var weighted_sum(Var x, const Tensor& weights) {
  require_same_shape(x.value(), weights, "weighted_sum");
  Tensor s({1}, x.value().vec().dot(weights.vec()));
  return x.graph()->record("weighted_sum", std::move(s), {x}, [=](Graph& g, Var self) {
    if (Tensor* gx = g.grad_buffer(x)) gx->vec() += g.grad(self)[0] * weights.vec();
  });
}

Tensor spectrum_tensor(const std::vector<dsp::SpectralFrames>& frames) {
  require(!frames.empty(), ErrorKind::kShape, "spectrum_tensor: no spectra");
  const int t_n = frames[0].frames(), f_n = frames[0].bins();
  Tensor out({static_cast<int>(frames.size()), 2, t_n, f_n});
  for (std::size_t n = 0; n < frames.size(); ++n) {
    require(frames[n].frames() == t_n && frames[n].bins() == f_n, ErrorKind::kShape,
            "spectrum_tensor: spectra differ in size");
    for (int t = 0; t < t_n; ++t)
      for (int k = 0; k < f_n; ++k) {
        out.at(static_cast<int>(n), 0, t, k) = frames[n].data(t, k).real();
        out.at(static_cast<int>(n), 1, t, k) = frames[n].data(t, k).imag();
      }
  }
  return out;
}

dsp::SpectralFrames spectrum_frames(const Tensor& spectrum, int n, const dsp::StftConfig& cfg) {
  require_rank(spectrum, 4, "spectrum_frames");
  dsp::SpectralFrames out;
  out.win_len = cfg.win_len();
  out.hop = cfg.hop();
  out.data.resize(spectrum.dim(2), spectrum.dim(3));
  for (int t = 0; t < spectrum.dim(2); ++t)
    for (int k = 0; k < spectrum.dim(3); ++k)
      out.data(t, k) = {spectrum.at(n, 0, t, k), spectrum.at(n, 1, t, k)};
  return out;
}

}  // namespace acrs::ad
