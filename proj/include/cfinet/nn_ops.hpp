#pragma once

#include <memory>
#include <vector>

#include "cfinet/geometry.hpp"
#include "cfinet/tensor.hpp"

namespace cfinet::ops {

// ---------------------------------------------------------------------------
// conv2d: x[B,Ci,H,W] (*) w[Co,Ci,kh,kw] + bias[Co], zero padding.
// im2col rows are (ci,ky,kx)-ordered to match the reshaped weight rows.
// ---------------------------------------------------------------------------

inline void im2col(const double* x, int ci, int h, int w, int kh, int kw, int stride, int pad,
                   int ho, int wo, RowMat& col) {
  col.setZero(static_cast<int64_t>(ho) * wo, static_cast<int64_t>(ci) * kh * kw);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      double* row = col.data() + (static_cast<int64_t>(oy) * wo + ox) * col.cols();
      for (int c = 0; c < ci; ++c) {
        const double* xc = x + static_cast<int64_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            row[(static_cast<int64_t>(c) * kh + ky) * kw + kx] = xc[static_cast<int64_t>(iy) * w + ix];
          }
        }
      }
    }
  }
}

inline void col2im_add(const RowMat& dcol, int ci, int h, int w, int kh, int kw, int stride,
                       int pad, int ho, int wo, double* dx) {
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const double* row = dcol.data() + (static_cast<int64_t>(oy) * wo + ox) * dcol.cols();
      for (int c = 0; c < ci; ++c) {
        double* xc = dx + static_cast<int64_t>(c) * h * w;
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= w) continue;
            xc[static_cast<int64_t>(iy) * w + ix] += row[(static_cast<int64_t>(c) * kh + ky) * kw + kx];
          }
        }
      }
    }
  }
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride = 1,
                     int pad = 0) {
  if (x.ndim() != 4 || w.ndim() != 4) throw std::invalid_argument("conv2d: need 4-d x and w");
  int b = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci) throw std::invalid_argument("conv2d: channel mismatch");
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (wd + 2 * pad - kw) / stride + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: output would be empty");
  bool has_bias = bias.defined();

  auto cols = std::make_shared<std::vector<RowMat>>(static_cast<size_t>(b));
  auto xn = x.node().get();
  auto wn = w.node().get();
  auto bn = has_bias ? bias.node().get() : nullptr;

  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  Tensor out = Tensor::result(
      {b, co, ho, wo}, parents,
      [=](ad::Node& self) {
        int64_t plane = static_cast<int64_t>(ho) * wo;
        for (int ib = 0; ib < b; ++ib) {
          CMatMap dout(self.grad.data() + static_cast<int64_t>(ib) * co * plane, co, plane);
          const RowMat& col = (*cols)[static_cast<size_t>(ib)];
          if (wn->requires_grad) {
            wn->ensure_grad();
            MatMap dw(wn->grad.data(), co, static_cast<int64_t>(ci) * kh * kw);
            dw.noalias() += dout * col;
          }
          if (bn && bn->requires_grad) {
            bn->ensure_grad();
            Eigen::Map<Eigen::VectorXd>(bn->grad.data(), co) += dout.rowwise().sum();
          }
          if (xn->requires_grad) {
            xn->ensure_grad();
            CMatMap wv(wn->value.data(), co, static_cast<int64_t>(ci) * kh * kw);
            RowMat dcol = dout.transpose() * wv;
            col2im_add(dcol, ci, h, wd, kh, kw, stride, pad, ho, wo,
                       xn->grad.data() + static_cast<int64_t>(ib) * ci * h * wd);
          }
        }
      });

  CMatMap wv(w.data(), co, static_cast<int64_t>(ci) * kh * kw);
  int64_t plane = static_cast<int64_t>(ho) * wo;
  for (int ib = 0; ib < b; ++ib) {
    RowMat& col = (*cols)[static_cast<size_t>(ib)];
    im2col(x.data() + static_cast<int64_t>(ib) * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho,
           wo, col);
    MatMap ov(out.data() + static_cast<int64_t>(ib) * co * plane, co, plane);
    ov.noalias() = wv * col.transpose();
    if (has_bias) {
      Eigen::Map<const Eigen::VectorXd> bv(bias.data(), co);
      ov.colwise() += bv;
    }
  }
  return out;
}

inline Tensor upsample_nearest2(const Tensor& x) {
  if (x.ndim() != 4) throw std::invalid_argument("upsample_nearest2: need 4-d");
  int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  auto xn = x.node().get();
  Tensor out = Tensor::result({b, c, 2 * h, 2 * w}, {x}, [=](ad::Node& self) {
    xn->ensure_grad();
    for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
      const double* g = self.grad.data() + p * 4 * h * w;
      double* dx = xn->grad.data() + p * h * w;
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          dx[static_cast<int64_t>(y / 2) * w + xx / 2] += g[static_cast<int64_t>(y) * 2 * w + xx];
    }
  });
  for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        dst[static_cast<int64_t>(y) * 2 * w + xx] = src[static_cast<int64_t>(y / 2) * w + xx / 2];
  }
  return out;
}

// Top-left crop to (ho, wo); used to align upsampled pyramid levels.
inline Tensor crop2d(const Tensor& x, int ho, int wo) {
  if (x.ndim() != 4) throw std::invalid_argument("crop2d: need 4-d");
  int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (ho > h || wo > w) throw std::invalid_argument("crop2d: crop larger than input");
  if (ho == h && wo == w) return x;
  auto xn = x.node().get();
  Tensor out = Tensor::result({b, c, ho, wo}, {x}, [=](ad::Node& self) {
    xn->ensure_grad();
    for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
      const double* g = self.grad.data() + p * ho * wo;
      double* dx = xn->grad.data() + p * h * w;
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx)
          dx[static_cast<int64_t>(y) * w + xx] += g[static_cast<int64_t>(y) * wo + xx];
    }
  });
  for (int64_t p = 0; p < static_cast<int64_t>(b) * c; ++p) {
    const double* src = x.data() + p * h * w;
    double* dst = out.data() + p * ho * wo;
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        dst[static_cast<int64_t>(y) * wo + xx] = src[static_cast<int64_t>(y) * w + xx];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear sampling support shared by roi_align and adaptive_conv.
// Points outside the map contribute zero (matches zero-padded convolution).
// ---------------------------------------------------------------------------

struct BilinearTap {
  int idx[4];
  double wgt[4];
  int count = 0;
};

inline BilinearTap bilinear_tap(double fy, double fx, int h, int w) {
  BilinearTap t;
  if (fy <= -1.0 || fy >= h || fx <= -1.0 || fx >= w) return t;
  int y0 = static_cast<int>(std::floor(fy));
  int x0 = static_cast<int>(std::floor(fx));
  double ly = fy - y0, lx = fx - x0;
  const int ys[2] = {y0, y0 + 1};
  const int xs[2] = {x0, x0 + 1};
  const double wy[2] = {1.0 - ly, ly};
  const double wx[2] = {1.0 - lx, lx};
  for (int a = 0; a < 2; ++a) {
    if (ys[a] < 0 || ys[a] >= h) continue;
    for (int bb = 0; bb < 2; ++bb) {
      if (xs[bb] < 0 || xs[bb] >= w) continue;
      double wgt = wy[a] * wx[bb];
      if (wgt == 0.0) continue;
      t.idx[t.count] = ys[a] * w + xs[bb];
      t.wgt[t.count] = wgt;
      ++t.count;
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// roi_align: x[1,C,H,W] at one pyramid level -> [R,C,oh,ow].
// Half-pixel alignment: image coord u maps to feature coord u*scale - 0.5.
// ---------------------------------------------------------------------------

inline Tensor roi_align(const Tensor& x, const std::vector<Box>& rois, double spatial_scale,
                        int oh = 7, int ow = 7, int sampling = 2) {
  if (x.ndim() != 4 || x.dim(0) != 1) throw std::invalid_argument("roi_align: need [1,C,H,W]");
  int c = x.dim(1), h = x.dim(2), w = x.dim(3);
  int r = static_cast<int>(rois.size());
  auto taps = std::make_shared<std::vector<BilinearTap>>();
  taps->reserve(static_cast<size_t>(r) * oh * ow * sampling * sampling);
  auto xn = x.node().get();
  int ns = sampling * sampling;
  double inv_ns = 1.0 / ns;

  Tensor out = Tensor::result({r, c, oh, ow}, {x}, [=](ad::Node& self) {
    xn->ensure_grad();
    int64_t plane = static_cast<int64_t>(h) * w;
    for (int ir = 0; ir < r; ++ir) {
      for (int bin = 0; bin < oh * ow; ++bin) {
        for (int s = 0; s < ns; ++s) {
          const BilinearTap& t =
              (*taps)[(static_cast<size_t>(ir) * oh * ow + bin) * ns + s];
          for (int k = 0; k < t.count; ++k) {
            for (int ic = 0; ic < c; ++ic) {
              double g = self.grad[(static_cast<int64_t>(ir) * c + ic) * oh * ow + bin];
              xn->grad[static_cast<int64_t>(ic) * plane + t.idx[k]] += g * t.wgt[k] * inv_ns;
            }
          }
        }
      }
    }
  });

  int64_t plane = static_cast<int64_t>(h) * w;
  for (int ir = 0; ir < r; ++ir) {
    const Box& roi = rois[static_cast<size_t>(ir)];
    double fx1 = roi.x1 * spatial_scale - 0.5, fy1 = roi.y1 * spatial_scale - 0.5;
    double bw = std::max(roi.width() * spatial_scale, 1e-9) / ow;
    double bh = std::max(roi.height() * spatial_scale, 1e-9) / oh;
    for (int by = 0; by < oh; ++by) {
      for (int bx = 0; bx < ow; ++bx) {
        int bin = by * ow + bx;
        double* acc = out.data() + static_cast<int64_t>(ir) * c * oh * ow;
        for (int sy = 0; sy < sampling; ++sy) {
          for (int sx = 0; sx < sampling; ++sx) {
            double fy = fy1 + (by + (sy + 0.5) / sampling) * bh;
            double fx = fx1 + (bx + (sx + 0.5) / sampling) * bw;
            BilinearTap t = bilinear_tap(fy, fx, h, w);
            taps->push_back(t);
            for (int k = 0; k < t.count; ++k) {
              const double* xp = x.data() + t.idx[k];
              double wgt = t.wgt[k] * inv_ns;
              for (int ic = 0; ic < c; ++ic)
                acc[static_cast<int64_t>(ic) * oh * ow + bin] += xp[static_cast<int64_t>(ic) * plane] * wgt;
            }
          }
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// adaptive_conv: 3x3 convolution whose taps are bilinearly sampled on a
// 3x3 lattice spanning the per-location box (corners, edge midpoints,
// center). Degenerate boxes collapse all taps to the box center.
// x[1,Ci,H,W], boxes.size() == H*W, w[Co,Ci,3,3] -> [1,Co,H,W].
// ---------------------------------------------------------------------------

inline Tensor adaptive_conv(const Tensor& x, const std::vector<Box>& boxes, const Tensor& w,
                            const Tensor& bias, double stride) {
  if (x.ndim() != 4 || x.dim(0) != 1) throw std::invalid_argument("adaptive_conv: need [1,C,H,W]");
  if (w.ndim() != 4 || w.dim(2) != 3 || w.dim(3) != 3)
    throw std::invalid_argument("adaptive_conv: weight must be [Co,Ci,3,3]");
  int ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int co = w.dim(0);
  if (w.dim(1) != ci) throw std::invalid_argument("adaptive_conv: channel mismatch");
  if (static_cast<int>(boxes.size()) != h * wd)
    throw std::invalid_argument("adaptive_conv: one box per location required");
  bool has_bias = bias.defined();

  auto taps = std::make_shared<std::vector<BilinearTap>>(static_cast<size_t>(h) * wd * 9);
  auto col = std::make_shared<RowMat>();
  col->setZero(static_cast<int64_t>(h) * wd, static_cast<int64_t>(ci) * 9);

  int64_t plane = static_cast<int64_t>(h) * wd;
  for (int64_t p = 0; p < plane; ++p) {
    const Box& b = boxes[static_cast<size_t>(p)];
    double cx = b.cx(), cy = b.cy();
    double hw = b.width() > 0.0 ? 0.5 * b.width() : 0.0;
    double hh = b.height() > 0.0 ? 0.5 * b.height() : 0.0;
    double* row = col->data() + p * col->cols();
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        double px = cx + (kx - 1) * hw;
        double py = cy + (ky - 1) * hh;
        BilinearTap t = bilinear_tap(py / stride - 0.5, px / stride - 0.5, h, wd);
        (*taps)[static_cast<size_t>(p) * 9 + ky * 3 + kx] = t;
        for (int k = 0; k < t.count; ++k) {
          const double* xp = x.data() + t.idx[k];
          for (int c = 0; c < ci; ++c)
            row[static_cast<int64_t>(c) * 9 + ky * 3 + kx] += t.wgt[k] * xp[static_cast<int64_t>(c) * plane];
        }
      }
    }
  }

  auto xn = x.node().get();
  auto wn = w.node().get();
  auto bn = has_bias ? bias.node().get() : nullptr;
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(bias);
  Tensor out = Tensor::result({1, co, h, wd}, parents, [=](ad::Node& self) {
    CMatMap dout(self.grad.data(), co, plane);
    if (wn->requires_grad) {
      wn->ensure_grad();
      MatMap dw(wn->grad.data(), co, static_cast<int64_t>(ci) * 9);
      dw.noalias() += dout * (*col);
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      Eigen::Map<Eigen::VectorXd>(bn->grad.data(), co) += dout.rowwise().sum();
    }
    if (xn->requires_grad) {
      xn->ensure_grad();
      CMatMap wv(wn->value.data(), co, static_cast<int64_t>(ci) * 9);
      RowMat dcol = dout.transpose() * wv;
      for (int64_t p = 0; p < plane; ++p) {
        const double* row = dcol.data() + p * dcol.cols();
        for (int tap = 0; tap < 9; ++tap) {
          const BilinearTap& t = (*taps)[static_cast<size_t>(p) * 9 + tap];
          for (int k = 0; k < t.count; ++k) {
            for (int c = 0; c < ci; ++c)
              xn->grad[static_cast<int64_t>(c) * plane + t.idx[k]] +=
                  t.wgt[k] * row[static_cast<int64_t>(c) * 9 + tap];
          }
        }
      }
    }
  });

  CMatMap wv(w.data(), co, static_cast<int64_t>(ci) * 9);
  MatMap ov(out.data(), co, plane);
  ov.noalias() = wv * col->transpose();
  if (has_bias) {
    Eigen::Map<const Eigen::VectorXd> bv(bias.data(), co);
    ov.colwise() += bv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Losses.
// ---------------------------------------------------------------------------

// Mean cross-entropy over rows of logits[N,K] with integer labels.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw std::invalid_argument("softmax_cross_entropy: need 2-d");
  int n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int>(labels.size()) != n)
    throw std::invalid_argument("softmax_cross_entropy: label count mismatch");
  auto ln = logits.node().get();
  auto lab = std::make_shared<std::vector<int>>(labels);
  Tensor out = Tensor::result({}, {logits}, [ln, lab, n, k](ad::Node& self) {
    ln->ensure_grad();
    double g = self.grad[0] / n;
    for (int r = 0; r < n; ++r) {
      const double* row = ln->value.data() + static_cast<int64_t>(r) * k;
      double* grow = ln->grad.data() + static_cast<int64_t>(r) * k;
      double mx = row[0];
      for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
      double s = 0.0;
      for (int c = 0; c < k; ++c) s += std::exp(row[c] - mx);
      for (int c = 0; c < k; ++c) {
        double p = std::exp(row[c] - mx) / s;
        grow[c] += g * (p - (c == (*lab)[r] ? 1.0 : 0.0));
      }
    }
  });
  double total = 0.0;
  for (int r = 0; r < n; ++r) {
    const double* row = logits.data() + static_cast<int64_t>(r) * k;
    double mx = row[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < k; ++c) s += std::exp(row[c] - mx);
    total += std::log(s) + mx - row[labels[static_cast<size_t>(r)]];
  }
  out.value_array()[0] = total / n;
  return out;
}

// Numerically stable mean binary cross-entropy on logits.
inline Tensor bce_with_logits(const Tensor& logits, const std::vector<double>& targets) {
  if (static_cast<int64_t>(targets.size()) != logits.numel())
    throw std::invalid_argument("bce_with_logits: target count mismatch");
  int64_t n = logits.numel();
  auto ln = logits.node().get();
  auto tgt = std::make_shared<std::vector<double>>(targets);
  Tensor out = Tensor::result({}, {logits}, [ln, tgt, n](ad::Node& self) {
    ln->ensure_grad();
    double g = self.grad[0] / n;
    for (int64_t i = 0; i < n; ++i) {
      double z = ln->value[i];
      double p = 1.0 / (1.0 + std::exp(-z));
      ln->grad[i] += g * (p - (*tgt)[i]);
    }
  });
  double total = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double z = logits.at(i), t = targets[static_cast<size_t>(i)];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  out.value_array()[0] = total / n;
  return out;
}

// Smooth-L1 summed over coordinates, averaged over rows.
inline Tensor smooth_l1(const Tensor& pred, const std::vector<double>& target, double beta = 1.0) {
  if (pred.ndim() != 2) throw std::invalid_argument("smooth_l1: need 2-d pred");
  if (static_cast<int64_t>(target.size()) != pred.numel())
    throw std::invalid_argument("smooth_l1: target size mismatch");
  int n = pred.dim(0);
  int64_t total_el = pred.numel();
  auto pn = pred.node().get();
  auto tgt = std::make_shared<std::vector<double>>(target);
  Tensor out = Tensor::result({}, {pred}, [pn, tgt, n, total_el, beta](ad::Node& self) {
    pn->ensure_grad();
    double g = self.grad[0] / n;
    for (int64_t i = 0; i < total_el; ++i) {
      double d = pn->value[i] - (*tgt)[i];
      double dd = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
      pn->grad[i] += g * dd;
    }
  });
  double total = 0.0;
  for (int64_t i = 0; i < total_el; ++i) {
    double d = pred.at(i) - target[static_cast<size_t>(i)];
    double a = std::abs(d);
    total += a < beta ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  out.value_array()[0] = total / n;
  return out;
}

// deltas[N,4] applied to fixed anchors -> boxes[N,4] (x1,y1,x2,y2).
inline Tensor decode_boxes(const Tensor& deltas, const std::vector<Box>& anchors) {
  if (deltas.ndim() != 2 || deltas.dim(1) != 4)
    throw std::invalid_argument("decode_boxes: need [N,4]");
  int n = deltas.dim(0);
  if (static_cast<int>(anchors.size()) != n)
    throw std::invalid_argument("decode_boxes: anchor count mismatch");
  auto dn = deltas.node().get();
  auto anc = std::make_shared<std::vector<Box>>(anchors);
  Tensor out = Tensor::result({n, 4}, {deltas}, [dn, anc, n](ad::Node& self) {
    dn->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const Box& a = (*anc)[static_cast<size_t>(i)];
      double aw = a.width(), ah = a.height();
      const double* d = dn->value.data() + static_cast<int64_t>(i) * 4;
      const double* g = self.grad.data() + static_cast<int64_t>(i) * 4;
      double* gd = dn->grad.data() + static_cast<int64_t>(i) * 4;
      bool wclip = std::abs(d[2]) > kDeltaWHClip;
      bool hclip = std::abs(d[3]) > kDeltaWHClip;
      double w = aw * std::exp(std::clamp(d[2], -kDeltaWHClip, kDeltaWHClip));
      double h = ah * std::exp(std::clamp(d[3], -kDeltaWHClip, kDeltaWHClip));
      gd[0] += aw * (g[0] + g[2]);
      gd[1] += ah * (g[1] + g[3]);
      if (!wclip) gd[2] += 0.5 * w * (g[2] - g[0]);
      if (!hclip) gd[3] += 0.5 * h * (g[3] - g[1]);
    }
  });
  for (int i = 0; i < n; ++i) {
    const Box& a = anchors[static_cast<size_t>(i)];
    const double* d = deltas.data() + static_cast<int64_t>(i) * 4;
    Box b = decode(BoxDelta{d[0], d[1], d[2], d[3]}, a);
    double* o = out.data() + static_cast<int64_t>(i) * 4;
    o[0] = b.x1;
    o[1] = b.y1;
    o[2] = b.x2;
    o[3] = b.y2;
  }
  return out;
}

// Per-row linear IoU loss of pred boxes [N,4] against fixed targets -> [N].
inline Tensor iou_loss_rows(const Tensor& pred, const std::vector<Box>& targets) {
  if (pred.ndim() != 2 || pred.dim(1) != 4)
    throw std::invalid_argument("iou_loss_rows: need [N,4]");
  int n = pred.dim(0);
  if (static_cast<int>(targets.size()) != n)
    throw std::invalid_argument("iou_loss_rows: target count mismatch");
  auto pn = pred.node().get();
  auto tgt = std::make_shared<std::vector<Box>>(targets);
  Tensor out = Tensor::result({n}, {pred}, [pn, tgt, n](ad::Node& self) {
    pn->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* p = pn->value.data() + static_cast<int64_t>(i) * 4;
      auto g = iou_loss_grad(Box(p[0], p[1], p[2], p[3]), (*tgt)[static_cast<size_t>(i)]);
      double go = self.grad[i];
      double* gp = pn->grad.data() + static_cast<int64_t>(i) * 4;
      for (int k = 0; k < 4; ++k) gp[k] += go * g[static_cast<size_t>(k)];
    }
  });
  for (int i = 0; i < n; ++i) {
    const double* p = pred.data() + static_cast<int64_t>(i) * 4;
    out.data()[i] = iou_loss(Box(p[0], p[1], p[2], p[3]), targets[static_cast<size_t>(i)]);
  }
  return out;
}

// Softmax probabilities per row, plain values (no graph).
inline std::vector<double> softmax_rows_values(const Tensor& logits) {
  int n = logits.dim(0), k = logits.dim(1);
  std::vector<double> probs(static_cast<size_t>(n) * k);
  for (int r = 0; r < n; ++r) {
    const double* row = logits.data() + static_cast<int64_t>(r) * k;
    double mx = row[0];
    for (int c = 1; c < k; ++c) mx = std::max(mx, row[c]);
    double s = 0.0;
    for (int c = 0; c < k; ++c) s += std::exp(row[c] - mx);
    for (int c = 0; c < k; ++c) probs[static_cast<size_t>(r) * k + c] = std::exp(row[c] - mx) / s;
  }
  return probs;
}

}  // namespace cfinet::ops
