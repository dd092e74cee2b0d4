#pragma once

#include <algorithm>
#include <utility>

#include "laug/tape.hpp"

namespace laug {

enum class Mode { train, train_frozen_stats, eval };

namespace detail {

template <class S>
S stable_sigmoid(S z) {
  if (z >= S(0)) return S(1) / (S(1) + std::exp(-z));
  const S e = std::exp(z);
  return e / (S(1) + e);
}

// Gathers kh*kw patches of img [C,imgH,imgW] at grid positions
// (gh*stride - pad + i, gw*stride - pad + j) into cols [C*kh*kw, gridH*gridW],
// zero-filling out-of-range taps.
template <class S>
void im2col(const S* img, std::int64_t C, std::int64_t imgH, std::int64_t imgW, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t gridH,
            std::int64_t gridW, S* cols) {
  const std::int64_t G = gridH * gridW;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        S* row = cols + ((c * kh + i) * kw + j) * G;
        for (std::int64_t gh = 0; gh < gridH; ++gh) {
          const std::int64_t ih = gh * stride - pad + i;
          const bool h_ok = ih >= 0 && ih < imgH;
          const S* src = img + (c * imgH + (h_ok ? ih : 0)) * imgW;
          for (std::int64_t gw = 0; gw < gridW; ++gw) {
            const std::int64_t iw = gw * stride - pad + j;
            row[gh * gridW + gw] = (h_ok && iw >= 0 && iw < imgW) ? src[iw] : S(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds cols back into img_accum.
template <class S>
void col2im(const S* cols, std::int64_t C, std::int64_t imgH, std::int64_t imgW, std::int64_t kh,
            std::int64_t kw, std::int64_t stride, std::int64_t pad, std::int64_t gridH,
            std::int64_t gridW, S* img_accum) {
  const std::int64_t G = gridH * gridW;
  for (std::int64_t c = 0; c < C; ++c) {
    for (std::int64_t i = 0; i < kh; ++i) {
      for (std::int64_t j = 0; j < kw; ++j) {
        const S* row = cols + ((c * kh + i) * kw + j) * G;
        for (std::int64_t gh = 0; gh < gridH; ++gh) {
          const std::int64_t ih = gh * stride - pad + i;
          if (ih < 0 || ih >= imgH) continue;
          S* dst = img_accum + (c * imgH + ih) * imgW;
          for (std::int64_t gw = 0; gw < gridW; ++gw) {
            const std::int64_t iw = gw * stride - pad + j;
            if (iw < 0 || iw >= imgW) continue;
            dst[iw] += row[gh * gridW + gw];
          }
        }
      }
    }
  }
}

template <class S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowMap = Eigen::Map<RowMat<S>>;
template <class S>
using ConstRowMap = Eigen::Map<const RowMat<S>>;

template <class S>
void accumulate(TensorNode<S>& node, const std::vector<S>& delta) {
  auto& g = grad_buffer(node);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and reductions

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape());
  S* o = out.mutable_data();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  maybe_record({&a, &b}, out, [a, b, out]() {
    const auto& g = out.node()->grad;
    detail::accumulate(*a.node(), g);
    detail::accumulate(*b.node(), g);
  });
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape());
  S* o = out.mutable_data();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = a.data()[i] - b.data()[i];
  maybe_record({&a, &b}, out, [a, b, out]() {
    const auto& g = out.node()->grad;
    auto& ga = grad_buffer(*a.node());
    auto& gb = grad_buffer(*b.node());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i];
      gb[i] -= g[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(a.shape());
  S* o = out.mutable_data();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  maybe_record({&a, &b}, out, [a, b, out]() {
    const auto& g = out.node()->grad;
    auto& ga = grad_buffer(*a.node());
    auto& gb = grad_buffer(*b.node());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += g[i] * b.data()[i];
      gb[i] += g[i] * a.data()[i];
    }
  });
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double c) {
  Tensor<S> out(a.shape());
  S* o = out.mutable_data();
  for (std::int64_t i = 0; i < a.size(); ++i) o[i] = static_cast<S>(c) * a.data()[i];
  maybe_record({&a}, out, [a, out, c]() {
    const auto& g = out.node()->grad;
    auto& ga = grad_buffer(*a.node());
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<S>(c) * g[i];
  });
  return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& a) {
  Tensor<S> out(Shape{1});
  S acc = S(0);
  for (std::int64_t i = 0; i < a.size(); ++i) acc += a.data()[i];
  out.mutable_data()[0] = acc;
  maybe_record({&a}, out, [a, out]() {
    const S g = out.node()->grad[0];
    auto& ga = grad_buffer(*a.node());
    for (auto& v : ga) v += g;
  });
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& a) {
  Tensor<S> out = sum(a);
  return scale(out, 1.0 / static_cast<double>(a.size()));
}

// ---------------------------------------------------------------------------
// activations

template <class S>
Tensor<S> leaky_relu(const Tensor<S>& x, double alpha) {
  if (alpha < 0.0 || alpha >= 1.0) throw ValueError("leaky_relu: alpha must lie in [0,1)");
  Tensor<S> out(x.shape());
  S* o = out.mutable_data();
  const S a = static_cast<S>(alpha);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const S v = x.data()[i];
    o[i] = v >= S(0) ? v : a * v;
  }
  maybe_record({&x}, out, [x, out, a]() {
    const auto& g = out.node()->grad;
    auto& gx = grad_buffer(*x.node());
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += g[i] * (x.data()[static_cast<std::int64_t>(i)] >= S(0) ? S(1) : a);
  });
  return out;
}

template <class S>
Tensor<S> tanh_act(const Tensor<S>& x) {
  Tensor<S> out(x.shape());
  S* o = out.mutable_data();
  for (std::int64_t i = 0; i < x.size(); ++i) o[i] = std::tanh(x.data()[i]);
  maybe_record({&x}, out, [x, out]() {
    const auto& g = out.node()->grad;
    auto& gx = grad_buffer(*x.node());
    for (std::size_t i = 0; i < g.size(); ++i) {
      const S y = out.data()[static_cast<std::int64_t>(i)];
      gx[i] += g[i] * (S(1) - y * y);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// linear

template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  check(x.ndim() == 2, "linear: input must be 2-d, got " + shape_str(x.shape()));
  check(w.ndim() == 2, "linear: weight must be 2-d, got " + shape_str(w.shape()));
  const std::int64_t n = x.dim(0), d = x.dim(1), k = w.dim(0);
  check(w.dim(1) == d, "linear: inner dimensions differ, input " + shape_str(x.shape()) +
                           " weight " + shape_str(w.shape()));
  check(b.ndim() == 1 && b.dim(0) == k, "linear: bias " + shape_str(b.shape()) +
                                            " incompatible with weight " + shape_str(w.shape()));
  Tensor<S> out(Shape{n, k});
  {
    auto xm = x.mat(n, d);
    auto wm = w.mat(k, d);
    auto om = out.mut_mat(n, k);
    om.noalias() = xm * wm.transpose();
    om.rowwise() += b.vec().transpose();
  }
  maybe_record({&x, &w, &b}, out, [x, w, b, out, n, d, k]() {
    detail::ConstRowMap<S> g(out.node()->grad.data(), n, k);
    auto xm = x.mat(n, d);
    auto wm = w.mat(k, d);
    {
      auto& gx = grad_buffer(*x.node());
      detail::RowMap<S> gxm(gx.data(), n, d);
      gxm.noalias() += g * wm;
    }
    {
      auto& gw = grad_buffer(*w.node());
      detail::RowMap<S> gwm(gw.data(), k, d);
      gwm.noalias() += g.transpose() * xm;
    }
    {
      auto& gb = grad_buffer(*b.node());
      Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> gbv(gb.data(), k);
      gbv.noalias() += g.colwise().sum().transpose();
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// convolutions

inline std::int64_t conv_out_dim(std::int64_t in, std::int64_t k, std::int64_t stride,
                                 std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kern, const Tensor<S>& bias, int stride,
                 int padding) {
  check(x.ndim() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  check(kern.ndim() == 4, "conv2d: kernel must be [F,C,kh,kw], got " + shape_str(kern.shape()));
  if (stride < 1) throw ValueError("conv2d: stride must be >= 1");
  if (padding < 0) throw ValueError("conv2d: padding must be >= 0");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t F = kern.dim(0), kh = kern.dim(2), kw = kern.dim(3);
  if (kern.dim(1) != C)
    throw ShapeError("conv2d: kernel channels do not match input, input " + shape_str(x.shape()) +
                     " kernel " + shape_str(kern.shape()));
  check(bias.ndim() == 1 && bias.dim(0) == F,
        "conv2d: bias " + shape_str(bias.shape()) + " incompatible with kernel " + shape_str(kern.shape()));
  if (kh > H + 2 * padding || kw > W + 2 * padding)
    throw ShapeError("conv2d: kernel " + shape_str(kern.shape()) + " larger than padded input " +
                     shape_str(x.shape()));

  const std::int64_t OH = conv_out_dim(H, kh, stride, padding);
  const std::int64_t OW = conv_out_dim(W, kw, stride, padding);
  const std::int64_t CKK = C * kh * kw, G = OH * OW;
  Tensor<S> out(Shape{N, F, OH, OW});
  {
    std::vector<S> cols(static_cast<std::size_t>(CKK * G));
    detail::ConstRowMap<S> K(kern.data(), F, CKK);
    for (std::int64_t n = 0; n < N; ++n) {
      detail::im2col(x.data() + n * C * H * W, C, H, W, kh, kw, stride, padding, OH, OW, cols.data());
      detail::ConstRowMap<S> colsM(cols.data(), CKK, G);
      detail::RowMap<S> outM(out.mutable_data() + n * F * G, F, G);
      outM.noalias() = K * colsM;
      outM.colwise() += bias.vec();
    }
  }
  maybe_record({&x, &kern, &bias}, out,
               [x, kern, bias, out, N, C, H, W, F, kh, kw, OH, OW, stride, padding]() {
                 const std::int64_t CKK = C * kh * kw, G = OH * OW;
                 const auto& g = out.node()->grad;
                 auto& gx = grad_buffer(*x.node());
                 auto& gk = grad_buffer(*kern.node());
                 auto& gb = grad_buffer(*bias.node());
                 detail::ConstRowMap<S> K(kern.data(), F, CKK);
                 detail::RowMap<S> gK(gk.data(), F, CKK);
                 std::vector<S> cols(static_cast<std::size_t>(CKK * G));
                 std::vector<S> dcols(static_cast<std::size_t>(CKK * G));
                 for (std::int64_t n = 0; n < N; ++n) {
                   detail::ConstRowMap<S> gOut(g.data() + n * F * G, F, G);
                   // bias
                   Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> gB(gb.data(), F);
                   gB.noalias() += gOut.rowwise().sum();
                   // kernel
                   detail::im2col(x.data() + n * C * H * W, C, H, W, kh, kw, stride, padding, OH,
                                  OW, cols.data());
                   detail::ConstRowMap<S> colsM(cols.data(), CKK, G);
                   gK.noalias() += gOut * colsM.transpose();
                   // input
                   detail::RowMap<S> dcolsM(dcols.data(), CKK, G);
                   dcolsM.noalias() = K.transpose() * gOut;
                   detail::col2im(dcols.data(), C, H, W, kh, kw, stride, padding, OH, OW,
                                  gx.data() + n * C * H * W);
                 }
               });
  return out;
}

template <class S>
Tensor<S> conv_transpose2d(const Tensor<S>& x, const Tensor<S>& kern, const Tensor<S>& bias,
                           int stride, int padding) {
  check(x.ndim() == 4, "conv_transpose2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  check(kern.ndim() == 4,
        "conv_transpose2d: kernel must be [C,F,kh,kw], got " + shape_str(kern.shape()));
  if (stride < 1) throw ValueError("conv_transpose2d: stride must be >= 1");
  if (padding < 0) throw ValueError("conv_transpose2d: padding must be >= 0");
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::int64_t F = kern.dim(1), kh = kern.dim(2), kw = kern.dim(3);
  if (kern.dim(0) != C)
    throw ShapeError("conv_transpose2d: kernel channels do not match input, input " +
                     shape_str(x.shape()) + " kernel " + shape_str(kern.shape()));
  check(bias.ndim() == 1 && bias.dim(0) == F,
        "conv_transpose2d: bias " + shape_str(bias.shape()) + " incompatible with kernel " +
            shape_str(kern.shape()));
  const std::int64_t OH = (H - 1) * stride - 2 * padding + kh;
  const std::int64_t OW = (W - 1) * stride - 2 * padding + kw;
  if (OH <= 0 || OW <= 0)
    throw ShapeError("conv_transpose2d: output would be empty for input " + shape_str(x.shape()));

  const std::int64_t FKK = F * kh * kw, G = H * W;
  Tensor<S> out(Shape{N, F, OH, OW});
  {
    std::vector<S> cols(static_cast<std::size_t>(FKK * G));
    detail::ConstRowMap<S> K2(kern.data(), C, FKK);
    for (std::int64_t n = 0; n < N; ++n) {
      detail::ConstRowMap<S> xn(x.data() + n * C * G, C, G);
      detail::RowMap<S> colsM(cols.data(), FKK, G);
      colsM.noalias() = K2.transpose() * xn;
      S* on = out.mutable_data() + n * F * OH * OW;
      detail::col2im(cols.data(), F, OH, OW, kh, kw, stride, padding, H, W, on);
      for (std::int64_t f = 0; f < F; ++f) {
        const S bv = bias.data()[f];
        S* ch = on + f * OH * OW;
        for (std::int64_t i = 0; i < OH * OW; ++i) ch[i] += bv;
      }
    }
  }
  maybe_record({&x, &kern, &bias}, out,
               [x, kern, bias, out, N, C, H, W, F, kh, kw, OH, OW, stride, padding]() {
                 const std::int64_t FKK = F * kh * kw, G = H * W;
                 const auto& g = out.node()->grad;
                 auto& gx = grad_buffer(*x.node());
                 auto& gk = grad_buffer(*kern.node());
                 auto& gb = grad_buffer(*bias.node());
                 detail::ConstRowMap<S> K2(kern.data(), C, FKK);
                 detail::RowMap<S> gK2(gk.data(), C, FKK);
                 std::vector<S> gcols(static_cast<std::size_t>(FKK * G));
                 for (std::int64_t n = 0; n < N; ++n) {
                   const S* gn = g.data() + n * F * OH * OW;
                   for (std::int64_t f = 0; f < F; ++f) {
                     S acc = S(0);
                     const S* ch = gn + f * OH * OW;
                     for (std::int64_t i = 0; i < OH * OW; ++i) acc += ch[i];
                     gb[static_cast<std::size_t>(f)] += acc;
                   }
                   // patches of the output gradient seen from the input grid
                   detail::im2col(gn, F, OH, OW, kh, kw, stride, padding, H, W, gcols.data());
                   detail::ConstRowMap<S> gcolsM(gcols.data(), FKK, G);
                   detail::ConstRowMap<S> xn(x.data() + n * C * G, C, G);
                   detail::RowMap<S> gxn(gx.data() + n * C * G, C, G);
                   gxn.noalias() += K2 * gcolsM;
                   gK2.noalias() += xn * gcolsM.transpose();
                 }
               });
  return out;
}

// ---------------------------------------------------------------------------
// batch normalization

// running_mean / running_var are handles onto the layer's mutable statistics;
// Mode::train updates them in place, the other modes leave them untouched.
template <class S>
Tensor<S> batchnorm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                      Tensor<S> running_mean, Tensor<S> running_var, Mode mode,
                      double eps = 1e-5, double momentum = 0.1) {
  check(x.ndim() == 4, "batchnorm2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check(gamma.ndim() == 1 && gamma.dim(0) == C, "batchnorm2d: gamma " + shape_str(gamma.shape()) +
                                                    " incompatible with input " + shape_str(x.shape()));
  check(beta.shape() == gamma.shape(), "batchnorm2d: beta shape mismatch");
  const std::int64_t m = N * H * W;
  const bool train = mode != Mode::eval;
  if (train && m < 2)
    throw ValueError("batchnorm2d: train mode needs at least 2 elements per channel (degenerate variance)");

  Tensor<S> out(x.shape());
  const std::int64_t plane = H * W;

  if (train) {
    std::vector<S> mu(static_cast<std::size_t>(C), S(0)), var(static_cast<std::size_t>(C), S(0));
    std::vector<S> inv(static_cast<std::size_t>(C));
    for (std::int64_t c = 0; c < C; ++c) {
      S acc = S(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const S* p = x.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      }
      const S mc = acc / static_cast<S>(m);
      S vacc = S(0);
      for (std::int64_t n = 0; n < N; ++n) {
        const S* p = x.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const S d = p[i] - mc;
          vacc += d * d;
        }
      }
      mu[static_cast<std::size_t>(c)] = mc;
      var[static_cast<std::size_t>(c)] = vacc / static_cast<S>(m);
      inv[static_cast<std::size_t>(c)] =
          S(1) / std::sqrt(var[static_cast<std::size_t>(c)] + static_cast<S>(eps));
    }
    if (mode == Mode::train) {
      S* rm = running_mean.mutable_data();
      S* rv = running_var.mutable_data();
      const S mom = static_cast<S>(momentum);
      for (std::int64_t c = 0; c < C; ++c) {
        rm[c] = (S(1) - mom) * rm[c] + mom * mu[static_cast<std::size_t>(c)];
        rv[c] = (S(1) - mom) * rv[c] + mom * var[static_cast<std::size_t>(c)];
      }
    }
    // save normalized activations for backward
    auto xhat = std::make_shared<std::vector<S>>(static_cast<std::size_t>(x.size()));
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t c = 0; c < C; ++c) {
        const S* p = x.data() + (n * C + c) * plane;
        S* h = xhat->data() + (n * C + c) * plane;
        S* o = out.mutable_data() + (n * C + c) * plane;
        const S mc = mu[static_cast<std::size_t>(c)], ic = inv[static_cast<std::size_t>(c)];
        const S gc = gamma.data()[c], bc = beta.data()[c];
        for (std::int64_t i = 0; i < plane; ++i) {
          h[i] = (p[i] - mc) * ic;
          o[i] = gc * h[i] + bc;
        }
      }
    }
    maybe_record({&x, &gamma, &beta}, out, [x, gamma, beta, out, xhat, inv, N, C, plane, m]() {
      const auto& g = out.node()->grad;
      auto& gx = grad_buffer(*x.node());
      auto& gg = grad_buffer(*gamma.node());
      auto& gb = grad_buffer(*beta.node());
      for (std::int64_t c = 0; c < C; ++c) {
        S sum_g = S(0), sum_gh = S(0);
        for (std::int64_t n = 0; n < N; ++n) {
          const S* gp = g.data() + (n * C + c) * plane;
          const S* hp = xhat->data() + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_g += gp[i];
            sum_gh += gp[i] * hp[i];
          }
        }
        gg[static_cast<std::size_t>(c)] += sum_gh;
        gb[static_cast<std::size_t>(c)] += sum_g;
        const S gc = gamma.data()[c] * inv[static_cast<std::size_t>(c)];
        const S mean_g = sum_g / static_cast<S>(m);
        const S mean_gh = sum_gh / static_cast<S>(m);
        for (std::int64_t n = 0; n < N; ++n) {
          const S* gp = g.data() + (n * C + c) * plane;
          const S* hp = xhat->data() + (n * C + c) * plane;
          S* gxp = gx.data() + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i)
            gxp[i] += gc * (gp[i] - mean_g - hp[i] * mean_gh);
        }
      }
    });
  } else {
    for (std::int64_t n = 0; n < N; ++n) {
      for (std::int64_t c = 0; c < C; ++c) {
        const S ic = S(1) / std::sqrt(running_var.data()[c] + static_cast<S>(eps));
        const S mc = running_mean.data()[c];
        const S gc = gamma.data()[c], bc = beta.data()[c];
        const S* p = x.data() + (n * C + c) * plane;
        S* o = out.mutable_data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) o[i] = gc * (p[i] - mc) * ic + bc;
      }
    }
    Tensor<S> rm = running_mean, rv = running_var;
    maybe_record({&x, &gamma, &beta}, out, [x, gamma, beta, out, rm, rv, N, C, plane, eps]() {
      const auto& g = out.node()->grad;
      auto& gx = grad_buffer(*x.node());
      auto& gg = grad_buffer(*gamma.node());
      auto& gb = grad_buffer(*beta.node());
      for (std::int64_t c = 0; c < C; ++c) {
        const S ic = S(1) / std::sqrt(rv.data()[c] + static_cast<S>(eps));
        const S mc = rm.data()[c];
        const S gc = gamma.data()[c];
        S sum_g = S(0), sum_gh = S(0);
        for (std::int64_t n = 0; n < N; ++n) {
          const S* gp = g.data() + (n * C + c) * plane;
          const S* xp = x.data() + (n * C + c) * plane;
          S* gxp = gx.data() + (n * C + c) * plane;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_g += gp[i];
            sum_gh += gp[i] * (xp[i] - mc) * ic;
            gxp[i] += gp[i] * gc * ic;
          }
        }
        gg[static_cast<std::size_t>(c)] += sum_gh;
        gb[static_cast<std::size_t>(c)] += sum_g;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// image gradients (forward differences, zero at the trailing edge)

template <class S>
Tensor<S> image_gradient_x(const Tensor<S>& x) {
  check(x.ndim() == 4, "image_gradient: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t H = x.dim(2), W = x.dim(3);
  if (W < 2 || H < 2) throw ShapeError("image_gradient: spatial dimensions must be >= 2");
  Tensor<S> out(x.shape());
  const std::int64_t planes = x.size() / (H * W);
  for (std::int64_t p = 0; p < planes; ++p) {
    const S* src = x.data() + p * H * W;
    S* dst = out.mutable_data() + p * H * W;
    for (std::int64_t i = 0; i < H; ++i)
      for (std::int64_t j = 0; j + 1 < W; ++j) dst[i * W + j] = src[i * W + j + 1] - src[i * W + j];
  }
  maybe_record({&x}, out, [x, out, planes, H, W]() {
    const auto& g = out.node()->grad;
    auto& gx = grad_buffer(*x.node());
    for (std::int64_t p = 0; p < planes; ++p) {
      const S* gp = g.data() + p * H * W;
      S* dst = gx.data() + p * H * W;
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j + 1 < W; ++j) {
          dst[i * W + j] -= gp[i * W + j];
          dst[i * W + j + 1] += gp[i * W + j];
        }
    }
  });
  return out;
}

template <class S>
Tensor<S> image_gradient_y(const Tensor<S>& x) {
  check(x.ndim() == 4, "image_gradient: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t H = x.dim(2), W = x.dim(3);
  if (W < 2 || H < 2) throw ShapeError("image_gradient: spatial dimensions must be >= 2");
  Tensor<S> out(x.shape());
  const std::int64_t planes = x.size() / (H * W);
  for (std::int64_t p = 0; p < planes; ++p) {
    const S* src = x.data() + p * H * W;
    S* dst = out.mutable_data() + p * H * W;
    for (std::int64_t i = 0; i + 1 < H; ++i)
      for (std::int64_t j = 0; j < W; ++j) dst[i * W + j] = src[(i + 1) * W + j] - src[i * W + j];
  }
  maybe_record({&x}, out, [x, out, planes, H, W]() {
    const auto& g = out.node()->grad;
    auto& gx = grad_buffer(*x.node());
    for (std::int64_t p = 0; p < planes; ++p) {
      const S* gp = g.data() + p * H * W;
      S* dst = gx.data() + p * H * W;
      for (std::int64_t i = 0; i + 1 < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          dst[i * W + j] -= gp[i * W + j];
          dst[(i + 1) * W + j] += gp[i * W + j];
        }
    }
  });
  return out;
}

template <class S>
std::pair<Tensor<S>, Tensor<S>> image_gradient(const Tensor<S>& x) {
  return {image_gradient_x(x), image_gradient_y(x)};
}

// ---------------------------------------------------------------------------
// losses

template <class S>
Tensor<S> l1_loss(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.shape() == b.shape(),
        "l1_loss: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor<S> out(Shape{1});
  S acc = S(0);
  for (std::int64_t i = 0; i < a.size(); ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  out.mutable_data()[0] = acc / static_cast<S>(a.size());
  maybe_record({&a, &b}, out, [a, b, out]() {
    const S g = out.node()->grad[0] / static_cast<S>(a.size());
    auto& ga = grad_buffer(*a.node());
    auto& gb = grad_buffer(*b.node());
    for (std::int64_t i = 0; i < a.size(); ++i) {
      const S d = a.data()[i] - b.data()[i];
      const S s = d > S(0) ? S(1) : (d < S(0) ? S(-1) : S(0));
      ga[static_cast<std::size_t>(i)] += g * s;
      gb[static_cast<std::size_t>(i)] -= g * s;
    }
  });
  return out;
}

template <class S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const Tensor<S>& targets) {
  check(logits.shape() == targets.shape(), "bce_with_logits: shape mismatch " +
                                               shape_str(logits.shape()) + " vs " +
                                               shape_str(targets.shape()));
  for (std::int64_t i = 0; i < targets.size(); ++i) {
    const S t = targets.data()[i];
    if (!(t >= S(0) && t <= S(1)))
      throw ValueError("bce_with_logits: target outside [0,1]: " + std::to_string(static_cast<double>(t)));
  }
  Tensor<S> out(Shape{1});
  S acc = S(0);
  for (std::int64_t i = 0; i < logits.size(); ++i) {
    const S z = logits.data()[i], t = targets.data()[i];
    acc += std::max(z, S(0)) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  out.mutable_data()[0] = acc / static_cast<S>(logits.size());
  maybe_record({&logits, &targets}, out, [logits, targets, out]() {
    const S g = out.node()->grad[0] / static_cast<S>(logits.size());
    auto& gz = grad_buffer(*logits.node());
    auto& gt = grad_buffer(*targets.node());
    for (std::int64_t i = 0; i < logits.size(); ++i) {
      const S z = logits.data()[i], t = targets.data()[i];
      gz[static_cast<std::size_t>(i)] += g * (detail::stable_sigmoid(z) - t);
      gt[static_cast<std::size_t>(i)] += g * (-z);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// structure ops

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape target) {
  check(numel(target) == x.size(),
        "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(target));
  Tensor<S> out(std::move(target), std::vector<S>(x.values()));
  maybe_record({&x}, out, [x, out]() { detail::accumulate(*x.node(), out.node()->grad); });
  return out;
}

template <class S>
Tensor<S> flatten2d(const Tensor<S>& x) {
  return reshape(x, Shape{x.dim(0), x.size() / x.dim(0)});
}

// concatenation along dimension 1 (channels for 4-d, features for 2-d)
template <class S>
Tensor<S> concat1(const Tensor<S>& a, const Tensor<S>& b) {
  check(a.ndim() == b.ndim() && a.ndim() >= 2, "concat1: rank mismatch " + shape_str(a.shape()) +
                                                   " vs " + shape_str(b.shape()));
  Shape sh = a.shape();
  for (int i = 0; i < a.ndim(); ++i)
    if (i != 1)
      check(a.dim(i) == b.dim(i),
            "concat1: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  sh[1] = a.dim(1) + b.dim(1);
  Tensor<S> out(sh);
  const std::int64_t n = a.dim(0);
  const std::int64_t inner_a = a.size() / n, inner_b = b.size() / n;
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * inner_a, inner_a, out.mutable_data() + i * (inner_a + inner_b));
    std::copy_n(b.data() + i * inner_b, inner_b,
                out.mutable_data() + i * (inner_a + inner_b) + inner_a);
  }
  maybe_record({&a, &b}, out, [a, b, out, n, inner_a, inner_b]() {
    const auto& g = out.node()->grad;
    auto& ga = grad_buffer(*a.node());
    auto& gb = grad_buffer(*b.node());
    for (std::int64_t i = 0; i < n; ++i) {
      const S* gp = g.data() + i * (inner_a + inner_b);
      for (std::int64_t j = 0; j < inner_a; ++j) ga[static_cast<std::size_t>(i * inner_a + j)] += gp[j];
      for (std::int64_t j = 0; j < inner_b; ++j)
        gb[static_cast<std::size_t>(i * inner_b + j)] += gp[inner_a + j];
    }
  });
  return out;
}

template <class S>
Tensor<S> global_avg_pool(const Tensor<S>& x) {
  check(x.ndim() == 4, "global_avg_pool: input must be [N,C,H,W], got " + shape_str(x.shape()));
  const std::int64_t N = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor<S> out(Shape{N, C});
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t c = 0; c < C; ++c) {
      const S* p = x.data() + (n * C + c) * plane;
      S acc = S(0);
      for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
      out.mutable_data()[n * C + c] = acc / static_cast<S>(plane);
    }
  maybe_record({&x}, out, [x, out, N, C, plane]() {
    const auto& g = out.node()->grad;
    auto& gx = grad_buffer(*x.node());
    for (std::int64_t n = 0; n < N; ++n)
      for (std::int64_t c = 0; c < C; ++c) {
        const S gv = g[static_cast<std::size_t>(n * C + c)] / static_cast<S>(plane);
        S* p = gx.data() + (n * C + c) * plane;
        for (std::int64_t i = 0; i < plane; ++i) p[i] += gv;
      }
  });
  return out;
}

template <class S>
Tensor<S> detach(const Tensor<S>& x) {
  return x.detach_copy();
}

// Stacks same-shape [C,...] tensors into one [N,C,...] batch (leaf, no grad).
template <class S>
Tensor<S> stack_batch(const std::vector<const Tensor<S>*>& items) {
  if (items.empty()) throw ValueError("stack_batch: empty batch");
  Shape sh = items[0]->shape();
  Shape out_shape;
  out_shape.push_back(static_cast<std::int64_t>(items.size()));
  for (auto d : sh) out_shape.push_back(d);
  Tensor<S> out(out_shape);
  const std::int64_t inner = items[0]->size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    check(items[i]->shape() == sh, "stack_batch: inconsistent item shapes");
    std::copy_n(items[i]->data(), inner, out.mutable_data() + static_cast<std::int64_t>(i) * inner);
  }
  return out;
}

template <class S>
Tensor<S> stack_batch(const std::vector<Tensor<S>>& items) {
  std::vector<const Tensor<S>*> ptrs;
  ptrs.reserve(items.size());
  for (const auto& t : items) ptrs.push_back(&t);
  return stack_batch(ptrs);
}

// Extracts row n of a [N,...] batch as [...] (leaf, no grad).
template <class S>
Tensor<S> batch_row(const Tensor<S>& batch, std::int64_t n) {
  check(batch.ndim() >= 2, "batch_row: need a batched tensor");
  const std::int64_t inner = batch.size() / batch.dim(0);
  Shape sh(batch.shape().begin() + 1, batch.shape().end());
  Tensor<S> out(sh);
  std::copy_n(batch.data() + n * inner, inner, out.mutable_data());
  return out;
}

}  // namespace laug
