#pragma once

#include <cmath>
#include <string>
#include <type_traits>
#include <vector>

#include "lego/tensor.hpp"

namespace lego {

// Geometry of a temporal convolution over [batch, channels, time, width]
// feature maps. Filters are kernel_t x kernel_w; the width axis carries the
// raw sensor attributes and is convolved with kernel_w = 1 everywhere except
// the local-loss similarity head (3x3).
struct ConvSpec {
  i64 in_channels = 0;
  i64 out_channels = 0;
  i64 kernel_t = 1;
  i64 kernel_w = 1;
  i64 stride = 1;  // temporal stride; width stride is always 1
  i64 pad_t = 0;
  i64 pad_w = 0;
};

inline i64 conv_out_extent(i64 in, i64 kernel, i64 stride, i64 pad) {
  if (stride < 1) throw invalid_input("conv: stride must be >= 1, got " + std::to_string(stride));
  if (pad < 0) throw invalid_input("conv: padding must be >= 0, got " + std::to_string(pad));
  i64 out = (in + 2 * pad - kernel) / stride + 1;
  if (in + 2 * pad < kernel || out < 1) {
    throw invalid_input("conv: kernel extent " + std::to_string(kernel) +
                        " does not fit input extent " + std::to_string(in) + " with padding " +
                        std::to_string(pad));
  }
  return out;
}

namespace detail {

template <class T>
void conv_check(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
  if (x.ndim() != 4 || w.ndim() != 4) {
    throw invalid_input("conv: expected 4-d input and filters, got " + shape_str(x.shape()) +
                        " and " + shape_str(w.shape()));
  }
  if (x.dim(1) != spec.in_channels || w.dim(1) != spec.in_channels ||
      w.dim(0) != spec.out_channels || w.dim(2) != spec.kernel_t || w.dim(3) != spec.kernel_w) {
    throw invalid_input("conv: input " + shape_str(x.shape()) + " and filters " +
                        shape_str(w.shape()) + " do not match spec (c=" +
                        std::to_string(spec.in_channels) + ", n=" + std::to_string(spec.out_channels) +
                        ", kernel=" + std::to_string(spec.kernel_t) + "x" +
                        std::to_string(spec.kernel_w) + ")");
  }
}

}  // namespace detail

// Cross-correlation along the time axis (and the width axis when
// kernel_w > 1). Output is [b, n, T', W'].
template <class T>
Tensor<T> conv_forward(const Tensor<T>& x, const Tensor<T>& w, const ConvSpec& spec) {
  detail::conv_check(x, w, spec);
  const i64 b = x.dim(0), c = x.dim(1), t_in = x.dim(2), w_in = x.dim(3);
  const i64 n = spec.out_channels, dt = spec.kernel_t, dw = spec.kernel_w;
  const i64 t_out = conv_out_extent(t_in, dt, spec.stride, spec.pad_t);
  const i64 w_out = conv_out_extent(w_in, dw, 1, spec.pad_w);

  Tensor<T> y({b, n, t_out, w_out});
  const T* xp = x.data();
  const T* wp = w.data();
  T* yp = y.data();
  for (i64 ib = 0; ib < b; ++ib) {
    for (i64 oc = 0; oc < n; ++oc) {
      T* ybase = yp + (ib * n + oc) * t_out * w_out;
      const T* wbase = wp + oc * c * dt * dw;
      for (i64 ic = 0; ic < c; ++ic) {
        const T* xbase = xp + (ib * c + ic) * t_in * w_in;
        for (i64 kt = 0; kt < dt; ++kt) {
          for (i64 kw = 0; kw < dw; ++kw) {
            const T wv = wbase[(ic * dt + kt) * dw + kw];
            for (i64 ot = 0; ot < t_out; ++ot) {
              const i64 it = ot * spec.stride - spec.pad_t + kt;
              if (it < 0 || it >= t_in) continue;
              const T* xrow = xbase + it * w_in;
              T* yrow = ybase + ot * w_out;
              for (i64 ow = 0; ow < w_out; ++ow) {
                const i64 iw = ow - spec.pad_w + kw;
                if (iw < 0 || iw >= w_in) continue;
                yrow[ow] += wv * xrow[iw];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

// Exact gradients of conv_forward. Either output pointer may be null to skip
// that gradient.
template <class T>
void conv_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                   const ConvSpec& spec, std::type_identity_t<Tensor<T>>* grad_x,
                   std::type_identity_t<Tensor<T>>* grad_w) {
  detail::conv_check(x, w, spec);
  const i64 b = x.dim(0), c = x.dim(1), t_in = x.dim(2), w_in = x.dim(3);
  const i64 n = spec.out_channels, dt = spec.kernel_t, dw = spec.kernel_w;
  const i64 t_out = conv_out_extent(t_in, dt, spec.stride, spec.pad_t);
  const i64 w_out = conv_out_extent(w_in, dw, 1, spec.pad_w);
  if (grad_out.shape() != Shape{b, n, t_out, w_out}) {
    throw invalid_input("conv backward: gradient shape " + shape_str(grad_out.shape()) +
                        " does not match forward output " + shape_str(Shape{b, n, t_out, w_out}));
  }

  if (grad_x) *grad_x = Tensor<T>(x.shape());
  if (grad_w) *grad_w = Tensor<T>(w.shape());
  const T* gop = grad_out.data();
  const T* xp = x.data();
  const T* wp = w.data();
  T* gxp = grad_x ? grad_x->data() : nullptr;
  T* gwp = grad_w ? grad_w->data() : nullptr;

  for (i64 ib = 0; ib < b; ++ib) {
    for (i64 oc = 0; oc < n; ++oc) {
      const T* gobase = gop + (ib * n + oc) * t_out * w_out;
      const T* wbase = wp + oc * c * dt * dw;
      T* gwbase = gwp ? gwp + oc * c * dt * dw : nullptr;
      for (i64 ic = 0; ic < c; ++ic) {
        const T* xbase = xp + (ib * c + ic) * t_in * w_in;
        T* gxbase = gxp ? gxp + (ib * c + ic) * t_in * w_in : nullptr;
        for (i64 kt = 0; kt < dt; ++kt) {
          for (i64 kw = 0; kw < dw; ++kw) {
            const T wv = wbase[(ic * dt + kt) * dw + kw];
            T acc = T(0);
            for (i64 ot = 0; ot < t_out; ++ot) {
              const i64 it = ot * spec.stride - spec.pad_t + kt;
              if (it < 0 || it >= t_in) continue;
              const T* gorow = gobase + ot * w_out;
              const T* xrow = xbase + it * w_in;
              T* gxrow = gxbase ? gxbase + it * w_in : nullptr;
              for (i64 ow = 0; ow < w_out; ++ow) {
                const i64 iw = ow - spec.pad_w + kw;
                if (iw < 0 || iw >= w_in) continue;
                const T go = gorow[ow];
                acc += go * xrow[iw];
                if (gxrow) gxrow[iw] += go * wv;
              }
            }
            if (gwbase) gwbase[(ic * dt + kt) * dw + kw] += acc;
          }
        }
      }
    }
  }
}

// y = x * w + bias for x [b, f], w [f, u], bias [u].
template <class T>
Tensor<T> dense_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (x.ndim() != 2 || w.ndim() != 2 || x.dim(1) != w.dim(0) || bias.numel() != w.dim(1)) {
    throw invalid_input("dense: input " + shape_str(x.shape()) + ", weights " +
                        shape_str(w.shape()) + ", bias " + shape_str(bias.shape()) +
                        " are inconsistent");
  }
  const i64 b = x.dim(0), f = x.dim(1), u = w.dim(1);
  Tensor<T> y({b, u});
  for (i64 ib = 0; ib < b; ++ib) {
    T* yrow = y.data() + ib * u;
    for (i64 j = 0; j < u; ++j) yrow[j] = bias[j];
    const T* xrow = x.data() + ib * f;
    for (i64 i = 0; i < f; ++i) {
      const T xv = xrow[i];
      const T* wrow = w.data() + i * u;
      for (i64 j = 0; j < u; ++j) yrow[j] += xv * wrow[j];
    }
  }
  return y;
}

template <class T>
void dense_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const Tensor<T>& w,
                    std::type_identity_t<Tensor<T>>* grad_x, std::type_identity_t<Tensor<T>>* grad_w,
                    std::type_identity_t<Tensor<T>>* grad_bias) {
  const i64 b = x.dim(0), f = x.dim(1), u = w.dim(1);
  if (grad_out.shape() != Shape{b, u}) {
    throw invalid_input("dense backward: gradient shape " + shape_str(grad_out.shape()) +
                        " does not match output " + shape_str(Shape{b, u}));
  }
  if (grad_x) *grad_x = Tensor<T>(x.shape());
  if (grad_w) *grad_w = Tensor<T>(w.shape());
  if (grad_bias) *grad_bias = Tensor<T>({u});
  for (i64 ib = 0; ib < b; ++ib) {
    const T* gorow = grad_out.data() + ib * u;
    const T* xrow = x.data() + ib * f;
    if (grad_bias) {
      for (i64 j = 0; j < u; ++j) (*grad_bias)[j] += gorow[j];
    }
    for (i64 i = 0; i < f; ++i) {
      const T* wrow = w.data() + i * u;
      T acc = T(0);
      for (i64 j = 0; j < u; ++j) {
        acc += gorow[j] * wrow[j];
        if (grad_w) grad_w->data()[i * u + j] += xrow[i] * gorow[j];
      }
      if (grad_x) grad_x->data()[ib * f + i] = acc;
    }
  }
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (i64 i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

// Gate passes gradient where x > 0; the tie at exactly 0 passes 0.
template <class T>
Tensor<T> relu_backward(const Tensor<T>& grad_out, const Tensor<T>& x) {
  if (grad_out.shape() != x.shape()) {
    throw invalid_input("relu backward: gradient shape " + shape_str(grad_out.shape()) +
                        " does not match input " + shape_str(x.shape()));
  }
  Tensor<T> gx(x.shape());
  for (i64 i = 0; i < x.numel(); ++i) gx[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return gx;
}

// Windowed max along the time axis. Ties route to the earliest position.
struct MaxPoolCache {
  std::vector<i64> argmax;  // flat input index per output element
};

template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& x, i64 extent, i64 stride, MaxPoolCache* cache) {
  if (x.ndim() != 4) throw invalid_input("maxpool: expected 4-d input, got " + shape_str(x.shape()));
  if (extent < 1 || stride < 1) throw invalid_input("maxpool: extent and stride must be >= 1");
  const i64 b = x.dim(0), c = x.dim(1), t_in = x.dim(2), w_in = x.dim(3);
  if (extent > t_in) {
    throw invalid_input("maxpool: extent " + std::to_string(extent) + " exceeds time extent " +
                        std::to_string(t_in));
  }
  const i64 t_out = (t_in - extent) / stride + 1;
  Tensor<T> y({b, c, t_out, w_in});
  if (cache) cache->argmax.assign(static_cast<std::size_t>(y.numel()), 0);
  i64 oi = 0;
  for (i64 ib = 0; ib < b; ++ib) {
    for (i64 ic = 0; ic < c; ++ic) {
      const T* xbase = x.data() + (ib * c + ic) * t_in * w_in;
      for (i64 ot = 0; ot < t_out; ++ot) {
        for (i64 iw = 0; iw < w_in; ++iw, ++oi) {
          i64 best_t = ot * stride;
          T best = xbase[best_t * w_in + iw];
          for (i64 e = 1; e < extent; ++e) {
            const i64 it = ot * stride + e;
            const T v = xbase[it * w_in + iw];
            if (v > best) {
              best = v;
              best_t = it;
            }
          }
          y[oi] = best;
          if (cache) cache->argmax[static_cast<std::size_t>(oi)] = (ib * c + ic) * t_in * w_in + best_t * w_in + iw;
        }
      }
    }
  }
  return y;
}

// Routes each output gradient to the position that produced the max.
template <class T>
Tensor<T> maxpool_backward(const Tensor<T>& grad_out, const Shape& input_shape,
                           const MaxPoolCache& cache) {
  if (static_cast<i64>(cache.argmax.size()) != grad_out.numel()) {
    throw invalid_input("maxpool backward: cache does not match gradient shape");
  }
  Tensor<T> gx(input_shape);
  for (i64 i = 0; i < grad_out.numel(); ++i) {
    gx[cache.argmax[static_cast<std::size_t>(i)]] += grad_out[i];
  }
  return gx;
}

// Per-channel batch normalization over (batch, time, width). Running
// statistics follow the usual exponential moving average with the stated
// momentum; running variance stores the unbiased estimate.
template <class T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  explicit BatchNormState(i64 channels = 0)
      : running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

template <class T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

template <class T>
Tensor<T> batchnorm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            BatchNormState<T>& state, bool train,
                            BatchNormCache<T>* cache = nullptr) {
  if (x.ndim() != 4) throw invalid_input("batchnorm: expected 4-d input, got " + shape_str(x.shape()));
  const i64 b = x.dim(0), c = x.dim(1), t = x.dim(2), w = x.dim(3);
  if (gamma.numel() != c || beta.numel() != c || static_cast<i64>(state.running_mean.size()) != c) {
    throw invalid_input("batchnorm: parameter length does not match " + std::to_string(c) +
                        " channels");
  }
  if (train && b < 2) {
    throw invalid_input("batchnorm: training batch of size " + std::to_string(b) +
                        " has undefined variance; need batch >= 2");
  }
  const i64 reduce = b * t * w;
  Tensor<T> y(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->inv_std.assign(static_cast<std::size_t>(c), T(0));
  }
  for (i64 ic = 0; ic < c; ++ic) {
    T mean, var;
    if (train) {
      T sum = T(0);
      for (i64 ib = 0; ib < b; ++ib) {
        const T* p = x.data() + (ib * c + ic) * t * w;
        for (i64 i = 0; i < t * w; ++i) sum += p[i];
      }
      mean = sum / static_cast<T>(reduce);
      T sq = T(0);
      for (i64 ib = 0; ib < b; ++ib) {
        const T* p = x.data() + (ib * c + ic) * t * w;
        for (i64 i = 0; i < t * w; ++i) {
          const T d = p[i] - mean;
          sq += d * d;
        }
      }
      var = sq / static_cast<T>(reduce);  // biased, used for normalization
      const T unbiased = reduce > 1 ? sq / static_cast<T>(reduce - 1) : var;
      state.running_mean[static_cast<std::size_t>(ic)] =
          (T(1) - state.momentum) * state.running_mean[static_cast<std::size_t>(ic)] + state.momentum * mean;
      state.running_var[static_cast<std::size_t>(ic)] =
          (T(1) - state.momentum) * state.running_var[static_cast<std::size_t>(ic)] + state.momentum * unbiased;
    } else {
      mean = state.running_mean[static_cast<std::size_t>(ic)];
      var = state.running_var[static_cast<std::size_t>(ic)];
    }
    const T inv_std = T(1) / std::sqrt(var + state.eps);
    if (cache) cache->inv_std[static_cast<std::size_t>(ic)] = inv_std;
    const T g = gamma[ic], bt = beta[ic];
    for (i64 ib = 0; ib < b; ++ib) {
      const T* p = x.data() + (ib * c + ic) * t * w;
      T* q = y.data() + (ib * c + ic) * t * w;
      T* h = cache ? cache->xhat.data() + (ib * c + ic) * t * w : nullptr;
      for (i64 i = 0; i < t * w; ++i) {
        const T xhat = (p[i] - mean) * inv_std;
        if (h) h[i] = xhat;
        q[i] = g * xhat + bt;
      }
    }
  }
  return y;
}

// Train-mode gradients through the batch statistics.
template <class T>
void batchnorm_backward(const Tensor<T>& grad_out, const Tensor<T>& gamma,
                        const BatchNormCache<T>& cache, std::type_identity_t<Tensor<T>>* grad_x,
                        std::type_identity_t<Tensor<T>>* grad_gamma,
                        std::type_identity_t<Tensor<T>>* grad_beta) {
  const Tensor<T>& xhat = cache.xhat;
  if (grad_out.shape() != xhat.shape()) {
    throw invalid_input("batchnorm backward: gradient shape " + shape_str(grad_out.shape()) +
                        " does not match cached activations " + shape_str(xhat.shape()));
  }
  const i64 b = xhat.dim(0), c = xhat.dim(1), t = xhat.dim(2), w = xhat.dim(3);
  const i64 reduce = b * t * w;
  if (grad_x) *grad_x = Tensor<T>(xhat.shape());
  if (grad_gamma) *grad_gamma = Tensor<T>({c});
  if (grad_beta) *grad_beta = Tensor<T>({c});
  for (i64 ic = 0; ic < c; ++ic) {
    T sum_dy = T(0), sum_dy_xhat = T(0);
    for (i64 ib = 0; ib < b; ++ib) {
      const T* gy = grad_out.data() + (ib * c + ic) * t * w;
      const T* h = xhat.data() + (ib * c + ic) * t * w;
      for (i64 i = 0; i < t * w; ++i) {
        sum_dy += gy[i];
        sum_dy_xhat += gy[i] * h[i];
      }
    }
    if (grad_gamma) (*grad_gamma)[ic] = sum_dy_xhat;
    if (grad_beta) (*grad_beta)[ic] = sum_dy;
    if (grad_x) {
      const T g = gamma[ic];
      const T inv_std = cache.inv_std[static_cast<std::size_t>(ic)];
      const T scale = g * inv_std / static_cast<T>(reduce);
      for (i64 ib = 0; ib < b; ++ib) {
        const T* gy = grad_out.data() + (ib * c + ic) * t * w;
        const T* h = xhat.data() + (ib * c + ic) * t * w;
        T* gx = grad_x->data() + (ib * c + ic) * t * w;
        for (i64 i = 0; i < t * w; ++i) {
          gx[i] = scale * (static_cast<T>(reduce) * gy[i] - sum_dy - h[i] * sum_dy_xhat);
        }
      }
    }
  }
}

template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.ndim() != 2) {
    throw invalid_input("softmax: expected [batch, classes], got " + shape_str(logits.shape()));
  }
  const i64 b = logits.dim(0), c = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (i64 ib = 0; ib < b; ++ib) {
    const T* row = logits.data() + ib * c;
    T* out = p.data() + ib * c;
    T mx = row[0];
    for (i64 j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (i64 j = 0; j < c; ++j) {
      out[j] = std::exp(row[j] - mx);
      sum += out[j];
    }
    for (i64 j = 0; j < c; ++j) out[j] /= sum;
  }
  return p;
}

// Mean negative log softmax probability of the target class, with the
// gradient (softmax - onehot) / batch. Computed with max-shift.
template <class T>
struct SoftmaxLoss {
  T loss = T(0);
  Tensor<T> grad_logits;
};

template <class T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets) {
  if (logits.ndim() != 2 || static_cast<i64>(targets.size()) != logits.dim(0)) {
    throw invalid_input("cross entropy: logits " + shape_str(logits.shape()) + " need " +
                        std::to_string(targets.size()) + " targets");
  }
  const i64 b = logits.dim(0), c = logits.dim(1);
  for (int t : targets) {
    if (t < 0 || t >= c) {
      throw invalid_input("cross entropy: target class " + std::to_string(t) +
                          " out of range [0," + std::to_string(c) + ")");
    }
  }
  SoftmaxLoss<T> result;
  result.grad_logits = Tensor<T>(logits.shape());
  T total = T(0);
  for (i64 ib = 0; ib < b; ++ib) {
    const T* row = logits.data() + ib * c;
    T* grow = result.grad_logits.data() + ib * c;
    T mx = row[0];
    for (i64 j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (i64 j = 0; j < c; ++j) {
      grow[j] = std::exp(row[j] - mx);
      sum += grow[j];
    }
    const i64 tgt = targets[static_cast<std::size_t>(ib)];
    total += -(row[tgt] - mx - std::log(sum));
    for (i64 j = 0; j < c; ++j) {
      grow[j] = grow[j] / sum / static_cast<T>(b);
    }
    grow[tgt] -= T(1) / static_cast<T>(b);
  }
  result.loss = total / static_cast<T>(b);
  return result;
}

}  // namespace lego
