#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lego/ops.hpp"
#include "lego/tensor.hpp"

namespace lego {

// A convolutional layer whose n full-size filters are assembled from a bank
// of k smaller "Lego" filters covering c/o channels each. The float proxy N
// scores every (output filter, fragment, brick) combination; the binary mask
// M is its argmax binarization and selects exactly one brick per fragment.
template <class T>
struct LegoLayer {
  i64 n = 0;        // output channels
  i64 c = 0;        // input channels
  i64 d = 1;        // temporal kernel extent
  i64 o = 1;        // fragments the input is split into
  i64 k = 0;        // bricks in the bank, round(m * n)
  i64 c_frag = 0;   // channels per fragment, c / o
  i64 stride = 1;
  i64 pad = 0;

  Tensor<T> bank;   // [k, c_frag, d, 1]
  Tensor<T> proxy;  // N, [n, o, k]
  Tensor<T> mask;   // M, [n, o, k], entries in {0, 1}, rows one-hot

  // Argmax of each proxy row, kept in sync with mask. selection[j * o + i]
  // is the brick used for fragment i of output filter j.
  std::vector<i64> selection;

  ConvSpec fragment_spec() const {
    return ConvSpec{c_frag, k, d, 1, stride, pad, 0};
  }
  ConvSpec assembled_spec() const {
    return ConvSpec{c, n, d, 1, stride, pad, 0};
  }

  // Float weight count. Masks are structure metadata, not weights.
  i64 param_count() const { return k * c_frag * d; }
  i64 mask_bits() const { return n * o * k; }
};

inline i64 lego_brick_count(i64 n, double m) {
  i64 k = static_cast<i64>(std::llround(m * static_cast<double>(n)));
  if (k < 1) k = 1;
  return k;
}

// M[j,i,t] = 1 iff t is the argmax of N[j,i,:]; ties break to the lowest
// index so binarization is deterministic.
template <class T>
Tensor<T> binarize(const Tensor<T>& proxy) {
  if (proxy.ndim() != 3) {
    throw invalid_input("binarize: expected proxy of shape [n,o,k], got " + shape_str(proxy.shape()));
  }
  const i64 rows = proxy.dim(0) * proxy.dim(1), k = proxy.dim(2);
  Tensor<T> mask(proxy.shape());
  for (i64 r = 0; r < rows; ++r) {
    const T* row = proxy.data() + r * k;
    i64 best = 0;
    for (i64 t = 1; t < k; ++t) {
      if (row[t] > row[best]) best = t;
    }
    mask[r * k + best] = T(1);
  }
  return mask;
}

// Recomputes mask and selection from the proxy.
template <class T>
void refresh_mask(LegoLayer<T>& layer) {
  layer.mask = binarize(layer.proxy);
  layer.selection.assign(static_cast<std::size_t>(layer.n * layer.o), 0);
  for (i64 r = 0; r < layer.n * layer.o; ++r) {
    const T* row = layer.mask.data() + r * layer.k;
    for (i64 t = 0; t < layer.k; ++t) {
      if (row[t] != T(0)) {
        layer.selection[static_cast<std::size_t>(r)] = t;
        break;
      }
    }
  }
}

// Bank weights are fan-in scaled; proxy scores start as small uniform noise
// so the initial argmaxes spread near-uniformly over the bank.
template <class T>
LegoLayer<T> init_lego_layer(i64 n, i64 c, i64 d, i64 o, double m, std::uint32_t seed,
                             i64 stride = 1, i64 pad = 0) {
  if (n < 1 || c < 1 || d < 1 || o < 1) {
    throw invalid_input("lego layer: n, c, d, o must all be positive");
  }
  if (c % o != 0) {
    throw invalid_input("lego layer: input channels " + std::to_string(c) +
                        " are not divisible into " + std::to_string(o) +
                        " fragments; choose o dividing c (channels are never padded)");
  }
  const i64 k = lego_brick_count(n, m);
  if (k > n) {
    throw invalid_input("lego layer: bank ratio m=" + std::to_string(m) + " yields k=" +
                        std::to_string(k) + " bricks, more than n=" + std::to_string(n));
  }
  LegoLayer<T> layer;
  layer.n = n;
  layer.c = c;
  layer.d = d;
  layer.o = o;
  layer.k = k;
  layer.c_frag = c / o;
  layer.stride = stride;
  layer.pad = pad;
  layer.bank = Tensor<T>({k, layer.c_frag, d, 1});
  layer.proxy = Tensor<T>({n, o, k});
  std::mt19937 rng(seed);
  fill_fan_in_uniform(layer.bank, rng, layer.c_frag * d);
  fill_uniform(layer.proxy, rng, T(-0.01), T(0.01));
  refresh_mask(layer);
  return layer;
}

// Channel-contiguous split: fragment i holds channels [i*c/o, (i+1)*c/o).
template <class T>
std::vector<Tensor<T>> split_input(const Tensor<T>& x, i64 o) {
  if (x.ndim() != 4) throw invalid_input("split: expected 4-d input, got " + shape_str(x.shape()));
  const i64 b = x.dim(0), c = x.dim(1), t = x.dim(2), w = x.dim(3);
  if (o < 1 || c % o != 0) {
    throw invalid_input("split: cannot divide " + std::to_string(c) + " channels into " +
                        std::to_string(o) + " fragments");
  }
  const i64 cf = c / o;
  std::vector<Tensor<T>> fragments;
  fragments.reserve(static_cast<std::size_t>(o));
  for (i64 i = 0; i < o; ++i) {
    Tensor<T> frag({b, cf, t, w});
    for (i64 ib = 0; ib < b; ++ib) {
      const T* src = x.data() + (ib * c + i * cf) * t * w;
      T* dst = frag.data() + ib * cf * t * w;
      std::copy(src, src + cf * t * w, dst);
    }
    fragments.push_back(std::move(frag));
  }
  return fragments;
}

// Materializes the conventional filter bank F = BM: channel block i of
// output filter j is the brick selected by mask row (j, i).
template <class T>
Tensor<T> assemble_filters(const LegoLayer<T>& layer) {
  Tensor<T> filters({layer.n, layer.c, layer.d, 1});
  const i64 brick_len = layer.c_frag * layer.d;
  for (i64 j = 0; j < layer.n; ++j) {
    for (i64 i = 0; i < layer.o; ++i) {
      const i64 brick = layer.selection[static_cast<std::size_t>(j * layer.o + i)];
      const T* src = layer.bank.data() + brick * brick_len;
      T* dst = filters.data() + (j * layer.c + i * layer.c_frag) * layer.d;
      std::copy(src, src + brick_len, dst);
    }
  }
  return filters;
}

namespace detail {

template <class T>
void lego_check_input(const Tensor<T>& x, const LegoLayer<T>& layer) {
  if (x.ndim() != 4 || x.dim(1) != layer.c) {
    throw invalid_input("lego conv: input " + shape_str(x.shape()) + " does not provide " +
                        std::to_string(layer.c) + " channels");
  }
}

// Accumulates conv(x_frag, brick) into output channel j.
template <class T>
void accumulate_brick_conv(const Tensor<T>& frag, const Tensor<T>& bank, i64 brick, i64 j,
                           const LegoLayer<T>& layer, Tensor<T>& y) {
  const i64 b = frag.dim(0), t_in = frag.dim(2), w_in = frag.dim(3);
  const i64 t_out = y.dim(2);
  const T* wbase = bank.data() + brick * layer.c_frag * layer.d;
  for (i64 ib = 0; ib < b; ++ib) {
    T* ybase = y.data() + (ib * layer.n + j) * t_out * w_in;
    for (i64 ic = 0; ic < layer.c_frag; ++ic) {
      const T* xbase = frag.data() + (ib * layer.c_frag + ic) * t_in * w_in;
      for (i64 kt = 0; kt < layer.d; ++kt) {
        const T wv = wbase[ic * layer.d + kt];
        for (i64 ot = 0; ot < t_out; ++ot) {
          const i64 it = ot * layer.stride - layer.pad + kt;
          if (it < 0 || it >= t_in) continue;
          const T* xrow = xbase + it * w_in;
          T* yrow = ybase + ot * w_in;
          for (i64 iw = 0; iw < w_in; ++iw) yrow[iw] += wv * xrow[iw];
        }
      }
    }
  }
}

}  // namespace detail

// Direct evaluation of the masked sum: output channel j is the sum over
// fragments of the fragment convolved with its selected brick.
template <class T>
Tensor<T> lego_conv_naive(const Tensor<T>& x, const LegoLayer<T>& layer) {
  detail::lego_check_input(x, layer);
  const i64 b = x.dim(0), w_in = x.dim(3);
  const i64 t_out = conv_out_extent(x.dim(2), layer.d, layer.stride, layer.pad);
  Tensor<T> y({b, layer.n, t_out, w_in});
  const std::vector<Tensor<T>> fragments = split_input(x, layer.o);
  for (i64 j = 0; j < layer.n; ++j) {
    for (i64 i = 0; i < layer.o; ++i) {
      const i64 brick = layer.selection[static_cast<std::size_t>(j * layer.o + i)];
      detail::accumulate_brick_conv(fragments[static_cast<std::size_t>(i)], layer.bank, brick, j,
                                    layer, y);
    }
  }
  return y;
}

// Intermediates of the split-transform-merge path, reused by the backward
// pass. A cache is only valid between a forward and the optimizer step that
// follows it.
template <class T>
struct LegoCache {
  bool valid = false;
  std::vector<Tensor<T>> fragments;       // o tensors [b, c_frag, T, W]
  std::vector<Tensor<T>> intermediates;   // o tensors [b, k, T', W]
};

// Split-transform-merge path: every fragment is convolved with the whole
// bank once (o*k intermediate maps), then each output channel gathers and
// sums its o selected intermediates. Merge order is fragment-ascending.
template <class T>
Tensor<T> lego_conv_stm(const Tensor<T>& x, const LegoLayer<T>& layer, LegoCache<T>* cache = nullptr) {
  detail::lego_check_input(x, layer);
  const i64 b = x.dim(0), w_in = x.dim(3);
  const i64 t_out = conv_out_extent(x.dim(2), layer.d, layer.stride, layer.pad);

  std::vector<Tensor<T>> fragments = split_input(x, layer.o);
  std::vector<Tensor<T>> intermediates;
  intermediates.reserve(static_cast<std::size_t>(layer.o));
  const ConvSpec spec = layer.fragment_spec();
  for (i64 i = 0; i < layer.o; ++i) {
    intermediates.push_back(conv_forward(fragments[static_cast<std::size_t>(i)], layer.bank, spec));
  }

  Tensor<T> y({b, layer.n, t_out, w_in});
  const i64 map_len = t_out * w_in;
  for (i64 ib = 0; ib < b; ++ib) {
    for (i64 j = 0; j < layer.n; ++j) {
      T* dst = y.data() + (ib * layer.n + j) * map_len;
      for (i64 i = 0; i < layer.o; ++i) {
        const i64 brick = layer.selection[static_cast<std::size_t>(j * layer.o + i)];
        const T* src =
            intermediates[static_cast<std::size_t>(i)].data() + (ib * layer.k + brick) * map_len;
        for (i64 p = 0; p < map_len; ++p) dst[p] += src[p];
      }
    }
  }
  if (cache) {
    cache->fragments = std::move(fragments);
    cache->intermediates = std::move(intermediates);
    cache->valid = true;
  }
  return y;
}

// Gradients of the masked forward. grad_bank and grad_x are exact; the proxy
// gradient is the straight-through estimator: grad_N[j,i,t] is the inner
// product of output-gradient channel j with intermediate map I[i,t], exactly
// the gradient the mask would receive if it were a dense float parameter.
template <class T>
void lego_backward(const Tensor<T>& grad_out, const Tensor<T>& x, const LegoLayer<T>& layer,
                   const LegoCache<T>& cache, std::type_identity_t<Tensor<T>>* grad_x,
                   std::type_identity_t<Tensor<T>>* grad_bank,
                   std::type_identity_t<Tensor<T>>* grad_proxy) {
  if (!cache.valid) {
    throw invalid_input("lego backward: no cached forward pass for this step (run the "
                        "split-transform-merge forward first)");
  }
  detail::lego_check_input(x, layer);
  const i64 b = x.dim(0), t_in = x.dim(2), w_in = x.dim(3);
  const i64 t_out = conv_out_extent(t_in, layer.d, layer.stride, layer.pad);
  if (grad_out.shape() != Shape{b, layer.n, t_out, w_in}) {
    throw invalid_input("lego backward: gradient shape " + shape_str(grad_out.shape()) +
                        " does not match output " + shape_str(Shape{b, layer.n, t_out, w_in}));
  }

  const i64 map_len = t_out * w_in;
  if (grad_x) *grad_x = Tensor<T>(x.shape());
  if (grad_bank) *grad_bank = Tensor<T>(layer.bank.shape());
  const ConvSpec spec = layer.fragment_spec();

  for (i64 i = 0; i < layer.o; ++i) {
    // Scatter output-channel gradients onto the intermediates they gathered.
    Tensor<T> grad_inter({b, layer.k, t_out, w_in});
    for (i64 ib = 0; ib < b; ++ib) {
      for (i64 j = 0; j < layer.n; ++j) {
        const i64 brick = layer.selection[static_cast<std::size_t>(j * layer.o + i)];
        const T* src = grad_out.data() + (ib * layer.n + j) * map_len;
        T* dst = grad_inter.data() + (ib * layer.k + brick) * map_len;
        for (i64 p = 0; p < map_len; ++p) dst[p] += src[p];
      }
    }
    Tensor<T> grad_frag, grad_bank_i;
    conv_backward(grad_inter, cache.fragments[static_cast<std::size_t>(i)], layer.bank, spec,
                  grad_x ? &grad_frag : nullptr, grad_bank ? &grad_bank_i : nullptr);
    if (grad_bank) {
      for (i64 p = 0; p < grad_bank->numel(); ++p) (*grad_bank)[p] += grad_bank_i[p];
    }
    if (grad_x) {
      const i64 frag_len = layer.c_frag * t_in * w_in;
      for (i64 ib = 0; ib < b; ++ib) {
        const T* src = grad_frag.data() + ib * frag_len;
        T* dst = grad_x->data() + (ib * layer.c + i * layer.c_frag) * t_in * w_in;
        std::copy(src, src + frag_len, dst);
      }
    }
  }

  if (grad_proxy) {
    *grad_proxy = Tensor<T>(layer.proxy.shape());
    for (i64 j = 0; j < layer.n; ++j) {
      for (i64 i = 0; i < layer.o; ++i) {
        for (i64 t = 0; t < layer.k; ++t) {
          T acc = T(0);
          for (i64 ib = 0; ib < b; ++ib) {
            const T* go = grad_out.data() + (ib * layer.n + j) * map_len;
            const T* inter =
                cache.intermediates[static_cast<std::size_t>(i)].data() + (ib * layer.k + t) * map_len;
            for (i64 p = 0; p < map_len; ++p) acc += go[p] * inter[p];
          }
          (*grad_proxy)((j * layer.o + i) * layer.k + t) = acc;
        }
      }
    }
  }
}

// Restores the one-hot mask invariant after the optimizer touched the proxy,
// and invalidates any cached forward intermediates.
template <class T>
void post_step_rebinarize(LegoLayer<T>& layer, LegoCache<T>* cache = nullptr) {
  refresh_mask(layer);
  if (cache) {
    cache->valid = false;
    cache->fragments.clear();
    cache->intermediates.clear();
  }
}

}  // namespace lego
