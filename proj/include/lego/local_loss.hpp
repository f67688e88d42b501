#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lego/adam.hpp"
#include "lego/ops.hpp"
#include "lego/tensor.hpp"

namespace lego {

// Adjusted cosine similarity between the examples of a mini-batch: every
// example is flattened, centered on its own mean, then compared pairwise by
// cosine. Examples with zero variance get zero off-diagonal similarity.
template <class T>
struct SimCache {
  Tensor<T> unit;            // [b, f] centered and normalized rows; zero rows stay zero
  std::vector<T> norms;      // centered norms, 0 for degenerate rows
  i64 features = 0;
};

template <class T>
Tensor<T> similarity_matrix(const Tensor<T>& x, SimCache<T>* cache = nullptr) {
  if (x.ndim() < 2) {
    throw invalid_input("similarity: expected at least 2-d input, got " + shape_str(x.shape()));
  }
  const i64 b = x.dim(0);
  if (b < 2) throw invalid_input("similarity: need a batch of >= 2 examples");
  const i64 f = x.numel() / b;

  Tensor<T> unit({b, f});
  std::vector<T> norms(static_cast<std::size_t>(b), T(0));
  for (i64 i = 0; i < b; ++i) {
    const T* row = x.data() + i * f;
    T* u = unit.data() + i * f;
    T mean = T(0);
    for (i64 j = 0; j < f; ++j) mean += row[j];
    mean /= static_cast<T>(f);
    T sq = T(0);
    for (i64 j = 0; j < f; ++j) {
      u[j] = row[j] - mean;
      sq += u[j] * u[j];
    }
    const T norm = std::sqrt(sq);
    norms[static_cast<std::size_t>(i)] = norm;
    if (norm > T(0)) {
      for (i64 j = 0; j < f; ++j) u[j] /= norm;
    } else {
      for (i64 j = 0; j < f; ++j) u[j] = T(0);
    }
  }

  Tensor<T> sim({b, b});
  for (i64 i = 0; i < b; ++i) {
    sim(i, i) = T(1);
    for (i64 j = i + 1; j < b; ++j) {
      T dot = T(0);
      const T* ui = unit.data() + i * f;
      const T* uj = unit.data() + j * f;
      for (i64 p = 0; p < f; ++p) dot += ui[p] * uj[p];
      sim(i, j) = dot;
      sim(j, i) = dot;
    }
  }
  if (cache) {
    cache->unit = std::move(unit);
    cache->norms = std::move(norms);
    cache->features = f;
  }
  return sim;
}

// Gradient of similarity_matrix wrt its input, given dL/dS. Uses the cached
// normalized rows; the diagonal of S is constant so its entries carry no
// gradient.
template <class T>
Tensor<T> similarity_matrix_backward(const Tensor<T>& grad_sim, const SimCache<T>& cache,
                                     const Shape& input_shape) {
  const i64 b = cache.unit.dim(0), f = cache.features;
  Tensor<T> grad_x(input_shape);
  for (i64 i = 0; i < b; ++i) {
    const T norm = cache.norms[static_cast<std::size_t>(i)];
    if (norm <= T(0)) continue;
    // g = sum_j (G_ij + G_ji) u_j over the off-diagonal
    std::vector<T> g(static_cast<std::size_t>(f), T(0));
    for (i64 j = 0; j < b; ++j) {
      if (j == i) continue;
      const T w = grad_sim(i, j) + grad_sim(j, i);
      if (w == T(0)) continue;
      const T* uj = cache.unit.data() + j * f;
      for (i64 p = 0; p < f; ++p) g[static_cast<std::size_t>(p)] += w * uj[p];
    }
    const T* ui = cache.unit.data() + i * f;
    T dot = T(0);
    for (i64 p = 0; p < f; ++p) dot += g[static_cast<std::size_t>(p)] * ui[p];
    // project out the radial component, undo normalization, then centering
    T mean_corr = T(0);
    std::vector<T> gc(static_cast<std::size_t>(f));
    for (i64 p = 0; p < f; ++p) {
      gc[static_cast<std::size_t>(p)] = (g[static_cast<std::size_t>(p)] - dot * ui[p]) / norm;
      mean_corr += gc[static_cast<std::size_t>(p)];
    }
    mean_corr /= static_cast<T>(f);
    T* gx = grad_x.data() + i * f;
    for (i64 p = 0; p < f; ++p) gx[p] = gc[static_cast<std::size_t>(p)] - mean_corr;
  }
  return grad_x;
}

// Per-block training head: a linear classifier over the (optionally pooled)
// block output plus a 3x3 convolution feeding the similarity matching loss.
// Heads exist only while training; inference never evaluates them.
template <class T>
struct LocalHead {
  Tensor<T> classifier_w;  // [f, C]
  Tensor<T> classifier_b;  // [C]
  Tensor<T> sim_w;         // [c, c, 3, 3]
  AdamState<T> w_adam, b_adam, sim_adam;
  bool gap_over_time = false;  // classifier input pooled over time when flat size is large
  i64 eval_count = 0;          // touched by every head evaluation; asserted zero at inference

  ConvSpec sim_spec(i64 channels) const { return ConvSpec{channels, channels, 3, 3, 1, 1, 1}; }
};

inline constexpr i64 kHeadFlattenLimit = 16384;

namespace detail {

inline Shape as_4d(const Shape& s) {
  Shape out = s;
  while (out.size() < 4) out.push_back(1);
  return out;
}

}  // namespace detail

template <class T>
LocalHead<T> make_local_head(const Shape& block_shape, i64 num_classes, std::mt19937& rng) {
  const Shape s = detail::as_4d(block_shape);
  const i64 c = s[1], t = s[2], w = s[3];
  LocalHead<T> head;
  head.gap_over_time = c * t * w > kHeadFlattenLimit;
  const i64 f = head.gap_over_time ? c * w : c * t * w;
  head.classifier_w = Tensor<T>({f, num_classes});
  head.classifier_b = Tensor<T>({num_classes});
  head.sim_w = Tensor<T>({c, c, 3, 3});
  fill_fan_in_uniform(head.classifier_w, rng, f);
  fill_fan_in_uniform(head.sim_w, rng, c * 9);
  head.classifier_w.alloc_grad();
  head.classifier_b.alloc_grad();
  head.sim_w.alloc_grad();
  return head;
}

// Classifier features: flat block output, or average over time when the
// flat vector would be too wide.
template <class T>
Tensor<T> head_features(const Tensor<T>& block_out, const LocalHead<T>& head) {
  const Shape s = detail::as_4d(block_out.shape());
  const i64 b = s[0], c = s[1], t = s[2], w = s[3];
  if (!head.gap_over_time) {
    return block_out.reshaped({b, c * t * w});
  }
  Tensor<T> pooled({b, c * w});
  for (i64 ib = 0; ib < b; ++ib) {
    for (i64 ic = 0; ic < c; ++ic) {
      for (i64 iw = 0; iw < w; ++iw) {
        T acc = T(0);
        for (i64 it = 0; it < t; ++it) {
          acc += block_out[((ib * c + ic) * t + it) * w + iw];
        }
        pooled(ib, ic * w + iw) = acc / static_cast<T>(t);
      }
    }
  }
  return pooled;
}

template <class T>
Tensor<T> head_features_backward(const Tensor<T>& grad_feats, const LocalHead<T>& head,
                                 const Shape& block_shape) {
  const Shape s = detail::as_4d(block_shape);
  const i64 b = s[0], c = s[1], t = s[2], w = s[3];
  Tensor<T> grad(block_shape);
  if (!head.gap_over_time) {
    for (i64 i = 0; i < grad.numel(); ++i) grad[i] = grad_feats[i];
    return grad;
  }
  for (i64 ib = 0; ib < b; ++ib) {
    for (i64 ic = 0; ic < c; ++ic) {
      for (i64 iw = 0; iw < w; ++iw) {
        const T g = grad_feats(ib, ic * w + iw) / static_cast<T>(t);
        for (i64 it = 0; it < t; ++it) {
          grad[((ib * c + ic) * t + it) * w + iw] = g;
        }
      }
    }
  }
  return grad;
}

// Cross entropy between the targets and the head's linear read-out of the
// block output. Gradients stop at the producing block's output.
template <class T>
struct PredictionLossResult {
  T loss = T(0);
  Tensor<T> grad_block;  // wrt block output
};

template <class T>
PredictionLossResult<T> prediction_loss(const Tensor<T>& block_out, LocalHead<T>& head,
                                        const std::vector<int>& targets, bool accumulate_grads) {
  ++head.eval_count;
  Tensor<T> feats = head_features(block_out, head);
  if (feats.dim(1) != head.classifier_w.dim(0)) {
    throw invalid_input("prediction loss: block features " + shape_str(feats.shape()) +
                        " do not match classifier " + shape_str(head.classifier_w.shape()));
  }
  Tensor<T> logits = dense_forward(feats, head.classifier_w, head.classifier_b);
  SoftmaxLoss<T> sm = softmax_cross_entropy(logits, targets);
  Tensor<T> grad_feats, grad_w, grad_b;
  dense_backward(sm.grad_logits, feats, head.classifier_w, &grad_feats,
                 accumulate_grads ? &grad_w : nullptr, accumulate_grads ? &grad_b : nullptr);
  if (accumulate_grads) {
    for (i64 i = 0; i < grad_w.numel(); ++i) {
      head.classifier_w.grad[static_cast<std::size_t>(i)] += grad_w[i];
    }
    for (i64 i = 0; i < grad_b.numel(); ++i) {
      head.classifier_b.grad[static_cast<std::size_t>(i)] += grad_b[i];
    }
  }
  PredictionLossResult<T> result;
  result.loss = sm.loss;
  result.grad_block = head_features_backward(grad_feats, head, block_out.shape());
  return result;
}

// One-hot rows for the label similarity target.
template <class T>
Tensor<T> one_hot(const std::vector<int>& targets, i64 num_classes) {
  Tensor<T> y({static_cast<i64>(targets.size()), num_classes});
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const int t = targets[i];
    if (t < 0 || t >= num_classes) {
      throw invalid_input("one hot: target " + std::to_string(t) + " out of range [0," +
                          std::to_string(num_classes) + ")");
    }
    y(static_cast<i64>(i), t) = T(1);
  }
  return y;
}

// || S(C(X; w)) - S(Y) ||_F / b, where C is the head's 3x3 convolution and Y
// the one-hot label matrix. The 1/b factor keeps the loss batch-size stable.
template <class T>
struct SimilarityLossResult {
  T loss = T(0);
  Tensor<T> grad_block;
};

template <class T>
SimilarityLossResult<T> similarity_loss(const Tensor<T>& block_out, LocalHead<T>& head,
                                        const Tensor<T>& targets_onehot, bool accumulate_grads) {
  ++head.eval_count;
  const Shape s4 = detail::as_4d(block_out.shape());
  Tensor<T> x4 = block_out.reshaped(s4);
  const ConvSpec spec = head.sim_spec(s4[1]);
  Tensor<T> transformed = conv_forward(x4, head.sim_w, spec);

  SimCache<T> cache;
  Tensor<T> sim_x = similarity_matrix(transformed, &cache);
  Tensor<T> sim_y = similarity_matrix(targets_onehot);

  const i64 b = sim_x.dim(0);
  T sq = T(0);
  for (i64 i = 0; i < sim_x.numel(); ++i) {
    const T d = sim_x[i] - sim_y[i];
    sq += d * d;
  }
  const T fro = std::sqrt(sq);

  SimilarityLossResult<T> result;
  result.loss = fro / static_cast<T>(b);

  Tensor<T> grad_sim({b, b});
  if (fro > T(0)) {
    const T scale = T(1) / (static_cast<T>(b) * fro);
    for (i64 i = 0; i < grad_sim.numel(); ++i) {
      grad_sim[i] = scale * (sim_x[i] - sim_y[i]);
    }
  }
  Tensor<T> grad_transformed =
      similarity_matrix_backward(grad_sim, cache, transformed.shape());
  Tensor<T> grad_x4, grad_w;
  conv_backward(grad_transformed, x4, head.sim_w, spec, &grad_x4,
                accumulate_grads ? &grad_w : nullptr);
  if (accumulate_grads) {
    for (i64 i = 0; i < grad_w.numel(); ++i) {
      head.sim_w.grad[static_cast<std::size_t>(i)] += grad_w[i];
    }
  }
  grad_x4.reshape(block_out.shape());
  result.grad_block = std::move(grad_x4);
  return result;
}

// Weighted combination (1 - alpha) * prediction + alpha * similarity.
template <class T>
struct LocalLossResult {
  T loss = T(0);
  T prediction = T(0);
  T similarity = T(0);
  Tensor<T> grad_block;
};

template <class T>
LocalLossResult<T> local_loss(const Tensor<T>& block_out, LocalHead<T>& head,
                              const std::vector<int>& targets, i64 num_classes, T alpha,
                              bool accumulate_grads = true) {
  if (alpha < T(0) || alpha > T(1)) {
    throw invalid_input("local loss: alpha must lie in [0,1], got " + std::to_string(alpha));
  }
  PredictionLossResult<T> pred = prediction_loss(block_out, head, targets, accumulate_grads);
  Tensor<T> onehot = one_hot<T>(targets, num_classes);
  SimilarityLossResult<T> sim = similarity_loss(block_out, head, onehot, accumulate_grads);

  LocalLossResult<T> result;
  result.prediction = pred.loss;
  result.similarity = sim.loss;
  result.loss = (T(1) - alpha) * pred.loss + alpha * sim.loss;
  result.grad_block = Tensor<T>(block_out.shape());
  for (i64 i = 0; i < result.grad_block.numel(); ++i) {
    result.grad_block[i] = (T(1) - alpha) * pred.grad_block[i] + alpha * sim.grad_block[i];
  }
  return result;
}

}  // namespace lego
