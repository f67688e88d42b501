#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lego/tensor.hpp"

namespace lego {

template <class T>
struct AdamConfig {
  T lr = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

// Per-parameter moment buffers; allocated lazily on the first step so the
// state can be declared next to its tensor without knowing the size yet.
template <class T>
struct AdamState {
  i64 step = 0;
  std::vector<T> m;
  std::vector<T> v;
};

template <class T>
void adam_step(Tensor<T>& param, const std::vector<T>& grad, AdamState<T>& state,
               const AdamConfig<T>& cfg) {
  const std::size_t n = param.buffer().size();
  if (grad.size() != n) {
    throw invalid_input("adam: gradient length " + std::to_string(grad.size()) +
                        " does not match parameter length " + std::to_string(n));
  }
  if (state.m.size() != n) {
    state.m.assign(n, T(0));
    state.v.assign(n, T(0));
    state.step = 0;
  }
  ++state.step;
  const T b1 = cfg.beta1, b2 = cfg.beta2;
  const T bias1 = T(1) - std::pow(b1, static_cast<T>(state.step));
  const T bias2 = T(1) - std::pow(b2, static_cast<T>(state.step));
  T* p = param.data();
  for (std::size_t i = 0; i < n; ++i) {
    const T g = grad[i];
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
    const T mhat = state.m[i] / bias1;
    const T vhat = state.v[i] / bias2;
    p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Convenience overload for parameters that keep their gradient in-place.
template <class T>
void adam_step(Tensor<T>& param, AdamState<T>& state, const AdamConfig<T>& cfg) {
  adam_step(param, param.grad, state, cfg);
}

}  // namespace lego
