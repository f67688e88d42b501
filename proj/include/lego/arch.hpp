#pragma once

#include <string>
#include <vector>

#include "lego/lego.hpp"
#include "lego/ops.hpp"
#include "lego/tensor.hpp"

namespace lego {

enum class LayerKind { Conv, Lego, Pool, Dense, Softmax };

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Lego: return "lego";
    case LayerKind::Pool: return "pool";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "?";
}

// One entry of a model architecture. Conv and lego blocks are conv + batch
// norm + ReLU; dense blocks are affine + batch norm + ReLU; softmax is the
// final affine classifier whose logits feed the cross-entropy loss.
struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  i64 n = 0;           // conv/lego output channels
  i64 d = 5;           // conv/lego temporal kernel extent
  i64 stride = 1;      // conv/lego temporal stride
  i64 pad = -1;        // conv/lego temporal padding; -1 means d/2 (time-preserving)
  i64 o = 1;           // lego fragments
  double m = 1.0;      // lego bank ratio k/n
  i64 extent = 2;      // pool window
  i64 pool_stride = 2; // pool stride
  i64 units = 0;       // dense width

  i64 effective_pad() const { return pad >= 0 ? pad : d / 2; }
};

// Feature-map shape [channels, time, width] at one point of the stack; flat
// marks the transition into dense layers.
struct FeatureShape {
  i64 channels = 0;
  i64 time = 0;
  i64 width = 0;
  bool flat = false;
  i64 flat_size = 0;

  i64 size() const { return flat ? flat_size : channels * time * width; }
};

// Walks the stack and returns the shape after every layer (result[i] is the
// output of layer i; input shape is [1, window_len, width]). Throws
// invalid_input with a layers[i]-addressed message on any inconsistency.
inline std::vector<FeatureShape> infer_shapes(const std::vector<LayerSpec>& layers,
                                              i64 window_len, i64 width, i64 num_classes) {
  std::vector<FeatureShape> shapes;
  shapes.reserve(layers.size());
  FeatureShape cur{1, window_len, width, false, 0};
  const std::string where = "layers[";
  for (std::size_t idx = 0; idx < layers.size(); ++idx) {
    const LayerSpec& l = layers[idx];
    const std::string at = where + std::to_string(idx) + "]";
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Lego: {
        if (cur.flat) throw invalid_input(at + ": convolution after dense layers");
        if (l.n < 1) throw invalid_input(at + ".n: output channels must be positive");
        if (l.d < 1) throw invalid_input(at + ".d: kernel extent must be positive");
        i64 t_out;
        try {
          t_out = conv_out_extent(cur.time, l.d, l.stride, l.effective_pad());
        } catch (const invalid_input& e) {
          throw invalid_input(at + ": " + e.what());
        }
        if (l.kind == LayerKind::Lego) {
          if (l.o < 1) throw invalid_input(at + ".o: fragment count must be positive");
          if (cur.channels % l.o != 0) {
            throw invalid_input(at + ".o: input channels " + std::to_string(cur.channels) +
                                " not divisible by o=" + std::to_string(l.o));
          }
          if (l.m <= 0.0 || l.m > 1.0) {
            throw invalid_input(at + ".m: bank ratio must be in (0, 1], got " + std::to_string(l.m));
          }
          const i64 k = lego_brick_count(l.n, l.m);
          if (k > l.n) {
            throw invalid_input(at + ".m: k=" + std::to_string(k) + " exceeds n=" + std::to_string(l.n));
          }
        }
        cur = FeatureShape{l.n, t_out, cur.width, false, 0};
        break;
      }
      case LayerKind::Pool: {
        if (cur.flat) throw invalid_input(at + ": pooling after dense layers");
        if (l.extent < 1 || l.pool_stride < 1) {
          throw invalid_input(at + ": pool extent and stride must be >= 1");
        }
        if (l.extent > cur.time) {
          throw invalid_input(at + ".extent: pool extent " + std::to_string(l.extent) +
                              " exceeds time extent " + std::to_string(cur.time));
        }
        cur.time = (cur.time - l.extent) / l.pool_stride + 1;
        break;
      }
      case LayerKind::Dense: {
        if (l.units < 1) throw invalid_input(at + ".units: dense width must be positive");
        cur = FeatureShape{0, 0, 0, true, l.units};
        break;
      }
      case LayerKind::Softmax: {
        if (num_classes < 2) {
          throw invalid_input(at + ": softmax needs at least 2 classes, got " +
                              std::to_string(num_classes));
        }
        cur = FeatureShape{0, 0, 0, true, num_classes};
        break;
      }
    }
    shapes.push_back(cur);
  }
  return shapes;
}

// Structural checks shared by config validation and model building: exactly
// one trailing softmax, lego never first or last among parameterized layers.
inline void validate_architecture(const std::vector<LayerSpec>& layers) {
  if (layers.empty()) throw invalid_input("layers: architecture is empty");
  if (layers.back().kind != LayerKind::Softmax) {
    throw invalid_input("layers: last layer must be the softmax classifier");
  }
  for (std::size_t i = 0; i + 1 < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::Softmax) {
      throw invalid_input("layers[" + std::to_string(i) + "]: softmax before the end of the stack");
    }
  }
  bool seen_conv = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerKind::Lego && !seen_conv) {
      throw invalid_input("layers[" + std::to_string(i) +
                          "]: the first convolutional layer is never compressed; use type "
                          "\"conv\"");
    }
    if (l.kind == LayerKind::Conv || l.kind == LayerKind::Lego) seen_conv = true;
  }
}

}  // namespace lego
