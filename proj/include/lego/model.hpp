#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lego/adam.hpp"
#include "lego/arch.hpp"
#include "lego/lego.hpp"
#include "lego/ops.hpp"
#include "lego/tensor.hpp"

namespace lego {

// A named trainable tensor together with its optimizer state. Gradients live
// in the tensor's own grad buffer.
template <class T>
struct ParamRef {
  std::string name;
  Tensor<T>* value = nullptr;
  AdamState<T>* adam = nullptr;
};

// A named non-trainable buffer that still belongs in checkpoints (batch norm
// running statistics, lego masks).
template <class T>
struct BufferRef {
  std::string name;
  std::vector<T>* data = nullptr;
};

// One block of the network. Conv/lego/dense blocks fuse their batch norm and
// ReLU; forward caches whatever backward needs. Blocks are the unit the
// layer-wise trainer detaches between.
template <class T>
class Block {
 public:
  explicit Block(std::string name) : name_(std::move(name)) {}
  virtual ~Block() = default;

  virtual LayerKind kind() const = 0;
  virtual Tensor<T> forward(const Tensor<T>& x, bool train) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect_params(std::vector<ParamRef<T>>&) {}
  virtual void collect_buffers(std::vector<BufferRef<T>>&) {}
  // Called once after the optimizer stepped this block's parameters.
  virtual void post_step() {}

  const std::string& name() const { return name_; }
  bool has_params() const {
    std::vector<ParamRef<T>> p;
    const_cast<Block*>(this)->collect_params(p);
    return !p.empty();
  }

 protected:
  std::string name_;
};

namespace detail {

// Shared conv + batch norm + ReLU plumbing for the two convolutional blocks.
template <class T>
struct BnRelu {
  Tensor<T> gamma, beta;
  BatchNormState<T> bn_state;
  AdamState<T> gamma_adam, beta_adam;
  BatchNormCache<T> bn_cache;
  Tensor<T> pre_relu;

  void init(i64 channels) {
    gamma = Tensor<T>::full({channels}, T(1));
    beta = Tensor<T>({channels});
    bn_state = BatchNormState<T>(channels);
    gamma.alloc_grad();
    beta.alloc_grad();
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> normed = batchnorm_forward(x, gamma, beta, bn_state, train, train ? &bn_cache : nullptr);
    if (train) pre_relu = normed;
    return relu(normed);
  }

  // Returns the gradient wrt the conv output; accumulates gamma/beta grads.
  Tensor<T> backward(const Tensor<T>& grad_out) {
    Tensor<T> grad_pre = relu_backward(grad_out, pre_relu);
    Tensor<T> grad_x, ggamma, gbeta;
    batchnorm_backward(grad_pre, gamma, bn_cache, &grad_x, &ggamma, &gbeta);
    for (i64 i = 0; i < ggamma.numel(); ++i) gamma.grad[static_cast<std::size_t>(i)] += ggamma[i];
    for (i64 i = 0; i < gbeta.numel(); ++i) beta.grad[static_cast<std::size_t>(i)] += gbeta[i];
    return grad_x;
  }

  void collect(const std::string& prefix, std::vector<ParamRef<T>>& params,
               std::vector<BufferRef<T>>& buffers) {
    params.push_back({prefix + ".gamma", &gamma, &gamma_adam});
    params.push_back({prefix + ".beta", &beta, &beta_adam});
    buffers.push_back({prefix + ".running_mean", &bn_state.running_mean});
    buffers.push_back({prefix + ".running_var", &bn_state.running_var});
  }
};

}  // namespace detail

template <class T>
class ConvBlock : public Block<T> {
 public:
  ConvBlock(std::string name, const LayerSpec& spec, i64 in_channels, std::mt19937& rng)
      : Block<T>(std::move(name)) {
    conv_spec_ = ConvSpec{in_channels, spec.n, spec.d, 1, spec.stride, spec.effective_pad(), 0};
    weights_ = Tensor<T>({spec.n, in_channels, spec.d, 1});
    bias_ = Tensor<T>({spec.n});
    fill_fan_in_uniform(weights_, rng, in_channels * spec.d);
    weights_.alloc_grad();
    bias_.alloc_grad();
    bn_.init(spec.n);
  }

  LayerKind kind() const override { return LayerKind::Conv; }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (train) input_ = x;
    Tensor<T> y = conv_forward(x, weights_, conv_spec_);
    const i64 b = y.dim(0), n = y.dim(1), map = y.dim(2) * y.dim(3);
    for (i64 ib = 0; ib < b; ++ib) {
      for (i64 j = 0; j < n; ++j) {
        T* row = y.data() + (ib * n + j) * map;
        const T bv = bias_[j];
        for (i64 p = 0; p < map; ++p) row[p] += bv;
      }
    }
    return bn_.forward(y, train);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> grad_conv = bn_.backward(grad_out);
    const i64 b = grad_conv.dim(0), n = grad_conv.dim(1), map = grad_conv.dim(2) * grad_conv.dim(3);
    for (i64 ib = 0; ib < b; ++ib) {
      for (i64 j = 0; j < n; ++j) {
        const T* row = grad_conv.data() + (ib * n + j) * map;
        T acc = T(0);
        for (i64 p = 0; p < map; ++p) acc += row[p];
        bias_.grad[static_cast<std::size_t>(j)] += acc;
      }
    }
    Tensor<T> grad_x, grad_w;
    conv_backward(grad_conv, input_, weights_, conv_spec_, &grad_x, &grad_w);
    for (i64 i = 0; i < grad_w.numel(); ++i) weights_.grad[static_cast<std::size_t>(i)] += grad_w[i];
    return grad_x;
  }

  void collect_params(std::vector<ParamRef<T>>& out) override {
    out.push_back({this->name_ + ".weights", &weights_, &weights_adam_});
    out.push_back({this->name_ + ".bias", &bias_, &bias_adam_});
    std::vector<BufferRef<T>> buffers;
    bn_.collect(this->name_ + ".bn", out, buffers);
  }

  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    std::vector<ParamRef<T>> params;
    bn_.collect(this->name_ + ".bn", params, out);
  }

 private:
  ConvSpec conv_spec_;
  Tensor<T> weights_, bias_;
  AdamState<T> weights_adam_, bias_adam_;
  detail::BnRelu<T> bn_;
  Tensor<T> input_;
};

template <class T>
class LegoBlock : public Block<T> {
 public:
  LegoBlock(std::string name, const LayerSpec& spec, i64 in_channels, std::uint32_t seed)
      : Block<T>(std::move(name)) {
    layer_ = init_lego_layer<T>(spec.n, in_channels, spec.d, spec.o, spec.m, seed, spec.stride,
                                spec.effective_pad());
    layer_.bank.alloc_grad();
    layer_.proxy.alloc_grad();
    bn_.init(spec.n);
  }

  LayerKind kind() const override { return LayerKind::Lego; }
  LegoLayer<T>& layer() { return layer_; }
  const LegoLayer<T>& layer() const { return layer_; }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> y;
    if (train) {
      input_ = x;
      y = lego_conv_stm(x, layer_, &cache_);
    } else {
      y = lego_conv_stm(x, layer_);
    }
    return bn_.forward(y, train);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> grad_conv = bn_.backward(grad_out);
    Tensor<T> grad_x, grad_bank, grad_proxy;
    lego_backward(grad_conv, input_, layer_, cache_, &grad_x, &grad_bank, &grad_proxy);
    for (i64 i = 0; i < grad_bank.numel(); ++i) {
      layer_.bank.grad[static_cast<std::size_t>(i)] += grad_bank[i];
    }
    for (i64 i = 0; i < grad_proxy.numel(); ++i) {
      layer_.proxy.grad[static_cast<std::size_t>(i)] += grad_proxy[i];
    }
    return grad_x;
  }

  void collect_params(std::vector<ParamRef<T>>& out) override {
    out.push_back({this->name_ + ".bank", &layer_.bank, &bank_adam_});
    out.push_back({this->name_ + ".proxy", &layer_.proxy, &proxy_adam_});
    std::vector<BufferRef<T>> buffers;
    bn_.collect(this->name_ + ".bn", out, buffers);
  }

  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    out.push_back({this->name_ + ".mask", &layer_.mask.buffer()});
    std::vector<ParamRef<T>> params;
    bn_.collect(this->name_ + ".bn", params, out);
  }

  void post_step() override { post_step_rebinarize(layer_, &cache_); }

 private:
  LegoLayer<T> layer_;
  AdamState<T> bank_adam_, proxy_adam_;
  detail::BnRelu<T> bn_;
  LegoCache<T> cache_;
  Tensor<T> input_;
};

template <class T>
class PoolBlock : public Block<T> {
 public:
  PoolBlock(std::string name, const LayerSpec& spec)
      : Block<T>(std::move(name)), extent_(spec.extent), stride_(spec.pool_stride) {}

  LayerKind kind() const override { return LayerKind::Pool; }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    if (train) input_shape_ = x.shape();
    return maxpool_forward(x, extent_, stride_, train ? &cache_ : nullptr);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    return maxpool_backward(grad_out, input_shape_, cache_);
  }

 private:
  i64 extent_, stride_;
  MaxPoolCache cache_;
  Shape input_shape_;
};

// Hidden dense block: flatten, affine, batch norm, ReLU. Batch norm runs on
// a [b, units, 1, 1] view.
template <class T>
class DenseBlock : public Block<T> {
 public:
  DenseBlock(std::string name, const LayerSpec& spec, i64 in_features, std::mt19937& rng)
      : Block<T>(std::move(name)) {
    weights_ = Tensor<T>({in_features, spec.units});
    bias_ = Tensor<T>({spec.units});
    fill_fan_in_uniform(weights_, rng, in_features);
    weights_.alloc_grad();
    bias_.alloc_grad();
    bn_.init(spec.units);
  }

  LayerKind kind() const override { return LayerKind::Dense; }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> flat = x.reshaped({x.dim(0), x.numel() / x.dim(0)});
    if (train) {
      input_shape_ = x.shape();
      input_ = flat;
    }
    Tensor<T> y = dense_forward(flat, weights_, bias_);
    y.reshape({y.dim(0), y.dim(1), 1, 1});
    Tensor<T> out = bn_.forward(y, train);
    out.reshape({out.dim(0), out.dim(1)});
    return out;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = grad_out.reshaped({grad_out.dim(0), grad_out.dim(1), 1, 1});
    Tensor<T> grad_affine = bn_.backward(g);
    grad_affine.reshape({grad_affine.dim(0), grad_affine.dim(1)});
    Tensor<T> grad_x, grad_w, grad_b;
    dense_backward(grad_affine, input_, weights_, &grad_x, &grad_w, &grad_b);
    for (i64 i = 0; i < grad_w.numel(); ++i) weights_.grad[static_cast<std::size_t>(i)] += grad_w[i];
    for (i64 i = 0; i < grad_b.numel(); ++i) bias_.grad[static_cast<std::size_t>(i)] += grad_b[i];
    grad_x.reshape(input_shape_);
    return grad_x;
  }

  void collect_params(std::vector<ParamRef<T>>& out) override {
    out.push_back({this->name_ + ".weights", &weights_, &weights_adam_});
    out.push_back({this->name_ + ".bias", &bias_, &bias_adam_});
    std::vector<BufferRef<T>> buffers;
    bn_.collect(this->name_ + ".bn", out, buffers);
  }

  void collect_buffers(std::vector<BufferRef<T>>& out) override {
    std::vector<ParamRef<T>> params;
    bn_.collect(this->name_ + ".bn", params, out);
  }

 private:
  Tensor<T> weights_, bias_;
  AdamState<T> weights_adam_, bias_adam_;
  detail::BnRelu<T> bn_;
  Tensor<T> input_;
  Shape input_shape_;
};

// Final affine classifier producing logits; the loss attaches externally.
template <class T>
class SoftmaxBlock : public Block<T> {
 public:
  SoftmaxBlock(std::string name, i64 in_features, i64 num_classes, std::mt19937& rng)
      : Block<T>(std::move(name)) {
    weights_ = Tensor<T>({in_features, num_classes});
    bias_ = Tensor<T>({num_classes});
    fill_fan_in_uniform(weights_, rng, in_features);
    weights_.alloc_grad();
    bias_.alloc_grad();
  }

  LayerKind kind() const override { return LayerKind::Softmax; }

  Tensor<T> forward(const Tensor<T>& x, bool train) override {
    Tensor<T> flat = x.reshaped({x.dim(0), x.numel() / x.dim(0)});
    if (train) {
      input_shape_ = x.shape();
      input_ = flat;
    }
    return dense_forward(flat, weights_, bias_);
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> grad_x, grad_w, grad_b;
    dense_backward(grad_out, input_, weights_, &grad_x, &grad_w, &grad_b);
    for (i64 i = 0; i < grad_w.numel(); ++i) weights_.grad[static_cast<std::size_t>(i)] += grad_w[i];
    for (i64 i = 0; i < grad_b.numel(); ++i) bias_.grad[static_cast<std::size_t>(i)] += grad_b[i];
    grad_x.reshape(input_shape_);
    return grad_x;
  }

  void collect_params(std::vector<ParamRef<T>>& out) override {
    out.push_back({this->name_ + ".weights", &weights_, &weights_adam_});
    out.push_back({this->name_ + ".bias", &bias_, &bias_adam_});
  }

 private:
  Tensor<T> weights_, bias_;
  AdamState<T> weights_adam_, bias_adam_;
  Tensor<T> input_;
  Shape input_shape_;
};

// The full network: an ordered stack of blocks built from layer specs.
template <class T>
class Model {
 public:
  Model() = default;

  Model(const std::vector<LayerSpec>& layers, i64 window_len, i64 width, i64 num_classes,
        std::uint32_t seed)
      : layers_(layers), window_len_(window_len), width_(width), num_classes_(num_classes) {
    validate_architecture(layers);
    const std::vector<FeatureShape> shapes = infer_shapes(layers, window_len, width, num_classes);
    std::mt19937 rng(seed);
    FeatureShape in{1, window_len, width, false, 0};
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const LayerSpec& spec = layers[i];
      const std::string name = "layer" + std::to_string(i);
      switch (spec.kind) {
        case LayerKind::Conv:
          blocks_.push_back(std::make_unique<ConvBlock<T>>(name, spec, in.channels, rng));
          break;
        case LayerKind::Lego:
          blocks_.push_back(std::make_unique<LegoBlock<T>>(name, spec, in.channels, rng()));
          break;
        case LayerKind::Pool:
          blocks_.push_back(std::make_unique<PoolBlock<T>>(name, spec));
          break;
        case LayerKind::Dense:
          blocks_.push_back(std::make_unique<DenseBlock<T>>(name, spec, in.size(), rng));
          break;
        case LayerKind::Softmax:
          blocks_.push_back(std::make_unique<SoftmaxBlock<T>>(name, in.size(), num_classes, rng));
          break;
      }
      in = shapes[i];
    }
  }

  Tensor<T> forward(const Tensor<T>& x, bool train) {
    Tensor<T> cur = x;
    for (auto& block : blocks_) cur = block->forward(cur, train);
    return cur;
  }

  // Backpropagates through the whole stack (global training).
  void backward(const Tensor<T>& grad_logits) {
    Tensor<T> grad = grad_logits;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
      grad = (*it)->backward(grad);
    }
  }

  std::vector<ParamRef<T>> params() {
    std::vector<ParamRef<T>> out;
    for (auto& block : blocks_) block->collect_params(out);
    return out;
  }

  std::vector<BufferRef<T>> buffers() {
    std::vector<BufferRef<T>> out;
    for (auto& block : blocks_) block->collect_buffers(out);
    return out;
  }

  void zero_grads() {
    for (ParamRef<T>& p : params()) p.value->zero_grad();
  }

  void post_step() {
    for (auto& block : blocks_) block->post_step();
  }

  std::vector<std::unique_ptr<Block<T>>>& blocks() { return blocks_; }
  const std::vector<LayerSpec>& layer_specs() const { return layers_; }
  i64 window_len() const { return window_len_; }
  i64 width() const { return width_; }
  i64 num_classes() const { return num_classes_; }

 private:
  std::vector<LayerSpec> layers_;
  std::vector<std::unique_ptr<Block<T>>> blocks_;
  i64 window_len_ = 0, width_ = 0, num_classes_ = 0;
};

}  // namespace lego
