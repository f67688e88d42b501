#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lego/adam.hpp"
#include "lego/config.hpp"
#include "lego/data.hpp"
#include "lego/local_loss.hpp"
#include "lego/metrics.hpp"
#include "lego/model.hpp"

namespace lego {

// Copies a batch of windows into a [bs, 1, window_len, channels] tensor.
template <class T>
Tensor<T> make_batch(const WindowedDataset& data, const std::vector<i64>& order, std::size_t begin,
                     std::size_t end, std::vector<int>* targets) {
  const i64 bs = static_cast<i64>(end - begin);
  const i64 elem = data.window_len * data.channels();
  Tensor<T> x({bs, 1, data.window_len, data.channels()});
  if (targets) targets->resize(static_cast<std::size_t>(bs));
  for (std::size_t i = begin; i < end; ++i) {
    const i64 w = order[i];
    const float* src = data.windows.data() + w * elem;
    T* dst = x.data() + static_cast<i64>(i - begin) * elem;
    for (i64 p = 0; p < elem; ++p) dst[p] = static_cast<T>(src[p]);
    if (targets) (*targets)[i - begin] = data.labels[static_cast<std::size_t>(w)];
  }
  return x;
}

struct EvalResult {
  double f1 = 0.0;
  double acc = 0.0;
  ConfusionMatrix cm;
};

// Runs inference over a dataset and tallies the confusion matrix. Logits of
// each example are independent of batch composition, so any batching yields
// identical results.
template <class T>
EvalResult evaluate_model(Model<T>& model, const WindowedDataset& data, i64 batch_size = 256) {
  std::vector<i64> order(static_cast<std::size_t>(data.num()));
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> preds, truths;
  preds.reserve(order.size());
  truths.reserve(order.size());
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    std::vector<int> targets;
    Tensor<T> x = make_batch<T>(data, order, begin, end, &targets);
    Tensor<T> logits = model.forward(x, false);
    const i64 bs = logits.dim(0), classes = logits.dim(1);
    for (i64 i = 0; i < bs; ++i) {
      const T* row = logits.data() + i * classes;
      i64 best = 0;
      for (i64 c = 1; c < classes; ++c) {
        if (row[c] > row[best]) best = c;
      }
      preds.push_back(static_cast<int>(best));
      truths.push_back(targets[static_cast<std::size_t>(i)]);
    }
  }
  EvalResult result;
  result.cm = confusion(preds, truths, model.num_classes());
  result.f1 = weighted_f1(result.cm);
  result.acc = accuracy(result.cm);
  return result;
}

// Concatenated logits over a dataset, in order; used for bit-exact
// round-trip checks.
template <class T>
Tensor<T> collect_logits(Model<T>& model, const WindowedDataset& data, i64 batch_size = 256) {
  std::vector<i64> order(static_cast<std::size_t>(data.num()));
  std::iota(order.begin(), order.end(), 0);
  Tensor<T> all({data.num(), model.num_classes()});
  for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
    Tensor<T> x = make_batch<T>(data, order, begin, end, nullptr);
    Tensor<T> logits = model.forward(x, false);
    std::copy(logits.data(), logits.data() + logits.numel(),
              all.data() + static_cast<i64>(begin) * model.num_classes());
  }
  return all;
}

// Consecutive blocks trained as one unit: a parameterized block plus any
// following parameter-free blocks (pooling). The layer-wise trainer detaches
// gradients at group boundaries.
struct BlockGroup {
  std::size_t begin = 0;
  std::size_t end = 0;
};

template <class T>
std::vector<BlockGroup> group_blocks(Model<T>& model) {
  std::vector<BlockGroup> groups;
  const auto& blocks = model.blocks();
  std::size_t start = 0;
  bool has_param = false;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const bool param = blocks[i]->has_params();
    if (param && has_param) {
      groups.push_back({start, i});
      start = i;
      has_param = true;
    } else if (param) {
      has_param = true;
    }
  }
  groups.push_back({start, blocks.size()});
  return groups;
}

template <class T>
struct StepLosses {
  T total = T(0);                 // the loss driving the final classifier
  std::vector<T> block_losses;    // local losses per hidden group (local mode)
};

// Orchestrates training: global backpropagation or layer-wise local losses
// with gradients severed between block groups.
template <class T>
class Trainer {
 public:
  Trainer(Model<T>& model, const TrainingSpec& spec, LossMode mode)
      : model_(model), spec_(spec), mode_(mode) {
    groups_ = group_blocks(model_);
    if (mode_ == LossMode::Local) init_heads();
  }

  const std::vector<BlockGroup>& groups() const { return groups_; }
  std::vector<LocalHead<T>>& heads() { return heads_; }

  i64 head_eval_count() const {
    i64 total = 0;
    for (const LocalHead<T>& h : heads_) total += h.eval_count;
    return total;
  }

  // One optimizer step on one mini-batch. Returns the losses observed.
  StepLosses<T> train_batch(const Tensor<T>& x, const std::vector<int>& targets, i64 epoch) {
    AdamConfig<T> adam = adam_at(epoch);
    return mode_ == LossMode::Local ? train_batch_local(x, targets, adam)
                                    : train_batch_global(x, targets, adam);
  }

  // Full epoch over shuffled training data; trailing batches of size 1 are
  // skipped (batch norm needs batch statistics).
  StepLosses<T> train_epoch(const WindowedDataset& train, i64 epoch, std::mt19937& shuffle_rng) {
    std::vector<i64> order(static_cast<std::size_t>(train.num()));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    StepLosses<T> epoch_losses;
    if (mode_ == LossMode::Local) {
      epoch_losses.block_losses.assign(heads_.size(), T(0));
    }
    double total_weight = 0.0;
    const std::size_t bs = static_cast<std::size_t>(spec_.batch_size);
    for (std::size_t begin = 0; begin < order.size(); begin += bs) {
      const std::size_t end = std::min(order.size(), begin + bs);
      if (end - begin < 2) continue;
      std::vector<int> targets;
      Tensor<T> x = make_batch<T>(train, order, begin, end, &targets);
      StepLosses<T> losses = train_batch(x, targets, epoch);
      const double weight = static_cast<double>(end - begin);
      epoch_losses.total += losses.total * static_cast<T>(weight);
      for (std::size_t i = 0; i < losses.block_losses.size(); ++i) {
        epoch_losses.block_losses[i] += losses.block_losses[i] * static_cast<T>(weight);
      }
      total_weight += weight;
    }
    if (total_weight > 0.0) {
      epoch_losses.total /= static_cast<T>(total_weight);
      for (T& v : epoch_losses.block_losses) v /= static_cast<T>(total_weight);
    }
    return epoch_losses;
  }

 private:
  AdamConfig<T> adam_at(i64 epoch) const {
    AdamConfig<T> cfg;
    cfg.lr = static_cast<T>(spec_.lr.at_epoch(epoch));
    cfg.beta1 = static_cast<T>(spec_.beta1);
    cfg.beta2 = static_cast<T>(spec_.beta2);
    cfg.eps = static_cast<T>(spec_.eps);
    return cfg;
  }

  void init_heads() {
    // Probe block output shapes with a tiny forward pass.
    Tensor<T> probe({2, 1, model_.window_len(), model_.width()});
    std::mt19937 head_rng(0x5eedu);
    Tensor<T> cur = probe;
    for (std::size_t g = 0; g + 1 < groups_.size(); ++g) {
      for (std::size_t b = groups_[g].begin; b < groups_[g].end; ++b) {
        cur = model_.blocks()[b]->forward(cur, false);
      }
      heads_.push_back(make_local_head<T>(cur.shape(), model_.num_classes(), head_rng));
      heads_.back().eval_count = 0;
    }
  }

  void step_group(const BlockGroup& group, const AdamConfig<T>& adam, LocalHead<T>* head) {
    std::vector<ParamRef<T>> params;
    for (std::size_t b = group.begin; b < group.end; ++b) {
      model_.blocks()[b]->collect_params(params);
    }
    for (ParamRef<T>& p : params) adam_step(*p.value, *p.adam, adam);
    if (head) {
      adam_step(head->classifier_w, head->w_adam, adam);
      adam_step(head->classifier_b, head->b_adam, adam);
      adam_step(head->sim_w, head->sim_adam, adam);
    }
    for (std::size_t b = group.begin; b < group.end; ++b) {
      model_.blocks()[b]->post_step();
    }
  }

  StepLosses<T> train_batch_global(const Tensor<T>& x, const std::vector<int>& targets,
                                   const AdamConfig<T>& adam) {
    model_.zero_grads();
    Tensor<T> logits = model_.forward(x, true);
    SoftmaxLoss<T> sm = softmax_cross_entropy(logits, targets);
    if (!std::isfinite(static_cast<double>(sm.loss))) {
      throw numeric_error("training loss is not finite");
    }
    model_.backward(sm.grad_logits);
    for (ParamRef<T>& p : model_.params()) adam_step(*p.value, *p.adam, adam);
    model_.post_step();
    StepLosses<T> losses;
    losses.total = sm.loss;
    return losses;
  }

  StepLosses<T> train_batch_local(const Tensor<T>& x, const std::vector<int>& targets,
                                  const AdamConfig<T>& adam) {
    model_.zero_grads();
    for (LocalHead<T>& head : heads_) {
      head.classifier_w.zero_grad();
      head.classifier_b.zero_grad();
      head.sim_w.zero_grad();
    }

    // One forward pass; every group sees pre-update inputs.
    std::vector<Tensor<T>> group_out(groups_.size());
    Tensor<T> cur = x;
    for (std::size_t g = 0; g < groups_.size(); ++g) {
      for (std::size_t b = groups_[g].begin; b < groups_[g].end; ++b) {
        cur = model_.blocks()[b]->forward(cur, true);
      }
      group_out[g] = cur;
    }

    StepLosses<T> losses;
    losses.block_losses.resize(heads_.size());

    // Hidden groups: local loss, backward inside the group only, update.
    for (std::size_t g = 0; g + 1 < groups_.size(); ++g) {
      LocalLossResult<T> local = local_loss(group_out[g], heads_[g], targets,
                                            model_.num_classes(),
                                            static_cast<T>(spec_.alpha), true);
      if (!std::isfinite(static_cast<double>(local.loss))) {
        throw numeric_error("local loss is not finite in block group " + std::to_string(g));
      }
      losses.block_losses[g] = local.loss;
      Tensor<T> grad = local.grad_block;
      for (std::size_t b = groups_[g].end; b-- > groups_[g].begin;) {
        grad = model_.blocks()[b]->backward(grad);
      }
      // grad wrt the group's input is dropped here: detachment boundary
      step_group(groups_[g], adam, &heads_[g]);
    }

    // Final group: plain cross entropy.
    SoftmaxLoss<T> sm = softmax_cross_entropy(group_out.back(), targets);
    if (!std::isfinite(static_cast<double>(sm.loss))) {
      throw numeric_error("training loss is not finite");
    }
    losses.total = sm.loss;
    Tensor<T> grad = sm.grad_logits;
    const BlockGroup& last = groups_.back();
    for (std::size_t b = last.end; b-- > last.begin;) {
      grad = model_.blocks()[b]->backward(grad);
    }
    step_group(last, adam, nullptr);
    return losses;
  }

  Model<T>& model_;
  TrainingSpec spec_;
  LossMode mode_;
  std::vector<BlockGroup> groups_;
  std::vector<LocalHead<T>> heads_;
};

// Per-epoch metrics history, serialized as CSV with fixed columns
// epoch,train_loss,test_f1 plus one column per hidden block in local mode.
struct FitHistory {
  std::vector<double> train_loss;
  std::vector<double> test_f1;
  std::vector<std::vector<double>> block_losses;  // per epoch, per hidden group

  std::string csv() const {
    std::ostringstream out;
    out << "epoch,train_loss,test_f1";
    const std::size_t blocks = block_losses.empty() ? 0 : block_losses.front().size();
    for (std::size_t b = 0; b < blocks; ++b) out << ",block" << b << "_loss";
    out << '\n';
    out << std::setprecision(9);
    for (std::size_t e = 0; e < train_loss.size(); ++e) {
      out << e << ',' << train_loss[e] << ',' << test_f1[e];
      for (std::size_t b = 0; b < blocks; ++b) out << ',' << block_losses[e][b];
      out << '\n';
    }
    return out.str();
  }
};

template <class T>
struct FitResult {
  FitHistory history;
  EvalResult final_eval;
};

// Trains for the configured number of epochs, evaluating on the test split
// after each. Deterministic for a fixed seed.
template <class T>
FitResult<T> fit(Model<T>& model, const TrainingSpec& spec, LossMode mode,
                 const WindowedDataset& train, const WindowedDataset& test, std::uint32_t seed,
                 std::ostream* progress = nullptr) {
  Trainer<T> trainer(model, spec, mode);
  std::mt19937 shuffle_rng(seed ^ 0x243f6a88u);
  FitResult<T> result;
  for (i64 epoch = 0; epoch < spec.epochs; ++epoch) {
    StepLosses<T> losses = trainer.train_epoch(train, epoch, shuffle_rng);
    EvalResult eval = evaluate_model(model, test);
    result.history.train_loss.push_back(static_cast<double>(losses.total));
    result.history.test_f1.push_back(eval.f1);
    if (mode == LossMode::Local) {
      std::vector<double> bl;
      for (T v : losses.block_losses) bl.push_back(static_cast<double>(v));
      result.history.block_losses.push_back(std::move(bl));
    }
    result.final_eval = eval;
    if (progress) {
      *progress << "epoch " << epoch << ": train_loss=" << std::setprecision(6)
                << static_cast<double>(losses.total) << " test_f1=" << eval.f1 << '\n';
    }
  }
  return result;
}

}  // namespace lego
