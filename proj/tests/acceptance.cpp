// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// gated criterion fails. The long-running paper-scale spot check (criterion
// 8) only trains when invoked with --paper-scale; its cost-ordering half
// always runs.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lego/checkpoint.hpp"
#include "lego/config.hpp"
#include "lego/data.hpp"
#include "lego/lego.hpp"
#include "lego/local_loss.hpp"
#include "lego/metrics.hpp"
#include "lego/model.hpp"
#include "lego/trainer.hpp"
#include "support/test_util.hpp"

using lego::i64;
using lego::Tensor;

namespace {

const std::string kConfigs = CONFIG_DIR;
const std::string kCli = CLI_PATH;

struct Outcome {
  int id;
  std::string name;
  enum class Status { Pass, Fail, Skip } status;
  std::string detail;
};

std::vector<Outcome> outcomes;

void record(int id, const std::string& name, bool pass, const std::string& detail) {
  outcomes.push_back({id, name, pass ? Outcome::Status::Pass : Outcome::Status::Fail, detail});
}

void record_skip(int id, const std::string& name, const std::string& detail) {
  outcomes.push_back({id, name, Outcome::Status::Skip, detail});
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------- 1
template <class T>
double max_path_divergence(std::mt19937& rng, int configs) {
  double worst = 0.0;
  const i64 o_choices[] = {1, 2, 4};
  const double m_choices[] = {0.25, 0.5, 1.0};
  const i64 d_choices[] = {3, 5};
  for (int rep = 0; rep < configs; ++rep) {
    const i64 o = o_choices[rng() % 3];
    const double m = m_choices[rng() % 3];
    const i64 d = d_choices[rng() % 2];
    const i64 n = 4 + static_cast<i64>(rng() % 61);  // [4, 64]
    const i64 c = o * (1 + static_cast<i64>(rng() % 6));
    const i64 b = 1 + static_cast<i64>(rng() % 2);
    const i64 t_in = d + static_cast<i64>(rng() % 14);
    const i64 w_in = 1 + static_cast<i64>(rng() % 3);

    lego::LegoLayer<T> layer =
        lego::init_lego_layer<T>(n, c, d, o, m, static_cast<std::uint32_t>(rng()));
    Tensor<T> x = test_util::random_tensor<T>({b, c, t_in, w_in}, rng);
    Tensor<T> stm = lego::lego_conv_stm(x, layer);
    Tensor<T> naive = lego::lego_conv_naive(x, layer);
    Tensor<T> assembled =
        lego::conv_forward(x, lego::assemble_filters(layer), layer.assembled_spec());
    for (i64 i = 0; i < stm.numel(); ++i) {
      worst = std::max(worst, std::abs(static_cast<double>(stm[i]) - static_cast<double>(naive[i])));
      worst = std::max(worst,
                       std::abs(static_cast<double>(stm[i]) - static_cast<double>(assembled[i])));
    }
  }
  return worst;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(1001);
  const double worst32 = max_path_divergence<float>(rng, 200);
  const double worst64 = max_path_divergence<double>(rng, 200);
  const double secs = elapsed_s(t0);
  std::ostringstream detail;
  detail << "max|stm-naive| and |stm-assembled|: " << worst32 << " (32-bit, tol 1e-4), " << worst64
         << " (64-bit, tol 1e-10), " << secs << "s";
  record(1, "path equivalence over 200 random layer configurations",
         worst32 < 1e-4 && worst64 < 1e-10 && secs < 60.0, detail.str());
}

// ---------------------------------------------------------------------- 2
void criterion2() {
  const struct {
    i64 o;
    double m;
    double ratio;
    double speedup;
  } settings[] = {{2, 0.5, 4.0, 2.0}, {4, 0.5, 8.0, 2.0}, {2, 0.25, 8.0, 4.0}, {4, 0.25, 16.0, 4.0}};

  lego::ModelConfig base = lego::load_config(kConfigs + "/uci_har_lego.json");
  bool ok = true;
  std::ostringstream detail;
  std::vector<double> model_ratios, model_speedups;
  for (const auto& s : settings) {
    lego::ModelConfig swept = lego::with_compression(base, s.o, s.m);
    lego::CostReport report = lego::analyze_cost(swept.layers, 128, 9, 6);
    for (const lego::CostRow& row : report.rows) {
      if (!row.compressed) continue;
      // exact identities, checked in integer arithmetic
      const i64 k = lego::lego_brick_count(
          swept.layers[static_cast<std::size_t>(&row - report.rows.data())].n, s.m);
      const i64 n = swept.layers[static_cast<std::size_t>(&row - report.rows.data())].n;
      if (row.baseline_weights * k != row.weights * n * s.o) ok = false;
      if (row.baseline_muls * k != row.muls * n) ok = false;
      if (row.ratio != s.ratio || row.speedup != s.speedup) ok = false;
    }
    model_ratios.push_back(report.model_ratio);
    model_speedups.push_back(report.model_speedup);
  }
  // whole-model ordering: r1 < r2 = r3 < r4; s1 ~ s2 < s3 ~ s4
  const bool ratio_order = model_ratios[0] < model_ratios[1] &&
                           std::abs(model_ratios[1] - model_ratios[2]) < 0.05 * model_ratios[1] &&
                           model_ratios[2] < model_ratios[3];
  const bool speed_order =
      std::abs(model_speedups[0] - model_speedups[1]) < 0.05 * model_speedups[0] &&
      model_speedups[1] < model_speedups[2] &&
      std::abs(model_speedups[2] - model_speedups[3]) < 0.05 * model_speedups[2];
  detail << "per-layer ratios {4,8,8,16} and speedups {2,2,4,4} exact; model ratios ";
  for (double r : model_ratios) detail << r << " ";
  detail << "speedups ";
  for (double s : model_speedups) detail << s << " ";
  record(2, "compression and speedup identities", ok && ratio_order && speed_order, detail.str());
}

// ---------------------------------------------------------------------- 3
void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937 rng(3003);
  double worst = 0.0;
  bool ste_exact = true;

  for (int rep = 0; rep < 20; ++rep) {
    // conv
    {
      const i64 b = 1 + rng() % 2, c = 1 + rng() % 3, n = 1 + rng() % 3;
      const i64 d = 1 + rng() % 4, t_in = d + rng() % 6, w_in = 1 + rng() % 3;
      lego::ConvSpec spec{c, n, d, 1, 1 + static_cast<i64>(rng() % 2),
                          static_cast<i64>(rng() % 2), 0};
      Tensor<double> x = test_util::random_tensor<double>({b, c, t_in, w_in}, rng);
      Tensor<double> w = test_util::random_tensor<double>({n, c, d, 1}, rng);
      Tensor<double> head =
          test_util::random_tensor<double>(lego::conv_forward(x, w, spec).shape(), rng);
      auto loss = [&]() { return test_util::weighted_sum(lego::conv_forward(x, w, spec), head); };
      Tensor<double> gx, gw;
      lego::conv_backward(head, x, w, spec, &gx, &gw);
      worst = std::max(worst, test_util::fd_check(loss, x.data(), x.numel(), gx.buffer()));
      worst = std::max(worst, test_util::fd_check(loss, w.data(), w.numel(), gw.buffer()));
    }
    // dense
    {
      const i64 b = 1 + rng() % 3, f = 1 + rng() % 6, u = 1 + rng() % 4;
      Tensor<double> x = test_util::random_tensor<double>({b, f}, rng);
      Tensor<double> w = test_util::random_tensor<double>({f, u}, rng);
      Tensor<double> bias = test_util::random_tensor<double>({u}, rng);
      Tensor<double> head = test_util::random_tensor<double>({b, u}, rng);
      auto loss = [&]() { return test_util::weighted_sum(lego::dense_forward(x, w, bias), head); };
      Tensor<double> gx, gw, gb;
      lego::dense_backward(head, x, w, &gx, &gw, &gb);
      worst = std::max(worst, test_util::fd_check(loss, x.data(), x.numel(), gx.buffer()));
      worst = std::max(worst, test_util::fd_check(loss, w.data(), w.numel(), gw.buffer()));
      worst = std::max(worst, test_util::fd_check(loss, bias.data(), bias.numel(), gb.buffer()));
    }
    // batch norm
    {
      const i64 b = 2 + rng() % 3, c = 1 + rng() % 3, t = 1 + rng() % 3, w = 1 + rng() % 2;
      Tensor<double> x = test_util::random_tensor<double>({b, c, t, w}, rng);
      Tensor<double> gamma = test_util::random_tensor<double>({c}, rng, 0.5, 1.5);
      Tensor<double> beta = test_util::random_tensor<double>({c}, rng);
      Tensor<double> head = test_util::random_tensor<double>({b, c, t, w}, rng);
      auto loss = [&]() {
        lego::BatchNormState<double> state(c);
        return test_util::weighted_sum(lego::batchnorm_forward(x, gamma, beta, state, true), head);
      };
      lego::BatchNormState<double> state(c);
      lego::BatchNormCache<double> cache;
      lego::batchnorm_forward(x, gamma, beta, state, true, &cache);
      Tensor<double> gx, ggamma, gbeta;
      lego::batchnorm_backward(head, gamma, cache, &gx, &ggamma, &gbeta);
      worst = std::max(worst, test_util::fd_check(loss, x.data(), x.numel(), gx.buffer()));
      worst = std::max(worst,
                       test_util::fd_check(loss, gamma.data(), gamma.numel(), ggamma.buffer()));
      worst = std::max(worst, test_util::fd_check(loss, beta.data(), beta.numel(), gbeta.buffer()));
    }
    // softmax cross entropy
    {
      const i64 b = 1 + rng() % 4, classes = 2 + rng() % 5;
      Tensor<double> logits = test_util::random_tensor<double>({b, classes}, rng, -2.0, 2.0);
      std::vector<int> targets;
      for (i64 i = 0; i < b; ++i) targets.push_back(static_cast<int>(rng() % classes));
      auto loss = [&]() { return lego::softmax_cross_entropy(logits, targets).loss; };
      lego::SoftmaxLoss<double> sm = lego::softmax_cross_entropy(logits, targets);
      worst = std::max(
          worst, test_util::fd_check(loss, logits.data(), logits.numel(), sm.grad_logits.buffer()));
    }
    // maxpool
    {
      const i64 b = 1 + rng() % 2, c = 1 + rng() % 3, extent = 2 + rng() % 2;
      const i64 stride = 1 + rng() % 2, t_in = extent + rng() % 8, w_in = 1 + rng() % 3;
      Tensor<double> x = test_util::random_tensor<double>({b, c, t_in, w_in}, rng);
      lego::MaxPoolCache cache;
      Tensor<double> y = lego::maxpool_forward(x, extent, stride, &cache);
      Tensor<double> head = test_util::random_tensor<double>(y.shape(), rng);
      auto loss = [&]() {
        return test_util::weighted_sum(lego::maxpool_forward(x, extent, stride, nullptr), head);
      };
      Tensor<double> gx = lego::maxpool_backward(head, x.shape(), cache);
      worst = std::max(worst, test_util::fd_check(loss, x.data(), x.numel(), gx.buffer()));
    }
    // lego bank + STE identity
    {
      const i64 o = 1 + rng() % 3, c = o * (1 + rng() % 3), n = 2 + rng() % 6, d = 1 + rng() % 3;
      lego::LegoLayer<double> layer =
          lego::init_lego_layer<double>(n, c, d, o, 0.75, static_cast<std::uint32_t>(rng()));
      Tensor<double> x = test_util::random_tensor<double>(
          {1 + static_cast<i64>(rng() % 2), c, d + static_cast<i64>(rng() % 5), 1}, rng);
      lego::LegoCache<double> cache;
      Tensor<double> y = lego::lego_conv_stm(x, layer, &cache);
      Tensor<double> head = test_util::random_tensor<double>(y.shape(), rng);
      auto loss = [&]() { return test_util::weighted_sum(lego::lego_conv_naive(x, layer), head); };
      Tensor<double> gx, gbank, gproxy;
      lego::lego_backward(head, x, layer, cache, &gx, &gbank, &gproxy);
      worst = std::max(worst,
                       test_util::fd_check(loss, layer.bank.data(), layer.bank.numel(),
                                           gbank.buffer()));

      // dense-mask gradient, identical reduction order
      const i64 map = y.dim(2) * y.dim(3);
      for (i64 j = 0; j < n && ste_exact; ++j) {
        for (i64 i = 0; i < o && ste_exact; ++i) {
          for (i64 t = 0; t < layer.k && ste_exact; ++t) {
            double acc = 0.0;
            for (i64 ib = 0; ib < y.dim(0); ++ib) {
              const double* go = head.data() + (ib * n + j) * map;
              const double* inter =
                  cache.intermediates[static_cast<std::size_t>(i)].data() +
                  (ib * layer.k + t) * map;
              for (i64 p = 0; p < map; ++p) acc += go[p] * inter[p];
            }
            if (gproxy[(j * o + i) * layer.k + t] != acc) ste_exact = false;
          }
        }
      }
    }
  }
  const double secs = elapsed_s(t0);
  std::ostringstream detail;
  detail << "worst finite-difference relative error " << worst << " (tol 1e-5); STE identity "
         << (ste_exact ? "exact" : "VIOLATED") << "; " << secs << "s";
  record(3, "gradient correctness for all trainable operations",
         worst < 1e-5 && ste_exact && secs < 120.0, detail.str());
}

// ---------------------------------------------------------------------- 4
void criterion4() {
  nlohmann::json j{
      {"dataset", nlohmann::json{{"format", "synthetic"},
                                 {"window_len", 32},
                                 {"step", 16},
                                 {"synthetic", nlohmann::json{{"classes", 3},
                                                              {"channels", 2},
                                                              {"total_time", 8000},
                                                              {"seed", 5}}}}},
      {"layers",
       nlohmann::json::array({nlohmann::json{{"type", "conv"}, {"n", 4}, {"d", 3}},
                              nlohmann::json{{"type", "lego"}, {"n", 8}, {"d", 3}, {"o", 2}, {"m", 0.5}},
                              nlohmann::json{{"type", "softmax"}}})},
      {"training", nlohmann::json{{"batch_size", 8}, {"epochs", 1},
                                  {"lr", nlohmann::json{{"initial", 3e-3}}}}},
      {"seed", 21}};
  lego::ModelConfig config = lego::parse_config(j, "");
  lego::DataBundle data = lego::prepare_dataset(lego::config_manifest(config));
  lego::Model<float> model(config.layers, 32, 2, 3, config.seed);
  lego::Trainer<float> trainer(model, config.training, config.loss_mode);

  lego::LegoBlock<float>* lego_block = nullptr;
  for (auto& block : model.blocks()) {
    if (auto* lb = dynamic_cast<lego::LegoBlock<float>*>(block.get())) lego_block = lb;
  }

  std::mt19937 order_rng(9);
  std::vector<i64> order(static_cast<std::size_t>(data.train.num()));
  std::iota(order.begin(), order.end(), 0);

  bool ok = lego_block != nullptr;
  i64 flips = 0;
  std::vector<i64> last_selection = lego_block ? lego_block->layer().selection : std::vector<i64>{};
  for (int step = 0; step < 1000 && ok; ++step) {
    if (step % 100 == 0) std::shuffle(order.begin(), order.end(), order_rng);
    const std::size_t begin = (static_cast<std::size_t>(step) * 8) %
                              (order.size() - 8);
    std::vector<int> targets;
    Tensor<float> x = lego::make_batch<float>(data.train, order, begin, begin + 8, &targets);
    trainer.train_batch(x, targets, 0);

    const lego::LegoLayer<float>& layer = lego_block->layer();
    const Tensor<float> expected = lego::binarize(layer.proxy);
    if (layer.mask.buffer() != expected.buffer()) ok = false;
    for (i64 r = 0; r < layer.n * layer.o && ok; ++r) {
      float sum = 0.0f;
      for (i64 t = 0; t < layer.k; ++t) {
        const float v = layer.mask[r * layer.k + t];
        if (v != 0.0f && v != 1.0f) ok = false;
        sum += v;
      }
      if (sum != 1.0f) ok = false;
    }
    if (layer.selection != last_selection) {
      ++flips;
      last_selection = layer.selection;
    }
  }
  std::ostringstream detail;
  detail << "1000 optimizer steps, mask == binarize(proxy) after every step; " << flips
         << " selection changes observed";
  record(4, "mask one-hot invariant under training", ok, detail.str());
}

// ---------------------------------------------------------------------- 5
void criterion5() {
  // exact zeros from any later block's loss to any earlier block's params
  std::vector<lego::LayerSpec> layers;
  layers.push_back({.kind = lego::LayerKind::Conv, .n = 4, .d = 3});
  layers.push_back({.kind = lego::LayerKind::Pool, .extent = 2, .pool_stride = 2});
  layers.push_back({.kind = lego::LayerKind::Conv, .n = 6, .d = 3});
  layers.push_back({.kind = lego::LayerKind::Dense, .units = 10});
  layers.push_back({.kind = lego::LayerKind::Softmax});

  lego::Model<float> model(layers, 16, 2, 3, 42);
  lego::Trainer<float> trainer(model, lego::TrainingSpec{}, lego::LossMode::Local);
  std::mt19937 rng(5005);
  Tensor<float> x = test_util::random_tensor<float>({4, 1, 16, 2}, rng);
  std::vector<int> targets{0, 1, 2, 1};

  bool zeros_ok = true;
  const auto& groups = trainer.groups();
  for (std::size_t g = 1; g < groups.size(); ++g) {
    model.zero_grads();
    Tensor<float> cur = x;
    std::vector<Tensor<float>> outs;
    for (const lego::BlockGroup& group : groups) {
      for (std::size_t b = group.begin; b < group.end; ++b) {
        cur = model.blocks()[b]->forward(cur, true);
      }
      outs.push_back(cur);
    }
    Tensor<float> grad;
    if (g + 1 < groups.size()) {
      lego::LocalLossResult<float> local =
          lego::local_loss(outs[g], trainer.heads()[g], targets, 3, 0.99f, false);
      grad = local.grad_block;
    } else {
      grad = lego::softmax_cross_entropy(outs[g], targets).grad_logits;
    }
    for (std::size_t b = groups[g].end; b-- > groups[g].begin;) {
      grad = model.blocks()[b]->backward(grad);
    }
    for (std::size_t earlier = 0; earlier < g; ++earlier) {
      std::vector<lego::ParamRef<float>> params;
      for (std::size_t b = groups[earlier].begin; b < groups[earlier].end; ++b) {
        model.blocks()[b]->collect_params(params);
      }
      for (auto& p : params) {
        for (float v : p.value->grad) {
          if (v != 0.0f) zeros_ok = false;
        }
      }
    }
  }

  // alpha combination identity to 1e-12 in double
  std::mt19937 rng2(5006);
  Tensor<double> blockout = test_util::random_tensor<double>({4, 3, 6, 2}, rng2);
  std::mt19937 head_rng(5007);
  lego::LocalHead<double> head = lego::make_local_head<double>(blockout.shape(), 3, head_rng);
  lego::LocalLossResult<double> ll = lego::local_loss(blockout, head, targets, 3, 0.99, false);
  const double recombined = 0.01 * ll.prediction + 0.99 * ll.similarity;
  const bool alpha_ok = std::abs(ll.loss - recombined) < 1e-12;

  std::ostringstream detail;
  detail << "cross-block gradients exactly zero: " << (zeros_ok ? "yes" : "NO")
         << "; |local - (0.01 pred + 0.99 sim)| = " << std::abs(ll.loss - recombined);
  record(5, "local-loss detachment and weighting", zeros_ok && alpha_ok, detail.str());
}

// ---------------------------------------------------------------------- 6
void criterion6() {
  std::mt19937 rng(6006);
  double worst = 0.0;
  bool ok = true;
  for (int rep = 0; rep < 1000; ++rep) {
    const i64 C = 2 + rng() % 6;
    lego::ConfusionMatrix cm(C);
    for (i64 i = 0; i < C * C; ++i) cm.counts[static_cast<std::size_t>(i)] = rng() % 25;
    if (cm.total() == 0) cm.at(0, 0) = 1;
    const double f1 = lego::weighted_f1(cm);

    // independent per-class recomputation
    double total = 0.0, expected = 0.0;
    for (i64 i = 0; i < C * C; ++i) total += static_cast<double>(cm.counts[static_cast<std::size_t>(i)]);
    for (i64 c = 0; c < C; ++c) {
      double tp = static_cast<double>(cm.at(c, c)), row = 0.0, col = 0.0;
      for (i64 j = 0; j < C; ++j) {
        row += static_cast<double>(cm.at(c, j));
        col += static_cast<double>(cm.at(j, c));
      }
      const double precision = col > 0 ? tp / col : 0.0;
      const double recall = row > 0 ? tp / row : 0.0;
      if (precision + recall > 0) {
        expected += 2.0 * (row / total) * precision * recall / (precision + recall);
      }
    }
    worst = std::max(worst, std::abs(f1 - expected));
  }
  lego::ConfusionMatrix perfect(4);
  for (i64 c = 0; c < 4; ++c) perfect.at(c, c) = 3 + c;
  if (lego::weighted_f1(perfect) != 1.0) ok = false;
  std::ostringstream detail;
  detail << "1000 random matrices, worst |F1 - recomputation| = " << worst
         << " (tol 1e-12); perfect matrix = 1.0";
  record(6, "weighted F1 against an independent recomputation", ok && worst < 1e-12, detail.str());
}

// ---------------------------------------------------------------------- 7
void criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  auto run = [&](const std::string& name) {
    lego::ModelConfig config = lego::load_config(kConfigs + "/" + name);
    lego::DataBundle data = lego::prepare_dataset(lego::config_manifest(config));
    lego::Model<float> model(config.layers, data.train.window_len, data.train.channels(),
                             data.train.num_classes(), config.seed);
    lego::FitResult<float> fit = lego::fit(model, config.training, config.loss_mode, data.train,
                                           data.test, config.seed);
    return fit.final_eval;
  };
  const lego::EvalResult baseline = run("synthetic.json");
  const lego::EvalResult compressed = run("synthetic_lego.json");
  const double secs = elapsed_s(t0);
  const double gap = std::abs(baseline.acc - compressed.acc);
  std::ostringstream detail;
  detail << "baseline acc " << baseline.acc << ", lego(o=2,m=0.5) acc " << compressed.acc
         << ", gap " << gap << " (tol 0.03), " << secs << "s (limit 300)";
  record(7, "desk-scale learning parity on the synthetic dataset",
         baseline.acc >= 0.95 && compressed.acc >= 0.95 && gap <= 0.03 && secs <= 300.0,
         detail.str());
}

// ---------------------------------------------------------------------- 8
void criterion8_orderings() {
  const std::vector<std::string> configs{"uci_har_lego.json", "opportunity_lego.json",
                                         "pamap2_lego.json", "unimib_shar_lego.json",
                                         "wisdm_lego.json"};
  bool ok = true;
  std::ostringstream detail;
  for (const std::string& name : configs) {
    lego::ModelConfig base = lego::load_config(kConfigs + "/" + name);
    lego::DatasetManifest manifest = lego::config_manifest(base);
    i64 width = 0;
    if (manifest.format == "csv") {
      width = static_cast<i64>(manifest.channel_columns.size());
    } else if (manifest.format == "wisdm-raw") {
      width = 3;
    } else {
      width = manifest.synth_channels;
    }
    const i64 classes = static_cast<i64>(manifest.class_names.size());

    std::vector<double> ratios, speedups;
    const struct {
      i64 o;
      double m;
    } settings[] = {{2, 0.5}, {4, 0.5}, {2, 0.25}, {4, 0.25}};
    for (const auto& s : settings) {
      lego::CostReport report = lego::analyze_cost(
          lego::with_compression(base, s.o, s.m).layers, manifest.window_len, width, classes);
      ratios.push_back(report.model_ratio);
      speedups.push_back(report.model_speedup);
    }
    const bool ratio_order = ratios[0] < ratios[1] &&
                             std::abs(ratios[1] - ratios[2]) < 0.05 * ratios[1] &&
                             ratios[2] < ratios[3];
    const bool speed_order = std::abs(speedups[0] - speedups[1]) < 0.05 * speedups[0] &&
                             speedups[1] < speedups[2] &&
                             std::abs(speedups[2] - speedups[3]) < 0.05 * speedups[2];
    if (!ratio_order || !speed_order) {
      ok = false;
      detail << name << " ordering violated; ";
    }
  }
  if (ok) detail << "Com/Speed-Up orderings preserved for all five bundled dataset configs";
  record(8, "compression orderings of the bundled dataset configs", ok, detail.str());
}

void criterion8_paper_scale() {
  // Hours on CPU; requires the user-supplied UCI-HAR CSV (see
  // scripts/fetch_uci_har.sh).
  const auto t0 = std::chrono::steady_clock::now();
  auto run = [&](const std::string& name) {
    lego::ModelConfig config = lego::load_config(kConfigs + "/" + name);
    config.training.epochs = std::max<i64>(config.training.epochs, 500);
    lego::DataBundle data = lego::prepare_dataset(lego::config_manifest(config));
    lego::Model<float> model(config.layers, data.train.window_len, data.train.channels(),
                             data.train.num_classes(), config.seed);
    lego::FitResult<float> fit = lego::fit(model, config.training, config.loss_mode, data.train,
                                           data.test, config.seed, &std::cerr);
    return fit.final_eval;
  };
  try {
    const lego::EvalResult baseline = run("uci_har.json");
    const lego::EvalResult compressed = run("uci_har_lego.json");
    const lego::EvalResult local = run("uci_har_lego_local.json");
    std::ostringstream detail;
    detail << "baseline F1 " << baseline.f1 << " (>= 0.94), lego F1 " << compressed.f1
           << " (within 0.015 of baseline), local-loss lego F1 " << local.f1
           << " (>= lego - 0.005); " << elapsed_s(t0) << "s";
    const bool ok = baseline.f1 >= 0.94 && compressed.f1 >= baseline.f1 - 0.015 &&
                    local.f1 >= compressed.f1 - 0.005;
    record(8, "paper-scale UCI-HAR spot check", ok, detail.str());
  } catch (const std::exception& e) {
    record(8, "paper-scale UCI-HAR spot check", false,
           std::string("could not run: ") + e.what());
  }
}

// ---------------------------------------------------------------------- 9
void criterion9() {
  const std::string out =
      (std::filesystem::temp_directory_path() / "legoconv_acceptance_bench.csv").string();
  const std::string cmd = kCli + " bench --config " + kConfigs +
                          "/bench_timing.json --time-only --repeats 20 --out " + out +
                          " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  double naive_ms = 0.0, stm_ms = 0.0, realized = 0.0;
  bool parsed = false;
  if (status == 0) {
    std::istringstream in(lego::read_text_file(out));
    std::string line;
    std::getline(in, line);  // header
    std::vector<std::string> header_fields;
    {
      std::istringstream hs(line);
      std::string f;
      while (std::getline(hs, f, ',')) header_fields.push_back(f);
    }
    while (std::getline(in, line)) {
      std::vector<std::string> fields;
      std::istringstream ls(line);
      std::string f;
      while (std::getline(ls, f, ',')) fields.push_back(f);
      for (std::size_t i = 0; i < fields.size() && i < header_fields.size(); ++i) {
        if (fields[i].empty()) continue;
        if (header_fields[i] == "naive_ms") naive_ms = std::stod(fields[i]);
        if (header_fields[i] == "stm_ms") stm_ms = std::stod(fields[i]);
        if (header_fields[i] == "realized_speedup") {
          realized = std::stod(fields[i]);
          parsed = true;
        }
      }
    }
  }
  std::remove(out.c_str());
  std::ostringstream detail;
  detail << "cmd_bench timing (c=128, n=256, m=0.25, median of 20): naive " << naive_ms
         << "ms, stm " << stm_ms << "ms, realized speedup " << realized << " (>= 1.3)";
  record(9, "split-transform-merge wall-clock speedup", parsed && stm_ms < naive_ms && realized >= 1.3,
         detail.str());
}

// --------------------------------------------------------------------- 10
void criterion10() {
  nlohmann::json j{
      {"dataset", nlohmann::json{{"format", "synthetic"},
                                 {"window_len", 32},
                                 {"step", 16},
                                 {"synthetic", nlohmann::json{{"classes", 3},
                                                              {"channels", 2},
                                                              {"total_time", 6000},
                                                              {"seed", 8}}}}},
      {"layers",
       nlohmann::json::array({nlohmann::json{{"type", "conv"}, {"n", 6}, {"d", 3}},
                              nlohmann::json{{"type", "pool"}},
                              nlohmann::json{{"type", "lego"}, {"n", 8}, {"d", 3}, {"o", 2}, {"m", 0.5}},
                              nlohmann::json{{"type", "dense"}, {"units", 12}},
                              nlohmann::json{{"type", "softmax"}}})},
      {"training", nlohmann::json{{"batch_size", 16}, {"epochs", 2}}},
      {"seed", 13}};
  lego::ModelConfig config = lego::parse_config(j, "");
  lego::DataBundle data = lego::prepare_dataset(lego::config_manifest(config));
  lego::Model<float> model(config.layers, 32, 2, 3, config.seed);
  lego::fit(model, config.training, config.loss_mode, data.train, data.test, config.seed);

  const std::string path =
      (std::filesystem::temp_directory_path() / "legoconv_acceptance_ckpt.bin").string();
  Tensor<float> before = lego::collect_logits(model, data.test);
  lego::checkpoint_save(model, config, {}, path);
  lego::LoadedCheckpoint<float> loaded = lego::checkpoint_load<float>(path);
  Tensor<float> after = lego::collect_logits(loaded.model, data.test);
  const bool bit_exact = before.buffer() == after.buffer();

  // tamper with the stored digest: the load must refuse
  std::string bytes = lego::read_text_file(path);
  const std::string key = "\"masks_digest\":\"";
  const std::size_t pos = bytes.find(key);
  bool refused = false;
  if (pos != std::string::npos) {
    bytes[pos + key.size()] = bytes[pos + key.size()] == '0' ? '1' : '0';
    lego::write_text_file(path, bytes);
    try {
      lego::checkpoint_load<float>(path);
    } catch (const lego::io_error&) {
      refused = true;
    }
  }
  std::remove(path.c_str());
  std::ostringstream detail;
  detail << "round-trip logits " << (bit_exact ? "bit-identical" : "DIFFER")
         << "; tampered digest " << (refused ? "refused" : "ACCEPTED");
  record(10, "checkpoint persistence round trip", bit_exact && refused, detail.str());
}

}  // namespace

int main(int argc, char** argv) {
  bool paper_scale = false;
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--paper-scale") paper_scale = true;
  }

  criterion1();
  criterion2();
  criterion3();
  criterion4();
  criterion5();
  criterion6();
  criterion7();
  criterion8_orderings();
  if (paper_scale) {
    criterion8_paper_scale();
  } else {
    record_skip(8, "paper-scale UCI-HAR spot check",
                "optional, hours on CPU; run with --paper-scale after fetching UCI-HAR "
                "(scripts/fetch_uci_har.sh)");
  }
  criterion9();
  criterion10();

  int failures = 0;
  for (const Outcome& o : outcomes) {
    const char* tag = o.status == Outcome::Status::Pass   ? "PASS"
                      : o.status == Outcome::Status::Skip ? "SKIP"
                                                          : "FAIL";
    if (o.status == Outcome::Status::Fail) ++failures;
    std::cout << tag << " criterion " << o.id << ": " << o.name << " — " << o.detail << '\n';
  }
  std::cout << (failures == 0 ? "acceptance: all gated criteria passed\n"
                              : "acceptance: " + std::to_string(failures) + " criteria failed\n");
  return failures == 0 ? 0 : 1;
}
