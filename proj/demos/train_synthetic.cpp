// Minimal library walkthrough: generate a synthetic sensor stream, train a
// small lego-compressed CNN on it, and print the accuracy next to the cost
// accounting of the compressed vs conventional stack.

#include <iostream>

#include "lego/data.hpp"
#include "lego/metrics.hpp"
#include "lego/model.hpp"
#include "lego/trainer.hpp"

int main() {
  using lego::LayerKind;
  using lego::LayerSpec;

  lego::SensorSeries series = lego::generate_synthetic(3, 3, 20000, 7);
  lego::WindowedDataset all = lego::sliding_window(series, 64, 32);
  lego::SplitResult parts = lego::split(all, {0.7, 1, lego::SplitSpec::Strategy::Random});
  lego::NormStats stats = lego::compute_norm_stats(parts.train);
  lego::normalize(parts.train, stats);
  lego::normalize(parts.test, stats);

  std::vector<LayerSpec> layers;
  layers.push_back({.kind = LayerKind::Conv, .n = 16, .d = 5});
  layers.push_back({.kind = LayerKind::Pool, .extent = 2, .pool_stride = 2});
  LayerSpec compressed{.kind = LayerKind::Lego, .n = 32, .d = 5, .o = 2, .m = 0.5};
  layers.push_back(compressed);
  layers.push_back({.kind = LayerKind::Pool, .extent = 2, .pool_stride = 2});
  layers.push_back({.kind = LayerKind::Dense, .units = 48});
  layers.push_back({.kind = LayerKind::Softmax});

  lego::Model<float> model(layers, all.window_len, all.channels(), all.num_classes(), 42);

  lego::TrainingSpec training;
  training.batch_size = 32;
  training.epochs = 10;
  training.lr.initial = 1e-3;
  lego::FitResult<float> result = lego::fit(model, training, lego::LossMode::Global, parts.train,
                                            parts.test, 42, &std::cerr);

  std::cout << "test weighted F1: " << result.final_eval.f1 << '\n';
  std::cout << lego::cost_report_table(
      lego::analyze_cost(layers, all.window_len, all.channels(), all.num_classes()));
  return 0;
}
