#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "lego/arch.hpp"
#include "lego/tensor.hpp"

namespace lego {

// Rows are ground truth, columns are predictions.
struct ConfusionMatrix {
  i64 num_classes = 0;
  std::vector<i64> counts;

  explicit ConfusionMatrix(i64 classes = 0)
      : num_classes(classes), counts(static_cast<std::size_t>(classes * classes), 0) {}

  i64& at(i64 truth, i64 pred) { return counts[static_cast<std::size_t>(truth * num_classes + pred)]; }
  i64 at(i64 truth, i64 pred) const {
    return counts[static_cast<std::size_t>(truth * num_classes + pred)];
  }

  i64 total() const {
    i64 s = 0;
    for (i64 v : counts) s += v;
    return s;
  }
};

inline ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& truths,
                                 i64 num_classes) {
  if (predictions.size() != truths.size()) {
    throw invalid_input("confusion: " + std::to_string(predictions.size()) + " predictions vs " +
                        std::to_string(truths.size()) + " truths");
  }
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], t = truths[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) {
      throw invalid_input("confusion: class id out of range at sample " + std::to_string(i));
    }
    ++cm.at(t, p);
  }
  return cm;
}

struct ClassMetrics {
  i64 support = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& cm) {
  std::vector<ClassMetrics> out(static_cast<std::size_t>(cm.num_classes));
  for (i64 c = 0; c < cm.num_classes; ++c) {
    i64 tp = cm.at(c, c), truth_total = 0, pred_total = 0;
    for (i64 j = 0; j < cm.num_classes; ++j) {
      truth_total += cm.at(c, j);
      pred_total += cm.at(j, c);
    }
    ClassMetrics& m = out[static_cast<std::size_t>(c)];
    m.support = truth_total;
    m.precision = pred_total > 0 ? static_cast<double>(tp) / static_cast<double>(pred_total) : 0.0;
    m.recall = truth_total > 0 ? static_cast<double>(tp) / static_cast<double>(truth_total) : 0.0;
    m.f1 = (m.precision + m.recall) > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                          : 0.0;
  }
  return out;
}

// Class-frequency-weighted F1: 2 * sum_c (N_c / N) * P_c R_c / (P_c + R_c).
// Classes with P + R = 0 contribute 0.
inline double weighted_f1(const ConfusionMatrix& cm) {
  const i64 total = cm.total();
  if (cm.num_classes == 0 || total == 0) {
    throw invalid_input("weighted f1: empty confusion matrix");
  }
  const std::vector<ClassMetrics> per = per_class_metrics(cm);
  double f1 = 0.0;
  for (i64 c = 0; c < cm.num_classes; ++c) {
    const ClassMetrics& m = per[static_cast<std::size_t>(c)];
    const double weight = static_cast<double>(m.support) / static_cast<double>(total);
    if (m.precision + m.recall > 0.0) {
      f1 += 2.0 * weight * (m.precision * m.recall) / (m.precision + m.recall);
    }
  }
  return f1;
}

inline double accuracy(const ConfusionMatrix& cm) {
  const i64 total = cm.total();
  if (total == 0) throw invalid_input("accuracy: empty confusion matrix");
  i64 correct = 0;
  for (i64 c = 0; c < cm.num_classes; ++c) correct += cm.at(c, c);
  return static_cast<double>(correct) / static_cast<double>(total);
}

inline std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& names) {
  std::ostringstream out;
  out << "truth\\pred";
  for (i64 c = 0; c < cm.num_classes; ++c) {
    out << ',' << (c < static_cast<i64>(names.size()) ? names[static_cast<std::size_t>(c)]
                                                      : std::to_string(c));
  }
  out << '\n';
  for (i64 t = 0; t < cm.num_classes; ++t) {
    out << (t < static_cast<i64>(names.size()) ? names[static_cast<std::size_t>(t)]
                                               : std::to_string(t));
    for (i64 p = 0; p < cm.num_classes; ++p) out << ',' << cm.at(t, p);
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Cost accounting.
//
// Conventions: one multiply-accumulate is 2 FLOPs; `flops` is the core
// conv/dense cost per example (merge additions of the split-transform-merge
// path included); bias, batch norm, ReLU and pool comparisons are tracked in
// `aux_flops` so compression ratios stay clean. A compressed layer's `ratio`
// compares float weights against the conventional layer (n*o/k) and its
// `speedup` compares multiply counts (n/k); both are exact by construction.

struct CostRow {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  bool compressed = false;
  i64 weights = 0;
  i64 bias = 0;
  i64 bn = 0;              // gamma/beta
  i64 aux_params = 0;      // batch norm running statistics
  i64 structure_bits = 0;  // binary mask bits of a lego layer
  i64 muls = 0;            // core multiply count per example
  i64 flops = 0;           // core flops per example
  i64 aux_flops = 0;
  i64 baseline_weights = 0;  // conventional counterpart (equals weights when uncompressed)
  i64 baseline_bias = 0;
  i64 baseline_muls = 0;
  i64 baseline_flops = 0;
  double ratio = 1.0;
  double speedup = 1.0;

  i64 params() const { return weights + bias + bn; }
  i64 baseline_params() const { return baseline_weights + baseline_bias + bn; }
};

struct CostReport {
  std::vector<CostRow> rows;
  i64 total_params = 0;
  i64 total_flops = 0;
  i64 total_aux_flops = 0;
  i64 total_structure_bits = 0;
  i64 baseline_total_params = 0;
  i64 baseline_total_flops = 0;
  double model_ratio = 1.0;
  double model_speedup = 1.0;
};

// Per-layer parameter and FLOP counts for an architecture applied to
// [1, window_len, width] inputs with the given class count.
inline std::vector<CostRow> count_layer_costs(const std::vector<LayerSpec>& layers, i64 window_len,
                                              i64 width, i64 num_classes) {
  const std::vector<FeatureShape> shapes = infer_shapes(layers, window_len, width, num_classes);
  std::vector<CostRow> rows;
  rows.reserve(layers.size());
  FeatureShape in{1, window_len, width, false, 0};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const FeatureShape& out = shapes[i];
    CostRow row;
    row.kind = l.kind;
    row.name = "layer" + std::to_string(i) + "." + layer_kind_name(l.kind);
    switch (l.kind) {
      case LayerKind::Conv: {
        const i64 map = out.time * out.width;
        row.weights = l.n * in.channels * l.d;
        row.bias = l.n;
        row.bn = 2 * l.n;
        row.aux_params = 2 * l.n;
        row.muls = l.n * in.channels * l.d * map;
        row.flops = 2 * row.muls;
        row.aux_flops = l.n * map /*bias*/ + 2 * l.n * map /*bn*/ + l.n * map /*relu*/;
        row.baseline_weights = row.weights;
        row.baseline_bias = row.bias;
        row.baseline_muls = row.muls;
        row.baseline_flops = row.flops;
        break;
      }
      case LayerKind::Lego: {
        const i64 map = out.time * out.width;
        const i64 k = lego_brick_count(l.n, l.m);
        const i64 c_frag = in.channels / l.o;
        row.compressed = true;
        row.weights = k * c_frag * l.d;
        row.bias = 0;
        row.bn = 2 * l.n;
        row.aux_params = 2 * l.n;
        row.structure_bits = l.n * l.o * k;
        row.muls = l.o * k * c_frag * l.d * map;
        row.flops = 2 * row.muls + (l.o - 1) * l.n * map;  // transform + merge adds
        row.aux_flops = 2 * l.n * map + l.n * map;
        row.baseline_weights = l.n * in.channels * l.d;
        row.baseline_bias = l.n;
        row.baseline_muls = l.n * in.channels * l.d * map;
        row.baseline_flops = 2 * row.baseline_muls;
        row.ratio = static_cast<double>(row.baseline_weights) / static_cast<double>(row.weights);
        row.speedup = static_cast<double>(row.baseline_muls) / static_cast<double>(row.muls);
        break;
      }
      case LayerKind::Pool: {
        row.aux_flops = (l.extent - 1) * out.channels * out.time * out.width;
        break;
      }
      case LayerKind::Dense: {
        row.weights = in.size() * l.units;
        row.bias = l.units;
        row.bn = 2 * l.units;
        row.aux_params = 2 * l.units;
        row.muls = in.size() * l.units;
        row.flops = 2 * row.muls;
        row.aux_flops = l.units /*bias*/ + 2 * l.units /*bn*/ + l.units /*relu*/;
        row.baseline_weights = row.weights;
        row.baseline_bias = row.bias;
        row.baseline_muls = row.muls;
        row.baseline_flops = row.flops;
        break;
      }
      case LayerKind::Softmax: {
        row.weights = in.size() * num_classes;
        row.bias = num_classes;
        row.muls = in.size() * num_classes;
        row.flops = 2 * row.muls;
        row.aux_flops = num_classes;
        row.baseline_weights = row.weights;
        row.baseline_bias = row.bias;
        row.baseline_muls = row.muls;
        row.baseline_flops = row.flops;
        break;
      }
    }
    rows.push_back(std::move(row));
    in = out;
  }
  return rows;
}

inline CostReport speedup_and_ratio(std::vector<CostRow> rows) {
  CostReport report;
  report.rows = std::move(rows);
  for (const CostRow& r : report.rows) {
    report.total_params += r.params();
    report.total_flops += r.flops;
    report.total_aux_flops += r.aux_flops;
    report.total_structure_bits += r.structure_bits;
    report.baseline_total_params += r.baseline_params();
    report.baseline_total_flops += r.baseline_flops;
  }
  report.model_ratio = report.total_params > 0
                           ? static_cast<double>(report.baseline_total_params) /
                                 static_cast<double>(report.total_params)
                           : 1.0;
  report.model_speedup = report.total_flops > 0
                             ? static_cast<double>(report.baseline_total_flops) /
                                   static_cast<double>(report.total_flops)
                             : 1.0;
  return report;
}

inline CostReport analyze_cost(const std::vector<LayerSpec>& layers, i64 window_len, i64 width,
                               i64 num_classes) {
  return speedup_and_ratio(count_layer_costs(layers, window_len, width, num_classes));
}

// Fixed column set: name, params, flops, ratio, speedup.
inline std::string cost_report_csv(const CostReport& report) {
  std::ostringstream out;
  out << "name,params,flops,ratio,speedup\n";
  out << std::fixed << std::setprecision(4);
  for (const CostRow& r : report.rows) {
    out << r.name << ',' << r.params() << ',' << r.flops << ',' << r.ratio << ',' << r.speedup
        << '\n';
  }
  out << "total," << report.total_params << ',' << report.total_flops << ','
      << report.model_ratio << ',' << report.model_speedup << '\n';
  return out.str();
}

inline std::string cost_report_table(const CostReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(18) << "layer" << std::right << std::setw(12) << "params"
      << std::setw(14) << "flops" << std::setw(9) << "ratio" << std::setw(9) << "speedup" << '\n';
  out << std::fixed << std::setprecision(2);
  for (const CostRow& r : report.rows) {
    out << std::left << std::setw(18) << r.name << std::right << std::setw(12) << r.params()
        << std::setw(14) << r.flops << std::setw(9) << r.ratio << std::setw(9) << r.speedup << '\n';
  }
  out << std::left << std::setw(18) << "total" << std::right << std::setw(12) << report.total_params
      << std::setw(14) << report.total_flops << std::setw(9) << report.model_ratio << std::setw(9)
      << report.model_speedup << '\n';
  return out.str();
}

}  // namespace lego
