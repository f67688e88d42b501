// Command-line harness: config-driven training, evaluation, cost inspection
// and compression-grid benchmarking for lego-filter CNNs on windowed sensor
// data.
//
// Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 partial
// grid failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lego/checkpoint.hpp"
#include "lego/config.hpp"
#include "lego/data.hpp"
#include "lego/metrics.hpp"
#include "lego/model.hpp"
#include "lego/trainer.hpp"

namespace {

using lego::i64;

struct DatasetGeometry {
  i64 window_len = 0;
  i64 width = 0;
  i64 num_classes = 0;
};

// Geometry without loading the data files, so `inspect` works on a machine
// that has only the manifests.
DatasetGeometry manifest_geometry(const lego::DatasetManifest& manifest) {
  DatasetGeometry g;
  if (manifest.format == "cache") {
    const lego::WindowedDataset cached =
        lego::load_window_cache(manifest.resolve_path(manifest.data_path));
    g.window_len = cached.window_len;
    g.width = cached.channels();
    g.num_classes = cached.num_classes();
    return g;
  }
  g.window_len = manifest.window_len;
  g.num_classes = static_cast<i64>(manifest.class_names.size());
  if (manifest.format == "csv") {
    g.width = static_cast<i64>(manifest.channel_columns.size());
  } else if (manifest.format == "wisdm-raw") {
    g.width = 3;
  } else {
    g.width = manifest.synth_channels;
  }
  return g;
}

nlohmann::json cost_report_json(const lego::CostReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const lego::CostRow& r : report.rows) {
    rows.push_back({{"name", r.name},
                    {"kind", lego::layer_kind_name(r.kind)},
                    {"compressed", r.compressed},
                    {"params", r.params()},
                    {"weights", r.weights},
                    {"bias", r.bias},
                    {"bn", r.bn},
                    {"aux_params", r.aux_params},
                    {"structure_bits", r.structure_bits},
                    {"flops", r.flops},
                    {"aux_flops", r.aux_flops},
                    {"ratio", r.ratio},
                    {"speedup", r.speedup}});
  }
  return {{"layers", rows},
          {"total_params", report.total_params},
          {"total_flops", report.total_flops},
          {"total_aux_flops", report.total_aux_flops},
          {"total_structure_bits", report.total_structure_bits},
          {"baseline_params", report.baseline_total_params},
          {"baseline_flops", report.baseline_total_flops},
          {"model_ratio", report.model_ratio},
          {"model_speedup", report.model_speedup}};
}

nlohmann::json eval_json(const lego::EvalResult& eval, const std::vector<std::string>& names) {
  const std::vector<lego::ClassMetrics> per = lego::per_class_metrics(eval.cm);
  nlohmann::json per_class = nlohmann::json::array();
  for (std::size_t c = 0; c < per.size(); ++c) {
    per_class.push_back({{"class", c < names.size() ? names[c] : std::to_string(c)},
                         {"precision", per[c].precision},
                         {"recall", per[c].recall},
                         {"f1", per[c].f1},
                         {"support", per[c].support}});
  }
  return {{"weighted_f1", eval.f1}, {"accuracy", eval.acc}, {"per_class", per_class}};
}

struct TrainOutcome {
  lego::FitResult<float> fit;
  lego::Model<float> model;
  lego::NormStats stats;
  DatasetGeometry geometry;
};

TrainOutcome train_from_config(const lego::ModelConfig& config, std::uint32_t seed,
                               std::ostream* progress) {
  const lego::DatasetManifest manifest = lego::config_manifest(config);
  lego::DataBundle data = lego::prepare_dataset(manifest);
  for (const std::string& warning : data.warnings) {
    std::cerr << "warning: " << warning << '\n';
  }
  DatasetGeometry geometry{data.train.window_len, data.train.channels(),
                           data.train.num_classes()};
  lego::validate_against_dataset(config, geometry.window_len, geometry.width,
                                 geometry.num_classes);
  TrainOutcome outcome;
  outcome.geometry = geometry;
  outcome.stats = data.stats;
  outcome.model = lego::Model<float>(config.layers, geometry.window_len, geometry.width,
                                     geometry.num_classes, seed);
  outcome.fit = lego::fit(outcome.model, config.training, config.loss_mode, data.train, data.test,
                          seed, progress);
  return outcome;
}

nlohmann::json checkpoint_meta(const TrainOutcome& outcome, std::uint32_t seed, i64 epochs,
                               bool standardize) {
  return {{"epochs", epochs},
          {"seed", seed},
          {"final_f1", outcome.fit.final_eval.f1},
          {"final_accuracy", outcome.fit.final_eval.acc},
          {"standardize", standardize},
          {"norm_mean", outcome.stats.mean},
          {"norm_std", outcome.stats.stddev}};
}

int cmd_train(const std::string& config_path, std::optional<std::uint32_t> seed_override,
              std::optional<i64> epochs_override, bool paper_scale, const std::string& out_path,
              const std::string& metrics_path, bool quiet) {
  lego::ModelConfig config = lego::load_config(config_path);
  if (epochs_override) {
    if (*epochs_override < 1) throw lego::invalid_input("training.epochs: must be >= 1");
    config.training.epochs = *epochs_override;
  }
  if (paper_scale) config.training.epochs = std::max<i64>(config.training.epochs, 500);
  const std::uint32_t seed = seed_override ? *seed_override : config.seed;

  TrainOutcome outcome = train_from_config(config, seed, quiet ? nullptr : &std::cerr);

  if (!metrics_path.empty()) {
    lego::write_text_file(metrics_path, outcome.fit.history.csv());
  }
  if (!out_path.empty()) {
    const lego::DatasetManifest manifest = lego::config_manifest(config);
    lego::checkpoint_save(outcome.model, config,
                          checkpoint_meta(outcome, seed, config.training.epochs,
                                          manifest.standardize),
                          out_path);
  }
  std::cout << "trained " << config.training.epochs << " epochs: test_f1="
            << std::setprecision(6) << outcome.fit.final_eval.f1
            << " accuracy=" << outcome.fit.final_eval.acc << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_path,
             const std::string& confusion_path) {
  lego::LoadedCheckpoint<float> loaded = lego::checkpoint_load<float>(checkpoint_path);
  const lego::DatasetManifest manifest = lego::load_manifest(data_path);
  const lego::WindowedDataset all = lego::load_dataset(manifest);

  if (all.channels() != loaded.model.width() || all.window_len != loaded.model.window_len()) {
    throw lego::invalid_input("eval: dataset windows are " + std::to_string(all.window_len) + "x" +
                              std::to_string(all.channels()) + ", model expects " +
                              std::to_string(loaded.model.window_len()) + "x" +
                              std::to_string(loaded.model.width()));
  }
  if (all.num_classes() != loaded.model.num_classes()) {
    throw lego::invalid_input("eval: dataset declares " + std::to_string(all.num_classes()) +
                              " classes, model has " + std::to_string(loaded.model.num_classes()));
  }

  lego::SplitResult parts = lego::split(all, manifest.split);
  lego::WindowedDataset test = std::move(parts.test);
  if (loaded.meta.value("standardize", true)) {
    lego::NormStats stats;
    stats.mean = loaded.meta.value("norm_mean", std::vector<float>());
    stats.stddev = loaded.meta.value("norm_std", std::vector<float>());
    if (static_cast<i64>(stats.mean.size()) != test.channels()) {
      throw lego::invalid_input("eval: checkpoint normalization covers " +
                                std::to_string(stats.mean.size()) + " channels, dataset has " +
                                std::to_string(test.channels()));
    }
    lego::normalize(test, stats);
  }

  const lego::EvalResult eval = lego::evaluate_model(loaded.model, test);
  if (!confusion_path.empty()) {
    lego::write_text_file(confusion_path, lego::confusion_csv(eval.cm, test.class_names));
  }
  std::cout << eval_json(eval, test.class_names).dump(2) << '\n';
  return 0;
}

int cmd_inspect(const std::string& config_path, const std::string& checkpoint_path,
                const std::string& json_path, const std::string& csv_path) {
  lego::ModelConfig config;
  DatasetGeometry geometry;
  if (!config_path.empty()) {
    config = lego::load_config(config_path);
    geometry = manifest_geometry(lego::config_manifest(config));
  } else {
    lego::LoadedCheckpoint<float> loaded = lego::checkpoint_load<float>(checkpoint_path);
    config = loaded.config;
    geometry = DatasetGeometry{loaded.model.window_len(), loaded.model.width(),
                               loaded.model.num_classes()};
  }
  const lego::CostReport report =
      lego::analyze_cost(config.layers, geometry.window_len, geometry.width, geometry.num_classes);
  std::cout << lego::cost_report_table(report);
  if (!csv_path.empty()) {
    if (csv_path == "-") {
      std::cout << lego::cost_report_csv(report);
    } else {
      lego::write_text_file(csv_path, lego::cost_report_csv(report));
    }
  }
  if (!json_path.empty()) {
    const std::string text = cost_report_json(report).dump(2) + "\n";
    if (json_path == "-") {
      std::cout << text;
    } else {
      lego::write_text_file(json_path, text);
    }
  }
  return 0;
}

struct GridSpec {
  std::vector<i64> o_values;
  std::vector<double> m_values;
};

GridSpec parse_grid(const std::string& text) {
  GridSpec grid;
  std::stringstream parts(text);
  std::string part;
  while (std::getline(parts, part, ';')) {
    const std::size_t eq = part.find('=');
    if (eq == std::string::npos) {
      throw lego::invalid_input("grid: expected key=v1,v2 segments, got '" + part + "'");
    }
    const std::string key = part.substr(0, eq);
    std::stringstream values(part.substr(eq + 1));
    std::string value;
    while (std::getline(values, value, ',')) {
      try {
        if (key == "o") {
          grid.o_values.push_back(std::stoll(value));
        } else if (key == "m") {
          grid.m_values.push_back(std::stod(value));
        } else {
          throw lego::invalid_input("grid: unknown key '" + key + "'");
        }
      } catch (const std::logic_error&) {
        throw lego::invalid_input("grid: bad value '" + value + "' for key '" + key + "'");
      }
    }
  }
  if (grid.o_values.empty() || grid.m_values.empty()) {
    throw lego::invalid_input("grid: need both o and m values, e.g. \"o=2,4;m=0.5,0.25\"");
  }
  return grid;
}

struct ConvTiming {
  double naive_ms = 0.0;
  double stm_ms = 0.0;
  double realized_speedup = 0.0;
  bool valid = false;
};

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Times the heaviest lego layer of the model, naive vs split-transform-merge,
// on random input. Median of `repeats` runs each.
ConvTiming time_lego_paths(lego::Model<float>& model, i64 repeats) {
  lego::LegoBlock<float>* heaviest = nullptr;
  lego::Shape input_shape;
  i64 best_macs = -1;
  const std::vector<lego::FeatureShape> shapes = lego::infer_shapes(
      model.layer_specs(), model.window_len(), model.width(), model.num_classes());
  lego::FeatureShape in{1, model.window_len(), model.width(), false, 0};
  for (std::size_t i = 0; i < model.blocks().size(); ++i) {
    if (auto* lb = dynamic_cast<lego::LegoBlock<float>*>(model.blocks()[i].get())) {
      const lego::LegoLayer<float>& l = lb->layer();
      const i64 t_out = shapes[i].time;
      const i64 macs = l.n * l.c * l.d * t_out * in.width;
      if (macs > best_macs) {
        best_macs = macs;
        heaviest = lb;
        input_shape = {8, in.channels, in.time, in.width};
      }
    }
    in = shapes[i];
  }

  ConvTiming timing;
  if (!heaviest) return timing;
  lego::Tensor<float> x(input_shape);
  std::mt19937 rng(99);
  lego::fill_uniform(x, rng, -1.0f, 1.0f);
  const lego::LegoLayer<float>& layer = heaviest->layer();

  volatile float sink = 0.0f;
  auto run_naive = [&]() {
    const auto t0 = std::chrono::steady_clock::now();
    lego::Tensor<float> y = lego::lego_conv_naive(x, layer);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + y[0];
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };
  auto run_stm = [&]() {
    const auto t0 = std::chrono::steady_clock::now();
    lego::Tensor<float> y = lego::lego_conv_stm(x, layer);
    const auto t1 = std::chrono::steady_clock::now();
    sink = sink + y[0];
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };
  run_naive();
  run_stm();  // warmup
  std::vector<double> naive_times, stm_times;
  for (i64 r = 0; r < repeats; ++r) {
    naive_times.push_back(run_naive());
    stm_times.push_back(run_stm());
  }
  timing.naive_ms = median(naive_times);
  timing.stm_ms = median(stm_times);
  timing.realized_speedup = timing.stm_ms > 0.0 ? timing.naive_ms / timing.stm_ms : 0.0;
  timing.valid = true;
  return timing;
}

struct GridRow {
  std::string cell;
  std::string o = "";
  std::string m = "";
  double f1 = 0.0;
  double acc = 0.0;
  i64 params = 0;
  i64 flops = 0;
  double ratio = 1.0;
  double speedup = 1.0;
  ConvTiming timing;
  bool trained = false;
  bool failed = false;
  std::string error;
};

std::vector<std::uint32_t> parse_seeds(const std::string& text) {
  std::vector<std::uint32_t> seeds;
  std::stringstream in(text);
  std::string value;
  while (std::getline(in, value, ',')) {
    try {
      seeds.push_back(static_cast<std::uint32_t>(std::stoul(value)));
    } catch (const std::logic_error&) {
      throw lego::invalid_input("bench: bad seed '" + value + "'");
    }
  }
  if (seeds.empty()) throw lego::invalid_input("bench: --seeds needs at least one value");
  return seeds;
}

int cmd_bench(const std::string& config_path, const std::string& grid_text, i64 repeats,
              std::optional<std::uint32_t> seed_override, std::optional<i64> epochs_override,
              bool time_only, const std::string& seeds_text, const std::string& out_path) {
  if (repeats < 1) throw lego::invalid_input("bench: --repeats must be >= 1");
  const lego::ModelConfig base = lego::load_config(config_path);
  std::vector<std::uint32_t> seeds;
  if (!seeds_text.empty()) {
    seeds = parse_seeds(seeds_text);
  } else {
    seeds.push_back(seed_override ? *seed_override : base.seed);
  }
  const std::uint32_t seed = seeds.front();

  std::vector<std::pair<std::string, lego::ModelConfig>> cells;
  if (grid_text.empty()) {
    // no grid: run the config as given, lego layers included
    cells.push_back({"config", base});
  } else {
    cells.push_back({"baseline", lego::as_baseline(base)});
    const GridSpec grid = parse_grid(grid_text);
    for (i64 o : grid.o_values) {
      for (double m : grid.m_values) {
        std::ostringstream name;
        name << "o" << o << "_m" << m;
        cells.push_back({name.str(), lego::with_compression(base, o, m)});
      }
    }
  }

  bool any_failed = false;
  std::vector<GridRow> rows;
  for (auto& [name, config] : cells) {
    GridRow row;
    row.cell = name;
    lego::ModelConfig cell_config = config;
    if (epochs_override) cell_config.training.epochs = *epochs_override;
    for (const lego::LayerSpec& l : cell_config.layers) {
      if (l.kind == lego::LayerKind::Lego) {
        row.o = std::to_string(l.o);
        std::ostringstream ms;
        ms << l.m;
        row.m = ms.str();
        break;
      }
    }
    try {
      const lego::DatasetManifest manifest = lego::config_manifest(cell_config);
      const DatasetGeometry geometry = manifest_geometry(manifest);
      lego::validate_against_dataset(cell_config, geometry.window_len, geometry.width,
                                     geometry.num_classes);
      const lego::CostReport report = lego::analyze_cost(
          cell_config.layers, geometry.window_len, geometry.width, geometry.num_classes);
      row.params = report.total_params;
      row.flops = report.total_flops;
      row.ratio = report.model_ratio;
      row.speedup = report.model_speedup;

      if (time_only) {
        lego::Model<float> model(cell_config.layers, geometry.window_len, geometry.width,
                                 geometry.num_classes, seed);
        row.timing = time_lego_paths(model, repeats);
      } else {
        // mean over the seed list; timing measured on the first run
        double f1_sum = 0.0, acc_sum = 0.0;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
          TrainOutcome outcome = train_from_config(cell_config, seeds[si], nullptr);
          f1_sum += outcome.fit.final_eval.f1;
          acc_sum += outcome.fit.final_eval.acc;
          if (si == 0) row.timing = time_lego_paths(outcome.model, repeats);
        }
        row.f1 = f1_sum / static_cast<double>(seeds.size());
        row.acc = acc_sum / static_cast<double>(seeds.size());
        row.trained = true;
      }
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      any_failed = true;
    }
    std::cerr << "bench cell " << row.cell << (row.failed ? " failed: " + row.error : " done")
              << '\n';
    rows.push_back(std::move(row));
  }

  std::ostringstream csv;
  csv << "cell,o,m,seeds,f1,accuracy,params,flops,ratio,speedup,naive_ms,stm_ms,"
         "realized_speedup,status\n";
  csv << std::setprecision(9);
  for (const GridRow& row : rows) {
    csv << row.cell << ',' << row.o << ',' << row.m << ',' << seeds.size() << ',';
    if (row.trained) csv << row.f1;
    csv << ',';
    if (row.trained) csv << row.acc;
    csv << ',' << row.params << ',' << row.flops << ',' << row.ratio << ',' << row.speedup << ',';
    if (row.timing.valid) csv << row.timing.naive_ms;
    csv << ',';
    if (row.timing.valid) csv << row.timing.stm_ms;
    csv << ',';
    if (row.timing.valid) csv << row.timing.realized_speedup;
    csv << ',' << (row.failed ? "failed" : "ok") << '\n';
  }
  if (out_path.empty()) {
    std::cout << csv.str();
  } else {
    lego::write_text_file(out_path, csv.str());
    std::cout << "wrote " << out_path << '\n';
  }
  return any_failed ? 4 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lego-filter compressed CNNs for wearable-sensor activity recognition"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, data_path, out_path, metrics_path, confusion_path;
  std::string json_path, csv_path, grid_text, seeds_text;
  std::optional<std::uint32_t> seed;
  std::optional<i64> epochs;
  i64 repeats = 20;
  bool paper_scale = false, deterministic = false, time_only = false, quiet = false;

  CLI::App* train = app.add_subcommand("train", "train a model from a config");
  train->add_option("--config", config_path, "model config JSON")->required();
  train->add_option("--seed", seed, "override the config seed");
  train->add_option("--epochs", epochs, "override the configured epoch count");
  train->add_flag("--paper-scale", paper_scale, "train at least 500 epochs");
  train->add_option("--out", out_path, "write a checkpoint here");
  train->add_option("--metrics", metrics_path, "write per-epoch metrics CSV here");
  train->add_flag("--deterministic", deterministic,
                  "single-threaded execution (the only mode; accepted for compatibility)");
  train->add_flag("--quiet", quiet, "suppress per-epoch progress");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();
  eval->add_option("--data", data_path, "dataset manifest JSON")->required();
  eval->add_option("--confusion", confusion_path, "write the confusion matrix CSV here");

  CLI::App* inspect = app.add_subcommand("inspect", "parameter/FLOP accounting without training");
  auto* opt_config = inspect->add_option("--config", config_path, "model config JSON");
  auto* opt_ckpt = inspect->add_option("--checkpoint", checkpoint_path, "checkpoint file");
  opt_config->excludes(opt_ckpt);
  inspect->add_option("--json", json_path, "write the JSON report here ('-' for stdout)");
  inspect->add_option("--csv", csv_path, "write the fixed-column CSV report here ('-' for stdout)");

  CLI::App* bench = app.add_subcommand("bench", "compression grid benchmark");
  bench->add_option("--config", config_path, "model config JSON")->required();
  bench->add_option("--grid", grid_text, "compression grid, e.g. \"o=2,4;m=0.5,0.25\"");
  bench->add_option("--repeats", repeats, "timing repeats (median reported)");
  bench->add_option("--seed", seed, "override the config seed");
  bench->add_option("--seeds", seeds_text, "comma-separated seed list; cells report the mean");
  bench->add_option("--epochs", epochs, "override the configured epoch count");
  bench->add_flag("--time-only", time_only, "skip training, only report costs and timings");
  bench->add_option("--out", out_path, "write the grid CSV here");
  bench->add_flag("--deterministic", deterministic,
                  "single-threaded execution (the only mode; accepted for compatibility)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(train)) {
      return cmd_train(config_path, seed, epochs, paper_scale, out_path, metrics_path, quiet);
    }
    if (app.got_subcommand(eval)) {
      return cmd_eval(checkpoint_path, data_path, confusion_path);
    }
    if (app.got_subcommand(inspect)) {
      if (config_path.empty() && checkpoint_path.empty()) {
        throw lego::invalid_input("inspect: need --config or --checkpoint");
      }
      return cmd_inspect(config_path, checkpoint_path, json_path, csv_path);
    }
    if (app.got_subcommand(bench)) {
      return cmd_bench(config_path, grid_text, repeats, seed, epochs, time_only, seeds_text,
                       out_path);
    }
  } catch (const lego::numeric_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
