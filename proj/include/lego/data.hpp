#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lego/serialize.hpp"
#include "lego/tensor.hpp"

namespace lego {

// A continuous multichannel recording with one label per time step.
struct SensorSeries {
  Tensor<float> samples;  // [total_time, channels]
  double sample_rate_hz = 0.0;
  std::vector<int> labels;
  std::vector<int> subjects;  // optional, empty when the source has no subject ids
  std::vector<std::string> class_names;

  i64 total_time() const { return samples.dim(0); }
  i64 channels() const { return samples.dim(1); }
};

// Fixed-length windows ready for the models: [num, 1, window_len, channels].
struct WindowedDataset {
  Tensor<float> windows;
  std::vector<int> labels;
  std::vector<int> subjects;  // per window, empty when unknown
  std::vector<std::string> class_names;
  i64 window_len = 0;
  i64 step = 0;

  i64 num() const { return windows.numel() == 0 ? 0 : windows.dim(0); }
  i64 channels() const { return windows.dim(3); }
  i64 num_classes() const { return static_cast<i64>(class_names.size()); }
};

inline i64 window_count(i64 total_time, i64 window_len, i64 step) {
  return (total_time - window_len) / step + 1;
}

namespace detail {

// Majority label of a window; among tied labels the one occurring latest in
// the window wins, so a tie involving the last sample resolves to it.
inline int window_label(const std::vector<int>& labels, i64 begin, i64 len, i64 num_classes) {
  std::vector<i64> counts(static_cast<std::size_t>(num_classes), 0);
  std::vector<i64> last_seen(static_cast<std::size_t>(num_classes), -1);
  for (i64 i = begin; i < begin + len; ++i) {
    const int l = labels[static_cast<std::size_t>(i)];
    ++counts[static_cast<std::size_t>(l)];
    last_seen[static_cast<std::size_t>(l)] = i;
  }
  int best = 0;
  for (int c = 1; c < num_classes; ++c) {
    const auto cc = counts[static_cast<std::size_t>(c)];
    const auto cb = counts[static_cast<std::size_t>(best)];
    if (cc > cb || (cc == cb && last_seen[static_cast<std::size_t>(c)] >
                                    last_seen[static_cast<std::size_t>(best)])) {
      best = c;
    }
  }
  return best;
}

}  // namespace detail

// Segments a series into windows at offsets 0, step, 2*step, ...; the
// trailing partial window is dropped.
inline WindowedDataset sliding_window(const SensorSeries& series, i64 window_len, i64 step) {
  if (window_len < 1 || step < 1) {
    throw invalid_input("sliding window: window_len and step must be >= 1");
  }
  if (window_len > series.total_time()) {
    throw invalid_input("sliding window: window_len " + std::to_string(window_len) +
                        " exceeds series length " + std::to_string(series.total_time()));
  }
  const i64 num = window_count(series.total_time(), window_len, step);
  const i64 ch = series.channels();
  WindowedDataset out;
  out.windows = Tensor<float>({num, 1, window_len, ch});
  out.labels.resize(static_cast<std::size_t>(num));
  out.class_names = series.class_names;
  out.window_len = window_len;
  out.step = step;
  const bool with_subjects = !series.subjects.empty();
  if (with_subjects) out.subjects.resize(static_cast<std::size_t>(num));
  const i64 classes = static_cast<i64>(series.class_names.size());
  for (i64 w = 0; w < num; ++w) {
    const i64 begin = w * step;
    std::copy(series.samples.data() + begin * ch, series.samples.data() + (begin + window_len) * ch,
              out.windows.data() + w * window_len * ch);
    out.labels[static_cast<std::size_t>(w)] =
        detail::window_label(series.labels, begin, window_len, classes);
    if (with_subjects) {
      out.subjects[static_cast<std::size_t>(w)] =
          series.subjects[static_cast<std::size_t>(begin + window_len - 1)];
    }
  }
  return out;
}

// Per-channel standardization statistics, always computed from the training
// split and applied unchanged to the test split.
struct NormStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

inline NormStats compute_norm_stats(const WindowedDataset& train) {
  const i64 ch = train.channels();
  const i64 per_channel = train.num() * train.window_len;
  NormStats stats;
  stats.mean.assign(static_cast<std::size_t>(ch), 0.0f);
  stats.stddev.assign(static_cast<std::size_t>(ch), 1.0f);
  if (per_channel == 0) return stats;
  std::vector<double> sum(static_cast<std::size_t>(ch), 0.0);
  std::vector<double> sq(static_cast<std::size_t>(ch), 0.0);
  const float* p = train.windows.data();
  for (i64 i = 0; i < per_channel; ++i) {
    for (i64 c = 0; c < ch; ++c) {
      const double v = p[i * ch + c];
      sum[static_cast<std::size_t>(c)] += v;
      sq[static_cast<std::size_t>(c)] += v * v;
    }
  }
  for (i64 c = 0; c < ch; ++c) {
    const double mean = sum[static_cast<std::size_t>(c)] / static_cast<double>(per_channel);
    double var = sq[static_cast<std::size_t>(c)] / static_cast<double>(per_channel) - mean * mean;
    if (var < 0.0) var = 0.0;
    const double sd = std::sqrt(var);
    stats.mean[static_cast<std::size_t>(c)] = static_cast<float>(mean);
    stats.stddev[static_cast<std::size_t>(c)] = sd < 1e-8 ? 1.0f : static_cast<float>(sd);
  }
  return stats;
}

inline void normalize(WindowedDataset& dataset, const NormStats& stats) {
  const i64 ch = dataset.channels();
  if (static_cast<i64>(stats.mean.size()) != ch) {
    throw invalid_input("normalize: statistics cover " + std::to_string(stats.mean.size()) +
                        " channels, dataset has " + std::to_string(ch));
  }
  float* p = dataset.windows.data();
  const i64 rows = dataset.num() * dataset.window_len;
  for (i64 i = 0; i < rows; ++i) {
    for (i64 c = 0; c < ch; ++c) {
      p[i * ch + c] = (p[i * ch + c] - stats.mean[static_cast<std::size_t>(c)]) /
                      stats.stddev[static_cast<std::size_t>(c)];
    }
  }
}

// Quasi-periodic labelled signals for desk-scale experiments: every class
// gets a distinct per-channel offset, amplitude and frequency, laid out in
// contiguous segments with Gaussian noise on top. Deterministic per seed.
inline SensorSeries generate_synthetic(int num_classes, int channels, i64 total_time,
                                       std::uint32_t seed, double noise = 0.4,
                                       i64 segment_len = 400) {
  if (num_classes < 2 || channels < 1 || total_time < 1 || segment_len < 1) {
    throw invalid_input("synthetic: need >= 2 classes, >= 1 channel, positive lengths");
  }
  const double rate = 50.0;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.2, 0.2);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * 3.14159265358979323846);
  std::normal_distribution<double> noise_dist(0.0, 1.0);

  // Class offsets are spread deterministically so window means separate the
  // classes regardless of seed; frequency and amplitude add waveform cues.
  std::vector<double> offset(static_cast<std::size_t>(num_classes * channels));
  std::vector<double> amp(offset.size()), freq(offset.size());
  for (int y = 0; y < num_classes; ++y) {
    for (int ch = 0; ch < channels; ++ch) {
      const std::size_t i = static_cast<std::size_t>(y * channels + ch);
      offset[i] = (y - (num_classes - 1) / 2.0) * 0.8 + jitter(rng);
      amp[i] = 0.8 + 0.25 * y + 0.05 * ch;
      freq[i] = 1.0 + 0.7 * y + 0.15 * ch;
    }
  }

  SensorSeries series;
  series.samples = Tensor<float>({total_time, channels});
  series.labels.resize(static_cast<std::size_t>(total_time));
  series.sample_rate_hz = rate;
  series.class_names.reserve(static_cast<std::size_t>(num_classes));
  for (int y = 0; y < num_classes; ++y) series.class_names.push_back("class" + std::to_string(y));

  i64 t = 0;
  int segment = 0;
  while (t < total_time) {
    const int y = segment % num_classes;
    std::vector<double> phase(static_cast<std::size_t>(channels));
    for (int ch = 0; ch < channels; ++ch) phase[static_cast<std::size_t>(ch)] = phase_dist(rng);
    const i64 end = std::min(total_time, t + segment_len);
    for (; t < end; ++t) {
      series.labels[static_cast<std::size_t>(t)] = y;
      for (int ch = 0; ch < channels; ++ch) {
        const std::size_t i = static_cast<std::size_t>(y * channels + ch);
        const double v = offset[i] +
                         amp[i] * std::sin(2.0 * 3.14159265358979323846 * freq[i] *
                                               static_cast<double>(t) / rate +
                                           phase[static_cast<std::size_t>(ch)]) +
                         noise * noise_dist(rng);
        series.samples(t, ch) = static_cast<float>(v);
      }
    }
    ++segment;
  }
  return series;
}

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint32_t seed = 1;
  enum class Strategy { Random, BySubject } strategy = Strategy::Random;
};

struct SplitResult {
  WindowedDataset train;
  WindowedDataset test;
  std::vector<std::string> warnings;
};

namespace detail {

inline WindowedDataset take_windows(const WindowedDataset& src, const std::vector<i64>& idx) {
  if (idx.empty()) throw invalid_input("split: a split side would be empty");
  WindowedDataset out;
  out.class_names = src.class_names;
  out.window_len = src.window_len;
  out.step = src.step;
  const i64 elem = src.window_len * src.channels();
  out.windows = Tensor<float>({static_cast<i64>(idx.size()), 1, src.window_len, src.channels()});
  out.labels.resize(idx.size());
  if (!src.subjects.empty()) out.subjects.resize(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const i64 w = idx[i];
    std::copy(src.windows.data() + w * elem, src.windows.data() + (w + 1) * elem,
              out.windows.data() + static_cast<i64>(i) * elem);
    out.labels[i] = src.labels[static_cast<std::size_t>(w)];
    if (!src.subjects.empty()) out.subjects[i] = src.subjects[static_cast<std::size_t>(w)];
  }
  return out;
}

}  // namespace detail

// Deterministic, disjoint, exhaustive split. Random strategy stratifies by
// class: per-class counts floor to the fraction and the remainder up to the
// exact global train size goes to the largest fractional parts.
inline SplitResult split(const WindowedDataset& dataset, const SplitSpec& spec) {
  if (spec.train_fraction <= 0.0 || spec.train_fraction >= 1.0) {
    throw invalid_input("split: train_fraction must be in (0,1), got " +
                        std::to_string(spec.train_fraction));
  }
  const i64 n = dataset.num();
  if (n < 2) throw invalid_input("split: need at least 2 windows");
  std::vector<i64> train_idx, test_idx;

  if (spec.strategy == SplitSpec::Strategy::BySubject) {
    if (dataset.subjects.empty()) {
      throw invalid_input("split: by-subject strategy needs subject ids, none in dataset");
    }
    std::set<int> subject_set(dataset.subjects.begin(), dataset.subjects.end());
    std::vector<int> subjects(subject_set.begin(), subject_set.end());
    if (subjects.size() < 2) throw invalid_input("split: by-subject needs >= 2 subjects");
    std::mt19937 rng(spec.seed);
    std::shuffle(subjects.begin(), subjects.end(), rng);
    i64 n_train = std::llround(spec.train_fraction * static_cast<double>(subjects.size()));
    n_train = std::clamp<i64>(n_train, 1, static_cast<i64>(subjects.size()) - 1);
    std::set<int> train_subjects(subjects.begin(), subjects.begin() + n_train);
    for (i64 i = 0; i < n; ++i) {
      if (train_subjects.count(dataset.subjects[static_cast<std::size_t>(i)])) {
        train_idx.push_back(i);
      } else {
        test_idx.push_back(i);
      }
    }
  } else {
    const i64 classes = std::max<i64>(dataset.num_classes(), 1);
    std::vector<std::vector<i64>> by_class(static_cast<std::size_t>(classes));
    for (i64 i = 0; i < n; ++i) {
      by_class[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])].push_back(i);
    }
    std::mt19937 rng(spec.seed);
    for (auto& group : by_class) std::shuffle(group.begin(), group.end(), rng);

    const i64 target = std::clamp<i64>(
        std::llround(spec.train_fraction * static_cast<double>(n)), 1, n - 1);
    std::vector<i64> take(static_cast<std::size_t>(classes), 0);
    std::vector<std::pair<double, i64>> rema;  // fractional part, class
    i64 assigned = 0;
    for (i64 c = 0; c < classes; ++c) {
      const double exact = spec.train_fraction *
                           static_cast<double>(by_class[static_cast<std::size_t>(c)].size());
      take[static_cast<std::size_t>(c)] = static_cast<i64>(std::floor(exact));
      assigned += take[static_cast<std::size_t>(c)];
      rema.push_back({exact - std::floor(exact), c});
    }
    std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < target && r < rema.size(); ++r) {
      const i64 c = rema[r].second;
      if (take[static_cast<std::size_t>(c)] <
          static_cast<i64>(by_class[static_cast<std::size_t>(c)].size())) {
        ++take[static_cast<std::size_t>(c)];
        ++assigned;
      }
    }
    for (i64 c = 0; c < classes; ++c) {
      const auto& group = by_class[static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < group.size(); ++i) {
        if (static_cast<i64>(i) < take[static_cast<std::size_t>(c)]) {
          train_idx.push_back(group[i]);
        } else {
          test_idx.push_back(group[i]);
        }
      }
    }
    std::sort(train_idx.begin(), train_idx.end());
    std::sort(test_idx.begin(), test_idx.end());
  }

  SplitResult result;
  result.train = detail::take_windows(dataset, train_idx);
  result.test = detail::take_windows(dataset, test_idx);
  std::vector<i64> train_class_count(dataset.class_names.size(), 0);
  for (int l : result.train.labels) ++train_class_count[static_cast<std::size_t>(l)];
  for (std::size_t c = 0; c < dataset.class_names.size(); ++c) {
    if (train_class_count[c] == 0) {
      result.warnings.push_back("class '" + dataset.class_names[c] + "' absent from train split");
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Manifests and adapters.

struct DatasetManifest {
  std::string format;  // csv | wisdm-raw | cache | synthetic
  std::string data_path;
  std::vector<i64> channel_columns;
  i64 label_column = -1;
  i64 subject_column = -1;
  std::vector<i64> forward_fill_columns;
  bool has_header = false;
  bool skip_malformed = false;
  double sample_rate_hz = 0.0;
  std::vector<std::string> class_names;
  i64 window_len = 0;
  i64 step = 0;
  SplitSpec split;
  bool standardize = true;
  // synthetic generator parameters
  int synth_classes = 3;
  int synth_channels = 3;
  i64 synth_total_time = 30000;
  std::uint32_t synth_seed = 7;
  double synth_noise = 0.4;
  i64 synth_segment_len = 400;

  std::string source_text;  // canonical JSON, hashed into cache digests
  std::string base_dir;     // directory of the manifest file, for relative paths

  std::string resolve_path(const std::string& p) const {
    std::filesystem::path fp(p);
    if (fp.is_absolute() || base_dir.empty()) return p;
    return (std::filesystem::path(base_dir) / fp).string();
  }
};

namespace detail {

inline std::vector<i64> parse_columns(const nlohmann::json& j, const std::string& where) {
  std::vector<i64> cols;
  if (j.is_array()) {
    for (const auto& v : j) {
      if (!v.is_number_integer()) throw invalid_input(where + ": column entries must be integers");
      cols.push_back(v.get<i64>());
    }
  } else if (j.is_object() && j.contains("first") && j.contains("last")) {
    const i64 first = j.at("first").get<i64>(), last = j.at("last").get<i64>();
    if (last < first) throw invalid_input(where + ": last < first");
    for (i64 c = first; c <= last; ++c) cols.push_back(c);
  } else {
    throw invalid_input(where + ": expected an array of columns or {first, last}");
  }
  return cols;
}

inline void check_keys(const nlohmann::json& obj, const std::set<std::string>& allowed,
                       const std::string& where) {
  for (const auto& item : obj.items()) {
    if (!allowed.count(item.key())) {
      throw invalid_input(where + ": unknown key '" + item.key() + "'");
    }
  }
}

}  // namespace detail

inline DatasetManifest parse_manifest(const nlohmann::json& j, const std::string& base_dir) {
  if (!j.is_object()) throw invalid_input("manifest: expected a JSON object");
  detail::check_keys(
      j,
      {"format", "data_path", "channel_columns", "label_column", "subject_column",
       "forward_fill_columns", "has_header", "skip_malformed", "sample_rate_hz", "class_names",
       "window_len", "step", "split", "standardize", "synthetic"},
      "manifest");
  DatasetManifest m;
  m.base_dir = base_dir;
  m.source_text = j.dump();
  m.format = j.value("format", std::string());
  if (m.format != "csv" && m.format != "wisdm-raw" && m.format != "cache" &&
      m.format != "synthetic") {
    throw invalid_input("manifest.format: expected csv, wisdm-raw, cache or synthetic, got '" +
                        m.format + "'");
  }
  m.data_path = j.value("data_path", std::string());
  if (m.format != "synthetic" && m.data_path.empty()) {
    throw invalid_input("manifest.data_path: required for format '" + m.format + "'");
  }
  if (j.contains("channel_columns")) {
    m.channel_columns = detail::parse_columns(j.at("channel_columns"), "manifest.channel_columns");
  }
  m.label_column = j.value("label_column", i64(-1));
  m.subject_column = j.value("subject_column", i64(-1));
  if (j.contains("forward_fill_columns")) {
    m.forward_fill_columns =
        detail::parse_columns(j.at("forward_fill_columns"), "manifest.forward_fill_columns");
  }
  m.has_header = j.value("has_header", false);
  m.skip_malformed = j.value("skip_malformed", false);
  m.sample_rate_hz = j.value("sample_rate_hz", 0.0);
  if (j.contains("class_names")) {
    for (const auto& v : j.at("class_names")) m.class_names.push_back(v.get<std::string>());
  }
  m.window_len = j.value("window_len", i64(0));
  m.step = j.value("step", i64(0));
  m.standardize = j.value("standardize", true);
  if (j.contains("split")) {
    const auto& s = j.at("split");
    detail::check_keys(s, {"train_fraction", "seed", "strategy"}, "manifest.split");
    m.split.train_fraction = s.value("train_fraction", 0.7);
    m.split.seed = s.value("seed", 1u);
    const std::string strategy = s.value("strategy", std::string("random"));
    if (strategy == "random") {
      m.split.strategy = SplitSpec::Strategy::Random;
    } else if (strategy == "by-subject") {
      m.split.strategy = SplitSpec::Strategy::BySubject;
    } else {
      throw invalid_input("manifest.split.strategy: expected 'random' or 'by-subject', got '" +
                          strategy + "'");
    }
  }
  if (j.contains("synthetic")) {
    const auto& s = j.at("synthetic");
    detail::check_keys(s, {"classes", "channels", "total_time", "seed", "noise", "segment_len"},
                       "manifest.synthetic");
    m.synth_classes = s.value("classes", 3);
    m.synth_channels = s.value("channels", 3);
    m.synth_total_time = s.value("total_time", i64(30000));
    m.synth_seed = s.value("seed", 7u);
    m.synth_noise = s.value("noise", 0.4);
    m.synth_segment_len = s.value("segment_len", i64(400));
  }

  if (m.format == "csv") {
    if (m.channel_columns.empty()) throw invalid_input("manifest.channel_columns: required for csv");
    if (m.label_column < 0) throw invalid_input("manifest.label_column: required for csv");
    if (m.class_names.empty()) throw invalid_input("manifest.class_names: required for csv");
  }
  if (m.format == "wisdm-raw" && m.class_names.empty()) {
    throw invalid_input("manifest.class_names: required for wisdm-raw");
  }
  if (m.format != "cache" && (m.window_len < 1 || m.step < 1)) {
    throw invalid_input("manifest.window_len/step: required and positive");
  }
  if (m.format == "synthetic") {
    m.class_names.clear();
    for (int y = 0; y < m.synth_classes; ++y) m.class_names.push_back("class" + std::to_string(y));
  }
  return m;
}

inline DatasetManifest load_manifest(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input("manifest " + path + ": " + e.what());
  }
  return parse_manifest(j, std::filesystem::path(path).parent_path().string());
}

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == sep) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  for (std::string& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ' || f.back() == '\t')) f.pop_back();
    std::size_t start = 0;
    while (start < f.size() && (f[start] == ' ' || f[start] == '\t')) ++start;
    f.erase(0, start);
  }
  return fields;
}

inline bool parse_float(const std::string& s, float& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') return false;
  out = static_cast<float>(v);
  return true;
}

inline int resolve_label(const std::string& field, const std::vector<std::string>& class_names,
                         i64 line_no) {
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    if (field == class_names[c]) return static_cast<int>(c);
  }
  char* end = nullptr;
  const long v = std::strtol(field.c_str(), &end, 10);
  if (end != field.c_str() && *end == '\0' && v >= 0 &&
      v < static_cast<long>(class_names.size())) {
    return static_cast<int>(v);
  }
  throw io_error("line " + std::to_string(line_no) + ": unknown label '" + field + "'");
}

}  // namespace detail

// Generic CSV adapter driven entirely by the manifest: channel columns,
// label column, optional subject column, optional forward-filled columns
// (for slow side channels such as heart rate).
inline SensorSeries load_csv(const DatasetManifest& manifest) {
  const std::string path = manifest.resolve_path(manifest.data_path);
  std::ifstream in(path);
  if (!in) throw io_error("cannot open data file: " + path);

  const std::vector<i64>& cols = manifest.channel_columns;
  const i64 ch = static_cast<i64>(cols.size());
  std::set<i64> fill_set(manifest.forward_fill_columns.begin(),
                         manifest.forward_fill_columns.end());
  std::vector<float> values;
  std::vector<int> labels;
  std::vector<int> subjects;
  std::vector<float> last_valid(static_cast<std::size_t>(ch), 0.0f);
  std::vector<bool> has_valid(static_cast<std::size_t>(ch), false);
  // rows whose fill-column cell arrived before the column's first valid value
  std::vector<std::vector<i64>> pending(static_cast<std::size_t>(ch));

  std::string line;
  i64 line_no = 0;
  bool skipped_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (manifest.has_header && !skipped_header) {
      skipped_header = true;
      continue;
    }
    if (line.empty() || line == "\r") continue;
    const std::vector<std::string> fields = detail::split_fields(line, ',');
    i64 max_col = std::max(manifest.label_column, manifest.subject_column);
    for (i64 c : cols) max_col = std::max(max_col, c);
    if (static_cast<i64>(fields.size()) <= max_col) {
      throw io_error("line " + std::to_string(line_no) + ": expected at least " +
                     std::to_string(max_col + 1) + " columns, found " +
                     std::to_string(fields.size()));
    }
    for (i64 c = 0; c < ch; ++c) {
      const std::string& field = fields[static_cast<std::size_t>(cols[static_cast<std::size_t>(c)])];
      float v;
      if (detail::parse_float(field, v) && std::isfinite(v)) {
        if (!has_valid[static_cast<std::size_t>(c)]) {
          // backfill any rows that arrived before this column's first value
          for (i64 r : pending[static_cast<std::size_t>(c)]) {
            values[static_cast<std::size_t>(r * ch + c)] = v;
          }
          pending[static_cast<std::size_t>(c)].clear();
        }
        last_valid[static_cast<std::size_t>(c)] = v;
        has_valid[static_cast<std::size_t>(c)] = true;
        values.push_back(v);
      } else if (fill_set.count(cols[static_cast<std::size_t>(c)])) {
        if (!has_valid[static_cast<std::size_t>(c)]) {
          pending[static_cast<std::size_t>(c)].push_back(static_cast<i64>(labels.size()));
        }
        values.push_back(last_valid[static_cast<std::size_t>(c)]);
      } else {
        throw io_error("line " + std::to_string(line_no) + ": non-numeric cell '" + field +
                       "' in column " + std::to_string(cols[static_cast<std::size_t>(c)]));
      }
    }
    labels.push_back(detail::resolve_label(fields[static_cast<std::size_t>(manifest.label_column)],
                                           manifest.class_names, line_no));
    if (manifest.subject_column >= 0) {
      float sv;
      if (!detail::parse_float(fields[static_cast<std::size_t>(manifest.subject_column)], sv)) {
        throw io_error("line " + std::to_string(line_no) + ": non-numeric subject id");
      }
      subjects.push_back(static_cast<int>(sv));
    }
  }
  if (labels.empty()) throw io_error(path + ": no data rows");
  const i64 rows = static_cast<i64>(labels.size());

  SensorSeries series;
  series.samples = Tensor<float>({rows, ch}, std::move(values));
  series.labels = std::move(labels);
  series.subjects = std::move(subjects);
  series.class_names = manifest.class_names;
  series.sample_rate_hz = manifest.sample_rate_hz;
  return series;
}

// Adapter for the raw accelerometer format "user,activity,timestamp,x,y,z;"
// as distributed for phone-accelerometer corpora.
inline SensorSeries load_wisdm_raw(const DatasetManifest& manifest) {
  const std::string path = manifest.resolve_path(manifest.data_path);
  std::ifstream in(path);
  if (!in) throw io_error("cannot open data file: " + path);

  std::vector<float> values;
  std::vector<int> labels;
  std::vector<int> subjects;
  std::string line;
  i64 line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    while (!line.empty() && (line.back() == ';' || line.back() == '\r' || line.back() == ' ')) {
      line.pop_back();
    }
    if (line.empty()) continue;
    const std::vector<std::string> fields = detail::split_fields(line, ',');
    if (fields.size() != 6) {
      if (manifest.skip_malformed) continue;
      throw io_error("line " + std::to_string(line_no) + ": expected 6 fields, found " +
                     std::to_string(fields.size()));
    }
    float user, x, y, z;
    if (!detail::parse_float(fields[0], user) || !detail::parse_float(fields[3], x) ||
        !detail::parse_float(fields[4], y) || !detail::parse_float(fields[5], z)) {
      if (manifest.skip_malformed) continue;
      throw io_error("line " + std::to_string(line_no) + ": non-numeric field");
    }
    labels.push_back(detail::resolve_label(fields[1], manifest.class_names, line_no));
    subjects.push_back(static_cast<int>(user));
    values.push_back(x);
    values.push_back(y);
    values.push_back(z);
  }
  if (labels.empty()) throw io_error(path + ": no data rows");
  SensorSeries series;
  series.samples = Tensor<float>({static_cast<i64>(labels.size()), 3}, std::move(values));
  series.labels = std::move(labels);
  series.subjects = std::move(subjects);
  series.class_names = manifest.class_names;
  series.sample_rate_hz = manifest.sample_rate_hz;
  return series;
}

// ---------------------------------------------------------------------------
// Binary window cache: magic "LGW1", version, JSON header, raw little-endian
// arrays. The header records a digest of the payload and of the producing
// manifest; a mismatch on either refuses the load.

inline constexpr char kCacheMagic[4] = {'L', 'G', 'W', '1'};
inline constexpr std::uint32_t kCacheVersion = 1;

inline void save_window_cache(const std::string& path, const WindowedDataset& dataset,
                              const std::string& manifest_digest) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write cache: " + path);

  std::uint64_t payload_hash = fnv1a64(dataset.windows.data(),
                                       sizeof(float) * static_cast<std::size_t>(dataset.windows.numel()));
  payload_hash = fnv1a64(dataset.labels.data(), sizeof(int) * dataset.labels.size(), payload_hash);
  payload_hash =
      fnv1a64(dataset.subjects.data(), sizeof(int) * dataset.subjects.size(), payload_hash);

  nlohmann::json header;
  header["shape"] = dataset.windows.shape();
  header["dtype"] = "f32";
  header["class_names"] = dataset.class_names;
  header["window_len"] = dataset.window_len;
  header["step"] = dataset.step;
  header["num_subjects"] = dataset.subjects.size();
  header["manifest_digest"] = manifest_digest;
  header["payload_digest"] = to_hex(payload_hash);
  const std::string header_text = header.dump();

  write_bytes(out, kCacheMagic, 4);
  write_u32(out, kCacheVersion);
  write_u64(out, header_text.size());
  write_bytes(out, header_text.data(), header_text.size());
  write_bytes(out, dataset.windows.data(), sizeof(float) * static_cast<std::size_t>(dataset.windows.numel()));
  write_bytes(out, dataset.labels.data(), sizeof(int) * dataset.labels.size());
  write_bytes(out, dataset.subjects.data(), sizeof(int) * dataset.subjects.size());
}

inline WindowedDataset load_window_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open cache: " + path);
  char magic[4];
  read_bytes(in, magic, 4, "cache magic");
  if (std::string(magic, 4) != std::string(kCacheMagic, 4)) {
    throw io_error(path + ": not a window cache (bad magic)");
  }
  const std::uint32_t version = read_u32(in, "cache version");
  if (version != kCacheVersion) {
    throw io_error(path + ": unsupported cache version " + std::to_string(version));
  }
  const std::uint64_t header_len = read_u64(in, "cache header length");
  const std::string header_text = read_string(in, header_len, "cache header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw io_error(path + ": corrupt cache header: " + e.what());
  }

  WindowedDataset dataset;
  const Shape shape = header.at("shape").get<Shape>();
  dataset.window_len = header.at("window_len").get<i64>();
  dataset.step = header.at("step").get<i64>();
  dataset.class_names = header.at("class_names").get<std::vector<std::string>>();
  const std::size_t num_subjects = header.at("num_subjects").get<std::size_t>();

  dataset.windows = Tensor<float>(shape);
  read_bytes(in, dataset.windows.data(), sizeof(float) * static_cast<std::size_t>(dataset.windows.numel()),
             "cache windows");
  dataset.labels.resize(static_cast<std::size_t>(shape[0]));
  read_bytes(in, dataset.labels.data(), sizeof(int) * dataset.labels.size(), "cache labels");
  dataset.subjects.resize(num_subjects);
  read_bytes(in, dataset.subjects.data(), sizeof(int) * dataset.subjects.size(), "cache subjects");

  std::uint64_t payload_hash = fnv1a64(dataset.windows.data(),
                                       sizeof(float) * static_cast<std::size_t>(dataset.windows.numel()));
  payload_hash = fnv1a64(dataset.labels.data(), sizeof(int) * dataset.labels.size(), payload_hash);
  payload_hash =
      fnv1a64(dataset.subjects.data(), sizeof(int) * dataset.subjects.size(), payload_hash);
  if (to_hex(payload_hash) != header.at("payload_digest").get<std::string>()) {
    throw io_error(path + ": cache payload digest mismatch; refusing to load");
  }
  return dataset;
}

// Loads and windows a dataset as described by its manifest.
inline WindowedDataset load_dataset(const DatasetManifest& manifest) {
  if (manifest.format == "cache") {
    return load_window_cache(manifest.resolve_path(manifest.data_path));
  }
  SensorSeries series;
  if (manifest.format == "csv") {
    series = load_csv(manifest);
  } else if (manifest.format == "wisdm-raw") {
    series = load_wisdm_raw(manifest);
  } else if (manifest.format == "synthetic") {
    series = generate_synthetic(manifest.synth_classes, manifest.synth_channels,
                                manifest.synth_total_time, manifest.synth_seed,
                                manifest.synth_noise, manifest.synth_segment_len);
  } else {
    throw invalid_input("manifest.format: unsupported format '" + manifest.format + "'");
  }
  return sliding_window(series, manifest.window_len, manifest.step);
}

// Full input pipeline: load, split, standardize with train statistics.
struct DataBundle {
  WindowedDataset train;
  WindowedDataset test;
  NormStats stats;
  std::vector<std::string> warnings;
};

inline DataBundle prepare_dataset(const DatasetManifest& manifest) {
  const WindowedDataset all = load_dataset(manifest);
  SplitResult parts = split(all, manifest.split);
  DataBundle bundle;
  bundle.warnings = std::move(parts.warnings);
  bundle.train = std::move(parts.train);
  bundle.test = std::move(parts.test);
  if (manifest.standardize) {
    bundle.stats = compute_norm_stats(bundle.train);
    normalize(bundle.train, bundle.stats);
    normalize(bundle.test, bundle.stats);
  } else {
    bundle.stats.mean.assign(static_cast<std::size_t>(bundle.train.channels()), 0.0f);
    bundle.stats.stddev.assign(static_cast<std::size_t>(bundle.train.channels()), 1.0f);
  }
  return bundle;
}

}  // namespace lego
