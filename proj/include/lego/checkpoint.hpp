#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "lego/config.hpp"
#include "lego/model.hpp"
#include "lego/serialize.hpp"

namespace lego {

inline constexpr char kCheckpointMagic[5] = {'L', 'E', 'G', 'O', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Digest over the binarized masks of every lego block, in block order.
// Entries hash as single bytes so the digest is precision-independent.
template <class T>
std::string mask_digest(Model<T>& model) {
  std::uint64_t h = 14695981039346656037ull;
  for (auto& block : model.blocks()) {
    if (auto* lego_block = dynamic_cast<LegoBlock<T>*>(block.get())) {
      const Tensor<T>& mask = lego_block->layer().mask;
      for (i64 i = 0; i < mask.numel(); ++i) {
        const unsigned char bit = mask[i] != T(0) ? 1 : 0;
        h = fnv1a64(&bit, 1, h);
      }
    }
  }
  return to_hex(h);
}

// Checkpoint layout: magic, version, u64 header length, JSON header, then
// the raw little-endian tensors in header table order (trainable parameters
// first, persistent buffers after).
template <class T>
void checkpoint_save(Model<T>& model, const ModelConfig& config, const nlohmann::json& meta,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint: " + path);

  nlohmann::json header;
  header["config"] = nlohmann::json::parse(config.source_text);
  header["window_len"] = model.window_len();
  header["width"] = model.width();
  header["num_classes"] = model.num_classes();
  header["masks_digest"] = mask_digest(model);
  header["meta"] = meta;
  header["dtype"] = sizeof(T) == 4 ? "f32" : "f64";

  nlohmann::json table = nlohmann::json::array();
  std::vector<ParamRef<T>> params = model.params();
  std::vector<BufferRef<T>> buffers = model.buffers();
  for (const ParamRef<T>& p : params) {
    table.push_back({{"name", p.name}, {"shape", p.value->shape()}, {"kind", "param"}});
  }
  for (const BufferRef<T>& b : buffers) {
    table.push_back({{"name", b.name}, {"length", b.data->size()}, {"kind", "buffer"}});
  }
  header["tensors"] = table;
  const std::string header_text = header.dump();

  write_bytes(out, kCheckpointMagic, 5);
  write_u32(out, kCheckpointVersion);
  write_u64(out, header_text.size());
  write_bytes(out, header_text.data(), header_text.size());
  for (const ParamRef<T>& p : params) {
    write_bytes(out, p.value->data(), sizeof(T) * static_cast<std::size_t>(p.value->numel()));
  }
  for (const BufferRef<T>& b : buffers) {
    write_bytes(out, b.data->data(), sizeof(T) * b.data->size());
  }
}

template <class T>
struct LoadedCheckpoint {
  Model<T> model;
  ModelConfig config;
  nlohmann::json meta;
};

template <class T>
LoadedCheckpoint<T> checkpoint_load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint: " + path);
  char magic[5];
  read_bytes(in, magic, 5, "checkpoint magic");
  if (std::string(magic, 5) != std::string(kCheckpointMagic, 5)) {
    throw io_error(path + ": not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = read_u32(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw io_error(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint64_t header_len = read_u64(in, "checkpoint header length");
  const std::string header_text = read_string(in, header_len, "checkpoint header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw io_error(path + ": corrupt checkpoint header: " + e.what());
  }
  const std::string expected_dtype = sizeof(T) == 4 ? "f32" : "f64";
  if (header.value("dtype", "f32") != expected_dtype) {
    throw io_error(path + ": checkpoint dtype " + header.value("dtype", "?") +
                   " does not match requested " + expected_dtype);
  }

  LoadedCheckpoint<T> loaded;
  loaded.config = parse_config(header.at("config"), "");
  loaded.meta = header.value("meta", nlohmann::json::object());
  loaded.model = Model<T>(loaded.config.layers, header.at("window_len").get<i64>(),
                          header.at("width").get<i64>(), header.at("num_classes").get<i64>(),
                          loaded.config.seed);

  std::map<std::string, Tensor<T>*> param_map;
  for (ParamRef<T> p : loaded.model.params()) param_map[p.name] = p.value;
  std::map<std::string, std::vector<T>*> buffer_map;
  for (BufferRef<T> b : loaded.model.buffers()) buffer_map[b.name] = b.data;

  for (const auto& entry : header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const std::string kind = entry.at("kind").get<std::string>();
    if (kind == "param") {
      auto it = param_map.find(name);
      if (it == param_map.end()) throw io_error(path + ": unknown parameter '" + name + "'");
      const Shape shape = entry.at("shape").get<Shape>();
      if (shape != it->second->shape()) {
        throw io_error(path + ": parameter '" + name + "' has shape " + shape_str(shape) +
                       ", model expects " + shape_str(it->second->shape()));
      }
      read_bytes(in, it->second->data(), sizeof(T) * static_cast<std::size_t>(it->second->numel()),
                 "tensor " + name);
    } else {
      auto it = buffer_map.find(name);
      if (it == buffer_map.end()) throw io_error(path + ": unknown buffer '" + name + "'");
      const std::size_t length = entry.at("length").get<std::size_t>();
      if (length != it->second->size()) {
        throw io_error(path + ": buffer '" + name + "' has length " + std::to_string(length) +
                       ", model expects " + std::to_string(it->second->size()));
      }
      read_bytes(in, it->second->data(), sizeof(T) * length, "buffer " + name);
    }
  }

  // Masks are structure, not weights: recompute them from the proxies and
  // refuse the checkpoint if they do not match what was saved.
  for (auto& block : loaded.model.blocks()) {
    if (auto* lego_block = dynamic_cast<LegoBlock<T>*>(block.get())) {
      refresh_mask(lego_block->layer());
    }
  }
  const std::string digest = mask_digest(loaded.model);
  const std::string stored = header.value("masks_digest", "");
  if (digest != stored) {
    throw io_error(path + ": lego mask digest mismatch (stored " + stored + ", recomputed " +
                   digest + "); refusing to load");
  }
  return loaded;
}

}  // namespace lego
