#pragma once

#include <iosfwd>
#include <map>

#include "tdl/config.hpp"
#include "tdl/model.hpp"

// On-disk formats. Tensors use the TDL1 container: magic `TDL1`, u32
// little-endian rank, rank u32 extents, then row-major 32-bit little-endian
// floats. Checkpoints use the TDLC container: magic `TDLC`, u32 version,
// length-prefixed UTF-8 run-config text, the parameter manifest
// (u32 count, then per entry a length-prefixed name and a TDL1 block), the
// optimizer-state manifest in the same layout, u32 global step and u64 RNG state.
// The embedded config makes a checkpoint self-contained: loading rebuilds
// the model without any side files. All file writes are atomic
// (write-temp-then-rename).

namespace tdl {

struct Tdl1Data {
  Shape shape;
  std::vector<float> data;
};

void write_tdl1(std::ostream& os, const Shape& shape, const float* data);
Tdl1Data read_tdl1(std::istream& is);

void save_tdl1_file(const std::string& path, const Shape& shape, const float* data);
Tdl1Data load_tdl1_file(const std::string& path);

void atomic_write_file(const std::string& path, const std::string& bytes);
std::string read_file_bytes(const std::string& path);

struct CheckpointRaw {
  std::string config_text;
  std::vector<std::pair<std::string, Tdl1Data>> params;
  std::vector<std::pair<std::string, Tdl1Data>> opt_state;
  uint32_t step = 0;
  uint64_t rng_state = 0;
};

std::string encode_checkpoint(const CheckpointRaw& raw);
CheckpointRaw decode_checkpoint(const std::string& bytes);
void save_checkpoint_raw(const std::string& path, const CheckpointRaw& raw);
CheckpointRaw load_checkpoint_raw(const std::string& path);

template <typename T>
void save_checkpoint(const std::string& path, const RunConfig& run,
                     const ParamList<T>& params, const ParamList<T>& opt_state,
                     uint32_t step, uint64_t rng_state) {
  CheckpointRaw raw;
  raw.config_text = run.to_text();
  auto pack = [](const ParamList<T>& list) {
    std::vector<std::pair<std::string, Tdl1Data>> out;
    out.reserve(list.size());
    for (const auto& p : list) {
      Tdl1Data t;
      t.shape = p.tensor.shape();
      t.data.reserve(static_cast<size_t>(p.tensor.numel()));
      for (T v : p.tensor.data()) t.data.push_back(static_cast<float>(v));
      out.emplace_back(p.name, std::move(t));
    }
    return out;
  };
  raw.params = pack(params);
  raw.opt_state = pack(opt_state);
  raw.step = step;
  raw.rng_state = rng_state;
  save_checkpoint_raw(path, raw);
}

template <typename T>
struct LoadedCheckpoint {
  RunConfig run;
  Model<T> model;
  std::map<std::string, std::vector<T>> opt_state;
  uint32_t step = 0;
  uint64_t rng_state = 0;
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  const CheckpointRaw raw = load_checkpoint_raw(path);
  LoadedCheckpoint<T> out;
  out.run = parse_run_config_text(raw.config_text);
  out.model = Model<T>::build(out.run.model);
  std::map<std::string, std::vector<T>> values;
  for (const auto& [name, t] : raw.params) {
    if (values.count(name))
      throw IoError(strcat_msg("checkpoint: duplicate parameter '", name, "'"));
    std::vector<T> v(t.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(t.data[i]);
    values.emplace(name, std::move(v));
  }
  out.model.load_param_data(values);
  for (const auto& [name, t] : raw.opt_state) {
    std::vector<T> v(t.data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(t.data[i]);
    out.opt_state.emplace(name, std::move(v));
  }
  out.step = raw.step;
  out.rng_state = raw.rng_state;
  return out;
}

}  // namespace tdl
