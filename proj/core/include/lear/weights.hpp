#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lear/tensor.hpp"

namespace lear {

// Named trainable parameters. Keys iterate in lexicographic order, which
// fixes the checkpoint record order and the optimizer update order.
template <typename T>
struct ModelWeights {
  struct Param {
    Shape shape;
    std::vector<T> values;
  };
  std::map<std::string, Param> params;
  std::uint32_t format_version = 1;

  bool has(const std::string& name) const { return params.count(name) != 0; }

  Param& at(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw Error("weights", "unknown parameter: " + name);
    return it->second;
  }
  const Param& at(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw Error("weights", "unknown parameter: " + name);
    return it->second;
  }

  void add(const std::string& name, const Shape& shape, std::vector<T> values) {
    if (params.count(name)) throw Error("weights", "duplicate parameter: " + name);
    if (static_cast<std::int64_t>(values.size()) != shape.numel())
      throw Error("weights", "value count mismatch for parameter " + name);
    params.emplace(name, Param{shape, std::move(values)});
  }

  std::int64_t total_values() const {
    std::int64_t n = 0;
    for (const auto& [k, p] : params) n += p.shape.numel();
    return n;
  }
};

// Checkpoint file: magic "LEARCKPT", u32 format version, then one record per
// parameter in key order: u32 name length, UTF-8 name bytes, u32 rank,
// rank x u64 extents, raw little-endian f32 values. Values are stored as f32
// regardless of the in-memory precision.
template <typename T>
void save_checkpoint(const ModelWeights<T>& w, const std::string& path);
template <typename T>
ModelWeights<T> load_checkpoint(const std::string& path);

// Per-parameter Adam moments.
template <typename T>
struct AdamState {
  std::int64_t step = 0;  // number of completed updates
  std::map<std::string, std::vector<T>> m;
  std::map<std::string, std::vector<T>> v;
};

// One Adam update with decoupled weight decay (beta1 0.9, beta2 0.999,
// eps 1e-8). `grads` must contain an entry for every parameter.
template <typename T>
void adam_step(ModelWeights<T>& w, const std::map<std::string, std::vector<T>>& grads,
               AdamState<T>& state, T lr, T weight_decay);

// Single-cycle schedule: linear warm-up from peak/25 to peak over the first
// 30% of total steps, then cosine decay back down to peak/25.
double one_cycle_lr(std::int64_t step, std::int64_t total_steps, double peak_lr);

}  // namespace lear
