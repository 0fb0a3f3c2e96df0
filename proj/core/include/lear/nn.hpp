#pragma once

#include <string>

#include "lear/ops.hpp"
#include "lear/rng.hpp"
#include "lear/weights.hpp"

namespace lear {

// Binds ModelWeights into a Graph as differentiable leaves, one leaf per
// parameter, created on first use. After backward(), grad_of() reads the
// accumulated parameter gradients back out.
template <typename T>
class ParamBank {
 public:
  ParamBank(Graph<T>& g, const ModelWeights<T>& w, bool trainable = true)
      : graph_(g), weights_(w), trainable_(trainable) {}

  Tensor<T> operator()(const std::string& name) {
    auto it = leaves_.find(name);
    if (it != leaves_.end()) return it->second;
    const auto& p = weights_.at(name);
    Tensor<T> t = graph_.leaf(p.shape, p.values, trainable_);
    leaves_.emplace(name, t);
    return t;
  }

  // Gradients for every bound parameter; unbound parameters get zeros.
  std::map<std::string, std::vector<T>> grads() const {
    std::map<std::string, std::vector<T>> out;
    for (const auto& [name, p] : weights_.params) {
      auto it = leaves_.find(name);
      if (it != leaves_.end() && trainable_) {
        auto gspan = it->second.grad();
        out.emplace(name, std::vector<T>(gspan.begin(), gspan.end()));
      } else {
        out.emplace(name, std::vector<T>(p.values.size(), T(0)));
      }
    }
    return out;
  }

 private:
  Graph<T>& graph_;
  const ModelWeights<T>& weights_;
  bool trainable_;
  std::map<std::string, Tensor<T>> leaves_;
};

// Convolutional GRU cell weights (3x3 kernels). Gate convs take
// concat(hidden, input) and emit hidden_channels each.
template <typename T>
struct GruWeights {
  Tensor<T> w_update, b_update;     // z gate
  Tensor<T> w_reset, b_reset;       // r gate
  Tensor<T> w_candidate, b_candidate;
};

// One GRU update:
//   z = sigmoid(conv(concat(h, x), w_update))
//   r = sigmoid(conv(concat(h, x), w_reset))
//   q = tanh(conv(concat(r*h, x), w_candidate))
//   h' = (1 - z)*h + z*q
// With tanh-bounded h and q, h' stays in (-1, 1).
template <typename T>
Tensor<T> conv_gru_step(const Tensor<T>& hidden, const Tensor<T>& input,
                        const GruWeights<T>& w);

// Registers the three gate convs of a GRU under `prefix`.{update,reset,cand}.
template <typename T>
void init_gru_params(ModelWeights<T>& w, const std::string& prefix,
                     std::int64_t hidden_channels, std::int64_t input_channels, Rng& rng);

template <typename T>
GruWeights<T> bind_gru(ParamBank<T>& bank, const std::string& prefix);

// He-normal conv kernel [co, ci, k, k] plus zero bias.
template <typename T>
void init_conv_params(ModelWeights<T>& w, const std::string& prefix, std::int64_t co,
                      std::int64_t ci, std::int64_t k, Rng& rng, double gain = 1.0);

// conv2d bound from the bank: `prefix`.w and `prefix`.b.
template <typename T>
Tensor<T> bank_conv(ParamBank<T>& bank, const std::string& prefix, const Tensor<T>& x,
                    int stride, int padding);

}  // namespace lear
