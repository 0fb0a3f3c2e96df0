#include "lear/nn.hpp"

#include <cmath>

namespace lear {

template <typename T>
Tensor<T> conv_gru_step(const Tensor<T>& hidden, const Tensor<T>& input,
                        const GruWeights<T>& w) {
  const Shape sh = hidden.shape(), si = input.shape();
  if (sh.h() != si.h() || sh.w() != si.w() || sh.n() != si.n()) {
    throw Error("shape", "conv_gru_step: hidden " + sh.str() +
                             " and input " + si.str() + " disagree spatially");
  }
  auto hx = concat_c<T>({hidden, input});
  auto z = sigmoid(conv2d(hx, w.w_update, w.b_update, 1, 1));
  auto r = sigmoid(conv2d(hx, w.w_reset, w.b_reset, 1, 1));
  auto rhx = concat_c<T>({mul(r, hidden), input});
  auto q = tanh(conv2d(rhx, w.w_candidate, w.b_candidate, 1, 1));
  // h' = (1-z)*h + z*q
  return add(mul(rsub_scalar(T(1), z), hidden), mul(z, q));
}

template <typename T>
void init_conv_params(ModelWeights<T>& w, const std::string& prefix, std::int64_t co,
                      std::int64_t ci, std::int64_t k, Rng& rng, double gain) {
  const Shape ks = Shape::bchw(co, ci, k, k);
  const double fan_in = static_cast<double>(ci * k * k);
  const double stddev = gain * std::sqrt(2.0 / fan_in);
  std::vector<T> kv(static_cast<std::size_t>(ks.numel()));
  for (auto& v : kv) v = static_cast<T>(stddev * rng.normal());
  w.add(prefix + ".w", ks, std::move(kv));
  w.add(prefix + ".b", Shape{co}, std::vector<T>(static_cast<std::size_t>(co), T(0)));
}

template <typename T>
void init_gru_params(ModelWeights<T>& w, const std::string& prefix,
                     std::int64_t hidden_channels, std::int64_t input_channels, Rng& rng) {
  const std::int64_t ci = hidden_channels + input_channels;
  init_conv_params(w, prefix + ".update", hidden_channels, ci, 3, rng);
  init_conv_params(w, prefix + ".reset", hidden_channels, ci, 3, rng);
  init_conv_params(w, prefix + ".cand", hidden_channels, ci, 3, rng);
}

template <typename T>
GruWeights<T> bind_gru(ParamBank<T>& bank, const std::string& prefix) {
  GruWeights<T> g;
  g.w_update = bank(prefix + ".update.w");
  g.b_update = bank(prefix + ".update.b");
  g.w_reset = bank(prefix + ".reset.w");
  g.b_reset = bank(prefix + ".reset.b");
  g.w_candidate = bank(prefix + ".cand.w");
  g.b_candidate = bank(prefix + ".cand.b");
  return g;
}

template <typename T>
Tensor<T> bank_conv(ParamBank<T>& bank, const std::string& prefix, const Tensor<T>& x,
                    int stride, int padding) {
  return conv2d(x, bank(prefix + ".w"), bank(prefix + ".b"), stride, padding);
}

#define LEAR_INSTANTIATE_NN(T)                                                        \
  template Tensor<T> conv_gru_step(const Tensor<T>&, const Tensor<T>&,                \
                                   const GruWeights<T>&);                             \
  template void init_conv_params(ModelWeights<T>&, const std::string&, std::int64_t,  \
                                 std::int64_t, std::int64_t, Rng&, double);           \
  template void init_gru_params(ModelWeights<T>&, const std::string&, std::int64_t,   \
                                std::int64_t, Rng&);                                  \
  template GruWeights<T> bind_gru(ParamBank<T>&, const std::string&);                 \
  template Tensor<T> bank_conv(ParamBank<T>&, const std::string&, const Tensor<T>&,   \
                               int, int);

LEAR_INSTANTIATE_NN(float)
LEAR_INSTANTIATE_NN(double)

}  // namespace lear
