#include "lear/flow_net.hpp"

namespace lear {
namespace {

// Resolution ladder (1/2, 1/2, 1/4, 1/8, 1/8): layers 0, 2, 3 downsample.
constexpr int kLayerStride[5] = {2, 1, 2, 2, 1};

}  // namespace

template <typename T>
Tensor<T> flow_encoder_layer(ParamBank<T>& bank, const std::string& prefix, int layer,
                             const Tensor<T>& x, bool final_linear) {
  auto y = bank_conv(bank, prefix + ".enc" + std::to_string(layer + 1), x,
                     kLayerStride[layer], 1);
  if (final_linear && layer == 4) return y;
  return relu(y);
}

template <typename T>
FeatureEncoding<T> encode_features(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                                   const Tensor<T>& event_img, const ModelConfig& cfg) {
  cfg.validate();
  const Shape s = depth_norm.shape();
  if (s.h() % 8 != 0 || s.w() % 8 != 0)
    throw Error("shape", "encode_features: extent " + s.str() +
                             " not divisible by 8; pad the input");
  FeatureEncoding<T> out;
  Tensor<T> x = depth_norm;
  for (int i = 0; i < 5; ++i) {
    x = flow_encoder_layer(bank, "flow", i, x);
    out.depth_layers[i] = x;
  }
  Tensor<T> e = event_img;
  for (int i = 0; i < 5; ++i) e = flow_encoder_layer(bank, "event", i, e);
  out.f_ev = e;
  return out;
}

template <typename T>
ContextEncoding<T> encode_context(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                                  const ModelConfig& cfg) {
  Tensor<T> x = depth_norm;
  for (int i = 0; i < 5; ++i)
    x = flow_encoder_layer(bank, "ctx", i, x, /*final_linear=*/true);
  const std::int64_t ch = cfg.hidden_channels;
  ContextEncoding<T> out;
  out.h0 = tanh(slice_c(x, 0, ch));
  out.f_ctx = relu(slice_c(x, ch, 2 * ch));
  return out;
}

template <typename T>
CorrPyramid<T> build_corr_pyramid(const Tensor<T>& f_d, const Tensor<T>& f_ev,
                                  int levels) {
  if (levels < 1) throw Error("shape", "build_corr_pyramid: need >= 1 level");
  CorrPyramid<T> pyr;
  pyr.grid_h = f_d.shape().h();
  pyr.grid_w = f_d.shape().w();
  pyr.levels.push_back(corr_allpairs(f_d, f_ev));
  for (int l = 1; l < levels; ++l)
    pyr.levels.push_back(avg_pool2(pyr.levels.back()));
  return pyr;
}

template <typename T>
Tensor<T> lookup_corr(const CorrPyramid<T>& pyr, const Tensor<T>& flow, int radius) {
  if (flow.shape().h() != pyr.grid_h || flow.shape().w() != pyr.grid_w)
    throw Error("shape", "lookup_corr: flow grid " + flow.shape().str() +
                             " does not match the pyramid grid");
  std::vector<Tensor<T>> per_level;
  for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
    per_level.push_back(
        corr_lookup(pyr.levels[l], flow, radius, static_cast<int>(l)));
  }
  return concat_c<T>(per_level);
}

template <typename T>
Tensor<T> flow_loss(const Tensor<T>& f_pred, const Tensor<T>& f_gt,
                    const Tensor<T>& mask) {
  if (f_pred.shape() != f_gt.shape())
    throw Error("shape", "flow_loss: prediction " + f_pred.shape().str() + " vs " +
                             f_gt.shape().str());
  const Shape s = f_pred.shape();
  if (mask.shape().n() != s.n() || mask.shape().h() != s.h() ||
      mask.shape().w() != s.w() || mask.shape().c() != 1)
    throw Error("shape", "flow_loss: mask " + mask.shape().str() + " incompatible");
  Graph<T>& g = *f_pred.graph();
  // Fold the per-image 1/(valid count + eps) normalization and the batch mean
  // into one constant weight map.
  const Shape ms = mask.shape();
  const std::int64_t b_n = ms.n(), hw = ms.h() * ms.w();
  const auto mv = mask.values();
  std::vector<T> weights(mv.size());
  for (std::int64_t b = 0; b < b_n; ++b) {
    double count = 0;
    for (std::int64_t i = 0; i < hw; ++i)
      count += static_cast<double>(mv[static_cast<std::size_t>(b * hw + i)]);
    const double norm = 1.0 / ((count + 1e-8) * static_cast<double>(b_n));
    for (std::int64_t i = 0; i < hw; ++i) {
      const std::size_t at = static_cast<std::size_t>(b * hw + i);
      weights[at] = static_cast<T>(static_cast<double>(mv[at]) * norm);
    }
  }
  auto diff = sub(f_pred, f_gt);
  auto norm_px = sqrt0(sum_c(mul(diff, diff)));  // [B,1,H,W]
  return sum_all(mul(norm_px, g.constant(ms, std::move(weights))));
}

template <typename T>
void init_flow_params(ModelWeights<T>& w, const ModelConfig& cfg, Rng& rng) {
  for (const std::string prefix : {"flow", "event", "ctx"}) {
    std::int64_t ci = 1;
    for (int i = 0; i < 5; ++i) {
      std::int64_t co = cfg.flow_widths[i];
      if (prefix == "ctx" && i == 4) co = 2 * cfg.hidden_channels;
      init_conv_params(w, prefix + ".enc" + std::to_string(i + 1), co, ci, 3, rng);
      ci = co;
    }
  }
}

#define LEAR_INSTANTIATE_FLOWNET(T)                                                     \
  template Tensor<T> flow_encoder_layer(ParamBank<T>&, const std::string&, int,         \
                                        const Tensor<T>&, bool);                        \
  template FeatureEncoding<T> encode_features(ParamBank<T>&, const Tensor<T>&,          \
                                              const Tensor<T>&, const ModelConfig&);    \
  template ContextEncoding<T> encode_context(ParamBank<T>&, const Tensor<T>&,           \
                                             const ModelConfig&);                       \
  template CorrPyramid<T> build_corr_pyramid(const Tensor<T>&, const Tensor<T>&, int);  \
  template Tensor<T> lookup_corr(const CorrPyramid<T>&, const Tensor<T>&, int);         \
  template Tensor<T> flow_loss(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);   \
  template void init_flow_params(ModelWeights<T>&, const ModelConfig&, Rng&);

LEAR_INSTANTIATE_FLOWNET(float)
LEAR_INSTANTIATE_FLOWNET(double)

}  // namespace lear
