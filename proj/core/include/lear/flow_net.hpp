#pragma once

#include <array>
#include <vector>

#include "lear/net_config.hpp"
#include "lear/nn.hpp"

namespace lear {

// RAFT-style correspondence machinery: feature/context encoders over depth
// and event rasters, the all-pairs correlation pyramid, flow-conditioned
// window lookup, and the masked flow loss.

// Multi-level all-pairs similarity. levels[0] holds
// <F_D(i,j), F_EV(k,m)>/sqrt(C) exactly; each deeper level is the 2x2 average
// pool of the previous one over the target axes.
template <typename T>
struct CorrPyramid {
  std::vector<Tensor<T>> levels;  // each [B*H8*W8, 1, Hl, Wl]
  std::int64_t grid_h = 0, grid_w = 0;
};

// One feature-encoder layer under `prefix` ("flow", "event" or "ctx").
// Strides follow the (1/2, 1/2, 1/4, 1/8, 1/8) resolution ladder; the final
// context layer is linear (the split applies tanh/ReLU afterwards).
template <typename T>
Tensor<T> flow_encoder_layer(ParamBank<T>& bank, const std::string& prefix, int layer,
                             const Tensor<T>& x, bool final_linear = false);

// Depth feature pyramid (five maps) and the single-scale event feature F_EV.
template <typename T>
struct FeatureEncoding {
  std::array<Tensor<T>, 5> depth_layers;  // F_D pyramid; layers[4] feeds correlation
  Tensor<T> f_ev;                         // event features at 1/8
};
template <typename T>
FeatureEncoding<T> encode_features(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                                   const Tensor<T>& event_img, const ModelConfig& cfg);

// Context encoder: 2*hidden channels at 1/8, split into tanh(h0) and
// ReLU(F_ctx).
template <typename T>
struct ContextEncoding {
  Tensor<T> h0;
  Tensor<T> f_ctx;
};
template <typename T>
ContextEncoding<T> encode_context(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                                  const ModelConfig& cfg);

template <typename T>
CorrPyramid<T> build_corr_pyramid(const Tensor<T>& f_d, const Tensor<T>& f_ev,
                                  int levels);

// Concatenated window lookup over all levels; output channel count is
// levels * (2*radius+1)^2.
template <typename T>
Tensor<T> lookup_corr(const CorrPyramid<T>& pyr, const Tensor<T>& flow, int radius);

// Masked mean-L2 flow loss at full resolution:
//   sum_px mask * ||f - f_gt||_2 / (sum_px mask + 1e-8),
// computed per image and averaged over the batch. The mask rides in as an
// explicit [B,1,H,W] validity tensor.
template <typename T>
Tensor<T> flow_loss(const Tensor<T>& f_pred, const Tensor<T>& f_gt, const Tensor<T>& mask);

// Registers flow/event/context encoder parameters.
template <typename T>
void init_flow_params(ModelWeights<T>& w, const ModelConfig& cfg, Rng& rng);

}  // namespace lear
