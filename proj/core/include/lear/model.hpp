#pragma once

#include <vector>

#include "lear/edge_net.hpp"
#include "lear/flow_net.hpp"
#include "lear/synthetic.hpp"

namespace lear {

// Cross-task feature fusion at one encoder layer (layers 2..4, 1-based):
// concat(edge, depth) -> two separate 1x1 convolutions restoring each
// branch's channel count. Linear by construction so an identity bypass
// exists in weight space.
template <typename T>
struct CffOutputs {
  Tensor<T> edge;
  Tensor<T> depth;
};
template <typename T>
CffOutputs<T> cff_fuse(ParamBank<T>& bank, int layer, const Tensor<T>& f_ed,
                       const Tensor<T>& f_d);

// Per-iteration recurrent state. The edge feature F_ED^n is carried as
// (c_ed, h_ed); concat(c_ed, h_ed) restores it. c_ed stays fixed across
// iterations.
template <typename T>
struct IfrState {
  Tensor<T> flow;    // [B,2,H/8,W/8]
  Tensor<T> hidden;  // flow GRU state
  Tensor<T> f_ctx;
  Tensor<T> c_ed;
  Tensor<T> h_ed;
  Tensor<T> f_ev;
  int iteration = 0;
};

// One mutual refinement step:
//  1. window lookup of the correlation pyramid at the current flow,
//  2. 1x1 fusion with F_ED restoring the correlation channel count,
//  3. GRU update from (fused correlation, encoded flow, context) and an
//     additive flow-head increment,
//  4. warp of the event features by the new flow and a GRU update of the
//     edge hidden state.
// Steps 2 and 4 are skipped when cfg.use_ifr is off.
template <typename T>
IfrState<T> ifr_step(ParamBank<T>& bank, const IfrState<T>& state,
                     const CorrPyramid<T>& pyr, const ModelConfig& cfg);

template <typename T>
struct ForwardOutputs {
  std::vector<Tensor<T>> flows_full;  // N entries, [B,2,H,W], full resolution
  std::vector<Tensor<T>> flows_grid;  // same flows at 1/8 (diagnostics/tests)
  std::vector<Tensor<T>> edges;       // N per-iteration edge maps (empty without IFR)
  EdgeForward<T> hed;                 // side outputs + fused map
  Tensor<T> f_d, f_ev;                // correlation features (tests)
};

// Full pass: interleaved encoders (CFF at the middle three layers when
// enabled), correlation pyramid, then n_iters refinement steps. Inputs must
// be [B,1,H,W] with depth already normalized to [0,1].
template <typename T>
ForwardOutputs<T> model_forward(ParamBank<T>& bank, const Tensor<T>& depth_norm,
                                const Tensor<T>& event_img, const ModelConfig& cfg,
                                int n_iters);

// Joint objective:
//   alpha * sum_n gamma^(N-n) flow_loss(f^n)
//   + beta * (1/N) * sum_n edge_loss(p^n)
//   + mean edge_loss over the HED fused and side outputs.
template <typename T>
Tensor<T> total_loss(const ForwardOutputs<T>& out, const Tensor<T>& f_gt,
                     const Tensor<T>& mask, const Tensor<T>& edge_gt, double alpha,
                     double beta, double gamma);

// Fresh parameter set for the configuration (all branches, fused or not).
template <typename T>
ModelWeights<T> init_model_weights(const ModelConfig& cfg, std::uint64_t seed);

// The checkpoint stores the channel configuration as a reserved "meta.config"
// record so evaluation can reject mismatched weights.
template <typename T>
void embed_config(ModelWeights<T>& w, const ModelConfig& cfg);
template <typename T>
ModelConfig extract_config(const ModelWeights<T>& w);
// Throws with the differing field names when the checkpoint config does not
// match `expected`.
template <typename T>
void check_config_match(const ModelWeights<T>& w, const ModelConfig& expected);

// Batch assembly: stacks samples into network inputs plus constant
// supervision tensors. Depth is normalized per image by its max; with
// oracle_mask the raw depth is multiplied by the ground-truth edge map first.
template <typename T>
struct ModelInputs {
  Tensor<T> depth_norm;  // [B,1,H,W]
  Tensor<T> event;       // [B,1,H,W]
  Tensor<T> f_gt;        // [B,2,H,W] constant
  Tensor<T> mask;        // [B,1,H,W] constant validity
  Tensor<T> edge_gt;     // [B,1,H,W] constant binary
};
template <typename T>
ModelInputs<T> make_inputs(Graph<T>& g, const std::vector<const Sample*>& batch,
                           bool oracle_mask,
                           const std::vector<const Image*>* depth_masks = nullptr);

}  // namespace lear
