#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "lear/error.hpp"

namespace lear {

// Channel configuration of the dual-task network. Desk-scale defaults; every
// width is configuration, not architecture.
struct ModelConfig {
  std::int64_t width = 128;   // raster extent fed to the network
  std::int64_t height = 96;
  std::int64_t feat_channels = 64;    // correlation feature width (F_D / F_EV)
  std::int64_t hidden_channels = 64;  // flow GRU hidden state
  // Edge encoder widths at resolutions (1, 1/2, 1/4, 1/8, 1/16).
  std::array<std::int64_t, 5> edge_widths{16, 32, 64, 96, 128};
  // Flow/context encoder widths at resolutions (1/2, 1/2, 1/4, 1/8, 1/8).
  std::array<std::int64_t, 5> flow_widths{32, 32, 48, 64, 64};
  int corr_levels = 4;
  int corr_radius = 4;
  std::int64_t flow_enc_channels = 16;  // embedding width of the current flow
  std::int64_t head_channels = 48;      // flow head intermediate width
  int n_train_iters = 12;
  int n_test_iters = 24;
  bool use_cff = true;
  bool use_ifr = true;

  std::int64_t corr_channels() const {
    const std::int64_t win = 2 * corr_radius + 1;
    return static_cast<std::int64_t>(corr_levels) * win * win;
  }
  std::int64_t edge4_channels() const { return edge_widths[3]; }

  void validate() const {
    if (width % 16 != 0 || height % 16 != 0)
      throw Error("config", "raster extent " + std::to_string(width) + "x" +
                                std::to_string(height) +
                                " must be divisible by 16; pad the input");
    if ((height / 8) >> (corr_levels - 1) < 1 || (width / 8) >> (corr_levels - 1) < 1)
      throw Error("config", "raster too small for " + std::to_string(corr_levels) +
                                " correlation levels");
    if (edge_widths[3] % 2 != 0)
      throw Error("config", "edge layer-4 width must be even (context/hidden split)");
    if (flow_widths[4] != feat_channels)
      throw Error("config", "flow encoder output width must equal feat_channels");
    if (n_train_iters < 1 || n_test_iters < 1)
      throw Error("config", "iteration counts must be >= 1");
  }
};

}  // namespace lear
