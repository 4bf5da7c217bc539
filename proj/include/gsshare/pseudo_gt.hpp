#pragma once

#include "gsshare/core.hpp"

namespace gsshare {

// Hole-filled virtual-map render used as supervision at an extrapolated pose.
struct PseudoGT {
  CameraPose pose;
  Image image;       // H x W x 3
  Image depth;       // H x W
  Image confidence;  // H x W in [0,1]
  Image opacity;     // H x W, virtual-map opacity before hole filling
};

// Mean over pixels of (channel-mean |render - pseudo.image|) * confidence.
double virtual_loss(const Image& global_render, const PseudoGT& pseudo);

}  // namespace gsshare
