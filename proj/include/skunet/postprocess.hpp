#pragma once

#include <cstdint>
#include <vector>

#include "skunet/volume.hpp"

namespace skunet::post {

// Fills background regions not 4-connected to the image border through
// background. Foreground is never removed. In-place on a [H,W] binary mask.
void fill_holes_2d(std::vector<uint8_t>& mask, int h, int w);

struct Components {
  std::vector<int32_t> label;   // 0 = background, components numbered from 1
  std::vector<size_t> sizes;    // sizes[i] = voxel count of component i+1
  int count = 0;
};

// Union-find labeling over a binary volume [S,H,W]; connectivity 6 or 26.
Components connected_components(const std::vector<uint8_t>& bin, int s, int h, int w,
                                int connectivity);

// 2-D variant over [H,W]; connectivity 4 or 8.
Components connected_components_2d(const std::vector<uint8_t>& bin, int h, int w,
                                   int connectivity);

struct LccResult {
  LabelVolume volume;
  bool empty_warning = false;  // no foreground anywhere: input returned unchanged
};

// Keeps only the largest 26-connected 3-D component of the foreground union
// (classes 1|2|3) across the whole patient volume, then fills 2-D holes per
// slice. Filled pixels become LV when the hole is enclosed by LV/LVM only,
// otherwise they take the majority label of their 4-neighborhood. Idempotent.
LccResult largest_cc_constraint(const LabelVolume& lv);

}  // namespace skunet::post
