#pragma once

#include "skunet/rng.hpp"
#include "skunet/tensor.hpp"
#include "skunet/volume.hpp"

namespace skunet::prep {

// Square ROI crop window, side a power of two. The box may extend past the
// image; crop() zero-pads the outside.
struct CropBox {
  int center_row = 0;
  int center_col = 0;
  int size = 0;
};

// Heart localization from across-slice intensity variance: threshold the
// per-pixel variance map at its 90th percentile and center the box on the
// centroid of the surviving pixels. Falls back to the image center when fewer
// than 10 pixels survive. Deterministic.
CropBox locate_roi(const PatientVolume& v, int size);

PatientVolume crop(const PatientVolume& v, const CropBox& box);
LabelVolume crop(const LabelVolume& v, const CropBox& box);

// Places a cropped label volume back into a frame of the original size
// (inverse of crop; outside the box everything is background).
LabelVolume uncrop(const LabelVolume& cropped, const CropBox& box, int orig_h, int orig_w);

struct ZscoreResult {
  PatientVolume volume;
  bool degenerate = false;  // constant input: output all zeros, flag set
};

// Per-volume standardization to zero mean / unit variance.
ZscoreResult zscore(const PatientVolume& v);

// Training augmentation; image [C,H,W] and label [H*W] share the same
// transform parameters. Each op fires independently with probability 0.5:
// transpose, horizontal flip, vertical flip, rotation uniform in [-15,+15]
// degrees (bilinear image / nearest label, zero fill), random crop to 87.5%
// padded back centered.
void augment(Tensor& image, std::vector<uint8_t>& label, Rng& rng);

// Channels (s-1, s, s+1) of the stack with edge replication at the ends.
Tensor stack_neighbors(const PatientVolume& v, int s);

}  // namespace skunet::prep
