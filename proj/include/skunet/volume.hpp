#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace skunet {

enum class SequenceTag { cine, t2, lge, phantom };

std::string to_string(SequenceTag tag);
SequenceTag sequence_tag_from(const std::string& s);

struct Spacing {
  double row = 1.0;    // mm between rows
  double col = 1.0;    // mm between columns
  double slice = 1.0;  // mm between slices
};

// Ordered slice stack of intensities. voxels are row-major [S,H,W].
struct PatientVolume {
  int slices = 0;
  int height = 0;
  int width = 0;
  std::vector<float> voxels;
  Spacing spacing;
  std::string patient_id;
  SequenceTag tag = SequenceTag::phantom;

  size_t size() const { return voxels.size(); }
  float& at(int s, int y, int x) {
    return voxels[(static_cast<size_t>(s) * height + y) * width + x];
  }
  float at(int s, int y, int x) const {
    return voxels[(static_cast<size_t>(s) * height + y) * width + x];
  }
  // throws on inconsistent dims, non-positive spacing, or non-finite values
  void validate() const;
};

// Per-voxel class map over {0=background, 1=LV, 2=LVM, 3=RV}.
struct LabelVolume {
  int slices = 0;
  int height = 0;
  int width = 0;
  std::vector<uint8_t> voxels;
  Spacing spacing;
  std::string patient_id;

  size_t size() const { return voxels.size(); }
  uint8_t& at(int s, int y, int x) {
    return voxels[(static_cast<size_t>(s) * height + y) * width + x];
  }
  uint8_t at(int s, int y, int x) const {
    return voxels[(static_cast<size_t>(s) * height + y) * width + x];
  }
  void validate() const;  // throws on inconsistent dims or labels > 3
};

inline constexpr uint8_t kBackground = 0;
inline constexpr uint8_t kLV = 1;
inline constexpr uint8_t kLVM = 2;
inline constexpr uint8_t kRV = 3;
inline constexpr int kNumClasses = 4;

}  // namespace skunet
