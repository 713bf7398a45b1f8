#include "skunet/volume.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace skunet {

std::string to_string(SequenceTag tag) {
  switch (tag) {
    case SequenceTag::cine: return "cine";
    case SequenceTag::t2: return "t2";
    case SequenceTag::lge: return "lge";
    case SequenceTag::phantom: return "phantom";
  }
  return "phantom";
}

SequenceTag sequence_tag_from(const std::string& s) {
  if (s == "cine") return SequenceTag::cine;
  if (s == "t2") return SequenceTag::t2;
  if (s == "lge") return SequenceTag::lge;
  if (s == "phantom") return SequenceTag::phantom;
  throw std::invalid_argument("unknown sequence tag: " + s);
}

void PatientVolume::validate() const {
  if (slices < 1 || height < 1 || width < 1) {
    throw std::invalid_argument("PatientVolume " + patient_id + ": non-positive dimensions");
  }
  if (voxels.size() != static_cast<size_t>(slices) * height * width) {
    throw std::invalid_argument("PatientVolume " + patient_id + ": voxel count mismatch");
  }
  if (!(spacing.row > 0.0 && spacing.col > 0.0 && spacing.slice > 0.0)) {
    throw std::invalid_argument("PatientVolume " + patient_id + ": spacing must be positive");
  }
  const float lim = std::numeric_limits<float>::max();
  for (float v : voxels) {
    if (!(std::fabs(v) <= lim)) {
      throw std::invalid_argument("PatientVolume " + patient_id + ": non-finite intensity");
    }
  }
}

void LabelVolume::validate() const {
  if (slices < 1 || height < 1 || width < 1) {
    throw std::invalid_argument("LabelVolume " + patient_id + ": non-positive dimensions");
  }
  if (voxels.size() != static_cast<size_t>(slices) * height * width) {
    throw std::invalid_argument("LabelVolume " + patient_id + ": voxel count mismatch");
  }
  for (uint8_t v : voxels) {
    if (v > 3) {
      throw std::invalid_argument("LabelVolume " + patient_id + ": label value " +
                                  std::to_string(v) + " out of range {0,1,2,3}");
    }
  }
}

}  // namespace skunet
