#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skunet/volume.hpp"

namespace skunet::phantom {

// Deterministic synthetic short-axis cardiac phantom: LV disk inside an LVM
// annulus, RV crescent (difference of two offset disks) hugging the
// epicardium, all shrinking linearly toward the apex. Three contrast variants
// share the geometry; the LGE-style variant adds myocardial lesions at
// blood-pool intensity. Dimensioned defaults are in pixels at image size 96
// and scale linearly with the configured size.
struct PhantomSpec {
  int image_size = 96;
  int min_slices = 6;
  int max_slices = 12;
  double lv_radius_min = 8.0;
  double lv_radius_max = 11.0;
  double lvm_thickness_min = 6.0;
  double lvm_thickness_max = 8.0;
  double rv_radius_frac_min = 0.75;  // of the epicardial radius
  double rv_radius_frac_max = 0.90;
  double rv_offset_frac_min = 1.15;  // center distance, of the epicardial radius
  double rv_offset_frac_max = 1.35;
  double center_jitter = 4.0;
  double apex_scale = 0.55;  // in-plane scale of the last slice
  int lesion_count_min = 1;
  int lesion_count_max = 3;
  double lesion_radius_min = 2.0;
  double lesion_radius_max = 4.0;
  double noise_sigma = 0.03;
  double bias_amplitude = 0.2;
  uint64_t seed = 0;
};

// per-class base intensities for each sequence-style variant
struct IntensityProfile {
  double air, torso, lv, lvm, rv;
};
inline constexpr IntensityProfile kCineIntensity = {0.05, 0.25, 0.85, 0.45, 0.85};
inline constexpr IntensityProfile kT2Intensity = {0.05, 0.20, 0.55, 0.70, 0.55};
inline constexpr IntensityProfile kLgeIntensity = {0.05, 0.22, 0.85, 0.25, 0.85};

struct Lesion {
  double angle;          // polar position at the annulus midline
  double radius;         // px at base scale
  double intensity_mul;  // lesion = lv blood pool intensity * this (within 10%)
  int slice_lo, slice_hi;
};

struct Geometry {
  double center_row, center_col;
  double lv_radius;
  double lvm_thickness;
  double rv_radius;      // px
  double rv_offset;      // center distance, px
  double rv_angle;       // direction of the RV center from the LV center
  int slices;
  std::vector<double> slice_scale;
  std::vector<Lesion> lesions;
  Spacing spacing;
};

struct PhantomPatient {
  PatientVolume cine, t2, lge;
  LabelVolume labels;
  Geometry geom;
};

// Throws after 100 rejected geometry draws (infeasible spec bounds).
PhantomPatient generate_patient(const PhantomSpec& spec, const std::string& patient_id);

// Writes out_dir/{train,val}/<pid>_<variant>_{img.tnsr,lbl.tnsr,meta.txt}
// plus out_dir/manifest.csv (patient_id,variant,split; one row per patient).
// Refuses a non-empty out_dir unless overwrite is set.
void generate_dataset(int n_train, int n_val, uint64_t seed,
                      const std::filesystem::path& out_dir, int image_size, bool overwrite);

inline constexpr const char* kVariantNames[3] = {"cine", "t2", "lge"};

}  // namespace skunet::phantom
