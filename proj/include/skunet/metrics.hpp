#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "skunet/volume.hpp"

namespace skunet::metrics {

// Overlap ratios on binary masks. Both-empty pairs score 1.0; exactly one
// empty scores 0.0.
double dice(std::span<const uint8_t> pred, std::span<const uint8_t> gt);
double jaccard(std::span<const uint8_t> pred, std::span<const uint8_t> gt);

enum class Surface { lv_endo, lv_epi, rv_endo };

inline constexpr std::array<Surface, 3> kSurfaces = {Surface::lv_endo, Surface::lv_epi,
                                                     Surface::rv_endo};
std::string to_string(Surface s);

// Boundary voxels in millimetres. lv_endo: boundary of class 1; lv_epi:
// boundary of class 1|2; rv_endo: boundary of class 3. A voxel is boundary
// when it has at least one in-slice 4-neighbor outside the region (the image
// edge counts as outside). Point = (row*mm, col*mm, slice*mm).
std::vector<std::array<double, 3>> extract_surface(const LabelVolume& lv, Surface surface);

// Symmetric Hausdorff / average symmetric surface distance between point
// sets, exact nearest neighbors via a k-d tree. Both sets must be nonempty.
double hausdorff(const std::vector<std::array<double, 3>>& a,
                 const std::vector<std::array<double, 3>>& b);
double assd(const std::vector<std::array<double, 3>>& a,
            const std::vector<std::array<double, 3>>& b);
// 95th-percentile Hausdorff (max over both directed percentiles); auxiliary.
double hd95(const std::vector<std::array<double, 3>>& a,
            const std::vector<std::array<double, 3>>& b);

struct PatientReport {
  std::string patient_id;
  // index 0=LV, 1=LVM, 2=RV
  std::array<double, 3> dice{};
  std::array<double, 3> jaccard{};
  // index 0=lv_endo, 1=lv_epi, 2=rv_endo; NaN when either surface is empty
  std::array<double, 3> hausdorff_mm{};
  std::array<double, 3> assd_mm{};
  std::array<double, 3> hd95_mm{};
  bool missing_surface = false;
};

PatientReport evaluate(const LabelVolume& pred, const LabelVolume& gt);

struct Aggregate {
  int n = 0;
  // column order: dice LV/LVM/RV, jaccard LV/LVM/RV, hausdorff x3, assd x3, hd95 x3
  std::array<double, 15> mean{};
  std::array<double, 15> stddev{};  // sample standard deviation (n-1)
};

Aggregate aggregate(const std::vector<PatientReport>& reports);

// CSV rows: patient_id,class_or_surface,metric,value — 12 metric rows per
// patient plus aggregate mean/std rows.
void write_csv(const std::filesystem::path& path, const std::vector<PatientReport>& reports,
               const Aggregate& agg);
std::string format_table(const Aggregate& agg);

}  // namespace skunet::metrics
