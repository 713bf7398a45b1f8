#include "skunet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace skunet::metrics {

namespace {

struct Counts {
  size_t np = 0, ng = 0, ni = 0;
};

Counts overlap_counts(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("overlap metric: mask sizes differ (" +
                                std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) +
                                ")");
  }
  Counts c;
  for (size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred[i] != 0, b = gt[i] != 0;
    c.np += a;
    c.ng += b;
    c.ni += a && b;
  }
  return c;
}

}  // namespace

double dice(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  const Counts c = overlap_counts(pred, gt);
  if (c.np + c.ng == 0) return 1.0;
  return 2.0 * static_cast<double>(c.ni) / static_cast<double>(c.np + c.ng);
}

double jaccard(std::span<const uint8_t> pred, std::span<const uint8_t> gt) {
  const Counts c = overlap_counts(pred, gt);
  const size_t uni = c.np + c.ng - c.ni;
  if (uni == 0) return 1.0;
  return static_cast<double>(c.ni) / static_cast<double>(uni);
}

std::string to_string(Surface s) {
  switch (s) {
    case Surface::lv_endo: return "lv_endo";
    case Surface::lv_epi: return "lv_epi";
    case Surface::rv_endo: return "rv_endo";
  }
  return "lv_endo";
}

std::vector<std::array<double, 3>> extract_surface(const LabelVolume& lv, Surface surface) {
  auto in_region = [surface](uint8_t v) {
    switch (surface) {
      case Surface::lv_endo: return v == kLV;
      case Surface::lv_epi: return v == kLV || v == kLVM;
      case Surface::rv_endo: return v == kRV;
    }
    return false;
  };
  std::vector<std::array<double, 3>> points;
  const int s = lv.slices, h = lv.height, w = lv.width;
  for (int z = 0; z < s; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        if (!in_region(lv.at(z, y, x))) continue;
        bool boundary = false;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4 && !boundary; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) {
            boundary = true;  // image edge counts as outside
          } else if (!in_region(lv.at(z, ny, nx))) {
            boundary = true;
          }
        }
        if (boundary) {
          points.push_back({y * lv.spacing.row, x * lv.spacing.col, z * lv.spacing.slice});
        }
      }
    }
  }
  return points;
}

namespace {

// 3-D k-d tree with exact nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(const std::vector<std::array<double, 3>>& pts) : pts_(pts) {
    idx_.resize(pts.size());
    for (size_t i = 0; i < idx_.size(); ++i) idx_[i] = i;
    build(0, idx_.size(), 0);
  }

  double nearest_dist(const std::array<double, 3>& q) const {
    double best = std::numeric_limits<double>::infinity();
    search(q, 0, idx_.size(), 0, best);
    return std::sqrt(best);
  }

 private:
  void build(size_t lo, size_t hi, int axis) {
    if (hi - lo <= 1) return;
    const size_t mid = (lo + hi) / 2;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](size_t a, size_t b) { return pts_[a][axis] < pts_[b][axis]; });
    build(lo, mid, (axis + 1) % 3);
    build(mid + 1, hi, (axis + 1) % 3);
  }

  void search(const std::array<double, 3>& q, size_t lo, size_t hi, int axis, double& best) const {
    if (lo >= hi) return;
    const size_t mid = (lo + hi) / 2;
    const auto& p = pts_[idx_[mid]];
    double d2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = q[k] - p[k];
      d2 += d * d;
    }
    best = std::min(best, d2);
    const double delta = q[axis] - p[axis];
    const int next = (axis + 1) % 3;
    if (delta < 0.0) {
      search(q, lo, mid, next, best);
      if (delta * delta < best) search(q, mid + 1, hi, next, best);
    } else {
      search(q, mid + 1, hi, next, best);
      if (delta * delta < best) search(q, lo, mid, next, best);
    }
  }

  const std::vector<std::array<double, 3>>& pts_;
  std::vector<size_t> idx_;
};

void require_nonempty(const std::vector<std::array<double, 3>>& a,
                      const std::vector<std::array<double, 3>>& b, const char* op) {
  if (a.empty()) {
    throw std::invalid_argument(std::string(op) +
                                ": first point set (prediction surface) is empty");
  }
  if (b.empty()) {
    throw std::invalid_argument(std::string(op) +
                                ": second point set (ground-truth surface) is empty");
  }
}

std::vector<double> directed_distances(const std::vector<std::array<double, 3>>& from,
                                       const KdTree& to) {
  std::vector<double> d(from.size());
  for (size_t i = 0; i < from.size(); ++i) d[i] = to.nearest_dist(from[i]);
  return d;
}

double percentile95(std::vector<double> d) {
  std::sort(d.begin(), d.end());
  const size_t rank = static_cast<size_t>(std::ceil(0.95 * static_cast<double>(d.size()))) - 1;
  return d[std::min(rank, d.size() - 1)];
}

}  // namespace

double hausdorff(const std::vector<std::array<double, 3>>& a,
                 const std::vector<std::array<double, 3>>& b) {
  require_nonempty(a, b, "hausdorff");
  KdTree ta(a), tb(b);
  double m = 0.0;
  for (const auto& p : a) m = std::max(m, tb.nearest_dist(p));
  for (const auto& p : b) m = std::max(m, ta.nearest_dist(p));
  return m;
}

double assd(const std::vector<std::array<double, 3>>& a,
            const std::vector<std::array<double, 3>>& b) {
  require_nonempty(a, b, "assd");
  KdTree ta(a), tb(b);
  double s = 0.0;
  for (const auto& p : a) s += tb.nearest_dist(p);
  for (const auto& p : b) s += ta.nearest_dist(p);
  return s / static_cast<double>(a.size() + b.size());
}

double hd95(const std::vector<std::array<double, 3>>& a,
            const std::vector<std::array<double, 3>>& b) {
  require_nonempty(a, b, "hd95");
  KdTree ta(a), tb(b);
  return std::max(percentile95(directed_distances(a, tb)),
                  percentile95(directed_distances(b, ta)));
}

PatientReport evaluate(const LabelVolume& pred, const LabelVolume& gt) {
  pred.validate();
  gt.validate();
  if (pred.slices != gt.slices || pred.height != gt.height || pred.width != gt.width) {
    throw std::invalid_argument("evaluate: shape mismatch between prediction and ground truth");
  }
  auto close = [](double x, double y) { return std::fabs(x - y) < 1e-9; };
  if (!close(pred.spacing.row, gt.spacing.row) || !close(pred.spacing.col, gt.spacing.col) ||
      !close(pred.spacing.slice, gt.spacing.slice)) {
    throw std::invalid_argument("evaluate: spacing mismatch between prediction and ground truth");
  }

  PatientReport r;
  r.patient_id = gt.patient_id;

  std::vector<uint8_t> pm(pred.size()), gm(gt.size());
  for (int c = 0; c < 3; ++c) {
    const uint8_t cls = static_cast<uint8_t>(c + 1);
    for (size_t i = 0; i < pred.size(); ++i) {
      pm[i] = pred.voxels[i] == cls;
      gm[i] = gt.voxels[i] == cls;
    }
    r.dice[c] = dice(pm, gm);
    r.jaccard[c] = jaccard(pm, gm);
  }

  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (size_t si = 0; si < kSurfaces.size(); ++si) {
    const auto ps = extract_surface(pred, kSurfaces[si]);
    const auto gs = extract_surface(gt, kSurfaces[si]);
    if (ps.empty() || gs.empty()) {
      r.hausdorff_mm[si] = nan;
      r.assd_mm[si] = nan;
      r.hd95_mm[si] = nan;
      r.missing_surface = true;
      continue;
    }
    r.hausdorff_mm[si] = hausdorff(ps, gs);
    r.assd_mm[si] = assd(ps, gs);
    r.hd95_mm[si] = hd95(ps, gs);
  }
  return r;
}

namespace {

std::array<double, 15> report_row(const PatientReport& r) {
  return {r.dice[0],         r.dice[1],         r.dice[2],       r.jaccard[0],
          r.jaccard[1],      r.jaccard[2],      r.hausdorff_mm[0], r.hausdorff_mm[1],
          r.hausdorff_mm[2], r.assd_mm[0],      r.assd_mm[1],      r.assd_mm[2],
          r.hd95_mm[0],      r.hd95_mm[1],      r.hd95_mm[2]};
}

}  // namespace

Aggregate aggregate(const std::vector<PatientReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("aggregate: no reports");
  Aggregate agg;
  agg.n = static_cast<int>(reports.size());
  for (const auto& r : reports) {
    const auto row = report_row(r);
    for (size_t k = 0; k < row.size(); ++k) agg.mean[k] += row[k];
  }
  for (auto& m : agg.mean) m /= agg.n;
  if (agg.n > 1) {
    for (const auto& r : reports) {
      const auto row = report_row(r);
      for (size_t k = 0; k < row.size(); ++k) {
        const double d = row[k] - agg.mean[k];
        agg.stddev[k] += d * d;
      }
    }
    for (auto& s : agg.stddev) s = std::sqrt(s / (agg.n - 1));
  }
  return agg;
}

namespace {

const char* kClassNames[3] = {"LV", "LVM", "RV"};
const char* kSurfaceNames[3] = {"lv_endo", "lv_epi", "rv_endo"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

void write_csv(const std::filesystem::path& path, const std::vector<PatientReport>& reports,
               const Aggregate& agg) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  os << "patient_id,class_or_surface,metric,value\n";
  for (const auto& r : reports) {
    for (int c = 0; c < 3; ++c) {
      os << r.patient_id << ',' << kClassNames[c] << ",dice," << fmt(r.dice[c]) << '\n';
      os << r.patient_id << ',' << kClassNames[c] << ",jaccard," << fmt(r.jaccard[c]) << '\n';
    }
    for (int s = 0; s < 3; ++s) {
      os << r.patient_id << ',' << kSurfaceNames[s] << ",hausdorff_mm," << fmt(r.hausdorff_mm[s])
         << '\n';
      os << r.patient_id << ',' << kSurfaceNames[s] << ",assd_mm," << fmt(r.assd_mm[s]) << '\n';
    }
  }
  for (int c = 0; c < 3; ++c) {
    os << "mean," << kClassNames[c] << ",dice," << fmt(agg.mean[c]) << '\n';
    os << "mean," << kClassNames[c] << ",jaccard," << fmt(agg.mean[3 + c]) << '\n';
    os << "std," << kClassNames[c] << ",dice," << fmt(agg.stddev[c]) << '\n';
    os << "std," << kClassNames[c] << ",jaccard," << fmt(agg.stddev[3 + c]) << '\n';
  }
  for (int s = 0; s < 3; ++s) {
    os << "mean," << kSurfaceNames[s] << ",hausdorff_mm," << fmt(agg.mean[6 + s]) << '\n';
    os << "mean," << kSurfaceNames[s] << ",assd_mm," << fmt(agg.mean[9 + s]) << '\n';
    os << "std," << kSurfaceNames[s] << ",hausdorff_mm," << fmt(agg.stddev[6 + s]) << '\n';
    os << "std," << kSurfaceNames[s] << ",assd_mm," << fmt(agg.stddev[9 + s]) << '\n';
  }
}

std::string format_table(const Aggregate& agg) {
  std::ostringstream os;
  char buf[160];
  os << "                          Mean +- standard deviation (n=" << agg.n << ")\n";
  std::snprintf(buf, sizeof(buf), "%-24s %-18s %-18s %-18s\n", "", "LV blood cavity",
                "LV myocardium", "RV blood");
  os << buf;
  auto row3 = [&](const char* name, int base) {
    std::snprintf(buf, sizeof(buf), "%-24s %.3f +- %.3f    %.3f +- %.3f    %.3f +- %.3f\n", name,
                  agg.mean[base], agg.stddev[base], agg.mean[base + 1], agg.stddev[base + 1],
                  agg.mean[base + 2], agg.stddev[base + 2]);
    os << buf;
  };
  row3("Dice score", 0);
  row3("Jaccard index", 3);
  std::snprintf(buf, sizeof(buf), "%-24s %-18s %-18s %-18s\n", "", "LV endocardium",
                "LV epicardium", "RV endocardium");
  os << buf;
  auto row3mm = [&](const char* name, int base) {
    std::snprintf(buf, sizeof(buf), "%-24s %.3f +- %.3f    %.3f +- %.3f    %.3f +- %.3f\n", name,
                  agg.mean[base], agg.stddev[base], agg.mean[base + 1], agg.stddev[base + 1],
                  agg.mean[base + 2], agg.stddev[base + 2]);
    os << buf;
  };
  row3mm("Hausdorff distance (mm)", 6);
  row3mm("Surface distance (mm)", 9);
  row3mm("HD95 (mm, auxiliary)", 12);
  return os.str();
}

}  // namespace skunet::metrics
