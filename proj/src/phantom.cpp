#include "skunet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "skunet/io.hpp"
#include "skunet/rng.hpp"

namespace skunet::phantom {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Draw {
  double cy, cx;
  double r_lv, t_lvm, r_epi;
  double r_rv, d_rv, a_rv;
  int slices;
};

Draw draw_geometry(const PhantomSpec& spec, Rng& rng) {
  const double scale = spec.image_size / 96.0;
  Draw d;
  d.slices = static_cast<int>(rng.uniform_int(spec.min_slices, spec.max_slices));
  d.cy = spec.image_size / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * scale;
  d.cx = spec.image_size / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter) * scale;
  d.r_lv = rng.uniform(spec.lv_radius_min, spec.lv_radius_max) * scale;
  d.t_lvm = rng.uniform(spec.lvm_thickness_min, spec.lvm_thickness_max) * scale;
  d.r_epi = d.r_lv + d.t_lvm;
  d.r_rv = rng.uniform(spec.rv_radius_frac_min, spec.rv_radius_frac_max) * d.r_epi;
  d.d_rv = rng.uniform(spec.rv_offset_frac_min, spec.rv_offset_frac_max) * d.r_epi;
  d.a_rv = kPi + rng.uniform(-0.3, 0.3);  // RV sits left of the LV
  return d;
}

bool feasible(const Draw& d, int size) {
  // crescent nonempty and the epicardial disk not swallowed
  if (d.d_rv + d.r_epi <= d.r_rv) return false;
  if (d.d_rv >= d.r_rv + d.r_epi) return false;
  // everything inside the image with a 1 px margin
  const double ext = std::max(d.r_epi, d.d_rv + d.r_rv);
  return d.cy - ext >= 1.0 && d.cy + ext <= size - 2.0 && d.cx - ext >= 1.0 &&
         d.cx + ext <= size - 2.0;
}

// 3x3 binomial blur, reflecting at the border
void blur3(std::vector<float>& img, int h, int w) {
  std::vector<float> tmp(img.size());
  auto clampi = [](int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      static const double k[3] = {0.25, 0.5, 0.25};
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          acc += k[dy + 1] * k[dx + 1] *
                 img[static_cast<size_t>(clampi(y + dy, 0, h - 1)) * w + clampi(x + dx, 0, w - 1)];
        }
      }
      tmp[static_cast<size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
  img = std::move(tmp);
}

PatientVolume render_variant(const PhantomSpec& spec, const Geometry& g,
                             const LabelVolume& labels, const IntensityProfile& prof,
                             SequenceTag tag, const std::string& patient_id, uint64_t seed) {
  const int size = spec.image_size;
  const int s = g.slices;
  const size_t hw = static_cast<size_t>(size) * size;
  Rng rng(seed);

  // smooth multiplicative bias: one low-frequency bump per acquisition
  const double by = rng.uniform(0.2, 0.8) * size;
  const double bx = rng.uniform(0.2, 0.8) * size;
  const double bsigma = rng.uniform(0.5, 0.8) * size;

  PatientVolume v;
  v.slices = s;
  v.height = size;
  v.width = size;
  v.voxels.assign(static_cast<size_t>(s) * hw, 0.0f);
  v.spacing = g.spacing;
  v.patient_id = patient_id;
  v.tag = tag;

  const double torso_ry = 0.42 * size, torso_rx = 0.46 * size;
  for (int z = 0; z < s; ++z) {
    std::vector<float> img(hw);
    const double sc = g.slice_scale[z];
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const uint8_t lbl = labels.at(z, y, x);
        double val;
        if (lbl == kLV) {
          val = prof.lv;
        } else if (lbl == kLVM) {
          val = prof.lvm;
        } else if (lbl == kRV) {
          val = prof.rv;
        } else {
          const double ty = (y - size / 2.0) / torso_ry;
          const double tx = (x - size / 2.0) / torso_rx;
          val = (ty * ty + tx * tx <= 1.0) ? prof.torso : prof.air;
        }
        img[static_cast<size_t>(y) * size + x] = static_cast<float>(val);
      }
    }
    if (tag == SequenceTag::lge) {
      // bright lesions inside the myocardium at blood-pool intensity
      for (const auto& les : g.lesions) {
        if (z < les.slice_lo || z > les.slice_hi) continue;
        const double mid = (g.lv_radius + 0.5 * g.lvm_thickness) * sc;
        const double ly = g.center_row + mid * std::sin(les.angle);
        const double lx = g.center_col + mid * std::cos(les.angle);
        const double lr = les.radius * sc;
        const double intensity = prof.lv * les.intensity_mul;
        const int y0 = std::max(0, static_cast<int>(ly - lr - 1));
        const int y1 = std::min(size - 1, static_cast<int>(ly + lr + 1));
        const int x0 = std::max(0, static_cast<int>(lx - lr - 1));
        const int x1 = std::min(size - 1, static_cast<int>(lx + lr + 1));
        for (int y = y0; y <= y1; ++y) {
          for (int x = x0; x <= x1; ++x) {
            if (labels.at(z, y, x) != kLVM) continue;  // lesions live in the LVM only
            const double dy = y - ly, dx = x - lx;
            if (dy * dy + dx * dx <= lr * lr) {
              img[static_cast<size_t>(y) * size + x] = static_cast<float>(intensity);
            }
          }
        }
      }
    }
    blur3(img, size, size);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dy = y - by, dx = x - bx;
        const double bump = std::exp(-(dy * dy + dx * dx) / (2.0 * bsigma * bsigma));
        const double field = 1.0 + spec.bias_amplitude * (bump - 0.5);
        double val = img[static_cast<size_t>(y) * size + x] * field;
        val += rng.normal() * spec.noise_sigma;
        v.at(z, y, x) = static_cast<float>(std::max(0.0, val));
      }
    }
  }
  return v;
}

}  // namespace

PhantomPatient generate_patient(const PhantomSpec& spec, const std::string& patient_id) {
  if (spec.min_slices < 1 || spec.max_slices < spec.min_slices) {
    throw std::invalid_argument("PhantomSpec: bad slice bounds");
  }
  Rng rng(spec.seed);

  Draw d{};
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    d = draw_geometry(spec, rng);
    ok = feasible(d, spec.image_size);
  }
  if (!ok) {
    throw std::runtime_error("generate_patient: no feasible geometry after 100 draws for " +
                             patient_id);
  }

  Geometry g;
  g.center_row = d.cy;
  g.center_col = d.cx;
  g.lv_radius = d.r_lv;
  g.lvm_thickness = d.t_lvm;
  g.rv_radius = d.r_rv;
  g.rv_offset = d.d_rv;
  g.rv_angle = d.a_rv;
  g.slices = d.slices;
  g.slice_scale.resize(static_cast<size_t>(d.slices));
  for (int z = 0; z < d.slices; ++z) {
    g.slice_scale[z] =
        d.slices == 1 ? 1.0
                      : 1.0 - (1.0 - spec.apex_scale) * static_cast<double>(z) / (d.slices - 1);
  }
  const double scale = spec.image_size / 96.0;
  g.spacing.row = g.spacing.col = rng.uniform(1.2, 1.6) / scale;
  g.spacing.slice = rng.uniform(5.0, 8.0);

  const int n_lesions = static_cast<int>(rng.uniform_int(spec.lesion_count_min, spec.lesion_count_max));
  for (int i = 0; i < n_lesions; ++i) {
    Lesion les;
    les.angle = rng.uniform(0.0, 2.0 * kPi);
    les.radius = rng.uniform(spec.lesion_radius_min, spec.lesion_radius_max) * scale;
    les.intensity_mul = rng.uniform(0.95, 1.05);  // within 10% of the blood pool
    les.slice_lo = static_cast<int>(rng.uniform_int(0, std::max(0, d.slices - 2)));
    les.slice_hi = static_cast<int>(rng.uniform_int(les.slice_lo, d.slices - 1));
    g.lesions.push_back(les);
  }

  // labels from the analytic geometry
  const int size = spec.image_size;
  LabelVolume labels;
  labels.slices = d.slices;
  labels.height = size;
  labels.width = size;
  labels.voxels.assign(static_cast<size_t>(d.slices) * size * size, 0);
  labels.spacing = g.spacing;
  labels.patient_id = patient_id;
  for (int z = 0; z < d.slices; ++z) {
    const double sc = g.slice_scale[z];
    const double r_lv = d.r_lv * sc;
    const double r_epi = d.r_epi * sc;
    const double rv_cy = d.cy + d.d_rv * sc * std::sin(d.a_rv);
    const double rv_cx = d.cx + d.d_rv * sc * std::cos(d.a_rv);
    const double r_rv = d.r_rv * sc;
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double dy = y - d.cy, dx = x - d.cx;
        const double dist2 = dy * dy + dx * dx;
        uint8_t lbl = kBackground;
        if (dist2 <= r_lv * r_lv) {
          lbl = kLV;
        } else if (dist2 <= r_epi * r_epi) {
          lbl = kLVM;
        } else {
          const double ry = y - rv_cy, rx = x - rv_cx;
          // crescent: inside the RV disk, outside the epicardial disk
          if (ry * ry + rx * rx <= r_rv * r_rv) lbl = kRV;
        }
        labels.at(z, y, x) = lbl;
      }
    }
  }

  PhantomPatient p;
  p.geom = g;
  p.labels = std::move(labels);
  p.cine = render_variant(spec, g, p.labels, kCineIntensity, SequenceTag::cine, patient_id,
                          derive_seed(spec.seed, "cine"));
  p.t2 = render_variant(spec, g, p.labels, kT2Intensity, SequenceTag::t2, patient_id,
                        derive_seed(spec.seed, "t2"));
  p.lge = render_variant(spec, g, p.labels, kLgeIntensity, SequenceTag::lge, patient_id,
                         derive_seed(spec.seed, "lge"));
  return p;
}

void generate_dataset(int n_train, int n_val, uint64_t seed, const fs::path& out_dir,
                      int image_size, bool overwrite) {
  if (n_train < 1 || n_val < 1) {
    throw std::invalid_argument("generate_dataset: n_train and n_val must be >= 1");
  }
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!overwrite) {
      throw std::runtime_error("generate_dataset: output directory " + out_dir.string() +
                               " is not empty (pass the overwrite flag to replace it)");
    }
    fs::remove_all(out_dir);
  }
  fs::create_directories(out_dir / "train");
  fs::create_directories(out_dir / "val");

  std::ofstream manifest(out_dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + out_dir.string());
  manifest << "patient_id,variant,split\n";

  const int total = n_train + n_val;
  for (int i = 0; i < total; ++i) {
    char pid[16];
    std::snprintf(pid, sizeof(pid), "p%03d", i);
    const bool is_train = i < n_train;
    const char* split = is_train ? "train" : "val";

    PhantomSpec spec;
    spec.image_size = image_size;
    spec.seed = derive_seed(seed, static_cast<uint64_t>(i));
    PhantomPatient pat = generate_patient(spec, pid);

    const fs::path dir = out_dir / split;
    const PatientVolume* vols[3] = {&pat.cine, &pat.t2, &pat.lge};
    for (int v = 0; v < 3; ++v) {
      LabelVolume lbl = pat.labels;  // one label volume per variant file pair
      io::write_patient(dir, std::string(pid) + "_" + kVariantNames[v], *vols[v], lbl);
    }
    manifest << pid << ",cine;t2;lge," << split << "\n";
  }
}

}  // namespace skunet::phantom
