#include "skunet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace skunet::prep {

CropBox locate_roi(const PatientVolume& v, int size) {
  v.validate();
  // even so the pooling pyramid divides it; the network checks 2^depth
  if (size < 2 || size % 2 != 0) {
    throw std::invalid_argument("locate_roi: crop size must be a positive even number, got " +
                                std::to_string(size));
  }
  const int h = v.height, w = v.width, s = v.slices;
  const size_t hw = static_cast<size_t>(h) * w;

  // per-pixel intensity variance across the slice stack
  std::vector<double> var(hw, 0.0);
  for (size_t p = 0; p < hw; ++p) {
    double mean = 0.0;
    for (int k = 0; k < s; ++k) mean += v.voxels[k * hw + p];
    mean /= s;
    double acc = 0.0;
    for (int k = 0; k < s; ++k) {
      const double d = v.voxels[k * hw + p] - mean;
      acc += d * d;
    }
    var[p] = acc / s;
  }

  std::vector<double> sorted = var;
  std::sort(sorted.begin(), sorted.end());
  const double threshold = sorted[static_cast<size_t>(0.9 * static_cast<double>(hw - 1))];

  double cy = 0.0, cx = 0.0;
  size_t count = 0;
  for (size_t p = 0; p < hw; ++p) {
    if (var[p] > threshold) {
      cy += static_cast<double>(p / w);
      cx += static_cast<double>(p % w);
      ++count;
    }
  }
  if (count < 10) return CropBox{h / 2, w / 2, size};
  return CropBox{static_cast<int>(std::llround(cy / count)),
                 static_cast<int>(std::llround(cx / count)), size};
}

PatientVolume crop(const PatientVolume& v, const CropBox& box) {
  const int r0 = box.center_row - box.size / 2;
  const int c0 = box.center_col - box.size / 2;
  PatientVolume out;
  out.slices = v.slices;
  out.height = box.size;
  out.width = box.size;
  out.voxels.assign(static_cast<size_t>(v.slices) * box.size * box.size, 0.0f);
  out.spacing = v.spacing;
  out.patient_id = v.patient_id;
  out.tag = v.tag;
  for (int s = 0; s < v.slices; ++s) {
    for (int y = 0; y < box.size; ++y) {
      const int sy = r0 + y;
      if (sy < 0 || sy >= v.height) continue;
      for (int x = 0; x < box.size; ++x) {
        const int sx = c0 + x;
        if (sx < 0 || sx >= v.width) continue;
        out.at(s, y, x) = v.at(s, sy, sx);
      }
    }
  }
  return out;
}

LabelVolume crop(const LabelVolume& v, const CropBox& box) {
  const int r0 = box.center_row - box.size / 2;
  const int c0 = box.center_col - box.size / 2;
  LabelVolume out;
  out.slices = v.slices;
  out.height = box.size;
  out.width = box.size;
  out.voxels.assign(static_cast<size_t>(v.slices) * box.size * box.size, 0);
  out.spacing = v.spacing;
  out.patient_id = v.patient_id;
  for (int s = 0; s < v.slices; ++s) {
    for (int y = 0; y < box.size; ++y) {
      const int sy = r0 + y;
      if (sy < 0 || sy >= v.height) continue;
      for (int x = 0; x < box.size; ++x) {
        const int sx = c0 + x;
        if (sx < 0 || sx >= v.width) continue;
        out.at(s, y, x) = v.at(s, sy, sx);
      }
    }
  }
  return out;
}

LabelVolume uncrop(const LabelVolume& cropped, const CropBox& box, int orig_h, int orig_w) {
  const int r0 = box.center_row - box.size / 2;
  const int c0 = box.center_col - box.size / 2;
  LabelVolume out;
  out.slices = cropped.slices;
  out.height = orig_h;
  out.width = orig_w;
  out.voxels.assign(static_cast<size_t>(cropped.slices) * orig_h * orig_w, 0);
  out.spacing = cropped.spacing;
  out.patient_id = cropped.patient_id;
  for (int s = 0; s < cropped.slices; ++s) {
    for (int y = 0; y < cropped.height; ++y) {
      const int dy = r0 + y;
      if (dy < 0 || dy >= orig_h) continue;
      for (int x = 0; x < cropped.width; ++x) {
        const int dx = c0 + x;
        if (dx < 0 || dx >= orig_w) continue;
        out.at(s, dy, dx) = cropped.at(s, y, x);
      }
    }
  }
  return out;
}

ZscoreResult zscore(const PatientVolume& v) {
  v.validate();
  ZscoreResult r;
  r.volume = v;
  const auto [mn, mx] = std::minmax_element(v.voxels.begin(), v.voxels.end());
  if (*mn == *mx) {
    std::fill(r.volume.voxels.begin(), r.volume.voxels.end(), 0.0f);
    r.degenerate = true;
    return r;
  }
  double mean = 0.0;
  for (float x : v.voxels) mean += x;
  mean /= static_cast<double>(v.voxels.size());
  double var = 0.0;
  for (float x : v.voxels) {
    const double d = x - mean;
    var += d * d;
  }
  var /= static_cast<double>(v.voxels.size());
  const double inv = 1.0 / std::sqrt(var);
  for (auto& x : r.volume.voxels) x = static_cast<float>((x - mean) * inv);
  return r;
}

namespace {

struct Frame {
  std::vector<scalar> img;  // [C,H,W]
  std::vector<uint8_t> lbl;
  int c, h, w;
  scalar& at(int ch, int y, int x) { return img[(static_cast<size_t>(ch) * h + y) * w + x]; }
  scalar atc(int ch, int y, int x) const { return img[(static_cast<size_t>(ch) * h + y) * w + x]; }
};

Frame transpose(const Frame& f) {
  Frame o{std::vector<scalar>(f.img.size()), std::vector<uint8_t>(f.lbl.size()), f.c, f.w, f.h};
  for (int ch = 0; ch < f.c; ++ch)
    for (int y = 0; y < f.h; ++y)
      for (int x = 0; x < f.w; ++x) o.at(ch, x, y) = f.atc(ch, y, x);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x) o.lbl[static_cast<size_t>(x) * f.h + y] = f.lbl[static_cast<size_t>(y) * f.w + x];
  return o;
}

Frame flip(const Frame& f, bool horizontal) {
  Frame o = f;
  for (int ch = 0; ch < f.c; ++ch)
    for (int y = 0; y < f.h; ++y)
      for (int x = 0; x < f.w; ++x)
        o.at(ch, y, x) = horizontal ? f.atc(ch, y, f.w - 1 - x) : f.atc(ch, f.h - 1 - y, x);
  for (int y = 0; y < f.h; ++y)
    for (int x = 0; x < f.w; ++x)
      o.lbl[static_cast<size_t>(y) * f.w + x] =
          horizontal ? f.lbl[static_cast<size_t>(y) * f.w + (f.w - 1 - x)]
                     : f.lbl[static_cast<size_t>(f.h - 1 - y) * f.w + x];
  return o;
}

// bilinear for intensities, nearest for labels, zero fill outside
Frame rotate(const Frame& f, double degrees) {
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double ca = std::cos(rad), sa = std::sin(rad);
  const double cy = 0.5 * (f.h - 1), cx = 0.5 * (f.w - 1);
  Frame o{std::vector<scalar>(f.img.size(), scalar(0)), std::vector<uint8_t>(f.lbl.size(), 0),
          f.c, f.h, f.w};
  for (int y = 0; y < f.h; ++y) {
    for (int x = 0; x < f.w; ++x) {
      // inverse rotation of the output coordinate
      const double dy = y - cy, dx = x - cx;
      const double sy = ca * dy + sa * dx + cy;
      const double sx = -sa * dy + ca * dx + cx;
      const int y0 = static_cast<int>(std::floor(sy));
      const int x0 = static_cast<int>(std::floor(sx));
      const double fy = sy - y0, fx = sx - x0;
      for (int ch = 0; ch < f.c; ++ch) {
        double acc = 0.0;
        for (int oy = 0; oy < 2; ++oy) {
          for (int ox = 0; ox < 2; ++ox) {
            const int yy = y0 + oy, xx = x0 + ox;
            if (yy < 0 || yy >= f.h || xx < 0 || xx >= f.w) continue;
            const double wgt = (oy ? fy : 1.0 - fy) * (ox ? fx : 1.0 - fx);
            acc += wgt * f.atc(ch, yy, xx);
          }
        }
        o.at(ch, y, x) = static_cast<scalar>(acc);
      }
      const int ny = static_cast<int>(std::lround(sy));
      const int nx = static_cast<int>(std::lround(sx));
      if (ny >= 0 && ny < f.h && nx >= 0 && nx < f.w) {
        o.lbl[static_cast<size_t>(y) * f.w + x] = f.lbl[static_cast<size_t>(ny) * f.w + nx];
      }
    }
  }
  return o;
}

// crop a random window of ~87.5% side length, pad back centered with zeros
Frame crop_pad(const Frame& f, int off_y, int off_x, int cs_h, int cs_w) {
  Frame o{std::vector<scalar>(f.img.size(), scalar(0)), std::vector<uint8_t>(f.lbl.size(), 0),
          f.c, f.h, f.w};
  const int my = (f.h - cs_h) / 2, mx = (f.w - cs_w) / 2;
  for (int y = 0; y < cs_h; ++y) {
    for (int x = 0; x < cs_w; ++x) {
      for (int ch = 0; ch < f.c; ++ch) o.at(ch, my + y, mx + x) = f.atc(ch, off_y + y, off_x + x);
      o.lbl[static_cast<size_t>(my + y) * f.w + (mx + x)] =
          f.lbl[static_cast<size_t>(off_y + y) * f.w + (off_x + x)];
    }
  }
  return o;
}

}  // namespace

void augment(Tensor& image, std::vector<uint8_t>& label, Rng& rng) {
  if (image.ndim() != 3) {
    throw std::invalid_argument("augment: image must be [C,H,W], got " +
                                Tensor::shape_str(image.shape()));
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (label.size() != static_cast<size_t>(h) * w) {
    throw std::invalid_argument("augment: label size does not match image spatial dims");
  }
  Frame f{image.values(), label, c, h, w};
  if (rng.coin()) f = transpose(f);
  if (rng.coin()) f = flip(f, /*horizontal=*/true);
  if (rng.coin()) f = flip(f, /*horizontal=*/false);
  if (rng.coin()) f = rotate(f, rng.uniform(-15.0, 15.0));
  if (rng.coin()) {
    const int cs_h = static_cast<int>(std::lround(0.875 * f.h));
    const int cs_w = static_cast<int>(std::lround(0.875 * f.w));
    const int off_y = static_cast<int>(rng.uniform_int(0, f.h - cs_h));
    const int off_x = static_cast<int>(rng.uniform_int(0, f.w - cs_w));
    f = crop_pad(f, off_y, off_x, cs_h, cs_w);
  }
  image = Tensor::from_data({f.c, f.h, f.w}, std::move(f.img));
  label = std::move(f.lbl);
}

Tensor stack_neighbors(const PatientVolume& v, int s) {
  if (s < 0 || s >= v.slices) {
    throw std::invalid_argument("stack_neighbors: slice index " + std::to_string(s) +
                                " out of range [0," + std::to_string(v.slices) + ")");
  }
  const size_t hw = static_cast<size_t>(v.height) * v.width;
  std::vector<scalar> data(3 * hw);
  const int idx[3] = {std::max(0, s - 1), s, std::min(v.slices - 1, s + 1)};
  for (int ch = 0; ch < 3; ++ch) {
    const float* src = v.voxels.data() + static_cast<size_t>(idx[ch]) * hw;
    scalar* dst = data.data() + static_cast<size_t>(ch) * hw;
    for (size_t i = 0; i < hw; ++i) dst[i] = static_cast<scalar>(src[i]);
  }
  return Tensor::from_data({3, v.height, v.width}, std::move(data));
}

}  // namespace skunet::prep
