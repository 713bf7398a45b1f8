#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "skunet/phantom.hpp"
#include "skunet/preprocess.hpp"
#include "skunet/rng.hpp"

using namespace skunet;
using namespace skunet::prep;

namespace {

PatientVolume make_volume(int s, int h, int w, float fill = 0.0f) {
  PatientVolume v;
  v.slices = s;
  v.height = h;
  v.width = w;
  v.voxels.assign(static_cast<size_t>(s) * h * w, fill);
  v.spacing = {1.0, 1.0, 8.0};
  v.patient_id = "test";
  return v;
}

}  // namespace

TEST_CASE("locate_roi finds the phantom heart center") {
  phantom::PhantomSpec spec;
  spec.seed = 21;
  auto pat = phantom::generate_patient(spec, "roi");
  const CropBox box = locate_roi(pat.lge, 64);
  CHECK(std::abs(box.center_row - pat.geom.center_row) <= 8.0);
  CHECK(std::abs(box.center_col - pat.geom.center_col) <= 8.0);

  // constructed case: roll the volume so the heart sits at (40, 60)
  const int dy = 40 - static_cast<int>(std::lround(pat.geom.center_row));
  const int dx = 60 - static_cast<int>(std::lround(pat.geom.center_col));
  PatientVolume shifted = make_volume(pat.lge.slices, 96, 96);
  for (int s = 0; s < pat.lge.slices; ++s)
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) {
        const int sy = y - dy, sx = x - dx;
        if (sy >= 0 && sy < 96 && sx >= 0 && sx < 96) shifted.at(s, y, x) = pat.lge.at(s, sy, sx);
      }
  const CropBox shifted_box = locate_roi(shifted, 64);
  CHECK(std::abs(shifted_box.center_row - 40) <= 8);
  CHECK(std::abs(shifted_box.center_col - 60) <= 8);
}

TEST_CASE("locate_roi falls back to the image center on constant volumes") {
  PatientVolume v = make_volume(4, 32, 48, 1.5f);
  const CropBox box = locate_roi(v, 16);
  CHECK(box.center_row == 16);
  CHECK(box.center_col == 24);
  CHECK(box.size == 16);
  CHECK_THROWS_AS(locate_roi(v, 15), std::invalid_argument);
}

TEST_CASE("locate_roi is translation-equivariant within a pixel") {
  phantom::PhantomSpec spec;
  spec.seed = 22;
  auto pat = phantom::generate_patient(spec, "shift");
  const CropBox base = locate_roi(pat.cine, 64);

  PatientVolume shifted = make_volume(pat.cine.slices, 96, 96);
  for (int s = 0; s < pat.cine.slices; ++s)
    for (int y = 5; y < 96; ++y)
      for (int x = 5; x < 96; ++x) shifted.at(s, y, x) = pat.cine.at(s, y - 5, x - 5);
  const CropBox moved = locate_roi(shifted, 64);
  CHECK(std::abs(moved.center_row - (base.center_row + 5)) <= 1);
  CHECK(std::abs(moved.center_col - (base.center_col + 5)) <= 1);
}

TEST_CASE("crop identity, zero padding, and round-trip") {
  Rng rng(1);
  PatientVolume v = make_volume(3, 32, 32);
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform(0.0, 1.0));

  // full-image box
  PatientVolume same = crop(v, CropBox{16, 16, 32});
  CHECK(same.voxels == v.voxels);

  // box half outside: the outside region is exactly zero
  PatientVolume half = crop(v, CropBox{0, 16, 32});
  for (int s = 0; s < 3; ++s)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 32; ++x) CHECK(half.at(s, y, x) == 0.0f);
  for (int s = 0; s < 3; ++s)
    for (int y = 16; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(half.at(s, y, x) == v.at(s, y - 16, x));

  // crop then uncrop restores interior pixels exactly
  LabelVolume lbl;
  lbl.slices = 3;
  lbl.height = 32;
  lbl.width = 32;
  lbl.voxels.assign(3 * 32 * 32, 0);
  for (int s = 0; s < 3; ++s)
    for (int y = 10; y < 20; ++y)
      for (int x = 12; x < 22; ++x) lbl.at(s, y, x) = 2;
  lbl.spacing = v.spacing;
  const CropBox box{14, 14, 16};
  LabelVolume back = uncrop(crop(lbl, box), box, 32, 32);
  for (int s = 0; s < 3; ++s)
    for (int y = 14 - 8; y < 14 + 8; ++y)
      for (int x = 14 - 8; x < 14 + 8; ++x) CHECK(back.at(s, y, x) == lbl.at(s, y, x));
}

TEST_CASE("zscore normalizes, is affine-invariant and idempotent") {
  Rng rng(2);
  PatientVolume v = make_volume(4, 24, 24);
  for (auto& x : v.voxels) x = static_cast<float>(rng.uniform(10.0, 60.0));

  auto z = zscore(v);
  CHECK_FALSE(z.degenerate);
  double mean = 0.0, var = 0.0;
  for (float x : z.volume.voxels) mean += x;
  mean /= static_cast<double>(z.volume.voxels.size());
  for (float x : z.volume.voxels) var += (x - mean) * (x - mean);
  var /= static_cast<double>(z.volume.voxels.size());
  CHECK(std::fabs(mean) < 1e-5);
  CHECK(std::fabs(var - 1.0) < 1e-4);

  // zscore(a*v + b) == zscore(v)
  PatientVolume affine = v;
  for (auto& x : affine.voxels) x = 2.5f * x + 7.0f;
  auto za = zscore(affine);
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    CHECK(std::fabs(za.volume.voxels[i] - z.volume.voxels[i]) < 1e-5);
  }

  // idempotence up to tolerance
  auto zz = zscore(z.volume);
  for (size_t i = 0; i < v.voxels.size(); ++i) {
    CHECK(std::fabs(zz.volume.voxels[i] - z.volume.voxels[i]) < 1e-4);
  }

  // constant volume degenerates to zeros with the warning flag
  auto zc = zscore(make_volume(2, 8, 8, 3.0f));
  CHECK(zc.degenerate);
  for (float x : zc.volume.voxels) CHECK(x == 0.0f);
}

TEST_CASE("augment is reproducible and keeps labels in range") {
  Rng rng(3);
  Tensor img = Tensor::zeros({3, 16, 16});
  std::vector<uint8_t> lbl(16 * 16, 0);
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<scalar>(rng.uniform(0.0, 1.0));
  for (int y = 5; y < 11; ++y)
    for (int x = 5; x < 11; ++x) lbl[static_cast<size_t>(y) * 16 + x] = static_cast<uint8_t>(1 + (y + x) % 3);

  auto run = [&](uint64_t seed) {
    Tensor i2 = img.clone();
    std::vector<uint8_t> l2 = lbl;
    Rng r(seed);
    for (int rep = 0; rep < 4; ++rep) augment(i2, l2, r);
    return std::pair{i2, l2};
  };
  auto [ia, la] = run(42);
  auto [ib, lb] = run(42);
  CHECK(la == lb);
  REQUIRE(ia.size() == ib.size());
  for (size_t i = 0; i < ia.size(); ++i) CHECK(ia[i] == ib[i]);

  auto [ic, lc] = run(43);
  bool any_diff = lc != la;
  for (size_t i = 0; i < ia.size() && !any_diff; ++i) any_diff = ia[i] != ic[i];
  CHECK(any_diff);

  // label values stay inside the original set
  std::set<uint8_t> before(lbl.begin(), lbl.end());
  for (uint8_t v : la) CHECK(before.count(v) == 1);
}

TEST_CASE("double horizontal flip through augment is the identity") {
  // find a seed whose first five coin flips fire exactly the horizontal flip
  // (op order: transpose, hflip, vflip, rotate, crop)
  uint64_t seed = 0;
  bool found = false;
  for (; seed < 4096 && !found; ++seed) {
    Rng probe(seed);
    const bool t = probe.coin(), hf = probe.coin(), vf = probe.coin(), ro = probe.coin(),
               cr = probe.coin();
    found = !t && hf && !vf && !ro && !cr;
  }
  REQUIRE(found);
  --seed;

  Rng rng(4);
  Tensor img = Tensor::zeros({2, 8, 8});
  for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<scalar>(rng.uniform(0.0, 1.0));
  std::vector<uint8_t> lbl(64);
  for (auto& v : lbl) v = static_cast<uint8_t>(rng.uniform_int(0, 3));

  Tensor i2 = img.clone();
  std::vector<uint8_t> l2 = lbl;
  Rng r1(seed);
  augment(i2, l2, r1);
  bool changed = l2 != lbl;
  for (size_t i = 0; i < img.size() && !changed; ++i) changed = i2[i] != img[i];
  CHECK(changed);  // one flip moved things
  Rng r2(seed);
  augment(i2, l2, r2);
  for (size_t i = 0; i < img.size(); ++i) CHECK(i2[i] == img[i]);
  CHECK(l2 == lbl);
}

TEST_CASE("augment applies the same geometry to image and label") {
  // encode the label as an image channel; after augmentation, wherever the
  // label is foreground the label-as-image channel must be positive
  Tensor img = Tensor::zeros({1, 16, 16});
  std::vector<uint8_t> lbl(256, 0);
  for (int y = 4; y < 12; ++y)
    for (int x = 6; x < 13; ++x) {
      lbl[static_cast<size_t>(y) * 16 + x] = 1;
      img.values()[static_cast<size_t>(y) * 16 + x] = 1.0f;
    }
  for (uint64_t seed = 0; seed < 12; ++seed) {
    Tensor i2 = img.clone();
    std::vector<uint8_t> l2 = lbl;
    Rng r(seed);
    augment(i2, l2, r);
    const int h = i2.dim(1), w = i2.dim(2);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        if (l2[static_cast<size_t>(y) * w + x]) {
          // nearest-label support sits inside the bilinear image support
          CHECK(i2.values()[static_cast<size_t>(y) * w + x] > 0.0f);
        }
      }
  }
}

TEST_CASE("stack_neighbors edge replication and channel order") {
  // indexed ramp volume: slice s is constant s
  PatientVolume v = make_volume(5, 4, 4);
  for (int s = 0; s < 5; ++s)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) v.at(s, y, x) = static_cast<float>(s);

  Tensor mid = stack_neighbors(v, 2);
  REQUIRE(mid.shape() == std::vector<int>{3, 4, 4});
  CHECK(mid[0] == 1.0f);                      // s-1
  CHECK(mid[16] == 2.0f);                     // s
  CHECK(mid[32] == 3.0f);                     // s+1
  Tensor first = stack_neighbors(v, 0);
  CHECK(first[0] == 0.0f);
  CHECK(first[16] == 0.0f);
  CHECK(first[32] == 1.0f);
  Tensor last = stack_neighbors(v, 4);
  CHECK(last[0] == 3.0f);
  CHECK(last[16] == 4.0f);
  CHECK(last[32] == 4.0f);

  // single-slice volume: all three channels identical
  PatientVolume s1 = make_volume(1, 4, 4, 2.5f);
  Tensor t = stack_neighbors(s1, 0);
  for (size_t i = 0; i < t.size(); ++i) CHECK(t[i] == 2.5f);

  CHECK_THROWS_AS(stack_neighbors(v, 5), std::invalid_argument);
}
