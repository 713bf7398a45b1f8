#include "skunet/postprocess.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace skunet::post {

namespace {

struct UnionFind {
  std::vector<int32_t> parent;
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int32_t find(int32_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void unite(int32_t a, int32_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

Components label_from_unionfind(const std::vector<uint8_t>& bin, UnionFind& uf) {
  Components out;
  out.label.assign(bin.size(), 0);
  std::vector<int32_t> remap(bin.size(), 0);
  for (size_t i = 0; i < bin.size(); ++i) {
    if (!bin[i]) continue;
    const int32_t root = uf.find(static_cast<int32_t>(i));
    if (remap[root] == 0) {
      remap[root] = ++out.count;
      out.sizes.push_back(0);
    }
    out.label[i] = remap[root];
    ++out.sizes[remap[root] - 1];
  }
  return out;
}

}  // namespace

Components connected_components(const std::vector<uint8_t>& bin, int s, int h, int w,
                                int connectivity) {
  if (connectivity != 6 && connectivity != 26) {
    throw std::invalid_argument("connected_components: 3-D connectivity must be 6 or 26");
  }
  if (bin.size() != static_cast<size_t>(s) * h * w) {
    throw std::invalid_argument("connected_components: size does not match dims");
  }
  UnionFind uf(bin.size());
  auto idx = [&](int z, int y, int x) { return (static_cast<size_t>(z) * h + y) * w + x; };
  for (int z = 0; z < s; ++z) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const size_t i = idx(z, y, x);
        if (!bin[i]) continue;
        // join with already-visited neighbors (lexicographically smaller)
        for (int dz = -1; dz <= 0; ++dz) {
          for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
              if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
              if (connectivity == 6 && std::abs(dz) + std::abs(dy) + std::abs(dx) != 1) continue;
              const int nz = z + dz, ny = y + dy, nx = x + dx;
              if (nz < 0 || ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
              const size_t j = idx(nz, ny, nx);
              if (bin[j]) uf.unite(static_cast<int32_t>(i), static_cast<int32_t>(j));
            }
          }
        }
      }
    }
  }
  return label_from_unionfind(bin, uf);
}

Components connected_components_2d(const std::vector<uint8_t>& bin, int h, int w,
                                   int connectivity) {
  if (connectivity != 4 && connectivity != 8) {
    throw std::invalid_argument("connected_components_2d: connectivity must be 4 or 8");
  }
  if (bin.size() != static_cast<size_t>(h) * w) {
    throw std::invalid_argument("connected_components_2d: size does not match dims");
  }
  UnionFind uf(bin.size());
  auto idx = [&](int y, int x) { return static_cast<size_t>(y) * w + x; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = idx(y, x);
      if (!bin[i]) continue;
      for (int dy = -1; dy <= 0; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dy == 0 && dx >= 0) continue;
          if (connectivity == 4 && std::abs(dy) + std::abs(dx) != 1) continue;
          const int ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || nx >= w) continue;
          const size_t j = idx(ny, nx);
          if (bin[j]) uf.unite(static_cast<int32_t>(i), static_cast<int32_t>(j));
        }
      }
    }
  }
  return label_from_unionfind(bin, uf);
}

void fill_holes_2d(std::vector<uint8_t>& mask, int h, int w) {
  if (mask.size() != static_cast<size_t>(h) * w) {
    throw std::invalid_argument("fill_holes_2d: size does not match dims");
  }
  // background components (4-connected); those containing a border pixel stay
  std::vector<uint8_t> bg(mask.size());
  for (size_t i = 0; i < mask.size(); ++i) bg[i] = mask[i] ? 0 : 1;
  Components comp = connected_components_2d(bg, h, w, 4);
  std::vector<uint8_t> touches_border(static_cast<size_t>(comp.count) + 1, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (y == 0 || y == h - 1 || x == 0 || x == w - 1) {
        const int32_t c = comp.label[static_cast<size_t>(y) * w + x];
        if (c > 0) touches_border[c] = 1;
      }
    }
  }
  for (size_t i = 0; i < mask.size(); ++i) {
    const int32_t c = comp.label[i];
    if (c > 0 && !touches_border[c]) mask[i] = 1;
  }
}

LccResult largest_cc_constraint(const LabelVolume& lv) {
  lv.validate();
  LccResult result;
  result.volume = lv;
  LabelVolume& out = result.volume;
  const int s = lv.slices, h = lv.height, w = lv.width;
  const size_t hw = static_cast<size_t>(h) * w;

  std::vector<uint8_t> fg(lv.size());
  size_t fg_count = 0;
  for (size_t i = 0; i < lv.size(); ++i) {
    fg[i] = lv.voxels[i] != 0;
    fg_count += fg[i];
  }
  if (fg_count == 0) {
    result.empty_warning = true;
    return result;
  }

  Components comp = connected_components(fg, s, h, w, 26);
  int32_t largest = 1;
  for (int32_t c = 2; c <= comp.count; ++c) {
    if (comp.sizes[c - 1] > comp.sizes[largest - 1]) largest = c;
  }
  for (size_t i = 0; i < out.voxels.size(); ++i) {
    if (out.voxels[i] != 0 && comp.label[i] != largest) out.voxels[i] = 0;
  }

  // per-slice hole filling on the foreground union
  for (int z = 0; z < s; ++z) {
    uint8_t* slice = out.voxels.data() + z * hw;
    std::vector<uint8_t> mask(hw);
    for (size_t i = 0; i < hw; ++i) mask[i] = slice[i] != 0;
    std::vector<uint8_t> filled = mask;
    fill_holes_2d(filled, h, w);

    // hole pixels, grouped; enclosed-by-LV/LVM holes become LV, the rest take
    // the iterative 4-neighborhood majority
    std::vector<uint8_t> holes(hw);
    bool any = false;
    for (size_t i = 0; i < hw; ++i) {
      holes[i] = filled[i] && !mask[i];
      any = any || holes[i];
    }
    if (!any) continue;
    Components hole_comp = connected_components_2d(holes, h, w, 4);
    std::vector<uint8_t> enclosed_lv(static_cast<size_t>(hole_comp.count) + 1, 1);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int32_t hc = hole_comp.label[static_cast<size_t>(y) * w + x];
        if (hc == 0) continue;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const uint8_t v = slice[static_cast<size_t>(ny) * w + nx];
          if (v == kRV) enclosed_lv[hc] = 0;
        }
      }
    }
    // first pass: LV for LV/LVM-enclosed holes
    std::vector<size_t> pending;
    for (size_t i = 0; i < hw; ++i) {
      if (!holes[i]) continue;
      if (enclosed_lv[hole_comp.label[i]]) {
        slice[i] = kLV;
      } else {
        pending.push_back(i);
      }
    }
    // remaining holes: propagate the majority label of labeled 4-neighbors
    while (!pending.empty()) {
      std::vector<size_t> next;
      bool changed = false;
      for (size_t i : pending) {
        const int y = static_cast<int>(i / w), x = static_cast<int>(i % w);
        int votes[kNumClasses] = {};
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
          const uint8_t v = slice[static_cast<size_t>(ny) * w + nx];
          if (v != 0) ++votes[v];
        }
        int best = 0, best_votes = 0;
        for (int c = 1; c < kNumClasses; ++c) {
          if (votes[c] > best_votes) {
            best_votes = votes[c];
            best = c;
          }
        }
        if (best != 0) {
          slice[i] = static_cast<uint8_t>(best);
          changed = true;
        } else {
          next.push_back(i);
        }
      }
      if (!changed) break;  // isolated hole fully surrounded by other holes
      pending = std::move(next);
    }
  }
  return result;
}

}  // namespace skunet::post
