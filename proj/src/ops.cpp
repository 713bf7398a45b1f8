#include "skunet/ops.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace skunet {

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!GradTape::active()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void expect_ndim(const Tensor& t, int nd, const char* op, const char* arg) {
  if (t.ndim() != nd) {
    throw std::invalid_argument(std::string(op) + ": " + arg + " must be " + std::to_string(nd) +
                                "-d, got shape " + Tensor::shape_str(t.shape()));
  }
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                Tensor::shape_str(a.shape()) + " vs " +
                                Tensor::shape_str(b.shape()));
  }
}

// Valid output range [lo, hi) along one spatial axis for a kernel tap with
// input offset `off`: input index o*stride + off must land in [0, extent).
inline void tap_range(int out_extent, int in_extent, int stride, int off, int& lo, int& hi) {
  int lo_v = off >= 0 ? 0 : (-off + stride - 1) / stride;
  int hi_v = (in_extent - 1 - off) >= 0 ? (in_extent - 1 - off) / stride + 1 : 0;
  lo = std::max(0, lo_v);
  hi = std::min(out_extent, hi_v);
}

// Fixed-order blocked dot product: 16 float lanes, then a deterministic
// reduction. Vectorizes without reassociation license.
inline double dot_block(const scalar* a, const scalar* b, int n) {
  scalar acc[16] = {};
  int i = 0;
  for (; i + 16 <= n; i += 16) {
    for (int j = 0; j < 16; ++j) acc[j] += a[i + j] * b[i + j];
  }
  double total = 0.0;
  for (int j = 0; j < 16; ++j) total += acc[j];
  for (; i < n; ++i) total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return total;
}

inline double sum_block(const scalar* a, int n) {
  scalar acc[16] = {};
  int i = 0;
  for (; i + 16 <= n; i += 16) {
    for (int j = 0; j < 16; ++j) acc[j] += a[i + j];
  }
  double total = 0.0;
  for (int j = 0; j < 16; ++j) total += acc[j];
  for (; i < n; ++i) total += static_cast<double>(a[i]);
  return total;
}

// a b -> sum(a*a), same lane discipline as dot_block
inline double sumsq_block(const scalar* a, int n) {
  scalar acc[16] = {};
  int i = 0;
  for (; i + 16 <= n; i += 16) {
    for (int j = 0; j < 16; ++j) acc[j] += a[i + j] * a[i + j];
  }
  double total = 0.0;
  for (int j = 0; j < 16; ++j) total += acc[j];
  for (; i < n; ++i) total += static_cast<double>(a[i]) * a[i];
  return total;
}

// elementwise loops below this size stay serial
constexpr size_t kParallelCutoff = size_t(1) << 15;

template <typename F>
void parallel_elems(size_t n, F&& body) {
  if (n < kParallelCutoff) {
    body(size_t(0), n);
    return;
  }
#pragma omp parallel
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
    const int nth = omp_get_num_threads();
#else
    const int tid = 0, nth = 1;
#endif
    const size_t chunk = (n + nth - 1) / nth;
    const size_t lo = std::min(n, chunk * static_cast<size_t>(tid));
    const size_t hi = std::min(n, lo + chunk);
    if (lo < hi) body(lo, hi);
  }
}

struct ConvDims {
  int n, cin, h, w;
  int cout, kh, kw;
  int stride, padding, dilation;
  int ho, wo;
};

constexpr int kMaxFusedWidth = 512;
constexpr int kIm2colMaxWidth = 24;  // narrow planes vectorize over H*W instead

// "same"-size 3x3 path: stride 1, padding == dilation. One row accumulator per
// output row, all taps and input channels fused before the single store.
bool fused3x3_applicable(const ConvDims& d) {
  return d.kh == 3 && d.kw == 3 && d.stride == 1 && d.padding == d.dilation &&
         d.w > kIm2colMaxWidth && d.w <= kMaxFusedWidth && d.ho == d.h && d.wo == d.w;
}

// narrow "same"-size 3x3 path: k-major im2col so every inner loop runs over
// the whole plane. col layout: [n][k][pix] with k = ci*9 + ky*3 + kx.
bool im2col3x3_applicable(const ConvDims& d) {
  return d.kh == 3 && d.kw == 3 && d.stride == 1 && d.padding == d.dilation &&
         d.w >= 2 * d.dilation + 1 && d.w <= kIm2colMaxWidth && d.ho == d.h && d.wo == d.w;
}

// one shifted, zero-padded copy of the input plane per kernel tap
void im2col3x3_build(const scalar* in, scalar* col, const ConvDims& d) {
  const int h = d.h, w = d.w, dl = d.dilation;
  const size_t hw = static_cast<size_t>(h) * w;
  const int nk = d.cin * 9;
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; ++n) {
    for (int k = 0; k < nk; ++k) {
      const int ci = k / 9;
      const int ky = (k % 9) / 3;
      const int kx = k % 3;
      const scalar* plane = in + (static_cast<size_t>(n) * d.cin + ci) * hw;
      scalar* dst = col + (static_cast<size_t>(n) * nk + k) * hw;
      const int xoff = (kx - 1) * dl;
      const int x_lo = std::max(0, -xoff), x_hi = std::min(w, w - xoff);
      for (int y = 0; y < h; ++y) {
        const int iy = y + (ky - 1) * dl;
        scalar* drow = dst + static_cast<size_t>(y) * w;
        if (iy < 0 || iy >= h) {
          std::fill(drow, drow + w, scalar(0));
          continue;
        }
        const scalar* srow = plane + static_cast<size_t>(iy) * w;
        for (int x = 0; x < x_lo; ++x) drow[x] = scalar(0);
        for (int x = x_lo; x < x_hi; ++x) drow[x] = srow[x + xoff];
        for (int x = x_hi; x < w; ++x) drow[x] = scalar(0);
      }
    }
  }
}

void conv2d_forward_im2col(const scalar* col, const scalar* wt, const scalar* bs, scalar* out,
                           const ConvDims& d) {
  const size_t hw = static_cast<size_t>(d.h) * d.w;
  const int nk = d.cin * 9;
  const int planes = d.n * d.cout;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const int n = pl / d.cout;
    const int co = pl % d.cout;
    scalar* op = out + static_cast<size_t>(pl) * hw;
    std::fill(op, op + hw, bs[co]);
    const scalar* wrow = wt + static_cast<size_t>(co) * nk;
    const scalar* cbase = col + static_cast<size_t>(n) * nk * hw;
    for (int k = 0; k < nk; ++k) {
      const scalar wv = wrow[k];
      const scalar* cr = cbase + static_cast<size_t>(k) * hw;
      for (size_t i = 0; i < hw; ++i) op[i] += wv * cr[i];
    }
  }
}

void conv2d_backward_weight_im2col(scalar* gwt, const scalar* col, const scalar* gout,
                                   const ConvDims& d) {
  const size_t hw = static_cast<size_t>(d.h) * d.w;
  const int nk = d.cin * 9;
  const int pairs = d.cout * nk;
#pragma omp parallel for schedule(static)
  for (int pr = 0; pr < pairs; ++pr) {
    const int co = pr / nk;
    const int k = pr % nk;
    double acc = 0.0;
    for (int n = 0; n < d.n; ++n) {
      acc += dot_block(gout + (static_cast<size_t>(n) * d.cout + co) * hw,
                       col + (static_cast<size_t>(n) * nk + k) * hw, static_cast<int>(hw));
    }
    gwt[pr] += static_cast<scalar>(acc);
  }
}

void conv2d_backward_input_im2col(scalar* gin, const scalar* wt, const scalar* gout,
                                  const ConvDims& d) {
  const int h = d.h, w = d.w, dl = d.dilation;
  const size_t hw = static_cast<size_t>(h) * w;
  const int nk = d.cin * 9;
  std::vector<scalar> gcol(static_cast<size_t>(d.n) * nk * hw);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < d.n; ++n) {
    for (int k = 0; k < nk; ++k) {
      scalar* gc = gcol.data() + (static_cast<size_t>(n) * nk + k) * hw;
      std::fill(gc, gc + hw, scalar(0));
      for (int co = 0; co < d.cout; ++co) {
        const scalar wv = wt[static_cast<size_t>(co) * nk + k];
        const scalar* g = gout + (static_cast<size_t>(n) * d.cout + co) * hw;
        for (size_t i = 0; i < hw; ++i) gc[i] += wv * g[i];
      }
    }
  }
  // col2im: add each tap row back at its shifted position
  const int planes = d.n * d.cin;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const int n = pl / d.cin;
    const int ci = pl % d.cin;
    scalar* gp = gin + static_cast<size_t>(pl) * hw;
    for (int tap = 0; tap < 9; ++tap) {
      const int ky = tap / 3, kx = tap % 3;
      const scalar* gc = gcol.data() + (static_cast<size_t>(n) * nk + ci * 9 + tap) * hw;
      const int xoff = (kx - 1) * dl;
      const int x_lo = std::max(0, -xoff), x_hi = std::min(w, w - xoff);
      for (int y = 0; y < h; ++y) {
        const int iy = y + (ky - 1) * dl;
        if (iy < 0 || iy >= h) continue;
        scalar* grow = gp + static_cast<size_t>(iy) * w + xoff;
        const scalar* crow = gc + static_cast<size_t>(y) * w;
        for (int x = x_lo; x < x_hi; ++x) grow[x] += crow[x];
      }
    }
  }
}

// zero-padded copy of every input plane: kernel loops run full width with no
// edge handling (pad row y maps to input row y-d, same for columns)
std::vector<scalar> pad_planes3x3(const scalar* in, int planes, int h, int w, int dl) {
  const int ph = h + 2 * dl, pw = w + 2 * dl;
  std::vector<scalar> padded(static_cast<size_t>(planes) * ph * pw, scalar(0));
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const scalar* src = in + static_cast<size_t>(pl) * h * w;
    scalar* dst = padded.data() + static_cast<size_t>(pl) * ph * pw;
    for (int y = 0; y < h; ++y) {
      std::copy(src + static_cast<size_t>(y) * w, src + static_cast<size_t>(y + 1) * w,
                dst + static_cast<size_t>(y + dl) * pw + dl);
    }
  }
  return padded;
}

void conv2d_forward_fused3x3(const scalar* in, const scalar* wt, const scalar* bs, scalar* out,
                             const ConvDims& d) {
  const int planes = d.n * d.cout;
  const int h = d.h, w = d.w, dl = d.dilation;
  const int pw = w + 2 * dl, ph = h + 2 * dl;
  const std::vector<scalar> padded = pad_planes3x3(in, d.n * d.cin, h, w, dl);
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const int n = pl / d.cout;
    const int co = pl % d.cout;
    scalar* out_plane = out + static_cast<size_t>(pl) * h * w;
    scalar acc[kMaxFusedWidth];
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) acc[x] = bs[co];
      for (int ci = 0; ci < d.cin; ++ci) {
        const scalar* pad_plane =
            padded.data() + (static_cast<size_t>(n) * d.cin + ci) * ph * pw;
        const scalar* wp = wt + (static_cast<size_t>(co) * d.cin + ci) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const scalar* rp = pad_plane + static_cast<size_t>(y + ky * dl) * pw;
          const scalar w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
          for (int x = 0; x < w; ++x) acc[x] += w0 * rp[x] + w1 * rp[x + dl] + w2 * rp[x + 2 * dl];
        }
      }
      scalar* orow = out_plane + static_cast<size_t>(y) * w;
      for (int x = 0; x < w; ++x) orow[x] = acc[x];
    }
  }
}

void conv2d_forward_impl(const scalar* in, const scalar* wt, const scalar* bs, scalar* out,
                         const ConvDims& d) {
  if (fused3x3_applicable(d)) {
    conv2d_forward_fused3x3(in, wt, bs, out, d);
    return;
  }
  const int planes = d.n * d.cout;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const int n = pl / d.cout;
    const int co = pl % d.cout;
    scalar* out_plane = out + static_cast<size_t>(pl) * d.ho * d.wo;
    std::fill(out_plane, out_plane + static_cast<size_t>(d.ho) * d.wo, bs[co]);
    for (int ci = 0; ci < d.cin; ++ci) {
      const scalar* in_plane = in + (static_cast<size_t>(n) * d.cin + ci) * d.h * d.w;
      const scalar* wbase = wt + (static_cast<size_t>(co) * d.cin + ci) * d.kh * d.kw;
      for (int ky = 0; ky < d.kh; ++ky) {
        const int oy_off = ky * d.dilation - d.padding;
        int oy_lo, oy_hi;
        tap_range(d.ho, d.h, d.stride, oy_off, oy_lo, oy_hi);
        for (int kx = 0; kx < d.kw; ++kx) {
          const scalar wv = wbase[ky * d.kw + kx];
          const int ox_off = kx * d.dilation - d.padding;
          int ox_lo, ox_hi;
          tap_range(d.wo, d.w, d.stride, ox_off, ox_lo, ox_hi);
          if (d.stride == 1) {
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const scalar* irow = in_plane + static_cast<size_t>(oy + oy_off) * d.w + ox_off;
              scalar* orow = out_plane + static_cast<size_t>(oy) * d.wo;
              for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox];
            }
          } else {
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const scalar* irow = in_plane + static_cast<size_t>(oy * d.stride + oy_off) * d.w;
              scalar* orow = out_plane + static_cast<size_t>(oy) * d.wo;
              for (int ox = ox_lo; ox < ox_hi; ++ox) orow[ox] += wv * irow[ox * d.stride + ox_off];
            }
          }
        }
      }
    }
  }
}

// mirror of the fused forward: pad the upstream gradient, then
// gin[y][x] += sum over (co,ky,kx) of w[ky][kx] * gpad[y+(2-ky)d][x+(2-kx)d]
void conv2d_backward_input_fused3x3(scalar* gin, const scalar* wt, const scalar* gout,
                                    const ConvDims& d) {
  const int planes = d.n * d.cin;
  const int h = d.h, w = d.w, dl = d.dilation;
  const int pw = w + 2 * dl, ph = h + 2 * dl;
  const std::vector<scalar> gpad = pad_planes3x3(gout, d.n * d.cout, h, w, dl);
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const int n = pl / d.cin;
    const int ci = pl % d.cin;
    scalar* gin_plane = gin + static_cast<size_t>(pl) * h * w;
    scalar acc[kMaxFusedWidth];
    for (int y = 0; y < h; ++y) {
      scalar* grow = gin_plane + static_cast<size_t>(y) * w;
      for (int x = 0; x < w; ++x) acc[x] = grow[x];
      for (int co = 0; co < d.cout; ++co) {
        const scalar* pad_plane =
            gpad.data() + (static_cast<size_t>(n) * d.cout + co) * ph * pw;
        const scalar* wp = wt + (static_cast<size_t>(co) * d.cin + ci) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          // oy = y - (ky-1)d -> padded row y + (2-ky)d
          const scalar* g = pad_plane + static_cast<size_t>(y + (2 - ky) * dl) * pw;
          const scalar w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
          // kx tap reads g[x-(kx-1)d] -> padded column x + (2-kx)d
          for (int x = 0; x < w; ++x) acc[x] += w2 * g[x] + w1 * g[x + dl] + w0 * g[x + 2 * dl];
        }
      }
      for (int x = 0; x < w; ++x) grow[x] = acc[x];
    }
  }
}

void conv2d_backward_input(scalar* gin, const scalar* wt, const scalar* gout, const ConvDims& d) {
  if (fused3x3_applicable(d)) {
    conv2d_backward_input_fused3x3(gin, wt, gout, d);
    return;
  }
  const int planes = d.n * d.cin;
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < planes; ++pl) {
    const int n = pl / d.cin;
    const int ci = pl % d.cin;
    scalar* gin_plane = gin + static_cast<size_t>(pl) * d.h * d.w;
    for (int co = 0; co < d.cout; ++co) {
      const scalar* gout_plane = gout + (static_cast<size_t>(n) * d.cout + co) * d.ho * d.wo;
      const scalar* wbase = wt + (static_cast<size_t>(co) * d.cin + ci) * d.kh * d.kw;
      for (int ky = 0; ky < d.kh; ++ky) {
        const int oy_off = ky * d.dilation - d.padding;
        int oy_lo, oy_hi;
        tap_range(d.ho, d.h, d.stride, oy_off, oy_lo, oy_hi);
        for (int kx = 0; kx < d.kw; ++kx) {
          const scalar wv = wbase[ky * d.kw + kx];
          const int ox_off = kx * d.dilation - d.padding;
          int ox_lo, ox_hi;
          tap_range(d.wo, d.w, d.stride, ox_off, ox_lo, ox_hi);
          if (d.stride == 1) {
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              scalar* grow = gin_plane + static_cast<size_t>(oy + oy_off) * d.w + ox_off;
              const scalar* orow = gout_plane + static_cast<size_t>(oy) * d.wo;
              for (int ox = ox_lo; ox < ox_hi; ++ox) grow[ox] += wv * orow[ox];
            }
          } else {
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              scalar* grow = gin_plane + static_cast<size_t>(oy * d.stride + oy_off) * d.w;
              const scalar* orow = gout_plane + static_cast<size_t>(oy) * d.wo;
              for (int ox = ox_lo; ox < ox_hi; ++ox) grow[ox * d.stride + ox_off] += wv * orow[ox];
            }
          }
        }
      }
    }
  }
}

// row-major pass per (co,ci): each gout row feeds all nine tap dot products.
// Vector lanes stay live across the whole pair and are reduced once, in a
// fixed order, at the end.
void conv2d_backward_weight_fused3x3(scalar* gwt, const scalar* in, const scalar* gout,
                                     const ConvDims& d) {
  const int pairs = d.cout * d.cin;
  const int h = d.h, w = d.w, dl = d.dilation;
  const int pw = w + 2 * dl, ph = h + 2 * dl;
  const std::vector<scalar> padded = pad_planes3x3(in, d.n * d.cin, h, w, dl);
#pragma omp parallel for schedule(static)
  for (int pr = 0; pr < pairs; ++pr) {
    const int co = pr / d.cin;
    const int ci = pr % d.cin;
    scalar lanes[9][16] = {};
    auto tap = [](scalar acc[16], const scalar* a, const scalar* b, int n) {
      int i = 0;
      for (; i + 16 <= n; i += 16) {
        for (int j = 0; j < 16; ++j) acc[j] += a[i + j] * b[i + j];
      }
      for (; i < n; ++i) acc[i & 15] += a[i] * b[i];
    };
    for (int n = 0; n < d.n; ++n) {
      const scalar* pad_plane =
          padded.data() + (static_cast<size_t>(n) * d.cin + ci) * ph * pw;
      const scalar* gout_plane = gout + (static_cast<size_t>(n) * d.cout + co) * h * w;
      for (int oy = 0; oy < h; ++oy) {
        const scalar* g = gout_plane + static_cast<size_t>(oy) * w;
        for (int ky = 0; ky < 3; ++ky) {
          // gw[ky][kx] += sum over ox of g[ox] * in[oy+(ky-1)d][ox+(kx-1)d];
          // padded row oy + ky*d, padded column ox + kx*d
          const scalar* rp = pad_plane + static_cast<size_t>(oy + ky * dl) * pw;
          tap(lanes[ky * 3 + 0], g, rp, w);
          tap(lanes[ky * 3 + 1], g, rp + dl, w);
          tap(lanes[ky * 3 + 2], g, rp + 2 * dl, w);
        }
      }
    }
    scalar* gw = gwt + static_cast<size_t>(pr) * 9;
    for (int k = 0; k < 9; ++k) {
      double total = 0.0;
      for (int j = 0; j < 16; ++j) total += lanes[k][j];
      gw[k] += static_cast<scalar>(total);
    }
  }
}

void conv2d_backward_weight(scalar* gwt, const scalar* in, const scalar* gout, const ConvDims& d) {
  if (fused3x3_applicable(d)) {
    conv2d_backward_weight_fused3x3(gwt, in, gout, d);
    return;
  }
  const int pairs = d.cout * d.cin;
#pragma omp parallel for schedule(static)
  for (int pr = 0; pr < pairs; ++pr) {
    const int co = pr / d.cin;
    const int ci = pr % d.cin;
    scalar* gw = gwt + static_cast<size_t>(pr) * d.kh * d.kw;
    for (int ky = 0; ky < d.kh; ++ky) {
      const int oy_off = ky * d.dilation - d.padding;
      int oy_lo, oy_hi;
      tap_range(d.ho, d.h, d.stride, oy_off, oy_lo, oy_hi);
      for (int kx = 0; kx < d.kw; ++kx) {
        const int ox_off = kx * d.dilation - d.padding;
        int ox_lo, ox_hi;
        tap_range(d.wo, d.w, d.stride, ox_off, ox_lo, ox_hi);
        double acc = 0.0;
        for (int n = 0; n < d.n; ++n) {
          const scalar* in_plane = in + (static_cast<size_t>(n) * d.cin + ci) * d.h * d.w;
          const scalar* gout_plane = gout + (static_cast<size_t>(n) * d.cout + co) * d.ho * d.wo;
          if (d.stride == 1) {
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              acc += dot_block(gout_plane + static_cast<size_t>(oy) * d.wo + ox_lo,
                               in_plane + static_cast<size_t>(oy + oy_off) * d.w + ox_off + ox_lo,
                               ox_hi - ox_lo);
            }
          } else {
            for (int oy = oy_lo; oy < oy_hi; ++oy) {
              const scalar* irow = in_plane + static_cast<size_t>(oy * d.stride + oy_off) * d.w;
              const scalar* orow = gout_plane + static_cast<size_t>(oy) * d.wo;
              for (int ox = ox_lo; ox < ox_hi; ++ox) {
                acc += static_cast<double>(orow[ox]) * irow[ox * d.stride + ox_off];
              }
            }
          }
        }
        gw[ky * d.kw + kx] += static_cast<scalar>(acc);
      }
    }
  }
}

void conv2d_backward_bias(scalar* gbs, const scalar* gout, const ConvDims& d) {
#pragma omp parallel for schedule(static)
  for (int co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    for (int n = 0; n < d.n; ++n) {
      const scalar* gout_plane = gout + (static_cast<size_t>(n) * d.cout + co) * d.ho * d.wo;
      acc += sum_block(gout_plane, d.ho * d.wo);
    }
    gbs[co] += static_cast<scalar>(acc);
  }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride,
              int padding, int dilation) {
  expect_ndim(input, 4, "conv2d", "input");
  expect_ndim(weight, 4, "conv2d", "weight");
  expect_ndim(bias, 1, "conv2d", "bias");
  ConvDims d;
  d.n = input.dim(0);
  d.cin = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  d.cout = weight.dim(0);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  d.stride = stride;
  d.padding = padding;
  d.dilation = dilation;
  if (weight.dim(1) != d.cin) {
    throw std::invalid_argument("conv2d: weight input-channel dim (" +
                                std::to_string(weight.dim(1)) + ") != input channel dim (" +
                                std::to_string(d.cin) + ")");
  }
  if (bias.dim(0) != d.cout) {
    throw std::invalid_argument("conv2d: bias length (" + std::to_string(bias.dim(0)) +
                                ") != output channel dim (" + std::to_string(d.cout) + ")");
  }
  if (d.kh % 2 == 0 || d.kw % 2 == 0) {
    throw std::invalid_argument("conv2d: kernel dims must be odd, got " +
                                std::to_string(d.kh) + "x" + std::to_string(d.kw));
  }
  if (stride < 1 || padding < 0 || dilation < 1) {
    throw std::invalid_argument("conv2d: invalid stride/padding/dilation");
  }
  const int hnum = d.h + 2 * padding - dilation * (d.kh - 1) - 1;
  const int wnum = d.w + 2 * padding - dilation * (d.kw - 1) - 1;
  if (hnum < 0 || hnum % stride != 0 || wnum < 0 || wnum % stride != 0) {
    throw std::invalid_argument("conv2d: output spatial size is not a positive integer for input " +
                                Tensor::shape_str(input.shape()));
  }
  d.ho = hnum / stride + 1;
  d.wo = wnum / stride + 1;

  Tensor out = Tensor::zeros({d.n, d.cout, d.ho, d.wo});
  std::shared_ptr<std::vector<scalar>> col;
  if (im2col3x3_applicable(d)) {
    col = std::make_shared<std::vector<scalar>>(static_cast<size_t>(d.n) * d.cin * 9 *
                                                static_cast<size_t>(d.h) * d.w);
    im2col3x3_build(input.data(), col->data(), d);
    conv2d_forward_im2col(col->data(), weight.data(), bias.data(), out.data(), d);
  } else {
    conv2d_forward_impl(input.data(), weight.data(), bias.data(), out.data(), d);
  }
  out.ensure_finite("conv2d");

  if (tracking({&input, &weight, &bias})) {
    out.set_requires_grad(true);
    Tensor in_c = input, wt_c = weight, bs_c = bias, out_c = out;
    GradTape::active()->record("conv2d", [in_c, wt_c, bs_c, out_c, col, d]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      if (bs_c.requires_grad()) conv2d_backward_bias(bs_c.grad().data(), g, d);
      if (wt_c.requires_grad()) {
        if (col) {
          conv2d_backward_weight_im2col(wt_c.grad().data(), col->data(), g, d);
        } else {
          conv2d_backward_weight(wt_c.grad().data(), in_c.data(), g, d);
        }
      }
      if (in_c.requires_grad()) {
        if (col) {
          conv2d_backward_input_im2col(in_c.grad().data(), wt_c.data(), g, d);
        } else {
          conv2d_backward_input(in_c.grad().data(), wt_c.data(), g, d);
        }
      }
    });
  } else if (col) {
    col.reset();
  }
  return out;
}

Tensor maxpool2d(const Tensor& input) {
  expect_ndim(input, 4, "maxpool2d", "input");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw std::invalid_argument("maxpool2d: spatial dims (" + std::to_string(h) + "x" +
                                std::to_string(w) + ") must be even; pad or crop the input");
  }
  const int ho = h / 2, wo = w / 2;
  Tensor out = Tensor::zeros({n, c, ho, wo});
  auto argmax = std::make_shared<std::vector<int64_t>>(out.size());
  const scalar* in = input.data();
  scalar* o = out.data();
  const int planes = n * c;
  for (int pl = 0; pl < planes; ++pl) {
    const scalar* ip = in + static_cast<size_t>(pl) * h * w;
    scalar* op = o + static_cast<size_t>(pl) * ho * wo;
    int64_t* am = argmax->data() + static_cast<size_t>(pl) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const int y0 = 2 * oy, x0 = 2 * ox;
        // row-major window scan; strict > keeps the first occurrence on ties
        int64_t best = static_cast<int64_t>(y0) * w + x0;
        scalar bv = ip[best];
        const int64_t cands[3] = {static_cast<int64_t>(y0) * w + x0 + 1,
                                  static_cast<int64_t>(y0 + 1) * w + x0,
                                  static_cast<int64_t>(y0 + 1) * w + x0 + 1};
        for (int64_t idx : cands) {
          if (ip[idx] > bv) {
            bv = ip[idx];
            best = idx;
          }
        }
        op[oy * wo + ox] = bv;
        am[oy * wo + ox] = static_cast<int64_t>(pl) * h * w + best;
      }
    }
  }
  out.ensure_finite("maxpool2d");

  if (tracking({&input})) {
    out.set_requires_grad(true);
    Tensor in_c = input, out_c = out;
    GradTape::active()->record("maxpool2d", [in_c, out_c, argmax]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      scalar* gin = in_c.grad().data();
      const auto& am = *argmax;
      for (size_t i = 0; i < am.size(); ++i) gin[am[i]] += g[i];
    });
  }
  return out;
}

Tensor upsample_nearest2x(const Tensor& input) {
  expect_ndim(input, 4, "upsample_nearest2x", "input");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w});
  const scalar* in = input.data();
  scalar* o = out.data();
  const int planes = n * c;
  for (int pl = 0; pl < planes; ++pl) {
    const scalar* ip = in + static_cast<size_t>(pl) * h * w;
    scalar* op = o + static_cast<size_t>(pl) * 4 * h * w;
    for (int y = 0; y < h; ++y) {
      scalar* r0 = op + static_cast<size_t>(2 * y) * 2 * w;
      scalar* r1 = r0 + 2 * w;
      const scalar* ir = ip + static_cast<size_t>(y) * w;
      for (int x = 0; x < w; ++x) {
        const scalar v = ir[x];
        r0[2 * x] = v;
        r0[2 * x + 1] = v;
        r1[2 * x] = v;
        r1[2 * x + 1] = v;
      }
    }
  }
  out.ensure_finite("upsample_nearest2x");

  if (tracking({&input})) {
    out.set_requires_grad(true);
    Tensor in_c = input, out_c = out;
    GradTape::active()->record("upsample_nearest2x", [in_c, out_c, n, c, h, w]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      scalar* gin = in_c.grad().data();
      const int planes = n * c;
      for (int pl = 0; pl < planes; ++pl) {
        const scalar* gp = g + static_cast<size_t>(pl) * 4 * h * w;
        scalar* gi = gin + static_cast<size_t>(pl) * h * w;
        for (int y = 0; y < h; ++y) {
          const scalar* r0 = gp + static_cast<size_t>(2 * y) * 2 * w;
          const scalar* r1 = r0 + 2 * w;
          scalar* gr = gi + static_cast<size_t>(y) * w;
          for (int x = 0; x < w; ++x) {
            gr[x] += r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1];
          }
        }
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const scalar* in = x.data();
  scalar* o = out.data();
  parallel_elems(x.size(), [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) o[i] = in[i] > scalar(0) ? in[i] : scalar(0);
  });
  out.ensure_finite("relu");

  if (tracking({&x})) {
    out.set_requires_grad(true);
    Tensor in_c = x, out_c = out;
    GradTape::active()->record("relu", [in_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const scalar* in = in_c.data();
      scalar* gin = in_c.grad().data();
      parallel_elems(in_c.size(), [&](size_t lo, size_t hi) {
        for (size_t i = lo; i < hi; ++i) {
          if (in[i] > scalar(0)) gin[i] += g[i];
        }
      });
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const scalar* in = x.data();
  scalar* o = out.data();
  parallel_elems(x.size(), [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) {
      const double v = in[i];
      if (v >= 0.0) {
        o[i] = static_cast<scalar>(1.0 / (1.0 + std::exp(-v)));
      } else {
        const double e = std::exp(v);
        o[i] = static_cast<scalar>(e / (1.0 + e));
      }
    }
  });
  out.ensure_finite("sigmoid");

  if (tracking({&x})) {
    out.set_requires_grad(true);
    Tensor in_c = x, out_c = out;
    GradTape::active()->record("sigmoid", [in_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const scalar* y = out_c.data();
      scalar* gin = in_c.grad().data();
      const size_t n = in_c.size();
      for (size_t i = 0; i < n; ++i) gin[i] += g[i] * y[i] * (scalar(1) - y[i]);
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (axis < 0 || axis >= x.ndim()) {
    throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                " invalid for shape " + Tensor::shape_str(x.shape()));
  }
  size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(x.dim(i));
  for (int i = axis + 1; i < x.ndim(); ++i) inner *= static_cast<size_t>(x.dim(i));
  const size_t an = static_cast<size_t>(x.dim(axis));

  Tensor out = Tensor::zeros(x.shape());
  const scalar* in = x.data();
  scalar* o = out.data();
  for (size_t ou = 0; ou < outer; ++ou) {
    for (size_t i = 0; i < inner; ++i) {
      const size_t base = ou * an * inner + i;
      double m = in[base];
      for (size_t a = 1; a < an; ++a) m = std::max(m, static_cast<double>(in[base + a * inner]));
      double s = 0.0;
      for (size_t a = 0; a < an; ++a) s += std::exp(static_cast<double>(in[base + a * inner]) - m);
      for (size_t a = 0; a < an; ++a) {
        o[base + a * inner] =
            static_cast<scalar>(std::exp(static_cast<double>(in[base + a * inner]) - m) / s);
      }
    }
  }
  out.ensure_finite("softmax");

  if (tracking({&x})) {
    out.set_requires_grad(true);
    Tensor in_c = x, out_c = out;
    GradTape::active()->record("softmax", [in_c, out_c, outer, inner, an]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const scalar* y = out_c.data();
      scalar* gin = in_c.grad().data();
      for (size_t ou = 0; ou < outer; ++ou) {
        for (size_t i = 0; i < inner; ++i) {
          const size_t base = ou * an * inner + i;
          double dot = 0.0;
          for (size_t a = 0; a < an; ++a) {
            dot += static_cast<double>(g[base + a * inner]) * y[base + a * inner];
          }
          for (size_t a = 0; a < an; ++a) {
            const size_t k = base + a * inner;
            gin[k] += static_cast<scalar>(y[k] * (g[k] - dot));
          }
        }
      }
    });
  }
  return out;
}

std::pair<Tensor, Tensor> softmax2(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "softmax2");
  Tensor wa = Tensor::zeros(a.shape());
  Tensor wb = Tensor::zeros(a.shape());
  const scalar* pa = a.data();
  const scalar* pb = b.data();
  scalar* oa = wa.data();
  scalar* ob = wb.data();
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) {
    const double m = std::max(pa[i], pb[i]);
    const double ea = std::exp(static_cast<double>(pa[i]) - m);
    const double eb = std::exp(static_cast<double>(pb[i]) - m);
    const double s = ea + eb;
    oa[i] = static_cast<scalar>(ea / s);
    ob[i] = static_cast<scalar>(eb / s);
  }
  wa.ensure_finite("softmax2");
  wb.ensure_finite("softmax2");

  if (tracking({&a, &b})) {
    wa.set_requires_grad(true);
    wb.set_requires_grad(true);
    Tensor a_c = a, b_c = b, wa_c = wa, wb_c = wb;
    GradTape::active()->record("softmax2", [a_c, b_c, wa_c, wb_c]() mutable {
      const bool ha = wa_c.has_grad(), hb = wb_c.has_grad();
      if (!ha && !hb) return;
      const scalar* ga = ha ? wa_c.grad().data() : nullptr;
      const scalar* gb = hb ? wb_c.grad().data() : nullptr;
      const scalar* ya = wa_c.data();
      const scalar* yb = wb_c.data();
      const size_t n = wa_c.size();
      scalar* da = a_c.requires_grad() ? a_c.grad().data() : nullptr;
      scalar* db = b_c.requires_grad() ? b_c.grad().data() : nullptr;
      for (size_t i = 0; i < n; ++i) {
        const scalar gva = ga ? ga[i] : scalar(0);
        const scalar gvb = gb ? gb[i] : scalar(0);
        const scalar j = ya[i] * yb[i] * (gva - gvb);
        if (da) da[i] += j;
        if (db) db[i] -= j;
      }
    });
  }
  return {wa, wb};
}

Tensor global_avg_pool(const Tensor& x) {
  expect_ndim(x, 4, "global_avg_pool", "input");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out = Tensor::zeros({n, c});
  const scalar* in = x.data();
  scalar* o = out.data();
  const size_t hw = static_cast<size_t>(h) * w;
  for (int pl = 0; pl < n * c; ++pl) {
    o[pl] = static_cast<scalar>(sum_block(in + pl * hw, static_cast<int>(hw)) / static_cast<double>(hw));
  }
  out.ensure_finite("global_avg_pool");

  if (tracking({&x})) {
    out.set_requires_grad(true);
    Tensor in_c = x, out_c = out;
    GradTape::active()->record("global_avg_pool", [in_c, out_c, n, c, hw]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      scalar* gin = in_c.grad().data();
      for (int pl = 0; pl < n * c; ++pl) {
        const scalar gv = g[pl] / static_cast<scalar>(hw);
        scalar* gp = gin + pl * hw;
        for (size_t i = 0; i < hw; ++i) gp[i] += gv;
      }
    });
  }
  return out;
}

Tensor dense(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  expect_ndim(x, 2, "dense", "input");
  expect_ndim(weight, 2, "dense", "weight");
  expect_ndim(bias, 1, "dense", "bias");
  const int n = x.dim(0), cin = x.dim(1);
  const int cout = weight.dim(0);
  if (weight.dim(1) != cin) {
    throw std::invalid_argument("dense: weight inner dim (" + std::to_string(weight.dim(1)) +
                                ") != input feature dim (" + std::to_string(cin) + ")");
  }
  if (bias.dim(0) != cout) {
    throw std::invalid_argument("dense: bias length (" + std::to_string(bias.dim(0)) +
                                ") != output feature dim (" + std::to_string(cout) + ")");
  }
  Tensor out = Tensor::zeros({n, cout});
  const scalar* px = x.data();
  const scalar* pw = weight.data();
  const scalar* pb = bias.data();
  scalar* o = out.data();
  for (int i = 0; i < n; ++i) {
    for (int co = 0; co < cout; ++co) {
      o[i * cout + co] = pb[co] + static_cast<scalar>(dot_block(px + static_cast<size_t>(i) * cin,
                                                                pw + static_cast<size_t>(co) * cin,
                                                                cin));
    }
  }
  out.ensure_finite("dense");

  if (tracking({&x, &weight, &bias})) {
    out.set_requires_grad(true);
    Tensor x_c = x, w_c = weight, b_c = bias, out_c = out;
    GradTape::active()->record("dense", [x_c, w_c, b_c, out_c, n, cin, cout]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const scalar* px = x_c.data();
      const scalar* pw = w_c.data();
      if (b_c.requires_grad()) {
        scalar* gb = b_c.grad().data();
        for (int co = 0; co < cout; ++co) {
          double acc = 0.0;
          for (int i = 0; i < n; ++i) acc += g[i * cout + co];
          gb[co] += static_cast<scalar>(acc);
        }
      }
      if (w_c.requires_grad()) {
        scalar* gw = w_c.grad().data();
        for (int co = 0; co < cout; ++co) {
          for (int ci = 0; ci < cin; ++ci) {
            double acc = 0.0;
            for (int i = 0; i < n; ++i) acc += static_cast<double>(g[i * cout + co]) * px[i * cin + ci];
            gw[co * cin + ci] += static_cast<scalar>(acc);
          }
        }
      }
      if (x_c.requires_grad()) {
        scalar* gx = x_c.grad().data();
        for (int i = 0; i < n; ++i) {
          for (int ci = 0; ci < cin; ++ci) {
            double acc = 0.0;
            for (int co = 0; co < cout; ++co) acc += static_cast<double>(g[i * cout + co]) * pw[co * cin + ci];
            gx[i * cin + ci] += static_cast<scalar>(acc);
          }
        }
      }
    });
  }
  return out;
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, scalar eps) {
  expect_ndim(x, 4, "instance_norm", "input");
  expect_ndim(gamma, 1, "instance_norm", "gamma");
  expect_ndim(beta, 1, "instance_norm", "beta");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (gamma.dim(0) != c || beta.dim(0) != c) {
    throw std::invalid_argument("instance_norm: affine params length (" +
                                std::to_string(gamma.dim(0)) + "," + std::to_string(beta.dim(0)) +
                                ") != channel dim (" + std::to_string(c) + ")");
  }
  if (!(eps > scalar(0))) throw std::invalid_argument("instance_norm: eps must be > 0");
  const size_t hw = static_cast<size_t>(h) * w;

  Tensor out = Tensor::zeros(x.shape());
  auto xhat = std::make_shared<std::vector<scalar>>(x.size());
  auto invstd = std::make_shared<std::vector<scalar>>(static_cast<size_t>(n) * c);
  const scalar* in = x.data();
  const scalar* pg = gamma.data();
  const scalar* pbta = beta.data();
  scalar* o = out.data();
#pragma omp parallel for schedule(static)
  for (int pl = 0; pl < n * c; ++pl) {
    const scalar* ip = in + pl * hw;
    scalar* op = o + pl * hw;
    scalar* xh = xhat->data() + pl * hw;
    const double mean = sum_block(ip, static_cast<int>(hw)) / static_cast<double>(hw);
    const double var =
        std::max(0.0, sumsq_block(ip, static_cast<int>(hw)) / static_cast<double>(hw) - mean * mean);
    const double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
    (*invstd)[pl] = static_cast<scalar>(istd);
    const int ch = pl % c;
    const scalar gm = pg[ch], bt = pbta[ch];
    const scalar fmean = static_cast<scalar>(mean), fistd = static_cast<scalar>(istd);
    for (size_t i = 0; i < hw; ++i) {
      const scalar xv = (ip[i] - fmean) * fistd;
      xh[i] = xv;
      op[i] = gm * xv + bt;
    }
  }
  out.ensure_finite("instance_norm");

  if (tracking({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor x_c = x, g_c = gamma, b_c = beta, out_c = out;
    GradTape::active()->record("instance_norm", [x_c, g_c, b_c, out_c, xhat, invstd, n, c, hw]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const scalar* pgm = g_c.data();
      scalar* gx = x_c.requires_grad() ? x_c.grad().data() : nullptr;
      scalar* gg = g_c.requires_grad() ? g_c.grad().data() : nullptr;
      scalar* gb = b_c.requires_grad() ? b_c.grad().data() : nullptr;
      // one thread owns each channel: the gamma/beta accumulations stay
      // race-free and in a fixed order over the batch
#pragma omp parallel for schedule(static)
      for (int ch = 0; ch < c; ++ch) {
        for (int b = 0; b < n; ++b) {
          const int pl = b * c + ch;
          const scalar* gp = g + pl * hw;
          const scalar* xh = xhat->data() + pl * hw;
          const double s1 = sum_block(gp, static_cast<int>(hw));
          const double s2 = dot_block(gp, xh, static_cast<int>(hw));
          if (gg) gg[ch] += static_cast<scalar>(s2);
          if (gb) gb[ch] += static_cast<scalar>(s1);
          if (gx) {
            const scalar k = pgm[ch] * (*invstd)[pl];
            const scalar m1 = static_cast<scalar>(s1 / static_cast<double>(hw));
            const scalar m2 = static_cast<scalar>(s2 / static_cast<double>(hw));
            scalar* gxp = gx + pl * hw;
            for (size_t i = 0; i < hw; ++i) {
              gxp[i] += k * (gp[i] - m1 - xh[i] * m2);
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const scalar* pa = a.data();
  const scalar* pb = b.data();
  scalar* o = out.data();
  parallel_elems(a.size(), [&](size_t lo, size_t hi) {
    for (size_t i = lo; i < hi; ++i) o[i] = pa[i] + pb[i];
  });
  out.ensure_finite("add");

  if (tracking({&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_c = a, b_c = b, out_c = out;
    GradTape::active()->record("add", [a_c, b_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const size_t n = out_c.size();
      if (a_c.requires_grad()) {
        scalar* ga = a_c.grad().data();
        parallel_elems(n, [&](size_t lo, size_t hi) {
          for (size_t i = lo; i < hi; ++i) ga[i] += g[i];
        });
      }
      if (b_c.requires_grad()) {
        scalar* gb = b_c.grad().data();
        parallel_elems(n, [&](size_t lo, size_t hi) {
          for (size_t i = lo; i < hi; ++i) gb[i] += g[i];
        });
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const scalar* pa = a.data();
  const scalar* pb = b.data();
  scalar* o = out.data();
  const size_t n = a.size();
  for (size_t i = 0; i < n; ++i) o[i] = pa[i] * pb[i];
  out.ensure_finite("mul");

  if (tracking({&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_c = a, b_c = b, out_c = out;
    GradTape::active()->record("mul", [a_c, b_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const size_t n = out_c.size();
      if (a_c.requires_grad()) {
        scalar* ga = a_c.grad().data();
        const scalar* pb = b_c.data();
        for (size_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
      }
      if (b_c.requires_grad()) {
        scalar* gb = b_c.grad().data();
        const scalar* pa = a_c.data();
        for (size_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& x, scalar k) {
  Tensor out = Tensor::zeros(x.shape());
  const scalar* in = x.data();
  scalar* o = out.data();
  const size_t n = x.size();
  for (size_t i = 0; i < n; ++i) o[i] = k * in[i];
  out.ensure_finite("scale");

  if (tracking({&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x, out_c = out;
    GradTape::active()->record("scale", [x_c, out_c, k]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      scalar* gx = x_c.grad().data();
      const size_t n = out_c.size();
      for (size_t i = 0; i < n; ++i) gx[i] += k * g[i];
    });
  }
  return out;
}

Tensor mul_channelwise(const Tensor& x, const Tensor& s) {
  expect_ndim(x, 4, "mul_channelwise", "input");
  expect_ndim(s, 2, "mul_channelwise", "scales");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (s.dim(0) != n || s.dim(1) != c) {
    throw std::invalid_argument("mul_channelwise: scales shape " + Tensor::shape_str(s.shape()) +
                                " does not match input batch/channel dims [" + std::to_string(n) +
                                "," + std::to_string(c) + "]");
  }
  const size_t hw = static_cast<size_t>(h) * w;
  Tensor out = Tensor::zeros(x.shape());
  const scalar* in = x.data();
  const scalar* ps = s.data();
  scalar* o = out.data();
#pragma omp parallel for schedule(static) if (n * c > 1 && hw >= 4096)
  for (int pl = 0; pl < n * c; ++pl) {
    const scalar sv = ps[pl];
    const scalar* ip = in + pl * hw;
    scalar* op = o + pl * hw;
    for (size_t i = 0; i < hw; ++i) op[i] = sv * ip[i];
  }
  out.ensure_finite("mul_channelwise");

  if (tracking({&x, &s})) {
    out.set_requires_grad(true);
    Tensor x_c = x, s_c = s, out_c = out;
    GradTape::active()->record("mul_channelwise", [x_c, s_c, out_c, n, c, hw]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      const scalar* in = x_c.data();
      const scalar* ps = s_c.data();
      scalar* gx = x_c.requires_grad() ? x_c.grad().data() : nullptr;
      scalar* gs = s_c.requires_grad() ? s_c.grad().data() : nullptr;
#pragma omp parallel for schedule(static) if (n * c > 1 && hw >= 4096)
      for (int pl = 0; pl < n * c; ++pl) {
        const scalar* gp = g + pl * hw;
        if (gx) {
          const scalar sv = ps[pl];
          scalar* gxp = gx + pl * hw;
          for (size_t i = 0; i < hw; ++i) gxp[i] += sv * gp[i];
        }
        if (gs) gs[pl] += static_cast<scalar>(dot_block(gp, in + pl * hw, static_cast<int>(hw)));
      }
    });
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  expect_ndim(a, 4, "concat_channels", "first input");
  expect_ndim(b, 4, "concat_channels", "second input");
  const int n = a.dim(0), ca = a.dim(1), h = a.dim(2), w = a.dim(3);
  const int cb = b.dim(1);
  if (b.dim(0) != n || b.dim(2) != h || b.dim(3) != w) {
    throw std::invalid_argument("concat_channels: non-channel dims differ, " +
                                Tensor::shape_str(a.shape()) + " vs " +
                                Tensor::shape_str(b.shape()));
  }
  const size_t hw = static_cast<size_t>(h) * w;
  Tensor out = Tensor::zeros({n, ca + cb, h, w});
  const scalar* pa = a.data();
  const scalar* pb = b.data();
  scalar* o = out.data();
  for (int i = 0; i < n; ++i) {
    std::memcpy(o + static_cast<size_t>(i) * (ca + cb) * hw, pa + static_cast<size_t>(i) * ca * hw,
                ca * hw * sizeof(scalar));
    std::memcpy(o + (static_cast<size_t>(i) * (ca + cb) + ca) * hw,
                pb + static_cast<size_t>(i) * cb * hw, cb * hw * sizeof(scalar));
  }
  out.ensure_finite("concat_channels");

  if (tracking({&a, &b})) {
    out.set_requires_grad(true);
    Tensor a_c = a, b_c = b, out_c = out;
    GradTape::active()->record("concat_channels", [a_c, b_c, out_c, n, ca, cb, hw]() mutable {
      if (!out_c.has_grad()) return;
      const scalar* g = out_c.grad().data();
      if (a_c.requires_grad()) {
        scalar* ga = a_c.grad().data();
        for (int i = 0; i < n; ++i) {
          const scalar* gp = g + static_cast<size_t>(i) * (ca + cb) * hw;
          scalar* gap = ga + static_cast<size_t>(i) * ca * hw;
          for (size_t k = 0; k < ca * hw; ++k) gap[k] += gp[k];
        }
      }
      if (b_c.requires_grad()) {
        scalar* gb = b_c.grad().data();
        for (int i = 0; i < n; ++i) {
          const scalar* gp = g + (static_cast<size_t>(i) * (ca + cb) + ca) * hw;
          scalar* gbp = gb + static_cast<size_t>(i) * cb * hw;
          for (size_t k = 0; k < cb * hw; ++k) gbp[k] += gp[k];
        }
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({1});
  out[0] = static_cast<scalar>(sum_block(x.data(), static_cast<int>(x.size())));
  out.ensure_finite("sum");

  if (tracking({&x})) {
    out.set_requires_grad(true);
    Tensor x_c = x, out_c = out;
    GradTape::active()->record("sum", [x_c, out_c]() mutable {
      if (!out_c.has_grad()) return;
      const scalar g = out_c.grad()[0];
      scalar* gx = x_c.grad().data();
      const size_t n = x_c.size();
      for (size_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return out;
}

}  // namespace skunet
