#include "skunet/png.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace skunet::png {

namespace {

void put_u32_be(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void write_chunk(std::ofstream& os, const char type[4], const std::vector<uint8_t>& data) {
  std::vector<uint8_t> head;
  put_u32_be(head, static_cast<uint32_t>(data.size()));
  os.write(reinterpret_cast<const char*>(head.data()), 4);
  os.write(type, 4);
  if (!data.empty()) os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(type), 4);
  if (!data.empty()) crc = crc32(crc, data.data(), static_cast<uInt>(data.size()));
  std::vector<uint8_t> tail;
  put_u32_be(tail, static_cast<uint32_t>(crc));
  os.write(reinterpret_cast<const char*>(tail.data()), 4);
}

}  // namespace

void write_rgb(const std::filesystem::path& path, int width, int height,
               const std::vector<uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(width) * height * 3) {
    throw std::invalid_argument("write_rgb: buffer size does not match dimensions");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  static const uint8_t sig[8] = {137, 80, 78, 71, 13, 10, 26, 10};
  os.write(reinterpret_cast<const char*>(sig), 8);

  std::vector<uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<uint32_t>(width));
  put_u32_be(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // RGB
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // no interlace
  write_chunk(os, "IHDR", ihdr);

  // raw scanlines with filter byte 0
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height) * (1 + static_cast<size_t>(width) * 3));
  for (int y = 0; y < height; ++y) {
    raw.push_back(0);
    const uint8_t* row = rgb.data() + static_cast<size_t>(y) * width * 3;
    raw.insert(raw.end(), row, row + static_cast<size_t>(width) * 3);
  }
  uLongf comp_size = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_size);
  if (compress2(comp.data(), &comp_size, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("png deflate failed for " + path.string());
  }
  comp.resize(comp_size);
  write_chunk(os, "IDAT", comp);
  write_chunk(os, "IEND", {});
}

void write_overlay(const std::filesystem::path& path, const PatientVolume& img,
                   const LabelVolume& lbl, int slice) {
  const int h = img.height, w = img.width;
  if (lbl.height != h || lbl.width != w || slice < 0 || slice >= img.slices ||
      slice >= lbl.slices) {
    throw std::invalid_argument("write_overlay: slice/frame mismatch");
  }
  float lo = img.at(slice, 0, 0), hi = lo;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      lo = std::min(lo, img.at(slice, y, x));
      hi = std::max(hi, img.at(slice, y, x));
    }
  }
  const float range = hi > lo ? hi - lo : 1.0f;

  static const uint8_t colors[4][3] = {{0, 0, 0}, {220, 40, 40}, {40, 200, 40}, {70, 110, 235}};
  std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const uint8_t g =
          static_cast<uint8_t>(255.0f * (img.at(slice, y, x) - lo) / range);
      uint8_t* px = rgb.data() + (static_cast<size_t>(y) * w + x) * 3;
      const uint8_t cls = lbl.at(slice, y, x);
      bool contour = false;
      if (cls != 0) {
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4 && !contour; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w || lbl.at(slice, ny, nx) != cls) {
            contour = true;
          }
        }
      }
      if (contour) {
        std::memcpy(px, colors[cls], 3);
      } else {
        px[0] = px[1] = px[2] = g;
      }
    }
  }
  write_rgb(path, w, h, rgb);
}

}  // namespace skunet::png
