#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "skunet/volume.hpp"

namespace skunet::png {

// Minimal RGB8 PNG writer (zlib-deflated, filter 0). Diagnostics only.
void write_rgb(const std::filesystem::path& path, int width, int height,
               const std::vector<uint8_t>& rgb);

// Grayscale slice with class-colored contours (LV red, LVM green, RV blue).
void write_overlay(const std::filesystem::path& path, const PatientVolume& img,
                   const LabelVolume& lbl, int slice);

}  // namespace skunet::png
