#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "skunet/network.hpp"
#include "skunet/tensor.hpp"
#include "skunet/volume.hpp"

namespace skunet::io {

// TNSR binary container: magic "SKTN", version 0x01, dtype byte
// (0x00 = float32, 0x01 = uint8), ndim byte, ndim little-endian u32 dims,
// then the row-major little-endian payload. No compression.
inline constexpr uint8_t kDtypeF32 = 0x00;
inline constexpr uint8_t kDtypeU8 = 0x01;

void write_tnsr_f32(const std::filesystem::path& path, const std::vector<int>& shape,
                    const float* data);
void write_tnsr_u8(const std::filesystem::path& path, const std::vector<int>& shape,
                   const uint8_t* data);

struct TnsrData {
  uint8_t dtype;
  std::vector<int> shape;
  std::vector<float> f32;   // filled when dtype == kDtypeF32
  std::vector<uint8_t> u8;  // filled when dtype == kDtypeU8
  size_t numel() const;
};

TnsrData read_tnsr(const std::filesystem::path& path);

// Flat `key = value` text files.
void write_kv(const std::filesystem::path& path,
              const std::vector<std::pair<std::string, std::string>>& entries);
std::map<std::string, std::string> read_kv(const std::filesystem::path& path);

// Paired volume files: <id>_img.tnsr (float32 [S,H,W]), <id>_lbl.tnsr
// (uint8 [S,H,W]), <id>_meta.txt (spacing, patient id, sequence tag).
void write_patient(const std::filesystem::path& dir, const std::string& file_id,
                   const PatientVolume& img, const LabelVolume& lbl);
PatientVolume read_patient_image(const std::filesystem::path& dir, const std::string& file_id);
LabelVolume read_patient_labels(const std::filesystem::path& dir, const std::string& file_id);
void write_label_volume(const std::filesystem::path& dir, const std::string& file_id,
                        const LabelVolume& lbl);

// Checkpoint directory: manifest.txt (`name<TAB>shape<TAB>filename` lines),
// one TNSR file per parameter, config.txt (architecture + training metadata).
void save_checkpoint(const std::filesystem::path& dir, const net::Model& model,
                     const std::vector<std::pair<std::string, std::string>>& metadata);
net::Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace skunet::io
