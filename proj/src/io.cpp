#include "skunet/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace skunet::io {

namespace fs = std::filesystem;

namespace {

constexpr char kMagic[4] = {'S', 'K', 'T', 'N'};
constexpr uint8_t kVersion = 0x01;

void put_u32_le(std::ostream& os, uint32_t v) {
  const uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                        static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32_le(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_header(std::ostream& os, uint8_t dtype, const std::vector<int>& shape) {
  os.write(kMagic, 4);
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(dtype));
  os.put(static_cast<char>(shape.size()));
  for (int d : shape) {
    if (d <= 0) throw std::invalid_argument("tnsr: non-positive dimension");
    put_u32_le(os, static_cast<uint32_t>(d));
  }
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  return os;
}

}  // namespace

size_t TnsrData::numel() const {
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  return n;
}

void write_tnsr_f32(const fs::path& path, const std::vector<int>& shape, const float* data) {
  auto os = open_out(path);
  write_header(os, kDtypeF32, shape);
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  // x86: float32 memory layout is already little-endian
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  if (!os) throw std::runtime_error("short write: " + path.string());
}

void write_tnsr_u8(const fs::path& path, const std::vector<int>& shape, const uint8_t* data) {
  auto os = open_out(path);
  write_header(os, kDtypeU8, shape);
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!os) throw std::runtime_error("short write: " + path.string());
}

TnsrData read_tnsr(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("not a TNSR file: " + path.string());
  }
  const int version = is.get();
  if (version != kVersion) {
    throw std::runtime_error("unsupported TNSR version " + std::to_string(version) + " in " +
                             path.string());
  }
  TnsrData t;
  t.dtype = static_cast<uint8_t>(is.get());
  if (t.dtype != kDtypeF32 && t.dtype != kDtypeU8) {
    throw std::runtime_error("unsupported TNSR dtype in " + path.string());
  }
  const int ndim = is.get();
  t.shape.resize(static_cast<size_t>(ndim));
  for (auto& d : t.shape) d = static_cast<int>(get_u32_le(is));
  const size_t n = t.numel();
  if (t.dtype == kDtypeF32) {
    t.f32.resize(n);
    is.read(reinterpret_cast<char*>(t.f32.data()), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    t.u8.resize(n);
    is.read(reinterpret_cast<char*>(t.u8.data()), static_cast<std::streamsize>(n));
  }
  if (!is) throw std::runtime_error("truncated TNSR file: " + path.string());
  return t;
}

void write_kv(const fs::path& path,
              const std::vector<std::pair<std::string, std::string>>& entries) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& [k, v] : entries) os << k << " = " << v << "\n";
}

std::map<std::string, std::string> read_kv(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("malformed line in " + path.string() + ": " + line);
    }
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_meta(const fs::path& path, const PatientVolume& v) {
  write_kv(path, {{"patient_id", v.patient_id},
                  {"sequence", to_string(v.tag)},
                  {"spacing_row", fmt_double(v.spacing.row)},
                  {"spacing_col", fmt_double(v.spacing.col)},
                  {"spacing_slice", fmt_double(v.spacing.slice)}});
}

Spacing spacing_from_meta(const std::map<std::string, std::string>& kv, const fs::path& path) {
  Spacing sp;
  try {
    sp.row = std::stod(kv.at("spacing_row"));
    sp.col = std::stod(kv.at("spacing_col"));
    sp.slice = std::stod(kv.at("spacing_slice"));
  } catch (const std::out_of_range&) {
    throw std::runtime_error("meta file missing spacing keys: " + path.string());
  }
  return sp;
}

}  // namespace

void write_patient(const fs::path& dir, const std::string& file_id, const PatientVolume& img,
                   const LabelVolume& lbl) {
  img.validate();
  lbl.validate();
  fs::create_directories(dir);
  write_tnsr_f32(dir / (file_id + "_img.tnsr"), {img.slices, img.height, img.width},
                 img.voxels.data());
  write_tnsr_u8(dir / (file_id + "_lbl.tnsr"), {lbl.slices, lbl.height, lbl.width},
                lbl.voxels.data());
  write_meta(dir / (file_id + "_meta.txt"), img);
}

PatientVolume read_patient_image(const fs::path& dir, const std::string& file_id) {
  const fs::path img_path = dir / (file_id + "_img.tnsr");
  TnsrData t = read_tnsr(img_path);
  if (t.dtype != kDtypeF32 || t.shape.size() != 3) {
    throw std::runtime_error("expected float32 [S,H,W] volume: " + img_path.string());
  }
  PatientVolume v;
  v.slices = t.shape[0];
  v.height = t.shape[1];
  v.width = t.shape[2];
  v.voxels = std::move(t.f32);
  const auto kv = read_kv(dir / (file_id + "_meta.txt"));
  v.spacing = spacing_from_meta(kv, dir / (file_id + "_meta.txt"));
  v.patient_id = kv.count("patient_id") ? kv.at("patient_id") : file_id;
  v.tag = kv.count("sequence") ? sequence_tag_from(kv.at("sequence")) : SequenceTag::phantom;
  v.validate();
  return v;
}

LabelVolume read_patient_labels(const fs::path& dir, const std::string& file_id) {
  const fs::path lbl_path = dir / (file_id + "_lbl.tnsr");
  TnsrData t = read_tnsr(lbl_path);
  if (t.dtype != kDtypeU8 || t.shape.size() != 3) {
    throw std::runtime_error("expected uint8 [S,H,W] volume: " + lbl_path.string());
  }
  LabelVolume v;
  v.slices = t.shape[0];
  v.height = t.shape[1];
  v.width = t.shape[2];
  v.voxels = std::move(t.u8);
  const auto kv = read_kv(dir / (file_id + "_meta.txt"));
  v.spacing = spacing_from_meta(kv, dir / (file_id + "_meta.txt"));
  v.patient_id = kv.count("patient_id") ? kv.at("patient_id") : file_id;
  v.validate();
  return v;
}

void write_label_volume(const fs::path& dir, const std::string& file_id, const LabelVolume& lbl) {
  lbl.validate();
  fs::create_directories(dir);
  write_tnsr_u8(dir / (file_id + "_lbl.tnsr"), {lbl.slices, lbl.height, lbl.width},
                lbl.voxels.data());
  write_kv(dir / (file_id + "_meta.txt"),
           {{"patient_id", lbl.patient_id},
            {"sequence", "phantom"},
            {"spacing_row", fmt_double(lbl.spacing.row)},
            {"spacing_col", fmt_double(lbl.spacing.col)},
            {"spacing_slice", fmt_double(lbl.spacing.slice)}});
}

namespace {

std::string shape_token(const std::vector<int>& shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

std::vector<int> parse_shape_token(const std::string& tok) {
  std::vector<int> shape;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(std::stoi(part));
  return shape;
}

const char* kConfigKeys[] = {"base_width", "depth",      "num_classes",     "in_channels",
                             "use_se",     "use_sk",     "seed",            "trained_epochs",
                             "lr",         "batch_size", "final_mean_loss", "crop_size"};

}  // namespace

void save_checkpoint(const fs::path& dir, const net::Model& model,
                     const std::vector<std::pair<std::string, std::string>>& metadata) {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  std::vector<float> buf;
  for (const auto& [name, t] : model.named_params) {
    const std::string filename = name + ".tnsr";
    manifest << name << '\t' << shape_token(t.shape()) << '\t' << filename << '\n';
#ifdef SKUNET_SCALAR_F64
    buf.assign(t.values().begin(), t.values().end());
    write_tnsr_f32(dir / filename, t.shape(), buf.data());
#else
    (void)buf;
    write_tnsr_f32(dir / filename, t.shape(), t.data());
#endif
  }
  manifest.close();

  const auto& cfg = model.cfg;
  std::vector<std::pair<std::string, std::string>> kv = {
      {"base_width", std::to_string(cfg.base_width)},
      {"depth", std::to_string(cfg.depth)},
      {"num_classes", std::to_string(cfg.num_classes)},
      {"in_channels", std::to_string(cfg.in_channels)},
      {"use_se", cfg.use_se ? "true" : "false"},
      {"use_sk", cfg.use_sk ? "true" : "false"},
      {"seed", std::to_string(cfg.seed)},
  };
  for (const auto& m : metadata) kv.push_back(m);
  write_kv(dir / "config.txt", kv);
}

net::Model load_checkpoint(const fs::path& dir) {
  const auto kv = read_kv(dir / "config.txt");
  for (const auto& [k, v] : kv) {
    if (std::find_if(std::begin(kConfigKeys), std::end(kConfigKeys),
                     [&](const char* key) { return k == key; }) == std::end(kConfigKeys)) {
      throw std::runtime_error("config.txt: unknown key '" + k + "' in " + dir.string());
    }
  }
  net::ModelConfig cfg;
  try {
    cfg.base_width = std::stoi(kv.at("base_width"));
    cfg.depth = std::stoi(kv.at("depth"));
    cfg.num_classes = std::stoi(kv.at("num_classes"));
    cfg.in_channels = std::stoi(kv.at("in_channels"));
    cfg.use_se = kv.at("use_se") == "true";
    cfg.use_sk = kv.at("use_sk") == "true";
    cfg.seed = std::stoull(kv.at("seed"));
  } catch (const std::out_of_range&) {
    throw std::runtime_error("config.txt: missing architecture key in " + dir.string());
  }

  net::Model model = net::build_model(cfg);

  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw std::runtime_error("missing checkpoint manifest in " + dir.string());
  std::string line;
  size_t loaded = 0;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string name, shape_tok, filename;
    if (!std::getline(ss, name, '\t') || !std::getline(ss, shape_tok, '\t') ||
        !std::getline(ss, filename, '\t')) {
      throw std::runtime_error("malformed manifest line: " + line);
    }
    Tensor* p = model.find_param(name);
    if (!p) throw std::runtime_error("checkpoint names unknown parameter '" + name + "'");
    const auto shape = parse_shape_token(shape_tok);
    if (shape != p->shape()) {
      throw std::runtime_error("checkpoint shape mismatch for '" + name + "': file " + shape_tok +
                               " vs model " + Tensor::shape_str(p->shape()));
    }
    TnsrData t = read_tnsr(dir / filename);
    if (t.dtype != kDtypeF32 || t.shape != p->shape()) {
      throw std::runtime_error("checkpoint tensor mismatch in " + filename);
    }
    std::copy(t.f32.begin(), t.f32.end(), p->data());
    ++loaded;
  }
  if (loaded != model.named_params.size()) {
    throw std::runtime_error("checkpoint has " + std::to_string(loaded) + " parameters, model expects " +
                             std::to_string(model.named_params.size()));
  }
  return model;
}

}  // namespace skunet::io
