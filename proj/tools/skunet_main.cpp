#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "skunet/gradcheck.hpp"
#include "skunet/io.hpp"
#include "skunet/metrics.hpp"
#include "skunet/network.hpp"
#include "skunet/phantom.hpp"
#include "skunet/png.hpp"
#include "skunet/postprocess.hpp"
#include "skunet/preprocess.hpp"

namespace fs = std::filesystem;
using namespace skunet;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// every run writes its fully resolved configuration next to its outputs
void write_run_config(const fs::path& dir,
                      std::vector<std::pair<std::string, std::string>> entries) {
  fs::create_directories(dir);
  io::write_kv(dir / "run_config.txt", entries);
}

// largest crop side <= cap that the depth-deep pooling pyramid divides
int crop_size_for(int image_extent, int depth, int cap = 96) {
  const int unit = 1 << depth;
  const int side = std::min(cap, image_extent) / unit * unit;
  if (side < unit) {
    throw std::runtime_error("image extent " + std::to_string(image_extent) +
                             " too small for depth " + std::to_string(depth));
  }
  return side;
}

struct ManifestRow {
  std::string patient_id;
  std::vector<std::string> variants;
  std::string split;
};

std::vector<ManifestRow> read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path.string());
  std::vector<ManifestRow> rows;
  std::string line;
  std::getline(is, line);  // header
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestRow row;
    std::string variants;
    if (!std::getline(ss, row.patient_id, ',') || !std::getline(ss, variants, ',') ||
        !std::getline(ss, row.split, ',')) {
      throw std::runtime_error("malformed manifest row: " + line);
    }
    std::stringstream vs(variants);
    std::string v;
    while (std::getline(vs, v, ';')) row.variants.push_back(v);
    rows.push_back(std::move(row));
  }
  return rows;
}

struct PreprocessedVolume {
  PatientVolume image;  // cropped + z-scored
  LabelVolume labels;   // cropped
  prep::CropBox box;
  int orig_h = 0, orig_w = 0;
};

PreprocessedVolume preprocess_volume(const PatientVolume& img, const LabelVolume* lbl,
                                     int crop_size) {
  PreprocessedVolume out;
  out.orig_h = img.height;
  out.orig_w = img.width;
  out.box = prep::locate_roi(img, crop_size);
  PatientVolume cropped = prep::crop(img, out.box);
  out.image = prep::zscore(cropped).volume;
  if (lbl) out.labels = prep::crop(*lbl, out.box);
  return out;
}

// ---- gen-data ----

struct GenDataArgs {
  std::string out;
  int n_train = 60;
  int n_val = 10;
  int size = 96;
  uint64_t seed = 42;
  bool overwrite = false;
};

int run_gen_data(const GenDataArgs& a) {
  phantom::generate_dataset(a.n_train, a.n_val, a.seed, a.out, a.size, a.overwrite);
  write_run_config(a.out, {{"command", "gen-data"},
                           {"out", a.out},
                           {"n_train", std::to_string(a.n_train)},
                           {"n_val", std::to_string(a.n_val)},
                           {"size", std::to_string(a.size)},
                           {"seed", std::to_string(a.seed)},
                           {"overwrite", a.overwrite ? "true" : "false"}});
  std::cout << "wrote " << (a.n_train + a.n_val) << " patients (3 sequence variants each) to "
            << a.out << "\n";
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string data;
  std::string out;
  int epochs = 20;
  int base_width = 32;
  int depth = 4;
  double lr = 1e-3;
  int batch = 4;
  uint64_t seed = 42;
  bool no_se = false;
  bool no_sk = false;
  bool no_augment = false;
};

std::vector<net::TrainSample> load_training_samples(const fs::path& data_dir, int crop_size) {
  const auto manifest = read_manifest(data_dir / "manifest.csv");
  std::vector<net::TrainSample> samples;
  for (const auto& row : manifest) {
    if (row.split != "train") continue;
    for (const auto& variant : row.variants) {
      const std::string file_id = row.patient_id + "_" + variant;
      PatientVolume img = io::read_patient_image(data_dir / "train", file_id);
      LabelVolume lbl = io::read_patient_labels(data_dir / "train", file_id);
      PreprocessedVolume pv = preprocess_volume(img, &lbl, crop_size);
      const size_t hw = static_cast<size_t>(crop_size) * crop_size;
      for (int s = 0; s < pv.image.slices; ++s) {
        net::TrainSample sample;
        sample.image = prep::stack_neighbors(pv.image, s);
        sample.label.assign(pv.labels.voxels.begin() + s * hw,
                            pv.labels.voxels.begin() + (s + 1) * hw);
        samples.push_back(std::move(sample));
      }
    }
  }
  if (samples.empty()) {
    throw std::runtime_error("no training samples found under " + data_dir.string());
  }
  return samples;
}

int run_train(const TrainArgs& a) {
  const auto manifest = read_manifest(fs::path(a.data) / "manifest.csv");
  if (manifest.empty()) throw std::runtime_error("empty manifest in " + a.data);
  // probe one training volume for the image size
  const auto first_train =
      std::find_if(manifest.begin(), manifest.end(),
                   [](const ManifestRow& r) { return r.split == "train"; });
  if (first_train == manifest.end()) throw std::runtime_error("manifest has no train split");
  PatientVolume probe = io::read_patient_image(
      fs::path(a.data) / "train", first_train->patient_id + "_" + first_train->variants.front());
  const int crop_size = crop_size_for(std::min(probe.height, probe.width), a.depth);

  net::ModelConfig cfg;
  cfg.base_width = a.base_width;
  cfg.depth = a.depth;
  cfg.use_se = !a.no_se;
  cfg.use_sk = !a.no_sk;
  cfg.seed = a.seed;
  net::Model model = net::build_model(cfg);
  std::cout << "model: base_width " << cfg.base_width << ", depth " << cfg.depth << ", "
            << model.parameter_count() << " parameters, use_se "
            << (cfg.use_se ? "true" : "false") << ", use_sk " << (cfg.use_sk ? "true" : "false")
            << "\n";

  const auto samples = load_training_samples(a.data, crop_size);
  std::cout << "training samples: " << samples.size() << " (crop " << crop_size << ")\n";

  net::TrainConfig tc;
  tc.lr = a.lr;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch;
  tc.seed = a.seed;
  tc.augment = !a.no_augment;
  const net::TrainResult result = net::train(model, samples, tc, &std::cout);

  std::vector<std::pair<std::string, std::string>> metadata = {
      {"trained_epochs", std::to_string(a.epochs)},
      {"lr", fmt_double(a.lr)},
      {"batch_size", std::to_string(a.batch)},
      {"crop_size", std::to_string(crop_size)},
  };
  if (!result.epoch_mean_loss.empty()) {
    metadata.push_back({"final_mean_loss", fmt_double(result.epoch_mean_loss.back())});
  }
  io::save_checkpoint(a.out, model, metadata);

  std::ofstream log(fs::path(a.out) / "training_log.csv");
  log << "epoch,step,loss,lr\n";
  for (const auto& row : result.rows) {
    log << row.epoch << ',' << row.step << ',' << fmt_double(row.loss) << ','
        << fmt_double(row.lr) << "\n";
  }
  log.close();

  write_run_config(a.out, {{"command", "train"},
                           {"data", a.data},
                           {"out", a.out},
                           {"epochs", std::to_string(a.epochs)},
                           {"base_width", std::to_string(a.base_width)},
                           {"depth", std::to_string(a.depth)},
                           {"lr", fmt_double(a.lr)},
                           {"batch", std::to_string(a.batch)},
                           {"seed", std::to_string(a.seed)},
                           {"use_se", cfg.use_se ? "true" : "false"},
                           {"use_sk", cfg.use_sk ? "true" : "false"},
                           {"augment", tc.augment ? "true" : "false"}});
  std::cout << "checkpoint written to " << a.out << "\n";
  return 0;
}

// ---- infer ----

struct InferArgs {
  std::string ckpt;
  std::string input;
  std::string output;
  bool no_postprocess = false;
};

int run_infer(const InferArgs& a) {
  std::string base = a.input;
  const std::string suffix = "_img.tnsr";
  if (base.size() > suffix.size() && base.ends_with(suffix)) {
    base = base.substr(0, base.size() - suffix.size());
  }
  const fs::path input_path(base);
  const fs::path dir = input_path.parent_path().empty() ? "." : input_path.parent_path();
  const std::string file_id = input_path.filename().string();

  net::Model model = io::load_checkpoint(a.ckpt);
  const auto ckpt_cfg = io::read_kv(fs::path(a.ckpt) / "config.txt");
  const int crop_size = ckpt_cfg.count("crop_size") ? std::stoi(ckpt_cfg.at("crop_size")) : 96;

  PatientVolume img = io::read_patient_image(dir, file_id);
  PreprocessedVolume pv = preprocess_volume(img, nullptr, crop_size);

  LabelVolume pred;
  pred.slices = pv.image.slices;
  pred.height = crop_size;
  pred.width = crop_size;
  pred.voxels.assign(pv.image.size(), 0);
  pred.spacing = img.spacing;
  pred.patient_id = img.patient_id;

  const size_t hw = static_cast<size_t>(crop_size) * crop_size;
  const int chunk = 8;
  for (int s0 = 0; s0 < pv.image.slices; s0 += chunk) {
    const int n = std::min(chunk, pv.image.slices - s0);
    Tensor batch = Tensor::zeros({n, 3, crop_size, crop_size});
    for (int i = 0; i < n; ++i) {
      Tensor stack = prep::stack_neighbors(pv.image, s0 + i);
      std::copy(stack.values().begin(), stack.values().end(),
                batch.values().begin() + static_cast<size_t>(i) * stack.size());
    }
    const Tensor logits = net::forward(model, batch);
    const auto labels = net::predict_labels(logits);
    std::copy(labels.begin(), labels.end(), pred.voxels.begin() + static_cast<size_t>(s0) * hw);
  }

  if (!a.no_postprocess) {
    auto lcc = post::largest_cc_constraint(pred);
    if (lcc.empty_warning) {
      std::cerr << "warning: prediction has no foreground voxels; postprocess skipped\n";
    }
    pred = std::move(lcc.volume);
  }

  LabelVolume full = prep::uncrop(pred, pv.box, img.height, img.width);
  full.patient_id = img.patient_id;

  fs::create_directories(a.output);
  io::write_label_volume(a.output, file_id, full);
  for (int s = 0; s < img.slices; ++s) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_slice%02d.png", file_id.c_str(), s);
    png::write_overlay(fs::path(a.output) / name, img, full, s);
  }
  write_run_config(a.output, {{"command", "infer"},
                              {"ckpt", a.ckpt},
                              {"input", a.input},
                              {"output", a.output},
                              {"no_postprocess", a.no_postprocess ? "true" : "false"}});
  std::cout << "wrote " << file_id << " prediction (" << full.slices << " slices) to " << a.output
            << "\n";
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string pred;
  std::string gt;
  std::string report;
};

int run_eval(const EvalArgs& a) {
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(a.pred)) {
    const std::string name = entry.path().filename().string();
    const std::string suffix = "_lbl.tnsr";
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) {
    throw std::runtime_error("patient-set mismatch: no *_lbl.tnsr predictions in " + a.pred);
  }
  std::vector<metrics::PatientReport> reports;
  for (const auto& id : ids) {
    if (!fs::exists(fs::path(a.gt) / (id + "_lbl.tnsr"))) {
      throw std::runtime_error("patient-set mismatch: prediction " + id +
                               " has no ground truth in " + a.gt);
    }
    const LabelVolume pred = io::read_patient_labels(a.pred, id);
    LabelVolume gt = io::read_patient_labels(a.gt, id);
    gt.patient_id = id;
    reports.push_back(metrics::evaluate(pred, gt));
    if (reports.back().missing_surface) {
      std::cerr << "warning: " << id << " has an empty surface; distances recorded as nan\n";
    }
  }
  const auto agg = metrics::aggregate(reports);
  metrics::write_csv(a.report, reports, agg);
  std::cout << metrics::format_table(agg);
  std::cout << "report written to " << a.report << " (" << reports.size() << " patients)\n";
  return 0;
}

// ---- gradcheck ----

int run_gradcheck(bool full) {
  const auto cases = gradcheck::default_suite(full);
  const auto result = gradcheck::run_suite(cases, std::cout);
  if (!result.all_pass) {
    for (const auto& row : result.rows) {
      if (!row.pass) {
        std::cout << "gradient check FAILED for " << row.name << " (max rel err "
                  << fmt_double(row.max_rel_err) << ")\n";
      }
    }
    return 1;
  }
  std::cout << "all gradient checks passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SK-Unet cardiac segmentation: phantom data, training, inference, evaluation"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
  cmd_gen->add_option("--out", gen.out, "output directory")->required();
  cmd_gen->add_option("--n-train", gen.n_train, "training patients")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--n-val", gen.n_val, "validation patients")->check(CLI::PositiveNumber);
  cmd_gen->add_option("--size", gen.size, "slice size in pixels")->check(CLI::Range(32, 512));
  cmd_gen->add_option("--seed", gen.seed, "random seed");
  cmd_gen->add_flag("--overwrite", gen.overwrite, "replace an existing non-empty directory");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "train a model on a generated dataset");
  cmd_train->add_option("--data", tr.data, "dataset directory (from gen-data)")->required();
  cmd_train->add_option("--out", tr.out, "checkpoint output directory")->required();
  cmd_train->add_option("--epochs", tr.epochs, "training epochs")->check(CLI::NonNegativeNumber);
  cmd_train->add_option("--base-width", tr.base_width, "channels at full resolution")
      ->check(CLI::Range(4, 256));
  cmd_train->add_option("--depth", tr.depth, "number of poolings")->check(CLI::Range(1, 6));
  cmd_train->add_option("--lr", tr.lr, "Adam learning rate")->check(CLI::NonNegativeNumber);
  cmd_train->add_option("--batch", tr.batch, "batch size")->check(CLI::PositiveNumber);
  cmd_train->add_option("--seed", tr.seed, "random seed");
  cmd_train->add_flag("--no-se", tr.no_se, "disable squeeze-and-excitation blocks");
  cmd_train->add_flag("--no-sk", tr.no_sk, "disable selective-kernel blocks");
  cmd_train->add_flag("--no-augment", tr.no_augment, "disable training augmentation");

  InferArgs inf;
  auto* cmd_infer = app.add_subcommand("infer", "segment one patient volume");
  cmd_infer->add_option("--ckpt", inf.ckpt, "checkpoint directory")->required();
  cmd_infer->add_option("--input", inf.input, "patient file base, e.g. data/val/p060_lge")
      ->required();
  cmd_infer->add_option("--output", inf.output, "output directory")->required();
  cmd_infer->add_flag("--no-postprocess", inf.no_postprocess,
                      "skip the largest-component constraint and hole filling");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "compare predictions against ground truth");
  cmd_eval->add_option("--pred", ev.pred, "directory of predicted label volumes")->required();
  cmd_eval->add_option("--gt", ev.gt, "directory of ground-truth label volumes")->required();
  cmd_eval->add_option("--report", ev.report, "output CSV path")->required();

  bool gc_full = false;
  auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  cmd_gc->add_flag("--full", gc_full, "include the end-to-end network check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (cmd_gen->parsed()) return run_gen_data(gen);
    if (cmd_train->parsed()) return run_train(tr);
    if (cmd_infer->parsed()) return run_infer(inf);
    if (cmd_eval->parsed()) return run_eval(ev);
    if (cmd_gc->parsed()) return run_gradcheck(gc_full);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
