#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "skunet/blocks.hpp"
#include "skunet/tensor.hpp"

namespace skunet::net {

struct ModelConfig {
  int base_width = 32;
  int depth = 4;
  int num_classes = 4;  // background, LV, LVM, RV
  int in_channels = 3;  // stacked neighbor slices
  bool use_se = true;
  bool use_sk = true;
  uint64_t seed = 0;
};

struct EncoderLevel {
  blocks::ConvBlockParams cb;
  std::optional<blocks::SEResParams> se;
};

struct DecoderLevel {
  blocks::ConvBlockParams up;   // 3x3 conv halving channels after upsampling
  blocks::ConvBlockParams cat;  // 3x3 conv after skip concatenation
  std::optional<blocks::SKParams> sk;
};

// Encoder level i carries base_width*2^i channels at spatial size H/2^i;
// the decoder mirrors it. Parameters are named; the registry drives
// checkpoints and the optimizer.
struct Model {
  ModelConfig cfg;
  std::vector<EncoderLevel> encoder;      // index = level
  blocks::ConvBlockParams bottleneck;
  std::vector<DecoderLevel> decoder;      // index = level, applied depth-1 .. 0
  Tensor head_w;                          // 1x1 conv to num_classes
  Tensor head_b;

  std::vector<std::pair<std::string, Tensor>> named_params;

  size_t parameter_count() const;
  Tensor* find_param(std::string_view name);

  struct Audit {
    int se_blocks = 0;
    int sk_blocks = 0;
  };
  Audit audit() const;
};

Model build_model(const ModelConfig& cfg);

// Intermediates exposed for the skip-integrity checks.
struct ForwardTrace {
  std::vector<Tensor> skips;          // encoder outputs saved before pooling
  std::vector<Tensor> concat_inputs;  // skip tensor as concatenated per decoder level
};

// batch [N,in_channels,H,W] -> logits [N,num_classes,H,W]; H,W must be
// divisible by 2^depth.
Tensor forward(const Model& m, const Tensor& batch, ForwardTrace* trace = nullptr);

// 0.5 * weighted pixel cross-entropy + 0.5 * (1 - mean soft dice over classes
// 1..3). target holds one class id in {0,1,2,3} per logit pixel, row-major
// [N,H,W]. Returns a scalar tensor on the tape.
Tensor seg_loss(const Tensor& logits, const std::vector<uint8_t>& target,
                const std::array<scalar, 4>& class_weights = {1, 1, 1, 1});

// Per-pixel argmax over the class axis; ties break toward the lowest index.
std::vector<uint8_t> predict_labels(const Tensor& logits);

// Mean over classes 1..3 of hard dice between two label maps (1.0 for classes
// empty in both). Training diagnostic.
double mean_foreground_dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt);

struct TrainSample {
  Tensor image;                // [in_channels,H,W]
  std::vector<uint8_t> label;  // [H*W]
};

struct TrainConfig {
  double lr = 1e-3;
  int epochs = 1;
  int batch_size = 4;
  uint64_t seed = 0;
  bool augment = true;
  std::array<scalar, 4> class_weights = {1, 1, 1, 1};
};

struct TrainLogRow {
  int epoch;
  int step;
  double loss;
  double lr;
};

struct TrainResult {
  std::vector<TrainLogRow> rows;
  std::vector<double> epoch_mean_loss;
};

// Adam (beta1 0.9, beta2 0.999, eps 1e-8) over shuffled slice samples.
// Deterministic given cfg.seed; aborts with epoch/step context on NaN loss.
TrainResult train(Model& m, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                  std::ostream* progress = nullptr);

}  // namespace skunet::net
