#include "skunet/network.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ostream>
#include <stdexcept>

#include "skunet/gradcheck.hpp"
#include "skunet/ops.hpp"
#include "skunet/preprocess.hpp"
#include "skunet/rng.hpp"

namespace skunet::net {

namespace {

void validate_config(const ModelConfig& cfg) {
  if (cfg.depth < 1) throw std::invalid_argument("ModelConfig: depth must be >= 1");
  if (cfg.base_width < 4) throw std::invalid_argument("ModelConfig: base_width must be >= 4");
  if (cfg.num_classes != 4) throw std::invalid_argument("ModelConfig: num_classes must be 4");
  if (cfg.in_channels < 1) throw std::invalid_argument("ModelConfig: in_channels must be >= 1");
}

struct Registrar {
  std::vector<std::pair<std::string, Tensor>>* out;
  void add(const std::string& name, const Tensor& t) { out->emplace_back(name, t); }
  void add(const std::string& prefix, const blocks::ConvBlockParams& p) {
    add(prefix + ".conv.w", p.conv_w);
    add(prefix + ".conv.b", p.conv_b);
    add(prefix + ".norm.gamma", p.norm_gamma);
    add(prefix + ".norm.beta", p.norm_beta);
  }
  void add(const std::string& prefix, const blocks::SEResParams& p) {
    add(prefix + ".conv1", p.conv1);
    add(prefix + ".conv2", p.conv2);
    add(prefix + ".fc_reduce.w", p.fc_reduce_w);
    add(prefix + ".fc_reduce.b", p.fc_reduce_b);
    add(prefix + ".fc_expand.w", p.fc_expand_w);
    add(prefix + ".fc_expand.b", p.fc_expand_b);
  }
  void add(const std::string& prefix, const blocks::SKParams& p) {
    add(prefix + ".branch_a.w", p.branch_a_w);
    add(prefix + ".branch_a.b", p.branch_a_b);
    add(prefix + ".norm_a.gamma", p.norm_a_gamma);
    add(prefix + ".norm_a.beta", p.norm_a_beta);
    add(prefix + ".branch_b.w", p.branch_b_w);
    add(prefix + ".branch_b.b", p.branch_b_b);
    add(prefix + ".norm_b.gamma", p.norm_b_gamma);
    add(prefix + ".norm_b.beta", p.norm_b_beta);
    add(prefix + ".fc_reduce.w", p.fc_reduce_w);
    add(prefix + ".fc_reduce.b", p.fc_reduce_b);
    add(prefix + ".fc_select_a.w", p.fc_select_a_w);
    add(prefix + ".fc_select_a.b", p.fc_select_a_b);
    add(prefix + ".fc_select_b.w", p.fc_select_b_w);
    add(prefix + ".fc_select_b.b", p.fc_select_b_b);
  }
};

}  // namespace

size_t Model::parameter_count() const {
  size_t n = 0;
  for (const auto& [name, t] : named_params) n += t.size();
  return n;
}

Tensor* Model::find_param(std::string_view name) {
  for (auto& [n, t] : named_params) {
    if (n == name) return &t;
  }
  return nullptr;
}

Model::Audit Model::audit() const {
  Audit a;
  for (const auto& lvl : encoder) {
    if (lvl.se.has_value()) ++a.se_blocks;
  }
  for (const auto& lvl : decoder) {
    if (lvl.sk.has_value()) ++a.sk_blocks;
  }
  return a;
}

Model build_model(const ModelConfig& cfg) {
  validate_config(cfg);
  Model m;
  m.cfg = cfg;
  Registrar reg{&m.named_params};
  const uint64_t seed = cfg.seed;

  int cin = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    const int ch = cfg.base_width << i;
    EncoderLevel lvl;
    const std::string prefix = "enc" + std::to_string(i);
    lvl.cb = blocks::init_conv_block(seed, prefix + ".cb", cin, ch);
    reg.add(prefix + ".cb", lvl.cb);
    if (cfg.use_se) {
      lvl.se = blocks::init_se_res(seed, prefix + ".se", ch, blocks::reduction_for(ch));
      reg.add(prefix + ".se", *lvl.se);
    }
    m.encoder.push_back(std::move(lvl));
    cin = ch;
  }

  const int bottleneck_ch = cfg.base_width << cfg.depth;
  m.bottleneck = blocks::init_conv_block(seed, "bottleneck.cb", cin, bottleneck_ch);
  reg.add("bottleneck.cb", m.bottleneck);

  m.decoder.resize(cfg.depth);
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const int ch = cfg.base_width << i;
    DecoderLevel lvl;
    const std::string prefix = "dec" + std::to_string(i);
    lvl.up = blocks::init_conv_block(seed, prefix + ".up", ch * 2, ch);
    reg.add(prefix + ".up", lvl.up);
    lvl.cat = blocks::init_conv_block(seed, prefix + ".cat", ch * 2, ch);
    reg.add(prefix + ".cat", lvl.cat);
    if (cfg.use_sk) {
      lvl.sk = blocks::init_sk(seed, prefix + ".sk", ch, blocks::reduction_for(ch), 8);
      reg.add(prefix + ".sk", *lvl.sk);
    }
    m.decoder[i] = std::move(lvl);
  }

  m.head_w = blocks::init_conv_weight(seed, "head.w", cfg.num_classes, cfg.base_width, 1);
  m.head_b = blocks::zeros_param(cfg.num_classes);
  reg.add("head.w", m.head_w);
  reg.add("head.b", m.head_b);
  return m;
}

Tensor forward(const Model& m, const Tensor& batch, ForwardTrace* trace) {
  if (batch.ndim() != 4 || batch.dim(1) != m.cfg.in_channels) {
    throw std::invalid_argument("forward: batch must be [N," + std::to_string(m.cfg.in_channels) +
                                ",H,W], got " + Tensor::shape_str(batch.shape()));
  }
  const int h = batch.dim(2), w = batch.dim(3);
  const int div = 1 << m.cfg.depth;
  if (h % div != 0 || w % div != 0) {
    throw std::invalid_argument("forward: spatial dims " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by 2^depth (" +
                                std::to_string(div) + "); crop the input in preprocessing");
  }

  Tensor x = batch;
  std::vector<Tensor> skips;
  for (const auto& lvl : m.encoder) {
    x = blocks::conv_block(x, lvl.cb);
    if (lvl.se.has_value()) x = blocks::se_res_forward(x, *lvl.se);
    skips.push_back(x);
    x = maxpool2d(x);
  }
  x = blocks::conv_block(x, m.bottleneck);

  if (trace) {
    trace->skips = skips;
    trace->concat_inputs.assign(m.decoder.size(), Tensor());
  }

  for (int i = m.cfg.depth - 1; i >= 0; --i) {
    const auto& lvl = m.decoder[i];
    x = blocks::conv_block(upsample_nearest2x(x), lvl.up);
    if (trace) trace->concat_inputs[i] = skips[i];
    x = concat_channels(x, skips[i]);
    x = blocks::conv_block(x, lvl.cat);
    if (lvl.sk.has_value()) x = blocks::sk_forward(x, *lvl.sk);
  }
  return conv2d(x, m.head_w, m.head_b);  // 1x1, no padding
}

Tensor seg_loss(const Tensor& logits, const std::vector<uint8_t>& target,
                const std::array<scalar, 4>& class_weights) {
  if (logits.ndim() != 4 || logits.dim(1) != kNumClasses) {
    throw std::invalid_argument("seg_loss: logits must be [N,4,H,W], got " +
                                Tensor::shape_str(logits.shape()));
  }
  const int n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  const size_t hw = static_cast<size_t>(h) * w;
  const size_t npix = static_cast<size_t>(n) * hw;
  if (target.size() != npix) {
    throw std::invalid_argument("seg_loss: target has " + std::to_string(target.size()) +
                                " pixels, logits have " + std::to_string(npix));
  }
  for (size_t i = 0; i < npix; ++i) {
    if (target[i] > 3) {
      throw std::invalid_argument("seg_loss: target value " + std::to_string(target[i]) +
                                  " out of range {0,1,2,3} at pixel " + std::to_string(i));
    }
  }

  // softmax probabilities, per pixel over the 4 classes
  auto probs = std::make_shared<std::vector<scalar>>(logits.size());
  const scalar* z = logits.data();
  {
    scalar* p = probs->data();
    for (int b = 0; b < n; ++b) {
      const size_t base = static_cast<size_t>(b) * kNumClasses * hw;
      for (size_t i = 0; i < hw; ++i) {
        double mx = z[base + i];
        for (int c = 1; c < kNumClasses; ++c) mx = std::max(mx, static_cast<double>(z[base + c * hw + i]));
        double s = 0.0;
        double e[kNumClasses];
        for (int c = 0; c < kNumClasses; ++c) {
          e[c] = std::exp(static_cast<double>(z[base + c * hw + i]) - mx);
          s += e[c];
        }
        for (int c = 0; c < kNumClasses; ++c) p[base + c * hw + i] = static_cast<scalar>(e[c] / s);
      }
    }
  }

  // weighted cross-entropy, normalized by total pixel weight
  double weight_total = 0.0;
  double ce = 0.0;
  {
    const scalar* p = probs->data();
    for (int b = 0; b < n; ++b) {
      const size_t base = static_cast<size_t>(b) * kNumClasses * hw;
      for (size_t i = 0; i < hw; ++i) {
        const int t = target[b * hw + i];
        const double wgt = class_weights[t];
        weight_total += wgt;
        ce -= wgt * std::log(std::max(static_cast<double>(p[base + t * hw + i]), 1e-30));
      }
    }
    if (weight_total <= 0.0) throw std::invalid_argument("seg_loss: class weights sum to zero");
    ce /= weight_total;
  }

  // soft dice over foreground classes, smoothing 1 keeps absent classes at 1
  const double dice_smooth = 1.0;
  double inter[kNumClasses] = {};
  double total[kNumClasses] = {};
  {
    const scalar* p = probs->data();
    for (int b = 0; b < n; ++b) {
      const size_t base = static_cast<size_t>(b) * kNumClasses * hw;
      for (size_t i = 0; i < hw; ++i) {
        const int t = target[b * hw + i];
        for (int c = 1; c < kNumClasses; ++c) {
          const double pv = p[base + c * hw + i];
          total[c] += pv;
          if (t == c) {
            inter[c] += pv;
            total[c] += 1.0;
          }
        }
      }
    }
  }
  double dice_mean = 0.0;
  double dice_c[kNumClasses] = {};
  for (int c = 1; c < kNumClasses; ++c) {
    dice_c[c] = (2.0 * inter[c] + dice_smooth) / (total[c] + dice_smooth);
    dice_mean += dice_c[c];
  }
  dice_mean /= 3.0;

  Tensor out = Tensor::zeros({1});
  out[0] = static_cast<scalar>(0.5 * ce + 0.5 * (1.0 - dice_mean));
  out.ensure_finite("seg_loss");

  if (GradTape::active() && logits.requires_grad()) {
    out.set_requires_grad(true);
    Tensor logits_c = logits, out_c = out;
    std::array<double, kNumClasses> dice_num{}, dice_den{};
    for (int c = 1; c < kNumClasses; ++c) {
      dice_num[c] = 2.0 * inter[c] + dice_smooth;
      dice_den[c] = total[c] + dice_smooth;
    }
    GradTape::active()->record("seg_loss", [logits_c, out_c, probs, target, class_weights,
                                            weight_total, dice_num, dice_den, n, hw]() mutable {
      if (!out_c.has_grad()) return;
      const double g0 = out_c.grad()[0];
      const scalar* p = probs->data();
      scalar* gz = logits_c.grad().data();
      // d(loss)/d(p_c) for the dice term:
      //   dice_c = num_c / den_c with num_c = 2*I_c + s, den_c = S_c + s,
      //   d(dice_c)/d(p_c(x)) = (2*[t==c]*den_c - num_c) / den_c^2
      // (S_c includes the prediction mass, so every p_c(x) appears in den_c)
      for (int b = 0; b < n; ++b) {
        const size_t base = static_cast<size_t>(b) * kNumClasses * hw;
        for (size_t i = 0; i < hw; ++i) {
          const int t = target[b * hw + i];
          const double wgt = class_weights[t] / weight_total;
          double dldp[kNumClasses] = {};
          for (int c = 1; c < kNumClasses; ++c) {
            const double indicator = (t == c) ? 2.0 : 0.0;
            const double ddice = (indicator * dice_den[c] - dice_num[c]) / (dice_den[c] * dice_den[c]);
            dldp[c] = -0.5 * ddice / 3.0;  // loss has -0.5 * mean(dice)
          }
          // cross-entropy: d(ce)/d(z_k) = wgt * (p_k - [k==t])
          // dice: chain through softmax jacobian
          double dot = 0.0;
          for (int c = 0; c < kNumClasses; ++c) dot += dldp[c] * p[base + c * hw + i];
          for (int k = 0; k < kNumClasses; ++k) {
            const double pk = p[base + k * hw + i];
            const double ce_term = 0.5 * wgt * (pk - (k == t ? 1.0 : 0.0));
            const double dice_term = pk * (dldp[k] - dot);
            gz[base + k * hw + i] += static_cast<scalar>(g0 * (ce_term + dice_term));
          }
        }
      }
    });
  }
  return out;
}

std::vector<uint8_t> predict_labels(const Tensor& logits) {
  if (logits.ndim() != 4) {
    throw std::invalid_argument("predict_labels: logits must be 4-d, got " +
                                Tensor::shape_str(logits.shape()));
  }
  const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const size_t hw = static_cast<size_t>(h) * w;
  std::vector<uint8_t> out(static_cast<size_t>(n) * hw);
  const scalar* z = logits.data();
  for (int b = 0; b < n; ++b) {
    const size_t base = static_cast<size_t>(b) * c * hw;
    for (size_t i = 0; i < hw; ++i) {
      int best = 0;
      scalar bv = z[base + i];
      for (int k = 1; k < c; ++k) {
        const scalar v = z[base + k * hw + i];
        if (v > bv) {  // strict: ties stay at the lowest class index
          bv = v;
          best = k;
        }
      }
      out[b * hw + i] = static_cast<uint8_t>(best);
    }
  }
  return out;
}

double mean_foreground_dice(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& gt) {
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("mean_foreground_dice: size mismatch");
  }
  double acc = 0.0;
  for (int c = 1; c < kNumClasses; ++c) {
    size_t np = 0, ng = 0, ni = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
      const bool a = pred[i] == c, b = gt[i] == c;
      np += a;
      ng += b;
      ni += a && b;
    }
    acc += (np + ng == 0) ? 1.0 : 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
  }
  return acc / 3.0;
}

namespace {

struct AdamState {
  std::vector<std::vector<scalar>> m, v;
  int64_t t = 0;
};

void adam_step(Model& model, AdamState& st, double lr) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  ++st.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
  for (size_t pi = 0; pi < model.named_params.size(); ++pi) {
    Tensor& p = model.named_params[pi].second;
    if (!p.has_grad()) continue;
    const scalar* g = p.grad().data();
    scalar* w = p.data();
    auto& m = st.m[pi];
    auto& v = st.v[pi];
    for (size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<scalar>(beta1 * m[i] + (1.0 - beta1) * gi);
      v[i] = static_cast<scalar>(beta2 * v[i] + (1.0 - beta2) * gi * gi);
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= static_cast<scalar>(lr * mhat / (std::sqrt(vhat) + eps));
    }
    p.zero_grad();
  }
}

}  // namespace

TrainResult train(Model& m, const std::vector<TrainSample>& samples, const TrainConfig& cfg,
                  std::ostream* progress) {
  if (samples.empty()) throw std::invalid_argument("train: dataset is empty");
  if (cfg.batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  const auto& shape0 = samples[0].image.shape();
  for (const auto& s : samples) {
    if (s.image.shape() != shape0) {
      throw std::invalid_argument("train: samples must share a common crop size; got " +
                                  Tensor::shape_str(s.image.shape()) + " vs " +
                                  Tensor::shape_str(shape0));
    }
  }
  const int ch = shape0[0], h = shape0[1], w = shape0[2];
  const size_t hw = static_cast<size_t>(h) * w;

  AdamState st;
  st.m.resize(m.named_params.size());
  st.v.resize(m.named_params.size());
  for (size_t i = 0; i < m.named_params.size(); ++i) {
    st.m[i].assign(m.named_params[i].second.size(), scalar(0));
    st.v[i].assign(m.named_params[i].second.size(), scalar(0));
  }

  TrainResult result;
  std::vector<size_t> order(samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng(derive_seed(derive_seed(cfg.seed, "train_epoch"), static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_int(0, static_cast<int64_t>(i) - 1)]);
    }

    double loss_sum = 0.0;
    int step = 0;
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
      const size_t bsz = std::min(static_cast<size_t>(cfg.batch_size), order.size() - pos);
      Tensor batch = Tensor::zeros({static_cast<int>(bsz), ch, h, w});
      std::vector<uint8_t> labels(bsz * hw);
      for (size_t bi = 0; bi < bsz; ++bi) {
        const TrainSample& s = samples[order[pos + bi]];
        Tensor img = s.image.clone();
        std::vector<uint8_t> lbl = s.label;
        if (cfg.augment) prep::augment(img, lbl, rng);
        std::copy(img.values().begin(), img.values().end(),
                  batch.values().begin() + bi * img.size());
        std::copy(lbl.begin(), lbl.end(), labels.begin() + bi * hw);
      }

      double loss_value = 0.0;
      try {
        GradTape tape;
        Tensor logits = forward(m, batch);
        Tensor loss = seg_loss(logits, labels, cfg.class_weights);
        loss_value = loss[0];
        tape.backward(loss);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: aborted at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step) + ": " + e.what());
      }
      if (!std::isfinite(loss_value)) {
        throw std::runtime_error("train: NaN loss at epoch " + std::to_string(epoch) + " step " +
                                 std::to_string(step));
      }
      adam_step(m, st, cfg.lr);
      result.rows.push_back({epoch, step, loss_value, cfg.lr});
      loss_sum += loss_value;
      ++step;
    }
    const double mean_loss = loss_sum / std::max(1, step);
    result.epoch_mean_loss.push_back(mean_loss);
    if (progress) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      char buf[160];
      std::snprintf(buf, sizeof(buf), "epoch %d/%d  mean_loss %.6f  (%d steps, %.1f s)",
                    epoch + 1, cfg.epochs, mean_loss, step, secs);
      (*progress) << buf << std::endl;
    }
  }
  return result;
}

double end_to_end_gradcheck() {
  ModelConfig cfg;
  cfg.base_width = 4;
  cfg.depth = 2;
  cfg.seed = 7041;
  Model m = build_model(cfg);

  Rng rng(415);
  Tensor batch = Tensor::zeros({1, 3, 16, 16});
  for (size_t i = 0; i < batch.size(); ++i) batch[i] = static_cast<scalar>(rng.uniform(-1.0, 1.0));
  std::vector<uint8_t> labels(16 * 16);
  for (auto& t : labels) t = static_cast<uint8_t>(rng.uniform_int(0, 3));

  // analytic gradients for every parameter in one backward pass
  {
    GradTape tape;
    Tensor loss = seg_loss(forward(m, batch), labels);
    tape.backward(loss);
  }

  auto loss_value = [&]() {
    NoGradScope ng;
    Tensor loss = seg_loss(forward(m, batch), labels);
    return static_cast<double>(loss[0]);
  };

  auto numeric_diff = [&](Tensor& p, size_t idx, double eps) {
    const scalar saved = p[idx];
    const scalar vp = saved + static_cast<scalar>(eps);
    const scalar vm = saved - static_cast<scalar>(eps);
    p[idx] = vp;
    const double lp = loss_value();
    p[idx] = vm;
    const double lm = loss_value();
    p[idx] = saved;
    return (lp - lm) / (static_cast<double>(vp) - static_cast<double>(vm));
  };

  // Random 32-parameter subsample. A probe whose +-eps interval straddles a
  // relu/maxpool kink makes the central difference itself invalid, so each
  // numeric value is validated at two step sizes and kink-straddling draws are
  // redrawn; an incorrect analytic gradient still fails because accepted
  // probes are scale-consistent.
  const bool debug = std::getenv("SKUNET_GC_DEBUG") != nullptr;
  double max_err = 0.0;
  const double eps = 2e-3;
  int accepted = 0;
  for (int attempt = 0; accepted < 32 && attempt < 256; ++attempt) {
    const size_t pi = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(m.named_params.size()) - 1));
    Tensor& p = m.named_params[pi].second;
    const size_t idx = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(p.size()) - 1));
    const double analytic = p.has_grad() ? static_cast<double>(p.grad()[idx]) : 0.0;
    const double numeric = numeric_diff(p, idx, eps);
    const double numeric_half = numeric_diff(p, idx, eps / 2.0);
    const double scale_gap = std::fabs(numeric - numeric_half) /
                             std::max({1.0, std::fabs(numeric), std::fabs(numeric_half)});
    if (scale_gap > 2e-4) {
      if (debug) {
        std::fprintf(stderr, "redraw %-24s[%4zu] numeric %+.6e vs half-step %+.6e\n",
                     m.named_params[pi].first.c_str(), idx, numeric, numeric_half);
      }
      continue;
    }
    const double err =
        std::fabs(analytic - numeric) / std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
    if (debug) {
      std::fprintf(stderr, "probe %2d %-24s[%4zu] analytic %+.6e numeric %+.6e err %.3e\n",
                   accepted, m.named_params[pi].first.c_str(), idx, analytic, numeric, err);
    }
    max_err = std::max(max_err, err);
    ++accepted;
  }
  if (accepted < 32) {
    throw std::runtime_error("end_to_end_gradcheck: could not find 32 kink-free probes");
  }
  for (auto& [name, t] : m.named_params) t.zero_grad();
  return max_err;
}

}  // namespace skunet::net
