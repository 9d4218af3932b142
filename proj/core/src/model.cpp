#include "mlsl/model.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "mlsl/io.hpp"
#include "mlsl/rng.hpp"

namespace mlsl {

namespace {

void init_uniform(std::vector<double>& v, int fan_in, Rng& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (double& x : v) x = rng.next_real(-s, s);
}

Conv2d make_conv(int in_ch, int out_ch, int ksize) {
  Conv2d conv;
  conv.in_ch = in_ch;
  conv.out_ch = out_ch;
  conv.ksize = ksize;
  conv.weight.assign(std::size_t(out_ch) * in_ch * ksize * ksize, 0.0);
  conv.bias.assign(static_cast<std::size_t>(out_ch), 0.0);
  return conv;
}

Conv2d init_conv(int in_ch, int out_ch, int ksize, Rng& rng) {
  Conv2d conv = make_conv(in_ch, out_ch, ksize);
  const int fan_in = in_ch * ksize * ksize;
  init_uniform(conv.weight, fan_in, rng);
  init_uniform(conv.bias, fan_in, rng);
  return conv;
}

Fc make_fc(int in_dim, int out_dim) {
  Fc fc;
  fc.in_dim = in_dim;
  fc.out_dim = out_dim;
  fc.weight.assign(std::size_t(out_dim) * in_dim, 0.0);
  fc.bias.assign(static_cast<std::size_t>(out_dim), 0.0);
  return fc;
}

Fc init_fc(int in_dim, int out_dim, Rng& rng) {
  Fc fc = make_fc(in_dim, out_dim);
  init_uniform(fc.weight, in_dim, rng);
  init_uniform(fc.bias, in_dim, rng);
  return fc;
}

/// out = conv(in) with zero padding keeping H x W; optionally ReLU.
Grid3 conv_forward(const Conv2d& conv, const Grid3& in, bool relu) {
  if (in.channels() != conv.in_ch) {
    throw GeometryError("conv input has " + std::to_string(in.channels()) +
                        " channels, layer expects " + std::to_string(conv.in_ch));
  }
  const int h = in.height(), w = in.width();
  const int pad = conv.ksize / 2;
  Grid3 out(h, w, conv.out_ch);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int o = 0; o < conv.out_ch; ++o) {
        double acc = conv.bias[o];
        for (int ky = 0; ky < conv.ksize; ++ky) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int kx = 0; kx < conv.ksize; ++kx) {
            const int sx = x + kx - pad;
            if (sx < 0 || sx >= w) continue;
            for (int i = 0; i < conv.in_ch; ++i) {
              acc += in.at(sy, sx, i) * conv.weight[conv.weight_index(o, i, ky, kx)];
            }
          }
        }
        out.at(y, x, o) = relu ? (acc > 0.0 ? acc : 0.0) : acc;
      }
    }
  }
  return out;
}

/// Backward pass of conv_forward. `dout` is the gradient w.r.t. the
/// pre-activation output (the ReLU mask, when any, must already be applied).
/// Accumulates weight/bias grads and, when dins is non-null, the input grad.
void conv_backward(const Conv2d& conv, const Grid3& in, const Grid3& dout,
                   ConvGrads& grads, Grid3* dins) {
  const int h = in.height(), w = in.width();
  const int pad = conv.ksize / 2;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int o = 0; o < conv.out_ch; ++o) {
        const double g = dout.at(y, x, o);
        if (g == 0.0) continue;
        grads.bias[o] += g;
        for (int ky = 0; ky < conv.ksize; ++ky) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          for (int kx = 0; kx < conv.ksize; ++kx) {
            const int sx = x + kx - pad;
            if (sx < 0 || sx >= w) continue;
            for (int i = 0; i < conv.in_ch; ++i) {
              grads.weight[conv.weight_index(o, i, ky, kx)] += g * in.at(sy, sx, i);
              if (dins) dins->at(sy, sx, i) += g * conv.weight[conv.weight_index(o, i, ky, kx)];
            }
          }
        }
      }
    }
  }
}

std::vector<double> fc_forward(const Fc& fc, const std::vector<double>& in, bool relu) {
  std::vector<double> out(static_cast<std::size_t>(fc.out_dim));
  for (int o = 0; o < fc.out_dim; ++o) {
    double acc = fc.bias[o];
    for (int i = 0; i < fc.in_dim; ++i) acc += in[i] * fc.weight[std::size_t(o) * fc.in_dim + i];
    out[o] = relu ? (acc > 0.0 ? acc : 0.0) : acc;
  }
  return out;
}

std::vector<double> fc_backward(const Fc& fc, const std::vector<double>& in,
                                const std::vector<double>& dout, FcGrads& grads) {
  std::vector<double> din(static_cast<std::size_t>(fc.in_dim), 0.0);
  for (int o = 0; o < fc.out_dim; ++o) {
    const double g = dout[o];
    grads.bias[o] += g;
    for (int i = 0; i < fc.in_dim; ++i) {
      grads.weight[std::size_t(o) * fc.in_dim + i] += g * in[i];
      din[i] += g * fc.weight[std::size_t(o) * fc.in_dim + i];
    }
  }
  return din;
}

void relu_mask(const Grid3& post, Grid3& grad) {
  for (std::size_t i = 0; i < grad.data().size(); ++i) {
    if (post.data()[i] <= 0.0) grad.data()[i] = 0.0;
  }
}

std::uint64_t hash_doubles(std::uint64_t h, const std::vector<double>& v) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(v.data());
  const std::size_t n = v.size() * sizeof(double);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace

SegModel SegModel::init(const SegConfig& cfg, std::uint64_t seed) {
  if (cfg.depth < 1 || cfg.features < 1 || cfg.classes < 1) {
    throw ConfigError("segmenter needs depth, features and classes >= 1");
  }
  SegModel model;
  model.cfg = cfg;
  Rng rng(derive_seed(seed, "seg-init"));
  for (int l = 0; l < cfg.depth; ++l) {
    model.convs.push_back(init_conv(l == 0 ? 3 : cfg.features, cfg.features, 3, rng));
  }
  model.proj = init_conv(cfg.features, cfg.classes, 1, rng);
  return model;
}

SegModel SegModel::zeros(const SegConfig& cfg) {
  SegModel model;
  model.cfg = cfg;
  for (int l = 0; l < cfg.depth; ++l) {
    model.convs.push_back(make_conv(l == 0 ? 3 : cfg.features, cfg.features, 3));
  }
  model.proj = make_conv(cfg.features, cfg.classes, 1);
  return model;
}

std::size_t SegModel::param_count() const {
  std::size_t n = proj.weight.size() + proj.bias.size();
  for (const Conv2d& c : convs) n += c.weight.size() + c.bias.size();
  return n;
}

ClsHead ClsHead::init(const HeadConfig& cfg, int latent_channels, int classes,
                      std::uint64_t seed) {
  if (cfg.conv_depth < 1 || cfg.fc_depth < 1) {
    throw ConfigError("head depths must be >= 1");
  }
  ClsHead head;
  head.cfg = cfg;
  Rng rng(derive_seed(seed, "head-init"));
  head.conv1 = init_conv(latent_channels, cfg.conv_depth, 1, rng);
  head.conv2 = init_conv(cfg.conv_depth, cfg.conv_depth, 3, rng);
  head.fc1 = init_fc(cfg.conv_depth, cfg.fc_depth, rng);
  head.fc2 = init_fc(cfg.fc_depth, classes, rng);
  return head;
}

ClsHead ClsHead::zeros(const HeadConfig& cfg, int latent_channels, int classes) {
  ClsHead head;
  head.cfg = cfg;
  head.conv1 = make_conv(latent_channels, cfg.conv_depth, 1);
  head.conv2 = make_conv(cfg.conv_depth, cfg.conv_depth, 3);
  head.fc1 = make_fc(cfg.conv_depth, cfg.fc_depth);
  head.fc2 = make_fc(cfg.fc_depth, classes);
  return head;
}

std::size_t ClsHead::param_count() const {
  return conv1.weight.size() + conv1.bias.size() + conv2.weight.size() +
         conv2.bias.size() + fc1.weight.size() + fc1.bias.size() + fc2.weight.size() +
         fc2.bias.size();
}

std::uint64_t params_digest(const SegModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const Conv2d& c : model.convs) {
    h = hash_doubles(h, c.weight);
    h = hash_doubles(h, c.bias);
  }
  h = hash_doubles(h, model.proj.weight);
  h = hash_doubles(h, model.proj.bias);
  return h;
}

std::uint64_t params_digest(const ClsHead& head) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  h = hash_doubles(h, head.conv1.weight);
  h = hash_doubles(h, head.conv1.bias);
  h = hash_doubles(h, head.conv2.weight);
  h = hash_doubles(h, head.conv2.bias);
  h = hash_doubles(h, head.fc1.weight);
  h = hash_doubles(h, head.fc1.bias);
  h = hash_doubles(h, head.fc2.weight);
  h = hash_doubles(h, head.fc2.bias);
  return h;
}

SegTrace forward_seg(const SegModel& model, const Image& img) {
  SegTrace trace;
  trace.input = img;
  const Grid3* cur = &img.grid();
  for (const Conv2d& conv : model.convs) {
    trace.features.push_back(conv_forward(conv, *cur, /*relu=*/true));
    cur = &trace.features.back();
  }
  trace.logits = conv_forward(model.proj, *cur, /*relu=*/false);

  const int h = trace.logits.height(), w = trace.logits.width();
  const int classes = model.cfg.classes;
  ProbVolume probs(h, w, classes, /*normalized=*/true);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double maxv = trace.logits.at(y, x, 0);
      for (int c = 1; c < classes; ++c) maxv = std::max(maxv, trace.logits.at(y, x, c));
      double z = 0.0;
      for (int c = 0; c < classes; ++c) {
        const double e = std::exp(trace.logits.at(y, x, c) - maxv);
        probs.at(y, x, c) = e;
        z += e;
      }
      for (int c = 0; c < classes; ++c) probs.at(y, x, c) /= z;
    }
  }
  trace.probs = std::move(probs);
  trace.params_stamp = params_digest(model);
  return trace;
}

ClsTrace forward_cls(const ClsHead& head, const Grid3& latent) {
  ClsTrace trace;
  trace.conv1_out = conv_forward(head.conv1, latent, /*relu=*/true);
  trace.conv2_out = conv_forward(head.conv2, trace.conv1_out, /*relu=*/true);

  const int h = latent.height(), w = latent.width();
  const double inv_hw = 1.0 / (static_cast<double>(h) * w);
  trace.gap.assign(static_cast<std::size_t>(head.cfg.conv_depth), 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int d = 0; d < head.cfg.conv_depth; ++d) {
        trace.gap[d] += trace.conv2_out.at(y, x, d);
      }
    }
  }
  for (double& g : trace.gap) g *= inv_hw;

  trace.fc1_out = fc_forward(head.fc1, trace.gap, /*relu=*/true);
  trace.logits = fc_forward(head.fc2, trace.fc1_out, /*relu=*/false);
  trace.scores.resize(trace.logits.size());
  for (std::size_t i = 0; i < trace.logits.size(); ++i) {
    trace.scores[i] = 1.0 / (1.0 + std::exp(-trace.logits[i]));
  }
  trace.params_stamp = params_digest(head);
  return trace;
}

SegGrads SegGrads::zeros_like(const SegModel& model) {
  SegGrads g;
  for (const Conv2d& c : model.convs) {
    g.convs.push_back({std::vector<double>(c.weight.size(), 0.0),
                       std::vector<double>(c.bias.size(), 0.0)});
  }
  g.proj = {std::vector<double>(model.proj.weight.size(), 0.0),
            std::vector<double>(model.proj.bias.size(), 0.0)};
  return g;
}

void SegGrads::add(const SegGrads& other) {
  for (std::size_t l = 0; l < convs.size(); ++l) {
    for (std::size_t i = 0; i < convs[l].weight.size(); ++i)
      convs[l].weight[i] += other.convs[l].weight[i];
    for (std::size_t i = 0; i < convs[l].bias.size(); ++i)
      convs[l].bias[i] += other.convs[l].bias[i];
  }
  for (std::size_t i = 0; i < proj.weight.size(); ++i) proj.weight[i] += other.proj.weight[i];
  for (std::size_t i = 0; i < proj.bias.size(); ++i) proj.bias[i] += other.proj.bias[i];
}

bool SegGrads::finite() const {
  for (const ConvGrads& c : convs) {
    if (!all_finite(c.weight) || !all_finite(c.bias)) return false;
  }
  return all_finite(proj.weight) && all_finite(proj.bias);
}

HeadGrads HeadGrads::zeros_like(const ClsHead& head) {
  HeadGrads g;
  g.conv1 = {std::vector<double>(head.conv1.weight.size(), 0.0),
             std::vector<double>(head.conv1.bias.size(), 0.0)};
  g.conv2 = {std::vector<double>(head.conv2.weight.size(), 0.0),
             std::vector<double>(head.conv2.bias.size(), 0.0)};
  g.fc1 = {std::vector<double>(head.fc1.weight.size(), 0.0),
           std::vector<double>(head.fc1.bias.size(), 0.0)};
  g.fc2 = {std::vector<double>(head.fc2.weight.size(), 0.0),
           std::vector<double>(head.fc2.bias.size(), 0.0)};
  return g;
}

void HeadGrads::add(const HeadGrads& other) {
  auto addv = [](std::vector<double>& a, const std::vector<double>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  };
  addv(conv1.weight, other.conv1.weight);
  addv(conv1.bias, other.conv1.bias);
  addv(conv2.weight, other.conv2.weight);
  addv(conv2.bias, other.conv2.bias);
  addv(fc1.weight, other.fc1.weight);
  addv(fc1.bias, other.fc1.bias);
  addv(fc2.weight, other.fc2.weight);
  addv(fc2.bias, other.fc2.bias);
}

bool HeadGrads::finite() const {
  return all_finite(conv1.weight) && all_finite(conv1.bias) && all_finite(conv2.weight) &&
         all_finite(conv2.bias) && all_finite(fc1.weight) && all_finite(fc1.bias) &&
         all_finite(fc2.weight) && all_finite(fc2.bias);
}

void backward(const SegModel& model, const SegTrace& trace, const Grid3* dprobs,
              const ClsHead* head, const ClsTrace* cls_trace,
              std::span<const double> dscores, SegGrads& seg_grads,
              HeadGrads* head_grads) {
  if (trace.params_stamp != params_digest(model)) {
    throw std::logic_error("stale forward trace: segmenter parameters changed");
  }
  const int h = trace.logits.height(), w = trace.logits.width();
  const int classes = model.cfg.classes;

  // softmax Jacobian: dz_i = p_i (dp_i - sum_j dp_j p_j), per pixel
  Grid3 dlogits(h, w, classes);
  if (dprobs) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double dot = 0.0;
        for (int c = 0; c < classes; ++c) dot += dprobs->at(y, x, c) * trace.probs.at(y, x, c);
        for (int c = 0; c < classes; ++c) {
          dlogits.at(y, x, c) = trace.probs.at(y, x, c) * (dprobs->at(y, x, c) - dot);
        }
      }
    }
  }

  const Grid3& latent = trace.latent();
  Grid3 dlatent(latent.height(), latent.width(), latent.channels());
  conv_backward(model.proj, latent, dlogits, seg_grads.proj, &dlatent);

  if (head && !dscores.empty()) {
    if (!cls_trace || !head_grads) {
      throw std::logic_error("head gradients requested without a head trace");
    }
    if (cls_trace->params_stamp != params_digest(*head)) {
      throw std::logic_error("stale forward trace: head parameters changed");
    }
    // sigmoid Jacobian
    std::vector<double> dcls_logits(dscores.size());
    for (std::size_t i = 0; i < dscores.size(); ++i) {
      const double s = cls_trace->scores[i];
      dcls_logits[i] = dscores[i] * s * (1.0 - s);
    }
    std::vector<double> dfc1 = fc_backward(head->fc2, cls_trace->fc1_out, dcls_logits,
                                           head_grads->fc2);
    for (std::size_t i = 0; i < dfc1.size(); ++i) {
      if (cls_trace->fc1_out[i] <= 0.0) dfc1[i] = 0.0;
    }
    std::vector<double> dgap = fc_backward(head->fc1, cls_trace->gap, dfc1, head_grads->fc1);

    const double inv_hw = 1.0 / (static_cast<double>(h) * w);
    Grid3 dconv2(h, w, head->cfg.conv_depth);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int d = 0; d < head->cfg.conv_depth; ++d) {
          dconv2.at(y, x, d) = dgap[d] * inv_hw;
        }
      }
    }
    relu_mask(cls_trace->conv2_out, dconv2);
    Grid3 dconv1(h, w, head->cfg.conv_depth);
    conv_backward(head->conv2, cls_trace->conv1_out, dconv2, head_grads->conv2, &dconv1);
    relu_mask(cls_trace->conv1_out, dconv1);
    conv_backward(head->conv1, latent, dconv1, head_grads->conv1, &dlatent);
  }

  // hidden conv stack, last to first
  Grid3 dout = std::move(dlatent);
  for (int l = static_cast<int>(model.convs.size()) - 1; l >= 0; --l) {
    relu_mask(trace.features[static_cast<std::size_t>(l)], dout);
    const Grid3& in = l == 0 ? trace.input.grid() : trace.features[static_cast<std::size_t>(l) - 1];
    const bool need_din = l > 0;
    Grid3 din;
    if (need_din) din = Grid3(in.height(), in.width(), in.channels());
    conv_backward(model.convs[static_cast<std::size_t>(l)], in, dout,
                  seg_grads.convs[static_cast<std::size_t>(l)], need_din ? &din : nullptr);
    if (need_din) dout = std::move(din);
  }
}

namespace {

void step_vec(std::vector<double>& p, const std::vector<double>& g, double lr) {
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
}

}  // namespace

void sgd_step(SegModel& model, const SegGrads& grads, double lr) {
  if (!grads.finite()) throw DivergedError("non-finite segmenter gradient");
  for (std::size_t l = 0; l < model.convs.size(); ++l) {
    step_vec(model.convs[l].weight, grads.convs[l].weight, lr);
    step_vec(model.convs[l].bias, grads.convs[l].bias, lr);
  }
  step_vec(model.proj.weight, grads.proj.weight, lr);
  step_vec(model.proj.bias, grads.proj.bias, lr);
}

void sgd_step(ClsHead& head, const HeadGrads& grads, double lr) {
  if (!grads.finite()) throw DivergedError("non-finite head gradient");
  step_vec(head.conv1.weight, grads.conv1.weight, lr);
  step_vec(head.conv1.bias, grads.conv1.bias, lr);
  step_vec(head.conv2.weight, grads.conv2.weight, lr);
  step_vec(head.conv2.bias, grads.conv2.bias, lr);
  step_vec(head.fc1.weight, grads.fc1.weight, lr);
  step_vec(head.fc1.bias, grads.fc1.bias, lr);
  step_vec(head.fc2.weight, grads.fc2.weight, lr);
  step_vec(head.fc2.bias, grads.fc2.bias, lr);
}

void save_checkpoint(const std::filesystem::path& path, const SegModel& model,
                     const ClsHead& head, std::uint64_t seed) {
  std::vector<double> flat;
  auto append = [&flat](const std::vector<double>& v) {
    flat.insert(flat.end(), v.begin(), v.end());
  };
  for (const Conv2d& c : model.convs) {
    append(c.weight);
    append(c.bias);
  }
  append(model.proj.weight);
  append(model.proj.bias);
  append(head.conv1.weight);
  append(head.conv1.bias);
  append(head.conv2.weight);
  append(head.conv2.bias);
  append(head.fc1.weight);
  append(head.fc1.bias);
  append(head.fc2.weight);
  append(head.fc2.bias);

  nlohmann::json header = {
      {"format", "mlsl-checkpoint"},
      {"version", 1},
      {"seed", seed},
      {"classes", model.cfg.classes},
      {"features", model.cfg.features},
      {"depth", model.cfg.depth},
      {"head", {{"conv_depth", head.cfg.conv_depth}, {"fc_depth", head.cfg.fc_depth}}},
      {"dtype", "f64"},
  };
  write_blob(path, header, pack_doubles(flat, /*as_f32=*/false));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const Blob blob = read_blob(path);
  if (blob.header.value("format", "") != "mlsl-checkpoint") {
    throw IoError("not a checkpoint file: " + path.string());
  }
  SegConfig seg_cfg;
  seg_cfg.classes = blob.header.at("classes").get<int>();
  seg_cfg.features = blob.header.at("features").get<int>();
  seg_cfg.depth = blob.header.at("depth").get<int>();
  HeadConfig head_cfg;
  head_cfg.conv_depth = blob.header.at("head").at("conv_depth").get<int>();
  head_cfg.fc_depth = blob.header.at("head").at("fc_depth").get<int>();

  Checkpoint ckpt;
  ckpt.seed = blob.header.at("seed").get<std::uint64_t>();
  ckpt.model = SegModel::zeros(seg_cfg);
  ckpt.head = ClsHead::zeros(head_cfg, seg_cfg.features, seg_cfg.classes);

  std::vector<double> flat = unpack_doubles(blob.payload, /*as_f32=*/false);
  std::size_t pos = 0;
  auto take = [&](std::vector<double>& v) {
    if (pos + v.size() > flat.size()) throw IoError("checkpoint payload too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + v.size()), v.begin());
    pos += v.size();
  };
  for (Conv2d& c : ckpt.model.convs) {
    take(c.weight);
    take(c.bias);
  }
  take(ckpt.model.proj.weight);
  take(ckpt.model.proj.bias);
  take(ckpt.head.conv1.weight);
  take(ckpt.head.conv1.bias);
  take(ckpt.head.conv2.weight);
  take(ckpt.head.conv2.bias);
  take(ckpt.head.fc1.weight);
  take(ckpt.head.fc1.bias);
  take(ckpt.head.fc2.weight);
  take(ckpt.head.fc2.bias);
  if (pos != flat.size()) throw IoError("checkpoint payload has trailing data");
  return ckpt;
}

}  // namespace mlsl
