#include "omla/net.hpp"

#include <cmath>

#include "omla/binio.hpp"
#include "omla/random.hpp"

namespace omla {

// ---------------------------------------------------------------------------
// BN statistics

template <class T>
PartialStats bn_partial_stats(const Tensor<T>& features) {
  if (features.rank() != 4) throw ShapeError("bn_partial_stats: expected NCHW, got " + shape_str(features.shape()));
  const int N = features.dim(0), C = features.dim(1);
  const std::size_t plane = static_cast<std::size_t>(features.dim(2)) * features.dim(3);
  PartialStats ps;
  ps.count = static_cast<std::size_t>(N) * plane;
  if (ps.count < 2) {
    throw ContractError("bn_partial_stats: degenerate batch with m = " + std::to_string(ps.count) +
                        " samples per channel (need >= 2)");
  }
  ps.mean.assign(static_cast<std::size_t>(C), 0.0);
  ps.var.assign(static_cast<std::size_t>(C), 0.0);
  const auto d = features.data();
  for (int c = 0; c < C; ++c) {
    double s = 0.0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) s += value_of(d[off + i]);
    }
    const double mu = s / static_cast<double>(ps.count);
    double v = 0.0;
    for (int n = 0; n < N; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * C + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const double e = value_of(d[off + i]) - mu;
        v += e * e;
      }
    }
    ps.mean[c] = mu;
    ps.var[c] = v / static_cast<double>(ps.count);
  }
  return ps;
}

BNStats bn_blend(const BNStats& prev, std::span<const double> mu_hat, std::span<const double> var_hat,
                 double a, std::size_t m) {
  if (!(a >= 0.0 && a <= 1.0)) throw ContractError("bn_blend: a must lie in [0, 1], got " + std::to_string(a));
  if (m < 2) throw ContractError("bn_blend: m must be >= 2");
  const std::size_t C = prev.channels();
  if (prev.var.size() != C || mu_hat.size() != C || var_hat.size() != C) {
    throw ShapeError("bn_blend: channel count mismatch");
  }
  const double bessel = static_cast<double>(m) / static_cast<double>(m - 1);
  BNStats out;
  out.mean.resize(C);
  out.var.resize(C);
  for (std::size_t c = 0; c < C; ++c) {
    out.mean[c] = (1.0 - a) * prev.mean[c] + a * mu_hat[c];
    out.var[c] = (1.0 - a) * prev.var[c] + a * bessel * var_hat[c];
  }
  return out;
}

template <class T>
Tensor<T> bn_normalize(const Tensor<T>& x, const BNStats& stats, const BNLayer<T>& layer) {
  if (!(layer.eps > 0.0)) throw ContractError("bn_normalize: eps must be positive");
  return bn_normalize(x, std::span<const double>(stats.mean), std::span<const double>(stats.var),
                      layer.gamma, layer.beta, layer.eps);
}

// ---------------------------------------------------------------------------
// Layout

void ParamLayout::add(std::string name, Shape shape) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("ParamLayout: duplicate entry '" + name + "'");
  }
  ParamEntry e{std::move(name), std::move(shape), total_};
  total_ += e.size();
  entries_.push_back(std::move(e));
}

const ParamEntry& ParamLayout::at(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e;
  }
  throw ContractError("ParamLayout: no entry named '" + name + "'");
}

std::vector<Tensor<double>> ParamLayout::unflatten(std::span<const double> flat) const {
  if (flat.size() != total_) {
    throw ContractError("unflatten: vector length " + std::to_string(flat.size()) + " != layout size " +
                        std::to_string(total_));
  }
  std::vector<Tensor<double>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    out.emplace_back(e.shape, std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(e.offset),
                                                  flat.begin() + static_cast<std::ptrdiff_t>(e.offset + e.size())));
  }
  return out;
}

std::vector<double> ParamLayout::flatten(std::span<const Tensor<double>> tensors) const {
  if (tensors.size() != entries_.size()) throw ContractError("flatten: tensor count does not match layout");
  std::vector<double> flat(total_);
  for (std::size_t k = 0; k < entries_.size(); ++k) {
    if (tensors[k].shape() != entries_[k].shape) {
      throw ShapeError("flatten: '" + entries_[k].name + "' has shape " + shape_str(tensors[k].shape()) +
                       ", layout expects " + shape_str(entries_[k].shape));
    }
    std::copy(tensors[k].data().begin(), tensors[k].data().end(),
              flat.begin() + static_cast<std::ptrdiff_t>(entries_[k].offset));
  }
  return flat;
}

// ---------------------------------------------------------------------------
// Network

namespace {

constexpr int kInputChannels = 6;

std::string enc(int i, const char* what) { return "enc" + std::to_string(i) + "." + what; }
std::string dec(int j, const char* what) { return "dec" + std::to_string(j) + "." + what; }

int decoder_out_channels(const std::vector<int>& ch, int j) { return j >= 2 ? ch[j - 2] : ch[0]; }
int skip_channels(const std::vector<int>& ch, int j) { return j >= 2 ? ch[j - 2] : kInputChannels; }

}  // namespace

DispNetTiny::DispNetTiny(NetConfig config) : config_(std::move(config)) {
  const auto& ch = config_.channels;
  if (ch.empty()) throw ContractError("DispNetTiny: at least one encoder block required");
  if (config_.kernel < 1 || config_.kernel % 2 == 0) throw ContractError("DispNetTiny: kernel must be odd");
  if (!(config_.d_max > 0.0)) throw ContractError("DispNetTiny: d_max must be positive");
  if (!(config_.bn_eps > 0.0)) throw ContractError("DispNetTiny: bn_eps must be positive");
  const int k = config_.kernel;
  const int L = static_cast<int>(ch.size());
  int in = kInputChannels;
  for (int i = 0; i < L; ++i) {
    if (ch[i] < 1) throw ContractError("DispNetTiny: channel counts must be positive");
    layout_.add(enc(i, "conv.w"), {ch[i], in, k, k});
    layout_.add(enc(i, "conv.b"), {ch[i]});
    layout_.add(enc(i, "bn.gamma"), {ch[i]});
    layout_.add(enc(i, "bn.beta"), {ch[i]});
    in = ch[i];
  }
  for (int j = L; j >= 1; --j) {
    const int out = decoder_out_channels(ch, j);
    layout_.add(dec(j, "conv.w"), {out, in + skip_channels(ch, j), k, k});
    layout_.add(dec(j, "conv.b"), {out});
    in = out;
  }
  layout_.add("head.conv.w", {2, in, k, k});
  layout_.add("head.conv.b", {2});
}

std::vector<double> DispNetTiny::init_params(std::uint64_t seed) const {
  Rng rng(seed);
  std::vector<double> theta(layout_.total(), 0.0);
  for (const auto& e : layout_.entries()) {
    auto* p = theta.data() + e.offset;
    const bool is_weight = e.name.size() > 6 && e.name.compare(e.name.size() - 6, 6, "conv.w") == 0;
    if (is_weight) {
      const double fan_in = static_cast<double>(e.shape[1]) * e.shape[2] * e.shape[3];
      const double std = std::sqrt(2.0 / fan_in);
      for (std::size_t i = 0; i < e.size(); ++i) p[i] = std * rng.normal();
    } else if (e.name.find("bn.gamma") != std::string::npos) {
      for (std::size_t i = 0; i < e.size(); ++i) p[i] = 1.0;
    } else if (e.name == "head.conv.b") {
      // Start near a tenth of the disparity range.
      for (std::size_t i = 0; i < e.size(); ++i) p[i] = std::log(0.1 / 0.9);
    }
  }
  return theta;
}

BNStatsSet DispNetTiny::init_stats() const {
  BNStatsSet s;
  for (int c : config_.channels) {
    s.push_back(BNStats{std::vector<double>(static_cast<std::size_t>(c), 0.0),
                        std::vector<double>(static_cast<std::size_t>(c), 1.0)});
  }
  return s;
}

template <class T>
NetOutput<T> DispNetTiny::forward(const Tensor<T>& theta, const BNStatsSet& stats, const Tensor<T>& input,
                                  BNMode mode) const {
  const auto& ch = config_.channels;
  const int L = static_cast<int>(ch.size());
  if (theta.numel() != layout_.total()) {
    throw ContractError("DispNetTiny::forward: parameter vector has " + std::to_string(theta.numel()) +
                        " entries, layout expects " + std::to_string(layout_.total()));
  }
  if (stats.size() != ch.size()) throw ContractError("DispNetTiny::forward: BN statistics count mismatch");
  for (int i = 0; i < L; ++i) {
    if (stats[i].mean.size() != static_cast<std::size_t>(ch[i]) ||
        stats[i].var.size() != static_cast<std::size_t>(ch[i])) {
      throw ContractError("DispNetTiny::forward: BN layer " + std::to_string(i) + " channel mismatch");
    }
  }
  if (input.rank() != 4 || input.dim(1) != kInputChannels) {
    throw ShapeError("DispNetTiny::forward: expected N×6×H×W input, got " + shape_str(input.shape()));
  }
  const int div = 1 << L;
  if (input.dim(2) % div != 0 || input.dim(3) % div != 0) {
    throw ShapeError("DispNetTiny::forward: H and W must be divisible by " + std::to_string(div));
  }

  auto param = [&](const std::string& name) {
    const ParamEntry& e = layout_.at(name);
    return slice_flat(theta, e.offset, e.shape);
  };
  const int pad = config_.kernel / 2;

  NetOutput<T> out;
  out.stats = stats;
  std::vector<Tensor<T>> skips{input};
  Tensor<T> x = input;
  for (int i = 0; i < L; ++i) {
    x = conv2d(x, param(enc(i, "conv.w")), param(enc(i, "conv.b")), 2, pad);
    BNLayer<T> bn{param(enc(i, "bn.gamma")), param(enc(i, "bn.beta")), config_.bn_eps};
    switch (mode.kind) {
      case BNMode::Kind::kFrozen:
        x = bn_normalize(x, stats[i], bn);
        break;
      case BNMode::Kind::kBlend: {
        const PartialStats ps = bn_partial_stats(x);
        out.stats[i] = bn_blend(stats[i], ps.mean, ps.var, mode.a, ps.count);
        x = bn_normalize(x, out.stats[i], bn);
        break;
      }
      case BNMode::Kind::kCollect: {
        BatchNormResult<T> r = batch_norm_train(x, bn.gamma, bn.beta, bn.eps);
        const std::size_t m = x.numel() / static_cast<std::size_t>(ch[i]);
        const double bessel = static_cast<double>(m) / static_cast<double>(m - 1);
        const double mom = config_.bn_momentum;
        for (int c = 0; c < ch[i]; ++c) {
          out.stats[i].mean[c] = (1.0 - mom) * stats[i].mean[c] + mom * r.batch_mean[c];
          out.stats[i].var[c] = (1.0 - mom) * stats[i].var[c] + mom * bessel * r.batch_var[c];
        }
        x = r.output;
        break;
      }
    }
    x = relu(x);
    skips.push_back(x);
  }
  for (int j = L; j >= 1; --j) {
    x = upsample_bilinear2x(x);
    const std::vector<Tensor<T>> parts{x, skips[static_cast<std::size_t>(j - 1)]};
    x = concat_channels<T>(parts);
    x = relu(conv2d(x, param(dec(j, "conv.w")), param(dec(j, "conv.b")), 1, pad));
  }
  Tensor<T> head = conv2d(x, param("head.conv.w"), param("head.conv.b"), 1, pad);
  Tensor<T> disp = mul_scalar(sigmoid(head), T(config_.d_max));
  out.disp_left = slice_channels(disp, 0, 1);
  out.disp_right = slice_channels(disp, 1, 1);
  return out;
}

template <class T>
Tensor<T> make_input(std::span<const StereoFrame* const> frames) {
  if (frames.empty()) throw ContractError("make_input: no frames");
  const int H = frames[0]->height, W = frames[0]->width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<T> data;
  data.reserve(frames.size() * 6 * plane);
  for (const StereoFrame* f : frames) {
    if (f->height != H || f->width != W) throw ShapeError("make_input: frames differ in size");
    for (float v : f->left) data.push_back(T(static_cast<double>(v)));
    for (float v : f->right) data.push_back(T(static_cast<double>(v)));
  }
  return Tensor<T>({static_cast<int>(frames.size()), kInputChannels, H, W}, std::move(data));
}

template <class T>
Tensor<T> make_view(std::span<const StereoFrame* const> frames, bool left) {
  if (frames.empty()) throw ContractError("make_view: no frames");
  const int H = frames[0]->height, W = frames[0]->width;
  std::vector<T> data;
  data.reserve(frames.size() * 3 * static_cast<std::size_t>(H) * W);
  for (const StereoFrame* f : frames) {
    if (f->height != H || f->width != W) throw ShapeError("make_view: frames differ in size");
    for (float v : left ? f->left : f->right) data.push_back(T(static_cast<double>(v)));
  }
  return Tensor<T>({static_cast<int>(frames.size()), 3, H, W}, std::move(data));
}

// ---------------------------------------------------------------------------
// Checkpoint

namespace {
constexpr char kCheckpointMagic[4] = {'O', 'M', 'L', 'C'};
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const std::size_t P = ckpt.layout.total();
  if (ckpt.theta.size() != P || ckpt.lambda.size() != P) {
    throw ContractError("encode_checkpoint: theta/lambda length does not match layout");
  }
  ByteWriter w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u16(kCheckpointFormatVersion);
  w.str(ckpt.origin);
  w.u32(static_cast<std::uint32_t>(ckpt.layout.entries().size()));
  for (const auto& e : ckpt.layout.entries()) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) w.u32(static_cast<std::uint32_t>(d));
  }
  w.u32(static_cast<std::uint32_t>(ckpt.stats.size()));
  for (const auto& s : ckpt.stats) {
    if (s.var.size() != s.mean.size()) throw ContractError("encode_checkpoint: BN mean/var size mismatch");
    w.u32(static_cast<std::uint32_t>(s.mean.size()));
  }
  for (double v : ckpt.theta) w.f64(v);
  for (double v : ckpt.lambda) w.f64(v);
  for (const auto& s : ckpt.stats) {
    for (double v : s.mean) w.f64(v);
    for (double v : s.var) w.f64(v);
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) r.fail(0, "bad magic (expected OMLC)");
  const std::size_t vat = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kCheckpointFormatVersion) {
    throw UnsupportedVersionError(source + ": unsupported checkpoint version " + std::to_string(version) +
                                  " at byte offset " + std::to_string(vat));
  }
  Checkpoint c;
  c.origin = r.str();
  const std::size_t nat = r.offset();
  const std::uint32_t n = r.u32();
  if (n > 4096) r.fail(nat, "implausible layout entry count " + std::to_string(n));
  for (std::uint32_t k = 0; k < n; ++k) {
    std::string name = r.str();
    const std::size_t rat = r.offset();
    const std::uint32_t rank = r.u32();
    if (rank > 8) r.fail(rat, "implausible tensor rank " + std::to_string(rank));
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const std::size_t dat = r.offset();
      const std::uint32_t d = r.u32();
      if (d > 1u << 20) r.fail(dat, "implausible dimension " + std::to_string(d));
      shape.push_back(static_cast<int>(d));
    }
    c.layout.add(std::move(name), std::move(shape));
  }
  const std::size_t bat = r.offset();
  const std::uint32_t nbn = r.u32();
  if (nbn > 4096) r.fail(bat, "implausible BN layer count " + std::to_string(nbn));
  std::vector<std::uint32_t> chans(nbn);
  for (auto& ch : chans) ch = r.u32();
  const std::size_t P = c.layout.total();
  std::size_t need = 2 * P;
  for (auto ch : chans) need += 2 * ch;
  if (r.remaining() != need * sizeof(double)) {
    r.fail(r.offset(), "payload size " + std::to_string(r.remaining()) + " does not match expected " +
                           std::to_string(need * sizeof(double)));
  }
  c.theta.resize(P);
  c.lambda.resize(P);
  for (double& v : c.theta) v = r.f64();
  for (double& v : c.lambda) v = r.f64();
  for (auto ch : chans) {
    BNStats s;
    s.mean.resize(ch);
    s.var.resize(ch);
    for (double& v : s.mean) v = r.f64();
    for (double& v : s.var) v = r.f64();
    c.stats.push_back(std::move(s));
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path), path); }

void check_compatible(const Checkpoint& ckpt, const DispNetTiny& net) {
  if (!(ckpt.layout == net.layout())) {
    throw LayoutError("checkpoint layout (" + std::to_string(ckpt.layout.entries().size()) + " tensors, " +
                      std::to_string(ckpt.layout.total()) + " parameters) does not match the configured network (" +
                      std::to_string(net.layout().entries().size()) + " tensors, " +
                      std::to_string(net.layout().total()) + " parameters)");
  }
  const auto& ch = net.config().channels;
  if (ckpt.stats.size() != ch.size()) throw LayoutError("checkpoint BN layer count does not match the network");
  for (std::size_t i = 0; i < ch.size(); ++i) {
    if (ckpt.stats[i].channels() != static_cast<std::size_t>(ch[i])) {
      throw LayoutError("checkpoint BN layer " + std::to_string(i) + " channel count does not match the network");
    }
  }
}

// ---------------------------------------------------------------------------

#define OMLA_INSTANTIATE_NET(T)                                                                              \
  template PartialStats bn_partial_stats(const Tensor<T>&);                                                  \
  template Tensor<T> bn_normalize(const Tensor<T>&, const BNStats&, const BNLayer<T>&);                      \
  template NetOutput<T> DispNetTiny::forward(const Tensor<T>&, const BNStatsSet&, const Tensor<T>&, BNMode) \
      const;                                                                                                 \
  template Tensor<T> make_input(std::span<const StereoFrame* const>);                                        \
  template Tensor<T> make_view(std::span<const StereoFrame* const>, bool);

OMLA_INSTANTIATE_NET(double)
OMLA_INSTANTIATE_NET(Dual)

}  // namespace omla
