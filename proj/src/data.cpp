#include "omla/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "omla/binio.hpp"
#include "omla/error.hpp"
#include "omla/random.hpp"

namespace omla {

DomainSpec source_domain() {
  DomainSpec d;
  d.texture_scale = 1.0;
  d.brightness = 0.0;
  d.contrast = 1.0;
  d.noise_sigma = 0.002;
  d.palette_seed = 11;
  d.depth_min = 6.0;
  d.depth_max = 14.0;
  d.motion = 0.04;
  return d;
}

DomainSpec target_domain() {
  DomainSpec d;
  d.texture_scale = 1.0;
  d.brightness = 0.12;
  d.contrast = 0.5;
  d.noise_sigma = 0.003;
  d.palette_seed = 29;
  d.depth_min = 6.0;
  d.depth_max = 14.0;
  d.motion = 0.01;
  return d;
}

double default_focal_times_baseline(int width) { return 0.75 * width; }

namespace {

using Color = std::array<double, 3>;

struct Wave {
  double fx, fy, phase, amp;
};

struct Layer {
  double disparity = 0.0;
  bool background = false;
  double x0 = 0.0, y0 = 0.0, w = 0.0, h = 0.0;  // rectangle at t = 0, left view
  std::vector<Wave> waves;
  Color a{}, b{};

  double texture(double u, double v) const {
    double t = 0.5;
    for (const Wave& wv : waves) t += wv.amp * std::sin(wv.fx * u + wv.fy * v + wv.phase);
    return t;
  }
};

std::vector<Color> make_palette(std::uint32_t seed) {
  Rng rng(derive_seed(seed, 0xC0102));
  std::vector<Color> p(8);
  for (auto& c : p) {
    for (double& ch : c) ch = rng.uniform(0.08, 0.92);
  }
  return p;
}

Layer make_layer(Rng& rng, const std::vector<Color>& palette, double texture_scale) {
  Layer l;
  const int nwaves = 5;
  double total = 0.0;
  for (int k = 0; k < nwaves; ++k) {
    // log-uniform spatial frequency in [0.12, 1.2] rad/px
    const double f = 0.12 * std::pow(10.0, rng.uniform()) * texture_scale;
    const double angle = rng.uniform(-0.9, 0.9) + (rng.uniform() < 0.5 ? 0.0 : M_PI / 2.0);
    Wave w{f * std::cos(angle), f * std::sin(angle), rng.uniform(0.0, 2.0 * M_PI), rng.uniform(0.3, 1.0)};
    total += w.amp;
    l.waves.push_back(w);
  }
  for (Wave& w : l.waves) w.amp *= 0.45 / total;
  const int ia = rng.uniform_int(0, static_cast<int>(palette.size()) - 1);
  int ib = rng.uniform_int(0, static_cast<int>(palette.size()) - 2);
  if (ib >= ia) ++ib;
  l.a = palette[static_cast<std::size_t>(ia)];
  l.b = palette[static_cast<std::size_t>(ib)];
  return l;
}

double wrap(double x, double period) {
  double r = std::fmod(x, period);
  if (r < 0.0) r += period;
  return r;
}

}  // namespace

StereoVideo generate_video(const DomainSpec& spec, int length, int height, int width,
                           std::uint64_t seed, double focal_times_baseline) {
  if (length < 1) throw ContractError("generate_video: length must be >= 1");
  if (height < 1 || width < 1) throw ContractError("generate_video: image size must be positive");
  if (spec.noise_sigma < 0.0) throw ContractError("generate_video: noise_sigma must be >= 0");
  if (!(spec.depth_min > 0.0) || !(spec.depth_max > spec.depth_min)) {
    throw ContractError("generate_video: depth range must satisfy 0 < depth_min < depth_max");
  }
  const double fB = focal_times_baseline > 0.0 ? focal_times_baseline : default_focal_times_baseline(width);

  Rng rng(seed);
  const auto palette = make_palette(spec.palette_seed);
  auto quantise = [&](double d) { return spec.integer_disparity ? std::max(1.0, std::round(d)) : d; };

  std::vector<Layer> layers;
  Layer bg = make_layer(rng, palette, spec.texture_scale);
  bg.background = true;
  bg.disparity = quantise(fB / (spec.depth_max * rng.uniform(0.75, 1.0)));
  layers.push_back(bg);

  const int nrect = rng.uniform_int(2, 5);
  const double max_w = 0.45 * width;
  const double period = width + max_w + 8.0;
  for (int r = 0; r < nrect; ++r) {
    Layer l = make_layer(rng, palette, spec.texture_scale);
    const double z = rng.uniform(spec.depth_min, std::max(spec.depth_min, 0.6 * spec.depth_max));
    l.disparity = quantise(fB / z);
    l.w = rng.uniform(0.2 * width, max_w);
    l.h = rng.uniform(0.3 * height, 0.8 * height);
    l.x0 = rng.uniform(0.0, period);
    l.y0 = rng.uniform(0.0, height - l.h);
    layers.push_back(l);
  }
  // Front-most (largest disparity) first.
  std::stable_sort(layers.begin(), layers.end(),
                   [](const Layer& a, const Layer& b) { return a.disparity > b.disparity; });

  const std::size_t plane = static_cast<std::size_t>(height) * width;
  StereoVideo video;
  video.domain = spec;
  video.seed = seed;
  video.frames.reserve(static_cast<std::size_t>(length));

  Rng noise(derive_seed(seed, 0x4015E));
  auto shade = [&](const Layer& l, double u, double v, int ch) {
    const double t = l.texture(u, v);
    const double c = l.a[ch] * (1.0 - t) + l.b[ch] * t;
    return 0.5 + spec.contrast * (c - 0.5) + spec.brightness;
  };
  // Returns the front-most layer visible at horizontal layer-space offset
  // `extra` (0 for the left view, d for the right view) and its local u.
  auto hit = [&](double x, double y, double extra_scale, int t, double& u_out) -> const Layer* {
    for (const Layer& l : layers) {
      const double s = spec.motion * l.disparity * t;
      const double u = x + extra_scale * l.disparity + s;
      if (l.background) {
        u_out = u;
        return &l;
      }
      const double local = wrap(u - l.x0, period);
      if (local < l.w && y >= l.y0 && y < l.y0 + l.h) {
        u_out = local;
        return &l;
      }
    }
    return nullptr;
  };

  for (int t = 0; t < length; ++t) {
    StereoFrame f;
    f.height = height;
    f.width = width;
    f.focal_times_baseline = fB;
    f.left.resize(3 * plane);
    f.right.resize(3 * plane);
    f.gt_disparity.resize(plane);
    for (int view = 0; view < 2; ++view) {
      auto& img = view == 0 ? f.left : f.right;
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          double u = 0.0;
          const Layer* l = hit(x, y, view == 0 ? 0.0 : 1.0, t, u);
          const std::size_t pi = static_cast<std::size_t>(y) * width + x;
          if (view == 0) f.gt_disparity[pi] = static_cast<float>(l->disparity);
          for (int ch = 0; ch < 3; ++ch) {
            double val = shade(*l, u, y, ch);
            if (spec.noise_sigma > 0.0) val += spec.noise_sigma * noise.normal();
            img[static_cast<std::size_t>(ch) * plane + pi] = static_cast<float>(std::clamp(val, 0.0, 1.0));
          }
        }
      }
    }
    video.frames.push_back(std::move(f));
  }
  return video;
}

// ---------------------------------------------------------------------------
// File format

namespace {
constexpr char kVideoMagic[4] = {'O', 'M', 'L', 'D'};
}

std::string encode_video(const StereoVideo& video) {
  if (video.frames.empty()) throw ContractError("encode_video: empty video");
  ByteWriter w;
  w.bytes(std::string_view(kVideoMagic, 4));
  w.u16(kVideoFormatVersion);
  const StereoFrame& f0 = video.frames.front();
  w.u32(static_cast<std::uint32_t>(f0.height));
  w.u32(static_cast<std::uint32_t>(f0.width));
  w.u32(static_cast<std::uint32_t>(video.frames.size()));
  w.f64(f0.focal_times_baseline);
  const DomainSpec& d = video.domain;
  w.f64(d.texture_scale);
  w.f64(d.brightness);
  w.f64(d.contrast);
  w.f64(d.noise_sigma);
  w.u32(d.palette_seed);
  w.f64(d.depth_min);
  w.f64(d.depth_max);
  w.f64(d.motion);
  w.u8(d.integer_disparity ? 1 : 0);
  w.u64(video.seed);
  for (const StereoFrame& f : video.frames) {
    if (f.height != f0.height || f.width != f0.width || f.focal_times_baseline != f0.focal_times_baseline) {
      throw ContractError("encode_video: frames disagree on size or f*B");
    }
    for (float v : f.left) w.f32(v);
    for (float v : f.right) w.f32(v);
    for (float v : f.gt_disparity) w.f32(v);
  }
  return w.buffer();
}

StereoVideo decode_video(const std::string& bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.bytes(4) != std::string_view(kVideoMagic, 4)) r.fail(0, "bad magic (expected OMLD)");
  const std::size_t vat = r.offset();
  const std::uint16_t version = r.u16();
  if (version != kVideoFormatVersion) {
    throw UnsupportedVersionError(source + ": unsupported dataset version " + std::to_string(version) +
                                  " at byte offset " + std::to_string(vat) + " (supported: " +
                                  std::to_string(kVideoFormatVersion) + ")");
  }
  const std::size_t hat = r.offset();
  const std::uint32_t H = r.u32();
  const std::uint32_t W = r.u32();
  const std::uint32_t T = r.u32();
  if (H == 0 || W == 0 || T == 0 || H > 1u << 14 || W > 1u << 14) {
    r.fail(hat, "invalid header dimensions");
  }
  StereoVideo v;
  const double fB = r.f64();
  v.domain.texture_scale = r.f64();
  v.domain.brightness = r.f64();
  v.domain.contrast = r.f64();
  v.domain.noise_sigma = r.f64();
  v.domain.palette_seed = r.u32();
  v.domain.depth_min = r.f64();
  v.domain.depth_max = r.f64();
  v.domain.motion = r.f64();
  v.domain.integer_disparity = r.u8() != 0;
  v.seed = r.u64();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  const std::size_t frame_bytes = 7 * plane * sizeof(float);
  if (r.remaining() != frame_bytes * T) {
    r.fail(r.offset(), "payload size " + std::to_string(r.remaining()) + " does not match " +
                           std::to_string(T) + " frames of " + std::to_string(frame_bytes) + " bytes");
  }
  v.frames.reserve(T);
  for (std::uint32_t t = 0; t < T; ++t) {
    StereoFrame f;
    f.height = static_cast<int>(H);
    f.width = static_cast<int>(W);
    f.focal_times_baseline = fB;
    f.left.resize(3 * plane);
    f.right.resize(3 * plane);
    f.gt_disparity.resize(plane);
    for (float& x : f.left) x = r.f32();
    for (float& x : f.right) x = r.f32();
    for (float& x : f.gt_disparity) x = r.f32();
    v.frames.push_back(std::move(f));
  }
  return v;
}

void save_video(const std::string& path, const StereoVideo& video) {
  write_file_atomic(path, encode_video(video));
}

StereoVideo load_video(const std::string& path) { return decode_video(read_file(path), path); }

}  // namespace omla
