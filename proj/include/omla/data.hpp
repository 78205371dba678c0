#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omla {

/// One rectified stereo pair. Images are planar RGB (3 × H × W, values in
/// [0, 1]); gt_disparity is the H × W left-image disparity in pixels.
/// Stored in single precision, which is also the on-disk precision.
struct StereoFrame {
  int height = 0;
  int width = 0;
  std::vector<float> left;
  std::vector<float> right;
  std::vector<float> gt_disparity;
  double focal_times_baseline = 0.0;

  bool operator==(const StereoFrame&) const = default;
};

/// Rendering style of a synthetic domain.
struct DomainSpec {
  double texture_scale = 1.0;  // multiplies texture frequencies
  double brightness = 0.0;     // additive offset after contrast
  double contrast = 1.0;       // gain around mid-grey
  double noise_sigma = 0.01;   // per-pixel Gaussian noise, independent per view
  std::uint32_t palette_seed = 1;
  double depth_min = 4.0;      // nearest object depth (m)
  double depth_max = 40.0;     // farthest background depth (m)
  double motion = 0.04;        // per-frame layer shift in pixels per pixel of disparity
  bool integer_disparity = false;

  bool operator==(const DomainSpec&) const = default;
};

struct StereoVideo {
  std::vector<StereoFrame> frames;
  DomainSpec domain;
  std::uint64_t seed = 0;

  int height() const { return frames.empty() ? 0 : frames.front().height; }
  int width() const { return frames.empty() ? 0 : frames.front().width; }
  bool operator==(const StereoVideo&) const = default;
};

/// Stock suites: the source domain used for pre-training and the shifted
/// target domain used for online adaptation.
DomainSpec source_domain();
DomainSpec target_domain();

/// Default f·B for a given image width (48 at width 64).
double default_focal_times_baseline(int width);

/// Renders a layered fronto-parallel scene (textured background plane plus
/// 2-5 textured rectangles at sampled depths) seen by a horizontally
/// translating stereo camera. Texture is evaluated analytically in each view,
/// so the right view is the left view shifted by the per-layer disparity
/// d = fB / z and gt_disparity is exact.
StereoVideo generate_video(const DomainSpec& spec, int length, int height, int width,
                           std::uint64_t seed, double focal_times_baseline = 0.0);

/// Dataset file: magic "OMLD", u16 version, header, then per frame f32
/// planes (left RGB, right RGB, disparity), all little-endian.
inline constexpr std::uint16_t kVideoFormatVersion = 1;

std::string encode_video(const StereoVideo& video);
StereoVideo decode_video(const std::string& bytes, const std::string& source = "<memory>");
void save_video(const std::string& path, const StereoVideo& video);
StereoVideo load_video(const std::string& path);

}  // namespace omla
