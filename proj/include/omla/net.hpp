#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "omla/data.hpp"
#include "omla/ops.hpp"

namespace omla {

// ---------------------------------------------------------------------------
// Batch-normalisation statistics and online alignment

/// Per-channel running statistics of one BN layer.
struct BNStats {
  std::vector<double> mean;
  std::vector<double> var;

  std::size_t channels() const { return mean.size(); }
  bool operator==(const BNStats&) const = default;
};

/// One BNStats per BN layer, in network order.
using BNStatsSet = std::vector<BNStats>;

struct PartialStats {
  std::vector<double> mean;
  std::vector<double> var;  // biased, divisor m
  std::size_t count = 0;    // m = N*H*W samples per channel
};

/// Per-channel mean and biased variance of an NCHW feature map.
/// Throws ContractError when fewer than two samples per channel exist.
template <class T>
PartialStats bn_partial_stats(const Tensor<T>& features);

/// Convex blend of previous statistics with the statistics of the current
/// input; the variance gets the m/(m-1) unbiasing factor.
BNStats bn_blend(const BNStats& prev, std::span<const double> mu_hat, std::span<const double> var_hat,
                 double a, std::size_t m);

/// Affine parameters of a BN layer.
template <class T>
struct BNLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  double eps = 1e-5;
};

template <class T>
Tensor<T> bn_normalize(const Tensor<T>& x, const BNStats& stats, const BNLayer<T>& layer);

/// How a forward pass treats BN statistics.
struct BNMode {
  enum class Kind {
    kCollect,  // batch statistics, running stats updated by EMA (source training)
    kFrozen,   // given statistics, unchanged
    kBlend,    // given statistics blended with the current input (online alignment)
  };
  Kind kind = Kind::kFrozen;
  double a = 0.0;

  static BNMode collect() { return {Kind::kCollect, 0.0}; }
  static BNMode frozen() { return {Kind::kFrozen, 0.0}; }
  static BNMode blend(double a) { return {Kind::kBlend, a}; }
};

// ---------------------------------------------------------------------------
// Flat parameter layout

struct ParamEntry {
  std::string name;
  Shape shape;
  std::size_t offset = 0;

  std::size_t size() const { return shape_numel(shape); }
  bool operator==(const ParamEntry&) const = default;
};

class ParamLayout {
 public:
  void add(std::string name, Shape shape);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t total() const { return total_; }
  const ParamEntry& at(const std::string& name) const;

  /// Splits a flat vector into one tensor per entry.
  std::vector<Tensor<double>> unflatten(std::span<const double> flat) const;
  /// Inverse of unflatten.
  std::vector<double> flatten(std::span<const Tensor<double>> tensors) const;

  bool operator==(const ParamLayout&) const = default;

 private:
  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

// ---------------------------------------------------------------------------
// Network

struct NetConfig {
  std::vector<int> channels{16, 32, 48, 64};  // encoder widths, one stride-2 block each
  int kernel = 3;
  double d_max = 48.0;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;  // EMA rate of source-statistics collection
};

template <class T>
struct NetOutput {
  Tensor<T> disp_left;   // N×1×H×W
  Tensor<T> disp_right;  // N×1×H×W
  BNStatsSet stats;
};

/// Small encoder-decoder disparity network. The encoder has one
/// conv(stride 2)+BN+ReLU block per entry of `channels`; the decoder mirrors it
/// with upsample+concat(skip)+conv+ReLU blocks; the head is a conv producing
/// two channels mapped to [0, d_max] by a scaled sigmoid.
class DispNetTiny {
 public:
  explicit DispNetTiny(NetConfig config);

  const NetConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::size_t bn_layer_count() const { return config_.channels.size(); }

  /// He-initialised weights, zero biases, unit BN scale.
  std::vector<double> init_params(std::uint64_t seed) const;
  /// Zero mean, unit variance for every BN layer.
  BNStatsSet init_stats() const;

  /// `theta` is the flat parameter vector (shape [P]), typically a tape leaf.
  /// `input` is N×6×H×W (left RGB then right RGB); H and W must be divisible
  /// by 2^depth.
  template <class T>
  NetOutput<T> forward(const Tensor<T>& theta, const BNStatsSet& stats, const Tensor<T>& input,
                       BNMode mode) const;

 private:
  NetConfig config_;
  ParamLayout layout_;
};

/// Stacks frames into an N×6×H×W network input.
template <class T>
Tensor<T> make_input(std::span<const StereoFrame* const> frames);
/// Stacks one view of each frame into N×3×H×W.
template <class T>
Tensor<T> make_view(std::span<const StereoFrame* const> frames, bool left);

// ---------------------------------------------------------------------------
// Checkpoint

/// Network state: parameters θ, per-parameter learning rates λ and BN
/// statistics, plus a free-form origin tag ("init", "standard", "meta").
struct Checkpoint {
  std::string origin;
  ParamLayout layout;
  std::vector<double> theta;
  std::vector<double> lambda;
  BNStatsSet stats;

  bool operator==(const Checkpoint&) const = default;
};

/// Binary format: magic "OMLC", u16 version, origin string, layout descriptor
/// (length-prefixed UTF-8 names and shapes), BN channel counts, then raw
/// little-endian f64 for θ, λ and every BN layer's mean and variance.
inline constexpr std::uint16_t kCheckpointFormatVersion = 1;

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

/// Throws LayoutError unless the checkpoint matches the network's layout and
/// BN channel counts.
void check_compatible(const Checkpoint& ckpt, const DispNetTiny& net);

}  // namespace omla
