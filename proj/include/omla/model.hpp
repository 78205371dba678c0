#pragma once

#include <span>
#include <vector>

#include "omla/data.hpp"
#include "omla/dual.hpp"
#include "omla/loss.hpp"
#include "omla/net.hpp"

namespace omla {

/// Result of one loss evaluation on a batch of frames.
template <class T>
struct Evaluation {
  T loss{};
  std::vector<T> grad;             // dL/dθ; empty unless requested
  std::vector<double> disp_left;   // N*H*W predicted left disparities
  std::vector<double> disp_right;  // N*H*W predicted right disparities
  BNStatsSet stats;                // statistics after the pass
};

/// A differentiable model + loss over flat parameters. The adaptation and
/// pre-training engines only see this interface, so they run unchanged on
/// the stereo network and on small analytic test models. The Dual overload
/// propagates one forward-mode tangent through the whole computation,
/// including the reverse-mode gradient.
class Model {
 public:
  virtual ~Model() = default;

  virtual std::size_t parameter_count() const = 0;

  virtual Evaluation<double> evaluate(std::span<const double> theta, const BNStatsSet& stats,
                                      std::span<const StereoFrame* const> frames, BNMode mode,
                                      bool with_grad) const = 0;
  virtual Evaluation<Dual> evaluate(std::span<const Dual> theta, const BNStatsSet& stats,
                                    std::span<const StereoFrame* const> frames, BNMode mode,
                                    bool with_grad) const = 0;

  template <class T>
  Evaluation<T> evaluate_frame(std::span<const T> theta, const BNStatsSet& stats, const StereoFrame& frame,
                               BNMode mode, bool with_grad) const {
    const StereoFrame* f = &frame;
    return evaluate(theta, stats, std::span<const StereoFrame* const>(&f, 1), mode, with_grad);
  }
};

/// DispNetTiny followed by the photometric reconstruction loss.
class StereoModel final : public Model {
 public:
  StereoModel(NetConfig net, LossConfig loss);

  const DispNetTiny& net() const { return net_; }
  const LossConfig& loss_config() const { return loss_; }

  std::size_t parameter_count() const override { return net_.layout().total(); }

  Evaluation<double> evaluate(std::span<const double> theta, const BNStatsSet& stats,
                              std::span<const StereoFrame* const> frames, BNMode mode,
                              bool with_grad) const override;
  Evaluation<Dual> evaluate(std::span<const Dual> theta, const BNStatsSet& stats,
                            std::span<const StereoFrame* const> frames, BNMode mode,
                            bool with_grad) const override;

 private:
  template <class T>
  Evaluation<T> run(std::span<const T> theta, const BNStatsSet& stats, std::span<const StereoFrame* const> frames,
                    BNMode mode, bool with_grad) const;

  DispNetTiny net_;
  LossConfig loss_;
};

}  // namespace omla
