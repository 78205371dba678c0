#pragma once

#include <span>

#include "omla/data.hpp"
#include "omla/ops.hpp"

namespace omla {

struct LossConfig {
  double alpha = 0.85;  // weight of the SSIM term; the L1 term gets 1 - alpha
  int ssim_window = 3;
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;

  /// Throws ContractError on out-of-range values.
  void validate() const;
};

/// Reconstructs one view from the other: right_to_left samples `source` at
/// x - d, left_to_right at x + d.
template <class T>
Tensor<T> warp(const Tensor<T>& source, const Tensor<T>& disparity, WarpDirection direction) {
  return warp_horizontal(source, disparity, direction);
}

/// Per-pixel SSIM map with box-filtered local statistics. The map covers the
/// valid region, (H - w + 1) × (W - w + 1) for window w.
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const LossConfig& cfg);

/// Symmetric reconstruction loss
///   (1-α)·mean|Î_l - I_l| + α·mean((1 - SSIM(Î_l, I_l))/2) + (same for the right view)
/// with Î_l = warp(I_r, d_l, right_to_left) and Î_r = warp(I_l, d_r, left_to_right).
template <class T>
Tensor<T> photometric_loss(const Tensor<T>& left, const Tensor<T>& right, const Tensor<T>& disp_left,
                           const Tensor<T>& disp_right, const LossConfig& cfg);

}  // namespace omla
