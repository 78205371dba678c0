#include "omla/loss.hpp"

#include <string>

namespace omla {

void LossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ContractError("LossConfig: alpha must lie in [0, 1]");
  if (ssim_window < 3 || ssim_window % 2 == 0) throw ContractError("LossConfig: ssim_window must be odd and >= 3");
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ContractError("LossConfig: c1 and c2 must be positive");
}

template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b, const LossConfig& cfg) {
  if (a.shape() != b.shape()) {
    throw ShapeError("ssim: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  const int w = cfg.ssim_window;
  Tensor<T> mu_a = box_filter(a, w);
  Tensor<T> mu_b = box_filter(b, w);
  Tensor<T> mu_aa = mu_a * mu_a;
  Tensor<T> mu_bb = mu_b * mu_b;
  Tensor<T> mu_ab = mu_a * mu_b;
  Tensor<T> var_a = box_filter(a * a, w) - mu_aa;
  Tensor<T> var_b = box_filter(b * b, w) - mu_bb;
  Tensor<T> cov = box_filter(a * b, w) - mu_ab;
  Tensor<T> num = add_scalar(mul_scalar(mu_ab, T(2.0)), T(cfg.c1)) * add_scalar(mul_scalar(cov, T(2.0)), T(cfg.c2));
  Tensor<T> den = add_scalar(mu_aa + mu_bb, T(cfg.c1)) * add_scalar(var_a + var_b, T(cfg.c2));
  return num / den;
}

template <class T>
Tensor<T> photometric_loss(const Tensor<T>& left, const Tensor<T>& right, const Tensor<T>& disp_left,
                           const Tensor<T>& disp_right, const LossConfig& cfg) {
  cfg.validate();
  if (left.shape() != right.shape()) throw ShapeError("photometric_loss: left/right shapes differ");
  auto term = [&](const Tensor<T>& recon, const Tensor<T>& target) {
    Tensor<T> l1 = mean(abs(recon - target));
    Tensor<T> structural = mean(mul_scalar(rsub_scalar(ssim(recon, target, cfg), T(1.0)), T(0.5)));
    return mul_scalar(l1, T(1.0 - cfg.alpha)) + mul_scalar(structural, T(cfg.alpha));
  };
  Tensor<T> left_recon = warp(right, disp_left, WarpDirection::kRightToLeft);
  Tensor<T> right_recon = warp(left, disp_right, WarpDirection::kLeftToRight);
  return term(left_recon, left) + term(right_recon, right);
}

template Tensor<double> ssim(const Tensor<double>&, const Tensor<double>&, const LossConfig&);
template Tensor<Dual> ssim(const Tensor<Dual>&, const Tensor<Dual>&, const LossConfig&);
template Tensor<double> photometric_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                         const Tensor<double>&, const LossConfig&);
template Tensor<Dual> photometric_loss(const Tensor<Dual>&, const Tensor<Dual>&, const Tensor<Dual>&,
                                       const Tensor<Dual>&, const LossConfig&);

}  // namespace omla
