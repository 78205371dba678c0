#include "omla/model.hpp"

namespace omla {

StereoModel::StereoModel(NetConfig net, LossConfig loss) : net_(std::move(net)), loss_(loss) { loss_.validate(); }

template <class T>
Evaluation<T> StereoModel::run(std::span<const T> theta, const BNStatsSet& stats,
                               std::span<const StereoFrame* const> frames, BNMode mode, bool with_grad) const {
  Tape<T> tape;
  Tensor<T> params(Shape{static_cast<int>(theta.size())}, std::vector<T>(theta.begin(), theta.end()));
  if (with_grad) params = tape.leaf(params);
  const Tensor<T> input = make_input<T>(frames);
  NetOutput<T> out = net_.forward(params, stats, input, mode);
  Tensor<T> loss = photometric_loss(make_view<T>(frames, true), make_view<T>(frames, false), out.disp_left,
                                    out.disp_right, loss_);
  Evaluation<T> ev;
  ev.loss = loss.item();
  ev.stats = std::move(out.stats);
  ev.disp_left.reserve(out.disp_left.numel());
  for (const T& v : out.disp_left.data()) ev.disp_left.push_back(value_of(v));
  ev.disp_right.reserve(out.disp_right.numel());
  for (const T& v : out.disp_right.data()) ev.disp_right.push_back(value_of(v));
  if (with_grad) {
    tape.backward(loss);
    ev.grad = tape.grad(params);
  }
  return ev;
}

Evaluation<double> StereoModel::evaluate(std::span<const double> theta, const BNStatsSet& stats,
                                         std::span<const StereoFrame* const> frames, BNMode mode,
                                         bool with_grad) const {
  return run<double>(theta, stats, frames, mode, with_grad);
}

Evaluation<Dual> StereoModel::evaluate(std::span<const Dual> theta, const BNStatsSet& stats,
                                       std::span<const StereoFrame* const> frames, BNMode mode,
                                       bool with_grad) const {
  return run<Dual>(theta, stats, frames, mode, with_grad);
}

}  // namespace omla
