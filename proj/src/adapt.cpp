#include "omla/adapt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <type_traits>

#include "omla/error.hpp"

namespace omla {

template <class T>
std::vector<T> adam_direction(AdamState<T>& state, std::span<const T> grad) {
  using std::sqrt;
  const std::size_t n = grad.size();
  if (state.m1.size() != n || state.m2.size() != n) {
    throw ContractError("adam: moment length " + std::to_string(state.m1.size()) + " does not match gradient length " +
                        std::to_string(n));
  }
  const AdamConfig& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, state.step);
  const double bc2 = 1.0 - std::pow(c.beta2, state.step);
  std::vector<T> dir(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T& g = grad[i];
    state.m1[i] = c.beta1 * state.m1[i] + (1.0 - c.beta1) * g;
    state.m2[i] = c.beta2 * state.m2[i] + (1.0 - c.beta2) * (g * g);
    const T mhat = state.m1[i] / bc1;
    const T vhat = state.m2[i] / bc2;
    dir[i] = mhat / (sqrt(vhat) + c.eps);
  }
  return dir;
}

template <class T>
AdamStepResult<T> adam_step(std::span<const T> theta, std::span<const T> grad, std::span<const T> lr,
                            AdamState<T> state) {
  if (theta.size() != grad.size() || theta.size() != lr.size()) {
    throw ContractError("adam_step: length mismatch (theta " + std::to_string(theta.size()) + ", grad " +
                        std::to_string(grad.size()) + ", lr " + std::to_string(lr.size()) + ")");
  }
  AdamStepResult<T> r;
  r.direction = adam_direction(state, grad);
  r.theta.resize(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) r.theta[i] = theta[i] - lr[i] * r.direction[i];
  r.state = std::move(state);
  return r;
}

// ---------------------------------------------------------------------------

AdaptMethod AdaptMethod::parse(const std::string& name, double base_lr) {
  if (name == "naive") return naive(base_lr);
  if (name == "meta") return meta(base_lr);
  if (name == "ofda") return ofda(base_lr);
  if (name == "omla") return omla(base_lr);
  throw ContractError("unknown adaptation method '" + name + "' (expected naive, meta, ofda or omla)");
}

std::string AdaptMethod::name() const {
  if (use_ofda) return use_meta_lr ? "omla" : "ofda";
  return use_meta_lr ? "meta" : "naive";
}

namespace {

template <class T>
void clamp_floor(std::vector<T>& v, double floor) {
  for (T& x : v) {
    if (value_of(x) < floor) x = T(floor);
  }
}

BNMode online_mode(const OnlineOptions& o) { return o.method.use_ofda ? BNMode::blend(o.blend_a) : BNMode::frozen(); }

// Snapshot of the state before the update of frame s, kept for the
// multi-step replay.
struct WindowEntry {
  int frame = 0;
  std::vector<double> theta;
  std::vector<double> lambda;  // λ_s as used in the θ update of frame s
  AdamState<double> adam;
  BNStatsSet stats;
};

// ∂L_t/∂λ where the same λ perturbation is applied to every update in the
// window. One forward-mode replay per parameter; meant for tiny models.
std::vector<double> replay_hypergradient(const Model& model, std::span<const StereoFrame> frames,
                                         const std::deque<WindowEntry>& window, int t, const BNStatsSet& stats_t,
                                         const OnlineOptions& o) {
  const std::size_t P = window.front().theta.size();
  const BNMode mode = online_mode(o);
  std::vector<double> h(P, 0.0);
  for (std::size_t i = 0; i < P; ++i) {
    const WindowEntry& first = window.front();
    std::vector<Dual> theta(first.theta.begin(), first.theta.end());
    AdamState<Dual> adam{std::vector<Dual>(first.adam.m1.begin(), first.adam.m1.end()),
                         std::vector<Dual>(first.adam.m2.begin(), first.adam.m2.end()), first.adam.step,
                         first.adam.config};
    BNStatsSet stats = first.stats;
    for (const WindowEntry& e : window) {
      Evaluation<Dual> ev = model.evaluate_frame<Dual>(theta, stats, frames[static_cast<std::size_t>(e.frame)], mode, true);
      std::vector<Dual> lr(e.lambda.begin(), e.lambda.end());
      lr[i].d = 1.0;
      auto step = adam_step<Dual>(theta, ev.grad, lr, std::move(adam));
      theta = std::move(step.theta);
      adam = std::move(step.state);
      stats = std::move(ev.stats);
    }
    (void)stats;
    const Evaluation<Dual> ev = model.evaluate_frame<Dual>(theta, stats_t, frames[static_cast<std::size_t>(t)], mode, false);
    h[i] = ev.loss.d;
  }
  return h;
}

constexpr std::size_t kReplayParamLimit = 4096;

}  // namespace

template <class T>
InnerResult<T> run_online(const Model& model, std::span<const StereoFrame> frames, std::vector<T> theta,
                          const BNStatsSet& stats0, std::vector<T> lambda, const OnlineOptions& options,
                          const std::function<void(const InnerFrameView<T>&)>& observer) {
  if (frames.empty()) throw ContractError("omla: video has no frames");
  if (options.meta_lr < 0.0) throw ContractError("omla: meta_lr must be >= 0");
  if (options.blend_a < 0.0 || options.blend_a > 1.0) throw ContractError("omla: blend weight a must be in [0, 1]");
  if (options.meta_unroll_steps < 1) throw ContractError("omla: meta_unroll_steps must be >= 1");
  const std::size_t P = model.parameter_count();
  if (theta.size() != P) {
    throw ContractError("omla: theta has " + std::to_string(theta.size()) + " entries, model expects " +
                        std::to_string(P));
  }
  if (lambda.size() != P) {
    throw ContractError("omla: lambda has " + std::to_string(lambda.size()) + " entries, model expects " +
                        std::to_string(P));
  }
  const bool replay = options.method.use_meta_lr && options.meta_unroll_steps > 1;
  if (replay) {
    if constexpr (!std::is_same_v<T, double>) {
      throw ContractError("omla: meta_unroll_steps > 1 cannot be nested inside a forward-mode evaluation");
    }
    if (P > kReplayParamLimit) {
      throw ContractError("omla: meta_unroll_steps > 1 is limited to models with at most " +
                          std::to_string(kReplayParamLimit) + " parameters (this one has " + std::to_string(P) + ")");
    }
  }

  const BNMode mode = online_mode(options);
  AdamState<T> adam = AdamState<T>::fresh(P, options.adam);
  AdamState<T> meta_adam = AdamState<T>::fresh(P, options.adam);
  BNStatsSet stats = stats0;
  std::vector<T> prev_dir;  // u_{t-1}
  std::vector<T> dir_sum(P, T(0.0));
  std::deque<WindowEntry> window;

  for (std::size_t t = 0; t < frames.size(); ++t) {
    Evaluation<T> ev = model.evaluate_frame<T>(theta, stats, frames[t], mode, true);

    std::vector<T> h;
    if (t > 0 && options.method.use_meta_lr) {
      h.resize(P);
      if constexpr (std::is_same_v<T, double>) {
        if (replay) {
          h = replay_hypergradient(model, frames, window, static_cast<int>(t), stats, options);
        }
      }
      if (!replay) {
        // θ_t = θ_{t-1} - λ_{t-1} ⊙ u_{t-1} with u held constant.
        for (std::size_t i = 0; i < P; ++i) h[i] = -(ev.grad[i] * prev_dir[i]);
      }
      const std::vector<T> meta_dir = adam_direction<T>(meta_adam, h);
      for (std::size_t i = 0; i < P; ++i) lambda[i] = lambda[i] - options.meta_lr * meta_dir[i];
      clamp_floor(lambda, options.lr_floor);
    }

    if (observer) observer(InnerFrameView<T>{static_cast<int>(t), ev, theta, stats, lambda, h});

    if (replay) {
      if constexpr (std::is_same_v<T, double>) {
        window.push_back(WindowEntry{static_cast<int>(t), theta, lambda, adam, stats});
        while (window.size() > static_cast<std::size_t>(options.meta_unroll_steps)) window.pop_front();
      }
    }

    auto step = adam_step<T>(theta, ev.grad, lambda, std::move(adam));
    theta = std::move(step.theta);
    adam = std::move(step.state);
    for (std::size_t i = 0; i < P; ++i) dir_sum[i] = dir_sum[i] + step.direction[i];
    prev_dir = std::move(step.direction);
    stats = std::move(ev.stats);
  }
  return InnerResult<T>{std::move(theta), std::move(lambda), std::move(stats), std::move(dir_sum)};
}

OnlineTrace omla(const Model& model, std::span<const StereoFrame> frames, std::span<const double> theta0,
                 const BNStatsSet& stats0, std::span<const double> lambda0, const OnlineOptions& options) {
  OnlineTrace trace;
  trace.frames.reserve(frames.size());
  using clock = std::chrono::steady_clock;
  auto last = clock::now();
  auto observer = [&](const InnerFrameView<double>& v) {
    FrameRecord r;
    r.index = v.index;
    r.loss = v.evaluation.loss;
    const auto [mn, mx] = std::minmax_element(v.lambda.begin(), v.lambda.end());
    double sum = 0.0;
    for (double x : v.lambda) sum += x;
    r.lr_min = v.lambda.empty() ? 0.0 : *mn;
    r.lr_max = v.lambda.empty() ? 0.0 : *mx;
    r.lr_mean = v.lambda.empty() ? 0.0 : sum / static_cast<double>(v.lambda.size());
    if (options.keep_predictions) {
      r.disp_left = v.evaluation.disp_left;
      r.disp_right = v.evaluation.disp_right;
    }
    if (options.keep_states) {
      r.theta.assign(v.theta.begin(), v.theta.end());
      r.stats = v.stats;
    }
    trace.frames.push_back(std::move(r));
  };
  auto timed = [&](const InnerFrameView<double>& v) {
    const auto now = clock::now();
    if (!trace.frames.empty()) trace.frames.back().seconds = std::chrono::duration<double>(now - last).count();
    last = now;
    observer(v);
  };
  InnerResult<double> res =
      run_online<double>(model, frames, std::vector<double>(theta0.begin(), theta0.end()), stats0,
                         std::vector<double>(lambda0.begin(), lambda0.end()), options, timed);
  if (!trace.frames.empty()) trace.frames.back().seconds = std::chrono::duration<double>(clock::now() - last).count();
  trace.final_theta = std::move(res.theta);
  trace.final_lambda = std::move(res.lambda);
  trace.final_stats = std::move(res.stats);
  return trace;
}

OnlineTrace run_method(const Model& model, std::span<const StereoFrame> frames, const Checkpoint& checkpoint,
                       const OnlineOptions& options) {
  const std::size_t P = model.parameter_count();
  if (checkpoint.theta.size() != P) {
    throw LayoutError("checkpoint has " + std::to_string(checkpoint.theta.size()) + " parameters, model expects " +
                      std::to_string(P));
  }
  std::vector<double> lambda;
  if (options.method.use_meta_lr) {
    if (checkpoint.lambda.size() != P) throw LayoutError("checkpoint learning-rate vector has the wrong length");
    lambda = checkpoint.lambda;
  } else {
    lambda.assign(P, options.method.base_lr);
  }
  return omla(model, frames, checkpoint.theta, checkpoint.stats, lambda, options);
}

#define OMLA_INSTANTIATE_ADAPT(T)                                                                                 \
  template std::vector<T> adam_direction<T>(AdamState<T>&, std::span<const T>);                                 \
  template AdamStepResult<T> adam_step<T>(std::span<const T>, std::span<const T>, std::span<const T>,           \
                                          AdamState<T>);                                                        \
  template InnerResult<T> run_online<T>(const Model&, std::span<const StereoFrame>, std::vector<T>,             \
                                        const BNStatsSet&, std::vector<T>, const OnlineOptions&,                \
                                        const std::function<void(const InnerFrameView<T>&)>&);

OMLA_INSTANTIATE_ADAPT(double)
OMLA_INSTANTIATE_ADAPT(Dual)

}  // namespace omla
