#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "omla/model.hpp"

namespace omla {

// ---------------------------------------------------------------------------
// Adam with per-parameter step sizes

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<T> m1;
  std::vector<T> m2;
  int step = 0;
  AdamConfig config;

  static AdamState fresh(std::size_t n, AdamConfig config = {}) {
    return AdamState{std::vector<T>(n, T(0.0)), std::vector<T>(n, T(0.0)), 0, config};
  }
};

/// Advances the moments with `grad` and returns the bias-corrected update
/// direction m̂ / (sqrt(v̂) + eps).
template <class T>
std::vector<T> adam_direction(AdamState<T>& state, std::span<const T> grad);

template <class T>
struct AdamStepResult {
  std::vector<T> theta;
  AdamState<T> state;
  std::vector<T> direction;  // the applied update is lr ⊙ direction
};

/// One Adam step where the usual scalar step size is replaced elementwise by
/// `lr`: θ' = θ - lr ⊙ m̂ / (sqrt(v̂) + eps).
template <class T>
AdamStepResult<T> adam_step(std::span<const T> theta, std::span<const T> grad, std::span<const T> lr,
                            AdamState<T> state);

// ---------------------------------------------------------------------------
// Online adaptation

/// The four online variants: Online Naive (neither), Online Meta-learning
/// (learned step sizes), OFDA (online BN alignment) and OMLA (both).
struct AdaptMethod {
  bool use_ofda = false;
  bool use_meta_lr = false;
  double base_lr = 1e-4;  // constant step size when use_meta_lr is false

  static AdaptMethod naive(double base_lr = 1e-4) { return {false, false, base_lr}; }
  static AdaptMethod meta(double base_lr = 1e-4) { return {false, true, base_lr}; }
  static AdaptMethod ofda(double base_lr = 1e-4) { return {true, false, base_lr}; }
  static AdaptMethod omla(double base_lr = 1e-4) { return {true, true, base_lr}; }

  /// "naive", "meta", "ofda" or "omla"; ContractError otherwise.
  static AdaptMethod parse(const std::string& name, double base_lr = 1e-4);
  std::string name() const;
};

struct OnlineOptions {
  AdaptMethod method;
  double meta_lr = 1e-7;  // Adam step size for the learning-rate update
  double blend_a = 0.1;   // BN blending weight when use_ofda
  AdamConfig adam;
  double lr_floor = 0.0;
  /// Number of most recent parameter updates the learning-rate gradient is
  /// taken through. 1 uses the closed form; larger values replay the window
  /// with forward-mode tangents and are meant for small models only.
  int meta_unroll_steps = 1;
  bool keep_states = false;       // store pre-update θ_t and 𝓑_t per frame
  bool keep_predictions = true;   // store per-frame disparity maps
};

struct FrameRecord {
  int index = 0;
  double loss = 0.0;
  double lr_min = 0.0;
  double lr_mean = 0.0;
  double lr_max = 0.0;
  double seconds = 0.0;
  std::vector<double> disp_left;  // prediction before this frame's update
  std::vector<double> disp_right;
  std::vector<double> theta;  // θ_t, when keep_states
  BNStatsSet stats;           // 𝓑_t, when keep_states
};

struct OnlineTrace {
  std::vector<FrameRecord> frames;
  std::vector<double> final_theta;
  std::vector<double> final_lambda;
  BNStatsSet final_stats;
};

/// Online adaptation over a frame sequence. Per frame t: forward pass with
/// blended (use_ofda) or frozen statistics; loss; for t > 0 and use_meta_lr
/// one Adam step on λ along ∂L_t/∂λ_{t-1}; then one Adam step on θ with
/// step sizes λ_t. Predictions are recorded before the update.
/// The Adam state of θ starts fresh for every call.
OnlineTrace omla(const Model& model, std::span<const StereoFrame> frames, std::span<const double> theta0,
                 const BNStatsSet& stats0, std::span<const double> lambda0, const OnlineOptions& options);

/// Dispatch per AdaptMethod: methods without learned step sizes run with the
/// constant vector base_lr; the others start from the checkpoint's λ.
OnlineTrace run_method(const Model& model, std::span<const StereoFrame> frames, const Checkpoint& checkpoint,
                       const OnlineOptions& options);

/// Generic inner loop shared by omla() and the exact meta-gradient code.
/// `direction_sum` accumulates the θ-update directions, Σ_t m̂_t/(sqrt(v̂_t)+eps).
template <class T>
struct InnerResult {
  std::vector<T> theta;
  std::vector<T> lambda;
  BNStatsSet stats;
  std::vector<T> direction_sum;
};

template <class T>
struct InnerFrameView {
  int index;
  const Evaluation<T>& evaluation;     // pre-update evaluation of frame t
  std::span<const T> theta;            // θ_t
  const BNStatsSet& stats;             // 𝓑_t
  std::span<const T> lambda;           // λ_t (after the learning-rate update)
  std::span<const T> lr_grad;          // ∂L_t/∂λ used for that update; empty when none was made
};

template <class T>
InnerResult<T> run_online(const Model& model, std::span<const StereoFrame> frames, std::vector<T> theta,
                          const BNStatsSet& stats0, std::vector<T> lambda, const OnlineOptions& options,
                          const std::function<void(const InnerFrameView<T>&)>& observer = {});

}  // namespace omla
