#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "omla/adapt.hpp"

namespace omla {

// ---------------------------------------------------------------------------
// Standard offline pre-training

struct StandardConfig {
  int epochs = 20;
  int batch_size = 4;
  double lr1 = 1e-4;      // first half of the epochs
  double lr2 = 5e-5;      // from epoch index epochs/2 on
  double base_lr = 1e-4;  // constant λ written to the checkpoint
  AdamConfig adam;
  std::uint64_t seed = 0;
};

/// Step size of epoch `epoch` (0-based): lr1 before epochs/2, lr2 from there on.
double pretrain_lr(int epoch, int epochs, double lr1, double lr2);

struct StandardResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch, measured before each step
};

/// Minimises the photometric loss over shuffled minibatches with Adam, BN in
/// collect mode. λ is set to the constant base_lr. `init` supplies θ, 𝓑 and
/// the layout; its λ is ignored.
StandardResult standard_pretrain(const Model& model, std::span<const StereoFrame> dataset, const Checkpoint& init,
                                 const StandardConfig& config);

// ---------------------------------------------------------------------------
// Meta pre-training

enum class MetaGradientMode {
  kFirstOrder,  // gradient at θ_N applied to θ; λ through the summed inner directions
  kFullUnroll,  // exact, one forward-mode replay per parameter and learning rate
};

MetaGradientMode parse_meta_gradient_mode(const std::string& name);
std::string to_string(MetaGradientMode mode);

struct MetaConfig {
  int K = 8;
  int N_adapt = 4;
  int T_eval = 3;
  double lambda_theta = 1e-5;   // outer step size for θ
  double lambda_lambda = 1e-5;  // outer step size for λ
  double inner_meta_lr = 1e-5;  // learning-rate step size inside the inner adaptation
  double blend_a = 0.1;
  double lr_floor = 0.0;
  AdamConfig adam;
  MetaGradientMode gradient_mode = MetaGradientMode::kFirstOrder;
  int epochs = 10;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;
};

/// Outer Adam moments; they persist across meta steps.
struct MetaOptimizerState {
  AdamState<double> theta;
  AdamState<double> lambda;

  static MetaOptimizerState fresh(std::size_t n, AdamConfig config = {});
};

struct VideoMetaGradient {
  std::vector<double> grad_theta;
  std::vector<double> grad_lambda;
  double eval_loss = 0.0;  // summed over the evaluation frames
};

/// Inner adaptation on frames [0, N_adapt), then the loss on the next T_eval
/// frames with the adapted parameters and statistics 𝓑_N, differentiated
/// with respect to the initial θ and λ.
VideoMetaGradient meta_video_gradient(const Model& model, std::span<const StereoFrame> video,
                                      const Checkpoint& ckpt, const MetaConfig& config);

struct MetaStepResult {
  Checkpoint checkpoint;
  MetaOptimizerState state;
  VideoMetaGradient total;  // fixed-order sum over the meta-batch
};

/// One outer update from a meta-batch of video clips. The input checkpoint is
/// not modified; BN statistics are carried over unchanged.
MetaStepResult meta_step(const Model& model, std::span<const std::span<const StereoFrame>> batch,
                         const Checkpoint& ckpt, const MetaConfig& config, MetaOptimizerState state);

struct MetaPretrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_loss;  // mean evaluation loss per clip per epoch
};

/// Repeats meta_step over shuffled meta-batches for config.epochs epochs. Each
/// clip is a random window of N_adapt + T_eval consecutive frames, drawn
/// afresh every epoch.
MetaPretrainResult meta_pretrain(const Model& model, std::span<const StereoVideo> videos, const Checkpoint& init,
                                 const MetaConfig& config);

}  // namespace omla
