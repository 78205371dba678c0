#include "omla/pretrain.hpp"

#include <algorithm>
#include <numeric>

#include "omla/error.hpp"
#include "omla/parallel.hpp"
#include "omla/random.hpp"

namespace omla {

double pretrain_lr(int epoch, int epochs, double lr1, double lr2) { return epoch < epochs / 2 ? lr1 : lr2; }

StandardResult standard_pretrain(const Model& model, std::span<const StereoFrame> dataset, const Checkpoint& init,
                                 const StandardConfig& config) {
  if (dataset.empty()) throw ContractError("standard_pretrain: empty dataset");
  if (config.batch_size < 1) throw ContractError("standard_pretrain: batch_size must be >= 1");
  if (config.epochs < 0) throw ContractError("standard_pretrain: epochs must be >= 0");
  const std::size_t P = model.parameter_count();
  if (init.theta.size() != P) throw LayoutError("standard_pretrain: initial θ does not match the model");

  StandardResult out;
  out.checkpoint = init;
  std::vector<double>& theta = out.checkpoint.theta;
  BNStatsSet& stats = out.checkpoint.stats;
  AdamState<double> adam = AdamState<double>::fresh(P, config.adam);

  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    const std::vector<double> lr(P, pretrain_lr(epoch, config.epochs, config.lr1, config.lr2));
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      std::vector<const StereoFrame*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset[order[i]]);
      Evaluation<double> ev = model.evaluate(theta, stats, batch, BNMode::collect(), true);
      loss_sum += ev.loss;
      ++batches;
      auto step = adam_step<double>(theta, ev.grad, lr, std::move(adam));
      theta = std::move(step.theta);
      adam = std::move(step.state);
      stats = std::move(ev.stats);
    }
    out.epoch_loss.push_back(loss_sum / batches);
  }
  out.checkpoint.lambda.assign(P, config.base_lr);
  return out;
}

// ---------------------------------------------------------------------------

MetaGradientMode parse_meta_gradient_mode(const std::string& name) {
  if (name == "first_order") return MetaGradientMode::kFirstOrder;
  if (name == "full_unroll") return MetaGradientMode::kFullUnroll;
  throw ConfigError("unknown meta gradient mode '" + name + "' (expected first_order or full_unroll)");
}

std::string to_string(MetaGradientMode mode) {
  return mode == MetaGradientMode::kFirstOrder ? "first_order" : "full_unroll";
}

void MetaConfig::validate() const {
  if (K < 1) throw ContractError("meta: K must be >= 1");
  if (N_adapt < 1) throw ContractError("meta: N_adapt must be >= 1");
  if (T_eval < 1) throw ContractError("meta: T_eval must be >= 1");
  if (epochs < 0) throw ContractError("meta: epochs must be >= 0");
  if (lambda_theta < 0.0 || lambda_lambda < 0.0 || inner_meta_lr < 0.0) {
    throw ContractError("meta: step sizes must be >= 0");
  }
}

MetaOptimizerState MetaOptimizerState::fresh(std::size_t n, AdamConfig config) {
  return {AdamState<double>::fresh(n, config), AdamState<double>::fresh(n, config)};
}

namespace {

constexpr std::size_t kFullUnrollParamLimit = 4096;

OnlineOptions inner_options(const MetaConfig& c) {
  OnlineOptions o;
  o.method = AdaptMethod::omla();
  o.meta_lr = c.inner_meta_lr;
  o.blend_a = c.blend_a;
  o.adam = c.adam;
  o.lr_floor = c.lr_floor;
  o.keep_predictions = false;
  return o;
}

}  // namespace

VideoMetaGradient meta_video_gradient(const Model& model, std::span<const StereoFrame> video, const Checkpoint& ckpt,
                                      const MetaConfig& config) {
  config.validate();
  const std::size_t N = static_cast<std::size_t>(config.N_adapt);
  const std::size_t T = static_cast<std::size_t>(config.T_eval);
  if (video.size() < N + T) {
    throw ContractError("meta_step: video has " + std::to_string(video.size()) + " frames, needs N_adapt + T_eval = " +
                        std::to_string(N + T));
  }
  const std::size_t P = model.parameter_count();
  if (ckpt.theta.size() != P || ckpt.lambda.size() != P) {
    throw LayoutError("meta_step: checkpoint θ/λ length does not match the model");
  }
  const auto inner_frames = video.subspan(0, N);
  const auto eval_frames = video.subspan(N, T);
  const OnlineOptions opts = inner_options(config);

  VideoMetaGradient g;
  g.grad_theta.assign(P, 0.0);
  g.grad_lambda.assign(P, 0.0);

  if (config.gradient_mode == MetaGradientMode::kFirstOrder) {
    InnerResult<double> inner = run_online<double>(model, inner_frames, ckpt.theta, ckpt.stats, ckpt.lambda, opts);
    for (const StereoFrame& f : eval_frames) {
      Evaluation<double> ev = model.evaluate_frame<double>(inner.theta, inner.stats, f, BNMode::frozen(), true);
      g.eval_loss += ev.loss;
      for (std::size_t i = 0; i < P; ++i) {
        g.grad_theta[i] += ev.grad[i];
        g.grad_lambda[i] -= ev.grad[i] * inner.direction_sum[i];
      }
    }
    return g;
  }

  if (P > kFullUnrollParamLimit) {
    throw ContractError("meta_step: full_unroll is limited to models with at most " +
                        std::to_string(kFullUnrollParamLimit) + " parameters (this one has " + std::to_string(P) + ")");
  }
  for (std::size_t j = 0; j < 2 * P; ++j) {
    std::vector<Dual> theta(ckpt.theta.begin(), ckpt.theta.end());
    std::vector<Dual> lambda(ckpt.lambda.begin(), ckpt.lambda.end());
    if (j < P) {
      theta[j].d = 1.0;
    } else {
      lambda[j - P].d = 1.0;
    }
    InnerResult<Dual> inner = run_online<Dual>(model, inner_frames, std::move(theta), ckpt.stats, std::move(lambda), opts);
    Dual loss = 0.0;
    for (const StereoFrame& f : eval_frames) {
      loss += model.evaluate_frame<Dual>(inner.theta, inner.stats, f, BNMode::frozen(), false).loss;
    }
    (j < P ? g.grad_theta[j] : g.grad_lambda[j - P]) = loss.d;
    if (j == 0) g.eval_loss = loss.v;
  }
  return g;
}

MetaStepResult meta_step(const Model& model, std::span<const std::span<const StereoFrame>> batch,
                         const Checkpoint& ckpt, const MetaConfig& config, MetaOptimizerState state) {
  config.validate();
  if (batch.empty()) throw ContractError("meta_step: empty meta-batch");
  const std::size_t P = model.parameter_count();

  std::vector<VideoMetaGradient> per_video(batch.size());
  parallel_for(batch.size(), config.threads,
               [&](std::size_t k) { per_video[k] = meta_video_gradient(model, batch[k], ckpt, config); });

  MetaStepResult r;
  r.total.grad_theta.assign(P, 0.0);
  r.total.grad_lambda.assign(P, 0.0);
  for (const VideoMetaGradient& v : per_video) {
    for (std::size_t i = 0; i < P; ++i) {
      r.total.grad_theta[i] += v.grad_theta[i];
      r.total.grad_lambda[i] += v.grad_lambda[i];
    }
    r.total.eval_loss += v.eval_loss;
  }

  r.checkpoint = ckpt;
  const std::vector<double> dir_lambda = adam_direction<double>(state.lambda, r.total.grad_lambda);
  const std::vector<double> dir_theta = adam_direction<double>(state.theta, r.total.grad_theta);
  for (std::size_t i = 0; i < P; ++i) {
    r.checkpoint.lambda[i] = std::max(config.lr_floor, ckpt.lambda[i] - config.lambda_lambda * dir_lambda[i]);
    r.checkpoint.theta[i] = ckpt.theta[i] - config.lambda_theta * dir_theta[i];
  }
  r.state = std::move(state);
  return r;
}

MetaPretrainResult meta_pretrain(const Model& model, std::span<const StereoVideo> videos, const Checkpoint& init,
                                 const MetaConfig& config) {
  config.validate();
  MetaPretrainResult out;
  out.checkpoint = init;
  if (config.epochs == 0) return out;
  if (videos.empty()) throw ContractError("meta_pretrain: no videos");
  const std::size_t clip = static_cast<std::size_t>(config.N_adapt + config.T_eval);
  for (const StereoVideo& v : videos) {
    if (v.frames.size() < clip) {
      throw ContractError("meta_pretrain: video with " + std::to_string(v.frames.size()) +
                          " frames is shorter than N_adapt + T_eval = " + std::to_string(clip));
    }
  }
  const std::size_t P = model.parameter_count();
  MetaOptimizerState state = MetaOptimizerState::fresh(P, config.adam);
  const std::size_t K = std::min(static_cast<std::size_t>(config.K), videos.size());

  std::vector<std::size_t> order(videos.size());
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(derive_seed(config.seed, 0x3E7A0000ull + static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    std::vector<std::span<const StereoFrame>> clips(videos.size());
    for (std::size_t i : order) {
      const auto& frames = videos[i].frames;
      const int start = rng.uniform_int(0, static_cast<int>(frames.size() - clip));
      clips[i] = std::span<const StereoFrame>(frames).subspan(static_cast<std::size_t>(start), clip);
    }
    double loss_sum = 0.0;
    std::size_t count = 0;
    // Incomplete trailing batches are dropped.
    for (std::size_t b = 0; b + K <= order.size(); b += K) {
      std::vector<std::span<const StereoFrame>> batch;
      for (std::size_t k = b; k < b + K; ++k) batch.push_back(clips[order[k]]);
      MetaStepResult step = meta_step(model, batch, out.checkpoint, config, std::move(state));
      out.checkpoint = std::move(step.checkpoint);
      state = std::move(step.state);
      loss_sum += step.total.eval_loss / config.T_eval;
      count += K;
    }
    out.epoch_loss.push_back(loss_sum / static_cast<double>(count));
  }
  return out;
}

}  // namespace omla
