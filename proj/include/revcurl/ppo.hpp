#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "revcurl/config.hpp"
#include "revcurl/policy.hpp"
#include "revcurl/rng.hpp"
#include "revcurl/types.hpp"

namespace revcurl {

/// Per-token reward after KL shaping: every action pays -beta * KL at its
/// state, and the terminal action additionally carries the environment reward.
inline std::vector<double> shape_rewards(const Trajectory& traj, double beta) {
  if (traj.kl_terms.size() != traj.sampled_actions.size()) {
    throw std::invalid_argument("shape_rewards: trajectory is missing KL terms");
  }
  std::vector<double> rewards(traj.kl_terms.size(), 0.0);
  for (std::size_t t = 0; t < rewards.size(); ++t) {
    rewards[t] = -beta * traj.kl_terms[t];
  }
  if (!rewards.empty()) rewards.back() += traj.env_reward;
  return rewards;
}

struct AdvantageEstimate {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantage + value
};

/// Generalized advantage estimation with a zero terminal bootstrap (episodes
/// always end): delta_t = r_t + gamma V_{t+1} - V_t and
/// A_t = sum_i (gamma lambda)^i delta_{t+i}.
inline AdvantageEstimate compute_gae(std::span<const double> rewards,
                                     std::span<const double> values, double gamma, double lambda) {
  if (rewards.size() != values.size()) {
    throw std::invalid_argument("compute_gae: rewards length " + std::to_string(rewards.size()) +
                                " != values length " + std::to_string(values.size()));
  }
  const std::size_t n = rewards.size();
  AdvantageEstimate est;
  est.advantages.resize(n);
  est.returns.resize(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = (i + 1 < n) ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    est.advantages[i] = running;
    est.returns[i] = running + values[i];
  }
  return est;
}

/// Rollout batch ready for PPO epochs: rewards shaped, advantages estimated
/// and normalized across the whole batch (mean/std with a floor), behavior
/// log-probs frozen inside the trajectories.
struct PpoBatch {
  std::vector<Trajectory> trajectories;
  std::vector<AdvantageEstimate> estimates;  // advantages already normalized
  long total_actions = 0;

  static PpoBatch build(std::vector<Trajectory> trajs, double gamma, double lambda, double beta) {
    if (trajs.empty()) throw std::invalid_argument("PpoBatch: empty batch");
    PpoBatch batch;
    batch.trajectories = std::move(trajs);
    batch.estimates.reserve(batch.trajectories.size());

    double sum = 0.0;
    for (auto& traj : batch.trajectories) {
      traj.per_token_rewards = shape_rewards(traj, beta);
      auto est = compute_gae(traj.per_token_rewards, traj.values, gamma, lambda);
      batch.total_actions += static_cast<long>(est.advantages.size());
      for (double a : est.advantages) sum += a;
      batch.estimates.push_back(std::move(est));
    }
    const double mean = sum / static_cast<double>(batch.total_actions);
    double var = 0.0;
    for (const auto& est : batch.estimates) {
      for (double a : est.advantages) var += (a - mean) * (a - mean);
    }
    const double stddev =
        std::max(std::sqrt(var / static_cast<double>(batch.total_actions)), 1e-8);
    for (auto& est : batch.estimates) {
      for (double& a : est.advantages) a = (a - mean) / stddev;
    }
    return batch;
  }
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
};

namespace detail {

/// Shared core of loss evaluation and gradient accumulation over a subset of
/// trajectories. Losses are means over action tokens: the clipped surrogate
/// for the policy, squared error to the GAE returns for the value head.
///
/// The two gradients are kept separate. `grad_policy` is the full surrogate
/// gradient. `grad_value_head` holds the value-loss partials with respect to
/// the value head weights only; the full value gradient (through the shared
/// encoder) is available from value_loss_gradient below.
template <bool WithGrad>
inline PpoStats ppo_eval(const PpoBatch& batch, const PolicyParameters& params, double clip,
                         std::span<const int> indices, Vector* grad_policy,
                         Vector* grad_value_head) {
  if (!(clip > 0.0)) throw std::invalid_argument("ppo: clip must be > 0");
  long total = 0;
  for (int idx : indices) {
    total += static_cast<long>(batch.trajectories[static_cast<std::size_t>(idx)].steps());
  }
  if (total == 0) throw std::invalid_argument("ppo: no actions in selected trajectories");
  const double inv_n = 1.0 / static_cast<double>(total);
  const PolicyShape& shape = params.shape;

  PpoStats stats;
  long clipped = 0;
  std::vector<TokenId> seq;
  for (int idx : indices) {
    const Trajectory& traj = batch.trajectories[static_cast<std::size_t>(idx)];
    const AdvantageEstimate& est = batch.estimates[static_cast<std::size_t>(idx)];
    seq = traj.context;
    seq.insert(seq.end(), traj.sampled_actions.begin(), traj.sampled_actions.end());
    int delims =
        count_delims(params.shape, std::span<const TokenId>(seq.data(), traj.context.size()));
    for (std::size_t t = 0; t < traj.sampled_actions.size(); ++t) {
      const std::size_t state_len = traj.context.size() + t;
      const TokenId action = traj.sampled_actions[t];
      const StepForward f =
          forward_step(params, std::span<const TokenId>(seq.data(), state_len), delims);
      const Vector logp = log_softmax(f.logits);

      const double log_ratio = logp[action] - traj.logprobs[t];
      const double ratio = std::exp(log_ratio);
      if (!std::isfinite(ratio)) {
        throw std::runtime_error("ppo: non-finite probability ratio on trajectory '" +
                                 traj.start.demo_id + "' action " + std::to_string(t));
      }
      const double adv = est.advantages[t];
      const double unclipped = ratio * adv;
      const double clipped_ratio = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
      const double clipped_term = clipped_ratio * adv;
      stats.policy_loss -= std::min(unclipped, clipped_term) * inv_n;
      if (std::abs(ratio - 1.0) > clip) ++clipped;

      const double verr = f.value - est.returns[t];
      stats.value_loss += verr * verr * inv_n;

      stats.approx_kl += ((ratio - 1.0) - log_ratio) * inv_n;
      stats.entropy -= (logp.array().exp() * logp.array()).sum() * inv_n;

      if constexpr (WithGrad) {
        // gradient flows through the surrogate only where the unclipped term
        // is the active branch of the min
        double coeff = 0.0;
        if (unclipped <= clipped_term || std::abs(ratio - 1.0) <= clip) {
          coeff = -adv * ratio * inv_n;  // d(policy_loss)/d(log pi(a))
        }
        if (coeff != 0.0) {
          Vector dlogits = (-coeff) * logp.array().exp();
          dlogits[action] += coeff;
          accumulate_backward(params, f, dlogits, 0.0, *grad_policy);
        }
        const double dvalue = 2.0 * verr * inv_n;
        PolicyParameters::VMap g_val_w(grad_value_head->data() + shape.val_w_offset(),
                                       shape.hidden_dim);
        g_val_w += f.hidden * dvalue;
        (*grad_value_head)[shape.val_b_offset()] += dvalue;
      }
      if (action == params.shape.delim_token) ++delims;
    }
  }
  stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(total);
  return stats;
}

}  // namespace detail

/// Loss evaluation over the whole batch (no gradients).
inline PpoStats ppo_losses(const PpoBatch& batch, const PolicyParameters& params, double clip) {
  std::vector<int> all(batch.trajectories.size());
  std::iota(all.begin(), all.end(), 0);
  return detail::ppo_eval<false>(batch, params, clip, all, nullptr, nullptr);
}

/// Gradients over the selected trajectories: the full clipped-surrogate
/// gradient and the value-head partials of the value loss. Returns the stats
/// of the same subset.
inline PpoStats ppo_loss_gradient(const PpoBatch& batch, const PolicyParameters& params,
                                  double clip, std::span<const int> indices, Vector& grad_policy,
                                  Vector& grad_value_head) {
  grad_policy = Vector::Zero(params.shape.param_count());
  grad_value_head = Vector::Zero(params.shape.param_count());
  return detail::ppo_eval<true>(batch, params, clip, indices, &grad_policy, &grad_value_head);
}

/// Full gradient of the value loss, including the path through the shared
/// encoder. The training loop restricts value updates to the head, so this
/// exists for verification and for anyone who wants the unrestricted path.
inline Vector value_loss_gradient(const PpoBatch& batch, const PolicyParameters& params,
                                  std::span<const int> indices) {
  long total = 0;
  for (int idx : indices) {
    total += static_cast<long>(batch.trajectories[static_cast<std::size_t>(idx)].steps());
  }
  if (total == 0) throw std::invalid_argument("ppo: no actions in selected trajectories");
  const double inv_n = 1.0 / static_cast<double>(total);

  Vector grad = Vector::Zero(params.shape.param_count());
  std::vector<TokenId> seq;
  const Vector no_dlogits = Vector::Zero(params.shape.vocab_size);
  for (int idx : indices) {
    const Trajectory& traj = batch.trajectories[static_cast<std::size_t>(idx)];
    const AdvantageEstimate& est = batch.estimates[static_cast<std::size_t>(idx)];
    seq = traj.context;
    seq.insert(seq.end(), traj.sampled_actions.begin(), traj.sampled_actions.end());
    int delims = detail::count_delims(params.shape,
                                      std::span<const TokenId>(seq.data(), traj.context.size()));
    for (std::size_t t = 0; t < traj.sampled_actions.size(); ++t) {
      const std::size_t state_len = traj.context.size() + t;
      const StepForward f =
          forward_step(params, std::span<const TokenId>(seq.data(), state_len), delims);
      const double dvalue = 2.0 * (f.value - est.returns[t]) * inv_n;
      accumulate_backward(params, f, no_dlogits, dvalue, grad);
      if (traj.sampled_actions[t] == params.shape.delim_token) ++delims;
    }
  }
  return grad;
}

struct AdamState {
  Vector m, v;
  long t = 0;

  void reset(long n) {
    m = Vector::Zero(n);
    v = Vector::Zero(n);
    t = 0;
  }
};

inline void adam_step(Vector& params, AdamState& state, const Vector& grad, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (state.m.size() != params.size()) state.reset(params.size());
  ++state.t;
  state.m = beta1 * state.m + (1.0 - beta1) * grad;
  state.v = beta2 * state.v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double mhat = 1.0 / (1.0 - std::pow(beta1, static_cast<double>(state.t)));
  const double vhat = 1.0 / (1.0 - std::pow(beta2, static_cast<double>(state.t)));
  params.array() -=
      lr * (state.m.array() * mhat) / ((state.v.array() * vhat).sqrt() + eps);
}

/// Optimizer state for one run: the policy surrogate and the value probe move
/// at different rates, so they keep separate Adam moments.
struct PpoOptimizer {
  AdamState policy;
  AdamState value;

  void reset(long n) {
    policy.reset(n);
    value.reset(n);
  }
};

struct PpoUpdateResult {
  PpoStats stats;       // means over the minibatch steps actually taken
  int epochs_run = 0;
  bool rolled_back = false;
};

/// Several epochs of minibatch Adam steps on the PPO losses, stopping early
/// when the approximate KL to the behavior policy passes the ceiling. The
/// shared encoder is trained by the policy surrogate alone; the value head is
/// regressed onto the GAE returns as a probe of the shared features, at its
/// own learning rate. With `update_policy` false only the value head learns
/// (warm-up phase). A non-finite loss rolls the parameters back to their
/// pre-update values.
inline PpoUpdateResult ppo_update(PolicyParameters& params, PpoOptimizer& opt,
                                  const PpoBatch& batch, const RunConfig& cfg, rng::Stream& rng,
                                  bool update_policy = true) {
  const Vector before = params.flat;
  const PpoOptimizer opt_before = opt;

  std::vector<int> order(batch.trajectories.size());
  std::iota(order.begin(), order.end(), 0);

  PpoUpdateResult result;
  PpoStats sums;
  long steps = 0;
  Vector grad_policy, grad_value;
  for (int epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(cfg.minibatch_size), order.size());
      const std::span<const int> chunk(order.data() + begin, end - begin);
      PpoStats stats;
      try {
        stats = ppo_loss_gradient(batch, params, cfg.clip, chunk, grad_policy, grad_value);
      } catch (const std::runtime_error&) {
        params.flat = before;
        opt = opt_before;
        result.rolled_back = true;
        return result;
      }
      if (!std::isfinite(stats.policy_loss) || !std::isfinite(stats.value_loss) ||
          !grad_policy.allFinite() || !grad_value.allFinite()) {
        params.flat = before;
        opt = opt_before;
        result.rolled_back = true;
        return result;
      }
      if (update_policy) adam_step(params.flat, opt.policy, grad_policy, cfg.rl_lr);
      adam_step(params.flat, opt.value, grad_value, cfg.value_lr);
      sums.policy_loss += stats.policy_loss;
      sums.value_loss += stats.value_loss;
      sums.clip_fraction += stats.clip_fraction;
      sums.approx_kl += stats.approx_kl;
      sums.entropy += stats.entropy;
      ++steps;
    }
    result.epochs_run = epoch + 1;
    if (ppo_losses(batch, params, cfg.clip).approx_kl > cfg.kl_stop) break;
  }

  if (steps > 0) {
    const double inv = 1.0 / static_cast<double>(steps);
    result.stats.policy_loss = sums.policy_loss * inv;
    result.stats.value_loss = sums.value_loss * inv;
    result.stats.clip_fraction = sums.clip_fraction * inv;
    result.stats.approx_kl = sums.approx_kl * inv;
    result.stats.entropy = sums.entropy * inv;
  }
  return result;
}

}  // namespace revcurl
