#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "revcurl/chain_env.hpp"
#include "revcurl/config.hpp"
#include "revcurl/rng.hpp"
#include "revcurl/types.hpp"
#include "revcurl/vocabulary.hpp"

namespace revcurl {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Architecture of the token policy. The next-token distribution is an MLP
/// over a fixed-size view of the state built from four token groups plus a
/// counter:
///   - the first `prefix_slots` tokens (the prompt at stable positions),
///   - the last `window` tokens (right-aligned, pad-filled),
///   - the current-step view: up to `step_view` tokens since the last step
///     delimiter, left-anchored, so every derivation step presents the same
///     geometry and weights are shared across steps,
///   - a count-anchored gather of `gather_stride` prompt tokens starting at
///     gather_offset + count * gather_stride, which puts the operation the
///     derivation should consume next at fixed slots,
///   - a one-hot of the step-delimiter count, capped at `step_cap`.
/// One tanh layer feeds both the token logits and the value head.
struct PolicyShape {
  int vocab_size = 0;
  int embed_dim = 0;
  int prefix_slots = 0;
  int window = 0;
  int step_view = 0;
  int gather_offset = 0;
  int gather_stride = 0;
  int step_cap = 0;  // delimiter-count one-hot size
  int hidden_dim = 0;
  TokenId pad_token = 0;
  TokenId delim_token = 0;

  int slot_count() const { return prefix_slots + window + step_view + gather_stride; }
  int feature_dim() const { return slot_count() * embed_dim + step_cap; }

  long embed_count() const { return static_cast<long>(embed_dim) * vocab_size; }
  long enc_w_count() const { return static_cast<long>(hidden_dim) * feature_dim(); }
  long out_w_count() const { return static_cast<long>(vocab_size) * hidden_dim; }

  long embed_offset() const { return 0; }
  long enc_w_offset() const { return embed_offset() + embed_count(); }
  long enc_b_offset() const { return enc_w_offset() + enc_w_count(); }
  long out_w_offset() const { return enc_b_offset() + hidden_dim; }
  long out_b_offset() const { return out_w_offset() + out_w_count(); }
  long val_w_offset() const { return out_b_offset() + vocab_size; }
  long val_b_offset() const { return val_w_offset() + hidden_dim; }
  long param_count() const { return val_b_offset() + 1; }

  void validate() const {
    if (vocab_size < 2 || embed_dim < 1 || window < 1 || prefix_slots < 0 || step_view < 0 ||
        gather_offset < 0 || gather_stride < 0 || step_cap < 1 || hidden_dim < 1) {
      throw std::invalid_argument("policy shape: inconsistent dimensions");
    }
    if (pad_token < 0 || pad_token >= vocab_size || delim_token < 0 ||
        delim_token >= vocab_size) {
      throw std::invalid_argument("policy shape: special token ids out of range");
    }
  }

  friend bool operator==(const PolicyShape&, const PolicyShape&) = default;
};

inline PolicyShape make_policy_shape(const RunConfig& cfg, const Vocabulary& vocab,
                                     const ChainArithmeticSpec& spec) {
  PolicyShape s;
  s.vocab_size = vocab.size();
  s.embed_dim = cfg.embed_dim;
  s.prefix_slots = max_prompt_length(spec);
  s.window = cfg.window;
  const int digits = detail::decimal_digits(std::max<long long>(1, spec.max_printed_value()));
  s.step_view = 3 * digits + 3;       // "a op b = r <step>" at uniform digit width
  s.gather_offset = digits;           // prompt layout: v0, then op/operand groups
  s.gather_stride = digits + 1;
  s.step_cap = spec.steps_max + 2;
  s.hidden_dim = cfg.hidden_dim;
  s.pad_token = vocab.pad_id;
  s.delim_token = vocab.step_id;
  s.validate();
  return s;
}

/// All weights live in one flat vector; named tensors are Eigen maps into it.
/// That keeps optimizer steps, finite-difference checks and checkpointing
/// trivially uniform.
struct PolicyParameters {
  PolicyShape shape;
  Vector flat;

  using Map = Eigen::Map<Matrix>;
  using CMap = Eigen::Map<const Matrix>;
  using VMap = Eigen::Map<Vector>;
  using CVMap = Eigen::Map<const Vector>;

  // embedding: embed_dim x vocab, one column per token
  Map embedding() { return {flat.data() + shape.embed_offset(), shape.embed_dim, shape.vocab_size}; }
  CMap embedding() const { return {flat.data() + shape.embed_offset(), shape.embed_dim, shape.vocab_size}; }
  Map enc_w() { return {flat.data() + shape.enc_w_offset(), shape.hidden_dim, shape.feature_dim()}; }
  CMap enc_w() const { return {flat.data() + shape.enc_w_offset(), shape.hidden_dim, shape.feature_dim()}; }
  VMap enc_b() { return {flat.data() + shape.enc_b_offset(), shape.hidden_dim}; }
  CVMap enc_b() const { return {flat.data() + shape.enc_b_offset(), shape.hidden_dim}; }
  Map out_w() { return {flat.data() + shape.out_w_offset(), shape.vocab_size, shape.hidden_dim}; }
  CMap out_w() const { return {flat.data() + shape.out_w_offset(), shape.vocab_size, shape.hidden_dim}; }
  VMap out_b() { return {flat.data() + shape.out_b_offset(), shape.vocab_size}; }
  CVMap out_b() const { return {flat.data() + shape.out_b_offset(), shape.vocab_size}; }
  VMap val_w() { return {flat.data() + shape.val_w_offset(), shape.hidden_dim}; }
  CVMap val_w() const { return {flat.data() + shape.val_w_offset(), shape.hidden_dim}; }
  double& val_b() { return flat[shape.val_b_offset()]; }
  double val_b() const { return flat[shape.val_b_offset()]; }

  static PolicyParameters zero_init(const PolicyShape& shape) {
    shape.validate();
    PolicyParameters p;
    p.shape = shape;
    p.flat = Vector::Zero(shape.param_count());
    return p;
  }

  static PolicyParameters random_init(const PolicyShape& shape, rng::Stream& rng) {
    PolicyParameters p = zero_init(shape);
    auto fill = [&rng](auto&& block, double stddev) {
      for (long i = 0; i < block.size(); ++i) block.data()[i] = rng.normal(0.0, stddev);
    };
    fill(p.embedding(), 0.5);
    fill(p.enc_w(), 1.0 / std::sqrt(static_cast<double>(shape.feature_dim())));
    fill(p.out_w(), 1.0 / std::sqrt(static_cast<double>(shape.hidden_dim)));
    fill(p.val_w(), 1.0 / std::sqrt(static_cast<double>(shape.hidden_dim)));
    return p;
  }
};

inline Vector log_softmax(const Vector& logits) {
  const double m = logits.maxCoeff();
  const double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

/// Exact KL between two categorical distributions given as log-probabilities.
inline double kl_categorical(const Vector& logp, const Vector& logq) {
  if (logp.size() != logq.size()) {
    throw std::invalid_argument("kl_categorical: size mismatch");
  }
  double kl = 0.0;
  for (long i = 0; i < logp.size(); ++i) {
    kl += std::exp(logp[i]) * (logp[i] - logq[i]);
  }
  return kl < 0.0 ? 0.0 : kl;  // clamp away rounding residue
}

namespace detail {

inline int count_delims(const PolicyShape& shape, std::span<const TokenId> state) {
  int n = 0;
  for (TokenId t : state) {
    if (t == shape.delim_token) ++n;
  }
  return n;
}

inline void check_state(const PolicyShape& shape, std::span<const TokenId> state) {
  if (state.empty()) throw std::invalid_argument("policy: state must be non-empty");
  for (TokenId t : state) {
    if (t < 0 || t >= shape.vocab_size) {
      throw std::out_of_range("policy: token id " + std::to_string(t) + " outside vocabulary 0.." +
                              std::to_string(shape.vocab_size - 1));
    }
  }
}

/// Token occupying each feature slot for a given state.
inline void fill_slots(const PolicyShape& shape, std::span<const TokenId> state, int delim_count,
                       std::span<TokenId> slots) {
  const int n = static_cast<int>(state.size());
  int pos = 0;
  for (int p = 0; p < shape.prefix_slots; ++p) {
    slots[static_cast<std::size_t>(pos++)] =
        p < n ? state[static_cast<std::size_t>(p)] : shape.pad_token;
  }
  for (int w = 0; w < shape.window; ++w) {
    const int src = n - shape.window + w;
    slots[static_cast<std::size_t>(pos++)] =
        src >= 0 ? state[static_cast<std::size_t>(src)] : shape.pad_token;
  }
  if (shape.step_view > 0) {
    int step_begin = n;  // index after the most recent step delimiter
    while (step_begin > 0 && state[static_cast<std::size_t>(step_begin - 1)] != shape.delim_token) {
      --step_begin;
    }
    for (int sidx = 0; sidx < shape.step_view; ++sidx) {
      const int src = step_begin + sidx;
      slots[static_cast<std::size_t>(pos++)] =
          src < n ? state[static_cast<std::size_t>(src)] : shape.pad_token;
    }
  }
  for (int g = 0; g < shape.gather_stride; ++g) {
    const int src = shape.gather_offset + delim_count * shape.gather_stride + g;
    slots[static_cast<std::size_t>(pos++)] =
        src < n ? state[static_cast<std::size_t>(src)] : shape.pad_token;
  }
}

inline void fill_features(const PolicyParameters& params, std::span<const TokenId> slots,
                          int delim_count, double* feature_col) {
  const PolicyShape& shape = params.shape;
  const auto embed = params.embedding();
  for (int s = 0; s < shape.slot_count(); ++s) {
    Eigen::Map<Vector>(feature_col + static_cast<long>(s) * shape.embed_dim, shape.embed_dim) =
        embed.col(slots[static_cast<std::size_t>(s)]);
  }
  Eigen::Map<Vector> count_part(feature_col + static_cast<long>(shape.slot_count()) * shape.embed_dim,
                                shape.step_cap);
  count_part.setZero();
  count_part[std::min(delim_count, shape.step_cap - 1)] = 1.0;
}

}  // namespace detail

/// Everything one forward pass produces, kept around so a backward pass can
/// reuse it.
struct StepForward {
  std::vector<TokenId> slots;
  Vector features;
  Vector hidden;  // post-tanh
  Vector logits;
  double value = 0.0;
};

inline StepForward forward_step(const PolicyParameters& params, std::span<const TokenId> state,
                                int delim_count) {
  detail::check_state(params.shape, state);
  StepForward f;
  f.slots.resize(static_cast<std::size_t>(params.shape.slot_count()));
  detail::fill_slots(params.shape, state, f.slots);
  f.features.resize(params.shape.feature_dim());
  detail::fill_features(params, f.slots, delim_count, f.features.data());
  f.hidden = (params.enc_w() * f.features + params.enc_b()).array().tanh();
  f.logits = params.out_w() * f.hidden + params.out_b();
  f.value = params.val_w().dot(f.hidden) + params.val_b();
  return f;
}

inline StepForward forward_step(const PolicyParameters& params, std::span<const TokenId> state) {
  detail::check_state(params.shape, state);
  return forward_step(params, state, detail::count_delims(params.shape, state));
}

/// Unnormalized next-token scores; softmax of these is the policy.
inline Vector logits(const PolicyParameters& params, std::span<const TokenId> state) {
  return forward_step(params, state).logits;
}

inline double state_value(const PolicyParameters& params, std::span<const TokenId> state) {
  return forward_step(params, state).value;
}

/// Exact per-token KL(pi_params(.|state) || pi_reference(.|state)).
inline double per_token_kl(const PolicyParameters& params, const PolicyParameters& reference,
                           std::span<const TokenId> state) {
  if (params.shape != reference.shape) {
    throw std::invalid_argument("per_token_kl: parameter shapes differ");
  }
  const Vector lp = log_softmax(forward_step(params, state).logits);
  const Vector lq = log_softmax(forward_step(reference, state).logits);
  return kl_categorical(lp, lq);
}

/// Adds d(scalar)/d(params) to `grad` for one position, given d(scalar)/d(logits)
/// and d(scalar)/d(value).
inline void accumulate_backward(const PolicyParameters& params, const StepForward& f,
                                const Vector& dlogits, double dvalue, Vector& grad) {
  const PolicyShape& shape = params.shape;
  PolicyParameters::Map g_embed(grad.data() + shape.embed_offset(), shape.embed_dim,
                                shape.vocab_size);
  PolicyParameters::Map g_enc_w(grad.data() + shape.enc_w_offset(), shape.hidden_dim,
                                shape.feature_dim());
  PolicyParameters::VMap g_enc_b(grad.data() + shape.enc_b_offset(), shape.hidden_dim);
  PolicyParameters::Map g_out_w(grad.data() + shape.out_w_offset(), shape.vocab_size,
                                shape.hidden_dim);
  PolicyParameters::VMap g_out_b(grad.data() + shape.out_b_offset(), shape.vocab_size);
  PolicyParameters::VMap g_val_w(grad.data() + shape.val_w_offset(), shape.hidden_dim);

  Vector dh = params.out_w().transpose() * dlogits;
  if (dvalue != 0.0) dh += params.val_w() * dvalue;
  const Vector dpre = dh.array() * (1.0 - f.hidden.array().square());

  g_out_w.noalias() += dlogits * f.hidden.transpose();
  g_out_b += dlogits;
  if (dvalue != 0.0) {
    g_val_w += f.hidden * dvalue;
    grad[shape.val_b_offset()] += dvalue;
  }
  g_enc_w.noalias() += dpre * f.features.transpose();
  g_enc_b += dpre;

  const Vector dfeat = params.enc_w().transpose() * dpre;
  for (int s = 0; s < shape.slot_count(); ++s) {
    g_embed.col(f.slots[static_cast<std::size_t>(s)]) +=
        dfeat.segment(static_cast<long>(s) * shape.embed_dim, shape.embed_dim);
  }
}

// ---------------------------------------------------------------------------
// sampling

struct RolloutSettings {
  int max_len = 64;
  double epsilon = 0.0;
  RewardVariant variant = RewardVariant::none;
  double gamma_d = 0.9;
};

/// Samples a trajectory from the given start state at temperature 1 until the
/// end token or the length cap, recording log-probs, values and the exact KL
/// to the frozen reference at every step. The terminal reward comes from the
/// outcome of the whole sequence; only the success branch is scaled by the
/// difficulty variant.
inline Trajectory sample_rollout(const PolicyParameters& params, const PolicyParameters& reference,
                                 const Demonstration& demo, const StartState& start,
                                 const Vocabulary& vocab, const RolloutSettings& settings,
                                 rng::Stream& rng) {
  if (start.k < 0 || start.k >= demo.length()) {
    throw std::invalid_argument("sample_rollout: start prefix outside demonstration");
  }
  Trajectory traj;
  traj.start = start;
  traj.context = demo.prompt;
  traj.context.insert(traj.context.end(), demo.actions.begin(), demo.actions.begin() + start.k);

  std::vector<TokenId> state = traj.context;
  int delims = detail::count_delims(params.shape, state);
  traj.terminated = Termination::max_length;
  for (int t = 0; t < settings.max_len; ++t) {
    const StepForward f = forward_step(params, state, delims);
    const Vector logp = log_softmax(f.logits);
    const Vector probs = logp.array().exp();
    const StepForward rf = forward_step(reference, state, delims);
    const Vector ref_logp = log_softmax(rf.logits);

    const auto action = static_cast<TokenId>(
        rng.categorical(std::span<const double>(probs.data(), static_cast<std::size_t>(probs.size()))));
    traj.sampled_actions.push_back(action);
    traj.logprobs.push_back(logp[action]);
    traj.ref_logprobs.push_back(ref_logp[action]);
    traj.values.push_back(f.value);
    traj.kl_terms.push_back(kl_categorical(logp, ref_logp));

    state.push_back(action);
    if (action == params.shape.delim_token) ++delims;
    if (action == vocab.eos_id) {
      traj.terminated = Termination::end_token;
      break;
    }
  }

  double reward = outcome_reward(state, demo.gold_answer, settings.epsilon, vocab);
  if (reward == 1.0) {
    reward = difficulty_reward(start.mu(), settings.variant, settings.gamma_d, start.demo_length,
                               start.k);
  }
  traj.env_reward = reward;
  return traj;
}

/// Greedy continuation of `context` (argmax decoding, ties to the lowest id).
inline std::vector<TokenId> greedy_rollout(const PolicyParameters& params,
                                           std::span<const TokenId> context,
                                           const Vocabulary& vocab, int max_len) {
  std::vector<TokenId> state(context.begin(), context.end());
  int delims = detail::count_delims(params.shape, state);
  std::vector<TokenId> out;
  for (int t = 0; t < max_len; ++t) {
    const StepForward f = forward_step(params, state, delims);
    Eigen::Index best = 0;
    f.logits.maxCoeff(&best);
    const auto action = static_cast<TokenId>(best);
    out.push_back(action);
    state.push_back(action);
    if (action == params.shape.delim_token) ++delims;
    if (action == vocab.eos_id) break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// supervised fine-tuning

struct SftEval {
  double mean_nll = 0.0;
  long token_count = 0;
  Vector grad;  // of the mean per-token NLL
};

/// Mean next-token negative log-likelihood over every action of every
/// demonstration in the batch, conditioned on its prefix, plus its gradient.
/// Computed as one dense batch so SFT epochs stay fast.
inline SftEval sft_nll_gradient(const PolicyParameters& params,
                                std::span<const Demonstration> batch) {
  if (batch.empty()) throw std::invalid_argument("sft: empty batch");
  const PolicyShape& shape = params.shape;

  long total = 0;
  for (const auto& d : batch) total += d.length();

  Matrix features(shape.feature_dim(), total);
  std::vector<TokenId> slots(static_cast<std::size_t>(shape.slot_count()) *
                             static_cast<std::size_t>(total));
  std::vector<TokenId> targets(static_cast<std::size_t>(total));

  long col = 0;
  std::vector<TokenId> seq;
  for (const auto& d : batch) {
    seq = d.prompt;
    seq.insert(seq.end(), d.actions.begin(), d.actions.end());
    detail::check_state(shape, seq);
    int delims = detail::count_delims(shape, std::span<const TokenId>(seq.data(), d.prompt.size()));
    for (int t = 0; t < d.length(); ++t) {
      const std::size_t state_len = d.prompt.size() + static_cast<std::size_t>(t);
      auto slot_span = std::span<TokenId>(
          slots.data() + static_cast<std::size_t>(col) * static_cast<std::size_t>(shape.slot_count()),
          static_cast<std::size_t>(shape.slot_count()));
      detail::fill_slots(shape, std::span<const TokenId>(seq.data(), state_len), slot_span);
      detail::fill_features(params, slot_span, delims, features.col(col).data());
      targets[static_cast<std::size_t>(col)] = d.actions[static_cast<std::size_t>(t)];
      if (d.actions[static_cast<std::size_t>(t)] == shape.delim_token) ++delims;
      ++col;
    }
  }

  Matrix hidden = ((params.enc_w() * features).colwise() + params.enc_b()).array().tanh();
  Matrix logit_mat = (params.out_w() * hidden).colwise() + params.out_b();

  double nll_sum = 0.0;
  Matrix dlogits(shape.vocab_size, total);
  const double inv_n = 1.0 / static_cast<double>(total);
  for (long c = 0; c < total; ++c) {
    const Vector lp = log_softmax(logit_mat.col(c));
    nll_sum -= lp[targets[static_cast<std::size_t>(c)]];
    dlogits.col(c) = lp.array().exp() * inv_n;
    dlogits(targets[static_cast<std::size_t>(c)], c) -= inv_n;
  }

  SftEval eval;
  eval.mean_nll = nll_sum * inv_n;
  eval.token_count = total;
  eval.grad = Vector::Zero(shape.param_count());

  PolicyParameters::Map g_embed(eval.grad.data() + shape.embed_offset(), shape.embed_dim,
                                shape.vocab_size);
  PolicyParameters::Map g_enc_w(eval.grad.data() + shape.enc_w_offset(), shape.hidden_dim,
                                shape.feature_dim());
  PolicyParameters::VMap g_enc_b(eval.grad.data() + shape.enc_b_offset(), shape.hidden_dim);
  PolicyParameters::Map g_out_w(eval.grad.data() + shape.out_w_offset(), shape.vocab_size,
                                shape.hidden_dim);
  PolicyParameters::VMap g_out_b(eval.grad.data() + shape.out_b_offset(), shape.vocab_size);

  Matrix dh = params.out_w().transpose() * dlogits;
  Matrix dpre = dh.array() * (1.0 - hidden.array().square());
  g_out_w.noalias() = dlogits * hidden.transpose();
  g_out_b = dlogits.rowwise().sum();
  g_enc_w.noalias() = dpre * features.transpose();
  g_enc_b = dpre.rowwise().sum();

  Matrix dfeat = params.enc_w().transpose() * dpre;
  for (long c = 0; c < total; ++c) {
    const TokenId* slot_row =
        slots.data() + static_cast<std::size_t>(c) * static_cast<std::size_t>(shape.slot_count());
    for (int s = 0; s < shape.slot_count(); ++s) {
      g_embed.col(slot_row[s]) +=
          dfeat.col(c).segment(static_cast<long>(s) * shape.embed_dim, shape.embed_dim);
    }
  }
  return eval;
}

/// One SGD step on the mean token NLL. Returns the NLL at the point the step
/// was taken from.
inline double sft_update(PolicyParameters& params, std::span<const Demonstration> batch,
                         double learning_rate) {
  SftEval eval = sft_nll_gradient(params, batch);
  if (!std::isfinite(eval.mean_nll)) {
    throw std::runtime_error("sft_update: non-finite NLL (" + std::to_string(eval.mean_nll) +
                             ") over " + std::to_string(eval.token_count) + " tokens");
  }
  params.flat -= learning_rate * eval.grad;
  return eval.mean_nll;
}

// ---------------------------------------------------------------------------
// policy gradient

/// Gradient of sum_t log pi(a_t | s_{t-1}) * advantage_t over the sampled
/// actions of one trajectory. The context tokens are conditioning only and
/// contribute no terms.
inline Vector policy_gradient_contribution(const PolicyParameters& params, const Trajectory& traj,
                                           std::span<const double> advantages) {
  if (advantages.size() != traj.sampled_actions.size()) {
    throw std::invalid_argument("policy_gradient_contribution: advantage length " +
                                std::to_string(advantages.size()) + " != sampled actions " +
                                std::to_string(traj.sampled_actions.size()));
  }
  Vector grad = Vector::Zero(params.shape.param_count());
  std::vector<TokenId> seq = traj.context;
  seq.insert(seq.end(), traj.sampled_actions.begin(), traj.sampled_actions.end());
  int delims = detail::count_delims(params.shape,
                                    std::span<const TokenId>(seq.data(), traj.context.size()));
  for (std::size_t t = 0; t < traj.sampled_actions.size(); ++t) {
    const std::size_t state_len = traj.context.size() + t;
    const TokenId action = traj.sampled_actions[t];
    if (advantages[t] != 0.0) {
      const StepForward f =
          forward_step(params, std::span<const TokenId>(seq.data(), state_len), delims);
      Vector dlogits = (-advantages[t]) * log_softmax(f.logits).array().exp();
      dlogits[action] += advantages[t];
      accumulate_backward(params, f, dlogits, 0.0, grad);
    }
    if (action == params.shape.delim_token) ++delims;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// checkpoints

namespace detail {

struct TensorEntry {
  const char* name;
  long rows, cols, offset;
};

inline std::vector<TensorEntry> tensor_entries(const PolicyShape& s) {
  return {
      {"embedding", s.embed_dim, s.vocab_size, s.embed_offset()},
      {"encoder_w", s.hidden_dim, s.feature_dim(), s.enc_w_offset()},
      {"encoder_b", s.hidden_dim, 1, s.enc_b_offset()},
      {"output_w", s.vocab_size, s.hidden_dim, s.out_w_offset()},
      {"output_b", s.vocab_size, 1, s.out_b_offset()},
      {"value_w", s.hidden_dim, 1, s.val_w_offset()},
      {"value_b", 1, 1, s.val_b_offset()},
  };
}

}  // namespace detail

/// Writes the flat parameter vector as raw doubles plus a text manifest naming
/// every tensor with its shape and element offset.
inline void save_checkpoint(const PolicyParameters& params, const std::filesystem::path& bin_path,
                            const std::filesystem::path& manifest_path) {
  const PolicyShape& s = params.shape;
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write checkpoint '" + bin_path.string() + "'");
  bin.write(reinterpret_cast<const char*>(params.flat.data()),
            static_cast<std::streamsize>(sizeof(double)) * params.flat.size());

  std::ofstream man(manifest_path);
  if (!man) throw std::runtime_error("cannot write manifest '" + manifest_path.string() + "'");
  man << "revcurl-checkpoint 1\n";
  man << "vocab_size " << s.vocab_size << "\n";
  man << "embed_dim " << s.embed_dim << "\n";
  man << "prefix_slots " << s.prefix_slots << "\n";
  man << "window " << s.window << "\n";
  man << "step_cap " << s.step_cap << "\n";
  man << "hidden_dim " << s.hidden_dim << "\n";
  man << "pad_token " << s.pad_token << "\n";
  man << "delim_token " << s.delim_token << "\n";
  man << "param_count " << s.param_count() << "\n";
  for (const auto& t : detail::tensor_entries(s)) {
    man << "tensor " << t.name << " " << t.rows << " " << t.cols << " " << t.offset << "\n";
  }
}

inline PolicyParameters load_checkpoint(const std::filesystem::path& bin_path,
                                        const std::filesystem::path& manifest_path) {
  std::ifstream man(manifest_path);
  if (!man) throw std::runtime_error("cannot open manifest '" + manifest_path.string() + "'");
  std::string word;
  int version = 0;
  man >> word >> version;
  if (word != "revcurl-checkpoint" || version != 1) {
    throw std::runtime_error("manifest '" + manifest_path.string() +
                             "': unsupported format or version");
  }
  PolicyShape s;
  long declared_count = -1;
  std::string key;
  while (man >> key) {
    if (key == "tensor") {
      std::string name;
      long r, c, off;
      man >> name >> r >> c >> off;
      continue;  // shape fields are authoritative; entries are for readers
    }
    long value;
    man >> value;
    if (key == "vocab_size") s.vocab_size = static_cast<int>(value);
    else if (key == "embed_dim") s.embed_dim = static_cast<int>(value);
    else if (key == "prefix_slots") s.prefix_slots = static_cast<int>(value);
    else if (key == "window") s.window = static_cast<int>(value);
    else if (key == "step_cap") s.step_cap = static_cast<int>(value);
    else if (key == "hidden_dim") s.hidden_dim = static_cast<int>(value);
    else if (key == "pad_token") s.pad_token = static_cast<TokenId>(value);
    else if (key == "delim_token") s.delim_token = static_cast<TokenId>(value);
    else if (key == "param_count") declared_count = value;
    else throw std::runtime_error("manifest: unknown field '" + key + "'");
  }
  s.validate();
  if (declared_count != s.param_count()) {
    throw std::runtime_error("manifest: parameter count " + std::to_string(declared_count) +
                             " does not match shape (" + std::to_string(s.param_count()) + ")");
  }

  PolicyParameters params = PolicyParameters::zero_init(s);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw std::runtime_error("cannot open checkpoint '" + bin_path.string() + "'");
  bin.read(reinterpret_cast<char*>(params.flat.data()),
           static_cast<std::streamsize>(sizeof(double)) * params.flat.size());
  if (bin.gcount() != static_cast<std::streamsize>(sizeof(double)) * params.flat.size()) {
    throw std::runtime_error("checkpoint '" + bin_path.string() + "' is truncated");
  }
  return params;
}

}  // namespace revcurl
