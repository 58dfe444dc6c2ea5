#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "revcurl/chain_env.hpp"
#include "revcurl/config.hpp"
#include "revcurl/corpus_io.hpp"
#include "revcurl/curriculum.hpp"
#include "revcurl/metrics.hpp"
#include "revcurl/parallel.hpp"
#include "revcurl/policy.hpp"
#include "revcurl/ppo.hpp"
#include "revcurl/types.hpp"

namespace revcurl {

struct Corpus {
  ChainArithmeticSpec spec;
  Vocabulary vocab;
  std::vector<Demonstration> train;
  std::vector<Demonstration> test;
};

/// Train and held-out corpora from disjoint seed streams of the same spec.
inline Corpus build_corpus(const RunConfig& cfg) {
  cfg.validate();
  Corpus c;
  c.spec = ChainArithmeticSpec::from_config(cfg);
  c.vocab = chain_vocabulary();
  c.train = generate_corpus(c.spec, c.vocab, cfg.data_seed, "train", cfg.train_size);
  c.test = generate_corpus(c.spec, c.vocab, cfg.data_seed, "test", cfg.test_size);
  return c;
}

inline std::vector<EvalInstance> eval_instances(std::span<const Demonstration> demos,
                                                bool held_out) {
  std::vector<EvalInstance> out;
  out.reserve(demos.size());
  for (const auto& d : demos) out.push_back(EvalInstance::from_demo(d, held_out));
  return out;
}

/// Greedy exact-match accuracy on extracted answers.
inline double evaluate(const PolicyParameters& params, std::span<const EvalInstance> items,
                       const Vocabulary& vocab, int max_len) {
  if (items.empty()) throw std::invalid_argument("evaluate: empty evaluation set");
  long correct = 0;
  for (const auto& item : items) {
    std::vector<TokenId> seq = item.prompt;
    const auto continuation = greedy_rollout(params, seq, vocab, max_len);
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    const auto answer = extract_answer(seq, vocab);
    if (answer && *answer == item.gold_answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

/// Greedy success rate when rollouts start from the leading `fraction` of each
/// demonstration's actions.
inline double success_rate_at_fraction(const PolicyParameters& params,
                                       std::span<const Demonstration> demos, double fraction,
                                       const Vocabulary& vocab, int max_len) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw std::invalid_argument("success_rate_at_fraction: fraction must be in [0, 1)");
  }
  if (demos.empty()) throw std::invalid_argument("success_rate_at_fraction: no demonstrations");
  long correct = 0;
  for (const auto& d : demos) {
    const int k = std::min(d.length() - 1,
                           static_cast<int>(std::floor(fraction * static_cast<double>(d.length()))));
    std::vector<TokenId> seq = d.prompt;
    seq.insert(seq.end(), d.actions.begin(), d.actions.begin() + k);
    const auto continuation = greedy_rollout(params, seq, vocab, max_len);
    seq.insert(seq.end(), continuation.begin(), continuation.end());
    const auto answer = extract_answer(seq, vocab);
    if (answer && *answer == d.gold_answer) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(demos.size());
}

/// One success-rate point per prefix fraction.
inline std::vector<std::pair<double, double>> accuracy_vs_start_state(
    const PolicyParameters& params, std::span<const Demonstration> demos,
    std::span<const double> fractions, const Vocabulary& vocab, int max_len) {
  std::vector<std::pair<double, double>> curve;
  curve.reserve(fractions.size());
  for (double p : fractions) {
    curve.emplace_back(p, success_rate_at_fraction(params, demos, p, vocab, max_len));
  }
  return curve;
}

// ---------------------------------------------------------------------------
// SFT warm-up

struct SftResult {
  PolicyParameters params;
  double final_nll = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Maximum-likelihood warm-up on the demonstrations: seeded init, shuffled
/// minibatch SGD epochs on the token NLL, then greedy accuracy on both splits.
inline SftResult run_sft(const RunConfig& cfg, const Corpus& corpus, std::uint64_t seed,
                         const std::filesystem::path& outdir = {}) {
  cfg.validate();
  if (corpus.train.empty()) throw std::invalid_argument("run_sft: empty training corpus");

  MetricsWriter metrics;
  if (!outdir.empty()) {
    std::filesystem::create_directories(outdir);
    metrics = MetricsWriter(outdir / "sft_metrics.csv");
  }

  const PolicyShape shape = make_policy_shape(cfg, corpus.vocab, corpus.spec);
  rng::Stream init_rng(rng::derive_seed(seed, "init"));
  SftResult result{PolicyParameters::random_init(shape, init_rng)};

  rng::Stream shuffle_rng(rng::derive_seed(seed, "sft"));
  std::vector<std::size_t> order(corpus.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  std::vector<Demonstration> minibatch;
  for (int epoch = 0; epoch < cfg.sft_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double nll_weighted = 0.0;
    long tokens = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(cfg.minibatch_size), order.size());
      minibatch.clear();
      long batch_tokens = 0;
      for (std::size_t i = begin; i < end; ++i) {
        minibatch.push_back(corpus.train[order[i]]);
        batch_tokens += corpus.train[order[i]].length();
      }
      const double nll = sft_update(result.params, minibatch, cfg.sft_lr);
      nll_weighted += nll * static_cast<double>(batch_tokens);
      tokens += batch_tokens;
    }
    result.final_nll = nll_weighted / static_cast<double>(tokens);
    metrics.row(epoch, "sft", "nll", result.final_nll);
  }

  const auto train_set = eval_instances(corpus.train, false);
  const auto test_set = eval_instances(corpus.test, true);
  result.train_accuracy = evaluate(result.params, train_set, corpus.vocab, cfg.max_rollout_len);
  result.test_accuracy = evaluate(result.params, test_set, corpus.vocab, cfg.max_rollout_len);
  metrics.row(cfg.sft_epochs, "sft", "train_accuracy", result.train_accuracy);
  metrics.row(cfg.sft_epochs, "sft", "test_accuracy", result.test_accuracy);

  if (!outdir.empty()) {
    save_checkpoint(result.params, outdir / "checkpoint_sft.bin", outdir / "checkpoint_sft.manifest");
  }
  return result;
}

// ---------------------------------------------------------------------------
// reinforcement-learning runs

struct ExperimentRecord {
  TrainMode mode = TrainMode::mixed;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double best_accuracy = 0.0;
  std::vector<long> stage_starts;          // staged mode: update index where each stage begins
  std::vector<std::pair<long, double>> eval_curve;
  std::map<int, std::vector<std::pair<long, double>>> difficulty_curves;
  std::vector<std::pair<long, double>> reward_curve;
  std::vector<std::pair<long, double>> return_curve;
  std::vector<long> stage_coverage;  // consumed start states per stage (index 0 = stage 1)
  long total_updates = 0;
  long param_count = 0;
  int rollbacks = 0;
  double wall_seconds = 0.0;

  std::vector<long> interior_boundaries() const {
    if (stage_starts.size() < 2) return {};
    return {stage_starts.begin() + 1, stage_starts.end()};
  }
};

namespace detail {

struct Segment {
  std::vector<StartState> states;
  int updates = 0;
  int stage = 0;  // 0 = not a staged segment
};

inline void write_summary(const ExperimentRecord& record, const RunConfig& cfg,
                          const std::filesystem::path& outdir) {
  nlohmann::json j;
  j["mode"] = mode_name(record.mode);
  j["seed"] = record.seed;
  j["final_accuracy"] = record.final_accuracy;
  j["best_accuracy"] = record.best_accuracy;
  j["stage_boundaries"] = record.interior_boundaries();
  j["total_updates"] = record.total_updates;
  j["param_count"] = record.param_count;
  j["rollbacks"] = record.rollbacks;
  j["wall_clock_s"] = record.wall_seconds;
  j["stages"] = cfg.stages;
  std::ofstream out(outdir / "summary.json");
  if (!out) throw std::runtime_error("cannot write summary in '" + outdir.string() + "'");
  out << j.dump(2) << '\n';
}

/// Shared PPO loop for all three regimes. Vanilla is the single-stage
/// curriculum; staged walks the stage datasets in order; mixed trains on
/// their union. Data construction is identical, only the schedule changes.
/// `custom_segments` (ablation harness) replaces the derived schedule.
inline ExperimentRecord run_schedule(const RunConfig& cfg, const Corpus& corpus,
                                     const PolicyParameters& snapshot, std::uint64_t seed,
                                     TrainMode mode, const std::filesystem::path& outdir,
                                     std::vector<Segment> custom_segments = {}) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();

  MetricsWriter metrics;
  if (!outdir.empty()) {
    std::filesystem::create_directories(outdir);
    metrics = MetricsWriter(outdir / "metrics.csv");
    std::ofstream cfg_out(outdir / "config.resolved");
    cfg_out << serialize_config(cfg);
  }

  const int stage_count = (mode == TrainMode::vanilla) ? 1 : cfg.stages;

  std::vector<Segment> segments;
  if (!custom_segments.empty()) {
    segments = std::move(custom_segments);
  } else if (mode == TrainMode::staged) {
    const auto stage_datasets = build_stage_datasets(corpus.train, stage_count);
    const int base = cfg.rl_updates / stage_count;
    const int rem = cfg.rl_updates % stage_count;
    for (int m = 1; m <= stage_count; ++m) {
      segments.push_back(Segment{stage_datasets[static_cast<std::size_t>(m - 1)].start_states,
                                 base + (m <= rem ? 1 : 0), m});
    }
  } else {
    const auto stage_datasets = build_stage_datasets(corpus.train, stage_count);
    auto mixed = build_mixed_dataset(stage_datasets);
    segments.push_back(Segment{std::move(mixed.start_states), cfg.rl_updates, 0});
  }

  std::unordered_map<std::string, const Demonstration*> by_id;
  by_id.reserve(corpus.train.size());
  for (const auto& d : corpus.train) by_id.emplace(d.id, &d);

  const auto test_set = eval_instances(corpus.test, true);
  const std::size_t difficulty_n =
      std::min<std::size_t>(corpus.test.size(), static_cast<std::size_t>(cfg.eval_difficulty_subset));
  const std::span<const Demonstration> difficulty_demos(corpus.test.data(), difficulty_n);
  const bool track_difficulty = mode != TrainMode::vanilla && cfg.stages >= 2;

  ExperimentRecord record;
  record.mode = mode;
  record.seed = seed;
  record.param_count = snapshot.shape.param_count();
  record.stage_coverage.assign(static_cast<std::size_t>(stage_count), 0);

  PolicyParameters params = snapshot;
  const PolicyParameters frozen = snapshot;  // KL reference for the whole run
  PpoOptimizer opt;
  opt.reset(params.shape.param_count());
  rng::Stream ppo_rng(rng::derive_seed(seed, "ppo"));

  RolloutSettings rollout_settings{cfg.max_rollout_len, cfg.epsilon, cfg.variant, cfg.gamma_d};

  long total_updates = 0;
  for (const auto& seg : segments) total_updates += seg.updates;

  const auto do_eval = [&](long step) {
    const double acc = evaluate(params, test_set, corpus.vocab, cfg.max_rollout_len);
    metrics.row(step, "eval", "accuracy", acc);
    record.eval_curve.emplace_back(step, acc);
    if (track_difficulty) {
      for (int m = 1; m <= cfg.stages; ++m) {
        const double fraction = 1.0 - static_cast<double>(m) / static_cast<double>(cfg.stages);
        const double level_acc = success_rate_at_fraction(params, difficulty_demos, fraction,
                                                          corpus.vocab, cfg.max_rollout_len);
        metrics.row(step, "eval", "accuracy_difficulty_" + std::to_string(m), level_acc);
        record.difficulty_curves[m].emplace_back(step, level_acc);
      }
    }
  };

  do_eval(0);

  long update = 0;
  std::size_t segment_index = 0;
  for (const auto& segment : segments) {
    if (mode == TrainMode::staged) {
      record.stage_starts.push_back(update);
      metrics.row(update, "train", "stage", segment.stage);
    }
    DatasetSampler sampler(segment.states, rng::derive_seed(seed, "sampler", segment_index));
    ++segment_index;

    for (int u = 0; u < segment.updates; ++u) {
      std::vector<StartState> starts;
      starts.reserve(static_cast<std::size_t>(cfg.batch_size));
      for (int i = 0; i < cfg.batch_size; ++i) {
        const StartState& s = sampler.next();
        record.stage_coverage[static_cast<std::size_t>(s.stage - 1)] += 1;
        starts.push_back(s);
      }

      std::vector<Trajectory> trajectories(starts.size());
      parallel_for(static_cast<int>(starts.size()), [&](int i) {
        const auto it = by_id.find(starts[static_cast<std::size_t>(i)].demo_id);
        if (it == by_id.end()) {
          throw std::runtime_error("unknown demonstration id '" +
                                   starts[static_cast<std::size_t>(i)].demo_id + "'");
        }
        rng::Stream rollout_rng(rng::derive_seed(
            seed, "rollout",
            static_cast<std::uint64_t>(update) * static_cast<std::uint64_t>(cfg.batch_size) +
                static_cast<std::uint64_t>(i)));
        trajectories[static_cast<std::size_t>(i)] =
            sample_rollout(params, frozen, *it->second, starts[static_cast<std::size_t>(i)],
                           corpus.vocab, rollout_settings, rollout_rng);
      });

      double reward_sum = 0.0;
      double return_sum = 0.0;
      auto batch = PpoBatch::build(std::move(trajectories), cfg.gamma, cfg.lambda, cfg.beta);
      for (const auto& traj : batch.trajectories) {
        reward_sum += traj.env_reward;
        for (double r : traj.per_token_rewards) return_sum += r;
      }
      const double mean_reward = reward_sum / static_cast<double>(batch.trajectories.size());
      const double mean_return = return_sum / static_cast<double>(batch.trajectories.size());

      const bool policy_active = update >= cfg.value_warmup;
      const auto result = ppo_update(params, opt, batch, cfg, ppo_rng, policy_active);
      if (result.rolled_back) ++record.rollbacks;

      metrics.row(update, "train", "mean_reward", mean_reward);
      metrics.row(update, "train", "mean_return", mean_return);
      metrics.row(update, "train", "approx_kl", result.stats.approx_kl);
      metrics.row(update, "train", "clip_fraction", result.stats.clip_fraction);
      metrics.row(update, "train", "entropy", result.stats.entropy);
      record.reward_curve.emplace_back(update, mean_reward);
      record.return_curve.emplace_back(update, mean_return);

      ++update;
      if (update % cfg.eval_every == 0 || update == total_updates) do_eval(update);
    }
  }

  record.total_updates = update;
  record.final_accuracy = record.eval_curve.empty() ? 0.0 : record.eval_curve.back().second;
  record.best_accuracy = 0.0;
  for (const auto& [step, acc] : record.eval_curve) {
    record.best_accuracy = std::max(record.best_accuracy, acc);
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (!outdir.empty()) {
    save_checkpoint(params, outdir / "checkpoint_final.bin", outdir / "checkpoint_final.manifest");
    write_summary(record, cfg, outdir);
  }
  return record;
}

}  // namespace detail

/// Outcome-supervised PPO from the original prompts only.
inline ExperimentRecord run_vanilla_rl(const RunConfig& cfg, const Corpus& corpus,
                                       const PolicyParameters& snapshot, std::uint64_t seed,
                                       const std::filesystem::path& outdir = {}) {
  return detail::run_schedule(cfg, corpus, snapshot, seed, TrainMode::vanilla, outdir);
}

/// Reverse curriculum run one stage at a time, nearest the goal first.
inline ExperimentRecord run_staged(const RunConfig& cfg, const Corpus& corpus,
                                   const PolicyParameters& snapshot, std::uint64_t seed,
                                   const std::filesystem::path& outdir = {}) {
  if (cfg.stages < 2) throw std::invalid_argument("run_staged: needs curriculum.M >= 2");
  return detail::run_schedule(cfg, corpus, snapshot, seed, TrainMode::staged, outdir);
}

/// Mixed-stage run over the union of all stage datasets.
inline ExperimentRecord run_r3(const RunConfig& cfg, const Corpus& corpus,
                               const PolicyParameters& snapshot, std::uint64_t seed,
                               const std::filesystem::path& outdir = {}) {
  return detail::run_schedule(cfg, corpus, snapshot, seed, TrainMode::mixed, outdir);
}

/// Mixed-stage run on an explicit start-state list (the data-scale and
/// data-part ablation harnesses).
inline ExperimentRecord run_mixed_on(const RunConfig& cfg, const Corpus& corpus,
                                     const PolicyParameters& snapshot, std::uint64_t seed,
                                     std::vector<StartState> states,
                                     const std::filesystem::path& outdir = {}) {
  std::vector<detail::Segment> segments;
  segments.push_back(detail::Segment{std::move(states), cfg.rl_updates, 0});
  return detail::run_schedule(cfg, corpus, snapshot, seed, TrainMode::mixed, outdir,
                              std::move(segments));
}

}  // namespace revcurl
