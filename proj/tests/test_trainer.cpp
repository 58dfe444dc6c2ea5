#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "revcurl/trainer.hpp"
#include "test_support.hpp"

using namespace revcurl;

namespace {

/// Small, fast configuration for trainer-level tests.
RunConfig fast_config() {
  RunConfig cfg;
  cfg.steps_min = 2;
  cfg.steps_max = 2;
  cfg.modulus = 10;
  cfg.train_size = 60;
  cfg.test_size = 40;
  cfg.stages = 3;
  cfg.embed_dim = 6;
  cfg.hidden_dim = 48;
  cfg.window = 10;
  cfg.sft_epochs = 30;
  cfg.sft_lr = 0.4;
  cfg.minibatch_size = 8;
  cfg.rl_updates = 12;
  cfg.batch_size = 16;
  cfg.eval_every = 4;
  cfg.eval_difficulty_subset = 20;
  cfg.max_rollout_len = 24;
  cfg.rl_lr = 2e-3;
  cfg.data_seed = 4321;
  return cfg;
}

}  // namespace

TEST_CASE("zero sft epochs returns the seeded initialization untouched") {
  RunConfig cfg = fast_config();
  cfg.sft_epochs = 0;
  const Corpus corpus = build_corpus(cfg);
  const auto a = run_sft(cfg, corpus, 5);
  const auto b = run_sft(cfg, corpus, 5);
  REQUIRE(a.params.flat == b.params.flat);

  rng::Stream init_rng(rng::derive_seed(5, "init"));
  const auto raw = PolicyParameters::random_init(
      make_policy_shape(cfg, corpus.vocab, corpus.spec), init_rng);
  REQUIRE(a.params.flat == raw.flat);
}

TEST_CASE("sft overfits a tiny corpus to full training accuracy") {
  RunConfig cfg = fast_config();
  cfg.train_size = 10;
  cfg.test_size = 10;
  cfg.sft_epochs = 200;
  cfg.minibatch_size = 10;
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 1);
  REQUIRE(sft.train_accuracy == 1.0);
  REQUIRE(sft.final_nll < 0.05);

  // a memorizing policy evaluates to exactly 1.0 on its own training set
  const auto train_set = eval_instances(corpus.train, false);
  REQUIRE(evaluate(sft.params, train_set, corpus.vocab, cfg.max_rollout_len) == 1.0);
}

TEST_CASE("sft beats the untrained policy on held-out data across seeds") {
  RunConfig cfg = fast_config();
  const Corpus corpus = build_corpus(cfg);
  const auto test_set = eval_instances(corpus.test, true);
  for (std::uint64_t seed : {1ull, 2ull, 3ull, 4ull, 5ull}) {
    RunConfig zero = cfg;
    zero.sft_epochs = 0;
    const auto untrained = run_sft(zero, corpus, seed);
    const auto trained = run_sft(cfg, corpus, seed);
    const double acc_untrained =
        evaluate(untrained.params, test_set, corpus.vocab, cfg.max_rollout_len);
    const double acc_trained = evaluate(trained.params, test_set, corpus.vocab, cfg.max_rollout_len);
    REQUIRE(acc_trained > acc_untrained);
  }
}

TEST_CASE("untrained policy on a 64-way answer space scores below 5 percent") {
  RunConfig cfg = fast_config();
  cfg.modulus = 64;
  cfg.operand_max = 63;
  cfg.test_size = 1000;
  cfg.sft_epochs = 0;
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 9);
  const auto test_set = eval_instances(corpus.test, true);
  const double acc = evaluate(sft.params, test_set, corpus.vocab, cfg.max_rollout_len);
  REQUIRE(acc < 0.05);

  // evaluation is deterministic: same snapshot, same set, same number
  REQUIRE(evaluate(sft.params, test_set, corpus.vocab, cfg.max_rollout_len) == acc);
}

TEST_CASE("vanilla record has no stage boundaries and reruns byte-identically") {
  RunConfig cfg = fast_config();
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 2);

  const auto dir_a = oracle::scratch_dir("vanilla_a");
  const auto dir_b = oracle::scratch_dir("vanilla_b");
  const auto rec_a = run_vanilla_rl(cfg, corpus, sft.params, 2, dir_a);
  const auto rec_b = run_vanilla_rl(cfg, corpus, sft.params, 2, dir_b);

  REQUIRE(rec_a.stage_starts.empty());
  REQUIRE(rec_a.interior_boundaries().empty());
  REQUIRE(rec_a.difficulty_curves.empty());
  REQUIRE(oracle::files_identical(dir_a / "metrics.csv", dir_b / "metrics.csv"));
  REQUIRE(oracle::files_identical(dir_a / "checkpoint_final.bin", dir_b / "checkpoint_final.bin"));
}

TEST_CASE("mixed with a single stage is bit-identical to vanilla") {
  RunConfig cfg = fast_config();
  cfg.stages = 1;
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 3);

  const auto dir_vanilla = oracle::scratch_dir("m1_vanilla");
  const auto dir_mixed = oracle::scratch_dir("m1_mixed");
  const auto rec_v = run_vanilla_rl(cfg, corpus, sft.params, 3, dir_vanilla);
  const auto rec_m = run_r3(cfg, corpus, sft.params, 3, dir_mixed);

  REQUIRE(oracle::files_identical(dir_vanilla / "metrics.csv", dir_mixed / "metrics.csv"));
  REQUIRE(oracle::files_identical(dir_vanilla / "checkpoint_final.bin",
                                  dir_mixed / "checkpoint_final.bin"));
  REQUIRE(rec_v.final_accuracy == rec_m.final_accuracy);
}

TEST_CASE("staged runs record interior boundaries and per-difficulty curves") {
  RunConfig cfg = fast_config();
  cfg.stages = 5;
  cfg.rl_updates = 10;
  cfg.eval_every = 2;
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 4);
  const auto record = run_staged(cfg, corpus, sft.params, 4);

  REQUIRE(record.stage_starts.size() == 5);
  REQUIRE(record.interior_boundaries().size() == 4);
  REQUIRE(record.difficulty_curves.size() == 5);
  for (int m = 1; m <= 5; ++m) {
    REQUIRE_FALSE(record.difficulty_curves.at(m).empty());
  }

  RunConfig bad = cfg;
  bad.stages = 1;
  REQUIRE_THROWS_AS(run_staged(bad, corpus, sft.params, 4), std::invalid_argument);
}

TEST_CASE("mixed batches draw from every stage") {
  RunConfig cfg = fast_config();
  cfg.stages = 4;
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 6);
  const auto record = run_r3(cfg, corpus, sft.params, 6);
  REQUIRE(record.stage_coverage.size() == 4);
  for (long c : record.stage_coverage) REQUIRE(c > 0);
  REQUIRE(record.total_updates == cfg.rl_updates);
}

TEST_CASE("difficulty variants scale only the success branch of rollouts") {
  RunConfig cfg = fast_config();
  const Corpus corpus = build_corpus(cfg);
  const auto& demo = corpus.train.front();

  // uniform policy; start right after the answer marker so rollouts often
  // produce a parseable (frequently wrong) numeric answer
  auto params = PolicyParameters::zero_init(make_policy_shape(cfg, corpus.vocab, corpus.spec));
  const int k = demo.length() - 2;
  const StartState start{demo.id, k, 1, demo.length()};
  RolloutSettings settings;
  settings.max_len = 6;
  settings.epsilon = 0.2;
  settings.variant = RewardVariant::square;

  const double scale = difficulty_reward(start.mu(), RewardVariant::square, 0.9, demo.length(), k);
  bool saw_partial = false;
  bool saw_success = false;
  for (int i = 0; i < 4000 && !(saw_partial && saw_success); ++i) {
    rng::Stream rng(rng::derive_seed(1000, "variant", static_cast<std::uint64_t>(i)));
    const auto traj = sample_rollout(params, params, demo, start, corpus.vocab, settings, rng);
    std::vector<TokenId> full = traj.context;
    full.insert(full.end(), traj.sampled_actions.begin(), traj.sampled_actions.end());
    const auto answer = extract_answer(full, corpus.vocab);
    if (answer && *answer != demo.gold_answer) {
      REQUIRE(traj.env_reward == 0.2);  // partial reward is never scaled
      saw_partial = true;
    } else if (answer && *answer == demo.gold_answer) {
      REQUIRE(traj.env_reward == scale);  // success branch is scaled
      saw_success = true;
    } else {
      REQUIRE(traj.env_reward == 0.0);
    }
  }
  REQUIRE(saw_partial);
  REQUIRE(saw_success);
}

TEST_CASE("accuracy_vs_start_state at fraction zero equals plain evaluation") {
  RunConfig cfg = fast_config();
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 7);

  const double fractions[] = {0.0, 0.25, 0.5, 0.75};
  const auto curve = accuracy_vs_start_state(sft.params, corpus.train, fractions, corpus.vocab,
                                             cfg.max_rollout_len);
  const auto train_set = eval_instances(corpus.train, false);
  REQUIRE(curve[0].second == evaluate(sft.params, train_set, corpus.vocab, cfg.max_rollout_len));
  REQUIRE(curve.size() == 4);
  REQUIRE_THROWS_AS(accuracy_vs_start_state(sft.params, corpus.train, std::vector<double>{1.0},
                                            corpus.vocab, cfg.max_rollout_len),
                    std::invalid_argument);
}

TEST_CASE("success rate rises toward the goal on an sft-warmed policy") {
  RunConfig cfg;
  cfg.steps_min = 4;
  cfg.steps_max = 4;
  cfg.train_size = 400;
  cfg.test_size = 300;
  cfg.sft_epochs = 30;  // partially trained on purpose
  cfg.data_seed = 4321;
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 8);

  const double fractions[] = {0.0, 0.2, 0.4, 0.6, 0.8};
  const auto curve = accuracy_vs_start_state(sft.params, corpus.test, fractions, corpus.vocab,
                                             cfg.max_rollout_len);
  std::vector<double> xs, ys;
  for (const auto& [p, acc] : curve) {
    xs.push_back(p);
    ys.push_back(acc);
  }
  const double rho = oracle::spearman_rho(xs, ys);
  REQUIRE(rho > 0.0);
  REQUIRE(oracle::spearman_pvalue(xs, ys) <= 0.05);
  // the near-goal point dominates the curve
  const double max_acc = *std::max_element(ys.begin(), ys.end());
  REQUIRE(ys.back() == max_acc);
}

TEST_CASE("training reward trends upward on the easy environment") {
  RunConfig cfg = fast_config();
  cfg.train_size = 120;
  cfg.sft_epochs = 15;
  cfg.rl_updates = 40;
  cfg.batch_size = 32;
  cfg.stages = 1;
  const Corpus corpus = build_corpus(cfg);
  const auto sft = run_sft(cfg, corpus, 11);
  const auto record = run_vanilla_rl(cfg, corpus, sft.params, 11);

  // 20-update moving average of the training reward
  std::vector<double> ma;
  for (std::size_t i = 0; i + 20 <= record.reward_curve.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = i; j < i + 20; ++j) sum += record.reward_curve[j].second;
    ma.push_back(sum / 20.0);
  }
  REQUIRE(ma.size() >= 2);
  REQUIRE(ma.back() > ma.front());
  for (std::size_t i = 1; i < ma.size(); ++i) {
    REQUIRE(ma[i] >= ma[i - 1] - 0.02);  // up to batch noise
  }
}
