#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "revcurl/chain_env.hpp"
#include "revcurl/policy.hpp"
#include "test_support.hpp"

using namespace revcurl;

namespace {

const Vocabulary& vocab() {
  static const Vocabulary v = chain_vocabulary();
  return v;
}

PolicyShape small_shape() {
  PolicyShape s;
  s.vocab_size = vocab().size();
  s.embed_dim = 4;
  s.prefix_slots = 8;
  s.window = 6;
  s.step_cap = 4;
  s.hidden_dim = 12;
  s.pad_token = vocab().pad_id;
  s.delim_token = vocab().step_id;
  return s;
}

Demonstration tiny_demo(long long v0, long long x1, long long x2) {
  ChainArithmeticSpec spec;
  spec.steps_min = 2;
  spec.steps_max = 2;
  const char ops[] = {'+', '+'};
  const long long operands[] = {x1, x2};
  return detail::build_demonstration(spec, vocab(), "tiny", v0, ops, operands);
}

}  // namespace

TEST_CASE("softmax of logits is a distribution at random states") {
  rng::Stream rng(1);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  for (int i = 0; i < 100; ++i) {
    std::vector<TokenId> state;
    const auto len = rng.uniform_int(1, 30);
    for (int t = 0; t < len; ++t) {
      state.push_back(static_cast<TokenId>(rng.uniform_int(0, vocab().size() - 1)));
    }
    const Vector probs = log_softmax(logits(params, state)).array().exp();
    REQUIRE(std::abs(probs.sum() - 1.0) < 1e-12);
    REQUIRE(probs.minCoeff() >= 0.0);
  }
}

TEST_CASE("identical states produce identical logits") {
  rng::Stream rng(2);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const std::vector<TokenId> state = {4, 14, 5, 17, 18, 4};
  const Vector a = logits(params, state);
  const Vector b = logits(params, state);
  REQUIRE(a == b);
}

TEST_CASE("zero parameters give the uniform next-token distribution") {
  auto params = PolicyParameters::zero_init(small_shape());
  const std::vector<TokenId> state = {4, 14, 5};
  const Vector probs = log_softmax(logits(params, state)).array().exp();
  for (long i = 0; i < probs.size(); ++i) {
    REQUIRE(std::abs(probs[i] - 1.0 / vocab().size()) < 1e-12);
  }
}

TEST_CASE("out-of-range token ids and empty states are rejected") {
  auto params = PolicyParameters::zero_init(small_shape());
  REQUIRE_THROWS_AS(logits(params, std::vector<TokenId>{4, 99}), std::out_of_range);
  REQUIRE_THROWS_AS(logits(params, std::vector<TokenId>{-1}), std::out_of_range);
  REQUIRE_THROWS_AS(logits(params, std::vector<TokenId>{}), std::invalid_argument);
}

TEST_CASE("per-token KL is zero at equality and nonnegative everywhere") {
  rng::Stream rng(3);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const std::vector<TokenId> state = {4, 14, 5, 17, 18};
  REQUIRE(per_token_kl(params, params, state) == 0.0);

  for (int i = 0; i < 50; ++i) {
    auto other = PolicyParameters::random_init(small_shape(), rng);
    REQUIRE(per_token_kl(params, other, state) >= 0.0);
    REQUIRE(per_token_kl(other, params, state) >= 0.0);
  }
}

TEST_CASE("KL matches the hand-computed categorical value") {
  // force the next-token distributions through the output bias alone
  PolicyShape s;
  s.vocab_size = 3;
  s.embed_dim = 2;
  s.prefix_slots = 1;
  s.window = 1;
  s.step_cap = 1;
  s.hidden_dim = 2;
  s.pad_token = 0;
  s.delim_token = 1;
  auto p = PolicyParameters::zero_init(s);
  auto q = PolicyParameters::zero_init(s);
  const double pv[3] = {0.7, 0.2, 0.1};
  const double qv[3] = {0.5, 0.3, 0.2};
  for (int i = 0; i < 3; ++i) {
    p.out_b()[i] = std::log(pv[i]);
    q.out_b()[i] = std::log(qv[i]);
  }
  double expected = 0.0;
  for (int i = 0; i < 3; ++i) expected += pv[i] * std::log(pv[i] / qv[i]);
  const std::vector<TokenId> state = {2};
  REQUIRE(std::abs(per_token_kl(p, q, state) - expected) < 1e-12);

  Vector lp(3), lq(3);
  for (int i = 0; i < 3; ++i) {
    lp[i] = std::log(pv[i]);
    lq[i] = std::log(qv[i]);
  }
  REQUIRE(std::abs(kl_categorical(lp, lq) - expected) < 1e-12);
}

TEST_CASE("rollouts are deterministic given the seed and stop as contracted") {
  rng::Stream rng(4);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const auto demo = tiny_demo(2, 3, 4);
  const StartState start{demo.id, 0, 1, demo.length()};
  RolloutSettings settings;
  settings.max_len = 24;
  settings.epsilon = 0.2;

  rng::Stream r1(1234), r2(1234);
  const auto a = sample_rollout(params, params, demo, start, vocab(), settings, r1);
  const auto b = sample_rollout(params, params, demo, start, vocab(), settings, r2);
  REQUIRE(a.sampled_actions == b.sampled_actions);
  REQUIRE(a.logprobs == b.logprobs);
  REQUIRE(a.values == b.values);
  REQUIRE(a.env_reward == b.env_reward);

  settings.max_len = 1;
  rng::Stream r3(7);
  const auto one = sample_rollout(params, params, demo, start, vocab(), settings, r3);
  REQUIRE(one.steps() == 1);
  if (one.sampled_actions[0] != vocab().eos_id) {
    REQUIRE(one.terminated == Termination::max_length);
  }

  // per-action lists share one length; KL to itself is identically zero
  REQUIRE(one.logprobs.size() == one.sampled_actions.size());
  REQUIRE(one.ref_logprobs.size() == one.sampled_actions.size());
  REQUIRE(one.values.size() == one.sampled_actions.size());
  REQUIRE(one.kl_terms.size() == one.sampled_actions.size());
  for (double kl : a.kl_terms) REQUIRE(kl == 0.0);
}

TEST_CASE("rollout context is the prompt plus the demonstration prefix") {
  rng::Stream rng(5);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const auto demo = tiny_demo(1, 2, 3);
  const StartState start{demo.id, 6, 1, demo.length()};
  RolloutSettings settings;
  rng::Stream r(9);
  const auto traj = sample_rollout(params, params, demo, start, vocab(), settings, r);
  std::vector<TokenId> expected = demo.prompt;
  expected.insert(expected.end(), demo.actions.begin(), demo.actions.begin() + 6);
  REQUIRE(traj.context == expected);
  REQUIRE_THROWS_AS(
      sample_rollout(params, params, demo, StartState{demo.id, demo.length(), 1, demo.length()},
                     vocab(), settings, r),
      std::invalid_argument);
}

TEST_CASE("sft gradient matches central finite differences") {
  const Vocabulary& v = vocab();
  auto shape = oracle::tiny_shape(v.size(), v.pad_id, v.step_id);
  REQUIRE(shape.param_count() <= 1000);

  rng::Stream rng(6);
  std::vector<Demonstration> batch = {tiny_demo(2, 3, 4), tiny_demo(0, 0, 0), tiny_demo(9, 8, 7)};
  for (int trial = 0; trial < 3; ++trial) {
    auto params = PolicyParameters::random_init(shape, rng);
    const auto eval = sft_nll_gradient(params, batch);
    const double err = oracle::max_gradient_error(
        params, [&](const PolicyParameters& p) { return sft_nll_gradient(p, batch).mean_nll; },
        eval.grad);
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("sft with zero learning rate leaves parameters unchanged") {
  rng::Stream rng(7);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const Vector before = params.flat;
  std::vector<Demonstration> batch = {tiny_demo(2, 3, 4)};
  const double nll = sft_update(params, batch, 0.0);
  REQUIRE(params.flat == before);
  REQUIRE(std::isfinite(nll));
}

TEST_CASE("repeated sft updates overfit a single demonstration") {
  rng::Stream rng(8);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  std::vector<Demonstration> batch = {tiny_demo(2, 3, 4)};
  double nll = 1e9;
  for (int i = 0; i < 3000 && nll >= 0.01; ++i) {
    nll = sft_update(params, batch, 0.5);
  }
  REQUIRE(nll < 0.01);

  // greedy decoding from one token before the end reproduces the gold tail
  const auto& demo = batch[0];
  std::vector<TokenId> ctx = demo.prompt;
  ctx.insert(ctx.end(), demo.actions.begin(), demo.actions.end() - 1);
  const auto tail = greedy_rollout(params, ctx, vocab(), 4);
  REQUIRE(tail == std::vector<TokenId>{demo.actions.back()});

  // and from the last step boundary it reproduces "<ans> digits <eos>"
  const int k = demo.delimiter_positions.back();
  std::vector<TokenId> ctx2 = demo.prompt;
  ctx2.insert(ctx2.end(), demo.actions.begin(), demo.actions.begin() + k);
  const auto tail2 = greedy_rollout(params, ctx2, vocab(), 8);
  const std::vector<TokenId> expected(demo.actions.begin() + k, demo.actions.end());
  REQUIRE(tail2 == expected);
}

TEST_CASE("policy gradient of the advantage-weighted score matches finite differences") {
  const Vocabulary& v = vocab();
  auto shape = oracle::tiny_shape(v.size(), v.pad_id, v.step_id);
  rng::Stream rng(9);

  const auto demo = tiny_demo(5, 1, 2);
  RolloutSettings settings;
  settings.max_len = 10;

  for (int trial = 0; trial < 3; ++trial) {
    auto params = PolicyParameters::random_init(shape, rng);
    const StartState start{demo.id, 3, 1, demo.length()};
    rng::Stream roll(100 + trial);
    const auto traj = sample_rollout(params, params, demo, start, v, settings, roll);

    std::vector<double> advantages(static_cast<std::size_t>(traj.steps()));
    for (auto& a : advantages) a = rng.normal(0.0, 1.0);

    const Vector grad = policy_gradient_contribution(params, traj, advantages);
    const auto surrogate = [&](const PolicyParameters& p) {
      // independent evaluation: sum_t log pi(a_t | s_{t-1}) * adv_t
      double total = 0.0;
      std::vector<TokenId> state = traj.context;
      for (int t = 0; t < traj.steps(); ++t) {
        const Vector lp = log_softmax(logits(p, state));
        total += lp[traj.sampled_actions[static_cast<std::size_t>(t)]] *
                 advantages[static_cast<std::size_t>(t)];
        state.push_back(traj.sampled_actions[static_cast<std::size_t>(t)]);
      }
      return total;
    };
    const double err = oracle::max_gradient_error(params, surrogate, grad);
    REQUIRE(err < 1e-4);
  }
}

TEST_CASE("zero advantages give a zero policy gradient") {
  rng::Stream rng(10);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const auto demo = tiny_demo(4, 4, 4);
  RolloutSettings settings;
  rng::Stream roll(11);
  const auto traj = sample_rollout(params, params, demo, StartState{demo.id, 0, 1, demo.length()},
                                   vocab(), settings, roll);
  const std::vector<double> zeros(static_cast<std::size_t>(traj.steps()), 0.0);
  const Vector grad = policy_gradient_contribution(params, traj, zeros);
  REQUIRE(grad.norm() == 0.0);

  std::vector<double> wrong_len(static_cast<std::size_t>(traj.steps()) + 1, 0.0);
  REQUIRE_THROWS_AS(policy_gradient_contribution(params, traj, wrong_len), std::invalid_argument);
}

TEST_CASE("prefix tokens enter as conditioning only, never as scored actions") {
  rng::Stream rng(12);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const auto demo = tiny_demo(3, 2, 1);
  RolloutSettings settings;
  settings.max_len = 6;
  rng::Stream roll(13);
  const auto traj = sample_rollout(params, params, demo, StartState{demo.id, 4, 1, demo.length()},
                                   vocab(), settings, roll);

  // trajectory A: the 4 prefix actions are context; trajectory B scores them
  // with zero advantage. The gradients must coincide exactly.
  Trajectory scored = traj;
  scored.context = demo.prompt;
  scored.sampled_actions.clear();
  scored.sampled_actions.insert(scored.sampled_actions.end(), demo.actions.begin(),
                                demo.actions.begin() + 4);
  scored.sampled_actions.insert(scored.sampled_actions.end(), traj.sampled_actions.begin(),
                                traj.sampled_actions.end());

  std::vector<double> adv(static_cast<std::size_t>(traj.steps()));
  for (auto& a : adv) a = 0.5;
  std::vector<double> adv_padded(4, 0.0);
  adv_padded.insert(adv_padded.end(), adv.begin(), adv.end());

  const Vector g1 = policy_gradient_contribution(params, traj, adv);
  const Vector g2 = policy_gradient_contribution(params, scored, adv_padded);
  REQUIRE(g1 == g2);
}

TEST_CASE("checkpoints round-trip bitwise and validate their manifest") {
  rng::Stream rng(14);
  auto params = PolicyParameters::random_init(small_shape(), rng);
  const auto dir = oracle::scratch_dir("ckpt");
  save_checkpoint(params, dir / "p.bin", dir / "p.manifest");
  const auto loaded = load_checkpoint(dir / "p.bin", dir / "p.manifest");
  REQUIRE(loaded.shape == params.shape);
  REQUIRE(loaded.flat == params.flat);

  // corrupt the version line
  {
    std::ofstream bad(dir / "bad.manifest");
    bad << "revcurl-checkpoint 2\n";
  }
  REQUIRE_THROWS_WITH(load_checkpoint(dir / "p.bin", dir / "bad.manifest"),
                      Catch::Matchers::ContainsSubstring("version"));

  // truncated parameter file
  {
    std::ofstream bad(dir / "short.bin", std::ios::binary);
    bad << "abc";
  }
  REQUIRE_THROWS_WITH(load_checkpoint(dir / "short.bin", dir / "p.manifest"),
                      Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("parameter count is reported and consistent") {
  const auto shape = small_shape();
  const long expected = static_cast<long>(shape.vocab_size) * shape.embed_dim +
                        shape.hidden_dim * shape.feature_dim() + shape.hidden_dim +
                        shape.vocab_size * shape.hidden_dim + shape.vocab_size + shape.hidden_dim +
                        1;
  REQUIRE(shape.param_count() == expected);
  auto params = PolicyParameters::zero_init(shape);
  REQUIRE(params.flat.size() == expected);
}
