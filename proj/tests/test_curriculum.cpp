#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "revcurl/chain_env.hpp"
#include "revcurl/curriculum.hpp"
#include "test_support.hpp"

using namespace revcurl;

namespace {

/// Synthetic demonstration with explicit step boundaries; filler tokens are
/// irrelevant for slicing.
Demonstration demo_with_boundaries(const std::string& id, int length, std::vector<int> boundaries) {
  Demonstration d;
  d.id = id;
  d.prompt = {4, 14, 5, 17, 18};  // "0 + 1 = ?"
  d.actions.assign(static_cast<std::size_t>(length), 4);
  for (int b : boundaries) d.actions[static_cast<std::size_t>(b - 1)] = 2;  // <step>
  d.delimiter_positions = std::move(boundaries);
  d.gold_answer = 0;
  d.validate();
  return d;
}

}  // namespace

TEST_CASE("slice points walk boundaries from the goal back to the start") {
  const auto demo = demo_with_boundaries("fix", 28, {4, 9, 14, 19, 24});
  REQUIRE(slice_points(demo, 5) == std::vector<int>{24, 19, 14, 9, 0});
  REQUIRE(slice_points(demo, 3) == std::vector<int>{24, 14, 0});
  REQUIRE(slice_points(demo, 2) == std::vector<int>{24, 0});
}

TEST_CASE("single stage degenerates to the full problem") {
  const auto demo = demo_with_boundaries("one", 12, {4, 8});
  REQUIRE(slice_points(demo, 1) == std::vector<int>{0});
}

TEST_CASE("too few boundaries fall back to a uniform grid over 1..T-1") {
  const auto demo = demo_with_boundaries("uni", 15, {5, 10});
  const auto ks = slice_points(demo, 5);
  REQUIRE(ks.size() == 5);
  REQUIRE(ks.back() == 0);
  // uniform-spacing oracle: round((T-1) * (M-1-j)/(M-1)) for the first M-1
  for (int j = 0; j < 4; ++j) {
    const int expected = static_cast<int>(std::llround(14.0 * (4 - j) / 4.0));
    REQUIRE(ks[static_cast<std::size_t>(j)] == expected);
  }
  for (std::size_t j = 1; j < ks.size(); ++j) REQUIRE(ks[j] < ks[j - 1]);
}

TEST_CASE("slice rejects demonstrations that cannot host the stages") {
  auto tiny = demo_with_boundaries("tiny", 3, {2});
  tiny.actions.resize(1);
  tiny.delimiter_positions.clear();
  REQUIRE_THROWS_WITH(slice_points(tiny, 3), Catch::Matchers::ContainsSubstring("tiny"));

  const auto short_demo = demo_with_boundaries("short", 4, {2});
  REQUIRE_THROWS_AS(slice_points(short_demo, 6), std::invalid_argument);
}

TEST_CASE("stage datasets hold one start state per demonstration") {
  const Vocabulary v = chain_vocabulary();
  ChainArithmeticSpec spec;
  const auto demos = generate_corpus(spec, v, 21, "sd", 10);
  const auto datasets = build_stage_datasets(demos, 5);
  REQUIRE(datasets.size() == 5);
  for (int m = 1; m <= 5; ++m) {
    const auto& ds = datasets[static_cast<std::size_t>(m - 1)];
    REQUIRE(ds.stage == m);
    REQUIRE(ds.start_states.size() == 10);
    for (const auto& s : ds.start_states) REQUIRE(s.stage == m);
  }
  // identical demos get identical cut points
  std::vector<Demonstration> same(4, demos[0]);
  const auto same_ds = build_stage_datasets(same, 3);
  for (const auto& ds : same_ds) {
    for (const auto& s : ds.start_states) REQUIRE(s.k == ds.start_states.front().k);
  }
}

TEST_CASE("mean difficulty strictly increases with the stage index") {
  const Vocabulary v = chain_vocabulary();
  ChainArithmeticSpec spec;
  spec.steps_min = 3;
  spec.steps_max = 8;
  const auto demos = generate_corpus(spec, v, 33, "mu", 200);
  const auto datasets = build_stage_datasets(demos, 5);
  double prev = 0.0;
  for (const auto& ds : datasets) {
    double mean = 0.0;
    for (const auto& s : ds.start_states) mean += s.mu();
    mean /= static_cast<double>(ds.start_states.size());
    REQUIRE(mean > prev);
    prev = mean;
  }
}

TEST_CASE("per-demo cut points strictly decrease and stage M starts at s0") {
  const Vocabulary v = chain_vocabulary();
  ChainArithmeticSpec spec;
  spec.steps_min = 2;
  spec.steps_max = 8;
  const auto demos = generate_corpus(spec, v, 55, "dec", 500);
  for (int m_count : {1, 3, 5, 6}) {
    const auto datasets = build_stage_datasets(demos, m_count);
    for (std::size_t i = 0; i < demos.size(); ++i) {
      int prev_k = demos[i].length();
      for (int m = 1; m <= m_count; ++m) {
        const int k = datasets[static_cast<std::size_t>(m - 1)].start_states[i].k;
        REQUIRE(k < prev_k);
        prev_k = k;
      }
      REQUIRE(datasets[static_cast<std::size_t>(m_count - 1)].start_states[i].k == 0);
    }
  }
}

TEST_CASE("mixed dataset is the deduplicated union") {
  const Vocabulary v = chain_vocabulary();
  ChainArithmeticSpec spec;
  const auto demos = generate_corpus(spec, v, 66, "mix", 10);
  const auto datasets = build_stage_datasets(demos, 5);
  const auto mixed = build_mixed_dataset(datasets);
  REQUIRE(mixed.start_states.size() == 50);

  // force a duplicated (demo, k) pair across two stages
  auto dup = datasets;
  dup[1].start_states[0].k = dup[0].start_states[0].k;
  const auto deduped = build_mixed_dataset(dup);
  REQUIRE(deduped.start_states.size() == 49);

  // pure function of its inputs
  const auto again = build_mixed_dataset(datasets);
  REQUIRE(again.start_states.size() == mixed.start_states.size());
  for (std::size_t i = 0; i < mixed.start_states.size(); ++i) {
    REQUIRE(again.start_states[i] == mixed.start_states[i]);
  }
}

TEST_CASE("sampler stage composition is uniform (chi-squared not rejected)") {
  const Vocabulary v = chain_vocabulary();
  ChainArithmeticSpec spec;
  const auto demos = generate_corpus(spec, v, 77, "chi", 40);
  const auto mixed = build_mixed_dataset(build_stage_datasets(demos, 5));
  REQUIRE(mixed.start_states.size() == 200);

  DatasetSampler sampler(mixed.start_states, 31337);
  std::vector<long> counts(5, 0);
  for (int i = 0; i < 10000; ++i) {
    ++counts[static_cast<std::size_t>(sampler.next().stage - 1)];
  }
  // dof = 4, critical value at the 0.01 level
  REQUIRE(oracle::chi_squared_uniform(counts) < 13.2767);
}

TEST_CASE("drop-stage ablation removes exactly one difficulty level") {
  const Vocabulary v = chain_vocabulary();
  ChainArithmeticSpec spec;
  const auto demos = generate_corpus(spec, v, 88, "ab", 10);
  const auto mixed = build_mixed_dataset(build_stage_datasets(demos, 5));
  const auto dropped = ablate_drop_stage(mixed, 5);
  REQUIRE(dropped.start_states.size() == 40);
  for (const auto& s : dropped.start_states) REQUIRE(s.stage != 5);
  // stage 5 held the k=0 (max difficulty) states
  for (const auto& s : dropped.start_states) REQUIRE(s.k > 0);

  const auto single = build_mixed_dataset(build_stage_datasets(demos, 1));
  REQUIRE_THROWS_AS(ablate_drop_stage(single, 1), std::invalid_argument);
}

TEST_CASE("keep-fraction ablation keeps whole demonstrations") {
  const Vocabulary v = chain_vocabulary();
  ChainArithmeticSpec spec;
  const auto demos = generate_corpus(spec, v, 99, "kf", 10);
  const auto mixed = build_mixed_dataset(build_stage_datasets(demos, 5));

  const auto half = ablate_keep_fraction(mixed, 0.5);
  std::set<std::string> ids;
  for (const auto& s : half.start_states) ids.insert(s.demo_id);
  REQUIRE(ids.size() == 5);
  REQUIRE(half.start_states.size() == 25);

  const auto all = ablate_keep_fraction(mixed, 1.0);
  REQUIRE(all.start_states.size() == mixed.start_states.size());
  for (std::size_t i = 0; i < all.start_states.size(); ++i) {
    REQUIRE(all.start_states[i] == mixed.start_states[i]);
  }

  REQUIRE_THROWS_AS(ablate_keep_fraction(mixed, 0.0), std::invalid_argument);
}
