#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "revcurl/vocabulary.hpp"

namespace revcurl {

/// A known-correct worked solution: prompt tokens, the full action sequence
/// that derives the answer, and the step boundaries within it.
///
/// `delimiter_positions[i]` is the number of action tokens up to and including
/// the i-th step delimiter, i.e. the prefix length that ends exactly at that
/// step boundary.
struct Demonstration {
  std::string id;
  std::vector<TokenId> prompt;
  std::vector<TokenId> actions;
  std::vector<int> delimiter_positions;
  long long gold_answer = 0;

  int length() const { return static_cast<int>(actions.size()); }

  void validate() const {
    if (actions.empty()) throw std::invalid_argument("demonstration " + id + ": empty actions");
    if (prompt.empty()) throw std::invalid_argument("demonstration " + id + ": empty prompt");
    int prev = 0;
    for (int p : delimiter_positions) {
      if (p <= prev) {
        throw std::invalid_argument("demonstration " + id +
                                    ": delimiter positions must be strictly increasing");
      }
      if (p >= length()) {
        throw std::invalid_argument("demonstration " + id + ": delimiter position " +
                                    std::to_string(p) + " not below length " +
                                    std::to_string(length()));
      }
      prev = p;
    }
  }
};

/// Rollout origin: the first `k` demonstration actions are given, the policy
/// must produce the rest. Difficulty is the fraction it must produce itself.
struct StartState {
  std::string demo_id;
  int k = 0;            // prefix length in actions, 0..T-1
  int stage = 1;        // curriculum stage, 1..M (1 = closest to the goal)
  int demo_length = 1;  // T

  double mu() const {
    return static_cast<double>(demo_length - k) / static_cast<double>(demo_length);
  }

  friend bool operator==(const StartState& a, const StartState& b) {
    return a.demo_id == b.demo_id && a.k == b.k && a.stage == b.stage &&
           a.demo_length == b.demo_length;
  }
};

enum class Termination { end_token, max_length };

/// One sampled rollout together with everything PPO needs to score it again:
/// the conditioning context, per-action log-probs under the behavior policy
/// and the frozen reference, value estimates, and the exact per-state KL terms
/// used for reward shaping.
struct Trajectory {
  StartState start;
  std::vector<TokenId> context;  // prompt ++ actions[0..k)
  std::vector<TokenId> sampled_actions;
  std::vector<double> logprobs;
  std::vector<double> ref_logprobs;
  std::vector<double> values;
  std::vector<double> kl_terms;
  double env_reward = 0.0;
  std::vector<double> per_token_rewards;  // filled by shape_rewards
  Termination terminated = Termination::end_token;

  int steps() const { return static_cast<int>(sampled_actions.size()); }
};

}  // namespace revcurl
