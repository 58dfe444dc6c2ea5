#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "revcurl/config.hpp"
#include "revcurl/rng.hpp"
#include "revcurl/types.hpp"
#include "revcurl/vocabulary.hpp"

namespace revcurl {

/// Generator spec for chained left-to-right arithmetic: a start value followed
/// by `steps` operations, evaluated step by step. The optional modulus keeps
/// every intermediate value small so the vocabulary stays tiny.
struct ChainArithmeticSpec {
  int steps_min = 5;
  int steps_max = 5;
  int operand_min = 0;
  int operand_max = 9;
  std::string ops = "+-*";
  int modulus = 10;  // 0 = no reduction (requires ops == "+")

  static ChainArithmeticSpec from_config(const RunConfig& cfg) {
    ChainArithmeticSpec s;
    s.steps_min = cfg.steps_min;
    s.steps_max = cfg.steps_max;
    s.operand_min = cfg.operand_min;
    s.operand_max = cfg.operand_max;
    s.ops = cfg.ops;
    s.modulus = cfg.modulus;
    s.validate();
    return s;
  }

  void validate() const {
    if (steps_min < 2) throw std::invalid_argument("chain spec: steps_min must be >= 2");
    if (steps_max < steps_min) throw std::invalid_argument("chain spec: empty steps range");
    if (operand_max < operand_min || operand_min < 0) {
      throw std::invalid_argument("chain spec: invalid operand range");
    }
    if (ops.empty()) throw std::invalid_argument("chain spec: no operations");
    for (char c : ops) {
      if (c != '+' && c != '-' && c != '*') {
        throw std::invalid_argument(std::string("chain spec: unknown op '") + c + "'");
      }
    }
    if (modulus != 0 && modulus < 2) throw std::invalid_argument("chain spec: modulus must be >= 2");
    if (modulus == 0 && ops != "+") {
      throw std::invalid_argument("chain spec: unbounded values require ops == \"+\"");
    }
  }

  long long reduce(long long v) const {
    if (modulus == 0) return v;
    long long r = v % modulus;
    return r < 0 ? r + modulus : r;
  }

  /// Largest value that can ever be printed (operands or reduced chain values).
  long long max_printed_value() const {
    long long m = operand_max;
    if (modulus > 0 && modulus - 1 > m) m = modulus - 1;
    return m;
  }
};

/// Fixed token set: specials, the ten digits, all operators and the prompt
/// punctuation. Kept independent of the op subset so ids never shift between
/// configurations.
inline Vocabulary chain_vocabulary() {
  return Vocabulary::from_tokens(
      {"<pad>", "<eos>", "<step>", "<ans>", "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
       "+", "-", "*", "=", "?"},
      "<pad>", "<eos>", "<step>", "<ans>");
}

namespace detail {

inline void append_digits(std::vector<std::string>& out, long long value) {
  std::string s = std::to_string(value);
  for (char c : s) out.emplace_back(1, c);
}

inline long long apply_op(char op, long long a, long long b) {
  switch (op) {
    case '+': return a + b;
    case '-': return a - b;
    case '*': return a * b;
  }
  throw std::invalid_argument(std::string("unknown op '") + op + "'");
}

inline int decimal_digits(long long v) {
  int n = 1;
  while (v >= 10) {
    v /= 10;
    ++n;
  }
  return n;
}

/// Builds the demonstration for explicit (start value, op/operand list).
inline Demonstration build_demonstration(const ChainArithmeticSpec& spec,
                                         const Vocabulary& vocab, std::string id,
                                         long long v0, std::span<const char> step_ops,
                                         std::span<const long long> operands) {
  if (step_ops.size() != operands.size() || step_ops.empty()) {
    throw std::invalid_argument("build_demonstration: op/operand lists must match");
  }
  std::vector<std::string> prompt;
  append_digits(prompt, v0);
  for (std::size_t i = 0; i < step_ops.size(); ++i) {
    prompt.emplace_back(1, step_ops[i]);
    append_digits(prompt, operands[i]);
  }
  prompt.emplace_back("=");
  prompt.emplace_back("?");

  std::vector<std::string> actions;
  std::vector<int> boundaries;
  long long value = spec.reduce(v0);
  for (std::size_t i = 0; i < step_ops.size(); ++i) {
    const long long next = spec.reduce(apply_op(step_ops[i], value, operands[i]));
    append_digits(actions, value);
    actions.emplace_back(1, step_ops[i]);
    append_digits(actions, operands[i]);
    actions.emplace_back("=");
    append_digits(actions, next);
    actions.emplace_back("<step>");
    boundaries.push_back(static_cast<int>(actions.size()));
    value = next;
  }
  actions.emplace_back("<ans>");
  append_digits(actions, value);
  actions.emplace_back("<eos>");

  Demonstration demo;
  demo.id = std::move(id);
  demo.prompt = encode(prompt, vocab);
  demo.actions = encode(actions, vocab);
  demo.delimiter_positions = std::move(boundaries);
  demo.gold_answer = value;
  demo.validate();
  return demo;
}

}  // namespace detail

inline Demonstration generate_instance(const ChainArithmeticSpec& spec, const Vocabulary& vocab,
                                       std::uint64_t seed, std::string id) {
  spec.validate();
  rng::Stream rng(seed);
  const int n = static_cast<int>(rng.uniform_int(spec.steps_min, spec.steps_max));
  const long long v0 = rng.uniform_int(spec.operand_min, spec.operand_max);
  std::vector<char> step_ops(static_cast<std::size_t>(n));
  std::vector<long long> operands(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    step_ops[static_cast<std::size_t>(i)] =
        spec.ops[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long long>(spec.ops.size()) - 1))];
    operands[static_cast<std::size_t>(i)] = rng.uniform_int(spec.operand_min, spec.operand_max);
  }
  return detail::build_demonstration(spec, vocab, std::move(id), v0, step_ops, operands);
}

/// Deterministic corpus: instance i is a pure function of (master seed, tag, i).
inline std::vector<Demonstration> generate_corpus(const ChainArithmeticSpec& spec,
                                                  const Vocabulary& vocab,
                                                  std::uint64_t master_seed,
                                                  std::string_view tag, int count) {
  std::vector<Demonstration> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    std::string id = std::string(tag) + "-" + std::to_string(i);
    out.push_back(generate_instance(spec, vocab, rng::derive_seed(master_seed, tag, static_cast<std::uint64_t>(i)),
                                    std::move(id)));
  }
  return out;
}

/// Reads the integer after the last answer marker: one or more digit tokens
/// immediately followed by end-of-sequence. Anything else is "no answer".
inline std::optional<long long> extract_answer(std::span<const TokenId> tokens,
                                               const Vocabulary& vocab) {
  std::ptrdiff_t marker = -1;
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(tokens.size()); ++i) {
    if (tokens[static_cast<std::size_t>(i)] == vocab.ans_id) marker = i;
  }
  if (marker < 0) return std::nullopt;
  std::size_t i = static_cast<std::size_t>(marker) + 1;
  long long value = 0;
  int ndigits = 0;
  while (i < tokens.size()) {
    const int d = vocab.digit_value(tokens[i]);
    if (d < 0) break;
    if (++ndigits > 18) return std::nullopt;  // overflow guard
    value = value * 10 + d;
    ++i;
  }
  if (ndigits == 0) return std::nullopt;
  if (i >= tokens.size() || tokens[i] != vocab.eos_id) return std::nullopt;
  return value;
}

/// Outcome-supervised terminal reward: 1 for the right answer, the partial
/// reward for a parseable-but-wrong answer, 0 otherwise.
inline double outcome_reward(std::span<const TokenId> tokens, long long gold_answer,
                             double epsilon, const Vocabulary& vocab) {
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw std::invalid_argument("outcome_reward: epsilon must satisfy 0 <= eps < 1");
  }
  const auto answer = extract_answer(tokens, vocab);
  if (!answer) return 0.0;
  return *answer == gold_answer ? 1.0 : epsilon;
}

/// Scale applied to the success branch of the reward, as a function of how
/// much of the trajectory the policy had to produce itself.
inline double difficulty_reward(double mu, RewardVariant variant, double gamma_d, int demo_length,
                                int k) {
  if (demo_length < 1 || k < 0 || k >= demo_length) {
    throw std::invalid_argument("difficulty_reward: need 0 <= k < T");
  }
  const double expected = static_cast<double>(demo_length - k) / static_cast<double>(demo_length);
  if (mu != expected) {
    throw std::invalid_argument("difficulty_reward: mu must equal (T-k)/T");
  }
  switch (variant) {
    case RewardVariant::none: return 1.0;
    case RewardVariant::linear: return mu;
    case RewardVariant::square: return mu * mu;
    case RewardVariant::sqrt: return std::sqrt(mu);
    case RewardVariant::discount: {
      double r = 1.0;
      for (int i = 0; i < demo_length - k; ++i) r *= gamma_d;
      return r;
    }
  }
  throw std::invalid_argument("difficulty_reward: unknown variant");
}

/// Prompt plus gold answer, the unit of held-out evaluation.
struct EvalInstance {
  std::vector<TokenId> prompt;
  long long gold_answer = 0;
  bool held_out = false;

  static EvalInstance from_demo(const Demonstration& d, bool held_out) {
    return EvalInstance{d.prompt, d.gold_answer, held_out};
  }
};

/// Upper bound on prompt length for this spec, used to size the policy's
/// fixed prefix slots.
inline int max_prompt_length(const ChainArithmeticSpec& spec) {
  const int digits = detail::decimal_digits(std::max<long long>(1, spec.max_printed_value()));
  return digits * (spec.steps_max + 1) + spec.steps_max + 2;
}

}  // namespace revcurl
