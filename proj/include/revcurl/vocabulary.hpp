#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace revcurl {

using TokenId = std::int32_t;

/// Token inventory of the environment. Ids are dense 0..size-1 and assigned in
/// declaration order, so the same token list always yields the same ids.
struct Vocabulary {
  std::vector<std::string> tokens;
  TokenId pad_id = -1;
  TokenId eos_id = -1;
  TokenId step_id = -1;  // step delimiter
  TokenId ans_id = -1;   // answer marker

  std::unordered_map<std::string, TokenId> index;

  static Vocabulary from_tokens(std::vector<std::string> toks,
                                const std::string& pad, const std::string& eos,
                                const std::string& step, const std::string& ans) {
    Vocabulary v;
    v.tokens = std::move(toks);
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
      auto [it, inserted] = v.index.emplace(v.tokens[i], static_cast<TokenId>(i));
      if (!inserted) {
        throw std::invalid_argument("vocabulary: duplicate token '" + v.tokens[i] + "'");
      }
    }
    v.pad_id = v.id_of(pad);
    v.eos_id = v.id_of(eos);
    v.step_id = v.id_of(step);
    v.ans_id = v.id_of(ans);
    v.validate();
    return v;
  }

  int size() const { return static_cast<int>(tokens.size()); }

  bool contains(const std::string& symbol) const { return index.count(symbol) != 0; }

  TokenId id_of(const std::string& symbol) const {
    auto it = index.find(symbol);
    if (it == index.end()) {
      throw std::invalid_argument("vocabulary: unknown symbol '" + symbol + "'");
    }
    return it->second;
  }

  const std::string& symbol_of(TokenId id) const {
    if (id < 0 || id >= size()) {
      throw std::out_of_range("vocabulary: token id " + std::to_string(id) +
                              " outside 0.." + std::to_string(size() - 1));
    }
    return tokens[static_cast<std::size_t>(id)];
  }

  /// Digit value of a token, or -1 if the token is not a single decimal digit.
  int digit_value(TokenId id) const {
    const std::string& s = symbol_of(id);
    if (s.size() == 1 && s[0] >= '0' && s[0] <= '9') return s[0] - '0';
    return -1;
  }

  void validate() const {
    if (tokens.empty()) throw std::invalid_argument("vocabulary: empty token list");
    const TokenId specials[] = {pad_id, eos_id, step_id, ans_id};
    for (TokenId s : specials) {
      if (s < 0 || s >= size()) {
        throw std::invalid_argument("vocabulary: special id out of range");
      }
    }
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        if (specials[a] == specials[b]) {
          throw std::invalid_argument("vocabulary: special ids must be distinct");
        }
      }
    }
  }
};

inline std::vector<TokenId> encode(std::span<const std::string> symbols,
                                   const Vocabulary& vocab) {
  std::vector<TokenId> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(vocab.id_of(s));
  return out;
}

inline std::vector<std::string> decode(std::span<const TokenId> ids,
                                       const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (TokenId id : ids) out.push_back(vocab.symbol_of(id));
  return out;
}

}  // namespace revcurl
