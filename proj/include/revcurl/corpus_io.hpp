#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "revcurl/types.hpp"
#include "revcurl/vocabulary.hpp"

namespace revcurl {

// Demonstration corpora are stored as one JSON record per line with symbolic
// tokens, so fixtures stay readable and diffable.

inline void write_demos(std::ostream& out, std::span<const Demonstration> demos,
                        const Vocabulary& vocab) {
  for (const auto& d : demos) {
    nlohmann::json j;
    j["id"] = d.id;
    j["prompt"] = decode(d.prompt, vocab);
    j["actions"] = decode(d.actions, vocab);
    j["delims"] = d.delimiter_positions;
    j["gold"] = d.gold_answer;
    out << j.dump() << '\n';
  }
}

inline std::vector<Demonstration> read_demos(std::istream& in, const Vocabulary& vocab) {
  std::vector<Demonstration> demos;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Demonstration d;
      d.id = j.at("id").get<std::string>();
      d.prompt = encode(j.at("prompt").get<std::vector<std::string>>(), vocab);
      d.actions = encode(j.at("actions").get<std::vector<std::string>>(), vocab);
      d.delimiter_positions = j.at("delims").get<std::vector<int>>();
      d.gold_answer = j.at("gold").get<long long>();
      d.validate();
      demos.push_back(std::move(d));
    } catch (const std::exception& e) {
      throw std::runtime_error("corpus line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return demos;
}

inline void save_demos(const std::string& path, std::span<const Demonstration> demos,
                       const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write corpus file '" + path + "'");
  write_demos(out, demos, vocab);
}

inline std::vector<Demonstration> load_demos(const std::string& path, const Vocabulary& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file '" + path + "'");
  return read_demos(in, vocab);
}

// Start-state datasets carry (demo_id, k, stage, T) plus the derived
// difficulty for human readers; the reader recomputes and checks it.

inline void write_start_states(std::ostream& out, std::span<const StartState> states) {
  for (const auto& s : states) {
    nlohmann::json j;
    j["demo_id"] = s.demo_id;
    j["k"] = s.k;
    j["stage"] = s.stage;
    j["T"] = s.demo_length;
    j["mu"] = s.mu();
    out << j.dump() << '\n';
  }
}

inline std::vector<StartState> read_start_states(std::istream& in) {
  std::vector<StartState> states;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      StartState s;
      s.demo_id = j.at("demo_id").get<std::string>();
      s.k = j.at("k").get<int>();
      s.stage = j.at("stage").get<int>();
      s.demo_length = j.at("T").get<int>();
      if (s.k < 0 || s.k >= s.demo_length) throw std::runtime_error("k outside 0..T-1");
      const double mu = j.at("mu").get<double>();
      if (mu != s.mu()) throw std::runtime_error("mu does not equal (T-k)/T");
      states.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw std::runtime_error("start-state line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return states;
}

}  // namespace revcurl
