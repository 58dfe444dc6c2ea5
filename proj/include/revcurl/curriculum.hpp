#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "revcurl/rng.hpp"
#include "revcurl/types.hpp"

namespace revcurl {

namespace detail {

// round(num/den) half-up, nonnegative integer arithmetic only
inline int round_div(long long num, long long den) {
  return static_cast<int>((2 * num + den) / (2 * den));
}

}  // namespace detail

/// Prefix lengths for the M curriculum stages of one demonstration, ordered
/// stage 1 (nearest the goal, largest k) to stage M (k = 0, the full problem).
///
/// When the demonstration has at least M step boundaries, stages cut at
/// boundaries: M picks spread evenly over the boundary list, anchored at the
/// last one, with the farthest pick replaced by 0 so the final stage starts
/// from scratch. With fewer boundaries the cuts fall back to a uniform grid
/// over 1..T-1, again ending at 0.
inline std::vector<int> slice_points(const Demonstration& demo, int stage_count) {
  if (stage_count < 1) throw std::invalid_argument("slice_points: stage count must be >= 1");
  const int length = demo.length();
  if (length < 2) {
    throw std::invalid_argument("slice_points: demonstration '" + demo.id +
                                "' has fewer than 2 actions");
  }
  if (stage_count == 1) return {0};
  if (length < stage_count) {
    throw std::invalid_argument("slice_points: demonstration '" + demo.id + "' of length " +
                                std::to_string(length) + " cannot host " +
                                std::to_string(stage_count) + " distinct stages");
  }

  const auto& bounds = demo.delimiter_positions;
  std::vector<int> ks(static_cast<std::size_t>(stage_count));
  if (static_cast<int>(bounds.size()) >= stage_count) {
    const long long last = static_cast<long long>(bounds.size()) - 1;
    for (int j = 0; j < stage_count; ++j) {
      const int idx = detail::round_div(last * (stage_count - 1 - j), stage_count - 1);
      ks[static_cast<std::size_t>(j)] = bounds[static_cast<std::size_t>(idx)];
    }
  } else {
    for (int j = 0; j < stage_count - 1; ++j) {
      ks[static_cast<std::size_t>(j)] =
          detail::round_div(static_cast<long long>(length - 1) * (stage_count - 1 - j),
                            stage_count - 1);
    }
  }
  ks.back() = 0;

  // enforce strict decrease; the uniform grid can collide on short demos
  for (int j = stage_count - 2; j >= 0; --j) {
    if (ks[static_cast<std::size_t>(j)] <= ks[static_cast<std::size_t>(j + 1)]) {
      ks[static_cast<std::size_t>(j)] = ks[static_cast<std::size_t>(j + 1)] + 1;
    }
  }
  if (ks.front() > length - 1) {
    throw std::invalid_argument("slice_points: demonstration '" + demo.id +
                                "' too short for " + std::to_string(stage_count) + " stages");
  }
  return ks;
}

/// All start states of one curriculum stage: one per demonstration.
struct StageDataset {
  int stage = 1;
  std::vector<StartState> start_states;
};

/// Union of every stage, the training set for mixed-stage runs.
struct MixedDataset {
  std::vector<StartState> start_states;
};

inline std::vector<StageDataset> build_stage_datasets(std::span<const Demonstration> corpus,
                                                      int stage_count) {
  if (corpus.empty()) throw std::invalid_argument("build_stage_datasets: empty corpus");
  std::vector<StageDataset> datasets(static_cast<std::size_t>(stage_count));
  for (int m = 1; m <= stage_count; ++m) {
    datasets[static_cast<std::size_t>(m - 1)].stage = m;
    datasets[static_cast<std::size_t>(m - 1)].start_states.reserve(corpus.size());
  }
  for (const auto& demo : corpus) {
    std::vector<int> ks;
    try {
      ks = slice_points(demo, stage_count);
    } catch (const std::exception& e) {
      throw std::invalid_argument("demonstration '" + demo.id + "': " + e.what());
    }
    for (int m = 1; m <= stage_count; ++m) {
      datasets[static_cast<std::size_t>(m - 1)].start_states.push_back(
          StartState{demo.id, ks[static_cast<std::size_t>(m - 1)], m, demo.length()});
    }
  }
  return datasets;
}

/// Union with duplicate (demo, k) pairs removed; the first (easiest) stage
/// keeps the entry. Order is stage-major then corpus order, so construction is
/// a pure function of its inputs.
inline MixedDataset build_mixed_dataset(std::span<const StageDataset> stages) {
  if (stages.empty()) throw std::invalid_argument("build_mixed_dataset: no stage datasets");
  MixedDataset mixed;
  std::unordered_map<std::string, std::unordered_set<int>> seen;
  for (const auto& stage : stages) {
    for (const auto& s : stage.start_states) {
      if (seen[s.demo_id].insert(s.k).second) mixed.start_states.push_back(s);
    }
  }
  return mixed;
}

/// Removes every start state of one difficulty level (Fig.-style data-part
/// ablation).
inline MixedDataset ablate_drop_stage(const MixedDataset& mixed, int stage) {
  MixedDataset out;
  for (const auto& s : mixed.start_states) {
    if (s.stage != stage) out.start_states.push_back(s);
  }
  if (out.start_states.empty()) {
    throw std::invalid_argument("ablate: dropping stage " + std::to_string(stage) +
                                " would leave an empty dataset");
  }
  return out;
}

/// Keeps the leading fraction of demonstrations (by first appearance) across
/// all stages (data-scale ablation).
inline MixedDataset ablate_keep_fraction(const MixedDataset& mixed, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
    throw std::invalid_argument("ablate: keep_fraction must be in (0, 1]");
  }
  std::vector<std::string> order;
  std::unordered_set<std::string> known;
  for (const auto& s : mixed.start_states) {
    if (known.insert(s.demo_id).second) order.push_back(s.demo_id);
  }
  const auto keep_count = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(order.size()))));
  std::unordered_set<std::string> kept;
  for (std::size_t i = 0; i < order.size() && i < keep_count; ++i) {
    kept.insert(order[i]);
  }
  MixedDataset out;
  for (const auto& s : mixed.start_states) {
    if (kept.count(s.demo_id)) out.start_states.push_back(s);
  }
  return out;
}

/// Uniform sampler over a start-state list: a seeded shuffle per epoch, so
/// every pass visits each entry exactly once.
class DatasetSampler {
 public:
  DatasetSampler(std::vector<StartState> states, std::uint64_t seed)
      : states_(std::move(states)), rng_(seed) {
    if (states_.empty()) throw std::invalid_argument("DatasetSampler: empty dataset");
    order_.resize(states_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  const StartState& next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return states_[order_[pos_++]];
  }

  std::size_t size() const { return states_.size(); }

 private:
  std::vector<StartState> states_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
  rng::Stream rng_;
};

}  // namespace revcurl
