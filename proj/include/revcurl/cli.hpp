#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "revcurl/chain_env.hpp"
#include "revcurl/config.hpp"
#include "revcurl/corpus_io.hpp"
#include "revcurl/curriculum.hpp"
#include "revcurl/policy.hpp"
#include "revcurl/trainer.hpp"

namespace revcurl::cli {

namespace detail {

inline std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline RunConfig resolve_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  RunConfig cfg = config_path.empty() ? RunConfig{} : load_config_file(config_path);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

inline Corpus corpus_for(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return build_corpus(cfg);
  Corpus c;
  c.spec = ChainArithmeticSpec::from_config(cfg);
  c.vocab = chain_vocabulary();
  const std::filesystem::path dir(data_dir);
  c.train = load_demos((dir / "train.jsonl").string(), c.vocab);
  c.test = load_demos((dir / "test.jsonl").string(), c.vocab);
  return c;
}

inline std::filesystem::path manifest_for(const std::filesystem::path& bin) {
  std::filesystem::path m = bin;
  m.replace_extension(".manifest");
  return m;
}

inline PolicyParameters snapshot_for_run(const RunConfig& cfg, const Corpus& corpus,
                                         std::uint64_t seed, const std::string& init_ckpt,
                                         const std::filesystem::path& outdir) {
  if (!init_ckpt.empty()) {
    return load_checkpoint(init_ckpt, manifest_for(init_ckpt));
  }
  const SftResult sft = run_sft(cfg, corpus, seed, outdir);
  std::cout << "sft: train accuracy " << sft.train_accuracy << ", test accuracy "
            << sft.test_accuracy << "\n";
  return sft.params;
}

inline ExperimentRecord run_mode(const RunConfig& cfg, const Corpus& corpus,
                                 const PolicyParameters& snapshot, std::uint64_t seed,
                                 const std::filesystem::path& outdir) {
  switch (cfg.mode) {
    case TrainMode::vanilla: return run_vanilla_rl(cfg, corpus, snapshot, seed, outdir);
    case TrainMode::staged: return run_staged(cfg, corpus, snapshot, seed, outdir);
    case TrainMode::mixed: return run_r3(cfg, corpus, snapshot, seed, outdir);
  }
  throw std::invalid_argument("unknown train mode");
}

/// Filters metrics.csv rows into per-figure tables, passing the value field
/// through verbatim so exported numbers match the source bytes.
inline void export_plotdata(const std::filesystem::path& record_dir,
                            const std::filesystem::path& out_dir) {
  const auto metrics_path = record_dir / "metrics.csv";
  std::ifstream in(metrics_path);
  if (!in) {
    throw std::runtime_error("record '" + record_dir.string() + "' has no metrics.csv");
  }
  std::filesystem::create_directories(out_dir);

  std::vector<std::string> reward, ret, accuracy, difficulty;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string step, split, metric, value;
    if (!std::getline(ss, step, ',') || !std::getline(ss, split, ',') ||
        !std::getline(ss, metric, ',') || !std::getline(ss, value)) {
      throw std::runtime_error("metrics.csv: malformed line '" + line + "'");
    }
    if (split == "train" && metric == "mean_reward") {
      reward.push_back(step + "," + value);
    } else if (split == "train" && metric == "mean_return") {
      ret.push_back(step + "," + value);
    } else if (split == "eval" && metric == "accuracy") {
      accuracy.push_back(step + "," + value);
    } else if (split == "eval" && metric.rfind("accuracy_difficulty_", 0) == 0) {
      difficulty.push_back(step + "," + metric.substr(std::string("accuracy_difficulty_").size()) +
                           "," + value);
    }
  }
  if (reward.empty()) throw std::runtime_error("metrics.csv: missing metric mean_reward");
  if (ret.empty()) throw std::runtime_error("metrics.csv: missing metric mean_return");
  if (accuracy.empty()) throw std::runtime_error("metrics.csv: missing metric accuracy");

  auto write_table = [&](const std::string& name, const std::string& header,
                         const std::vector<std::string>& rows) {
    std::ofstream out(out_dir / name);
    if (!out) throw std::runtime_error("cannot write table '" + name + "'");
    out << header << '\n';
    for (const auto& r : rows) out << r << '\n';
  };
  write_table("reward_curve.csv", "step,value", reward);
  write_table("return_curve.csv", "step,value", ret);
  write_table("accuracy_curve.csv", "step,value", accuracy);
  if (!difficulty.empty()) {
    write_table("difficulty_curves.csv", "step,level,value", difficulty);
  }
}

inline std::vector<std::uint64_t> seeds_for(const RunConfig& cfg,
                                            const std::optional<std::uint64_t>& seed,
                                            const std::string& seeds_csv) {
  if (!seeds_csv.empty()) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(seeds_csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(std::stoull(item));
    }
    if (out.empty()) throw std::invalid_argument("--seeds: empty list");
    return out;
  }
  if (seed) return {*seed};
  return {cfg.seeds.front()};
}

inline void write_aggregate(const std::filesystem::path& outdir,
                            const std::vector<std::pair<std::uint64_t, ExperimentRecord>>& runs) {
  double mean = 0.0;
  for (const auto& [s, r] : runs) mean += r.final_accuracy;
  mean /= static_cast<double>(runs.size());
  double var = 0.0;
  for (const auto& [s, r] : runs) var += (r.final_accuracy - mean) * (r.final_accuracy - mean);
  const double stddev = runs.size() > 1 ? std::sqrt(var / static_cast<double>(runs.size() - 1)) : 0.0;

  nlohmann::json j;
  j["final_accuracy_mean"] = mean;
  j["final_accuracy_std"] = stddev;
  for (const auto& [s, r] : runs) {
    j["runs"].push_back({{"seed", s},
                         {"final_accuracy", r.final_accuracy},
                         {"best_accuracy", r.best_accuracy}});
  }
  std::ofstream out(outdir / "aggregate.json");
  out << j.dump(2) << '\n';
}

}  // namespace detail

/// Entry point shared by the binary and the tests. `args` excludes the
/// program name. Returns the process exit status.
inline int dispatch(std::vector<std::string> args) {
  CLI::App app{"reverse-curriculum reinforcement learning on synthetic reasoning chains"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, init_ckpt, ckpt_path, mode_flag, seeds_csv;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* cmd, bool with_out) {
    cmd->add_option("--config", config_path, "config file (key = value lines)");
    cmd->add_option("--override", overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", seed, "run seed");
    if (with_out) cmd->add_option("--out", out_dir, "output directory")->required();
  };

  auto* gen = app.add_subcommand("gen-data", "generate train/test demonstration corpora");
  add_common(gen, true);

  auto* slice = app.add_subcommand("slice", "write per-stage and mixed start-state datasets");
  add_common(slice, true);
  slice->add_option("--data", data_dir, "directory with train.jsonl/test.jsonl");

  auto* sft = app.add_subcommand("sft", "supervised warm-up only");
  add_common(sft, true);
  sft->add_option("--data", data_dir, "directory with train.jsonl/test.jsonl");

  auto* train = app.add_subcommand("train", "SFT warm-up (unless --init) followed by RL");
  add_common(train, true);
  train->add_option("--data", data_dir, "directory with train.jsonl/test.jsonl");
  train->add_option("--mode", mode_flag, "vanilla|staged|mixed (overrides train.mode)");
  train->add_option("--init", init_ckpt, "start from this checkpoint instead of running SFT");
  train->add_option("--seeds", seeds_csv, "comma-separated seeds; one record per seed");

  auto* eval_cmd = app.add_subcommand("eval", "greedy exact-match accuracy of a checkpoint");
  add_common(eval_cmd, false);
  eval_cmd->add_option("--out", out_dir, "output directory (optional)");
  eval_cmd->add_option("--data", data_dir, "directory with train.jsonl/test.jsonl");
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint .bin path")->required();
  std::string split = "test";
  eval_cmd->add_option("--split", split, "train|test (default test)");

  auto* curve = app.add_subcommand("curve", "success rate vs start-state prefix fraction");
  add_common(curve, true);
  curve->add_option("--data", data_dir, "directory with train.jsonl/test.jsonl");
  curve->add_option("--ckpt", ckpt_path, "checkpoint .bin path")->required();
  std::string fractions_csv = "0,0.2,0.4,0.6,0.8";
  curve->add_option("--fractions", fractions_csv, "comma-separated prefix fractions in [0,1)");
  std::string curve_split = "test";
  curve->add_option("--split", curve_split, "train|test (default test)");

  auto* ablate = app.add_subcommand("ablate", "mixed-stage training on an ablated dataset");
  add_common(ablate, true);
  ablate->add_option("--data", data_dir, "directory with train.jsonl/test.jsonl");
  ablate->add_option("--init", init_ckpt, "start from this checkpoint instead of running SFT");
  int drop_stage = 0;
  double keep_fraction = 0.0;
  auto* drop_opt = ablate->add_option("--drop-stage", drop_stage, "remove one difficulty level");
  auto* keep_opt =
      ablate->add_option("--keep-fraction", keep_fraction, "keep this fraction of demonstrations");
  drop_opt->excludes(keep_opt);

  auto* sweep = app.add_subcommand("sweep", "one training record per value of a config key");
  add_common(sweep, true);
  sweep->add_option("--data", data_dir, "directory with train.jsonl/test.jsonl");
  sweep->add_option("--seeds", seeds_csv, "comma-separated seeds (default run.seeds)");
  std::string sweep_param;
  sweep->add_option("--param", sweep_param, "key=v1,v2,... (e.g. M=1,3,5,7,9)")->required();

  auto* export_cmd = app.add_subcommand("export", "tabular plot data from a record directory");
  std::string record_dir;
  export_cmd->add_option("--record", record_dir, "record directory")->required();
  export_cmd->add_option("--out", out_dir, "output directory")->required();

  try {
    args.insert(args.begin(), "revcurl");
    std::vector<const char*> argv;
    argv.reserve(args.size());
    for (const auto& a : args) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());

    if (*export_cmd) {
      detail::export_plotdata(record_dir, out_dir);
      std::cout << "exported tables to " << out_dir << "\n";
      return 0;
    }

    RunConfig cfg = detail::resolve_config(config_path, overrides);
    const std::filesystem::path out(out_dir);

    if (*gen) {
      if (seed) cfg.data_seed = *seed;
      cfg.validate();
      const Corpus corpus = build_corpus(cfg);
      std::filesystem::create_directories(out);
      save_demos((out / "train.jsonl").string(), corpus.train, corpus.vocab);
      save_demos((out / "test.jsonl").string(), corpus.test, corpus.vocab);
      std::ofstream cfg_out(out / "config.resolved");
      cfg_out << serialize_config(cfg);
      std::cout << "wrote " << corpus.train.size() << " train / " << corpus.test.size()
                << " test demonstrations to " << out_dir << "\n";
      return 0;
    }

    if (*slice) {
      const Corpus corpus = detail::corpus_for(cfg, data_dir);
      const auto stage_datasets = build_stage_datasets(corpus.train, cfg.stages);
      std::filesystem::create_directories(out);
      for (const auto& ds : stage_datasets) {
        std::ofstream f(out / ("stage_" + std::to_string(ds.stage) + ".jsonl"));
        write_start_states(f, ds.start_states);
      }
      const auto mixed = build_mixed_dataset(stage_datasets);
      std::ofstream f(out / "mixed.jsonl");
      write_start_states(f, mixed.start_states);
      std::ofstream cfg_out(out / "config.resolved");
      cfg_out << serialize_config(cfg);
      std::cout << "wrote " << stage_datasets.size() << " stage datasets and a "
                << mixed.start_states.size() << "-entry mixed dataset to " << out_dir << "\n";
      return 0;
    }

    if (*sft) {
      const Corpus corpus = detail::corpus_for(cfg, data_dir);
      const std::uint64_t s = seed ? *seed : cfg.seeds.front();
      const SftResult r = run_sft(cfg, corpus, s, out);
      std::cout << "sft: final nll " << r.final_nll << ", train accuracy " << r.train_accuracy
                << ", test accuracy " << r.test_accuracy << "\n";
      return 0;
    }

    if (*train) {
      if (!mode_flag.empty()) cfg.mode = parse_mode(mode_flag);
      const Corpus corpus = detail::corpus_for(cfg, data_dir);
      const auto run_seeds = detail::seeds_for(cfg, seed, seeds_csv);
      std::vector<std::pair<std::uint64_t, ExperimentRecord>> runs;
      for (const std::uint64_t s : run_seeds) {
        const std::filesystem::path run_dir =
            run_seeds.size() == 1 ? out : out / ("seed_" + std::to_string(s));
        std::filesystem::create_directories(run_dir);
        const PolicyParameters snapshot =
            detail::snapshot_for_run(cfg, corpus, s, init_ckpt, run_dir);
        const ExperimentRecord record = detail::run_mode(cfg, corpus, snapshot, s, run_dir);
        std::cout << mode_name(cfg.mode) << " seed " << s << ": final accuracy "
                  << record.final_accuracy << ", best " << record.best_accuracy << "\n";
        runs.emplace_back(s, record);
      }
      if (runs.size() > 1) detail::write_aggregate(out, runs);
      return 0;
    }

    if (*eval_cmd) {
      const Corpus corpus = detail::corpus_for(cfg, data_dir);
      const auto params = load_checkpoint(ckpt_path, detail::manifest_for(ckpt_path));
      const auto& demos = split == "train" ? corpus.train : corpus.test;
      const double acc =
          evaluate(params, eval_instances(demos, split != "train"), corpus.vocab, cfg.max_rollout_len);
      std::cout << "accuracy " << detail::fmt(acc) << " on " << demos.size() << " " << split
                << " items\n";
      if (!out_dir.empty()) {
        std::filesystem::create_directories(out);
        nlohmann::json j{{"split", split}, {"accuracy", acc}, {"items", demos.size()}};
        std::ofstream f(out / "eval.json");
        f << j.dump(2) << '\n';
      }
      return 0;
    }

    if (*curve) {
      const Corpus corpus = detail::corpus_for(cfg, data_dir);
      const auto params = load_checkpoint(ckpt_path, detail::manifest_for(ckpt_path));
      std::vector<double> fractions;
      std::stringstream ss(fractions_csv);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) fractions.push_back(std::stod(item));
      }
      const auto& demos = curve_split == "train" ? corpus.train : corpus.test;
      const auto points =
          accuracy_vs_start_state(params, demos, fractions, corpus.vocab, cfg.max_rollout_len);
      std::filesystem::create_directories(out);
      std::ofstream f(out / "curve.csv");
      f << "fraction,success_rate\n";
      for (const auto& [p, acc] : points) {
        f << detail::fmt(p) << ',' << detail::fmt(acc) << '\n';
        std::cout << "fraction " << p << ": success rate " << acc << "\n";
      }
      return 0;
    }

    if (*ablate) {
      if (drop_opt->count() == 0 && keep_opt->count() == 0) {
        throw std::invalid_argument("ablate: need --drop-stage or --keep-fraction");
      }
      const Corpus corpus = detail::corpus_for(cfg, data_dir);
      const std::uint64_t s = seed ? *seed : cfg.seeds.front();
      std::filesystem::create_directories(out);
      const PolicyParameters snapshot = detail::snapshot_for_run(cfg, corpus, s, init_ckpt, out);
      const auto mixed = build_mixed_dataset(build_stage_datasets(corpus.train, cfg.stages));
      const MixedDataset ablated = drop_opt->count() > 0
                                       ? ablate_drop_stage(mixed, drop_stage)
                                       : ablate_keep_fraction(mixed, keep_fraction);
      const ExperimentRecord record =
          run_mixed_on(cfg, corpus, snapshot, s, ablated.start_states, out);
      std::cout << "ablated run (" << ablated.start_states.size() << " of "
                << mixed.start_states.size() << " start states): final accuracy "
                << record.final_accuracy << "\n";
      return 0;
    }

    if (*sweep) {
      const auto eq = sweep_param.find('=');
      if (eq == std::string::npos) {
        throw std::invalid_argument("--param must be key=v1,v2,...");
      }
      const std::string key = sweep_param.substr(0, eq);
      std::vector<std::string> values;
      std::stringstream ss(sweep_param.substr(eq + 1));
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (!item.empty()) values.push_back(item);
      }
      if (values.empty()) throw std::invalid_argument("--param: no values given");

      std::filesystem::create_directories(out);
      std::ofstream summary(out / "sweep_summary.csv");
      summary << "param,value,seed,final_accuracy,best_accuracy\n";
      for (const auto& value : values) {
        RunConfig swept = cfg;
        set_config_key(swept, key, value);
        swept.validate();
        const Corpus corpus = detail::corpus_for(swept, data_dir);
        const auto run_seeds = detail::seeds_for(swept, seed, seeds_csv);
        for (const std::uint64_t s : run_seeds) {
          const std::filesystem::path run_dir =
              out / (key + "=" + value) / ("seed_" + std::to_string(s));
          std::filesystem::create_directories(run_dir);
          const PolicyParameters snapshot =
              detail::snapshot_for_run(swept, corpus, s, init_ckpt, run_dir);
          const ExperimentRecord record = detail::run_mode(swept, corpus, snapshot, s, run_dir);
          summary << key << ',' << value << ',' << s << ',' << detail::fmt(record.final_accuracy)
                  << ',' << detail::fmt(record.best_accuracy) << '\n';
          std::cout << key << "=" << value << " seed " << s << ": final accuracy "
                    << record.final_accuracy << "\n";
        }
      }
      std::cout << "sweep summary written to " << (out / "sweep_summary.csv") << "\n";
      return 0;
    }

    return 0;
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace revcurl::cli
