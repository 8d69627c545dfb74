// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0
//
// stdp gen|stats|pretrain|finetune|evaluate|pipeline

#include <malloc.h>

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "commands.hpp"

namespace fs = std::filesystem;
using namespace stdp::cli;

namespace {

std::string format_value(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
template <class V>
std::string format_value(const V& v) {
  if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else {
    return std::to_string(v);
  }
}

/// A subcommand whose options are all bound to fields, so the effective
/// configuration can be written back out.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& desc) : app_(parent.add_subcommand(name, desc)) {
    app_->add_option("--config", config_path_, "flat `key = value` file; flags override it");
  }

  template <class V>
  CLI::Option* add(const std::string& name, V& var, const std::string& desc) {
    auto* o = app_->add_option("--" + name, var, desc)->capture_default_str();
    fields_.emplace_back(name, [&var] { return format_value(var); });
    return o;
  }

  /// Marks an option as mandatory; checked after the config file is merged.
  void require(const std::string& name) { required_.push_back(name); }

  FlagGiven given() const {
    return [app = app_](const std::string& key) { return app->count("--" + key) > 0; };
  }
  bool parsed() const { return app_->parsed(); }

  /// Fills options that were not given on the command line from --config.
  void apply_config() {
    if (config_path_.empty()) return;
    std::ifstream in(config_path_);
    if (!in) throw UsageError("cannot open config file '" + config_path_ + "'");
    std::string line;
    std::size_t lineno = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      const auto where = config_path_ + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw UsageError(where + ": expected `key = value`");
      std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      std::replace(key.begin(), key.end(), '_', '-');
      if (key == "config") throw UsageError(where + ": 'config' cannot be set from a config file");
      if (seen.count(key)) throw UsageError(where + ": duplicate key '" + key + "'");
      seen[key] = lineno;
      auto* opt = app_->get_option_no_throw("--" + key);
      if (opt == nullptr) throw UsageError(where + ": unknown key '" + key + "' for command '" + app_->get_name() + "'");
      if (opt->count() > 0) continue;
      try {
        opt->add_result(value);
        opt->run_callback();
      } catch (const CLI::Error& e) {
        throw UsageError(where + ": key '" + key + "': " + e.what());
      }
    }
  }

  void check_required() const {
    for (const auto& name : required_)
      if (app_->get_option("--" + name)->count() == 0) {
        throw UsageError(app_->get_name() + ": --" + name + " is required (flag or config key)");
      }
  }

  std::string snapshot() const {
    std::ostringstream os;
    for (const auto& [name, get] : fields_) os << name << " = " << get() << '\n';
    return os.str();
  }

 private:
  CLI::App* app_;
  std::string config_path_;
  std::vector<std::pair<std::string, std::function<std::string()>>> fields_;
  std::vector<std::string> required_;
};

void add_data(Command& c, Settings& s) {
  c.add("data", s.data, "interaction file (`user<TAB>item item ...`)");
  c.require("data");
  c.add("attrs", s.attrs, "attribute file (`item<TAB>attr attr ...`), optional");
}

void add_common(Command& c, Settings& s) {
  c.add("seed", s.train.seed, "training seed");
  c.add("threads", s.threads, "worker threads for statistics and evaluation")->check(CLI::PositiveNumber);
}

void add_model(Command& c, Settings& s) {
  c.add("d", s.model.d, "hidden size")->check(CLI::PositiveNumber);
  c.add("layers", s.model.layers, "self-attention blocks");
  c.add("heads", s.model.heads, "attention heads")->check(CLI::PositiveNumber);
  c.add("max-len", s.model.max_len, "window length")->check(CLI::PositiveNumber);
  c.add("dropout", s.model.dropout, "dropout rate")->check(CLI::Range(0.0, 0.999999));
  c.add("batch", s.train.batch_size, "batch size")->check(CLI::PositiveNumber);
  c.add("lr", s.train.adam.lr, "Adam learning rate")->check(CLI::PositiveNumber);
}

void add_pretrain(Command& c, Settings& s) {
  c.add("k", s.train.k_cooc, "co-occurrence set size")->check(CLI::PositiveNumber);
  c.add("k-attr", s.train.k_attr, "frequent-attribute set size")->check(CLI::PositiveNumber);
  c.add("p-rpc", s.train.p_rpc, "replacement probability for paired sequences")->check(CLI::Range(0.0, 1.0));
  c.add("beta", s.train.beta, "reordered fraction for paired sequences")->check(CLI::Range(0.0, 1.0));
  c.add("lambda-cip", s.train.weights.cip, "CIP weight")->check(CLI::NonNegativeNumber);
  c.add("lambda-pss", s.train.weights.pss, "PSS weight")->check(CLI::NonNegativeNumber);
  c.add("lambda-iap", s.train.weights.iap, "IAP weight")->check(CLI::NonNegativeNumber);
  c.add("lambda-fap", s.train.weights.fap, "FAP weight")->check(CLI::NonNegativeNumber);
  c.add("epochs-pretrain", s.train.pretrain_epochs, "pre-training epochs");
}

void add_eval(Command& c, Settings& s) {
  c.add("negatives", s.train.eval.negatives, "sampled negatives per evaluation")->check(CLI::PositiveNumber);
  c.add("eval-seed", s.train.eval.seed, "candidate sampling seed");
}

void add_finetune(Command& c, Settings& s) {
  c.add("epochs-finetune", s.train.finetune_epochs, "fine-tuning epochs");
  c.add("patience", s.train.patience, "epochs without validation MRR gain before stopping")
      ->check(CLI::PositiveNumber);
}

// ---------------------------------------------------------------------------

}  // namespace

int main(int argc, char** argv) {
  // Training allocates and frees large tensors every step; keep them on the heap.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);

  CLI::App app{"Sequential recommender pre-trained on co-occurrence and attribute statistics"};
  app.require_subcommand(1);
  Settings s;

  Command gen(app, "gen", "generate a synthetic corpus with planted block structure");
  gen.add("out", s.out, "output directory");
  gen.require("out");
  gen.add("seed", s.synth.seed, "generator seed");
  gen.add("items", s.synth.items, "number of items")->check(CLI::PositiveNumber);
  gen.add("sequences", s.synth.sequences, "number of sequences")->check(CLI::PositiveNumber);
  gen.add("min-len", s.synth.min_len, "shortest sequence")->check(CLI::PositiveNumber);
  gen.add("max-len", s.synth.max_len, "longest sequence")->check(CLI::PositiveNumber);
  gen.add("blocks", s.synth.blocks, "co-occurrence blocks")->check(CLI::PositiveNumber);
  gen.add("within", s.synth.within, "probability a structured step stays in its block")->check(CLI::Range(0.0, 1.0));
  gen.add("noise", s.synth.noise, "probability a step is uniform over all items")->check(CLI::Range(0.0, 1.0));
  gen.add("attrs-per-block", s.synth.attrs_per_block, "attributes shared by each block");
  gen.add("random-attrs", s.synth.random_attrs, "pool for the one random attribute per item");

  Command stats(app, "stats", "mine co-occurrence statistics from training prefixes");
  add_data(stats, s);
  stats.add("out", s.out, "stats file to write");
  stats.require("out");
  stats.add("k", s.train.k_cooc, "co-occurrence set size")->check(CLI::PositiveNumber);
  stats.add("threads", s.threads, "worker threads")->check(CLI::PositiveNumber);

  Command pretrain(app, "pretrain", "pre-train on the co-occurrence and attribute tasks");
  add_data(pretrain, s);
  pretrain.add("run-dir", s.run_dir, "run directory");
  pretrain.require("run-dir");
  add_common(pretrain, s);
  add_model(pretrain, s);
  add_pretrain(pretrain, s);

  Command finetune(app, "finetune", "fine-tune on next-item prediction with early stopping");
  add_data(finetune, s);
  finetune.add("run-dir", s.run_dir, "run directory");
  finetune.require("run-dir");
  add_common(finetune, s);
  add_model(finetune, s);
  add_finetune(finetune, s);
  add_eval(finetune, s);
  finetune.add("init", s.init, "start from `pretrain`, `fresh`, or `auto` (pretrain if ckpt-pretrain.bin exists)")
      ->check(CLI::IsMember({"auto", "pretrain", "fresh"}));

  Command evaluate(app, "evaluate", "sampled-candidate ranking evaluation of a checkpoint");
  add_data(evaluate, s);
  evaluate.add("run-dir", s.run_dir, "run directory holding ckpt-best.bin");
  evaluate.add("ckpt", s.ckpt, "checkpoint path (default: <run-dir>/ckpt-best.bin)");
  evaluate.add("mode", s.mode, "valid or test")->check(CLI::IsMember({"valid", "test"}));
  evaluate.add("threads", s.threads, "worker threads")->check(CLI::PositiveNumber);
  add_eval(evaluate, s);

  Command pipeline(app, "pipeline", "stats, pretrain, finetune, then test evaluation");
  add_data(pipeline, s);
  pipeline.add("run-dir", s.run_dir, "run directory");
  pipeline.require("run-dir");
  add_common(pipeline, s);
  add_model(pipeline, s);
  add_pretrain(pipeline, s);
  add_finetune(pipeline, s);
  add_eval(pipeline, s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    for (Command* c : {&gen, &stats, &pretrain, &finetune, &evaluate, &pipeline})
      if (c->parsed()) {
        c->apply_config();
        c->check_required();
      }

    if (gen.parsed()) return run_gen(s);
    if (stats.parsed()) return run_stats(s);

    s.model.validate();
    s.train.validate();
    if (evaluate.parsed()) {
      if (s.ckpt.empty()) {
        if (s.run_dir.empty()) throw UsageError("evaluate needs --ckpt or --run-dir");
        s.ckpt = (fs::path(s.run_dir) / "ckpt-best.bin").string();
      }
      const auto corpus = load_corpus(s);
      print_report(do_evaluate(corpus, s, s.ckpt, parse_mode(s.mode)), s.mode);
      return 0;
    }

    const auto corpus = load_corpus(s);
    const fs::path dir = s.run_dir;
    if (pipeline.parsed()) {
      for (const char* f : {"stats.bin", "ckpt-pretrain.bin", "ckpt-best.bin", "metrics.jsonl"}) refuse_existing(dir / f);
    }
    fs::create_directories(dir);
    if (pretrain.parsed()) {
      write_snapshot(dir, pretrain.snapshot());
      do_pretrain(corpus, s);
    } else if (finetune.parsed()) {
      write_snapshot(dir, finetune.snapshot());
      do_finetune(corpus, s, finetune.given());
    } else if (pipeline.parsed()) {
      write_snapshot(dir, pipeline.snapshot());
      do_pretrain(corpus, s);
      s.init = "pretrain";
      do_finetune(corpus, s, pipeline.given());
      print_report(do_evaluate(corpus, s, (dir / "ckpt-best.bin").string(), stdp::EvalMode::test), "test");
    }
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "stdp: error: " << e.what() << '\n';
    return 1;
  }
}
