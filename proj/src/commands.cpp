// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <vector>

#include "json.hpp"
#include "stdp/checkpoint.hpp"
#include "stdp/statistics.hpp"

namespace stdp::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

json json_number(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

}  // namespace

void write_atomic(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    try {
      body(out);
    } catch (...) {
      out.close();
      fs::remove(tmp);
      throw;
    }
    out.flush();
    if (!out) {
      fs::remove(tmp);
      throw std::runtime_error("failed writing '" + path.string() + "'");
    }
  }
  fs::rename(tmp, path);
}

static void save_checkpoint_atomic(const stdp::Checkpoint& ck, const fs::path& path) {
  write_atomic(path, [&](std::ostream& out) { stdp::write_checkpoint(out, ck); });
}

Corpus load_corpus(const Settings& s) {
  Corpus c;
  c.dataset = stdp::load_interactions(s.data, s.attrs);
  c.split = stdp::leave_one_out_split(c.dataset.sequences, c.dataset.num_items(), stdp::ShortSequences::drop);
  if (c.split.dropped > 0) {
    std::cerr << "note: skipped " << c.split.dropped << " sequence(s) shorter than 3 items\n";
  }
  if (c.split.size() == 0) throw std::runtime_error("no sequence has at least 3 items");
  return c;
}

void refuse_existing(const fs::path& path) {
  if (fs::exists(path)) {
    throw std::runtime_error("'" + path.string() + "' already exists; use a fresh --run-dir");
  }
}

void write_snapshot(const fs::path& run_dir, const std::string& snapshot) {
  const fs::path path = run_dir / "config.snapshot";
  std::map<std::string, std::string> merged;
  std::vector<std::string> order;
  auto absorb = [&](std::istream& in) {
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find(" = ");
      if (line.empty() || line[0] == '#' || eq == std::string::npos) continue;
      const auto key = line.substr(0, eq);
      if (!merged.count(key)) order.push_back(key);
      merged[key] = line.substr(eq + 3);
    }
  };
  if (std::ifstream old(path); old) absorb(old);
  std::istringstream fresh(snapshot);
  absorb(fresh);
  write_atomic(path, [&](std::ostream& out) {
    for (const auto& k : order) out << k << " = " << merged[k] << '\n';
  });
}

static void append_metrics(const fs::path& run_dir, const json& record) {
  std::ofstream out(run_dir / "metrics.jsonl", std::ios::app);
  if (!out) throw std::runtime_error("cannot append to metrics.jsonl");
  out << record.dump() << '\n';
}

static json report_json(const stdp::EvalReport& r) {
  return json{{"hr5", r.hr5}, {"hr10", r.hr10}, {"ndcg5", r.ndcg5},
              {"ndcg10", r.ndcg10}, {"mrr", r.mrr}, {"count", r.count}};
}

static json epoch_json(const stdp::EpochLog& log) {
  json j;
  j["stage"] = log.stage == stdp::Stage::pretrain ? "pretrain" : "finetune";
  j["epoch"] = log.epoch;
  j["steps"] = log.steps;
  if (log.stage == stdp::Stage::pretrain) {
    j["loss"] = json{{"total", json_number(log.total)}, {"cip", json_number(log.cip)}, {"pss", json_number(log.pss)},
                     {"iap", json_number(log.iap)}, {"fap", json_number(log.fap)}};
  } else {
    j["loss"] = json{{"nip", json_number(log.nip)}};
  }
  if (log.valid) {
    j["valid"] = report_json(*log.valid);
    j["improved"] = log.improved;
  }
  return j;
}

void print_report(const stdp::EvalReport& r, const std::string& mode) {
  json j{{"mode", mode}};
  j.update(report_json(r));
  std::cout << j.dump() << '\n';
  std::cout << std::fixed << std::setprecision(4);
  std::cout << "metric   value\n";
  std::cout << "HR@5     " << r.hr5 << '\n';
  std::cout << "HR@10    " << r.hr10 << '\n';
  std::cout << "NDCG@5   " << r.ndcg5 << '\n';
  std::cout << "NDCG@10  " << r.ndcg10 << '\n';
  std::cout << "MRR      " << r.mrr << '\n';
  std::cout << "users    " << r.count << '\n';
  std::cout.unsetf(std::ios::floatfield);
}

// ---------------------------------------------------------------------------
// Commands.

int run_gen(const Settings& s) {
  const auto corpus = stdp::generate(s.synth);
  stdp::write_synth_corpus(corpus, s.out);
  std::cout << "wrote " << corpus.sequences.size() << " sequences over " << s.synth.items << " items to " << s.out
            << '\n';
  return 0;
}

static stdp::CooccurrenceTable mine_stats(const Corpus& c, std::size_t k, std::size_t threads) {
  const auto ledger = stdp::count_cooccurrence(c.split, threads);
  return stdp::build_cooccurrence_table(ledger, k);
}

static void print_stats_summary(const stdp::CooccurrenceTable& t) {
  std::size_t covered = 0, total = 0;
  for (std::size_t i = 1; i <= t.num_items(); ++i) {
    const auto n = t.successors(static_cast<stdp::ItemId>(i)).size();
    covered += n > 0;
    total += n;
  }
  const double mean = t.num_items() ? static_cast<double>(total) / static_cast<double>(t.num_items()) : 0.0;
  std::cout << "items covered: " << covered << " / " << t.num_items() << "\n";
  std::cout << "mean |C_i|: " << mean << "\n";
}

int run_stats(const Settings& s) {
  const auto corpus = load_corpus(s);
  const auto table = mine_stats(corpus, s.train.k_cooc, s.threads);
  write_atomic(s.out, [&](std::ostream& out) { stdp::write_stats(out, table); });
  print_stats_summary(table);
  return 0;
}

/// Loads run-dir/stats.bin if present, otherwise mines and writes it.
static stdp::CooccurrenceTable run_dir_stats(const Corpus& c, const Settings& s) {
  const fs::path path = fs::path(s.run_dir) / "stats.bin";
  if (fs::exists(path)) {
    auto table = stdp::load_stats(path.string());
    if (table.num_items() != c.dataset.num_items()) throw std::runtime_error("stats.bin was mined from another corpus");
    if (table.k() != s.train.k_cooc) {
      throw std::runtime_error("stats.bin has k = " + std::to_string(table.k()) + " but --k is " +
                               std::to_string(s.train.k_cooc));
    }
    return table;
  }
  auto table = mine_stats(c, s.train.k_cooc, s.threads);
  write_atomic(path, [&](std::ostream& out) { stdp::write_stats(out, table); });
  return table;
}

void do_pretrain(const Corpus& c, const Settings& s) {
  const fs::path dir = s.run_dir;
  const fs::path ckpt = dir / "ckpt-pretrain.bin";
  refuse_existing(ckpt);
  const auto table = run_dir_stats(c, s);
  auto model = stdp::make_model(s.model, c.dataset.num_items(), c.dataset.num_attributes(), s.train.seed);
  stdp::Trainer trainer(model, c.split, c.dataset.catalog, &table, s.train);
  trainer.pretrain([&](const stdp::EpochLog& log, const stdp::Trainer&) {
    append_metrics(dir, epoch_json(log));
    std::cerr << "pretrain epoch " << log.epoch << ": loss " << log.total << '\n';
  });
  save_checkpoint_atomic(trainer.checkpoint(c.dataset.ids), ckpt);
}

static void check_same_corpus(const stdp::Checkpoint& ck, const Corpus& c, const std::string& path) {
  if (!(ck.ids == c.dataset.ids)) throw std::runtime_error("'" + path + "' was trained on a different corpus");
}

/// Command-line model flags must agree with a loaded checkpoint.
static void check_model_flags(const stdp::ModelConfig& ck, const Settings& s, const FlagGiven& given) {
  auto clash = [&](const char* key, bool differs) {
    if (differs && given(key)) {
      throw UsageError(std::string("--") + key + " conflicts with the pre-trained checkpoint");
    }
  };
  clash("d", ck.d != s.model.d);
  clash("layers", ck.layers != s.model.layers);
  clash("heads", ck.heads != s.model.heads);
  clash("max-len", ck.max_len != s.model.max_len);
}

void do_finetune(const Corpus& c, const Settings& s, const FlagGiven& given) {
  const fs::path dir = s.run_dir;
  const fs::path best = dir / "ckpt-best.bin";
  refuse_existing(best);
  const fs::path pre = dir / "ckpt-pretrain.bin";
  const bool from_pretrain = s.init == "pretrain" || (s.init == "auto" && fs::exists(pre));
  stdp::Model<float> model;
  if (from_pretrain) {
    auto ck = stdp::load_checkpoint(pre.string());
    check_same_corpus(ck, c, pre.string());
    check_model_flags(ck.model.config(), s, given);
    auto cfg = ck.model.config();
    cfg.dropout = s.model.dropout;
    model = stdp::Model<float>(cfg, ck.model.num_items(), ck.model.num_attributes());
    for (std::size_t i = 0; i < model.params().size(); ++i) model.params()[i].value = ck.model.params()[i].value;
  } else {
    model = stdp::make_model(s.model, c.dataset.num_items(), c.dataset.num_attributes(), s.train.seed);
  }
  auto eval_opts = s.train.eval;
  eval_opts.threads = s.threads;
  auto cfg = s.train;
  cfg.eval = eval_opts;
  stdp::Trainer trainer(model, c.split, c.dataset.catalog, nullptr, cfg);
  trainer.finetune([&](const stdp::EpochLog& log, const stdp::Trainer& t) {
    append_metrics(dir, epoch_json(log));
    std::cerr << "finetune epoch " << log.epoch << ": loss " << log.nip << ", valid MRR " << log.valid->mrr
              << (log.improved ? " (best)" : "") << '\n';
    if (log.improved) save_checkpoint_atomic(t.checkpoint(c.dataset.ids), best);
  });
  if (!fs::exists(best)) save_checkpoint_atomic(trainer.checkpoint(c.dataset.ids), best);
}

stdp::EvalReport do_evaluate(const Corpus& c, const Settings& s, const std::string& ckpt_path, stdp::EvalMode mode) {
  const auto ck = stdp::load_checkpoint(ckpt_path);
  check_same_corpus(ck, c, ckpt_path);
  auto opts = s.train.eval;
  opts.threads = s.threads;
  return stdp::evaluate(ck.model, c.split, mode, opts);
}

stdp::EvalMode parse_mode(const std::string& m) { return m == "valid" ? stdp::EvalMode::valid : stdp::EvalMode::test; }

}  // namespace stdp::cli
