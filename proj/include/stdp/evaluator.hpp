// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <thread>
#include <unordered_set>
#include <vector>

#include "stdp/corpus.hpp"
#include "stdp/model.hpp"
#include "stdp/rng.hpp"

namespace stdp {

/// Means over evaluated sequences.
struct EvalReport {
  double hr5 = 0.0;
  double hr10 = 0.0;
  double ndcg5 = 0.0;
  double ndcg10 = 0.0;
  double mrr = 0.0;
  std::size_t count = 0;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

struct RankMetrics {
  std::size_t rank = 0;
  double hr5 = 0.0, hr10 = 0.0, ndcg5 = 0.0, ndcg10 = 0.0, mrr = 0.0;
};

/// Pessimistic rank: 1 + number of other candidates scoring >= the target.
inline RankMetrics rank_metrics(std::span<const double> scores, std::size_t target) {
  if (target >= scores.size()) throw std::out_of_range("rank_metrics: target index outside candidates");
  const double ts = scores[target];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (i != target && !(scores[i] < ts)) ++rank;
  RankMetrics m;
  m.rank = rank;
  const double gain = 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  m.hr5 = rank <= 5 ? 1.0 : 0.0;
  m.hr10 = rank <= 10 ? 1.0 : 0.0;
  m.ndcg5 = rank <= 5 ? gain : 0.0;
  m.ndcg10 = rank <= 10 ? gain : 0.0;
  m.mrr = 1.0 / static_cast<double>(rank);
  return m;
}

/// Target followed by `n_neg` distinct negatives drawn uniformly without
/// replacement from {1..universe} minus `history` (sorted, unique).
inline std::vector<ItemId> sample_candidates(std::span<const ItemId> history, ItemId target, std::size_t n_neg,
                                             std::size_t universe, Rng& rng) {
  const std::size_t pool = universe - std::min(universe, history.size());
  if (pool < n_neg) {
    throw std::invalid_argument("sample_candidates: only " + std::to_string(pool) + " items outside the history, need " +
                                std::to_string(n_neg));
  }
  std::vector<ItemId> out{target};
  out.reserve(n_neg + 1);
  auto excluded = [&](ItemId i) { return std::binary_search(history.begin(), history.end(), i); };
  if (n_neg * 4 <= pool) {
    std::unordered_set<ItemId> taken;
    while (out.size() < n_neg + 1) {
      const auto cand = static_cast<ItemId>(1 + rng.uniform_index(universe));
      if (!excluded(cand) && taken.insert(cand).second) out.push_back(cand);
    }
    return out;
  }
  // Partial Fisher-Yates over the explicit complement.
  std::vector<ItemId> rest;
  rest.reserve(pool);
  for (ItemId i = 1; i <= universe; ++i)
    if (!excluded(i)) rest.push_back(i);
  for (std::size_t i = 0; i < n_neg; ++i) {
    std::swap(rest[i], rest[i + rng.uniform_index(rest.size() - i)]);
    out.push_back(rest[i]);
  }
  return out;
}

enum class EvalMode { valid, test };

struct EvalOptions {
  std::size_t negatives = 99;
  std::uint64_t seed = 2024;
  std::size_t batch_size = 256;
  std::size_t threads = 1;
};

/// One scored ranking: the history window and its candidates (target first).
struct EvalTask {
  PaddedWindow history;
  std::vector<ItemId> candidates;
};

/// Candidate sets are drawn sequentially from a generator seeded with
/// `opts.seed`, so every model evaluated with the same options sees the same
/// candidates.
inline std::vector<EvalTask> make_eval_tasks(const DatasetSplit& split, std::size_t max_len, EvalMode mode,
                                             const EvalOptions& opts) {
  Rng rng(opts.seed);
  std::vector<EvalTask> tasks;
  tasks.reserve(split.size());
  for (const auto& e : split.entries) {
    auto history = e.train;
    if (mode == EvalMode::test) history.push_back(e.valid);
    const ItemId target = mode == EvalMode::test ? e.test : e.valid;
    const auto seen = sorted_unique(e.full());
    tasks.push_back({pad_window(history, max_len), sample_candidates(seen, target, opts.negatives, split.num_items, rng)});
  }
  return tasks;
}

/// Writes one score per candidate for each task of a batch.
using BatchScorer = std::function<void(std::span<const EvalTask>, std::vector<std::vector<double>>&)>;

/// Scores in batches (optionally across threads) and averages per-task
/// metrics in task order, so the report does not depend on `threads`.
inline EvalReport evaluate_tasks(std::span<const EvalTask> tasks, const BatchScorer& scorer, std::size_t batch_size,
                                 std::size_t threads) {
  EvalReport report;
  if (tasks.empty()) return report;
  batch_size = std::max<std::size_t>(1, batch_size);
  const std::size_t n_batches = (tasks.size() + batch_size - 1) / batch_size;
  std::vector<RankMetrics> per(tasks.size());
  auto work = [&](std::size_t worker, std::size_t stride) {
    std::vector<std::vector<double>> scores;
    for (std::size_t bi = worker; bi < n_batches; bi += stride) {
      const std::size_t lo = bi * batch_size, hi = std::min(tasks.size(), lo + batch_size);
      scores.assign(hi - lo, {});
      scorer(tasks.subspan(lo, hi - lo), scores);
      for (std::size_t i = lo; i < hi; ++i) per[i] = rank_metrics(scores[i - lo], 0);
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n_batches));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w, threads);
    for (auto& t : pool) t.join();
  }
  for (const auto& m : per) {
    report.hr5 += m.hr5;
    report.hr10 += m.hr10;
    report.ndcg5 += m.ndcg5;
    report.ndcg10 += m.ndcg10;
    report.mrr += m.mrr;
  }
  const double n = static_cast<double>(per.size());
  report.hr5 /= n;
  report.hr10 /= n;
  report.ndcg5 /= n;
  report.ndcg10 /= n;
  report.mrr /= n;
  report.count = per.size();
  return report;
}

/// Scores candidates against the encoder state at the last window position.
template <class T>
BatchScorer model_scorer(const Model<T>& model) {
  return [&model](std::span<const EvalTask> tasks, std::vector<std::vector<double>>& out) {
    std::vector<PaddedWindow> windows;
    windows.reserve(tasks.size());
    for (const auto& t : tasks) windows.push_back(t.history);
    ad::Tape<T> tape;
    ModelGraph<T> g(tape, model);
    const auto states = g.encode(windows, Mode::eval, nullptr);
    const auto& sv = states.value();
    const std::size_t L = model.config().max_len, d = model.config().d;
    for (std::size_t b = 0; b < tasks.size(); ++b) {
      const std::span<const T> last(sv.data() + (b * L + L - 1) * d, d);
      out[b].clear();
      for (ItemId c : tasks[b].candidates) out[b].push_back(static_cast<double>(score_item(model, last, c)));
    }
  };
}

template <class T>
EvalReport evaluate(const Model<T>& model, const DatasetSplit& split, EvalMode mode, const EvalOptions& opts = {}) {
  const auto tasks = make_eval_tasks(split, model.config().max_len, mode, opts);
  return evaluate_tasks(tasks, model_scorer(model), opts.batch_size, opts.threads);
}

}  // namespace stdp
