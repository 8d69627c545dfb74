// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "oracles.hpp"
#include "stdp/evaluator.hpp"
#include "stdp/synthgen.hpp"
#include "stdp/trainer.hpp"

namespace stdp {
namespace {

// Scores that put the target (index 0) at rank r with all other scores distinct.
std::vector<double> scores_with_rank(std::size_t r, std::size_t n = 100) {
  std::vector<double> s(n);
  for (std::size_t i = 1; i < n; ++i) s[i] = -double(i);
  s[0] = -double(r) + 0.5;
  return s;
}

TEST(RankMetrics, ClosedForms) {
  auto m1 = rank_metrics(scores_with_rank(1), 0);
  EXPECT_EQ(m1.rank, 1u);
  EXPECT_EQ(m1.hr5, 1.0);
  EXPECT_EQ(m1.ndcg5, 1.0);
  EXPECT_EQ(m1.mrr, 1.0);
  auto m4 = rank_metrics(scores_with_rank(4), 0);
  EXPECT_EQ(m4.rank, 4u);
  EXPECT_EQ(m4.hr5, 1.0);
  EXPECT_NEAR(m4.ndcg5, 0.4307, 1e-4);
  EXPECT_DOUBLE_EQ(m4.ndcg5, 1.0 / std::log2(5.0));
  EXPECT_DOUBLE_EQ(m4.mrr, 0.25);
  auto m11 = rank_metrics(scores_with_rank(11), 0);
  EXPECT_EQ(m11.rank, 11u);
  EXPECT_EQ(m11.hr10, 0.0);
  EXPECT_EQ(m11.ndcg10, 0.0);
  EXPECT_DOUBLE_EQ(m11.mrr, 1.0 / 11.0);
  EXPECT_THROW(rank_metrics(std::vector<double>{1.0}, 1), std::out_of_range);
}

TEST(RankMetrics, TiesArePessimistic) {
  std::vector<double> s{0.5, 0.5, 0.5, 0.1};
  EXPECT_EQ(rank_metrics(s, 0).rank, 3u);
  EXPECT_EQ(rank_metrics(s, 3).rank, 4u);
  std::vector<double> all_equal(100, 0.0);
  EXPECT_EQ(rank_metrics(all_equal, 0).rank, 100u);
}

TEST(RankMetrics, MatchSortingOracleAndAreMonotoneInvariant) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(120);
    std::vector<double> s(n);
    // Small integer range to force plenty of ties.
    for (auto& v : s) v = double(rng.uniform_index(15)) - 7.0;
    const std::size_t target = rng.uniform_index(n);
    auto got = rank_metrics(s, target);
    auto want = oracle::rank_by_sorting(s, target);
    ASSERT_EQ(got.rank, want.rank);
    EXPECT_EQ(got.hr5, want.hr5);
    EXPECT_EQ(got.hr10, want.hr10);
    EXPECT_EQ(got.ndcg5, want.ndcg5);
    EXPECT_EQ(got.ndcg10, want.ndcg10);
    EXPECT_EQ(got.mrr, want.mrr);
    std::vector<double> t(n);
    std::transform(s.begin(), s.end(), t.begin(), [](double x) { return std::exp(x) * 3.0 + 1.0; });
    EXPECT_EQ(rank_metrics(t, target).rank, got.rank);
  }
}

TEST(SampleCandidates, HundredCandidatesTargetOnce) {
  Rng rng(2);
  std::vector<ItemId> history{3, 7, 9, 50};
  for (int trial = 0; trial < 50; ++trial) {
    auto c = sample_candidates(history, 9, 99, 1000, rng);
    ASSERT_EQ(c.size(), 100u);
    EXPECT_EQ(c[0], 9u);
    EXPECT_EQ(std::count(c.begin(), c.end(), 9u), 1);
    std::set<ItemId> uniq(c.begin(), c.end());
    EXPECT_EQ(uniq.size(), 100u);
    for (std::size_t i = 1; i < c.size(); ++i) {
      EXPECT_FALSE(std::binary_search(history.begin(), history.end(), c[i]));
      EXPECT_GE(c[i], 1u);
      EXPECT_LE(c[i], 1000u);
    }
  }
}

TEST(SampleCandidates, ForcedComplement) {
  std::vector<ItemId> history{42};
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    Rng rng(seed);
    auto c = sample_candidates(history, 42, 99, 100, rng);
    std::set<ItemId> negs(c.begin() + 1, c.end());
    EXPECT_EQ(negs.size(), 99u);
    EXPECT_EQ(negs.count(42), 0u);
  }
  Rng rng(4);
  EXPECT_THROW(sample_candidates(history, 42, 99, 99, rng), std::invalid_argument);
}

TEST(SampleCandidates, SameSeedSameCandidates) {
  std::vector<ItemId> history{1, 2, 3};
  Rng a(5), b(5);
  EXPECT_EQ(sample_candidates(history, 2, 99, 500, a), sample_candidates(history, 2, 99, 500, b));
  // Dense pool takes the explicit-complement branch.
  Rng c(6), d(6);
  EXPECT_EQ(sample_candidates(history, 2, 99, 110, c), sample_candidates(history, 2, 99, 110, d));
}

TEST(SampleCandidates, NegativesAreUniformInBothBranches) {
  // Chi-square of negative frequencies against uniform over the pool.
  for (std::size_t universe : {1000u, 150u}) {
    std::vector<ItemId> history{1, 2};
    const std::size_t pool = universe - 2;
    std::vector<double> freq(universe + 1, 0.0);
    Rng rng(universe);
    const int trials = 2000;
    for (int t = 0; t < trials; ++t)
      for (auto it : sample_candidates(history, 1, 20, universe, rng)) freq[it] += 1;
    freq[1] -= trials;  // target
    const double expected = trials * 20.0 / double(pool);
    double chi = 0;
    for (std::size_t i = 3; i <= universe; ++i) chi += (freq[i] - expected) * (freq[i] - expected) / expected;
    EXPECT_EQ(freq[2], 0.0);
    const double df = double(pool - 1);
    EXPECT_LT(std::abs(chi - df), 4.0 * std::sqrt(2.0 * df)) << "universe " << universe;
  }
}

struct EvalCorpus {
  Dataset data;
  DatasetSplit split;

  explicit EvalCorpus(std::size_t sequences = 300) {
    SynthSpec s;
    s.items = 200;
    s.sequences = sequences;
    s.seed = 9;
    data = synth_dataset(generate(s));
    split = leave_one_out_split(data.sequences, data.num_items(), ShortSequences::drop);
  }
};

TEST(EvalTasks, HistoriesAndTargetsFollowTheSplit) {
  EvalCorpus c(20);
  auto valid = make_eval_tasks(c.split, 50, EvalMode::valid, {});
  auto test = make_eval_tasks(c.split, 50, EvalMode::test, {});
  ASSERT_EQ(valid.size(), c.split.size());
  for (std::size_t i = 0; i < valid.size(); ++i) {
    const auto& e = c.split.entries[i];
    EXPECT_EQ(valid[i].candidates[0], e.valid);
    EXPECT_EQ(test[i].candidates[0], e.test);
    EXPECT_EQ(valid[i].history.items, pad_window(e.train, 50).items);
    auto h = e.train;
    h.push_back(e.valid);
    EXPECT_EQ(test[i].history.items, pad_window(h, 50).items);
    auto seen = sorted_unique(e.full());
    for (std::size_t j = 1; j < test[i].candidates.size(); ++j)
      EXPECT_FALSE(std::binary_search(seen.begin(), seen.end(), test[i].candidates[j]));
  }
}

TEST(Evaluate, RiggedScorerGivesPerfectMetrics) {
  EvalCorpus c(50);
  auto tasks = make_eval_tasks(c.split, 20, EvalMode::test, {});
  BatchScorer rigged = [](std::span<const EvalTask> ts, std::vector<std::vector<double>>& out) {
    for (std::size_t b = 0; b < ts.size(); ++b) {
      out[b].assign(ts[b].candidates.size(), 0.0);
      out[b][0] = 1.0;
    }
  };
  auto r = evaluate_tasks(tasks, rigged, 16, 1);
  EXPECT_EQ(r.hr5, 1.0);
  EXPECT_EQ(r.hr10, 1.0);
  EXPECT_EQ(r.ndcg5, 1.0);
  EXPECT_EQ(r.ndcg10, 1.0);
  EXPECT_EQ(r.mrr, 1.0);
  EXPECT_EQ(r.count, c.split.size());
}

TEST(Evaluate, AggregationMatchesSortingOracleAndIgnoresThreads) {
  EvalCorpus c(120);
  auto tasks = make_eval_tasks(c.split, 20, EvalMode::valid, {});
  // Deterministic pseudo-scores with ties, keyed on the candidate ids.
  auto score = [](ItemId user_target, ItemId cand) { return double((user_target * 31u + cand * 17u) % 23u); };
  BatchScorer scorer = [&](std::span<const EvalTask> ts, std::vector<std::vector<double>>& out) {
    for (std::size_t b = 0; b < ts.size(); ++b) {
      out[b].clear();
      for (ItemId cand : ts[b].candidates) out[b].push_back(score(ts[b].candidates[0], cand));
    }
  };
  double hr5 = 0, hr10 = 0, n5 = 0, n10 = 0, mrr = 0;
  for (const auto& t : tasks) {
    std::vector<double> s;
    for (ItemId cand : t.candidates) s.push_back(score(t.candidates[0], cand));
    auto m = oracle::rank_by_sorting(s, 0);
    hr5 += m.hr5;
    hr10 += m.hr10;
    n5 += m.ndcg5;
    n10 += m.ndcg10;
    mrr += m.mrr;
  }
  const double n = double(tasks.size());
  auto r = evaluate_tasks(tasks, scorer, 7, 1);
  EXPECT_DOUBLE_EQ(r.hr5, hr5 / n);
  EXPECT_DOUBLE_EQ(r.hr10, hr10 / n);
  EXPECT_DOUBLE_EQ(r.ndcg5, n5 / n);
  EXPECT_DOUBLE_EQ(r.ndcg10, n10 / n);
  EXPECT_DOUBLE_EQ(r.mrr, mrr / n);
  EXPECT_EQ(evaluate_tasks(tasks, scorer, 7, 3), r);
  EXPECT_EQ(evaluate_tasks(tasks, scorer, 64, 2), r);
}

TEST(Evaluate, UntrainedModelSitsAtChance) {
  // Uniform i.i.d. items over a large catalog, so the held-out target is
  // exchangeable with the sampled negatives. On block-structured data an
  // untrained encoder still favours targets repeated from the history.
  SynthSpec s;
  s.items = 2000;
  s.sequences = 2000;
  s.noise = 1.0;
  s.seed = 9;
  auto data = synth_dataset(generate(s));
  auto split = leave_one_out_split(data.sequences, data.num_items(), ShortSequences::drop);
  ModelConfig cfg;
  cfg.d = 16;
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.max_len = 20;
  auto m = make_model(cfg, data.num_items(), data.num_attributes(), 11);
  auto r = evaluate(m, split, EvalMode::test);
  EXPECT_GE(r.count, 2000u);
  EXPECT_NEAR(r.mrr, oracle::chance_mrr(100), 0.01);
}

TEST(Evaluate, ReadOnlyBoundedAndThreadIndependent) {
  EvalCorpus c(200);
  ModelConfig cfg;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.max_len = 15;
  auto m = make_model(cfg, c.data.num_items(), c.data.num_attributes(), 12);
  const auto before = m;
  EvalOptions one, three;
  three.threads = 3;
  three.batch_size = 17;
  auto r1 = evaluate(m, c.split, EvalMode::valid, one);
  auto r3 = evaluate(m, c.split, EvalMode::valid, three);
  EXPECT_EQ(r1, r3);
  EXPECT_TRUE(m.params().same_values(before.params()));
  for (const auto& r : {r1, evaluate(m, c.split, EvalMode::test, one)}) {
    for (double v : {r.hr5, r.hr10, r.ndcg5, r.ndcg10, r.mrr}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_GE(r.hr10, r.hr5);
    EXPECT_GE(r.ndcg10, r.ndcg5);
    EXPECT_LE(r.ndcg5, r.hr5);
  }
}

TEST(Evaluate, EmptySplitGivesEmptyReport) {
  DatasetSplit empty;
  empty.num_items = 10;
  auto tasks = make_eval_tasks(empty, 5, EvalMode::test, {});
  EXPECT_TRUE(tasks.empty());
  BatchScorer never = [](std::span<const EvalTask>, std::vector<std::vector<double>>&) { FAIL(); };
  EXPECT_EQ(evaluate_tasks(tasks, never, 4, 1).count, 0u);
}

}  // namespace
}  // namespace stdp
