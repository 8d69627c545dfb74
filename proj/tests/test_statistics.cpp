// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "stdp/rng.hpp"
#include "stdp/statistics.hpp"

namespace stdp {
namespace {

constexpr ItemId A = 1, B = 2, C = 3;

CountLedger toy_ledger() { return count_cooccurrence({{A, B, C}, {A, C}, {B, A, C}}, 3); }

TEST(CountLedger, ToyCorpusCounts) {
  auto l = toy_ledger();
  EXPECT_EQ(l.count(A), 3u);
  EXPECT_EQ(l.count(B), 2u);
  EXPECT_EQ(l.count(C), 3u);
  EXPECT_EQ(l.pair_count(A, B), 1u);
  EXPECT_EQ(l.pair_count(B, A), 1u);
  EXPECT_EQ(l.pair_count(A, C), 3u);
  EXPECT_EQ(l.pair_count(C, A), 0u);
}

TEST(CountLedger, RepeatedItemCountsOncePerSequence) {
  auto l = count_cooccurrence({{A, A, A}}, 1);
  EXPECT_EQ(l.count(A), 1u);
  EXPECT_EQ(l.pair_count(A, A), 1u);
  auto table = build_cooccurrence_table(l, 20);
  EXPECT_TRUE(table.successors(A).empty());
}

TEST(CountLedger, EmptyCorpus) {
  auto l = count_cooccurrence(std::vector<std::vector<ItemId>>{}, 4);
  for (ItemId i = 1; i <= 4; ++i) {
    EXPECT_EQ(l.count(i), 0u);
    for (ItemId j = 1; j <= 4; ++j) EXPECT_EQ(l.pair_count(i, j), 0u);
  }
  EXPECT_EQ(jaccard(l, 1, 2), 0.0);
}

TEST(Jaccard, ToyValues) {
  auto l = toy_ledger();
  EXPECT_DOUBLE_EQ(jaccard(l, A, C), 1.0);
  EXPECT_DOUBLE_EQ(jaccard(l, A, B), 0.25);
  EXPECT_EQ(jaccard(l, C, A), 0.0);
  EXPECT_EQ(jaccard(0, 0, 0), 0.0);
}

TEST(CooccurrenceTable, SingleSuccessorIsNotPadded) {
  auto table = build_cooccurrence_table(count_cooccurrence({{A, B}}, 3), 20);
  ASSERT_EQ(table.successors(A).size(), 1u);
  EXPECT_EQ(table.successors(A)[0].item, B);
  EXPECT_FLOAT_EQ(table.successors(A)[0].score, 1.0f);
  EXPECT_TRUE(table.successors(C).empty());
}

TEST(CooccurrenceTable, EqualScoreAndPairCountPrefersLowerId) {
  // A precedes both 2 and 3 in each sequence with identical counts.
  auto table = build_cooccurrence_table(count_cooccurrence({{A, 3, 2}, {A, 2, 3}}, 3), 20);
  ASSERT_EQ(table.successors(A).size(), 2u);
  EXPECT_EQ(table.successors(A)[0].item, 2u);
  EXPECT_EQ(table.successors(A)[1].item, 3u);
}

TEST(CooccurrenceTable, KOfOneTruncates) {
  auto l = toy_ledger();
  auto table = build_cooccurrence_table(l, 1);
  for (ItemId i = 1; i <= 3; ++i) EXPECT_LE(table.successors(i).size(), 1u);
  ASSERT_EQ(table.successors(A).size(), 1u);
  EXPECT_EQ(table.successors(A)[0].item, C);
  EXPECT_THROW(build_cooccurrence_table(l, 0), std::invalid_argument);
}

TEST(CooccurrenceTable, DirectionalNotSymmetric) {
  auto table = build_cooccurrence_table(toy_ledger(), 20);
  EXPECT_TRUE(table.successors(C).empty());
  EXPECT_FALSE(table.successors(A).empty());
}

TEST(CooccurrenceTable, SetRejectsOverlongList) {
  CooccurrenceTable t(3, 1);
  EXPECT_THROW(t.set(1, {{2, 0.5f}, {3, 0.25f}}), std::invalid_argument);
}

TEST(StatsFile, RoundTrip) {
  auto table = build_cooccurrence_table(toy_ledger(), 20);
  std::stringstream ss;
  write_stats(ss, table);
  EXPECT_EQ(read_stats(ss), table);
}

TEST(StatsFile, EmptyTableRoundTrip) {
  CooccurrenceTable table(0, 5);
  std::stringstream ss;
  write_stats(ss, table);
  auto back = read_stats(ss);
  EXPECT_EQ(back.num_items(), 0u);
  EXPECT_EQ(back, table);
}

TEST(StatsFile, CorruptedMagicAndTruncation) {
  auto table = build_cooccurrence_table(toy_ledger(), 20);
  std::stringstream ss;
  write_stats(ss, table);
  auto bytes = ss.str();
  auto bad = bytes;
  bad[0] = 'X';
  std::stringstream s1(bad);
  EXPECT_THROW(read_stats(s1), io::FormatError);
  std::stringstream s2(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_stats(s2), io::FormatError);
  auto wrong_version = bytes;
  wrong_version[4] = 9;
  std::stringstream s3(wrong_version);
  EXPECT_THROW(read_stats(s3), io::FormatError);
}

AttributeCatalog toy_catalog() {
  // Items 1..3 with sets {a,b}, {b,c}, {b}; a=1, b=2, c=3.
  AttributeCatalog cat(3, 3);
  cat.set(1, {1, 2});
  cat.set(2, {2, 3});
  cat.set(3, {2});
  return cat;
}

TEST(FrequentAttributes, Examples) {
  auto cat = toy_catalog();
  std::vector<ItemId> prefix{1, 2, 3};
  auto f1 = frequent_attributes(prefix, cat, 1);
  EXPECT_EQ(f1.attributes, (std::vector<AttrId>{2}));
  EXPECT_EQ(f1.counts, (std::vector<std::uint32_t>{3}));
  auto f2 = frequent_attributes(prefix, cat, 2);
  EXPECT_EQ(f2.attributes, (std::vector<AttrId>{2, 1}));
  EXPECT_THROW(frequent_attributes(std::span<const ItemId>{}, cat, 1), std::invalid_argument);
}

TEST(FrequentAttributes, SharedAttribute) {
  AttributeCatalog cat(3, 4);
  for (ItemId i = 1; i <= 3; ++i) cat.set(i, {4});
  std::vector<ItemId> prefix{3, 1, 2, 1};
  auto f = frequent_attributes(prefix, cat, 20);
  EXPECT_EQ(f.attributes, (std::vector<AttrId>{4}));
  EXPECT_EQ(f.counts, (std::vector<std::uint32_t>{4}));
}

std::vector<std::vector<ItemId>> random_corpus(Rng& rng, std::size_t num_items) {
  std::vector<std::vector<ItemId>> seqs(rng.uniform_index(11));
  for (auto& s : seqs) {
    s.resize(rng.uniform_index(9));
    for (auto& v : s) v = static_cast<ItemId>(1 + rng.uniform_index(num_items));
  }
  return seqs;
}

class StatisticsOracle : public ::testing::TestWithParam<int> {};

TEST_P(StatisticsOracle, MatchesBruteForce) {
  Rng rng({77, static_cast<std::uint64_t>(GetParam())});
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(15);
    auto seqs = random_corpus(rng, n);
    auto ledger = count_cooccurrence(seqs, n);
    auto ref = oracle::count(seqs);
    for (ItemId a = 1; a <= n; ++a) {
      ASSERT_EQ(ledger.count(a), oracle::get(ref.item, a));
      for (ItemId b = 1; b <= n; ++b) {
        ASSERT_EQ(ledger.pair_count(a, b), oracle::get(ref.pair, a, b));
        ASSERT_EQ(jaccard(ledger, a, b), oracle::jaccard(ref, a, b));
      }
    }
    const std::size_t k = 1 + rng.uniform_index(6);
    auto table = build_cooccurrence_table(ledger, k);
    for (ItemId a = 1; a <= n; ++a) {
      auto want = oracle::top_successors(ref, a, static_cast<oracle::Id>(n), k);
      const auto& got = table.successors(a);
      ASSERT_EQ(got.size(), want.size());
      for (std::size_t j = 0; j < got.size(); ++j) {
        EXPECT_EQ(got[j].item, want[j].first);
        EXPECT_EQ(got[j].score, static_cast<float>(want[j].second));
      }
    }
    // Worker count must not change the result.
    EXPECT_EQ(count_cooccurrence(seqs, n, 3), ledger);
  }
}

TEST_P(StatisticsOracle, FrequentAttributesMatchCounting) {
  Rng rng({78, static_cast<std::uint64_t>(GetParam())});
  for (int rep = 0; rep < 25; ++rep) {
    const std::size_t n = 1 + rng.uniform_index(15), na = 1 + rng.uniform_index(8);
    AttributeCatalog cat(n, na);
    std::vector<std::vector<oracle::Id>> sets(n + 1);
    for (ItemId i = 1; i <= n; ++i) {
      std::vector<AttrId> s;
      for (AttrId a = 1; a <= na; ++a)
        if (rng.bernoulli(0.3)) s.push_back(a);
      sets[i].assign(s.begin(), s.end());
      cat.set(i, s);
    }
    std::vector<ItemId> prefix(1 + rng.uniform_index(8));
    for (auto& v : prefix) v = static_cast<ItemId>(1 + rng.uniform_index(n));
    const std::size_t k = 1 + rng.uniform_index(5);
    auto got = frequent_attributes(prefix, cat, k);
    std::vector<oracle::Id> pref(prefix.begin(), prefix.end());
    auto want = oracle::frequent(pref, sets, k);
    EXPECT_EQ(std::vector<oracle::Id>(got.attributes.begin(), got.attributes.end()), want);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, StatisticsOracle, ::testing::Range(0, 8));

TEST(StatisticsThreads, LargerCorpusIndependentOfWorkers) {
  Rng rng(5);
  std::vector<std::vector<ItemId>> seqs(400);
  for (auto& s : seqs) {
    s.resize(5 + rng.uniform_index(20));
    for (auto& v : s) v = static_cast<ItemId>(1 + rng.uniform_index(50));
  }
  auto one = count_cooccurrence(seqs, 50, 1);
  for (std::size_t t : {2u, 4u, 7u}) EXPECT_EQ(count_cooccurrence(seqs, 50, t), one);
}

}  // namespace
}  // namespace stdp
