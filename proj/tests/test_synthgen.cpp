// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "fixtures.hpp"
#include "stdp/rng.hpp"
#include "stdp/synthgen.hpp"

namespace stdp {
namespace {

TEST(SynthSpec, Validation) {
  SynthSpec s;
  EXPECT_NO_THROW(s.validate());
  s.noise = 1.5;
  EXPECT_THROW(generate(s), std::invalid_argument);
  s = SynthSpec{};
  s.noise = -0.1;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SynthSpec{};
  s.blocks = 0;
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s = SynthSpec{};
  s.min_len = 40;
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

TEST(Generate, ShapeAndAttributes) {
  SynthSpec s;
  s.items = 40;
  s.sequences = 30;
  s.min_len = 3;
  s.max_len = 7;
  auto c = generate(s);
  ASSERT_EQ(c.sequences.size(), 30u);
  for (const auto& seq : c.sequences) {
    EXPECT_GE(seq.items.size(), 3u);
    EXPECT_LE(seq.items.size(), 7u);
    for (auto it : seq.items) {
      EXPECT_GE(it, 1u);
      EXPECT_LE(it, 40u);
    }
  }
  // Blocks partition the items into contiguous equal ranges.
  std::vector<std::size_t> sizes(4, 0);
  for (std::size_t i = 1; i <= 40; ++i) ++sizes.at(c.block_of[i]);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{10, 10, 10, 10}));
  ASSERT_EQ(c.attributes.size(), 40u);
  for (const auto& row : c.attributes) {
    const std::size_t b = c.block_of[row.item];
    ASSERT_EQ(row.attributes.size(), 3u);
    EXPECT_EQ(row.attributes[0], b * 2 + 1);
    EXPECT_EQ(row.attributes[1], b * 2 + 2);
    EXPECT_GT(row.attributes[2], 8u);
    EXPECT_LE(row.attributes[2], 8u + 16u);
  }
}

TEST(Generate, SeedReproducible) {
  SynthSpec s;
  s.sequences = 100;
  auto a = generate(s), b = generate(s);
  std::ostringstream ia, ib;
  write_interactions(ia, a.sequences);
  write_interactions(ib, b.sequences);
  EXPECT_EQ(ia.str(), ib.str());
  s.seed = 2;
  std::ostringstream ic;
  write_interactions(ic, generate(s).sequences);
  EXPECT_NE(ia.str(), ic.str());
}

TEST(Generate, NoiseFreeSingleBlockIsUniformWalk) {
  SynthSpec s;
  s.items = 20;
  s.blocks = 1;
  s.noise = 0.0;
  s.sequences = 2000;
  auto c = generate(s);
  std::vector<double> freq(21, 0.0);
  double n = 0;
  for (const auto& seq : c.sequences)
    for (std::size_t t = 1; t < seq.items.size(); ++t) {
      freq[seq.items[t]] += 1;
      n += 1;
    }
  double chi = 0;
  for (std::size_t i = 1; i <= 20; ++i) chi += (freq[i] - n / 20) * (freq[i] - n / 20) / (n / 20);
  // 19 degrees of freedom; 4 sigma band.
  EXPECT_LT(std::abs(chi - 19.0), 4.0 * std::sqrt(38.0));
}

TEST(Generate, NoiseFreeBlocksStayWithinBlock) {
  SynthSpec s;
  s.noise = 0.0;
  s.sequences = 400;
  auto c = generate(s);
  for (const auto& seq : c.sequences)
    for (std::size_t t = 1; t < seq.items.size(); ++t)
      ASSERT_EQ(c.block_of[seq.items[t]], c.block_of[seq.items[t - 1]]);
  auto data = synth_dataset(c);
  auto split = leave_one_out_split(data.sequences, data.num_items(), ShortSequences::drop);
  auto table = build_cooccurrence_table(count_cooccurrence(split), 20);
  auto block = fixture::internal_blocks(c, data);
  auto [same, total] = fixture::block_agreement(table, block, 20);
  EXPECT_GT(total, 0u);
  EXPECT_EQ(same, total);
}

TEST(Generate, StructureIsRecoverableAtModerateNoise) {
  SynthSpec s;
  s.sequences = 300;
  s.noise = 0.2;
  auto c = generate(s);
  auto data = synth_dataset(c);
  auto split = leave_one_out_split(data.sequences, data.num_items(), ShortSequences::drop);
  auto table = build_cooccurrence_table(count_cooccurrence(split), 5);
  auto [same, total] = fixture::block_agreement(table, fixture::internal_blocks(c, data), 5);
  EXPECT_GT(double(same) / double(total), 0.5);
}

// Mean Jaccard score over every item's top-5 list.
double mean_top_score(const std::vector<std::vector<ItemId>>& seqs, std::size_t n) {
  auto table = build_cooccurrence_table(count_cooccurrence(seqs, n), 5);
  double sum = 0;
  std::size_t cnt = 0;
  for (ItemId i = 1; i <= n; ++i)
    for (const auto& e : table.successors(i)) {
      sum += e.score;
      ++cnt;
    }
  return cnt ? sum / double(cnt) : 0.0;
}

// Rank of the observed statistic among itself plus `shuffles` corpora whose
// item occurrences are permuted globally (lengths and frequencies kept).
std::size_t permutation_rank(const SynthSpec& spec, int shuffles) {
  auto c = generate(spec);
  auto data = synth_dataset(c);
  std::vector<std::vector<ItemId>> seqs;
  for (const auto& s : data.sequences) seqs.push_back(s.items);
  const double observed = mean_top_score(seqs, data.num_items());
  std::vector<ItemId> pool;
  for (const auto& s : seqs) pool.insert(pool.end(), s.begin(), s.end());
  Rng rng({spec.seed, 99});
  std::size_t above = 0;
  for (int k = 0; k < shuffles; ++k) {
    for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.uniform_index(i)]);
    auto shuffled = seqs;
    std::size_t at = 0;
    for (auto& s : shuffled)
      for (auto& v : s) v = pool[at++];
    if (mean_top_score(shuffled, data.num_items()) > observed) ++above;
  }
  return above;  // 0 means the observed value beats every shuffle
}

TEST(Generate, FullNoiseMatchesShuffledBaseline) {
  SynthSpec s;
  s.sequences = 300;
  s.noise = 1.0;
  const int shuffles = 39;
  const auto above = permutation_rank(s, shuffles);
  // Two-sided test at 5%: not in the extreme position on either side.
  EXPECT_GT(above, 0u);
  EXPECT_LT(above, std::size_t(shuffles));
  // The same test has power against planted structure.
  s.noise = 0.0;
  EXPECT_EQ(permutation_rank(s, shuffles), 0u);
}

TEST(WriteCorpus, FilesLoadBackToTheSameDataset) {
  SynthSpec s;
  s.items = 30;
  s.sequences = 20;
  auto c = generate(s);
  const auto dir = std::filesystem::temp_directory_path() / ("stdp_synth_" + std::to_string(::getpid()));
  write_synth_corpus(c, dir);
  auto loaded = load_interactions((dir / "interactions.txt").string(), (dir / "attributes.txt").string());
  auto direct = synth_dataset(c);
  EXPECT_EQ(loaded.ids, direct.ids);
  EXPECT_EQ(loaded.catalog, direct.catalog);
  ASSERT_EQ(loaded.sequences.size(), direct.sequences.size());
  for (std::size_t i = 0; i < loaded.sequences.size(); ++i) EXPECT_EQ(loaded.sequences[i].items, direct.sequences[i].items);
  std::ifstream blocks(dir / "blocks.txt");
  std::size_t item, block, lines = 0;
  while (blocks >> item >> block) {
    EXPECT_EQ(block, c.block_of[item]);
    ++lines;
  }
  EXPECT_EQ(lines, 30u);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace stdp
