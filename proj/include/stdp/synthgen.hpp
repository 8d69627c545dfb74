// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "stdp/corpus.hpp"
#include "stdp/rng.hpp"

namespace stdp {

/// Synthetic corpus with block-structured transitions. Items 1..items are
/// split into `blocks` contiguous, near-equal groups.
struct SynthSpec {
  std::size_t items = 200;
  std::size_t sequences = 2000;
  std::size_t min_len = 10;
  std::size_t max_len = 30;
  std::size_t blocks = 4;
  double within = 1.0;  // stay in the current block on a structured step
  double noise = 0.2;   // probability a step is uniform over all items
  std::size_t attrs_per_block = 2;
  std::size_t random_attrs = 16;  // shared pool for the one random attribute per item
  std::uint64_t seed = 1;

  void validate() const {
    if (items == 0) throw std::invalid_argument("synth: items must be >= 1");
    if (sequences == 0) throw std::invalid_argument("synth: sequences must be >= 1");
    if (min_len < 1 || min_len > max_len) throw std::invalid_argument("synth: need 1 <= min_len <= max_len");
    if (blocks == 0 || blocks > items) throw std::invalid_argument("synth: blocks must lie in [1, items]");
    if (!(noise >= 0.0 && noise <= 1.0)) throw std::invalid_argument("synth: noise must lie in [0, 1]");
    if (!(within >= 0.0 && within <= 1.0)) throw std::invalid_argument("synth: within must lie in [0, 1]");
  }
};

struct SynthCorpus {
  std::vector<RawSequence> sequences;
  std::vector<RawAttributes> attributes;
  std::vector<std::size_t> block_of;  // indexed by raw item id; entry 0 unused
};

/// Block b holds items [b*items/blocks + 1, (b+1)*items/blocks].
inline std::size_t synth_block(const SynthSpec& s, std::uint64_t item) {
  return static_cast<std::size_t>(((item - 1) * s.blocks) / s.items);
}

/// Block attributes take ids 1..blocks*attrs_per_block; the random pool
/// follows.
inline SynthCorpus generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  SynthCorpus out;
  std::vector<std::vector<std::uint64_t>> members(spec.blocks);
  out.block_of.assign(spec.items + 1, 0);
  for (std::uint64_t i = 1; i <= spec.items; ++i) {
    out.block_of[i] = synth_block(spec, i);
    members[out.block_of[i]].push_back(i);
  }
  for (std::uint64_t i = 1; i <= spec.items; ++i) {
    RawAttributes row{i, {}};
    const std::size_t b = out.block_of[i];
    for (std::size_t a = 0; a < spec.attrs_per_block; ++a) row.attributes.push_back(b * spec.attrs_per_block + a + 1);
    if (spec.random_attrs > 0) {
      row.attributes.push_back(spec.blocks * spec.attrs_per_block + 1 + rng.uniform_index(spec.random_attrs));
    }
    if (!row.attributes.empty()) out.attributes.push_back(std::move(row));
  }
  auto uniform_item = [&] { return static_cast<std::uint64_t>(1 + rng.uniform_index(spec.items)); };
  for (std::size_t u = 0; u < spec.sequences; ++u) {
    RawSequence seq{"u" + std::to_string(u + 1), {}};
    const std::size_t len = spec.min_len + rng.uniform_index(spec.max_len - spec.min_len + 1);
    std::uint64_t cur = uniform_item();
    seq.items.push_back(cur);
    while (seq.items.size() < len) {
      if (rng.bernoulli(spec.noise)) {
        cur = uniform_item();
      } else {
        std::size_t b = out.block_of[cur];
        if (spec.blocks > 1 && !rng.bernoulli(spec.within)) {
          const std::size_t shift = 1 + rng.uniform_index(spec.blocks - 1);
          b = (b + shift) % spec.blocks;
        }
        cur = members[b][rng.uniform_index(members[b].size())];
      }
      seq.items.push_back(cur);
    }
    out.sequences.push_back(std::move(seq));
  }
  return out;
}

/// One `<item>\t<block>` line per item.
inline void write_block_map(std::ostream& out, const SynthCorpus& corpus) {
  for (std::size_t i = 1; i < corpus.block_of.size(); ++i) out << i << '\t' << corpus.block_of[i] << '\n';
}

/// Writes interactions.txt, attributes.txt and blocks.txt into `dir`.
inline void write_synth_corpus(const SynthCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write '" + (dir / name).string() + "'");
    return f;
  };
  {
    auto f = open("interactions.txt");
    write_interactions(f, corpus.sequences);
  }
  {
    auto f = open("attributes.txt");
    write_attributes(f, corpus.attributes);
  }
  {
    auto f = open("blocks.txt");
    write_block_map(f, corpus);
  }
}

/// Dataset view of a generated corpus (same remapping as loading the files).
inline Dataset synth_dataset(const SynthCorpus& corpus) { return build_dataset(corpus.sequences, corpus.attributes); }

}  // namespace stdp
