// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Helpers shared by the unit tests and the acceptance suite.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "stdp/autodiff.hpp"
#include "stdp/grad_check.hpp"
#include "stdp/objectives.hpp"
#include "stdp/statistics.hpp"
#include "stdp/synthgen.hpp"

namespace fixture {

/// Planted block of every internal item id (index 0 unused).
inline std::vector<std::size_t> internal_blocks(const stdp::SynthCorpus& corpus, const stdp::Dataset& data) {
  std::vector<std::size_t> out(data.ids.items.size(), 0);
  for (std::size_t i = 1; i < out.size(); ++i) out[i] = corpus.block_of[data.ids.items[i]];
  return out;
}

/// (same-block entries, all entries) over the first `top` successors of every
/// item in the table.
inline std::pair<std::size_t, std::size_t> block_agreement(const stdp::CooccurrenceTable& table,
                                                           const std::vector<std::size_t>& block, std::size_t top) {
  std::size_t same = 0, total = 0;
  for (stdp::ItemId i = 1; i <= table.num_items(); ++i) {
    const auto& list = table.successors(i);
    for (std::size_t j = 0; j < list.size() && j < top; ++j) {
      ++total;
      if (block[list[j].item] == block[i]) ++same;
    }
  }
  return {same, total};
}

using Op = std::function<stdp::ad::Var<double>(stdp::ad::Tape<double>&, std::vector<stdp::ad::Var<double>>&)>;

/// Grad check of one op on inputs drawn from [lo, hi). The output is
/// contracted with fixed random weights so every entry gets a distinct
/// upstream gradient.
inline stdp::GradCheckReport check_op(const std::vector<stdp::Shape>& shapes, const Op& op, stdp::Rng& rng,
                                      double lo = -1.0, double hi = 1.0) {
  using namespace stdp;
  ParameterSet<double> ps;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto idx = ps.add("x" + std::to_string(i), shapes[i]);
    for (auto& v : ps[idx].value.storage()) v = lo + (hi - lo) * rng.uniform01();
  }
  std::vector<double> weights;
  auto build = [&](ad::Tape<double>& tape, ParameterSet<double>& p) {
    std::vector<ad::Var<double>> in;
    for (auto& x : p) in.push_back(tape.leaf(x.value, &x.grad));
    auto out = op(tape, in);
    if (weights.size() != out.value().size()) {
      weights.resize(out.value().size());
      for (auto& w : weights) w = rng.normal(0, 1);
    }
    auto w = tape.constant(Tensor<double>(out.shape(), weights));
    return ad::sum(ad::mul(out, w));
  };
  return grad_check(build, ps);
}

/// Two-window instance: 6 items, 4 attributes, d=4, one block, one head.
struct Instance {
  stdp::ModelConfig cfg;
  stdp::Model<double> model;
  stdp::AttributeCatalog catalog{6, 4};
  stdp::CooccurrenceTable cooc;
  std::vector<stdp::PaddedWindow> windows;
  std::vector<std::vector<stdp::ItemId>> exclusions;

  explicit Instance(std::uint64_t seed, std::size_t max_len = 5) {
    using namespace stdp;
    cfg.d = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    cfg.max_len = max_len;
    cfg.dropout = 0.0;
    model = Model<double>(cfg, 6, 4);
    Rng rng(seed);
    model.initialize(rng);
    // Larger embeddings so scores are not all near zero.
    for (auto& p : model.params())
      for (auto& v : p.value.storage()) v += rng.normal(0.0, 0.3);
    model.zero_padding_rows();
    catalog.set(1, {1, 2});
    catalog.set(2, {2, 3});
    catalog.set(3, {2});
    catalog.set(4, {4});
    catalog.set(5, {1, 4});
    catalog.set(6, {3});
    std::vector<std::vector<ItemId>> seqs{{1, 2, 3, 4}, {5, 6, 1}, {2, 4, 6}};
    cooc = build_cooccurrence_table(count_cooccurrence(seqs, 6), 3);
    windows = {next_item_window(std::vector<ItemId>{1, 2, 3, 4, 5}, max_len),
               next_item_window(std::vector<ItemId>{5, 6, 1}, max_len)};
    exclusions = {{1, 2, 3, 4, 5}, {1, 5, 6}};
  }
};

}  // namespace fixture
