// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "stdp/autodiff.hpp"
#include "stdp/corpus.hpp"
#include "stdp/model.hpp"
#include "stdp/rng.hpp"
#include "stdp/statistics.hpp"

namespace stdp {

/// Weights of the four pre-training tasks. A zero weight disables the task:
/// its graph is not built and it draws no random numbers.
struct LossWeights {
  double cip = 0.3;
  double pss = 0.3;
  double iap = 0.8;
  double fap = 0.5;

  void validate() const {
    for (double w : {cip, pss, iap, fap})
      if (!std::isfinite(w) || w < 0.0) throw std::invalid_argument("loss weights must be finite and non-negative");
  }
  bool any() const { return cip > 0.0 || pss > 0.0 || iap > 0.0 || fap > 0.0; }
};

/// −log σ(pos − neg).
inline double pairwise_rank_loss(double pos, double neg) { return -ad::detail::log_sigmoid_scalar(pos - neg); }

/// Elementwise −log σ(pos − neg) over [M] score vectors.
template <class T>
ad::Var<T> pairwise_rank_loss(ad::Var<T> pos, ad::Var<T> neg) {
  return ad::neg(ad::log_sigmoid(ad::sub(pos, neg)));
}

/// Sampled (positive, negative) targets, one pair per contributing step.
/// `rows` are flat positions b * max_len + t into the encoded batch.
struct PairSamples {
  std::vector<std::uint32_t> rows;
  std::vector<std::uint32_t> positive;
  std::vector<std::uint32_t> negative;

  std::size_t size() const { return rows.size(); }
  void push(std::size_t row, std::uint32_t pos, std::uint32_t neg) {
    rows.push_back(static_cast<std::uint32_t>(row));
    positive.push_back(pos);
    negative.push_back(neg);
  }
};

enum class TargetTable { items, attributes };

template <class T>
ad::Var<T> zero_loss(ad::Tape<T>& tape) {
  return tape.constant(Tensor<T>::scalar(T{0}));
}

/// Mean pairwise rank loss of the sampled pairs against the encoded states.
template <class T>
ad::Var<T> pairwise_loss(const ModelGraph<T>& g, ad::Var<T> states, const PairSamples& s, TargetTable table) {
  if (s.size() == 0) return zero_loss(g.tape());
  auto rows = g.rows(states, s.rows);
  auto score = [&](const std::vector<std::uint32_t>& ids) {
    return table == TargetTable::items ? g.item_scores(rows, ids) : g.attribute_scores(rows, ids);
  };
  return ad::mean(pairwise_rank_loss(score(s.positive), score(s.negative)));
}

// ---------------------------------------------------------------------------
// Target sampling. Windows are visited in order, positions left to right.

/// Co-occurred items: positive uniform from C_i, negative uniform outside C_i.
inline PairSamples sample_cip(std::span<const PaddedWindow> windows, const CooccurrenceTable& cooc,
                              std::size_t num_items, Rng& rng) {
  PairSamples s;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto& w = windows[b];
    for (std::size_t t = 0; t < w.length(); ++t) {
      if (!w.mask[t]) continue;
      const auto& list = cooc.successors(w.items[t]);
      if (list.empty()) continue;
      const auto excl = cooc.sorted_ids(w.items[t]);
      if (excl.size() >= num_items) continue;
      const ItemId pos = list[rng.uniform_index(list.size())].item;
      s.push(b * w.length() + t, pos, sample_negative(excl, num_items, rng));
    }
  }
  return s;
}

/// Item attributes: positive uniform from A_i, negative uniform outside A_i.
inline PairSamples sample_iap(std::span<const PaddedWindow> windows, const AttributeCatalog& catalog, Rng& rng) {
  PairSamples s;
  const std::size_t universe = catalog.num_attributes();
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto& w = windows[b];
    for (std::size_t t = 0; t < w.length(); ++t) {
      if (!w.mask[t]) continue;
      const auto& attrs = catalog.attributes(w.items[t]);
      if (attrs.empty() || attrs.size() >= universe) continue;
      const AttrId pos = attrs[rng.uniform_index(attrs.size())];
      s.push(b * w.length() + t, pos, sample_negative(attrs, universe, rng));
    }
  }
  return s;
}

/// Frequent attributes of the visible prefix up to each step: positive
/// uniform from F_t, negative uniform outside F_t.
inline PairSamples sample_fap(std::span<const PaddedWindow> windows, const AttributeCatalog& catalog, std::size_t k,
                              Rng& rng) {
  if (k == 0) throw std::invalid_argument("frequent-attribute k must be >= 1");
  PairSamples s;
  const std::size_t universe = catalog.num_attributes();
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto& w = windows[b];
    AttributeFrequency freq(catalog);
    for (std::size_t t = 0; t < w.length(); ++t) {
      if (!w.mask[t]) continue;
      freq.add(w.items[t]);
      auto top = freq.top(k).attributes;
      if (top.empty() || top.size() >= universe) continue;
      const AttrId pos = top[rng.uniform_index(top.size())];
      std::sort(top.begin(), top.end());
      s.push(b * w.length() + t, pos, sample_negative(top, universe, rng));
    }
  }
  return s;
}

/// Next item: positive is the ground-truth target, negative uniform outside
/// the user's training items (`exclusions[b]`, sorted).
inline PairSamples sample_nip(std::span<const PaddedWindow> windows,
                              std::span<const std::vector<ItemId>> exclusions, std::size_t num_items, Rng& rng) {
  if (exclusions.size() != windows.size()) throw std::invalid_argument("sample_nip: one exclusion set per window");
  PairSamples s;
  for (std::size_t b = 0; b < windows.size(); ++b) {
    const auto& w = windows[b];
    for (std::size_t t = 0; t < w.length(); ++t) {
      if (!w.mask[t] || w.targets[t] == kPadding) continue;
      s.push(b * w.length() + t, w.targets[t], sample_negative(exclusions[b], num_items, rng));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// Losses.

template <class T>
ad::Var<T> loss_cip(const ModelGraph<T>& g, ad::Var<T> states, std::span<const PaddedWindow> windows,
                    const CooccurrenceTable& cooc, Rng& rng) {
  return pairwise_loss(g, states, sample_cip(windows, cooc, g.model().num_items(), rng), TargetTable::items);
}

template <class T>
ad::Var<T> loss_iap(const ModelGraph<T>& g, ad::Var<T> states, std::span<const PaddedWindow> windows,
                    const AttributeCatalog& catalog, Rng& rng) {
  return pairwise_loss(g, states, sample_iap(windows, catalog, rng), TargetTable::attributes);
}

template <class T>
ad::Var<T> loss_fap(const ModelGraph<T>& g, ad::Var<T> states, std::span<const PaddedWindow> windows,
                    const AttributeCatalog& catalog, std::size_t k, Rng& rng) {
  return pairwise_loss(g, states, sample_fap(windows, catalog, k, rng), TargetTable::attributes);
}

template <class T>
ad::Var<T> loss_nip(const ModelGraph<T>& g, ad::Var<T> states, std::span<const PaddedWindow> windows,
                    std::span<const std::vector<ItemId>> exclusions, Rng& rng) {
  return pairwise_loss(g, states, sample_nip(windows, exclusions, g.model().num_items(), rng), TargetTable::items);
}

/// Symmetric KL between softmax-normalized feature vectors of the original
/// and paired encodings, averaged over real positions:
///   ½ (KL(p‖q) + KL(q‖p)) = ½ Σ_j (p_j − q_j)(log p_j − log q_j).
template <class T>
ad::Var<T> loss_pss(const ModelGraph<T>& g, ad::Var<T> states, ad::Var<T> paired_states,
                    std::span<const PaddedWindow> windows) {
  std::vector<std::uint32_t> rows;
  for (std::size_t b = 0; b < windows.size(); ++b)
    for (std::size_t t = 0; t < windows[b].length(); ++t)
      if (windows[b].mask[t]) rows.push_back(static_cast<std::uint32_t>(b * windows[b].length() + t));
  if (rows.empty()) return zero_loss(g.tape());
  auto lp = ad::log_softmax(g.rows(states, rows), -1);
  auto lq = ad::log_softmax(g.rows(paired_states, rows), -1);
  auto diff = ad::mul(ad::sub(ad::exp(lp), ad::exp(lq)), ad::sub(lp, lq));
  return ad::scale(ad::mean(ad::sum(diff, -1)), T{0.5});
}

// ---------------------------------------------------------------------------
// Paired sequences.

/// Original windows and their augmented partners; masks are shared.
struct PairedBatch {
  std::vector<PaddedWindow> original;
  std::vector<PaddedWindow> paired;
};

/// Replace, then reorder. Each real item is independently swapped for a
/// uniform member of its co-occurrence list with probability `p_rpc` (items
/// with an empty list stay). Then one contiguous run of ⌈beta · real⌉ real
/// positions, placed uniformly, is uniformly shuffled. Padding is untouched.
inline PaddedWindow make_paired_sequence(const PaddedWindow& window, const CooccurrenceTable& cooc, double p_rpc,
                                         double beta, Rng& rng) {
  if (!(p_rpc >= 0.0 && p_rpc <= 1.0)) throw std::invalid_argument("p_rpc must lie in [0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
  PaddedWindow out = window;
  const std::size_t first = window.first_real();
  const std::size_t real = window.length() - first;
  for (std::size_t t = first; t < window.length(); ++t) {
    const bool replace = rng.bernoulli(p_rpc);
    const auto& list = cooc.successors(window.items[t]);
    if (replace && !list.empty()) out.items[t] = list[rng.uniform_index(list.size())].item;
  }
  const auto seg = static_cast<std::size_t>(std::ceil(beta * static_cast<double>(real) - 1e-12));
  if (seg >= 2) {
    const std::size_t start = first + rng.uniform_index(real - seg + 1);
    for (std::size_t i = seg; i > 1; --i) std::swap(out.items[start + i - 1], out.items[start + rng.uniform_index(i)]);
  }
  return out;
}

inline PairedBatch make_paired_batch(std::span<const PaddedWindow> windows, const CooccurrenceTable& cooc,
                                     double p_rpc, double beta, Rng& rng) {
  PairedBatch pb;
  pb.original.assign(windows.begin(), windows.end());
  pb.paired.reserve(windows.size());
  for (const auto& w : windows) pb.paired.push_back(make_paired_sequence(w, cooc, p_rpc, beta, rng));
  return pb;
}

// ---------------------------------------------------------------------------
// Joint pre-training objective.

struct PretrainTables {
  const CooccurrenceTable* cooc = nullptr;
  const AttributeCatalog* catalog = nullptr;
  std::size_t attr_k = 20;
};

template <class T>
struct PretrainLoss {
  ad::Var<T> total;
  // Unweighted task values; NaN for disabled tasks.
  double cip = std::numeric_limits<double>::quiet_NaN();
  double pss = std::numeric_limits<double>::quiet_NaN();
  double iap = std::numeric_limits<double>::quiet_NaN();
  double fap = std::numeric_limits<double>::quiet_NaN();
};

/// λ_cip·L_cip + λ_pss·L_pss + λ_iap·L_iap + λ_fap·L_fap.
///
/// Draw order: encoder dropout on the originals, CIP samples, encoder dropout
/// on the paired windows, IAP samples, FAP samples.
template <class T>
PretrainLoss<T> pretrain_loss(const ModelGraph<T>& g, const PairedBatch& batch, const PretrainTables& tables,
                              const LossWeights& weights, Mode mode, Rng& rng) {
  weights.validate();
  PretrainLoss<T> out;
  auto& tape = g.tape();
  if (!weights.any()) {
    out.total = zero_loss(tape);
    return out;
  }
  const auto states = g.encode(batch.original, mode, &rng);
  std::vector<ad::Var<T>> terms;
  auto take = [&](ad::Var<T> loss, double w, double& slot) {
    slot = static_cast<double>(loss.value().item());
    terms.push_back(ad::scale(loss, static_cast<T>(w)));
  };
  if (weights.cip > 0.0) take(loss_cip(g, states, batch.original, *tables.cooc, rng), weights.cip, out.cip);
  if (weights.pss > 0.0) {
    if (batch.paired.size() != batch.original.size()) throw std::invalid_argument("pretrain_loss: paired batch missing");
    const auto paired = g.encode(batch.paired, mode, &rng);
    take(loss_pss(g, states, paired, batch.original), weights.pss, out.pss);
  }
  if (weights.iap > 0.0) take(loss_iap(g, states, batch.original, *tables.catalog, rng), weights.iap, out.iap);
  if (weights.fap > 0.0)
    take(loss_fap(g, states, batch.original, *tables.catalog, tables.attr_k, rng), weights.fap, out.fap);
  out.total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) out.total = ad::add(out.total, terms[i]);
  return out;
}

}  // namespace stdp
