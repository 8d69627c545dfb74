// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "stdp/binary_io.hpp"
#include "stdp/corpus.hpp"

namespace stdp {

/// Sequence-level presence counts cnt(i) and directional pair counts
/// cnt(a, b): the number of sequences in which some occurrence of b is
/// strictly after some occurrence of a. A sequence adds at most 1 to any count.
class CountLedger {
 public:
  explicit CountLedger(std::size_t num_items = 0) : counts_(num_items + 1, 0), pairs_(num_items + 1) {}

  std::size_t num_items() const { return counts_.size() - 1; }

  std::uint32_t count(ItemId i) const { return i < counts_.size() ? counts_[i] : 0; }

  std::uint32_t pair_count(ItemId a, ItemId b) const {
    if (a >= pairs_.size()) return 0;
    const auto it = pairs_[a].find(b);
    return it == pairs_[a].end() ? 0 : it->second;
  }

  /// Successors of `a` with a positive pair count, in unspecified order.
  const std::unordered_map<ItemId, std::uint32_t>& successors(ItemId a) const { return pairs_.at(a); }

  void add_sequence(std::span<const ItemId> seq) {
    if (stamp_.size() != counts_.size()) stamp_.assign(counts_.size(), 0);
    ++epoch_;
    // Walk backwards; the first occurrence of an item (seen last in this walk)
    // pairs with every distinct item strictly after it.
    first_pos_.clear();
    for (std::size_t p = 0; p < seq.size(); ++p) {
      const ItemId it = check(seq[p]);
      if (stamp_[it] != epoch_) {
        stamp_[it] = epoch_;
        first_pos_.push_back(p);
        ++counts_[it];
      }
    }
    ++epoch_;
    suffix_.clear();
    std::size_t next_first = first_pos_.size();
    for (std::size_t p = seq.size(); p-- > 0;) {
      const ItemId it = seq[p];
      if (next_first > 0 && first_pos_[next_first - 1] == p) {
        --next_first;
        for (ItemId b : suffix_) ++pairs_[it][b];
      }
      if (stamp_[it] != epoch_) {
        stamp_[it] = epoch_;
        suffix_.push_back(it);
      }
    }
  }

  void merge(const CountLedger& other) {
    if (other.num_items() != num_items()) throw std::invalid_argument("ledger merge: item space mismatch");
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      counts_[i] += other.counts_[i];
      for (const auto& [b, c] : other.pairs_[i]) pairs_[i][b] += c;
    }
  }

  friend bool operator==(const CountLedger& a, const CountLedger& b) {
    return a.counts_ == b.counts_ && a.pairs_ == b.pairs_;
  }

 private:
  ItemId check(ItemId it) const {
    if (it == kPadding || it >= counts_.size()) {
      throw std::out_of_range("item id " + std::to_string(it) + " outside 1.." + std::to_string(num_items()));
    }
    return it;
  }

  std::vector<std::uint32_t> counts_;
  std::vector<std::unordered_map<ItemId, std::uint32_t>> pairs_;
  std::vector<std::uint64_t> stamp_;
  std::uint64_t epoch_ = 0;
  std::vector<std::size_t> first_pos_;
  std::vector<ItemId> suffix_;
};

/// Counts over training prefixes. Work is split into contiguous chunks whose
/// ledgers are merged in chunk order; integer counts make the result
/// independent of `threads`.
inline CountLedger count_cooccurrence(const std::vector<std::vector<ItemId>>& train_prefixes, std::size_t num_items,
                                      std::size_t threads = 1) {
  threads = std::max<std::size_t>(1, std::min(threads, train_prefixes.size()));
  if (threads <= 1) {
    CountLedger ledger(num_items);
    for (const auto& p : train_prefixes) ledger.add_sequence(p);
    return ledger;
  }
  std::vector<CountLedger> parts(threads, CountLedger(num_items));
  std::vector<std::thread> workers;
  const std::size_t chunk = (train_prefixes.size() + threads - 1) / threads;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      const std::size_t lo = w * chunk, hi = std::min(train_prefixes.size(), lo + chunk);
      for (std::size_t i = lo; i < hi; ++i) parts[w].add_sequence(train_prefixes[i]);
    });
  }
  for (auto& t : workers) t.join();
  for (std::size_t w = 1; w < threads; ++w) parts[0].merge(parts[w]);
  return std::move(parts[0]);
}

inline CountLedger count_cooccurrence(const DatasetSplit& split, std::size_t threads = 1) {
  return count_cooccurrence(split.train_prefixes(), split.num_items, threads);
}

/// cnt(a,b) / (cnt(a) + cnt(b) - cnt(a,b)); 0 when both items are absent.
inline double jaccard(std::uint32_t count_a, std::uint32_t count_b, std::uint32_t pair) {
  const double den = static_cast<double>(count_a) + count_b - pair;
  return den > 0.0 ? pair / den : 0.0;
}

inline double jaccard(const CountLedger& ledger, ItemId a, ItemId b) {
  return jaccard(ledger.count(a), ledger.count(b), ledger.pair_count(a, b));
}

struct CooccurrenceEntry {
  ItemId item = kPadding;
  float score = 0.0f;

  friend bool operator==(const CooccurrenceEntry&, const CooccurrenceEntry&) = default;
};

/// Per-item top-k successor lists C_i, ranked by Jaccard score.
class CooccurrenceTable {
 public:
  CooccurrenceTable() = default;
  CooccurrenceTable(std::size_t num_items, std::size_t k) : k_(k), lists_(num_items + 1), sorted_(num_items + 1) {}

  std::size_t num_items() const { return lists_.empty() ? 0 : lists_.size() - 1; }
  std::size_t k() const { return k_; }

  const std::vector<CooccurrenceEntry>& successors(ItemId i) const { return lists_.at(i); }

  /// Ids of C_i in ascending order, for exclusion sampling.
  std::span<const ItemId> sorted_ids(ItemId i) const { return sorted_.at(i); }

  void set(ItemId i, std::vector<CooccurrenceEntry> list) {
    if (list.size() > k_) throw std::invalid_argument("co-occurrence list longer than k");
    std::vector<ItemId> ids;
    for (const auto& e : list) ids.push_back(e.item);
    sorted_.at(i) = sorted_unique(std::move(ids));
    lists_.at(i) = std::move(list);
  }

  friend bool operator==(const CooccurrenceTable& a, const CooccurrenceTable& b) {
    return a.k_ == b.k_ && a.lists_ == b.lists_;
  }

 private:
  std::size_t k_ = 0;
  std::vector<std::vector<CooccurrenceEntry>> lists_;
  std::vector<std::vector<ItemId>> sorted_;
};

/// Ranks each item's successors by (score desc, pair count desc, id asc),
/// drops self-pairs and zero scores, and keeps the first k.
inline CooccurrenceTable build_cooccurrence_table(const CountLedger& ledger, std::size_t k) {
  if (k == 0) throw std::invalid_argument("co-occurrence k must be >= 1");
  CooccurrenceTable table(ledger.num_items(), k);
  struct Cand {
    ItemId item;
    double score;
    std::uint32_t pair;
  };
  std::vector<Cand> cands;
  for (ItemId a = 1; a <= ledger.num_items(); ++a) {
    cands.clear();
    for (const auto& [b, c] : ledger.successors(a)) {
      if (b == a) continue;
      const double s = jaccard(ledger.count(a), ledger.count(b), c);
      if (s > 0.0) cands.push_back({b, s, c});
    }
    auto better = [](const Cand& x, const Cand& y) {
      if (x.score != y.score) return x.score > y.score;
      if (x.pair != y.pair) return x.pair > y.pair;
      return x.item < y.item;
    };
    const std::size_t keep = std::min(k, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(), better);
    std::vector<CooccurrenceEntry> list;
    list.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) list.push_back({cands[i].item, static_cast<float>(cands[i].score)});
    table.set(a, std::move(list));
  }
  return table;
}

inline constexpr std::uint32_t kStatsVersion = 1;

/// Binary layout (little-endian): "STDP", version u32, item count u32, k u32,
/// then for items 1..N: length u16 followed by (item u32, score f32) pairs.
inline void write_stats(std::ostream& out, const CooccurrenceTable& table) {
  if (table.k() > 0xffff) throw std::invalid_argument("k too large for the stats format");
  io::put_bytes(out, "STDP");
  io::put_u32(out, kStatsVersion);
  io::put_u32(out, static_cast<std::uint32_t>(table.num_items()));
  io::put_u32(out, static_cast<std::uint32_t>(table.k()));
  for (ItemId i = 1; i <= table.num_items(); ++i) {
    const auto& list = table.successors(i);
    io::put_u16(out, static_cast<std::uint16_t>(list.size()));
    for (const auto& e : list) {
      io::put_u32(out, e.item);
      io::put_f32(out, e.score);
    }
  }
}

inline CooccurrenceTable read_stats(std::istream& in) {
  io::expect_magic(in, "STDP");
  const auto version = io::get_u32(in, "version");
  if (version != kStatsVersion) {
    throw io::FormatError("unsupported stats version " + std::to_string(version));
  }
  const auto n = io::get_u32(in, "item count");
  const auto k = io::get_u32(in, "k");
  CooccurrenceTable table(n, k);
  for (ItemId i = 1; i <= n; ++i) {
    const auto len = io::get_u16(in, "list length");
    if (len > k) throw io::FormatError("list of item " + std::to_string(i) + " exceeds k");
    std::vector<CooccurrenceEntry> list(len);
    for (auto& e : list) {
      e.item = io::get_u32(in, "successor id");
      e.score = io::get_f32(in, "score");
      if (e.item == kPadding || e.item > n) throw io::FormatError("successor id out of range");
    }
    table.set(i, std::move(list));
  }
  io::expect_eof(in);
  return table;
}

inline void save_stats(const CooccurrenceTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write stats file '" + path + "'");
  write_stats(out, table);
  if (!out) throw std::runtime_error("failed writing stats file '" + path + "'");
}

inline CooccurrenceTable load_stats(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open stats file '" + path + "'");
  return read_stats(in);
}

// ---------------------------------------------------------------------------
// Frequent attributes.

struct FrequentAttributeSet {
  std::vector<AttrId> attributes;    // ranked
  std::vector<std::uint32_t> counts;  // matching frequencies, non-increasing
};

/// Running attribute frequencies over a growing prefix; each item occurrence
/// contributes its attribute set once.
class AttributeFrequency {
 public:
  explicit AttributeFrequency(const AttributeCatalog& catalog)
      : catalog_(&catalog), counts_(catalog.num_attributes() + 1, 0) {}

  void add(ItemId item) {
    for (AttrId a : catalog_->attributes(item)) {
      if (counts_[a]++ == 0) touched_.push_back(a);
    }
  }

  FrequentAttributeSet top(std::size_t k) const {
    std::vector<AttrId> ranked = touched_;
    auto better = [&](AttrId x, AttrId y) { return counts_[x] != counts_[y] ? counts_[x] > counts_[y] : x < y; };
    const std::size_t keep = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end(), better);
    ranked.resize(keep);
    FrequentAttributeSet out;
    for (AttrId a : ranked) out.counts.push_back(counts_[a]);
    out.attributes = std::move(ranked);
    return out;
  }

 private:
  const AttributeCatalog* catalog_;
  std::vector<std::uint32_t> counts_;
  std::vector<AttrId> touched_;
};

inline FrequentAttributeSet frequent_attributes(std::span<const ItemId> prefix, const AttributeCatalog& catalog,
                                                std::size_t k) {
  if (prefix.empty()) throw std::invalid_argument("frequent_attributes: empty prefix");
  AttributeFrequency freq(catalog);
  for (ItemId i : prefix) freq.add(i);
  return freq.top(k);
}

}  // namespace stdp
