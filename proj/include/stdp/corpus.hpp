// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stdp/rng.hpp"

namespace stdp {

using ItemId = std::uint32_t;
using AttrId = std::uint32_t;

/// Reserved id for padding positions; real items and attributes start at 1.
inline constexpr ItemId kPadding = 0;

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

struct InteractionSequence {
  std::string user;
  std::vector<ItemId> items;  // chronological, no padding ids
};

/// Item -> deduplicated, ascending attribute ids. Row 0 (padding) is empty.
class AttributeCatalog {
 public:
  AttributeCatalog() = default;
  AttributeCatalog(std::size_t num_items, std::size_t num_attributes)
      : sets_(num_items + 1), num_attributes_(num_attributes) {}

  void set(ItemId item, std::vector<AttrId> attrs) {
    std::sort(attrs.begin(), attrs.end());
    attrs.erase(std::unique(attrs.begin(), attrs.end()), attrs.end());
    for (AttrId a : attrs) {
      if (a == 0 || a > num_attributes_) throw std::out_of_range("attribute id " + std::to_string(a) + " out of range");
    }
    sets_.at(item) = std::move(attrs);
  }

  const std::vector<AttrId>& attributes(ItemId item) const { return sets_.at(item); }
  std::size_t num_items() const { return sets_.empty() ? 0 : sets_.size() - 1; }
  std::size_t num_attributes() const { return num_attributes_; }

  friend bool operator==(const AttributeCatalog&, const AttributeCatalog&) = default;

 private:
  std::vector<std::vector<AttrId>> sets_;
  std::size_t num_attributes_ = 0;
};

/// Raw (file) ids indexed by internal id; index 0 is the padding slot.
struct IdMap {
  std::vector<std::uint64_t> items{0};
  std::vector<std::uint64_t> attributes{0};

  friend bool operator==(const IdMap&, const IdMap&) = default;
};

struct Dataset {
  std::vector<InteractionSequence> sequences;
  AttributeCatalog catalog;
  IdMap ids;

  std::size_t num_items() const { return ids.items.size() - 1; }
  std::size_t num_attributes() const { return ids.attributes.size() - 1; }
};

struct RawSequence {
  std::string user;
  std::vector<std::uint64_t> items;
};

struct RawAttributes {
  std::uint64_t item = 0;
  std::vector<std::uint64_t> attributes;
};

namespace detail {

inline std::string_view trim_line(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::uint64_t> parse_ids(std::string_view s, std::size_t line, const char* what) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    while (pos < s.size() && s[pos] == ' ') ++pos;
    if (pos >= s.size()) break;
    std::size_t end = s.find(' ', pos);
    if (end == std::string_view::npos) end = s.size();
    const std::string_view tok = s.substr(pos, end - pos);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw ParseError(line, std::string("invalid ") + what + " '" + std::string(tok) + "'");
    }
    out.push_back(v);
    pos = end;
  }
  return out;
}

}  // namespace detail

/// `<user> TAB <item> (SPACE <item>)*` per line; blank lines are skipped.
inline std::vector<RawSequence> parse_interactions(std::istream& in) {
  std::vector<RawSequence> out;
  std::unordered_set<std::string> users;
  std::string buf;
  std::size_t line = 0;
  while (std::getline(in, buf)) {
    ++line;
    const std::string_view s = detail::trim_line(buf);
    if (s.empty()) continue;
    const auto tab = s.find('\t');
    if (tab == std::string_view::npos) throw ParseError(line, "missing TAB after user token");
    RawSequence seq;
    seq.user = std::string(s.substr(0, tab));
    if (seq.user.empty()) throw ParseError(line, "empty user token");
    seq.items = detail::parse_ids(s.substr(tab + 1), line, "item id");
    if (seq.items.empty()) throw ParseError(line, "sequence has no items");
    if (!users.insert(seq.user).second) throw ParseError(line, "duplicate user '" + seq.user + "'");
    out.push_back(std::move(seq));
  }
  return out;
}

/// `<item> TAB <attr> (SPACE <attr>)*` per line; an item may list no attributes.
inline std::vector<RawAttributes> parse_attributes(std::istream& in) {
  std::vector<RawAttributes> out;
  std::unordered_set<std::uint64_t> seen;
  std::string buf;
  std::size_t line = 0;
  while (std::getline(in, buf)) {
    ++line;
    const std::string_view s = detail::trim_line(buf);
    if (s.empty()) continue;
    const auto tab = s.find('\t');
    if (tab == std::string_view::npos) throw ParseError(line, "missing TAB after item id");
    const auto head = detail::parse_ids(s.substr(0, tab), line, "item id");
    if (head.size() != 1) throw ParseError(line, "expected exactly one item id before TAB");
    RawAttributes rec{head[0], detail::parse_ids(s.substr(tab + 1), line, "attribute id")};
    if (!seen.insert(rec.item).second) throw ParseError(line, "duplicate item " + std::to_string(rec.item));
    out.push_back(std::move(rec));
  }
  return out;
}

/// Remaps raw ids to contiguous 1..N in order of first appearance. Items are
/// numbered from the interaction log; attribute rows for items that never
/// occur in a sequence are ignored.
inline Dataset build_dataset(const std::vector<RawSequence>& raw, const std::vector<RawAttributes>& raw_attrs) {
  Dataset ds;
  std::unordered_map<std::uint64_t, ItemId> item_ids;
  std::unordered_set<std::string> users;
  for (const auto& r : raw) {
    if (!users.insert(r.user).second) throw std::invalid_argument("duplicate user '" + r.user + "'");
    InteractionSequence seq{r.user, {}};
    seq.items.reserve(r.items.size());
    for (auto raw_id : r.items) {
      auto [it, inserted] = item_ids.try_emplace(raw_id, static_cast<ItemId>(ds.ids.items.size()));
      if (inserted) ds.ids.items.push_back(raw_id);
      seq.items.push_back(it->second);
    }
    ds.sequences.push_back(std::move(seq));
  }
  std::unordered_map<std::uint64_t, AttrId> attr_ids;
  std::vector<std::pair<ItemId, std::vector<AttrId>>> rows;
  for (const auto& r : raw_attrs) {
    auto it = item_ids.find(r.item);
    if (it == item_ids.end()) continue;
    std::vector<AttrId> attrs;
    for (auto raw_a : r.attributes) {
      auto [ai, inserted] = attr_ids.try_emplace(raw_a, static_cast<AttrId>(ds.ids.attributes.size()));
      if (inserted) ds.ids.attributes.push_back(raw_a);
      attrs.push_back(ai->second);
    }
    rows.emplace_back(it->second, std::move(attrs));
  }
  ds.catalog = AttributeCatalog(ds.num_items(), ds.num_attributes());
  for (auto& [item, attrs] : rows) ds.catalog.set(item, std::move(attrs));
  return ds;
}

/// Reads the interaction log and (optionally, when `attr_path` is empty) the
/// attribute catalog.
inline Dataset load_interactions(const std::string& path, const std::string& attr_path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interaction file '" + path + "'");
  const auto raw = parse_interactions(in);
  std::vector<RawAttributes> attrs;
  if (!attr_path.empty()) {
    std::ifstream ain(attr_path);
    if (!ain) throw std::runtime_error("cannot open attribute file '" + attr_path + "'");
    attrs = parse_attributes(ain);
  }
  return build_dataset(raw, attrs);
}

inline void write_interactions(std::ostream& out, const std::vector<RawSequence>& seqs) {
  for (const auto& s : seqs) {
    out << s.user << '\t';
    for (std::size_t i = 0; i < s.items.size(); ++i) out << (i ? " " : "") << s.items[i];
    out << '\n';
  }
}

inline void write_attributes(std::ostream& out, const std::vector<RawAttributes>& rows) {
  for (const auto& r : rows) {
    out << r.item << '\t';
    for (std::size_t i = 0; i < r.attributes.size(); ++i) out << (i ? " " : "") << r.attributes[i];
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Leave-one-out split.

struct SplitEntry {
  std::string user;
  std::vector<ItemId> train;  // items 1..n-2
  ItemId valid = kPadding;    // item n-1
  ItemId test = kPadding;     // item n

  std::vector<ItemId> full() const {
    auto out = train;
    out.push_back(valid);
    out.push_back(test);
    return out;
  }
};

struct DatasetSplit {
  std::vector<SplitEntry> entries;
  std::size_t num_items = 0;
  std::size_t dropped = 0;  // sequences shorter than 3 skipped under ShortSequences::drop

  std::size_t size() const { return entries.size(); }

  /// Training prefixes only; the statistics miner consumes exactly this.
  std::vector<std::vector<ItemId>> train_prefixes() const {
    std::vector<std::vector<ItemId>> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.train);
    return out;
  }
};

enum class ShortSequences { reject, drop };

inline DatasetSplit leave_one_out_split(const std::vector<InteractionSequence>& seqs, std::size_t num_items,
                                        ShortSequences policy = ShortSequences::reject) {
  DatasetSplit split;
  split.num_items = num_items;
  for (const auto& s : seqs) {
    const std::size_t n = s.items.size();
    if (n < 3) {
      if (policy == ShortSequences::drop) {
        ++split.dropped;
        continue;
      }
      throw std::invalid_argument("sequence of user '" + s.user + "' has " + std::to_string(n) +
                                  " items; leave-one-out needs at least 3");
    }
    SplitEntry e;
    e.user = s.user;
    e.train.assign(s.items.begin(), s.items.end() - 2);
    e.valid = s.items[n - 2];
    e.test = s.items[n - 1];
    split.entries.push_back(std::move(e));
  }
  return split;
}

// ---------------------------------------------------------------------------
// Windows and batches.

/// Fixed-length, left-padded view of a sequence. Real items are right-aligned
/// so the last slot always holds the most recent item.
struct PaddedWindow {
  std::vector<ItemId> items;
  std::vector<std::uint8_t> mask;
  std::vector<ItemId> targets;  // next-item targets (0 where none)

  std::size_t length() const { return items.size(); }
  std::size_t real_count() const { return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1)); }
  std::size_t first_real() const { return items.size() - real_count(); }
};

inline PaddedWindow pad_window(std::span<const ItemId> items, std::size_t max_len) {
  if (max_len == 0) throw std::invalid_argument("pad_window: max_len must be >= 1");
  PaddedWindow w;
  w.items.assign(max_len, kPadding);
  w.mask.assign(max_len, 0);
  w.targets.assign(max_len, kPadding);
  const std::size_t keep = std::min(items.size(), max_len);
  const auto src = items.subspan(items.size() - keep);
  for (std::size_t i = 0; i < keep; ++i) {
    w.items[max_len - keep + i] = src[i];
    w.mask[max_len - keep + i] = 1;
  }
  return w;
}

/// Input = prefix without its last item, target at each slot = the item that follows.
inline PaddedWindow next_item_window(std::span<const ItemId> prefix, std::size_t max_len) {
  if (prefix.size() < 2) return pad_window({}, max_len);
  PaddedWindow w = pad_window(prefix.first(prefix.size() - 1), max_len);
  const auto targets = prefix.subspan(1);
  const std::size_t keep = std::min(targets.size(), max_len);
  for (std::size_t i = 0; i < keep; ++i) w.targets[max_len - keep + i] = targets[targets.size() - keep + i];
  return w;
}

inline std::vector<ItemId> sorted_unique(std::vector<ItemId> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

/// Uniform draw from {1..universe} minus `exclude` (sorted, unique, in range).
inline ItemId sample_negative(std::span<const ItemId> exclude, std::size_t universe, Rng& rng) {
  if (exclude.size() >= universe) {
    throw std::invalid_argument("sample_negative: exclusion set covers the whole universe of " +
                                std::to_string(universe) + " ids");
  }
  if (exclude.size() * 2 <= universe) {
    for (;;) {
      const auto cand = static_cast<ItemId>(1 + rng.uniform_index(universe));
      if (!std::binary_search(exclude.begin(), exclude.end(), cand)) return cand;
    }
  }
  // Dense exclusion: index directly into the complement.
  std::size_t r = rng.uniform_index(universe - exclude.size());
  ItemId cand = 1;
  for (ItemId ex : exclude) {
    if (cand + r < ex) break;
    r -= ex - cand;
    cand = ex + 1;
  }
  return static_cast<ItemId>(cand + r);
}

enum class WindowKind {
  history,    // the full training prefix (pre-training)
  next_item,  // prefix[:-1] with shifted targets (fine-tuning)
};

struct Batch {
  std::vector<std::size_t> rows;  // indices into DatasetSplit::entries
  std::vector<PaddedWindow> windows;
};

/// One shuffled pass over a split's training prefixes. The final short batch
/// is emitted as-is; batches are immutable once produced.
class BatchStream {
 public:
  BatchStream(const DatasetSplit& split, std::size_t batch_size, std::size_t max_len, WindowKind kind, Rng& rng)
      : split_(&split), batch_size_(batch_size), max_len_(max_len), kind_(kind), order_(split.size()) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng.uniform_index(i)]);
  }

  std::size_t num_batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

  std::optional<Batch> next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    Batch b;
    const std::size_t end = std::min(cursor_ + batch_size_, order_.size());
    for (; cursor_ < end; ++cursor_) {
      const std::size_t row = order_[cursor_];
      const auto& train = split_->entries[row].train;
      b.rows.push_back(row);
      b.windows.push_back(kind_ == WindowKind::history ? pad_window(train, max_len_)
                                                       : next_item_window(train, max_len_));
    }
    return b;
  }

 private:
  const DatasetSplit* split_;
  std::size_t batch_size_;
  std::size_t max_len_;
  WindowKind kind_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

inline BatchStream iter_batches(const DatasetSplit& split, std::size_t batch_size, std::size_t max_len,
                                WindowKind kind, Rng& rng) {
  return BatchStream(split, batch_size, max_len, kind, rng);
}

}  // namespace stdp
