// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>

#include "stdp/binary_io.hpp"
#include "stdp/corpus.hpp"
#include "stdp/model.hpp"
#include "stdp/optimizer.hpp"

namespace stdp {

/// Resumable trainer bookkeeping stored next to the parameters.
struct TrainingState {
  std::uint64_t pretrain_epochs = 0;
  std::uint64_t finetune_epochs = 0;
  double best_mrr = -1.0;
  std::uint64_t best_epoch = 0;
  std::uint64_t bad_epochs = 0;
  OptimizerState<float> optimizer;

  friend bool operator==(const TrainingState&, const TrainingState&) = default;
};

struct Checkpoint {
  Model<float> model;
  IdMap ids;
  std::optional<TrainingState> state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_array(std::ostream& out, const std::string& name, const Tensor<float>& t) {
  io::put_u16(out, static_cast<std::uint16_t>(name.size()));
  io::put_bytes(out, name);
  io::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) io::put_u32(out, static_cast<std::uint32_t>(d));
  io::put_u64(out, t.size());
  for (float v : t.values()) io::put_f32(out, v);
}

inline Tensor<float> get_array(std::istream& in, const std::string& expected_name) {
  const auto len = io::get_u16(in, "array name length");
  const auto name = io::get_bytes(in, len, "array name");
  if (name != expected_name) throw io::FormatError("expected array '" + expected_name + "', found '" + name + "'");
  const auto rank = io::get_u32(in, "array rank");
  if (rank > kMaxRank) throw io::FormatError("array rank too large");
  Shape shape(rank);
  for (auto& d : shape) d = io::get_u32(in, "array dims");
  const auto n = io::get_u64(in, "array size");
  if (n != shape_numel(shape)) throw io::FormatError("array '" + name + "' size does not match its shape");
  std::vector<float> data(n);
  for (auto& v : data) v = io::get_f32(in, "array payload");
  return Tensor<float>(shape, std::move(data));
}

inline void put_ids(std::ostream& out, const std::vector<std::uint64_t>& ids) {
  io::put_u32(out, static_cast<std::uint32_t>(ids.size() - 1));
  for (std::size_t i = 1; i < ids.size(); ++i) io::put_u64(out, ids[i]);
}

inline std::vector<std::uint64_t> get_ids(std::istream& in) {
  const auto n = io::get_u32(in, "id table size");
  std::vector<std::uint64_t> ids{0};
  for (std::uint32_t i = 0; i < n; ++i) ids.push_back(io::get_u64(in, "id table"));
  return ids;
}

}  // namespace detail

/// Layout (little-endian): "STDPCKPT", version u32; model config (d, layers,
/// heads, max_len u32, dropout f64, item count u32, attribute count u32);
/// id-remap tables (count u32 + raw u64 ids, items then attributes); a state
/// flag u8 with optional trainer counters; then named f32 arrays in
/// parameter order, followed by Adam moments when the state flag is set.
inline void write_checkpoint(std::ostream& out, const Checkpoint& ck) {
  const auto& cfg = ck.model.config();
  io::put_bytes(out, "STDPCKPT");
  io::put_u32(out, kCheckpointVersion);
  io::put_u32(out, static_cast<std::uint32_t>(cfg.d));
  io::put_u32(out, static_cast<std::uint32_t>(cfg.layers));
  io::put_u32(out, static_cast<std::uint32_t>(cfg.heads));
  io::put_u32(out, static_cast<std::uint32_t>(cfg.max_len));
  io::put_f64(out, cfg.dropout);
  io::put_u32(out, static_cast<std::uint32_t>(ck.model.num_items()));
  io::put_u32(out, static_cast<std::uint32_t>(ck.model.num_attributes()));
  detail::put_ids(out, ck.ids.items);
  detail::put_ids(out, ck.ids.attributes);
  out.put(ck.state ? 1 : 0);
  if (ck.state) {
    io::put_u64(out, ck.state->pretrain_epochs);
    io::put_u64(out, ck.state->finetune_epochs);
    io::put_f64(out, ck.state->best_mrr);
    io::put_u64(out, ck.state->best_epoch);
    io::put_u64(out, ck.state->bad_epochs);
    io::put_u64(out, ck.state->optimizer.step);
  }
  const auto& params = ck.model.params();
  for (const auto& p : params) detail::put_array(out, p.name, p.value);
  if (ck.state) {
    const auto& opt = ck.state->optimizer;
    if (opt.m.size() != params.size() || opt.v.size() != params.size()) {
      throw std::invalid_argument("checkpoint: optimizer state does not mirror the parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) detail::put_array(out, "adam.m/" + params[i].name, opt.m[i]);
    for (std::size_t i = 0; i < params.size(); ++i) detail::put_array(out, "adam.v/" + params[i].name, opt.v[i]);
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  io::expect_magic(in, "STDPCKPT");
  const auto version = io::get_u32(in, "version");
  if (version != kCheckpointVersion) throw io::FormatError("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg;
  cfg.d = io::get_u32(in, "config");
  cfg.layers = io::get_u32(in, "config");
  cfg.heads = io::get_u32(in, "config");
  cfg.max_len = io::get_u32(in, "config");
  cfg.dropout = io::get_f64(in, "config");
  const auto n_items = io::get_u32(in, "config");
  const auto n_attrs = io::get_u32(in, "config");
  Checkpoint ck{Model<float>(cfg, n_items, n_attrs), {}, std::nullopt};
  ck.ids.items = detail::get_ids(in);
  ck.ids.attributes = detail::get_ids(in);
  if (ck.ids.items.size() != n_items + 1 || ck.ids.attributes.size() != n_attrs + 1) {
    throw io::FormatError("id-remap table does not match the model vocabulary");
  }
  const auto flag = io::get_bytes(in, 1, "state flag");
  if (flag[0] == 1) {
    TrainingState st;
    st.pretrain_epochs = io::get_u64(in, "state");
    st.finetune_epochs = io::get_u64(in, "state");
    st.best_mrr = io::get_f64(in, "state");
    st.best_epoch = io::get_u64(in, "state");
    st.bad_epochs = io::get_u64(in, "state");
    st.optimizer.step = io::get_u64(in, "state");
    ck.state = std::move(st);
  } else if (flag[0] != 0) {
    throw io::FormatError("bad state flag");
  }
  auto& params = ck.model.params();
  for (auto& p : params) {
    auto t = detail::get_array(in, p.name);
    if (t.shape() != p.value.shape()) throw io::FormatError("array '" + p.name + "' has the wrong shape");
    p.value = std::move(t);
  }
  if (ck.state) {
    for (const auto& p : params) ck.state->optimizer.m.push_back(detail::get_array(in, "adam.m/" + p.name));
    for (const auto& p : params) ck.state->optimizer.v.push_back(detail::get_array(in, "adam.v/" + p.name));
  }
  io::expect_eof(in);
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  write_checkpoint(out, ck);
  if (!out) throw std::runtime_error("failed writing checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace stdp
