// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stdp/autodiff.hpp"
#include "stdp/corpus.hpp"
#include "stdp/params.hpp"
#include "stdp/rng.hpp"

namespace stdp {

struct ModelConfig {
  std::size_t d = 64;        // hidden size
  std::size_t layers = 2;    // self-attention blocks
  std::size_t heads = 2;
  std::size_t max_len = 50;  // window length
  double dropout = 0.2;

  void validate() const {
    if (d == 0 || heads == 0 || d % heads != 0) {
      throw std::invalid_argument("model: d (" + std::to_string(d) + ") must be a positive multiple of heads (" +
                                  std::to_string(heads) + ")");
    }
    if (max_len == 0) throw std::invalid_argument("model: max_len must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("model: dropout must lie in [0, 1)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Mode { train, eval };

/// Causal self-attention sequence encoder with item and attribute scoring
/// tables. Item embeddings are shared between the input layer and the
/// next-item scorer.
///
/// Block layout (pre-norm):
///   x = x + Dropout(MHA(LN1(x)))
///   x = x + Dropout(FFN(LN2(x)))
///   x = x * mask
/// followed by a final layer norm.
template <class T>
class Model {
 public:
  struct BlockIndex {
    std::size_t ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2;
  };

  Model() = default;

  Model(const ModelConfig& config, std::size_t num_items, std::size_t num_attributes)
      : config_(config), num_items_(num_items), num_attributes_(num_attributes) {
    config_.validate();
    const std::size_t d = config_.d;
    item_emb_ = params_.add("item_emb", {num_items + 1, d});
    pos_emb_ = params_.add("pos_emb", {config_.max_len, d});
    attr_emb_ = params_.add("attr_emb", {num_attributes + 1, d});
    for (std::size_t b = 0; b < config_.layers; ++b) {
      const std::string p = "block" + std::to_string(b) + ".";
      BlockIndex bi{};
      bi.ln1_gain = params_.add(p + "ln1.gain", {d});
      bi.ln1_bias = params_.add(p + "ln1.bias", {d});
      bi.wq = params_.add(p + "attn.wq", {d, d});
      bi.bq = params_.add(p + "attn.bq", {d});
      bi.wk = params_.add(p + "attn.wk", {d, d});
      bi.bk = params_.add(p + "attn.bk", {d});
      bi.wv = params_.add(p + "attn.wv", {d, d});
      bi.bv = params_.add(p + "attn.bv", {d});
      bi.wo = params_.add(p + "attn.wo", {d, d});
      bi.bo = params_.add(p + "attn.bo", {d});
      bi.ln2_gain = params_.add(p + "ln2.gain", {d});
      bi.ln2_bias = params_.add(p + "ln2.bias", {d});
      bi.w1 = params_.add(p + "ffn.w1", {d, d});
      bi.b1 = params_.add(p + "ffn.b1", {d});
      bi.w2 = params_.add(p + "ffn.w2", {d, d});
      bi.b2 = params_.add(p + "ffn.b2", {d});
      blocks_.push_back(bi);
    }
    final_gain_ = params_.add("final_ln.gain", {d});
    final_bias_ = params_.add("final_ln.bias", {d});
    for (auto& p : params_)
      if (p.name.ends_with(".gain")) p.value.fill(T{1});
  }

  /// Truncated normal (std 0.02, cut at two deviations) for embeddings and
  /// projection matrices; biases zero, layer-norm gains one.
  void initialize(Rng& rng) {
    for (auto& p : params_) {
      if (p.name.ends_with(".gain")) {
        p.value.fill(T{1});
      } else if (p.value.rank() == 2) {
        for (auto& v : p.value.storage()) {
          double x;
          do x = rng.normal(0.0, 0.02);
          while (std::abs(x) > 0.04);
          v = static_cast<T>(x);
        }
      } else {
        p.value.fill(T{0});
      }
    }
    zero_padding_rows();
  }

  void zero_padding_rows() {
    const std::size_t d = config_.d;
    std::fill_n(params_[item_emb_].value.data(), d, T{0});
    std::fill_n(params_[attr_emb_].value.data(), d, T{0});
  }

  const ModelConfig& config() const { return config_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_attributes() const { return num_attributes_; }
  ParameterSet<T>& params() { return params_; }
  const ParameterSet<T>& params() const { return params_; }

  std::size_t item_embedding() const { return item_emb_; }
  std::size_t position_embedding() const { return pos_emb_; }
  std::size_t attribute_embedding() const { return attr_emb_; }
  const std::vector<BlockIndex>& blocks() const { return blocks_; }
  std::size_t final_gain() const { return final_gain_; }
  std::size_t final_bias() const { return final_bias_; }

  template <class U>
  Model<U> cast() const {
    Model<U> out(config_, num_items_, num_attributes_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i].value = params_[i].value.template cast<U>();
    return out;
  }

 private:
  ModelConfig config_;
  std::size_t num_items_ = 0;
  std::size_t num_attributes_ = 0;
  ParameterSet<T> params_;
  std::size_t item_emb_ = 0, pos_emb_ = 0, attr_emb_ = 0, final_gain_ = 0, final_bias_ = 0;
  std::vector<BlockIndex> blocks_;
};

/// Dot product of an item's embedding row with a state vector.
template <class T>
T score_item(const Model<T>& model, std::span<const T> state, ItemId item) {
  const auto& emb = model.params()[model.item_embedding()].value;
  const std::size_t d = model.config().d;
  if (state.size() != d) throw ShapeError("score_item: state has " + std::to_string(state.size()) + " features");
  if (item == kPadding || item > model.num_items()) throw std::out_of_range("score_item: invalid item id");
  T acc{0};
  for (std::size_t j = 0; j < d; ++j) acc += emb[item * d + j] * state[j];
  return acc;
}

template <class T>
T score_attribute(const Model<T>& model, std::span<const T> state, AttrId attr) {
  const auto& emb = model.params()[model.attribute_embedding()].value;
  const std::size_t d = model.config().d;
  if (state.size() != d) throw ShapeError("score_attribute: state has " + std::to_string(state.size()) + " features");
  if (attr == 0 || attr > model.num_attributes()) throw std::out_of_range("score_attribute: invalid attribute id");
  T acc{0};
  for (std::size_t j = 0; j < d; ++j) acc += emb[attr * d + j] * state[j];
  return acc;
}

/// A model's parameters bound onto one tape, plus the encoder and scoring
/// graph builders. Binding a mutable model routes gradients into its
/// parameter `grad` slots; binding a const model records no gradients.
template <class T>
class ModelGraph {
 public:
  ModelGraph(ad::Tape<T>& tape, Model<T>& model) : tape_(&tape), model_(&model) {
    for (auto& p : model.params()) vars_.push_back(tape.leaf(p.value, &p.grad));
  }

  ModelGraph(ad::Tape<T>& tape, const Model<T>& model) : tape_(&tape), model_(&model) {
    for (const auto& p : model.params()) vars_.push_back(tape.leaf(p.value, nullptr));
  }

  ad::Tape<T>& tape() const { return *tape_; }
  const Model<T>& model() const { return *model_; }
  ad::Var<T> param(std::size_t i) const { return vars_.at(i); }

  /// Hidden states [B, max_len, d]. Padded positions are zero and masked out
  /// of attention; position t attends to positions <= t only.
  ad::Var<T> encode(std::span<const PaddedWindow> windows, Mode mode, Rng* rng) const {
    using namespace ad;
    const auto& cfg = model_->config();
    const std::size_t B = windows.size(), L = cfg.max_len, d = cfg.d, H = cfg.heads, dh = d / H;
    const bool train = mode == Mode::train && cfg.dropout > 0.0;
    if (train && rng == nullptr) throw std::invalid_argument("encode: training mode needs a generator");
    if (B == 0) throw std::invalid_argument("encode: empty batch");
    std::vector<std::uint32_t> ids(B * L);
    std::vector<std::uint8_t> pad(B * L * d, 0);
    std::vector<std::uint8_t> blocked(B * H * L * L, 0);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& w = windows[b];
      if (w.items.size() != L || w.mask.size() != L) {
        throw ShapeError("encode: window length " + std::to_string(w.items.size()) + " != max_len " +
                         std::to_string(L));
      }
      for (std::size_t t = 0; t < L; ++t) {
        if (w.items[t] > model_->num_items()) throw std::out_of_range("encode: item id out of range");
        ids[b * L + t] = w.items[t];
        if (!w.mask[t]) std::fill_n(pad.begin() + static_cast<std::ptrdiff_t>((b * L + t) * d), d, 1);
      }
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = 0; i < L; ++i)
          for (std::size_t j = 0; j < L; ++j)
            blocked[((b * H + h) * L + i) * L + j] = (j > i || !w.mask[j]) ? 1 : 0;
    }
    const Shape x_shape{B, L, d};
    const Shape attn_shape{B, H, L, L};
    const double rate = cfg.dropout;
    auto drop = [&](Var<T> v) { return train ? dropout(v, rate, *rng, true) : v; };

    Var<T> x = gather(param(model_->item_embedding()), ids, Shape{B, L});
    x = add(x, param(model_->position_embedding()));
    x = drop(x);
    x = masked_fill(x, pad, x_shape, T{0});
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    for (const auto& blk : model_->blocks()) {
      Var<T> h = layer_norm(x, param(blk.ln1_gain), param(blk.ln1_bias));
      auto heads = [&](std::size_t w, std::size_t bias) {
        Var<T> p = add(matmul(h, param(w)), param(bias));
        return permute(reshape(p, {B, L, H, dh}), {0, 2, 1, 3});
      };
      Var<T> q = heads(blk.wq, blk.bq);
      Var<T> k = heads(blk.wk, blk.bk);
      Var<T> v = heads(blk.wv, blk.bv);
      Var<T> scores = scale(matmul(q, transpose(k)), inv_sqrt);
      scores = masked_fill(scores, blocked, attn_shape, static_cast<T>(-1e9));
      Var<T> attn = drop(softmax(scores, -1));
      Var<T> ctx = reshape(permute(matmul(attn, v), {0, 2, 1, 3}), {B, L, d});
      Var<T> out = add(matmul(ctx, param(blk.wo)), param(blk.bo));
      x = add(x, drop(out));
      Var<T> f = layer_norm(x, param(blk.ln2_gain), param(blk.ln2_bias));
      f = drop(relu(add(matmul(f, param(blk.w1)), param(blk.b1))));
      f = add(matmul(f, param(blk.w2)), param(blk.b2));
      x = add(x, drop(f));
      x = masked_fill(x, pad, x_shape, T{0});
    }
    x = layer_norm(x, param(model_->final_gain()), param(model_->final_bias()));
    return masked_fill(x, pad, x_shape, T{0});
  }

  /// Rows of `states` [B, L, d] at flat positions b * L + t -> [M, d].
  ad::Var<T> rows(ad::Var<T> states, std::span<const std::uint32_t> flat_positions) const {
    const auto& s = states.shape();
    ad::Var<T> flat = ad::reshape(states, {s[0] * s[1], s[2]});
    return ad::gather(flat, flat_positions);
  }

  /// Item scores of each row: rows [M, d], items [M] -> [M].
  ad::Var<T> item_scores(ad::Var<T> state_rows, std::span<const ItemId> items) const {
    return ad::dot_rows(state_rows, ad::gather(param(model_->item_embedding()), items));
  }

  ad::Var<T> attribute_scores(ad::Var<T> state_rows, std::span<const AttrId> attrs) const {
    return ad::dot_rows(state_rows, ad::gather(param(model_->attribute_embedding()), attrs));
  }

 private:
  ad::Tape<T>* tape_;
  const Model<T>* model_;
  std::vector<ad::Var<T>> vars_;
};

}  // namespace stdp
