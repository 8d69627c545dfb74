// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stdp/autodiff.hpp"
#include "stdp/checkpoint.hpp"
#include "stdp/corpus.hpp"
#include "stdp/evaluator.hpp"
#include "stdp/model.hpp"
#include "stdp/objectives.hpp"
#include "stdp/optimizer.hpp"
#include "stdp/rng.hpp"
#include "stdp/statistics.hpp"

namespace stdp {

struct TrainConfig {
  AdamConfig adam;
  std::size_t batch_size = 256;
  std::size_t pretrain_epochs = 20;
  std::size_t finetune_epochs = 100;
  std::size_t patience = 10;  // validation epochs without MRR improvement
  std::uint64_t seed = 1;
  LossWeights weights;
  double p_rpc = 0.2;
  double beta = 0.2;
  std::size_t k_cooc = 20;
  std::size_t k_attr = 20;
  EvalOptions eval;

  void validate() const {
    adam.validate();
    weights.validate();
    if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
    if (patience == 0) throw std::invalid_argument("patience must be >= 1");
    if (!(p_rpc >= 0.0 && p_rpc <= 1.0)) throw std::invalid_argument("p_rpc must lie in [0, 1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw std::invalid_argument("beta must lie in [0, 1]");
    if (k_cooc == 0 || k_attr == 0) throw std::invalid_argument("k values must be >= 1");
  }
};

/// Keys for the per-epoch generators: Rng({seed, stage, epoch}).
enum class Stage : std::uint64_t { init = 0, pretrain = 1, finetune = 2 };

struct EpochLog {
  Stage stage = Stage::pretrain;
  std::size_t epoch = 0;  // 1-based
  std::size_t steps = 0;
  // Means over update steps; NaN when the term was not computed.
  double total = std::numeric_limits<double>::quiet_NaN();
  double cip = std::numeric_limits<double>::quiet_NaN();
  double pss = std::numeric_limits<double>::quiet_NaN();
  double iap = std::numeric_limits<double>::quiet_NaN();
  double fap = std::numeric_limits<double>::quiet_NaN();
  double nip = std::numeric_limits<double>::quiet_NaN();
  std::optional<EvalReport> valid;
  bool improved = false;
};

/// Fresh parameters drawn from the init generator of `seed`.
inline Model<float> make_model(const ModelConfig& cfg, std::size_t num_items, std::size_t num_attributes,
                               std::uint64_t seed) {
  Model<float> model(cfg, num_items, num_attributes);
  Rng rng({seed, static_cast<std::uint64_t>(Stage::init)});
  model.initialize(rng);
  return model;
}

namespace detail {

class MeanTracker {
 public:
  void add(double v) {
    if (std::isnan(v)) return;
    sum_ += v;
    ++n_;
  }
  double mean() const { return n_ == 0 ? std::numeric_limits<double>::quiet_NaN() : sum_ / static_cast<double>(n_); }

 private:
  double sum_ = 0.0;
  std::size_t n_ = 0;
};

}  // namespace detail

/// Runs the two training stages over one split. Each epoch draws everything
/// (shuffle, dropout, samples, augmentation) from its own keyed generator,
/// so an epoch's trace depends only on the parameters, optimizer state, and
/// epoch number it starts from.
class Trainer {
 public:
  using Validator = std::function<EvalReport(const Model<float>&)>;
  using EpochCallback = std::function<void(const EpochLog&, const Trainer&)>;

  Trainer(Model<float>& model, const DatasetSplit& split, const AttributeCatalog& catalog,
          const CooccurrenceTable* cooc, TrainConfig config)
      : model_(&model), split_(&split), catalog_(&catalog), cooc_(cooc), cfg_(std::move(config)) {
    cfg_.validate();
    if (split.num_items != model.num_items()) throw std::invalid_argument("trainer: split and model item counts differ");
    state_.optimizer = OptimizerState<float>::like(model.params());
  }

  const TrainConfig& config() const { return cfg_; }
  const Model<float>& model() const { return *model_; }
  const TrainingState& state() const { return state_; }

  /// Continue from a saved state (optimizer moments and epoch counters).
  void restore(TrainingState state) {
    if (state.optimizer.m.size() != model_->params().size()) {
      throw std::invalid_argument("trainer: optimizer state does not match the model");
    }
    state_ = std::move(state);
  }

  Checkpoint checkpoint(const IdMap& ids) const { return {*model_, ids, state_}; }

  void set_validator(Validator v) { validator_ = std::move(v); }

  EpochLog pretrain_epoch() {
    const auto& w = cfg_.weights;
    if ((w.cip > 0.0 || w.pss > 0.0) && cooc_ == nullptr) {
      throw std::invalid_argument("pre-training with CIP or PSS needs a co-occurrence table");
    }
    EpochLog log;
    log.stage = Stage::pretrain;
    log.epoch = ++state_.pretrain_epochs;
    Rng rng({cfg_.seed, static_cast<std::uint64_t>(Stage::pretrain), log.epoch});
    BatchStream stream(*split_, cfg_.batch_size, model_->config().max_len, WindowKind::history, rng);
    if (!w.any()) return log;
    const PretrainTables tables{cooc_, catalog_, cfg_.k_attr};
    detail::MeanTracker total, cip, pss, iap, fap;
    while (auto batch = stream.next()) {
      PairedBatch pb;
      if (w.pss > 0.0) {
        pb = make_paired_batch(batch->windows, *cooc_, cfg_.p_rpc, cfg_.beta, rng);
      } else {
        pb.original = std::move(batch->windows);
      }
      ad::Tape<float> tape;
      ModelGraph<float> g(tape, *model_);
      model_->params().zero_grad();
      const auto loss = pretrain_loss(g, pb, tables, w, Mode::train, rng);
      tape.backward(loss.total);
      adam_step(*model_, state_.optimizer, cfg_.adam);
      ++log.steps;
      total.add(loss.total.value().item());
      cip.add(loss.cip);
      pss.add(loss.pss);
      iap.add(loss.iap);
      fap.add(loss.fap);
    }
    log.total = total.mean();
    log.cip = cip.mean();
    log.pss = pss.mean();
    log.iap = iap.mean();
    log.fap = fap.mean();
    return log;
  }

  /// Runs the remaining pre-training epochs.
  void pretrain(const EpochCallback& on_epoch = {}) {
    while (state_.pretrain_epochs < cfg_.pretrain_epochs) {
      const auto log = pretrain_epoch();
      if (on_epoch) on_epoch(log, *this);
    }
  }

  /// One pass of next-item training followed by validation and the
  /// early-stopping bookkeeping.
  EpochLog finetune_epoch() {
    EpochLog log;
    log.stage = Stage::finetune;
    log.epoch = ++state_.finetune_epochs;
    Rng rng({cfg_.seed, static_cast<std::uint64_t>(Stage::finetune), log.epoch});
    BatchStream stream(*split_, cfg_.batch_size, model_->config().max_len, WindowKind::next_item, rng);
    detail::MeanTracker nip;
    while (auto batch = stream.next()) {
      std::vector<std::vector<ItemId>> excl;
      excl.reserve(batch->rows.size());
      for (std::size_t row : batch->rows) excl.push_back(sorted_unique(split_->entries[row].train));
      ad::Tape<float> tape;
      ModelGraph<float> g(tape, *model_);
      const auto states = g.encode(batch->windows, Mode::train, &rng);
      const auto samples = sample_nip(batch->windows, excl, model_->num_items(), rng);
      if (samples.size() == 0) continue;
      model_->params().zero_grad();
      const auto loss = pairwise_loss(g, states, samples, TargetTable::items);
      tape.backward(loss);
      adam_step(*model_, state_.optimizer, cfg_.adam);
      ++log.steps;
      nip.add(loss.value().item());
    }
    log.nip = nip.mean();
    log.total = log.nip;
    log.valid = validator_ ? validator_(*model_) : evaluate(*model_, *split_, EvalMode::valid, cfg_.eval);
    if (log.valid->mrr > state_.best_mrr) {
      state_.best_mrr = log.valid->mrr;
      state_.best_epoch = log.epoch;
      state_.bad_epochs = 0;
      best_ = snapshot();
      log.improved = true;
    } else {
      ++state_.bad_epochs;
    }
    return log;
  }

  bool should_stop() const {
    return state_.finetune_epochs >= cfg_.finetune_epochs || state_.bad_epochs >= cfg_.patience;
  }

  /// Fine-tunes until the epoch budget or patience runs out, then restores the
  /// best-validation parameters.
  void finetune(const EpochCallback& on_epoch = {}) {
    while (!should_stop()) {
      const auto log = finetune_epoch();
      if (on_epoch) on_epoch(log, *this);
    }
    restore_best();
  }

  /// Copies the best-validation parameters back into the model, if any.
  void restore_best() {
    if (!best_) return;
    auto& params = model_->params();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].value = (*best_)[i];
  }

  /// Installs a best-validation snapshot, e.g. when resuming.
  void set_best(const Model<float>& best) {
    if (best.params().size() != model_->params().size()) throw std::invalid_argument("trainer: best model mismatch");
    best_.emplace();
    for (const auto& p : best.params()) best_->push_back(p.value);
  }

 private:
  std::vector<Tensor<float>> snapshot() const {
    std::vector<Tensor<float>> out;
    for (const auto& p : model_->params()) out.push_back(p.value);
    return out;
  }

  Model<float>* model_;
  const DatasetSplit* split_;
  const AttributeCatalog* catalog_;
  const CooccurrenceTable* cooc_;
  TrainConfig cfg_;
  TrainingState state_;
  Validator validator_;
  std::optional<std::vector<Tensor<float>>> best_;
};

}  // namespace stdp
