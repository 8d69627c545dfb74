// Copyright 2026 The STDP Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run-directory stages behind the `stdp` command line.

#pragma once

#include <filesystem>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>

#include "stdp/corpus.hpp"
#include "stdp/evaluator.hpp"
#include "stdp/synthgen.hpp"
#include "stdp/trainer.hpp"

namespace stdp::cli {

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Settings {
  std::string data, attrs, run_dir, out, ckpt, init = "auto", mode = "test";
  std::size_t threads = 1;
  stdp::SynthSpec synth;
  stdp::ModelConfig model;
  stdp::TrainConfig train;
};

struct Corpus {
  stdp::Dataset dataset;
  stdp::DatasetSplit split;
};

/// True when `key` was given on the command line (not from defaults or a
/// config file).
using FlagGiven = std::function<bool(const std::string& key)>;

/// Writes through a temporary file so a failure never leaves a partial file.
void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body);
Corpus load_corpus(const Settings& s);
void refuse_existing(const std::filesystem::path& path);
/// Merges `key = value` lines into run-dir/config.snapshot.
void write_snapshot(const std::filesystem::path& run_dir, const std::string& snapshot);

int run_gen(const Settings& s);
int run_stats(const Settings& s);
void do_pretrain(const Corpus& c, const Settings& s);
void do_finetune(const Corpus& c, const Settings& s, const FlagGiven& given);
stdp::EvalReport do_evaluate(const Corpus& c, const Settings& s, const std::string& ckpt_path, stdp::EvalMode mode);
void print_report(const stdp::EvalReport& r, const std::string& mode);
stdp::EvalMode parse_mode(const std::string& m);

}  // namespace stdp::cli
