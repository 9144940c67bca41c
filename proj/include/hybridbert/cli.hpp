// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: pretrain, eval, bench, gradcheck, inspect.
//
// Configuration is a flat `key = value` file (`#` starts a comment); every
// key can also be given as `--key-name value`, which wins over the file.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "hybridbert/data.hpp"
#include "hybridbert/model.hpp"
#include "hybridbert/train.hpp"

namespace hybridbert {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  CorruptionConfig corruption;
  std::uint64_t seed = 0;  // model init, dropout and corruption streams

  std::string corpus;
  std::string vocab;  // loaded when set, otherwise built and written to out_dir
  std::size_t vocab_size = 512;
  std::string out_dir = "run";
  std::string checkpoint;  // eval / inspect input
  std::string resume;      // pretrain from this checkpoint
  std::size_t checkpoint_every = 0;

  std::string bench_lengths = "128,256,512,1024,2048";
  std::string bench_mixers = "attention,pooling";
  std::size_t bench_reps = 9;
  std::size_t bench_warmup = 3;

  double grad_tolerance = 1e-5;

  /// Keys given explicitly, by file or flag.
  std::set<std::string> explicit_keys;

  RunConfig();
};

/// Every recognised key, in echo order.
const std::vector<std::string>& config_keys();

/// Throws ConfigError for unknown keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& cfg, const std::string& key);

/// Applies a `key = value` file on top of cfg. Errors name `<source>:<line>`.
void apply_config_text(RunConfig& cfg, std::istream& text, const std::string& source);

/// Derives num_layers from the plan unless it was set explicitly, then
/// validates every section. Throws ConfigError.
void finalize_config(RunConfig& cfg);

/// Effective configuration, one `key = value` per line; reading it back gives
/// the same configuration.
std::string format_config(const RunConfig& cfg);

/// Exit codes: 0 success, 1 runtime failure or failed check, 2 bad
/// command line or configuration.
int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace hybridbert
