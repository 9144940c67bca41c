// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Corpus ingestion, whitespace vocabulary, MLM corruption, sentence-structure
// (SSO) pair sampling and batch collation.
//
// Corpus format: UTF-8 text, one sentence per line, blank lines between
// documents. Vocab file: one non-reserved token per line, the first line
// holding id 5.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "hybridbert/ops.hpp"
#include "hybridbert/random.hpp"

namespace hybridbert {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kClsId = 1;
inline constexpr std::int32_t kSepId = 2;
inline constexpr std::int32_t kMaskId = 3;
inline constexpr std::int32_t kUnkId = 4;
inline constexpr std::int32_t kNumReserved = 5;

class Vocab {
 public:
  /// Ranks whitespace tokens by frequency (ties: first occurrence) and keeps
  /// the top max_size - 5 after the reserved ids.
  static Vocab build(std::istream& corpus, std::size_t max_size);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const noexcept { return tokens_.size(); }
  /// UNK for anything not in the vocabulary, reserved names included.
  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  std::vector<std::int32_t> encode(std::string_view line) const;

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct CorruptionConfig {
  double mask_rate = 0.15;
  double frac_mask = 0.8;
  double frac_random = 0.1;
  double frac_keep = 0.1;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on out-of-range rates.
  void validate() const;
};

struct CorruptedSequence {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> labels;
  Mask mask_positions;
};

/// Selects each non-special position with probability mask_rate, then
/// replaces it with [MASK], a random non-reserved id, or keeps it.
CorruptedSequence corrupt_mlm(std::span<const std::int32_t> ids, const CorruptionConfig& cfg,
                              std::size_t vocab_size, Rng& rng);

struct Document {
  std::vector<std::vector<std::int32_t>> sentences;
};

class DocStore {
 public:
  DocStore() = default;
  explicit DocStore(std::vector<Document> docs);

  static DocStore read(std::istream& text, const Vocab& vocab);
  static DocStore load(const std::filesystem::path& path, const Vocab& vocab);

  const std::vector<Document>& documents() const noexcept { return docs_; }
  std::size_t size() const noexcept { return docs_.size(); }
  /// Documents holding at least two sentences.
  const std::vector<std::size_t>& pair_documents() const noexcept { return pair_docs_; }

  /// Moves every `stride`-th document (starting at stride-1) into a second store.
  std::pair<DocStore, DocStore> split_every(std::size_t stride) const;

 private:
  std::vector<Document> docs_;
  std::vector<std::size_t> pair_docs_;
};

enum class SsoLabel : std::int32_t { kFollows = 0, kPrecedes = 1, kOtherDocument = 2 };

struct SsoPair {
  std::vector<std::int32_t> first;
  std::vector<std::int32_t> second;
  SsoLabel label;
};

/// Class drawn uniformly: (s_i, s_i+1), (s_i+1, s_i) or (s_i, sentence of another document).
SsoPair make_sso_example(const DocStore& docs, Rng& rng);

struct PackedExample {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> segment_ids;
  std::int32_t sso_label = 0;
};

/// [CLS] A [SEP] B [SEP], truncating the longer segment first to fit max_len.
PackedExample pack_pair(const SsoPair& pair, std::size_t max_len);

struct TokenBatch {
  std::size_t batch_size = 0;
  std::size_t seq_len = 0;
  std::vector<std::int32_t> input_ids;
  std::vector<std::int32_t> segment_ids;
  Mask padding_mask;  // 1 at padded positions
  std::vector<std::int32_t> mlm_labels;
  Mask mask_positions;  // 1 exactly where input_ids == [MASK]
  std::vector<std::int32_t> sso_labels;

  Mask valid_mask() const;
  bool any_masked() const;
};

/// Corrupts each example and right-pads to the longest one. Throws DataError
/// when an example exceeds max_len.
TokenBatch collate_batch(std::span<const PackedExample> examples, std::size_t max_len,
                         const CorruptionConfig& cfg, std::size_t vocab_size, Rng& rng);

/// Deterministic batch stream: batch i depends only on (seed, i).
class BatchSource {
 public:
  BatchSource(const DocStore& docs, std::size_t vocab_size, std::size_t batch_size,
              std::size_t max_len, CorruptionConfig cfg);

  TokenBatch batch(std::uint64_t index) const;

 private:
  const DocStore* docs_;
  std::size_t vocab_size_;
  std::size_t batch_size_;
  std::size_t max_len_;
  CorruptionConfig cfg_;
};

struct SyntheticCorpusConfig {
  std::size_t words = 400;
  std::size_t documents = 900;
  std::size_t min_sentences = 4;
  std::size_t max_sentences = 8;
  std::size_t min_words = 4;
  std::size_t max_words = 8;
  std::size_t successors = 3;
  std::uint64_t seed = 20240521;
};

/// Text from a sparse bigram chain over pseudo-words. The chain continues
/// across sentence boundaries inside a document, so sentence order is
/// recoverable from the text.
std::string generate_bigram_corpus(const SyntheticCorpusConfig& cfg);

}  // namespace hybridbert
