// Copyright (c) 2026 The hybridbert authors
// SPDX-License-Identifier: Apache-2.0
//
// Writes the synthetic bigram corpus: one sentence per line, blank lines
// between documents.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "hybridbert/data.hpp"

int main(int argc, char** argv) {
  hybridbert::SyntheticCorpusConfig cfg;
  std::string out_path;
  CLI::App app{"Generate the synthetic bigram corpus", "make_corpus"};
  app.add_option("output", out_path, "output file")->required();
  app.add_option("--words", cfg.words, "distinct pseudo-words");
  app.add_option("--documents", cfg.documents, "number of documents");
  app.add_option("--min-sentences", cfg.min_sentences);
  app.add_option("--max-sentences", cfg.max_sentences);
  app.add_option("--min-words", cfg.min_words);
  app.add_option("--max-words", cfg.max_words);
  app.add_option("--successors", cfg.successors, "allowed next words per word");
  app.add_option("--seed", cfg.seed);
  CLI11_PARSE(app, argc, argv);

  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "cannot write " << out_path << '\n';
    return 1;
  }
  try {
    out << hybridbert::generate_bigram_corpus(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
