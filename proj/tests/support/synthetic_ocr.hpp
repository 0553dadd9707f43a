// Copyright 2026 The AnnoLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "annolab/postcorrect.hpp"

namespace annolab::testing {

/// Synthetic OCR corpus: Zipf-distributed words from a seeded lexicon over a
/// 40-symbol alphabet, corrupted by a fixed character channel.
struct OcrCorpusConfig {
  std::uint64_t seed = 1;
  int page_chars = 2000;
  int line_chars = 60;
  int lexicon_size = 400;
  /// Probability that a character with a confusion partner is substituted.
  double substitution_rate = 0.15;
  double deletion_rate = 0.03;
  double insertion_rate = 0.02;
};

/// The 40 symbols pages are drawn from.
const std::u32string& ocr_alphabet();

class OcrCorpus {
 public:
  explicit OcrCorpus(const OcrCorpusConfig& config);

  /// Clean page of exactly config.page_chars characters (newlines included).
  std::string clean_page();
  /// Passes a clean page through the corruption channel. Newlines are kept.
  std::string corrupt(const std::string& page);
  std::vector<postcorrect::PagePair> pages(int n);

 private:
  OcrCorpusConfig config_;
  std::uint64_t state_;
  std::vector<std::string> lexicon_;
  std::vector<double> cumulative_;

  double uniform();
  std::size_t below(std::size_t n);
};

/// One text_pairs_jsonl line per pair.
std::string to_jsonl(const std::vector<postcorrect::PagePair>& pairs);

}  // namespace annolab::testing
