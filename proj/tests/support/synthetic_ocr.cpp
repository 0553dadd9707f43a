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

#include "synthetic_ocr.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include <json.hpp>

#include "annolab/util.hpp"

namespace annolab::testing {
namespace {

// OCR-style one-way confusions (true -> observed).
const std::map<char32_t, char32_t>& confusions() {
  static const std::map<char32_t, char32_t> kPairs{
      {U'e', U'c'}, {U'l', U'1'}, {U'o', U'0'}, {U'm', U'n'}, {U'h', U'b'}};
  return kPairs;
}

}  // namespace

const std::u32string& ocr_alphabet() {
  static const std::u32string kAlphabet =
      U"abcdefghijklmnopqrstuvwxyz0123456789 .,'";
  return kAlphabet;
}

OcrCorpus::OcrCorpus(const OcrCorpusConfig& config)
    : config_(config), state_(config.seed * 0x9E3779B97F4A7C15ULL + 1) {
  // Letter frequencies skewed toward a few common letters, as in natural text.
  const std::u32string letters = U"etaoinshrdlcumwfgypbvkjxqz";
  std::vector<double> letter_weights;
  for (std::size_t i = 0; i < letters.size(); ++i) {
    letter_weights.push_back(1.0 / (1.0 + 0.25 * static_cast<double>(i)));
  }
  std::discrete_distribution<std::size_t> pick_letter(letter_weights.begin(),
                                                      letter_weights.end());
  std::mt19937_64 rng(config.seed);
  for (int w = 0; w < config.lexicon_size; ++w) {
    std::u32string word;
    if (w % 37 == 36) {
      // An occasional number keeps the digits in play.
      const std::size_t len = 1 + rng() % 4;
      for (std::size_t k = 0; k < len; ++k) word.push_back(U'0' + rng() % 10);
    } else {
      const std::size_t len = 2 + rng() % 7;
      for (std::size_t k = 0; k < len; ++k) word.push_back(letters[pick_letter(rng)]);
    }
    lexicon_.push_back(utf8_encode(word));
  }
  double acc = 0.0;
  for (std::size_t r = 0; r < lexicon_.size(); ++r) {
    acc += 1.0 / static_cast<double>(r + 1);
    cumulative_.push_back(acc);
  }
}

double OcrCorpus::uniform() {
  // splitmix64
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return static_cast<double>(z >> 11) * 0x1.0p-53;
}

std::size_t OcrCorpus::below(std::size_t n) {
  return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

std::string OcrCorpus::clean_page() {
  std::string page;
  std::string line;
  auto total = [&] { return page.size() + line.size(); };
  while (total() < static_cast<std::size_t>(config_.page_chars)) {
    const double u = uniform() * cumulative_.back();
    const auto idx = static_cast<std::size_t>(
        std::lower_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    std::string word = lexicon_[std::min(idx, lexicon_.size() - 1)];
    const double p = uniform();
    if (p < 0.06) {
      word += '.';
    } else if (p < 0.10) {
      word += ',';
    } else if (p < 0.12) {
      word = "'" + word + "'";
    }
    if (!line.empty() &&
        line.size() + 1 + word.size() > static_cast<std::size_t>(config_.line_chars)) {
      page += line;
      page += '\n';
      line.clear();
    }
    if (!line.empty()) line += ' ';
    line += word;
  }
  page += line;
  page.resize(static_cast<std::size_t>(config_.page_chars));
  while (!page.empty() && page.back() == '\n') page.back() = '.';
  return page;
}

std::string OcrCorpus::corrupt(const std::string& page) {
  const auto& alphabet = ocr_alphabet();
  std::u32string out;
  for (char32_t c : utf8_decode(page)) {
    if (c == U'\n') {
      out.push_back(c);
      continue;
    }
    if (uniform() < config_.deletion_rate) continue;
    char32_t emitted = c;
    if (auto it = confusions().find(c); it != confusions().end()) {
      if (uniform() < config_.substitution_rate) emitted = it->second;
    }
    out.push_back(emitted);
    if (uniform() < config_.insertion_rate) out.push_back(alphabet[below(alphabet.size())]);
  }
  return utf8_encode(out);
}

std::vector<postcorrect::PagePair> OcrCorpus::pages(int n) {
  std::vector<postcorrect::PagePair> out;
  for (int i = 0; i < n; ++i) {
    std::string clean = clean_page();
    std::string noisy = corrupt(clean);
    out.push_back({std::move(noisy), std::move(clean)});
  }
  return out;
}

std::string to_jsonl(const std::vector<postcorrect::PagePair>& pairs) {
  std::string out;
  for (const auto& p : pairs) {
    out += nlohmann::json{{"source", p.obs}, {"target", p.truth}}.dump();
    out += '\n';
  }
  return out;
}

}  // namespace annolab::testing
