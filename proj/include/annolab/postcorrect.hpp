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
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

namespace annolab::postcorrect {

/// Symbols outside the Unicode range mark "no character" on either side of
/// the channel and the line boundaries of the language model.
inline constexpr char32_t kEpsilon = 0x110000;
inline constexpr char32_t kBos = 0x110001;
inline constexpr char32_t kEos = 0x110002;

struct EditOp {
  enum class Type { kCopy, kSubstitute, kDeleteTrue, kInsertObs };

  Type type = Type::kCopy;
  /// kEpsilon for kInsertObs.
  char32_t true_char = kEpsilon;
  /// kEpsilon for kDeleteTrue.
  char32_t obs_char = kEpsilon;

  static EditOp copy(char32_t c) { return {Type::kCopy, c, c}; }
  static EditOp substitute(char32_t t, char32_t o) { return {Type::kSubstitute, t, o}; }
  static EditOp delete_true(char32_t t) { return {Type::kDeleteTrue, t, kEpsilon}; }
  static EditOp insert_obs(char32_t o) { return {Type::kInsertObs, kEpsilon, o}; }

  friend bool operator==(const EditOp&, const EditOp&) = default;
};

/// Minimal unit-cost edit script turning `truth` into `obs`. Among equal-cost
/// scripts the backtrace prefers copy, then substitute, then delete_true,
/// then insert_obs at every step.
std::vector<EditOp> align(std::u32string_view obs, std::u32string_view truth);

std::size_t edit_distance(std::u32string_view a, std::u32string_view b);

/// Character error rate: Levenshtein(hyp, ref) / len(ref) over code points.
/// Both empty gives 0; an empty ref with a nonempty hyp is an error.
double cer(std::string_view hyp, std::string_view ref);

struct TrainConfig {
  double alpha = 0.1;
  double lm_alpha = 0.1;
  int min_count = 2;
  int beam = 16;
  double lm_weight = 1.0;

  static TrainConfig from_json(const nlohmann::json& params);
  /// Missing keys fall back to `defaults`.
  static TrainConfig from_json(const nlohmann::json& params, const TrainConfig& defaults);
};

/// P(o | t) = (count[t][o] + alpha) / (sum_o' count[t][o'] + alpha * V),
/// V = |alphabet| + 1, with t and o ranging over alphabet and epsilon.
class ChannelModel {
 public:
  explicit ChannelModel(double alpha = 0.1) : alpha_(alpha) {}

  void add(char32_t truth, char32_t obs, std::int64_t n = 1);
  void add_symbol(char32_t c) { alphabet_.insert(c); }

  std::int64_t count(char32_t truth, char32_t obs) const;
  double prob(char32_t truth, char32_t obs) const;
  double log_prob(char32_t truth, char32_t obs) const;

  const std::set<char32_t>& alphabet() const { return alphabet_; }
  double alpha() const { return alpha_; }
  /// (truth, obs, count) for every nonzero cell.
  std::vector<std::tuple<char32_t, char32_t, std::int64_t>> cells() const;

 private:
  double alpha_;
  std::set<char32_t> alphabet_;
  std::unordered_map<std::uint64_t, std::int64_t> counts_;
  std::unordered_map<char32_t, std::int64_t> row_totals_;
};

/// Character trigram model with add-alpha smoothing. Each line is padded
/// with two kBos and one kEos; the vocabulary is the reference characters
/// plus kEos.
class CharLM {
 public:
  explicit CharLM(double alpha = 0.1) : alpha_(alpha) {}

  void add_line(std::u32string_view line);
  void add(char32_t ctx1, char32_t ctx2, char32_t c, std::int64_t n = 1);

  /// Precomputes log-probabilities; later add() calls undo it.
  void finalize();

  double prob(char32_t c, char32_t ctx1, char32_t ctx2) const;
  double log_prob(char32_t c, char32_t ctx1, char32_t ctx2) const;

  const std::set<char32_t>& vocabulary() const { return vocab_; }
  double alpha() const { return alpha_; }
  std::vector<std::pair<char32_t, char32_t>> contexts() const;
  std::vector<std::tuple<char32_t, char32_t, char32_t, std::int64_t>> cells() const;

 private:
  struct Context {
    std::unordered_map<char32_t, std::int64_t> counts;
    std::int64_t total = 0;
    std::unordered_map<char32_t, double> log_probs;
    double log_unseen = 0.0;
  };

  double alpha_;
  bool finalized_ = false;
  double log_no_context_ = 0.0;
  std::set<char32_t> vocab_{kEos};
  std::unordered_map<std::uint64_t, Context> contexts_;
};

/// Edits the decoder may propose, restricted to those seen at least
/// min_count times in training.
struct Inventory {
  /// Observed char -> candidate true chars (excluding the identity).
  std::map<char32_t, std::vector<char32_t>> substitutions;
  /// Observed chars that may be dropped as spurious.
  std::set<char32_t> skippable;
  /// True chars that may be restored where the OCR dropped them.
  std::vector<char32_t> insertable;

  bool empty() const {
    return substitutions.empty() && skippable.empty() && insertable.empty();
  }
};

struct PagePair {
  std::string obs;
  std::string truth;
};

struct TrainReport {
  int pages_used = 0;
  double cer_before = 0.0;
  double cer_after = 0.0;
};

struct EvalResult {
  double cer_before = 0.0;
  double cer_after = 0.0;
};

/// Called between units of work; throws to abort (used for cancellation).
using Checkpoint = std::function<void()>;

class PostCorrector {
 public:
  PostCorrector() = default;
  PostCorrector(ChannelModel channel, CharLM lm, TrainConfig config);

  /// Throws Error(kInvalidArgument) on an empty dataset. With `base`, its
  /// counts seed the new model, which equals training on the union of the
  /// base model's pages and `pairs`.
  static PostCorrector train(const std::vector<PagePair>& pairs,
                             const TrainConfig& config, TrainReport* report = nullptr,
                             const Checkpoint& checkpoint = {},
                             const PostCorrector* base = nullptr);

  /// Beam-search argmax of
  ///   sum log P_channel(obs piece | true piece) + lm_weight * sum log P_lm
  /// over monotone edit sequences in which no two insertions are adjacent.
  std::u32string decode(std::u32string_view obs_line) const;
  std::string decode_line(std::string_view obs_line) const;
  /// Decodes each '\n'-separated line independently.
  std::string decode_text(std::string_view text, const Checkpoint& checkpoint = {}) const;

  const ChannelModel& channel() const { return channel_; }
  const CharLM& lm() const { return lm_; }
  const Inventory& inventory() const { return inventory_; }
  const TrainConfig& config() const { return config_; }
  void set_beam(int beam) { config_.beam = beam; }

  nlohmann::json to_json() const;
  static PostCorrector from_json(const nlohmann::json& doc);

 private:
  void build_inventory();

  ChannelModel channel_;
  CharLM lm_;
  TrainConfig config_;
  Inventory inventory_;
};

/// Micro-averaged CER of the raw and the decoded observations.
EvalResult evaluate(const PostCorrector& model, const std::vector<PagePair>& pairs);

/// Parses text_pairs_jsonl: one {"source", "target"} object per nonblank
/// line. Errors name the 1-based line number.
std::vector<PagePair> parse_text_pairs_jsonl(std::string_view text);

}  // namespace annolab::postcorrect
