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

#include "annolab/postcorrect.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "annolab/error.hpp"
#include "annolab/util.hpp"

namespace annolab::postcorrect {
namespace {

constexpr double kTieEpsilon = 1e-9;
constexpr std::size_t kMaxTies = 8;

constexpr std::uint64_t pack(char32_t a, char32_t b) {
  return (static_cast<std::uint64_t>(a) << 21) | static_cast<std::uint64_t>(b);
}

std::vector<std::u32string> split_lines(std::u32string_view text) {
  std::vector<std::u32string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(U'\n', start);
    if (pos == std::u32string_view::npos) {
      out.emplace_back(text.substr(start));
      return out;
    }
    out.emplace_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Alignment and CER

std::vector<EditOp> align(std::u32string_view obs, std::u32string_view truth) {
  const std::size_t n = truth.size();
  const std::size_t m = obs.size();
  std::vector<std::vector<std::size_t>> d(n + 1, std::vector<std::size_t>(m + 1));
  for (std::size_t i = 0; i <= n; ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= m; ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = d[i - 1][j - 1] + (truth[i - 1] == obs[j - 1] ? 0 : 1);
      d[i][j] = std::min({diag, d[i - 1][j] + 1, d[i][j - 1] + 1});
    }
  }

  std::vector<EditOp> ops;
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && truth[i - 1] == obs[j - 1] && d[i - 1][j - 1] == d[i][j]) {
      ops.push_back(EditOp::copy(truth[i - 1]));
      --i;
      --j;
    } else if (i > 0 && j > 0 && truth[i - 1] != obs[j - 1] &&
               d[i - 1][j - 1] + 1 == d[i][j]) {
      ops.push_back(EditOp::substitute(truth[i - 1], obs[j - 1]));
      --i;
      --j;
    } else if (i > 0 && d[i - 1][j] + 1 == d[i][j]) {
      ops.push_back(EditOp::delete_true(truth[i - 1]));
      --i;
    } else {
      ops.push_back(EditOp::insert_obs(obs[j - 1]));
      --j;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

std::size_t edit_distance(std::u32string_view a, std::u32string_view b) {
  std::vector<std::size_t> prev(b.size() + 1);
  std::vector<std::size_t> cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1), prev[j] + 1,
                         cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double cer(std::string_view hyp, std::string_view ref) {
  const auto h = utf8_decode(hyp);
  const auto r = utf8_decode(ref);
  if (r.empty()) {
    if (h.empty()) return 0.0;
    fail(ErrorCode::kInvalidArgument, "CER undefined for an empty reference");
  }
  return static_cast<double>(edit_distance(h, r)) / static_cast<double>(r.size());
}

// ---------------------------------------------------------------------------
// Models

TrainConfig TrainConfig::from_json(const nlohmann::json& params) {
  return from_json(params, TrainConfig{});
}

TrainConfig TrainConfig::from_json(const nlohmann::json& params,
                                   const TrainConfig& defaults) {
  TrainConfig c = defaults;
  if (!params.is_object()) return c;
  c.alpha = params.value("alpha", c.alpha);
  c.lm_alpha = params.value("lm_alpha", c.lm_alpha);
  c.min_count = params.value("min_count", c.min_count);
  c.beam = params.value("beam", c.beam);
  c.lm_weight = params.value("lm_weight", c.lm_weight);
  if (c.alpha <= 0 || c.lm_alpha <= 0) {
    fail(ErrorCode::kInvalidArgument, "smoothing constants must be positive");
  }
  if (c.min_count < 1 || c.beam < 1) {
    fail(ErrorCode::kInvalidArgument, "min_count and beam must be at least 1");
  }
  return c;
}

void ChannelModel::add(char32_t truth, char32_t obs, std::int64_t n) {
  counts_[pack(truth, obs)] += n;
  row_totals_[truth] += n;
  if (truth != kEpsilon) alphabet_.insert(truth);
  if (obs != kEpsilon) alphabet_.insert(obs);
}

std::int64_t ChannelModel::count(char32_t truth, char32_t obs) const {
  auto it = counts_.find(pack(truth, obs));
  return it == counts_.end() ? 0 : it->second;
}

double ChannelModel::prob(char32_t truth, char32_t obs) const {
  auto row = row_totals_.find(truth);
  const double total = row == row_totals_.end() ? 0.0 : static_cast<double>(row->second);
  const double v = static_cast<double>(alphabet_.size() + 1);
  return (static_cast<double>(count(truth, obs)) + alpha_) / (total + alpha_ * v);
}

double ChannelModel::log_prob(char32_t truth, char32_t obs) const {
  return std::log(prob(truth, obs));
}

std::vector<std::tuple<char32_t, char32_t, std::int64_t>> ChannelModel::cells() const {
  std::vector<std::tuple<char32_t, char32_t, std::int64_t>> out;
  for (const auto& [key, n] : counts_) {
    out.emplace_back(static_cast<char32_t>(key >> 21),
                     static_cast<char32_t>(key & 0x1FFFFF), n);
  }
  std::sort(out.begin(), out.end());
  return out;
}

void CharLM::add(char32_t ctx1, char32_t ctx2, char32_t c, std::int64_t n) {
  finalized_ = false;
  auto& ctx = contexts_[pack(ctx1, ctx2)];
  ctx.counts[c] += n;
  ctx.total += n;
  vocab_.insert(c);
}

void CharLM::add_line(std::u32string_view line) {
  char32_t c1 = kBos;
  char32_t c2 = kBos;
  for (char32_t c : line) {
    add(c1, c2, c);
    c1 = c2;
    c2 = c;
  }
  add(c1, c2, kEos);
}

void CharLM::finalize() {
  const double v = static_cast<double>(vocab_.size());
  for (auto& [key, ctx] : contexts_) {
    const double denom = static_cast<double>(ctx.total) + alpha_ * v;
    ctx.log_unseen = std::log(alpha_ / denom);
    ctx.log_probs.clear();
    for (const auto& [c, n] : ctx.counts) {
      ctx.log_probs[c] = std::log((static_cast<double>(n) + alpha_) / denom);
    }
  }
  log_no_context_ = -std::log(v);
  finalized_ = true;
}

double CharLM::prob(char32_t c, char32_t ctx1, char32_t ctx2) const {
  const double v = static_cast<double>(vocab_.size());
  auto it = contexts_.find(pack(ctx1, ctx2));
  if (it == contexts_.end()) return 1.0 / v;
  auto cit = it->second.counts.find(c);
  const double n = cit == it->second.counts.end() ? 0.0 : static_cast<double>(cit->second);
  return (n + alpha_) / (static_cast<double>(it->second.total) + alpha_ * v);
}

double CharLM::log_prob(char32_t c, char32_t ctx1, char32_t ctx2) const {
  if (!finalized_) return std::log(prob(c, ctx1, ctx2));
  auto it = contexts_.find(pack(ctx1, ctx2));
  if (it == contexts_.end()) return log_no_context_;
  auto cit = it->second.log_probs.find(c);
  return cit == it->second.log_probs.end() ? it->second.log_unseen : cit->second;
}

std::vector<std::pair<char32_t, char32_t>> CharLM::contexts() const {
  std::vector<std::pair<char32_t, char32_t>> out;
  for (const auto& [key, _] : contexts_) {
    out.emplace_back(static_cast<char32_t>(key >> 21),
                     static_cast<char32_t>(key & 0x1FFFFF));
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::tuple<char32_t, char32_t, char32_t, std::int64_t>> CharLM::cells() const {
  std::vector<std::tuple<char32_t, char32_t, char32_t, std::int64_t>> out;
  for (const auto& [key, ctx] : contexts_) {
    for (const auto& [c, n] : ctx.counts) {
      out.emplace_back(static_cast<char32_t>(key >> 21),
                       static_cast<char32_t>(key & 0x1FFFFF), c, n);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Training

PostCorrector::PostCorrector(ChannelModel channel, CharLM lm, TrainConfig config)
    : channel_(std::move(channel)), lm_(std::move(lm)), config_(config) {
  lm_.finalize();
  build_inventory();
}

void PostCorrector::build_inventory() {
  inventory_ = Inventory{};
  const std::int64_t m = config_.min_count;
  for (const auto& [t, o, n] : channel_.cells()) {
    if (n < m) continue;
    if (t == kEpsilon && o != kEpsilon) {
      inventory_.skippable.insert(o);
    } else if (o == kEpsilon && t != kEpsilon) {
      inventory_.insertable.push_back(t);
    } else if (t != o && t != kEpsilon) {
      inventory_.substitutions[o].push_back(t);
    }
  }
  std::sort(inventory_.insertable.begin(), inventory_.insertable.end());
  for (auto& [o, cands] : inventory_.substitutions) std::sort(cands.begin(), cands.end());
}

PostCorrector PostCorrector::train(const std::vector<PagePair>& pairs,
                                   const TrainConfig& config, TrainReport* report,
                                   const Checkpoint& checkpoint,
                                   const PostCorrector* base) {
  if (pairs.empty()) fail(ErrorCode::kInvalidArgument, "empty training dataset");
  ChannelModel channel(config.alpha);
  CharLM lm(config.lm_alpha);
  if (base) {
    for (char32_t c : base->channel_.alphabet()) channel.add_symbol(c);
    for (const auto& [t, o, n] : base->channel_.cells()) channel.add(t, o, n);
    for (const auto& [c1, c2, c, n] : base->lm_.cells()) lm.add(c1, c2, c, n);
  }

  for (const auto& pair : pairs) {
    if (checkpoint) checkpoint();
    const auto obs = utf8_decode(pair.obs);
    const auto truth = utf8_decode(pair.truth);
    auto obs_lines = split_lines(obs);
    auto true_lines = split_lines(truth);
    for (const auto& line : true_lines) lm.add_line(line);
    // Whole-page fallback when OCR merged or split lines.
    if (obs_lines.size() != true_lines.size()) {
      obs_lines = {obs};
      true_lines = {truth};
    }
    for (std::size_t i = 0; i < obs_lines.size(); ++i) {
      for (char32_t c : obs_lines[i]) channel.add_symbol(c);
      for (char32_t c : true_lines[i]) channel.add_symbol(c);
      std::int64_t spurious = 0;
      for (const auto& op : align(obs_lines[i], true_lines[i])) {
        channel.add(op.true_char, op.obs_char);
        if (op.type == EditOp::Type::kInsertObs) ++spurious;
      }
      // The epsilon row is a per-gap distribution: a line of n true chars
      // has n + 1 gaps, and those without a spurious char count as (eps, eps).
      const auto gaps = static_cast<std::int64_t>(true_lines[i].size()) + 1;
      if (gaps > spurious) channel.add(kEpsilon, kEpsilon, gaps - spurious);
    }
  }

  PostCorrector model(std::move(channel), std::move(lm), config);
  if (report) {
    report->pages_used = static_cast<int>(pairs.size());
    const auto eval = evaluate(model, pairs);
    report->cer_before = eval.cer_before;
    report->cer_after = eval.cer_after;
  }
  return model;
}

// ---------------------------------------------------------------------------
// Decoding

namespace {

struct State {
  char32_t c1 = kBos;
  char32_t c2 = kBos;
  double score = 0.0;
  /// Equal-score outputs reaching this state, ascending; never empty.
  std::vector<std::u32string> outs;
};

struct Cand {
  double score;
  std::uint32_t parent;
  char32_t first;   // kEpsilon when nothing appended
  char32_t second;  // kEpsilon when nothing appended
};

struct Slot {
  char32_t c1;
  char32_t c2;
  double best;
  std::vector<Cand> cands;
};

void offer(std::unordered_map<std::uint64_t, Slot>& slots, char32_t c1, char32_t c2,
           const Cand& cand) {
  auto [it, inserted] = slots.try_emplace(pack(c1, c2), Slot{c1, c2, cand.score, {cand}});
  if (inserted) return;
  Slot& slot = it->second;
  if (cand.score > slot.best + kTieEpsilon) {
    slot.best = cand.score;
    slot.cands.assign(1, cand);
  } else if (cand.score >= slot.best - kTieEpsilon) {
    slot.cands.push_back(cand);
    if (cand.score > slot.best) {
      slot.best = cand.score;
      std::erase_if(slot.cands, [&](const Cand& c) {
        return c.score < slot.best - kTieEpsilon;
      });
    }
  }
}

std::vector<std::u32string> materialize(const std::vector<State>& beam,
                                        const std::vector<Cand>& cands) {
  std::vector<std::u32string> outs;
  for (const auto& cand : cands) {
    for (const auto& prefix : beam[cand.parent].outs) {
      std::u32string s = prefix;
      if (cand.first != kEpsilon) s.push_back(cand.first);
      if (cand.second != kEpsilon) s.push_back(cand.second);
      outs.push_back(std::move(s));
    }
  }
  std::sort(outs.begin(), outs.end());
  outs.erase(std::unique(outs.begin(), outs.end()), outs.end());
  if (outs.size() > kMaxTies) outs.resize(kMaxTies);
  return outs;
}

}  // namespace

std::u32string PostCorrector::decode(std::u32string_view obs) const {
  const double lambda = config_.lm_weight;
  const auto beam_width = static_cast<std::size_t>(std::max(1, config_.beam));
  const auto& inv = inventory_;

  std::vector<State> beam{State{kBos, kBos, 0.0, {std::u32string{}}}};
  std::unordered_map<std::uint64_t, Slot> slots;
  std::vector<char32_t> candidates;

  for (char32_t o : obs) {
    slots.clear();
    candidates.assign(1, o);
    if (auto it = inv.substitutions.find(o); it != inv.substitutions.end()) {
      candidates.insert(candidates.end(), it->second.begin(), it->second.end());
    }
    const bool skippable = inv.skippable.count(o) > 0;
    const double skip_cost = skippable ? channel_.log_prob(kEpsilon, o) : 0.0;
    std::vector<double> emit_cost(candidates.size());
    for (std::size_t k = 0; k < candidates.size(); ++k) {
      emit_cost[k] = channel_.log_prob(candidates[k], o);
    }

    for (std::uint32_t p = 0; p < beam.size(); ++p) {
      const State& s = beam[p];
      auto consume = [&](double base, char32_t a, char32_t b, char32_t inserted) {
        for (std::size_t k = 0; k < candidates.size(); ++k) {
          const char32_t t = candidates[k];
          const double score = base + emit_cost[k] + lambda * lm_.log_prob(t, a, b);
          offer(slots, b, t, Cand{score, p, inserted, t});
        }
        if (skippable) offer(slots, a, b, Cand{base + skip_cost, p, inserted, kEpsilon});
      };
      consume(s.score, s.c1, s.c2, kEpsilon);
      for (char32_t t : inv.insertable) {
        const double base = s.score + channel_.log_prob(t, kEpsilon) +
                            lambda * lm_.log_prob(t, s.c1, s.c2);
        consume(base, s.c2, t, t);
      }
    }

    // Rank by score first and only build output strings for slots that can
    // survive pruning (ties at the cut are settled on the strings).
    std::vector<const Slot*> ranked;
    ranked.reserve(slots.size());
    for (const auto& [key, slot] : slots) ranked.push_back(&slot);
    std::sort(ranked.begin(), ranked.end(),
              [](const Slot* a, const Slot* b) { return a->best > b->best; });
    if (ranked.size() > beam_width) {
      const double cut = ranked[beam_width - 1]->best - kTieEpsilon;
      std::size_t keep = beam_width;
      while (keep < ranked.size() && ranked[keep]->best >= cut) ++keep;
      ranked.resize(keep);
    }
    std::vector<State> next;
    next.reserve(ranked.size());
    for (const Slot* slot : ranked) {
      next.push_back(State{slot->c1, slot->c2, slot->best, materialize(beam, slot->cands)});
    }
    std::sort(next.begin(), next.end(), [](const State& a, const State& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.outs.front() < b.outs.front();
    });
    if (next.size() > beam_width) next.resize(beam_width);
    beam = std::move(next);
  }

  // Close every hypothesis with the end-of-line term, optionally after one
  // final insertion.
  double best = -std::numeric_limits<double>::infinity();
  std::vector<Cand> finals;
  auto offer_final = [&](const Cand& c) {
    if (c.score > best + kTieEpsilon) {
      best = c.score;
      finals.assign(1, c);
    } else if (c.score >= best - kTieEpsilon) {
      finals.push_back(c);
      if (c.score > best) {
        best = c.score;
        std::erase_if(finals, [&](const Cand& f) { return f.score < best - kTieEpsilon; });
      }
    }
  };
  for (std::uint32_t p = 0; p < beam.size(); ++p) {
    const State& s = beam[p];
    offer_final(Cand{s.score + lambda * lm_.log_prob(kEos, s.c1, s.c2), p, kEpsilon,
                     kEpsilon});
    for (char32_t t : inv.insertable) {
      const double score = s.score + channel_.log_prob(t, kEpsilon) +
                           lambda * lm_.log_prob(t, s.c1, s.c2) +
                           lambda * lm_.log_prob(kEos, s.c2, t);
      offer_final(Cand{score, p, t, kEpsilon});
    }
  }
  return materialize(beam, finals).front();
}

std::string PostCorrector::decode_line(std::string_view obs_line) const {
  return utf8_encode(decode(utf8_decode(obs_line)));
}

std::string PostCorrector::decode_text(std::string_view text,
                                       const Checkpoint& checkpoint) const {
  const auto lines = split_lines(utf8_decode(text));
  std::string out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (checkpoint) checkpoint();
    if (i > 0) out.push_back('\n');
    out += utf8_encode(decode(lines[i]));
  }
  return out;
}

EvalResult evaluate(const PostCorrector& model, const std::vector<PagePair>& pairs) {
  std::size_t dist_before = 0;
  std::size_t dist_after = 0;
  std::size_t ref_len = 0;
  for (const auto& pair : pairs) {
    const auto ref = utf8_decode(pair.truth);
    dist_before += edit_distance(utf8_decode(pair.obs), ref);
    dist_after += edit_distance(utf8_decode(model.decode_text(pair.obs)), ref);
    ref_len += ref.size();
  }
  if (ref_len == 0) {
    fail(ErrorCode::kInvalidArgument, "evaluation needs at least one nonempty reference");
  }
  return {static_cast<double>(dist_before) / static_cast<double>(ref_len),
          static_cast<double>(dist_after) / static_cast<double>(ref_len)};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json symbol_json(char32_t c) {
  if (c == kEpsilon || c == kBos || c == kEos) return nullptr;
  return utf8_encode(c);
}

char32_t symbol_from_json(const nlohmann::json& j, char32_t null_meaning) {
  if (j.is_null()) return null_meaning;
  const auto s = utf8_decode(j.get<std::string>());
  if (s.size() != 1) fail(ErrorCode::kInvalidArgument, "symbol must be one character");
  return s.front();
}

}  // namespace

nlohmann::json PostCorrector::to_json() const {
  nlohmann::json alphabet = nlohmann::json::array();
  for (char32_t c : channel_.alphabet()) alphabet.push_back(utf8_encode(c));
  nlohmann::json channel = nlohmann::json::array();
  for (const auto& [t, o, n] : channel_.cells()) {
    channel.push_back({{"t", symbol_json(t)}, {"o", symbol_json(o)}, {"n", n}});
  }
  nlohmann::json lm = nlohmann::json::array();
  for (const auto& [c1, c2, c, n] : lm_.cells()) {
    lm.push_back({{"ctx", {symbol_json(c1), symbol_json(c2)}}, {"c", symbol_json(c)},
                  {"n", n}});
  }
  return {{"format", "annolab.postcorrect/1"},
          {"alpha", config_.alpha},
          {"lm_alpha", config_.lm_alpha},
          {"min_count", config_.min_count},
          {"beam", config_.beam},
          {"lm_weight", config_.lm_weight},
          {"alphabet", alphabet},
          {"channel", channel},
          {"lm", lm}};
}

PostCorrector PostCorrector::from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string{}) != "annolab.postcorrect/1") {
    fail(ErrorCode::kInvalidArgument, "not a post-correction model artifact");
  }
  TrainConfig config = TrainConfig::from_json(doc);
  ChannelModel channel(config.alpha);
  for (const auto& s : doc.at("alphabet")) channel.add_symbol(symbol_from_json(s, kEpsilon));
  for (const auto& cell : doc.at("channel")) {
    channel.add(symbol_from_json(cell.at("t"), kEpsilon),
                symbol_from_json(cell.at("o"), kEpsilon), cell.at("n").get<std::int64_t>());
  }
  CharLM lm(config.lm_alpha);
  for (const auto& cell : doc.at("lm")) {
    lm.add(symbol_from_json(cell.at("ctx").at(0), kBos),
           symbol_from_json(cell.at("ctx").at(1), kBos),
           symbol_from_json(cell.at("c"), kEos), cell.at("n").get<std::int64_t>());
  }
  return PostCorrector(std::move(channel), std::move(lm), config);
}

std::vector<PagePair> parse_text_pairs_jsonl(std::string_view text) {
  std::vector<PagePair> out;
  const auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::string_view line = lines[i];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    const std::string where = "line " + std::to_string(i + 1);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      fail(ErrorCode::kInvalidArgument, where + ": malformed JSON");
    }
    if (!j.is_object() || !j.contains("source") || !j.contains("target") ||
        !j.at("source").is_string() || !j.at("target").is_string()) {
      fail(ErrorCode::kInvalidArgument,
           where + ": expected an object with string fields source and target");
    }
    out.push_back({j.at("source").get<std::string>(), j.at("target").get<std::string>()});
  }
  return out;
}

}  // namespace annolab::postcorrect
