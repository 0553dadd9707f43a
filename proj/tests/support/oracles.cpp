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


#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <unordered_map>
#include <utility>

namespace annolab::testing {

using postcorrect::kBos;
using postcorrect::kEos;
using postcorrect::kEpsilon;

std::size_t levenshtein(std::u32string_view a, std::u32string_view b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1,
                          d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
  }
  return d[a.size()][b.size()];
}

namespace {

/// Language-model score of a complete line, computed in one pass over the
/// padded string.
double lm_score(const postcorrect::CharLM& lm, std::u32string_view out) {
  char32_t c1 = kBos;
  char32_t c2 = kBos;
  double s = 0.0;
  for (char32_t c : out) {
    s += lm.log_prob(c, c1, c2);
    c1 = c2;
    c2 = c;
  }
  return s + lm.log_prob(kEos, c1, c2);
}

/// Enumerates every path over `obs`. `leaf` receives each complete output as
/// a base-(K+1) integer over the K output symbols in `symbols`, plus its
/// channel score. Channel log-probabilities are looked up once up front, so
/// the walk itself is plain arithmetic.
template <typename Leaf>
void enumerate_paths(const postcorrect::PostCorrector& model, std::u32string_view obs,
                     std::u32string& symbols, Leaf&& leaf) {
  const auto& ch = model.channel();
  const auto& inv = model.inventory();
  struct Emit {
    std::uint64_t digit;  // 0 for a dropped observed char
    double lp;
  };
  symbols.clear();
  auto digit = [&symbols](char32_t c) -> std::uint64_t {
    auto pos = symbols.find(c);
    if (pos == std::u32string::npos) {
      symbols.push_back(c);
      pos = symbols.size() - 1;
    }
    return pos + 1;
  };
  std::vector<std::vector<Emit>> emits(obs.size());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const char32_t o = obs[i];
    emits[i].push_back({digit(o), ch.log_prob(o, o)});
    if (auto it = inv.substitutions.find(o); it != inv.substitutions.end()) {
      for (char32_t t : it->second) emits[i].push_back({digit(t), ch.log_prob(t, o)});
    }
    if (inv.skippable.count(o)) emits[i].push_back({0, ch.log_prob(kEpsilon, o)});
  }
  std::vector<Emit> inserts;
  for (char32_t t : inv.insertable) inserts.push_back({digit(t), ch.log_prob(t, kEpsilon)});

  const std::uint64_t base = symbols.size() + 1;
  const double max_len = 2.0 * static_cast<double>(obs.size()) + 1.0;
  if (max_len * std::log2(static_cast<double>(base)) >= 63.0) {
    throw std::length_error("brute-force oracle input too long for the integer output key");
  }
  auto position = [&](auto& self, std::size_t i, std::uint64_t code, double score) -> void {
    auto consume = [&](std::uint64_t c, double s) {
      for (const auto& e : emits[i]) {
        self(self, i + 1, e.digit == 0 ? c : c * base + e.digit, s + e.lp);
      }
    };
    if (i == obs.size()) {
      leaf(code, score);
      for (const auto& ins : inserts) leaf(code * base + ins.digit, score + ins.lp);
      return;
    }
    consume(code, score);
    for (const auto& ins : inserts) consume(code * base + ins.digit, score + ins.lp);
  };
  position(position, 0, 0, 0.0);
}

void decode_key(std::uint64_t code, const std::u32string& symbols, std::u32string& out) {
  const std::uint64_t base = symbols.size() + 1;
  out.clear();
  for (; code > 0; code /= base) out.push_back(symbols[code % base - 1]);
  std::reverse(out.begin(), out.end());
}

}  // namespace

DecodeOracle brute_force_decode(const postcorrect::PostCorrector& model, std::u32string_view obs,
                                double tie_eps) {
  // Best channel score per distinct output, then one LM pass per output.
  // Small key spaces use a dense table; larger ones a hash map.
  constexpr std::uint64_t kDenseLimit = std::uint64_t{1} << 23;
  constexpr double kUnseen = -std::numeric_limits<double>::infinity();
  std::vector<double> dense;
  std::unordered_map<std::uint64_t, double> sparse;
  std::u32string symbols;
  DecodeOracle result;
  bool use_dense = false;
  enumerate_paths(model, obs, symbols, [&](std::uint64_t out, double score) {
    if (result.paths++ == 0) {
      const double base = static_cast<double>(symbols.size() + 1);
      const double keys = std::pow(base, 2.0 * static_cast<double>(obs.size()) + 1.0);
      use_dense = keys <= static_cast<double>(kDenseLimit);
      if (use_dense) dense.assign(static_cast<std::size_t>(keys), kUnseen);
    }
    if (use_dense) {
      dense[out] = std::max(dense[out], score);
    } else {
      auto [it, inserted] = sparse.try_emplace(out, score);
      if (!inserted) it->second = std::max(it->second, score);
    }
  });
  std::vector<std::pair<std::uint64_t, double>> channel_best;
  if (use_dense) {
    for (std::uint64_t k = 0; k < dense.size(); ++k) {
      if (dense[k] != kUnseen) channel_best.emplace_back(k, dense[k]);
    }
  } else {
    channel_best.assign(sparse.begin(), sparse.end());
  }
  const double lambda = model.config().lm_weight;
  result.best = -std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, std::uint64_t>> scored;
  scored.reserve(channel_best.size());
  std::u32string out;
  for (const auto& [key, ch] : channel_best) {
    decode_key(key, symbols, out);
    const double total = ch + lambda * lm_score(model.lm(), out);
    scored.emplace_back(total, key);
    result.best = std::max(result.best, total);
  }
  for (const auto& [score, key] : scored) {
    if (score >= result.best - tie_eps) {
      decode_key(key, symbols, out);
      result.ties.push_back(out);
    }
  }
  std::sort(result.ties.begin(), result.ties.end());
  return result;
}

double oracle_score(const postcorrect::PostCorrector& model, std::u32string_view obs,
                    std::u32string_view target) {
  double best = -std::numeric_limits<double>::infinity();
  std::u32string symbols;
  std::u32string text;
  enumerate_paths(model, obs, symbols, [&](std::uint64_t out, double score) {
    if (score <= best) return;
    decode_key(out, symbols, text);
    if (text == target) best = score;
  });
  if (!std::isfinite(best)) return best;
  return best + model.config().lm_weight * lm_score(model.lm(), target);
}

std::vector<diarize::WindowLabel> classify_oracle(
    const std::vector<diarize::EmbeddingWindow>& windows,
    const std::vector<diarize::SpeakerProfile>& profiles, double unknown_threshold) {
  auto cos = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      dot += u[i] * v[i];
      nu += u[i] * u[i];
      nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
  };
  std::vector<diarize::WindowLabel> out;
  for (const auto& w : windows) {
    diarize::WindowLabel best{diarize::kUnknownLabel, -2.0};
    std::string best_label;
    for (const auto& p : profiles) {
      const double s = cos(w.vec, p.centroid);
      const bool tied = std::abs(s - best.score) <= diarize::kScoreTieEpsilon;
      if (best_label.empty() || (!tied && s > best.score) || (tied && p.label < best_label)) {
        best = {p.label, s};
        best_label = p.label;
      }
    }
    if (best_label.empty()) best = {diarize::kUnknownLabel, 0.0};
    if (best.score < unknown_threshold) best.label = diarize::kUnknownLabel;
    out.push_back(best);
  }
  return out;
}

std::optional<Job> reference_transition(const Job& job, JobEvent event,
                                        const TransitionArgs& args) {
  Job next = job;
  const auto retry_or_fail = [&](const std::string& reason) {
    next.lease.reset();
    if (job.cancel_requested) {
      next.status = JobStatus::kCancelled;
    } else if (job.attempt < job.max_attempts) {
      next.status = JobStatus::kQueued;
      next.attempt = job.attempt + 1;
    } else {
      next.status = JobStatus::kFailed;
      next.failure_reason = reason;
    }
    return next;
  };
  switch (job.status) {
    case JobStatus::kQueued:
      if (event == JobEvent::kLeaseGranted) {
        if (!args.lease) return std::nullopt;
        next.status = JobStatus::kRunning;
        next.lease = args.lease;
        return next;
      }
      if (event == JobEvent::kCancel) {
        next.status = JobStatus::kCancelled;
        return next;
      }
      return std::nullopt;
    case JobStatus::kRunning:
      switch (event) {
        case JobEvent::kCompletedOk:
          next.status = JobStatus::kSucceeded;
          next.lease.reset();
          return next;
        case JobEvent::kCompletedErr:
          return retry_or_fail(args.reason);
        case JobEvent::kLeaseExpired:
          return retry_or_fail("lease expired");
        case JobEvent::kCompletedCancelled:
          next.status = JobStatus::kCancelled;
          next.lease.reset();
          return next;
        case JobEvent::kCancel:
          next.cancel_requested = true;
          return next;
        default:
          return std::nullopt;
      }
    case JobStatus::kFailed:
    case JobStatus::kCancelled:
      if (event == JobEvent::kRestart) {
        next.status = JobStatus::kQueued;
        next.attempt = 1;
        next.cancel_requested = false;
        next.submitted_at = args.now;
        return next;
      }
      return std::nullopt;
    case JobStatus::kSucceeded:
      return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace annolab::testing
