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

#include <algorithm>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace annolab::diarize {

inline const std::string kUnknownLabel = "unknown";
/// Cosine scores closer than this count as tied in classify.
inline constexpr double kScoreTieEpsilon = 1e-12;

struct DiarizeConfig {
  double window_s = 1.0;
  double hop_s = 0.5;
  /// Best cosine below this labels a window "unknown".
  double unknown_threshold = 0.25;
  int smooth_k = 3;
  int embedding_dim = 16;

  /// Throws Error(kInvalidArgument) unless 0 < hop_s <= window_s and
  /// smooth_k is odd and positive.
  void validate() const;
  static DiarizeConfig from_json(const nlohmann::json& params);
};

struct EmbeddingWindow {
  double start_s = 0.0;
  double end_s = 0.0;
  Eigen::VectorXd vec;

  double center() const { return 0.5 * (start_s + end_s); }
};

struct Annotation {
  std::string label;
  double start_s = 0.0;
  double end_s = 0.0;
};

struct SpeakerProfile {
  std::string label;
  Eigen::VectorXd centroid;
  double support_s = 0.0;
};

struct WindowLabel {
  std::string label;
  double score = 0.0;
};

struct Segment {
  std::string label;
  double start_s = 0.0;
  double end_s = 0.0;
  double mean_score = 0.0;
};

/// Cosine similarity; 0 when either vector is all zeros.
template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& u, const Eigen::MatrixBase<DerivedB>& v) {
  const double nu = u.norm();
  const double nv = v.norm();
  if (nu == 0.0 || nv == 0.0) return 0.0;
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

/// PCM16 mono audio, samples scaled to [-1, 1).
struct WavAudio {
  int sample_rate = 16000;
  std::vector<double> samples;

  double duration() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

/// Accepts RIFF/WAVE, PCM16, mono, 8-48 kHz, nonempty.
WavAudio parse_wav(std::string_view bytes);
std::string encode_wav(const WavAudio& audio);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dim() const = 0;
  /// `checkpoint` is called periodically and may throw to abort.
  virtual std::vector<EmbeddingWindow> embed(const WavAudio& audio, const DiarizeConfig& config,
                                             const std::function<void()>& checkpoint) const = 0;
};

/// Deterministic spectral-band embedder: 25 ms Hann frames every 10 ms,
/// DFT magnitude (length max(512, frame)), 16 mel-spaced triangular band
/// energies, log(energy + 1e-10); each window averages the frames whose
/// centers it contains and is L2-normalized.
class SpectralEmbedder final : public Embedder {
 public:
  static constexpr int kBands = 16;

  int dim() const override { return kBands; }
  std::vector<EmbeddingWindow> embed(const WavAudio& audio, const DiarizeConfig& config,
                                     const std::function<void()>& checkpoint) const override;
};

std::vector<EmbeddingWindow> embed_windows(const WavAudio& audio, const DiarizeConfig& config,
                                           const std::function<void()>& checkpoint = {});

/// Window start times for audio of `duration` seconds. A trailing window
/// that would run past the end is kept (clipped) only if it covers more
/// than half a window.
std::vector<std::pair<double, double>> window_spans(double duration,
                                                    const DiarizeConfig& config);

using WarningSink = std::function<void(const std::string&)>;

/// A window belongs to a label when its center lies inside one of that
/// label's annotated spans. Profiles come back sorted by label.
std::vector<SpeakerProfile> enroll(const std::vector<EmbeddingWindow>& windows,
                                   const std::vector<Annotation>& annotations,
                                   const WarningSink& warn = {});

/// Argmax cosine per window; ties go to the lexicographically smaller
/// label; best score below the threshold yields "unknown".
std::vector<WindowLabel> classify(const std::vector<EmbeddingWindow>& windows,
                                  const std::vector<SpeakerProfile>& profiles,
                                  double unknown_threshold);

/// Single-pass centered majority filter of width k (truncated at the
/// edges); a tied vote keeps the original label.
std::vector<std::string> smooth(const std::vector<std::string>& labels, int k);

std::vector<Segment> merge_segments(const std::vector<EmbeddingWindow>& windows,
                                    const std::vector<std::string>& labels,
                                    const std::vector<double>& scores);

/// enroll -> classify -> smooth -> merge. `known` profiles (e.g. from an
/// enrolled model) fill in labels the annotations do not cover.
std::vector<Segment> diarize(const std::vector<EmbeddingWindow>& windows,
                             const std::vector<Annotation>& annotations,
                             const DiarizeConfig& config,
                             const std::vector<SpeakerProfile>& known = {},
                             const WarningSink& warn = {});

// Wire formats.
std::vector<EmbeddingWindow> parse_embedding_windows_json(const nlohmann::json& doc);
nlohmann::json embedding_windows_to_json(const std::vector<EmbeddingWindow>& windows);
std::vector<Annotation> parse_annotations_json(const nlohmann::json& doc);
/// `[{label, start, end, score}]`, times with exactly three decimals.
std::string segments_to_json(const std::vector<Segment>& segments);
nlohmann::json profiles_to_json(const std::vector<SpeakerProfile>& profiles);
std::vector<SpeakerProfile> profiles_from_json(const nlohmann::json& doc);

}  // namespace annolab::diarize
