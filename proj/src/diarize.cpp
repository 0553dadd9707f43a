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

#include "annolab/diarize.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <numbers>
#include <set>

#include "annolab/error.hpp"

namespace annolab::diarize {
namespace {

constexpr double kTimeSlack = 1e-9;

std::uint32_t read_u32(std::string_view b, std::size_t at) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[at])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[at + 3])) << 24;
}

std::uint16_t read_u16(std::string_view b, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) |
                                    static_cast<unsigned char>(b[at + 1]) << 8);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>(v >> 8));
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

}  // namespace

void DiarizeConfig::validate() const {
  if (!(hop_s > 0.0) || hop_s > window_s) {
    fail(ErrorCode::kInvalidArgument, "need 0 < hop_s <= window_s");
  }
  if (smooth_k < 1 || smooth_k % 2 == 0) {
    fail(ErrorCode::kInvalidArgument, "smooth_k must be odd and positive");
  }
  if (unknown_threshold < -1.0 || unknown_threshold > 1.0) {
    fail(ErrorCode::kInvalidArgument, "unknown_threshold must lie in [-1, 1]");
  }
  if (embedding_dim < 1) fail(ErrorCode::kInvalidArgument, "embedding_dim must be positive");
}

DiarizeConfig DiarizeConfig::from_json(const nlohmann::json& params) {
  DiarizeConfig c;
  if (params.is_object()) {
    c.window_s = params.value("window_s", c.window_s);
    c.hop_s = params.value("hop_s", c.hop_s);
    c.unknown_threshold = params.value("unknown_threshold", c.unknown_threshold);
    c.smooth_k = params.value("smooth_k", c.smooth_k);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// WAV

WavAudio parse_wav(std::string_view b) {
  if (b.size() < 12 || b.substr(0, 4) != "RIFF" || b.substr(8, 4) != "WAVE") {
    fail(ErrorCode::kInvalidArgument, "not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  WavAudio audio;
  while (pos + 8 <= b.size()) {
    const std::string_view id = b.substr(pos, 4);
    const std::uint32_t size = read_u32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) fail(ErrorCode::kInvalidArgument, "truncated WAV chunk");
    if (id == "fmt ") {
      if (size < 16) fail(ErrorCode::kInvalidArgument, "short fmt chunk");
      const auto format = read_u16(b, body);
      const auto channels = read_u16(b, body + 2);
      const auto rate = read_u32(b, body + 4);
      const auto bits = read_u16(b, body + 14);
      if (format != 1 || bits != 16) fail(ErrorCode::kInvalidArgument, "WAV must be PCM16");
      if (channels != 1) fail(ErrorCode::kInvalidArgument, "WAV must be mono");
      if (rate < 8000 || rate > 48000) {
        fail(ErrorCode::kInvalidArgument,
             "unsupported sample rate " + std::to_string(rate));
      }
      audio.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) fail(ErrorCode::kInvalidArgument, "data chunk before fmt chunk");
      const std::size_t n = size / 2;
      audio.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto raw = static_cast<std::int16_t>(read_u16(b, body + 2 * i));
        audio.samples[i] = static_cast<double>(raw) / 32768.0;
      }
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) fail(ErrorCode::kInvalidArgument, "missing fmt chunk");
  if (audio.samples.empty()) fail(ErrorCode::kInvalidArgument, "zero-length audio");
  return audio;
}

std::string encode_wav(const WavAudio& audio) {
  std::string out;
  const auto data_bytes = static_cast<std::uint32_t>(2 * audio.samples.size());
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(audio.sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : audio.samples) {
    const double scaled = std::round(std::clamp(s, -1.0, 32767.0 / 32768.0) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding

std::vector<std::pair<double, double>> window_spans(double duration,
                                                    const DiarizeConfig& config) {
  config.validate();
  std::vector<std::pair<double, double>> spans;
  for (std::size_t k = 0;; ++k) {
    const double start = static_cast<double>(k) * config.hop_s;
    if (start >= duration - kTimeSlack) break;
    const double end = start + config.window_s;
    if (end <= duration + kTimeSlack) {
      spans.emplace_back(start, end);
      continue;
    }
    if (duration - start > 0.5 * config.window_s + kTimeSlack) {
      spans.emplace_back(start, duration);
    }
    break;
  }
  return spans;
}

std::vector<EmbeddingWindow> SpectralEmbedder::embed(
    const WavAudio& audio, const DiarizeConfig& config,
    const std::function<void()>& checkpoint) const {
  if (audio.samples.empty()) fail(ErrorCode::kInvalidArgument, "zero-length audio");
  const int rate = audio.sample_rate;
  const auto frame_len = static_cast<std::size_t>(std::lround(0.025 * rate));
  const auto frame_hop = static_cast<std::size_t>(std::lround(0.010 * rate));
  const std::size_t n_fft = std::max<std::size_t>(512, frame_len);
  const std::size_t n_bins = n_fft / 2 + 1;

  Eigen::VectorXd hann(frame_len);
  for (std::size_t i = 0; i < frame_len; ++i) {
    hann(static_cast<Eigen::Index>(i)) =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                             static_cast<double>(frame_len - 1));
  }
  Eigen::VectorXd cos_table(n_fft);
  Eigen::VectorXd sin_table(n_fft);
  for (std::size_t i = 0; i < n_fft; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) /
                         static_cast<double>(n_fft);
    cos_table(static_cast<Eigen::Index>(i)) = std::cos(angle);
    sin_table(static_cast<Eigen::Index>(i)) = std::sin(angle);
  }

  // Triangular mel filterbank over [0, Nyquist]: filters x bins.
  Eigen::MatrixXd filters = Eigen::MatrixXd::Zero(kBands, static_cast<Eigen::Index>(n_bins));
  {
    const double max_mel = hz_to_mel(0.5 * rate);
    std::vector<double> edges(kBands + 2);
    for (int i = 0; i < kBands + 2; ++i) {
      edges[i] = mel_to_hz(max_mel * i / (kBands + 1));
    }
    for (int band = 0; band < kBands; ++band) {
      const double lo = edges[band];
      const double mid = edges[band + 1];
      const double hi = edges[band + 2];
      for (std::size_t bin = 0; bin < n_bins; ++bin) {
        const double f = static_cast<double>(bin) * rate / static_cast<double>(n_fft);
        double w = 0.0;
        if (f > lo && f <= mid) {
          w = (f - lo) / (mid - lo);
        } else if (f > mid && f < hi) {
          w = (hi - f) / (hi - mid);
        }
        filters(band, static_cast<Eigen::Index>(bin)) = w;
      }
    }
  }

  std::vector<double> centers;
  std::vector<Eigen::VectorXd> frames;
  Eigen::VectorXd frame(frame_len);
  Eigen::VectorXd power(n_bins);
  for (std::size_t start = 0; start + frame_len <= audio.samples.size(); start += frame_hop) {
    if (checkpoint && frames.size() % 64 == 0) checkpoint();
    bool silent = true;
    for (std::size_t i = 0; i < frame_len; ++i) {
      const double s = audio.samples[start + i];
      silent = silent && s == 0.0;
      frame(static_cast<Eigen::Index>(i)) = s * hann(static_cast<Eigen::Index>(i));
    }
    centers.push_back((static_cast<double>(start) + 0.5 * static_cast<double>(frame_len)) /
                      rate);
    if (silent) {
      frames.push_back(Eigen::VectorXd::Zero(kBands));
      continue;
    }
    for (std::size_t k = 0; k < n_bins; ++k) {
      double re = 0.0;
      double im = 0.0;
      std::size_t idx = 0;
      for (std::size_t i = 0; i < frame_len; ++i) {
        const double x = frame(static_cast<Eigen::Index>(i));
        re += x * cos_table(static_cast<Eigen::Index>(idx));
        im -= x * sin_table(static_cast<Eigen::Index>(idx));
        idx += k;
        if (idx >= n_fft) idx -= n_fft;
      }
      power(static_cast<Eigen::Index>(k)) = re * re + im * im;
    }
    frames.push_back(((filters * power).array() + 1e-10).log().matrix());
  }

  std::vector<EmbeddingWindow> out;
  for (const auto& [start, end] : window_spans(audio.duration(), config)) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(kBands);
    int count = 0;
    for (std::size_t f = 0; f < frames.size(); ++f) {
      if (centers[f] >= start && centers[f] < end) {
        sum += frames[f];
        ++count;
      }
    }
    if (count == 0) continue;
    Eigen::VectorXd mean = sum / count;
    const double norm = mean.norm();
    if (norm > 0.0) mean /= norm;
    out.push_back({start, end, std::move(mean)});
  }
  return out;
}

std::vector<EmbeddingWindow> embed_windows(const WavAudio& audio, const DiarizeConfig& config,
                                           const std::function<void()>& checkpoint) {
  return SpectralEmbedder{}.embed(audio, config, checkpoint);
}

// ---------------------------------------------------------------------------
// Enrollment and labeling

std::vector<SpeakerProfile> enroll(const std::vector<EmbeddingWindow>& windows,
                                   const std::vector<Annotation>& annotations,
                                   const WarningSink& warn) {
  if (annotations.empty()) fail(ErrorCode::kInvalidArgument, "no enrollment annotations");
  std::map<std::string, std::set<std::size_t>> members;
  std::map<std::string, double> support;
  for (const auto& a : annotations) {
    if (a.label.empty() || a.label == kUnknownLabel) {
      fail(ErrorCode::kInvalidArgument, "invalid speaker label '" + a.label + "'");
    }
    if (!(a.end_s > a.start_s)) {
      fail(ErrorCode::kInvalidArgument, "annotation for " + a.label + " has end <= start");
    }
    bool overlapped = false;
    for (std::size_t w = 0; w < windows.size(); ++w) {
      const double c = windows[w].center();
      if (c >= a.start_s && c < a.end_s) {
        members[a.label].insert(w);
        overlapped = true;
      }
    }
    if (!overlapped) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "annotation for %s [%.3f, %.3f) overlaps no window",
                    a.label.c_str(), a.start_s, a.end_s);
      fail(ErrorCode::kInvalidArgument, buf);
    }
    support[a.label] += a.end_s - a.start_s;
  }

  std::vector<SpeakerProfile> profiles;
  for (const auto& [label, idx] : members) {
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(windows[*idx.begin()].vec.size());
    for (std::size_t w : idx) sum += windows[w].vec;
    const double norm = sum.norm();
    if (norm == 0.0) {
      fail(ErrorCode::kInvalidArgument, "enrollment audio for " + label + " is silent");
    }
    if (warn && support[label] < 2.0) {
      char buf[160];
      std::snprintf(buf, sizeof buf,
                    "speaker %s has only %.2f s of enrollment audio (recommended >= 2 s)",
                    label.c_str(), support[label]);
      warn(buf);
    }
    profiles.push_back({label, sum / norm, support[label]});
  }
  return profiles;
}

std::vector<WindowLabel> classify(const std::vector<EmbeddingWindow>& windows,
                                  const std::vector<SpeakerProfile>& profiles,
                                  double unknown_threshold) {
  if (profiles.empty()) fail(ErrorCode::kInvalidArgument, "no speaker profiles");
  std::vector<const SpeakerProfile*> ordered;
  for (const auto& p : profiles) ordered.push_back(&p);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->label < b->label; });

  std::vector<WindowLabel> out;
  out.reserve(windows.size());
  for (const auto& w : windows) {
    const SpeakerProfile* best = nullptr;
    double best_score = -2.0;
    for (const auto* p : ordered) {
      if (p->centroid.size() != w.vec.size()) {
        fail(ErrorCode::kInvalidArgument, "embedding dimension mismatch");
      }
      const double score = cosine(w.vec, p->centroid);
      // Profiles are visited in label order, so a near-tie keeps the
      // lexicographically smaller label.
      if (score > best_score + kScoreTieEpsilon) {
        best_score = score;
        best = p;
      }
    }
    out.push_back({best_score < unknown_threshold ? kUnknownLabel : best->label, best_score});
  }
  return out;
}

std::vector<std::string> smooth(const std::vector<std::string>& labels, int k) {
  if (k < 1 || k % 2 == 0) fail(ErrorCode::kInvalidArgument, "smooth_k must be odd");
  const auto n = static_cast<std::ptrdiff_t>(labels.size());
  const std::ptrdiff_t half = k / 2;
  std::vector<std::string> out(labels.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    std::map<std::string_view, int> votes;
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - half);
         j <= std::min(n - 1, i + half); ++j) {
      ++votes[labels[static_cast<std::size_t>(j)]];
    }
    int top = 0;
    int top_count = 0;
    std::string_view winner;
    for (const auto& [label, count] : votes) {
      if (count > top) {
        top = count;
        top_count = 1;
        winner = label;
      } else if (count == top) {
        ++top_count;
      }
    }
    out[static_cast<std::size_t>(i)] =
        top_count == 1 ? std::string(winner) : labels[static_cast<std::size_t>(i)];
  }
  return out;
}

std::vector<Segment> merge_segments(const std::vector<EmbeddingWindow>& windows,
                                    const std::vector<std::string>& labels,
                                    const std::vector<double>& scores) {
  if (labels.size() != windows.size() || scores.size() != windows.size()) {
    fail(ErrorCode::kInvalidArgument, "labels and scores must align with windows");
  }
  std::vector<Segment> out;
  std::size_t i = 0;
  while (i < windows.size()) {
    std::size_t j = i;
    double sum = 0.0;
    while (j < windows.size() && labels[j] == labels[i]) sum += scores[j++];
    Segment seg{labels[i], windows[i].start_s, windows[j - 1].end_s,
                sum / static_cast<double>(j - i)};
    // Overlapping half-windows: the boundary belongs to the later run.
    if (j < windows.size()) seg.end_s = std::min(seg.end_s, windows[j].start_s);
    out.push_back(std::move(seg));
    i = j;
  }
  return out;
}

std::vector<Segment> diarize(const std::vector<EmbeddingWindow>& windows,
                             const std::vector<Annotation>& annotations,
                             const DiarizeConfig& config,
                             const std::vector<SpeakerProfile>& known,
                             const WarningSink& warn) {
  config.validate();
  std::vector<SpeakerProfile> profiles;
  if (!annotations.empty()) profiles = enroll(windows, annotations, warn);
  for (const auto& p : known) {
    const bool covered = std::any_of(profiles.begin(), profiles.end(),
                                     [&](const auto& q) { return q.label == p.label; });
    if (!covered) profiles.push_back(p);
  }
  if (profiles.empty()) {
    fail(ErrorCode::kInvalidArgument,
         "diarization needs enrollment annotations or an enrolled model");
  }
  const auto labeled = classify(windows, profiles, config.unknown_threshold);
  std::vector<std::string> labels;
  std::vector<double> scores;
  for (const auto& l : labeled) {
    labels.push_back(l.label);
    scores.push_back(l.score);
  }
  return merge_segments(windows, smooth(labels, config.smooth_k), scores);
}

// ---------------------------------------------------------------------------
// Wire formats

std::vector<EmbeddingWindow> parse_embedding_windows_json(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("dim") || !doc.contains("windows")) {
    fail(ErrorCode::kInvalidArgument, "embedding windows need {dim, windows}");
  }
  const int dim = doc.at("dim").get<int>();
  if (dim < 1) fail(ErrorCode::kInvalidArgument, "dim must be positive");
  std::vector<EmbeddingWindow> out;
  for (const auto& w : doc.at("windows")) {
    EmbeddingWindow win;
    win.start_s = w.at("start").get<double>();
    win.end_s = w.at("end").get<double>();
    if (!(win.end_s > win.start_s)) {
      fail(ErrorCode::kInvalidArgument, "window end must exceed start");
    }
    const auto values = w.at("vec").get<std::vector<double>>();
    if (static_cast<int>(values.size()) != dim) {
      fail(ErrorCode::kInvalidArgument, "window vector length differs from dim");
    }
    win.vec = Eigen::Map<const Eigen::VectorXd>(values.data(), dim);
    if (!win.vec.allFinite()) fail(ErrorCode::kInvalidArgument, "non-finite embedding");
    if (const double n = win.vec.norm(); n > 0.0) win.vec /= n;
    out.push_back(std::move(win));
  }
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].start_s < out[i - 1].start_s) {
      fail(ErrorCode::kInvalidArgument, "windows must be in time order");
    }
  }
  return out;
}

nlohmann::json embedding_windows_to_json(const std::vector<EmbeddingWindow>& windows) {
  nlohmann::json arr = nlohmann::json::array();
  int dim = 0;
  for (const auto& w : windows) {
    dim = static_cast<int>(w.vec.size());
    arr.push_back({{"start", w.start_s},
                   {"end", w.end_s},
                   {"vec", std::vector<double>(w.vec.data(), w.vec.data() + w.vec.size())}});
  }
  return {{"dim", dim}, {"windows", arr}};
}

std::vector<Annotation> parse_annotations_json(const nlohmann::json& doc) {
  if (!doc.is_array()) fail(ErrorCode::kInvalidArgument, "annotations must be an array");
  std::vector<Annotation> out;
  for (const auto& a : doc) {
    if (!a.is_object() || !a.contains("speaker") || !a.contains("start") ||
        !a.contains("end")) {
      fail(ErrorCode::kInvalidArgument, "annotation needs {speaker, start, end}");
    }
    out.push_back({a.at("speaker").get<std::string>(), a.at("start").get<double>(),
                   a.at("end").get<double>()});
  }
  return out;
}

std::string segments_to_json(const std::vector<Segment>& segments) {
  std::string out = "[";
  char buf[64];
  for (std::size_t i = 0; i < segments.size(); ++i) {
    const auto& s = segments[i];
    if (i > 0) out += ",";
    out += "{\"label\":";
    out += nlohmann::json(s.label).dump();
    std::snprintf(buf, sizeof buf, ",\"start\":%.3f,\"end\":%.3f", s.start_s, s.end_s);
    out += buf;
    out += ",\"score\":";
    out += nlohmann::json(std::round(s.mean_score * 1e6) / 1e6).dump();
    out += "}";
  }
  out += "]";
  return out;
}

nlohmann::json profiles_to_json(const std::vector<SpeakerProfile>& profiles) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& p : profiles) {
    arr.push_back({{"label", p.label},
                   {"support_s", p.support_s},
                   {"centroid", std::vector<double>(p.centroid.data(),
                                                    p.centroid.data() + p.centroid.size())}});
  }
  return {{"format", "annolab.diarize/1"}, {"profiles", arr}};
}

std::vector<SpeakerProfile> profiles_from_json(const nlohmann::json& doc) {
  if (doc.value("format", std::string{}) != "annolab.diarize/1") {
    fail(ErrorCode::kInvalidArgument, "not a diarization model artifact");
  }
  std::vector<SpeakerProfile> out;
  for (const auto& p : doc.at("profiles")) {
    const auto c = p.at("centroid").get<std::vector<double>>();
    out.push_back({p.at("label").get<std::string>(),
                   Eigen::Map<const Eigen::VectorXd>(c.data(), static_cast<Eigen::Index>(c.size())),
                   p.at("support_s").get<double>()});
  }
  return out;
}

}  // namespace annolab::diarize
