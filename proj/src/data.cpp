#include "ghn/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <regex>
#include <sstream>

namespace ghn {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void SyntheticActionSpec::validate() const {
  auto fail = [&](const std::string& what) { throw DataError("synthetic action '" + name + "': " + what); };
  if (!(freq_min > 0.0) || !(freq_max >= freq_min)) fail("frequencies must be positive with min <= max");
  if (!(amp_min >= 0.0) || !(amp_max >= amp_min)) fail("amplitude range must satisfy 0 <= min <= max");
  if (!(coupling >= 0.0 && coupling <= 1.0)) fail("coupling must lie in [0, 1]");
  if (!(noise >= 0.0)) fail("noise level must be >= 0");
}

double SyntheticTruth::clean(std::size_t frame, std::size_t sensor) const {
  const double t = static_cast<double>(frame) * kFrameSeconds;
  return offsets[sensor] + amplitudes[sensor] * std::sin(2.0 * std::numbers::pi * frequency * t + phases[sensor]);
}

std::vector<double> couple_phases(const MotionGraph& graph, const std::vector<double>& base, double coupling) {
  const std::size_t n = graph.size();
  if (base.size() != n) throw DataError("couple_phases: one base phase per vertex required");
  std::vector<double> out = base;
  if (coupling == 0.0) return out;
  if (coupling == 1.0) {
    // Consensus limit: degree-weighted mean per connected component.
    std::vector<int> comp(n, -1);
    int next = 0;
    for (std::size_t s = 0; s < n; ++s) {
      if (comp[s] >= 0) continue;
      std::vector<std::size_t> stack{s}, members;
      comp[s] = next;
      while (!stack.empty()) {
        const std::size_t v = stack.back();
        stack.pop_back();
        members.push_back(v);
        for (std::size_t w : graph.neighbors(v))
          if (comp[w] < 0) {
            comp[w] = next;
            stack.push_back(w);
          }
      }
      double num = 0.0, den = 0.0;
      for (std::size_t v : members) {
        num += static_cast<double>(graph.degree(v)) * base[v];
        den += static_cast<double>(graph.degree(v));
      }
      for (std::size_t v : members) out[v] = den > 0.0 ? num / den : base[v];
      ++next;
    }
    return out;
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
  for (std::size_t v = 0; v < n; ++v) {
    const auto deg = graph.degree(v);
    const auto vi = static_cast<Eigen::Index>(v);
    if (deg == 0) {
      rhs(vi) = base[v];
      continue;
    }
    rhs(vi) = (1.0 - coupling) * base[v];
    for (std::size_t w : graph.neighbors(v)) a(vi, static_cast<Eigen::Index>(w)) -= coupling / static_cast<double>(deg);
  }
  const Eigen::VectorXd phi = a.partialPivLu().solve(rhs);
  for (std::size_t v = 0; v < n; ++v) out[v] = phi(static_cast<Eigen::Index>(v));
  return out;
}

MotionRecording generate_recording(const SyntheticActionSpec& spec, const MotionGraph& graph,
                                   std::uint64_t subject_seed, std::size_t n_frames, SyntheticTruth* truth) {
  spec.validate();
  const std::size_t sensors = graph.size();
  if (sensors == 0) throw DataError("generate_recording: empty graph");
  if (n_frames == 0) throw DataError("generate_recording: n_frames must be >= 1");
  if (!spec.offsets.empty() && spec.offsets.size() != sensors) {
    throw DataError("synthetic action '" + spec.name + "': offsets do not match the sensor count");
  }
  std::mt19937_64 rng(splitmix(subject_seed ^ fnv1a(spec.name)));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SyntheticTruth tr;
  tr.frequency = spec.freq_min + (spec.freq_max - spec.freq_min) * unit(rng);
  tr.amplitudes.resize(sensors);
  tr.base_phases.resize(sensors);
  for (std::size_t c = 0; c < sensors; ++c) {
    tr.amplitudes[c] = spec.amp_min + (spec.amp_max - spec.amp_min) * unit(rng);
    tr.base_phases[c] = 2.0 * std::numbers::pi * unit(rng);
  }
  tr.phases = couple_phases(graph, tr.base_phases, spec.coupling);
  tr.offsets = spec.offsets.empty() ? std::vector<double>(sensors, 0.0) : spec.offsets;

  std::normal_distribution<double> gauss(0.0, 1.0);
  MotionRecording rec;
  rec.action = spec.name;
  rec.frames = Tensor3(1, n_frames, sensors);
  for (std::size_t f = 0; f < n_frames; ++f)
    for (std::size_t c = 0; c < sensors; ++c) {
      const double noise = spec.noise > 0.0 ? spec.noise * gauss(rng) : 0.0;
      rec.frames(0, f, c) = tr.clean(f, c) + noise;
    }
  if (truth != nullptr) *truth = std::move(tr);
  return rec;
}

std::vector<std::string> default_train_actions() {
  return {"directions", "greeting",    "phoning",     "posing",      "purchases",      "sitting",
          "sittingdown", "takingphoto", "waiting",    "walkingdog",  "walkingtogether"};
}

std::vector<std::string> default_test_actions() { return {"walking", "eating", "smoking", "discussion"}; }

std::vector<SyntheticActionSpec> default_synthetic_actions(double coupling, double noise) {
  // Meta-test bands sit between meta-train bands.
  const std::vector<std::pair<std::string, double>> centers{
      {"directions", 0.30},  {"greeting", 0.42},   {"walking", 0.50},      {"phoning", 0.58},
      {"posing", 0.70},      {"eating", 0.78},     {"purchases", 0.86},    {"sitting", 0.98},
      {"smoking", 1.06},     {"sittingdown", 1.14}, {"takingphoto", 1.26}, {"discussion", 1.34},
      {"waiting", 1.42},     {"walkingdog", 1.54}, {"walkingtogether", 1.66}};
  std::vector<SyntheticActionSpec> specs;
  for (std::size_t k = 0; k < centers.size(); ++k) {
    SyntheticActionSpec s;
    s.name = centers[k].first;
    s.freq_min = centers[k].second - 0.04;
    s.freq_max = centers[k].second + 0.04;
    s.amp_min = 0.4 + 0.05 * static_cast<double>(k % 4);
    s.amp_max = s.amp_min + 0.6;
    s.coupling = coupling;
    s.noise = noise;
    specs.push_back(std::move(s));
  }
  return specs;
}

std::size_t window_count(std::size_t frames, std::size_t input_len, std::size_t horizon, std::size_t stride) {
  if (input_len == 0 || horizon == 0 || stride == 0) throw DataError("window_split: T, H and stride must be >= 1");
  if (frames < input_len + horizon) return 0;
  return (frames - input_len - horizon) / stride + 1;
}

std::vector<Window> window_split(const MotionRecording& rec, std::size_t input_len, std::size_t horizon,
                                 std::size_t stride) {
  const std::size_t count = window_count(rec.frame_count(), input_len, horizon, stride);
  const std::size_t sensors = rec.sensor_count();
  std::vector<Window> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    Window w;
    w.start = k * stride;
    w.input = Tensor3(1, input_len, sensors);
    w.target = Tensor3(1, horizon, sensors);
    for (std::size_t t = 0; t < input_len; ++t)
      for (std::size_t c = 0; c < sensors; ++c) w.input(0, t, c) = rec.at(w.start + t, c);
    for (std::size_t t = 0; t < horizon; ++t)
      for (std::size_t c = 0; c < sensors; ++c) w.target(0, t, c) = rec.at(w.start + input_len + t, c);
    out.push_back(std::move(w));
  }
  return out;
}

Normalizer Normalizer::fit(const std::vector<const MotionRecording*>& recordings) {
  if (recordings.empty()) throw DataError("normalize: no recordings");
  const std::size_t sensors = recordings.front()->sensor_count();
  std::vector<double> sum(sensors, 0.0);
  std::size_t frames = 0;
  for (const auto* rec : recordings) {
    if (rec->sensor_count() != sensors) throw DataError("normalize: recordings differ in sensor count");
    for (std::size_t f = 0; f < rec->frame_count(); ++f)
      for (std::size_t c = 0; c < sensors; ++c) sum[c] += rec->at(f, c);
    frames += rec->frame_count();
  }
  Normalizer n;
  n.mean.resize(sensors);
  n.stddev.resize(sensors);
  for (std::size_t c = 0; c < sensors; ++c) n.mean[c] = sum[c] / static_cast<double>(frames);
  std::vector<double> sq(sensors, 0.0);
  for (const auto* rec : recordings)
    for (std::size_t f = 0; f < rec->frame_count(); ++f)
      for (std::size_t c = 0; c < sensors; ++c) {
        const double d = rec->at(f, c) - n.mean[c];
        sq[c] += d * d;
      }
  for (std::size_t c = 0; c < sensors; ++c) {
    const double sd = std::sqrt(sq[c] / static_cast<double>(frames));
    n.stddev[c] = sd > 1e-12 ? sd : 1.0;
  }
  return n;
}

Normalizer Normalizer::identity(std::size_t sensors) {
  return Normalizer{std::vector<double>(sensors, 0.0), std::vector<double>(sensors, 1.0)};
}

MotionRecording Normalizer::apply(const MotionRecording& rec) const {
  if (rec.sensor_count() != mean.size()) throw DataError("normalize: sensor count mismatch");
  MotionRecording out = rec;
  for (std::size_t f = 0; f < rec.frame_count(); ++f)
    for (std::size_t c = 0; c < mean.size(); ++c) out.frames(0, f, c) = (rec.at(f, c) - mean[c]) / stddev[c];
  return out;
}

Tensor3 Normalizer::denormalize(const Tensor3& x, const std::vector<std::size_t>& channels) const {
  if (x.dims().c != channels.size()) throw DataError("denormalize: channel count mismatch");
  Tensor3 out = x;
  for (std::size_t i = 0; i < x.dims().n; ++i)
    for (std::size_t t = 0; t < x.dims().t; ++t)
      for (std::size_t c = 0; c < channels.size(); ++c) {
        const std::size_t h = channels[c];
        out(i, t, c) = x(i, t, c) * stddev.at(h) + mean.at(h);
      }
  return out;
}

Tensor3 Normalizer::normalize(const Tensor3& x, const std::vector<std::size_t>& channels) const {
  if (x.dims().c != channels.size()) throw DataError("normalize: channel count mismatch");
  Tensor3 out = x;
  for (std::size_t i = 0; i < x.dims().n; ++i)
    for (std::size_t t = 0; t < x.dims().t; ++t)
      for (std::size_t c = 0; c < channels.size(); ++c) {
        const std::size_t h = channels[c];
        out(i, t, c) = (x(i, t, c) - mean.at(h)) / stddev.at(h);
      }
  return out;
}

Tensor3 read_expmap_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<double> values;
  std::size_t width = 0, rows = 0, lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::size_t count = 0;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const std::size_t end = std::min(line.find(',', pos), line.size());
      std::string field = line.substr(pos, end - pos);
      const auto a = field.find_first_not_of(" \t");
      const auto b = field.find_last_not_of(" \t");
      field = a == std::string::npos ? std::string() : field.substr(a, b - a + 1);
      double v = 0.0;
      const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
      if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": bad number '" + field + "'");
      }
      values.push_back(v);
      ++count;
      pos = end + 1;
    }
    if (width == 0) width = count;
    if (count != width) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(width) +
                      " columns, found " + std::to_string(count));
    }
    ++rows;
  }
  if (rows == 0) throw DataError(path.string() + ": no rows");
  return Tensor3(Dims{1, rows, width}, std::move(values));
}

void write_expmap_file(const std::filesystem::path& path, const Tensor3& frames) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  for (std::size_t f = 0; f < frames.dims().t; ++f) {
    for (std::size_t c = 0; c < frames.dims().c; ++c) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), frames(0, f, c));
      if (c) out << ',';
      out.write(buf, res.ptr - buf);
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

namespace {

bool parse_sequence_name(const std::string& stem, std::string& action, int& sequence) {
  static const std::regex pattern(R"((.+)_(\d+))");
  std::smatch m;
  if (!std::regex_match(stem, m, pattern)) return false;
  action = m[1];
  sequence = std::stoi(m[2]);
  return true;
}

bool parse_subject(const std::string& name, int& subject) {
  static const std::regex pattern(R"(S(\d+))");
  std::smatch m;
  if (!std::regex_match(name, m, pattern)) return false;
  subject = std::stoi(m[1]);
  return true;
}

}  // namespace

ExpmapDataset load_expmap_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::pair<RecordingKey, fs::path>> files;
  auto consider = [&](const fs::path& p, int subject_hint) {
    if (p.extension() != ".txt") return;
    RecordingKey key;
    std::string stem = p.stem().string();
    if (subject_hint < 0) {
      const auto us = stem.find('_');
      if (us == std::string::npos || !parse_subject(stem.substr(0, us), key.subject)) return;
      stem = stem.substr(us + 1);
    } else {
      key.subject = subject_hint;
    }
    if (!parse_sequence_name(stem, key.action, key.sequence)) return;
    files.emplace_back(std::move(key), p);
  };
  for (const auto& entry : fs::directory_iterator(dir)) {
    int subject = 0;
    if (entry.is_directory() && parse_subject(entry.path().filename().string(), subject)) {
      for (const auto& inner : fs::directory_iterator(entry.path()))
        if (inner.is_regular_file()) consider(inner.path(), subject);
    } else if (entry.is_regular_file()) {
      consider(entry.path(), -1);
    }
  }
  std::sort(files.begin(), files.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  ExpmapDataset out;
  if (files.empty()) return out;
  std::vector<Tensor3> raw;
  for (const auto& [key, path] : files) {
    raw.push_back(read_expmap_file(path));
    if (out.source_width == 0) out.source_width = raw.back().dims().c;
    if (raw.back().dims().c != out.source_width) {
      throw DataError(path.string() + ": " + std::to_string(raw.back().dims().c) + " columns, other files have " +
                      std::to_string(out.source_width));
    }
  }
  for (std::size_t c = 0; c < out.source_width; ++c) {
    bool all_zero = true;
    for (const auto& t : raw) {
      for (std::size_t f = 0; f < t.dims().t && all_zero; ++f) all_zero = t(0, f, c) == 0.0;
      if (!all_zero) break;
    }
    if (!all_zero) out.kept_columns.push_back(c);
  }
  if (out.kept_columns.empty()) throw DataError(dir.string() + ": every column is zero");
  for (std::size_t k = 0; k < files.size(); ++k) {
    const Tensor3& t = raw[k];
    MotionRecording rec;
    rec.action = files[k].first.action;
    rec.subject = files[k].first.subject;
    rec.sequence = files[k].first.sequence;
    rec.frames = Tensor3(1, t.dims().t, out.kept_columns.size());
    for (std::size_t f = 0; f < t.dims().t; ++f)
      for (std::size_t c = 0; c < out.kept_columns.size(); ++c) rec.frames(0, f, c) = t(0, f, out.kept_columns[c]);
    out.recordings.emplace(files[k].first, std::move(rec));
  }
  return out;
}

void MotionCatalog::add(MotionRecording rec) {
  if (sensors_ == 0) sensors_ = rec.sensor_count();
  if (rec.sensor_count() != sensors_) throw DataError("catalog: recordings differ in sensor count");
  by_action_[rec.action].push_back(std::move(rec));
}

std::vector<std::string> MotionCatalog::actions() const {
  std::vector<std::string> out;
  for (const auto& [name, recs] : by_action_) out.push_back(name);
  return out;
}

const std::vector<MotionRecording>& MotionCatalog::recordings(const std::string& action) const {
  const auto it = by_action_.find(action);
  if (it == by_action_.end()) throw DataError("catalog has no recordings for action '" + action + "'");
  return it->second;
}

MotionCatalog MotionCatalog::subset(const std::vector<int>& subjects) const {
  MotionCatalog out;
  for (const auto& [name, recs] : by_action_)
    for (const auto& r : recs)
      if (std::find(subjects.begin(), subjects.end(), r.subject) != subjects.end()) out.add(r);
  return out;
}

MotionCatalog MotionCatalog::normalized(const Normalizer& norm) const {
  MotionCatalog out;
  for (const auto& [name, recs] : by_action_)
    for (const auto& r : recs) out.add(norm.apply(r));
  return out;
}

std::vector<const MotionRecording*> MotionCatalog::all() const {
  std::vector<const MotionRecording*> out;
  for (const auto& [name, recs] : by_action_)
    for (const auto& r : recs) out.push_back(&r);
  return out;
}

MotionCatalog make_synthetic_catalog(const std::vector<SyntheticActionSpec>& specs, const MotionGraph& graph,
                                     const std::vector<int>& subjects, std::size_t sequences,
                                     std::size_t n_frames, std::uint64_t seed) {
  MotionCatalog cat;
  for (const auto& spec : specs)
    for (int subject : subjects)
      for (std::size_t s = 1; s <= sequences; ++s) {
        const std::uint64_t rec_seed = splitmix(seed * 1000003ULL + static_cast<std::uint64_t>(subject) * 101ULL + s);
        MotionRecording rec = generate_recording(spec, graph, rec_seed, n_frames);
        rec.subject = subject;
        rec.sequence = static_cast<int>(s);
        cat.add(std::move(rec));
      }
  return cat;
}

MotionCatalog catalog_from(const ExpmapDataset& data) {
  MotionCatalog cat;
  for (const auto& [key, rec] : data.recordings) cat.add(rec);
  return cat;
}

}  // namespace ghn
