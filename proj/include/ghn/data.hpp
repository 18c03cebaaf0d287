#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghn/graph.hpp"
#include "ghn/tensor.hpp"

namespace ghn {

/// Frames are 40 ms apart (25 fps).
inline constexpr double kFrameSeconds = 0.04;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A frames x sensors sequence, stored as (1, frames, sensors).
struct MotionRecording {
  std::string action;
  int subject = 0;
  int sequence = 1;
  Tensor3 frames;

  std::size_t frame_count() const { return frames.dims().t; }
  std::size_t sensor_count() const { return frames.dims().c; }
  double at(std::size_t frame, std::size_t sensor) const { return frames(0, frame, sensor); }
};

/// Generator settings for one synthetic action.
struct SyntheticActionSpec {
  std::string name;
  double freq_min = 0.5;  // Hz
  double freq_max = 1.0;
  double amp_min = 0.5;
  double amp_max = 1.0;
  /// Weight of the neighbor-phase average in each sensor's phase, in [0, 1].
  double coupling = 0.5;
  /// Standard deviation of the additive Gaussian noise.
  double noise = 0.05;
  /// Per-sensor constant offsets; empty means zero.
  std::vector<double> offsets;

  void validate() const;
};

/// Ground-truth parameters drawn for one synthetic recording.
struct SyntheticTruth {
  double frequency = 0.0;
  std::vector<double> amplitudes;
  std::vector<double> base_phases;
  std::vector<double> phases;
  std::vector<double> offsets;

  /// Noise-free value of `sensor` at `frame`.
  double clean(std::size_t frame, std::size_t sensor) const;
};

/// Sensor c follows offset_c + a_c sin(2 pi f t + phi_c) + noise, where the
/// phases solve phi = (1 - k) phi0 + k * (neighbor mean of phi) for the
/// coupling k. At k = 1 every connected component shares the degree-weighted
/// mean of its base phases. Deterministic in (spec, graph, seed).
MotionRecording generate_recording(const SyntheticActionSpec& spec, const MotionGraph& graph,
                                   std::uint64_t subject_seed, std::size_t n_frames,
                                   SyntheticTruth* truth = nullptr);

/// Coupled phases for base phases phi0 on a graph.
std::vector<double> couple_phases(const MotionGraph& graph, const std::vector<double>& base, double coupling);

/// Eleven meta-train and four meta-test actions with distinct frequency bands.
std::vector<SyntheticActionSpec> default_synthetic_actions(double coupling = 0.5, double noise = 0.05);
std::vector<std::string> default_train_actions();
std::vector<std::string> default_test_actions();

/// Window of T input frames followed by H target frames, both (1, len, S).
struct Window {
  std::size_t start = 0;
  Tensor3 input;
  Tensor3 target;
};

/// Contiguous windows starting at 0, stride, 2*stride, ...; empty when the
/// recording is shorter than T + H.
std::vector<Window> window_split(const MotionRecording& rec, std::size_t input_len, std::size_t horizon,
                                 std::size_t stride);
/// floor((frames - T - H) / stride) + 1, or 0.
std::size_t window_count(std::size_t frames, std::size_t input_len, std::size_t horizon, std::size_t stride);

/// Per-channel z-score statistics.
struct Normalizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  /// Fits on the given recordings. Channels with zero variance get std 1.
  static Normalizer fit(const std::vector<const MotionRecording*>& recordings);
  static Normalizer identity(std::size_t sensors);

  MotionRecording apply(const MotionRecording& rec) const;
  /// Maps normalized values of host channels `channels` back to original
  /// units. `x` is (I, len, channels.size()).
  Tensor3 denormalize(const Tensor3& x, const std::vector<std::size_t>& channels) const;
  Tensor3 normalize(const Tensor3& x, const std::vector<std::size_t>& channels) const;
};

struct RecordingKey {
  std::string action;
  int subject = 0;
  int sequence = 1;

  friend auto operator<=>(const RecordingKey&, const RecordingKey&) = default;
};

struct ExpmapDataset {
  std::map<RecordingKey, MotionRecording> recordings;
  /// Source column kept for each sensor.
  std::vector<std::size_t> kept_columns;
  std::size_t source_width = 0;
};

/// Reads every `S<subject>_<action>_<seq>.txt` file in `dir` and every
/// `<action>_<seq>.txt` file in `S<subject>/` subdirectories. Columns that
/// are zero in every file are dropped.
ExpmapDataset load_expmap_dir(const std::filesystem::path& dir);
/// Parses comma-separated rows; throws DataError with file and line on
/// ragged rows or bad numbers.
Tensor3 read_expmap_file(const std::filesystem::path& path);
/// Writes rows with round-trip precision.
void write_expmap_file(const std::filesystem::path& path, const Tensor3& frames);

/// Immutable set of recordings grouped by action, used as an episode source.
class MotionCatalog {
 public:
  void add(MotionRecording rec);

  std::vector<std::string> actions() const;
  const std::vector<MotionRecording>& recordings(const std::string& action) const;
  bool has(const std::string& action) const { return by_action_.count(action) != 0; }
  std::size_t sensor_count() const { return sensors_; }
  /// Recordings of the given subjects only.
  MotionCatalog subset(const std::vector<int>& subjects) const;
  MotionCatalog normalized(const Normalizer& norm) const;
  std::vector<const MotionRecording*> all() const;

 private:
  std::map<std::string, std::vector<MotionRecording>> by_action_;
  std::size_t sensors_ = 0;
};

/// Synthetic recordings of every spec for every subject.
MotionCatalog make_synthetic_catalog(const std::vector<SyntheticActionSpec>& specs, const MotionGraph& graph,
                                     const std::vector<int>& subjects, std::size_t sequences,
                                     std::size_t n_frames, std::uint64_t seed);
MotionCatalog catalog_from(const ExpmapDataset& data);

}  // namespace ghn
