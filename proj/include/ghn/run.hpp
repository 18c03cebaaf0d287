#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghn/train.hpp"

namespace ghn {

/// Invalid run configuration; the message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Everything that determines a run. Serialised as a flat JSON object whose
/// keys match the command-line flags with '_' in place of '-'.
struct RunConfig {
  // data
  std::string data_dir;  // empty: synthetic recordings
  std::string graph;     // empty: bundled skeleton graph
  double coupling = 0.5;
  double noise = 0.05;
  std::size_t sequences = 2;
  std::size_t frames = 400;
  std::uint64_t data_seed = 7;
  std::vector<int> train_subjects{1, 6, 7, 8, 9, 11};
  std::vector<int> test_subjects{5};

  // model
  std::string model = "graphhetnet";
  std::size_t hidden = 64;
  std::size_t horizon = 10;
  std::size_t ds_inner_depth = 2;
  std::size_t ds_outer_depth = 1;
  std::size_t gcn_layers = 2;
  std::size_t gru_depth = 2;
  bool residual = false;
  std::size_t pad_width = 54;

  // tasks
  std::string mode = "heterogeneous";
  double p = 0.64;
  std::size_t min_vertices = 1;
  std::size_t max_vertices = 0;
  std::size_t support = 5;
  std::size_t query = 2;
  std::size_t input_len = 50;
  std::size_t stride = 1;

  // training
  double lr = 1e-4;
  std::size_t epochs = 500;
  std::size_t batches_per_epoch = 50;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  std::vector<std::string> train_actions = default_train_actions();
  std::vector<std::string> validation_actions;
  std::size_t validation_tasks = 5;

  // evaluation
  std::vector<std::string> test_actions = default_test_actions();
  std::size_t n_tasks = 500;
  std::uint64_t eval_seed = 12345;

  void validate() const;
  ModelConfig model_config() const;
  TrainConfig train_config() const;
  SamplerConfig sampler_config() const;
  EpisodeShape shape() const;
};

/// The 54-sensor skeleton graph compiled into the library.
MotionGraph bundled_skeleton();

std::string run_config_json(const RunConfig& cfg);
/// Unknown keys and wrongly typed values raise ConfigError naming the key.
RunConfig run_config_from_json(const std::string& text, RunConfig base = {});
RunConfig load_run_config(const std::filesystem::path& path, RunConfig base = {});

/// Loaded graph and normalized train/test catalogs of a run.
struct Workspace {
  MotionGraph host;
  MotionCatalog train;
  MotionCatalog test;
  Normalizer norm;

  TaskSource train_source(const RunConfig& cfg) const;
  TaskSource test_source(const RunConfig& cfg) const;
};

Workspace load_workspace(const RunConfig& cfg);

/// Writes through a temporary file and a rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

struct RunOutcome {
  TrainResult train;
  ForecastReport report;
};

using LogFn = std::function<void(const std::string&)>;

/// Trains, evaluates on the held-out actions and writes config.json,
/// losses.csv, checkpoint.bin, report.csv and report.json into `out_dir`.
RunOutcome run_train(const RunConfig& cfg, const std::filesystem::path& out_dir, const LogFn& log = {});

/// Held-out episodes of the run's test actions.
std::vector<Episode> evaluation_episodes(const RunConfig& cfg, const Workspace& ws);

/// Scores a forecaster and writes report.csv and report.json (and
/// traces.csv when requested) into `out_dir`.
ForecastReport run_eval(const RunConfig& cfg, const Forecaster& model, const std::filesystem::path& out_dir,
                        bool traces = false);

}  // namespace ghn
