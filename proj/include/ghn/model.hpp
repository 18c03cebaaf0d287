#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ghn/autodiff.hpp"
#include "ghn/layers.hpp"
#include "ghn/params.hpp"
#include "ghn/tasks.hpp"

namespace ghn {

enum class ModelKind { graphhetnet, ds_only, supervised_gru, zero_velocity };
ModelKind parse_model_kind(const std::string& s);
std::string to_string(ModelKind kind);

/// Architecture settings shared by every learned model.
struct ModelConfig {
  ModelKind kind = ModelKind::graphhetnet;
  std::size_t hidden = 64;
  std::size_t horizon = 10;
  /// GRUs in the inner (f) and outer (g) networks of each deep-set block.
  std::size_t ds_inner_depth = 2;
  std::size_t ds_outer_depth = 1;
  /// Graph layers per GCN block.
  std::size_t gcn_layers = 2;
  /// GRUs in the forecasting block (and the supervised baseline's encoder).
  std::size_t gru_depth = 2;
  /// Adds the last observed frame to every forecast step.
  bool residual = false;
  /// Sensor width of the supervised baseline.
  std::size_t pad_width = 54;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Any forecaster: maps an episode's query inputs to (I_q, H, C) forecasts.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual ModelKind kind() const = 0;
  virtual std::size_t horizon() const = 0;
  virtual Tensor3 predict(const Episode& ep) const = 0;
};

/// A forecaster with trainable parameters and a differentiable episode loss.
class TrainableModel : public Forecaster {
 public:
  explicit TrainableModel(ModelConfig cfg) : cfg_(std::move(cfg)) {}

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const override { return cfg_.kind; }
  std::size_t horizon() const override { return cfg_.horizon; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  std::size_t count_params() const { return store_.scalar_count(); }

  /// Scalar training loss of one episode on the binding's tape.
  virtual Var episode_loss(const Binding& b, const Episode& ep) const = 0;

 protected:
  ModelConfig cfg_;
  ParameterStore store_;
};

/// Query forecasts in row layout (I*C, 1, H) against targets from (I, H, C).
Tensor3 target_rows(const Tensor3& y);
/// Mean squared error between a (N, 1, H) forecast node and constant targets.
Var mse_loss(Var pred, const Tensor3& target);

/// Few-shot forecaster: a deep-set / graph / deep-set inference network
/// builds a per-sensor task embedding from the support set, and a graph /
/// GRU prediction network forecasts the query conditioned on it. The
/// ds_only kind drops both graph blocks.
class GraphHetNet : public TrainableModel {
 public:
  explicit GraphHetNet(ModelConfig cfg);

  /// Task embedding (C, 1, K) from X^s (I, T, C) and Y^s (I, H, C).
  Var infer_task(const Binding& b, const MotionGraph& graph, const Tensor3& xs, const Tensor3& ys) const;
  /// Forecast rows (I_q*C, 1, H) for X^q (I_q, T, C).
  Var forecast(const Binding& b, const MotionGraph& graph, const Tensor3& xq, Var embedding) const;

  Tensor3 infer_task(const MotionGraph& graph, const Tensor3& xs, const Tensor3& ys) const;
  /// (I_q, H, C) forecast from a precomputed embedding.
  Tensor3 forecast(const MotionGraph& graph, const Tensor3& xq, const Tensor3& embedding) const;

  Tensor3 predict(const Episode& ep) const override;
  Var episode_loss(const Binding& b, const Episode& ep) const override;

  bool uses_graph() const { return cfg_.kind == ModelKind::graphhetnet; }

 private:
  DsBlockParams ds_support_;
  GcnBlockParams gcn_support_;
  DsBlockParams ds_task_;
  LinearParams projection_;
  GcnBlockParams gcn_query_;
  GruBlockParams head_;
};

/// Fixed-width GRU encoder with a linear multi-step head. Task channels are
/// packed into the first C of pad_width slots; the rest are zero and masked
/// out of the loss.
class SupervisedGru : public TrainableModel {
 public:
  explicit SupervisedGru(ModelConfig cfg);

  /// (I, T, C) -> (I, T, pad_width) with zeros in the padding slots.
  Tensor3 pad(const Tensor3& x) const;
  /// Forecast node (I, 1, H*pad_width), index h*pad_width + c.
  Var forward(const Binding& b, const Tensor3& x) const;
  /// Masked squared error: mean over the real channels only.
  Var masked_loss(Var pred, const Tensor3& y) const;

  Tensor3 predict(const Episode& ep) const override;
  /// Trains on every support and query instance of the episode.
  Var episode_loss(const Binding& b, const Episode& ep) const override;

 private:
  GruStack encoder_;
  LinearParams head_;
};

/// Repeats the last observed frame H times.
Tensor3 zero_velocity(const Tensor3& x, std::size_t horizon);

class ZeroVelocity : public Forecaster {
 public:
  explicit ZeroVelocity(std::size_t horizon) : horizon_(horizon) {}
  ModelKind kind() const override { return ModelKind::zero_velocity; }
  std::size_t horizon() const override { return horizon_; }
  Tensor3 predict(const Episode& ep) const override { return zero_velocity(ep.xq, horizon_); }

 private:
  std::size_t horizon_;
};

/// Builds a freshly initialised learned model of cfg.kind.
std::unique_ptr<TrainableModel> make_model(const ModelConfig& cfg);
/// Any forecaster, including the parameter-free baseline.
std::unique_ptr<Forecaster> make_forecaster(const ModelConfig& cfg);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary container: magic, format version, JSON header (model config,
/// seed, extra metadata, parameter names and shapes), then raw doubles.
void save_checkpoint(const std::filesystem::path& path, const TrainableModel& model,
                     const std::string& extra_json = "{}");
std::unique_ptr<TrainableModel> load_checkpoint(const std::filesystem::path& path);
/// Header only, as a JSON string.
std::string read_checkpoint_header(const std::filesystem::path& path);

std::string config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const std::string& json);

}  // namespace ghn
