#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "ghn/data.hpp"
#include "ghn/model.hpp"
#include "ghn/tasks.hpp"

namespace ghn {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor3> m;
  std::vector<Tensor3> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update in place. Throws std::domain_error on a
/// non-finite gradient and ShapeError when shapes disagree.
void adam_step(std::vector<Tensor3>& params, const std::vector<Tensor3>& grads, AdamState& state, double lr,
               const AdamConfig& cfg = {});

struct TrainConfig {
  double lr = 1e-4;
  std::size_t epochs = 500;
  std::size_t batches_per_epoch = 50;
  std::uint64_t seed = 0;
  std::vector<std::string> actions = default_train_actions();
  /// Worker threads per meta-batch; results do not depend on it.
  std::size_t jobs = 1;
  AdamConfig adam;
  /// Held-out meta-train actions scored after every epoch; when set, the
  /// parameters of the best-scoring epoch are restored at the end.
  std::vector<std::string> validation_actions;
  std::size_t validation_tasks = 5;

  void validate() const;
  /// Tasks seen over the whole run.
  std::size_t episode_budget() const { return epochs * batches_per_epoch * actions.size(); }
};

/// Raised when a meta-batch produces a non-finite loss.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t epoch, const std::string& action, double value);
  std::size_t epoch() const { return epoch_; }
  const std::string& action() const { return action_; }
  double value() const { return value_; }

 private:
  std::size_t epoch_;
  std::string action_;
  double value_;
};

struct TrainResult {
  /// Mean meta-batch loss (sum over the batch's episodes) per epoch.
  std::vector<double> epoch_loss;
  std::vector<double> batch_loss;
  std::size_t episodes_seen = 0;
  /// Validation query MSE per epoch, empty without validation actions.
  std::vector<double> validation_loss;
  std::size_t best_epoch = 0;
};

/// Loss and summed gradients of a list of episodes at the current parameters.
struct BatchGradient {
  double loss = 0.0;
  std::vector<double> episode_loss;
  std::vector<Tensor3> grads;
};
BatchGradient batch_gradient(const TrainableModel& model, const std::vector<Episode>& batch, std::size_t jobs = 1);

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

/// Episodic training: each meta-batch holds one task per configured action;
/// the per-episode query losses are summed and one Adam step is taken.
TrainResult meta_train(TrainableModel& model, const TaskSource& source, const TrainConfig& cfg,
                       const EpochCallback& on_epoch = {});

/// Forecast horizons in milliseconds and their 1-based frame indices at 25 fps.
inline constexpr std::array<std::size_t, 4> kHorizonsMs{80, 160, 320, 400};
std::size_t horizon_frame(std::size_t ms);

struct MetricRow {
  std::string action;
  std::size_t episodes = 0;
  /// Per horizon: mean over episodes and query instances of ||e_f||_2 / sqrt(C).
  std::vector<double> mae;
  /// Per horizon: mean absolute error over instances and sensors.
  std::vector<double> mae_abs;
  /// Per horizon: mean squared error over instances and sensors.
  std::vector<double> mse;
  /// Mean squared error over every forecast frame.
  double mse_all = 0.0;

  double mae_avg() const;
  double mae_abs_avg() const;
  double mse_avg() const;
};

struct ForecastReport {
  std::string model;
  std::vector<std::size_t> horizons_ms;
  std::vector<std::size_t> frames;
  std::vector<MetricRow> actions;
  /// Mean of the action rows.
  MetricRow average;
};

/// Errors for one forecast against its target, both (I, H, C).
MetricRow episode_metrics(const Tensor3& forecast, const Tensor3& target, const std::vector<std::size_t>& frames);

/// Scores a forecaster on episodes grouped by action, in original units
/// when a normalizer is given. Never modifies the forecaster.
ForecastReport evaluate(const Forecaster& model, const std::vector<Episode>& episodes,
                        const Normalizer* norm = nullptr,
                        const std::vector<std::size_t>& horizons_ms = {kHorizonsMs.begin(), kHorizonsMs.end()});

/// n tasks per action drawn from a dedicated seed.
std::vector<Episode> sample_episodes(const std::vector<std::string>& actions, const TaskSource& source,
                                     std::size_t per_action, std::uint64_t seed);

void write_report_csv(std::ostream& out, const ForecastReport& report);
std::string report_json(const ForecastReport& report);
void write_loss_csv(std::ostream& out, const TrainResult& result);
/// Observed, predicted and true values per sensor for plotting traces.
void write_traces_csv(std::ostream& out, const Forecaster& model, const std::vector<Episode>& episodes,
                      const Normalizer* norm = nullptr);

/// One model trained per train cap and scored at every test cap. Cell
/// (a, b) is the mean over actions of that cell's MSE divided by the
/// action's mean MSE over all cells.
struct CapAblation {
  std::vector<std::size_t> train_caps;
  std::vector<std::size_t> test_caps;
  std::vector<std::vector<double>> normalized;
  /// Raw MSE per cell and action, [train][test][action].
  std::vector<std::vector<std::vector<double>>> raw;
  std::vector<std::string> actions;
};

CapAblation size_cap_ablation(const std::vector<std::size_t>& train_caps, const std::vector<std::size_t>& test_caps,
                              const ModelConfig& model_cfg, const TrainConfig& train_cfg, const TaskSource& train_source,
                              const TaskSource& test_source, const std::vector<std::string>& test_actions,
                              std::size_t tasks_per_action, std::uint64_t eval_seed);

}  // namespace ghn
