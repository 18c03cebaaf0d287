#include "ghn/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace ghn {

void adam_step(std::vector<Tensor3>& params, const std::vector<Tensor3>& grads, AdamState& state, double lr,
               const AdamConfig& cfg) {
  if (params.size() != grads.size()) {
    throw ShapeError("adam", std::to_string(params.size()) + " parameters but " + std::to_string(grads.size()) +
                                 " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].dims() != grads[i].dims()) throw ShapeError("adam", params[i].dims(), grads[i].dims());
    if (!grads[i].all_finite()) throw std::domain_error("adam: non-finite gradient in parameter " + std::to_string(i));
  }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.dims());
      state.v.emplace_back(p.dims());
    }
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = state.m[i].values();
    auto v = state.v[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mh = m[j] / c1;
      const double vh = v[j] / c2;
      p[j] -= lr * mh / (std::sqrt(vh) + cfg.eps);
    }
  }
}

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("train: learning rate must be positive");
  if (epochs < 1 || batches_per_epoch < 1) throw std::invalid_argument("train: epochs and batches must be >= 1");
  if (actions.empty()) throw std::invalid_argument("train: no training actions");
  if (jobs < 1) throw std::invalid_argument("train: jobs must be >= 1");
  for (const auto& a : validation_actions)
    if (std::find(actions.begin(), actions.end(), a) != actions.end()) {
      throw std::invalid_argument("train: validation action '" + a + "' is also a training action");
    }
  if (!validation_actions.empty() && validation_tasks < 1) {
    throw std::invalid_argument("train: validation_tasks must be >= 1");
  }
}

NonFiniteLoss::NonFiniteLoss(std::size_t epoch, const std::string& action, double value)
    : std::runtime_error("non-finite loss " + std::to_string(value) + " at epoch " + std::to_string(epoch) +
                         " on action '" + action + "'"),
      epoch_(epoch),
      action_(action),
      value_(value) {}

namespace {

struct EpisodeResult {
  double loss = 0.0;
  std::vector<Tensor3> grads;
};

EpisodeResult episode_gradient(const TrainableModel& model, const Episode& ep) {
  Tape tape;
  const Binding b(tape, model.params());
  const Var loss = model.episode_loss(b, ep);
  EpisodeResult r;
  r.loss = loss.value()[0];
  if (std::isfinite(r.loss)) {
    tape.backward(loss);
    r.grads = b.gradients();
  }
  return r;
}

}  // namespace

BatchGradient batch_gradient(const TrainableModel& model, const std::vector<Episode>& batch, std::size_t jobs) {
  std::vector<EpisodeResult> results(batch.size());
  std::vector<std::exception_ptr> errors(batch.size());
  auto run = [&](std::size_t i) {
    try {
      results[i] = episode_gradient(model, batch[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(jobs, 1), batch.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < batch.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < batch.size(); i += workers) run(i);
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  BatchGradient out;
  for (const auto& p : model.params().values()) out.grads.emplace_back(p.dims());
  for (auto& r : results) {
    out.loss += r.loss;
    out.episode_loss.push_back(r.loss);
    if (!r.grads.empty())
      for (std::size_t k = 0; k < out.grads.size(); ++k) out.grads[k] += r.grads[k];
  }
  return out;
}

TrainResult meta_train(TrainableModel& model, const TaskSource& source, const TrainConfig& cfg,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  AdamState adam;
  TrainResult result;
  std::vector<Episode> held_out;
  if (!cfg.validation_actions.empty()) {
    held_out = sample_episodes(cfg.validation_actions, source, cfg.validation_tasks, cfg.seed ^ 0x5eedULL);
  }
  std::vector<Tensor3> best;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
      const auto batch = meta_batch(cfg.actions, source, rng);
      BatchGradient g = batch_gradient(model, batch, cfg.jobs);
      for (std::size_t i = 0; i < batch.size(); ++i)
        if (!std::isfinite(g.episode_loss[i])) throw NonFiniteLoss(epoch, batch[i].action, g.episode_loss[i]);
      adam_step(model.params().values(), g.grads, adam, cfg.lr, cfg.adam);
      result.batch_loss.push_back(g.loss);
      result.episodes_seen += batch.size();
      total += g.loss;
    }
    result.epoch_loss.push_back(total / static_cast<double>(cfg.batches_per_epoch));
    if (!held_out.empty()) {
      const double score = evaluate(model, held_out, nullptr, {}).average.mse_all;
      result.validation_loss.push_back(score);
      if (best.empty() || score < result.validation_loss[result.best_epoch - 1]) {
        best = model.params().values();
        result.best_epoch = epoch;
      }
    }
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  if (!best.empty()) model.params().values() = std::move(best);
  return result;
}

std::size_t horizon_frame(std::size_t ms) {
  const double frames = static_cast<double>(ms) / (kFrameSeconds * 1000.0);
  const auto f = static_cast<std::size_t>(std::llround(frames));
  if (f == 0 || std::abs(frames - static_cast<double>(f)) > 1e-9) {
    throw std::invalid_argument("horizon " + std::to_string(ms) + " ms is not a whole number of frames");
  }
  return f;
}

namespace {

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double MetricRow::mae_avg() const { return mean_of(mae); }
double MetricRow::mae_abs_avg() const { return mean_of(mae_abs); }
double MetricRow::mse_avg() const { return mean_of(mse); }

MetricRow episode_metrics(const Tensor3& forecast, const Tensor3& target, const std::vector<std::size_t>& frames) {
  if (forecast.dims() != target.dims()) throw ShapeError("metrics", forecast.dims(), target.dims());
  const Dims d = target.dims();
  MetricRow row;
  row.episodes = 1;
  const double inv_c = 1.0 / static_cast<double>(d.c);
  for (std::size_t f : frames) {
    if (f < 1 || f > d.t) throw std::invalid_argument("metrics: frame " + std::to_string(f) + " outside the forecast");
    double norm_sum = 0.0, abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < d.n; ++i) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d.c; ++c) {
        const double e = forecast(i, f - 1, c) - target(i, f - 1, c);
        sq += e * e;
        abs_sum += std::abs(e);
      }
      norm_sum += std::sqrt(sq * inv_c);
      sq_sum += sq;
    }
    const double n = static_cast<double>(d.n);
    row.mae.push_back(norm_sum / n);
    row.mae_abs.push_back(abs_sum / (n * static_cast<double>(d.c)));
    row.mse.push_back(sq_sum / (n * static_cast<double>(d.c)));
  }
  double all = 0.0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    const double e = forecast[k] - target[k];
    all += e * e;
  }
  row.mse_all = all / static_cast<double>(d.size());
  return row;
}

namespace {

void accumulate(MetricRow& into, const MetricRow& add) {
  if (into.mae.empty()) {
    into.mae.assign(add.mae.size(), 0.0);
    into.mae_abs.assign(add.mae.size(), 0.0);
    into.mse.assign(add.mae.size(), 0.0);
  }
  for (std::size_t k = 0; k < add.mae.size(); ++k) {
    into.mae[k] += add.mae[k];
    into.mae_abs[k] += add.mae_abs[k];
    into.mse[k] += add.mse[k];
  }
  into.mse_all += add.mse_all;
  into.episodes += add.episodes;
}

void divide(MetricRow& row, double n) {
  for (auto* v : {&row.mae, &row.mae_abs, &row.mse})
    for (double& x : *v) x /= n;
  row.mse_all /= n;
}

}  // namespace

ForecastReport evaluate(const Forecaster& model, const std::vector<Episode>& episodes, const Normalizer* norm,
                        const std::vector<std::size_t>& horizons_ms) {
  ForecastReport report;
  report.model = to_string(model.kind());
  report.horizons_ms = horizons_ms;
  for (std::size_t ms : horizons_ms) {
    const std::size_t f = horizon_frame(ms);
    if (f > model.horizon()) {
      throw std::invalid_argument("horizon " + std::to_string(ms) + " ms exceeds the model's " +
                                  std::to_string(model.horizon()) + " frames");
    }
    report.frames.push_back(f);
  }
  std::vector<std::string> order;
  std::map<std::string, MetricRow> rows;
  for (const auto& ep : episodes) {
    Tensor3 pred = model.predict(ep);
    Tensor3 truth = ep.yq;
    if (norm != nullptr) {
      pred = norm->denormalize(pred, ep.graph.ids());
      truth = norm->denormalize(truth, ep.graph.ids());
    }
    const MetricRow m = episode_metrics(pred, truth, report.frames);
    auto [it, fresh] = rows.try_emplace(ep.action);
    if (fresh) {
      order.push_back(ep.action);
      it->second.action = ep.action;
    }
    accumulate(it->second, m);
  }
  report.average.action = "Average";
  for (const auto& name : order) {
    MetricRow row = rows.at(name);
    divide(row, static_cast<double>(row.episodes));
    MetricRow unit = row;
    unit.episodes = 1;
    const std::size_t episodes_seen = report.average.episodes;
    accumulate(report.average, unit);
    report.average.episodes = episodes_seen + row.episodes;
    report.actions.push_back(std::move(row));
  }
  if (!order.empty()) {
    const std::size_t total = report.average.episodes;
    divide(report.average, static_cast<double>(order.size()));
    report.average.episodes = total;
  }
  return report;
}

std::vector<Episode> sample_episodes(const std::vector<std::string>& actions, const TaskSource& source,
                                     std::size_t per_action, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Episode> out;
  for (std::size_t k = 0; k < per_action; ++k)
    for (auto& ep : meta_batch(actions, source, rng)) out.push_back(std::move(ep));
  std::stable_sort(out.begin(), out.end(), [&](const Episode& a, const Episode& b) {
    return std::find(actions.begin(), actions.end(), a.action) < std::find(actions.begin(), actions.end(), b.action);
  });
  return out;
}

namespace {

void csv_row(std::ostream& out, const MetricRow& row, const ForecastReport& report) {
  for (std::size_t k = 0; k < report.frames.size(); ++k) {
    out << row.action << ',' << report.horizons_ms[k] << ',' << report.frames[k] << ',' << row.mae[k] << ','
        << row.mae_abs[k] << ',' << row.mse[k] << ',' << row.episodes << '\n';
  }
  out << row.action << ",avg,," << row.mae_avg() << ',' << row.mae_abs_avg() << ',' << row.mse_avg() << ','
      << row.episodes << '\n';
}

nlohmann::json row_json(const MetricRow& row) {
  return {{"action", row.action},   {"episodes", row.episodes},   {"mae", row.mae},
          {"mae_abs", row.mae_abs}, {"mse", row.mse},             {"mse_all", row.mse_all},
          {"mae_avg", row.mae_avg()}, {"mae_abs_avg", row.mae_abs_avg()}, {"mse_avg", row.mse_avg()}};
}

}  // namespace

void write_report_csv(std::ostream& out, const ForecastReport& report) {
  out.precision(10);
  out << "action,horizon_ms,frame,mae,mae_abs,mse,episodes\n";
  for (const auto& row : report.actions) csv_row(out, row, report);
  if (!report.actions.empty()) csv_row(out, report.average, report);
}

std::string report_json(const ForecastReport& report) {
  nlohmann::json j;
  j["model"] = report.model;
  j["horizons_ms"] = report.horizons_ms;
  j["frames"] = report.frames;
  j["actions"] = nlohmann::json::array();
  for (const auto& row : report.actions) j["actions"].push_back(row_json(row));
  j["average"] = row_json(report.average);
  return j.dump(2);
}

void write_loss_csv(std::ostream& out, const TrainResult& result) {
  out.precision(12);
  out << "epoch,loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) out << e + 1 << ',' << result.epoch_loss[e] << '\n';
}

void write_traces_csv(std::ostream& out, const Forecaster& model, const std::vector<Episode>& episodes,
                      const Normalizer* norm) {
  out.precision(10);
  out << "action,episode,instance,sensor,label,frame,kind,value\n";
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    Tensor3 pred = model.predict(ep);
    Tensor3 truth = ep.yq;
    Tensor3 seen = ep.xq;
    if (norm != nullptr) {
      pred = norm->denormalize(pred, ep.graph.ids());
      truth = norm->denormalize(truth, ep.graph.ids());
      seen = norm->denormalize(seen, ep.graph.ids());
    }
    const Dims dx = seen.dims();
    const Dims dy = truth.dims();
    for (std::size_t i = 0; i < dx.n; ++i)
      for (std::size_t c = 0; c < dx.c; ++c) {
        const std::string head = ep.action + ',' + std::to_string(e) + ',' + std::to_string(i) + ',' +
                                 std::to_string(ep.graph.ids()[c]) + ',' + ep.graph.labels()[c] + ',';
        for (std::size_t t = 0; t < dx.t; ++t) out << head << t << ",observed," << seen(i, t, c) << '\n';
        for (std::size_t h = 0; h < dy.t; ++h) {
          out << head << dx.t + h << ",truth," << truth(i, h, c) << '\n';
          out << head << dx.t + h << ",predicted," << pred(i, h, c) << '\n';
        }
      }
  }
}

CapAblation size_cap_ablation(const std::vector<std::size_t>& train_caps, const std::vector<std::size_t>& test_caps,
                              const ModelConfig& model_cfg, const TrainConfig& train_cfg, const TaskSource& train_source,
                              const TaskSource& test_source, const std::vector<std::string>& test_actions,
                              std::size_t tasks_per_action, std::uint64_t eval_seed) {
  if (train_caps.empty() || test_caps.empty()) throw std::invalid_argument("ablation: empty cap list");
  if (test_actions.empty()) throw std::invalid_argument("ablation: no test actions");
  CapAblation out;
  out.train_caps = train_caps;
  out.test_caps = test_caps;
  out.actions = test_actions;
  for (std::size_t a : train_caps) {
    TaskSource src = train_source;
    src.sampler.max_vertices = a;
    src.sampler.min_vertices = std::min(src.sampler.min_vertices, a);
    auto model = make_model(model_cfg);
    meta_train(*model, src, train_cfg);
    std::vector<std::vector<double>> per_test;
    for (std::size_t b : test_caps) {
      TaskSource test = test_source;
      test.sampler.max_vertices = b;
      test.sampler.min_vertices = std::min(test.sampler.min_vertices, b);
      const std::size_t last_ms = model->horizon() * static_cast<std::size_t>(std::llround(kFrameSeconds * 1000.0));
      const auto report =
          evaluate(*model, sample_episodes(test_actions, test, tasks_per_action, eval_seed), nullptr, {last_ms});
      std::vector<double> mse;
      for (const auto& row : report.actions) mse.push_back(row.mse_all);
      per_test.push_back(std::move(mse));
    }
    out.raw.push_back(std::move(per_test));
  }
  const std::size_t cells = train_caps.size() * test_caps.size();
  std::vector<double> action_mean(test_actions.size(), 0.0);
  for (const auto& row : out.raw)
    for (const auto& cell : row)
      for (std::size_t k = 0; k < cell.size(); ++k) action_mean[k] += cell[k] / static_cast<double>(cells);
  for (const auto& row : out.raw) {
    std::vector<double> norm_row;
    for (const auto& cell : row) {
      double s = 0.0;
      for (std::size_t k = 0; k < cell.size(); ++k) s += cell[k] / action_mean[k];
      norm_row.push_back(s / static_cast<double>(cell.size()));
    }
    out.normalized.push_back(std::move(norm_row));
  }
  return out;
}

}  // namespace ghn
