#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "ghn/train.hpp"
#include "gradcheck.hpp"

using namespace ghn;

namespace {

struct Fixture {
  MotionGraph host = MotionGraph::path(6);
  MotionCatalog catalog;
  TaskSource source;

  Fixture() {
    auto specs = default_synthetic_actions();
    catalog = make_synthetic_catalog(specs, host, {1, 5}, 1, 40, 3);
    source.catalog = &catalog;
    source.host = &host;
    source.shape = EpisodeShape{3, 2, 8, 3, 1};
    source.sampler.max_vertices = 4;
  }
};

ModelConfig tiny(ModelKind kind) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.hidden = 3;
  cfg.horizon = 3;
  cfg.pad_width = 6;
  cfg.seed = 4;
  return cfg;
}

TrainConfig short_run() {
  TrainConfig tc;
  tc.lr = 1e-2;
  tc.epochs = 2;
  tc.batches_per_epoch = 2;
  tc.seed = 9;
  tc.actions = {"directions", "greeting", "phoning"};
  return tc;
}

}  // namespace

TEST_CASE("first Adam step moves each weight by lr against the gradient sign") {
  std::vector<Tensor3> p{Tensor3(Dims{1, 1, 3}, std::vector<double>{1.0, -2.0, 0.5})};
  const std::vector<Tensor3> g{Tensor3(Dims{1, 1, 3}, std::vector<double>{0.3, -4.0, 0.0})};
  AdamState st;
  adam_step(p, g, st, 0.1);
  CHECK(st.step == 1);
  CHECK(p[0][0] == doctest::Approx(1.0 - 0.1 * 0.3 / (0.3 + 1e-8)).epsilon(1e-15));
  CHECK(p[0][1] == doctest::Approx(-2.0 + 0.1 * 4.0 / (4.0 + 1e-8)).epsilon(1e-15));
  CHECK(p[0][2] == 0.5);
}

TEST_CASE("zero gradient leaves parameters unchanged and decays moments") {
  std::vector<Tensor3> p{Tensor3(Dims{1, 1, 2}, std::vector<double>{1.0, -1.0})};
  const Tensor3 start = p[0];
  AdamState st;
  adam_step(p, {Tensor3(1, 1, 2)}, st, 0.1);
  CHECK(p[0] == start);
  adam_step(p, {Tensor3(Dims{1, 1, 2}, std::vector<double>{0.5, 0.5})}, st, 0.1);
  const double m = st.m[0][0], v = st.v[0][0];
  adam_step(p, {Tensor3(1, 1, 2)}, st, 0.1);
  CHECK(st.m[0][0] == 0.9 * m);
  CHECK(st.v[0][0] == 0.999 * v);
}

TEST_CASE("zero learning rate keeps parameters over many steps") {
  std::vector<Tensor3> p{Tensor3(Dims{1, 1, 2}, std::vector<double>{1.0, -1.0})};
  const Tensor3 start = p[0];
  AdamState st;
  for (int k = 0; k < 10; ++k) adam_step(p, {Tensor3(Dims{1, 1, 2}, std::vector<double>{0.3, -7.0})}, st, 0.0);
  CHECK(p[0] == start);
}

TEST_CASE("Adam minimises a quadratic") {
  std::vector<Tensor3> p{Tensor3(Dims{1, 1, 2}, std::vector<double>{3.0, -1.5})};
  const double target[] = {0.7, 0.2};
  AdamState st;
  for (int step = 0; step < 5000; ++step) {
    std::vector<Tensor3> g{Tensor3(Dims{1, 1, 2})};
    for (std::size_t k = 0; k < 2; ++k) g[0][k] = 2.0 * (p[0][k] - target[k]);
    adam_step(p, g, st, 1e-2);
  }
  CHECK(std::abs(p[0][0] - 0.7) < 1e-3);
  CHECK(std::abs(p[0][1] - 0.2) < 1e-3);
}

TEST_CASE("Adam rejects non-finite or mismatched gradients") {
  std::vector<Tensor3> p{Tensor3(1, 1, 2)};
  AdamState st;
  CHECK_THROWS_AS(adam_step(p, {Tensor3(Dims{1, 1, 2}, std::vector<double>{NAN, 0.0})}, st, 0.1), std::domain_error);
  CHECK_THROWS_AS(adam_step(p, {Tensor3(1, 1, 3)}, st, 0.1), ShapeError);
  CHECK(p[0][0] == 0.0);
}

TEST_CASE("horizons map to frames") {
  CHECK(horizon_frame(80) == 2);
  CHECK(horizon_frame(160) == 4);
  CHECK(horizon_frame(320) == 8);
  CHECK(horizon_frame(400) == 10);
  CHECK_THROWS_AS(horizon_frame(100), std::invalid_argument);
  CHECK_THROWS_AS(horizon_frame(0), std::invalid_argument);
}

TEST_CASE("episode budget at full scale") {
  TrainConfig tc;
  CHECK(tc.epochs == 500);
  CHECK(tc.batches_per_epoch == 50);
  CHECK(tc.actions.size() == 11);
  CHECK(tc.episode_budget() == 275000);
  CHECK(tc.lr == 1e-4);
}

TEST_CASE("hand-computed errors on a two-sensor forecast") {
  // Frame 1 errors (3, 4) and (0, 0); frame 2 errors (1, -1) and (2, 0).
  Tensor3 truth(2, 2, 2);
  Tensor3 pred(2, 2, 2);
  pred(0, 0, 0) = 3.0;
  pred(0, 0, 1) = 4.0;
  pred(0, 1, 0) = 1.0;
  pred(0, 1, 1) = -1.0;
  pred(1, 1, 0) = 2.0;
  const MetricRow m = episode_metrics(pred, truth, {1, 2});
  CHECK(std::abs(m.mae[0] - (5.0 / std::sqrt(2.0) + 0.0) / 2.0) < 1e-12);
  CHECK(std::abs(m.mae[1] - (1.0 + std::sqrt(2.0)) / 2.0) < 1e-12);
  CHECK(std::abs(m.mae_abs[0] - 7.0 / 4.0) < 1e-12);
  CHECK(std::abs(m.mae_abs[1] - 4.0 / 4.0) < 1e-12);
  CHECK(std::abs(m.mse[0] - 25.0 / 4.0) < 1e-12);
  CHECK(std::abs(m.mse[1] - 6.0 / 4.0) < 1e-12);
  CHECK(std::abs(m.mse_all - 31.0 / 8.0) < 1e-12);
  CHECK_THROWS_AS(episode_metrics(pred, truth, {3}), std::invalid_argument);
}

TEST_CASE("evaluation averages per action and leaves the model untouched") {
  Fixture fx;
  const auto model = make_model(tiny(ModelKind::graphhetnet));
  const auto before = model->params().checksum();
  const auto eps = sample_episodes({"walking", "eating"}, fx.source, 3, 21);
  REQUIRE(eps.size() == 6);
  CHECK(eps[0].action == "walking");
  CHECK(eps[5].action == "eating");
  const auto report = evaluate(*model, eps, nullptr, {40, 80, 120});
  CHECK(model->params().checksum() == before);
  REQUIRE(report.actions.size() == 2);
  CHECK(report.frames == std::vector<std::size_t>{1, 2, 3});
  CHECK(report.actions[0].episodes == 3);
  CHECK(report.average.episodes == 6);
  double mean = 0.0;
  for (std::size_t e = 0; e < 3; ++e) mean += episode_metrics(model->predict(eps[e]), eps[e].yq, {1, 2, 3}).mae[1];
  CHECK(report.actions[0].mae[1] == doctest::Approx(mean / 3.0).epsilon(1e-13));
  CHECK(report.average.mse[2] ==
        doctest::Approx((report.actions[0].mse[2] + report.actions[1].mse[2]) / 2.0).epsilon(1e-13));
  CHECK_THROWS_AS(evaluate(*model, eps, nullptr, {400}), std::invalid_argument);
}

TEST_CASE("denormalized evaluation scales errors by the channel std") {
  Fixture fx;
  const ZeroVelocity zv(3);
  const auto eps = sample_episodes({"walking"}, fx.source, 2, 22);
  Normalizer norm;
  norm.mean.assign(6, 5.0);
  norm.stddev.assign(6, 2.0);
  const auto raw = evaluate(zv, eps, nullptr, {40});
  const auto scaled = evaluate(zv, eps, &norm, {40});
  CHECK(scaled.actions[0].mae[0] == doctest::Approx(2.0 * raw.actions[0].mae[0]).epsilon(1e-12));
  CHECK(scaled.actions[0].mse[0] == doctest::Approx(4.0 * raw.actions[0].mse[0]).epsilon(1e-12));
}

TEST_CASE("meta-training lowers the loss and counts episodes") {
  Fixture fx;
  for (ModelKind kind : {ModelKind::graphhetnet, ModelKind::ds_only, ModelKind::supervised_gru}) {
    const auto model = make_model(tiny(kind));
    TrainConfig tc = short_run();
    tc.epochs = 15;
    tc.actions = {"walking"};
    fx.source.mode = GraphMode::homogeneous;
    const auto res = meta_train(*model, fx.source, tc);
    INFO(to_string(kind));
    CHECK(res.epoch_loss.size() == 15);
    CHECK(res.batch_loss.size() == 30);
    CHECK(res.episodes_seen == 30);
    CHECK(res.epoch_loss.back() < res.epoch_loss.front());
  }
}

TEST_CASE("training is reproducible and independent of the worker count") {
  Fixture fx;
  TrainConfig tc = short_run();
  const auto a = make_model(tiny(ModelKind::graphhetnet));
  const auto b = make_model(tiny(ModelKind::graphhetnet));
  const auto ra = meta_train(*a, fx.source, tc);
  tc.jobs = 3;
  const auto rb = meta_train(*b, fx.source, tc);
  CHECK(ra.batch_loss == rb.batch_loss);
  CHECK(a->params().values() == b->params().values());
  std::ostringstream la, lb;
  write_loss_csv(la, ra);
  write_loss_csv(lb, rb);
  CHECK(la.str() == lb.str());
}

TEST_CASE("a non-finite loss aborts with epoch and action") {
  Fixture fx;
  MotionCatalog bad;
  MotionRecording rec;
  rec.action = "walking";
  rec.subject = 1;
  rec.frames = Tensor3(1, 40, 6, 1e200);
  bad.add(rec);
  fx.source.catalog = &bad;
  TrainConfig tc = short_run();
  tc.actions = {"walking"};
  const auto model = make_model(tiny(ModelKind::ds_only));
  try {
    meta_train(*model, fx.source, tc);
    FAIL("expected NonFiniteLoss");
  } catch (const NonFiniteLoss& e) {
    CHECK(e.epoch() == 1);
    CHECK(e.action() == "walking");
    CHECK(std::string(e.what()).find("walking") != std::string::npos);
  }
}

TEST_CASE("validation restores the best epoch") {
  Fixture fx;
  const auto model = make_model(tiny(ModelKind::ds_only));
  TrainConfig tc = short_run();
  tc.epochs = 4;
  tc.validation_actions = {"walking"};
  tc.validation_tasks = 2;
  const auto res = meta_train(*model, fx.source, tc);
  REQUIRE(res.validation_loss.size() == 4);
  CHECK(res.best_epoch >= 1);
  const double best = *std::min_element(res.validation_loss.begin(), res.validation_loss.end());
  CHECK(res.validation_loss[res.best_epoch - 1] == best);
  const auto held = sample_episodes({"walking"}, fx.source, 2, tc.seed ^ 0x5eedULL);
  CHECK(evaluate(*model, held, nullptr, {}).average.mse_all == best);
  tc.validation_actions = {"directions"};
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("perfect and constant forecasts score zero") {
  Fixture fx;
  MotionCatalog flat;
  MotionRecording rec;
  rec.action = "walking";
  rec.frames = Tensor3(1, 40, 6, 0.25);
  flat.add(rec);
  fx.source.catalog = &flat;
  const auto eps = sample_episodes({"walking"}, fx.source, 3, 1);
  const auto report = evaluate(ZeroVelocity(3), eps, nullptr, {40, 80, 120});
  for (double v : report.average.mae) CHECK(v == 0.0);
  for (double v : report.average.mse) CHECK(v == 0.0);
}

TEST_CASE("average column is the mean of the horizon columns") {
  Fixture fx;
  const auto model = make_model(tiny(ModelKind::graphhetnet));
  const auto report = evaluate(*model, sample_episodes({"walking", "eating"}, fx.source, 2, 3), nullptr, {40, 80, 120});
  for (const auto& row : report.actions) {
    CHECK(std::abs(row.mae_avg() - (row.mae[0] + row.mae[1] + row.mae[2]) / 3.0) < 1e-12);
    CHECK(std::abs(row.mse_avg() - (row.mse[0] + row.mse[1] + row.mse[2]) / 3.0) < 1e-12);
  }
}

TEST_CASE("training config validation") {
  TrainConfig tc;
  tc.lr = 0.0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.actions.clear();
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
  tc = TrainConfig{};
  tc.epochs = 0;
  CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

TEST_CASE("report writers") {
  Fixture fx;
  const ZeroVelocity zv(3);
  const auto eps = sample_episodes({"walking", "eating"}, fx.source, 1, 23);
  const auto report = evaluate(zv, eps, nullptr, {40, 120});
  std::ostringstream csv;
  write_report_csv(csv, report);
  const std::string s = csv.str();
  CHECK(s.rfind("action,horizon_ms,frame,mae,mae_abs,mse,episodes\n", 0) == 0);
  CHECK(s.find("walking,40,1,") != std::string::npos);
  CHECK(s.find("Average,avg,,") != std::string::npos);
  const std::string js = report_json(report);
  CHECK(js.find("\"zero-velocity\"") != std::string::npos);
  std::ostringstream traces;
  write_traces_csv(traces, zv, eps);
  std::size_t lines = 0;
  for (char ch : traces.str()) lines += ch == '\n';
  std::size_t expect = 1;
  for (const auto& ep : eps) expect += ep.xq.dims().n * ep.sensors() * (8 + 2 * 3);
  CHECK(lines == expect);
}

TEST_CASE("cap ablation normalises each action by its mean") {
  Fixture fx;
  TrainConfig tc = short_run();
  tc.epochs = 1;
  tc.batches_per_epoch = 1;
  const auto ab = size_cap_ablation({2, 4}, {1, 3}, tiny(ModelKind::graphhetnet), tc, fx.source, fx.source,
                                    {"walking", "eating"}, 2, 5);
  REQUIRE(ab.normalized.size() == 2);
  REQUIRE(ab.normalized[0].size() == 2);
  double total = 0.0;
  for (const auto& row : ab.normalized)
    for (double v : row) total += v;
  CHECK(total == doctest::Approx(4.0).epsilon(1e-12));
  const double cell = (ab.raw[1][0][0] / ((ab.raw[0][0][0] + ab.raw[0][1][0] + ab.raw[1][0][0] + ab.raw[1][1][0]) / 4) +
                       ab.raw[1][0][1] / ((ab.raw[0][0][1] + ab.raw[0][1][1] + ab.raw[1][0][1] + ab.raw[1][1][1]) / 4)) /
                      2.0;
  CHECK(ab.normalized[1][0] == doctest::Approx(cell).epsilon(1e-12));
}
