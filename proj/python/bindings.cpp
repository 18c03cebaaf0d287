#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <sstream>

#include "ghn/run.hpp"

namespace py = pybind11;
using namespace ghn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor3 to_tensor(const Array& a) {
  if (a.ndim() != 3) throw std::invalid_argument("expected a 3-d array (instances, time, sensors)");
  const Dims d{static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)),
               static_cast<std::size_t>(a.shape(2))};
  return Tensor3(d, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor3& t) {
  Array out({t.dims().n, t.dims().t, t.dims().c});
  std::copy(t.storage().begin(), t.storage().end(), out.mutable_data());
  return out;
}

py::dict stats_dict(const GraphStats& s) {
  py::dict d;
  d["samples"] = s.samples;
  d["vertices_mean"] = s.vertices_mean;
  d["vertices_std"] = s.vertices_std;
  d["degree_mean"] = s.degree_mean;
  d["degree_std"] = s.degree_std;
  d["unique"] = s.unique;
  d["unique_fraction"] = s.unique_fraction;
  d["summary"] = format_stats(s);
  return d;
}

SamplerConfig sampler(double p, std::size_t min_vertices, std::size_t max_vertices, std::uint64_t seed) {
  SamplerConfig s;
  s.p = p;
  s.min_vertices = min_vertices;
  s.max_vertices = max_vertices;
  s.seed = seed;
  return s;
}

py::object json_loads(const std::string& s) { return py::module_::import("json").attr("loads")(s); }
std::string json_dumps(const py::object& o) { return py::module_::import("json").attr("dumps")(o).cast<std::string>(); }

Episode make_episode(const MotionGraph& g, const Array& xs, const Array& ys, const Array& xq, const Array* yq) {
  Episode ep;
  ep.graph = g;
  ep.xs = to_tensor(xs);
  ep.ys = to_tensor(ys);
  ep.xq = to_tensor(xq);
  if (yq != nullptr) ep.yq = to_tensor(*yq);
  return ep;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Few-shot motion forecasting on heterogeneous sensor graphs";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<GraphError>(m, "GraphError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<MotionGraph>(m, "Graph")
      .def_static("path", &MotionGraph::path)
      .def_static("from_edges",
                  [](std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& edges) {
                    return MotionGraph::from_edges(n, edges);
                  })
      .def_static("load", &read_graph_file)
      .def_static("skeleton", &bundled_skeleton)
      .def("__len__", &MotionGraph::size)
      .def_property_readonly("ids", &MotionGraph::ids)
      .def_property_readonly("labels", &MotionGraph::labels)
      .def_property_readonly("edge_count", &MotionGraph::edge_count)
      .def("neighbors", &MotionGraph::neighbors)
      .def("is_connected", &MotionGraph::is_connected)
      .def("stats", [](const MotionGraph& g) { return stats_dict(graph_stats(g)); })
      .def("__str__", [](const MotionGraph& g) {
        std::ostringstream os;
        write_graph(os, g);
        return os.str();
      });

  m.def(
      "sample_subgraph",
      [](const MotionGraph& host, double p, std::size_t min_vertices, std::size_t max_vertices, std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        return sample_induced_subgraph(host, sampler(p, min_vertices, max_vertices, seed), rng);
      },
      py::arg("host"), py::arg("p") = 0.64, py::arg("min_vertices") = 1, py::arg("max_vertices") = 0,
      py::arg("seed") = 0, "Random connected induced subgraph");
  m.def(
      "sample_stats",
      [](const MotionGraph& host, std::size_t n, double p, std::size_t min_vertices, std::size_t max_vertices,
         std::uint64_t seed) { return stats_dict(sample_stats(host, sampler(p, min_vertices, max_vertices, seed), n)); },
      py::arg("host"), py::arg("n"), py::arg("p") = 0.64, py::arg("min_vertices") = 1, py::arg("max_vertices") = 0,
      py::arg("seed") = 0);

  m.def("horizon_frame", &horizon_frame);
  m.def("zero_velocity", [](const Array& x, std::size_t h) { return to_array(zero_velocity(to_tensor(x), h)); });
  m.def(
      "forecast_errors",
      [](const Array& pred, const Array& truth, const std::vector<std::size_t>& frames) {
        const MetricRow r = episode_metrics(to_tensor(pred), to_tensor(truth), frames);
        py::dict d;
        d["mae"] = r.mae;
        d["mae_abs"] = r.mae_abs;
        d["mse"] = r.mse;
        d["mse_all"] = r.mse_all;
        return d;
      },
      py::arg("pred"), py::arg("truth"), py::arg("frames"), "Per-frame errors of an (I, H, C) forecast");

  py::class_<TrainableModel>(m, "Model")
      .def(py::init([](const std::string& kind, std::size_t hidden, std::size_t horizon, std::uint64_t seed,
                       bool residual, std::size_t pad_width) {
             ModelConfig cfg;
             cfg.kind = parse_model_kind(kind);
             cfg.hidden = hidden;
             cfg.horizon = horizon;
             cfg.seed = seed;
             cfg.residual = residual;
             cfg.pad_width = pad_width;
             return make_model(cfg);
           }),
           py::arg("kind") = "graphhetnet", py::arg("hidden") = 64, py::arg("horizon") = 10, py::arg("seed") = 0,
           py::arg("residual") = false, py::arg("pad_width") = 54)
      .def_static("load", &load_checkpoint)
      .def("save", [](const TrainableModel& model, const std::filesystem::path& path) { save_checkpoint(path, model); })
      .def_property_readonly("kind", [](const TrainableModel& model) { return to_string(model.kind()); })
      .def_property_readonly("horizon", &TrainableModel::horizon)
      .def("count_params", &TrainableModel::count_params)
      .def("param_names", [](const TrainableModel& model) { return model.params().names(); })
      .def("checksum", [](const TrainableModel& model) { return model.params().checksum(); })
      .def(
          "predict",
          [](const TrainableModel& model, const MotionGraph& g, const Array& xs, const Array& ys, const Array& xq) {
            return to_array(model.predict(make_episode(g, xs, ys, xq, nullptr)));
          },
          py::arg("graph"), py::arg("xs"), py::arg("ys"), py::arg("xq"), "Query forecast (I_q, H, C)")
      .def(
          "embed",
          [](const TrainableModel& model, const MotionGraph& g, const Array& xs, const Array& ys) {
            const auto* net = dynamic_cast<const GraphHetNet*>(&model);
            if (net == nullptr) throw std::invalid_argument("embed: model has no task embedding");
            return to_array(net->infer_task(g, to_tensor(xs), to_tensor(ys)));
          },
          py::arg("graph"), py::arg("xs"), py::arg("ys"), "Per-sensor task embedding (C, 1, K)")
      .def(
          "loss",
          [](const TrainableModel& model, const MotionGraph& g, const Array& xs, const Array& ys, const Array& xq,
             const Array& yq) {
            Tape tape;
            const Binding b(tape, model.params());
            return model.episode_loss(b, make_episode(g, xs, ys, xq, &yq)).value()[0];
          },
          py::arg("graph"), py::arg("xs"), py::arg("ys"), py::arg("xq"), py::arg("yq"));

  m.def(
      "default_config", [] { return json_loads(run_config_json(RunConfig{})); },
      "Default run configuration as a dict");
  m.def(
      "train",
      [](const py::dict& config, const std::filesystem::path& out_dir) {
        const RunConfig cfg = run_config_from_json(json_dumps(config));
        RunOutcome outcome;
        {
          py::gil_scoped_release release;
          outcome = run_train(cfg, out_dir);
        }
        py::dict d;
        d["epoch_loss"] = outcome.train.epoch_loss;
        d["episodes_seen"] = outcome.train.episodes_seen;
        d["report"] = json_loads(report_json(outcome.report));
        return d;
      },
      py::arg("config"), py::arg("out_dir"), "Train and write a run directory; returns losses and the report");
  m.def(
      "evaluate",
      [](const py::dict& config, const std::filesystem::path& out_dir,
         const std::optional<std::filesystem::path>& checkpoint) {
        const RunConfig cfg = run_config_from_json(json_dumps(config));
        std::unique_ptr<Forecaster> model;
        if (checkpoint) {
          model = load_checkpoint(*checkpoint);
        } else {
          model = std::make_unique<ZeroVelocity>(cfg.horizon);
        }
        ForecastReport report;
        {
          py::gil_scoped_release release;
          report = run_eval(cfg, *model, out_dir);
        }
        return json_loads(report_json(report));
      },
      py::arg("config"), py::arg("out_dir"), py::arg("checkpoint") = py::none(),
      "Score a checkpoint (or the zero-velocity baseline when omitted)");
  m.def(
      "cap_ablation",
      [](const py::dict& config, const std::vector<std::size_t>& train_caps, const std::vector<std::size_t>& test_caps) {
        const RunConfig cfg = run_config_from_json(json_dumps(config));
        CapAblation ab;
        {
          py::gil_scoped_release release;
          const Workspace ws = load_workspace(cfg);
          ab = size_cap_ablation(train_caps, test_caps, cfg.model_config(), cfg.train_config(), ws.train_source(cfg),
                                 ws.test_source(cfg), cfg.test_actions, cfg.n_tasks, cfg.eval_seed);
        }
        py::dict d;
        d["train_caps"] = ab.train_caps;
        d["test_caps"] = ab.test_caps;
        d["actions"] = ab.actions;
        d["normalized"] = ab.normalized;
        d["raw"] = ab.raw;
        return d;
      },
      py::arg("config"), py::arg("train_caps"), py::arg("test_caps"),
      "One model per train cap scored at every test cap; MSE normalized per action");
}
