#include "ghn/run.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ghn {

using nlohmann::json;

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError("config: " + field + " " + what);
}

void check_actions(const std::vector<std::string>& actions, const std::string& field, bool allow_empty = false) {
  require(allow_empty || !actions.empty(), field, "must list at least one action");
  std::set<std::string> seen;
  for (const auto& a : actions) {
    require(!a.empty(), field, "contains an empty action name");
    require(seen.insert(a).second, field, "lists '" + a + "' twice");
  }
}

}  // namespace

void RunConfig::validate() const {
  require(coupling >= 0.0 && coupling <= 1.0, "coupling", "must be in [0, 1]");
  require(noise >= 0.0, "noise", "must be >= 0");
  require(sequences >= 1, "sequences", "must be >= 1");
  require(frames >= input_len + horizon, "frames", "must cover input_len + horizon");
  require(!train_subjects.empty(), "train_subjects", "must not be empty");
  require(!test_subjects.empty(), "test_subjects", "must not be empty");
  for (int s : test_subjects)
    for (int t : train_subjects) require(s != t, "test_subjects", "overlaps train_subjects at " + std::to_string(s));
  try {
    parse_model_kind(model);
    parse_graph_mode(mode);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  require(hidden >= 1, "hidden", "must be >= 1");
  require(horizon >= 1, "horizon", "must be >= 1");
  require(ds_inner_depth >= 1 && ds_outer_depth >= 1, "ds_inner_depth/ds_outer_depth", "must be >= 1");
  require(gcn_layers >= 1, "gcn_layers", "must be >= 1");
  require(gru_depth >= 1, "gru_depth", "must be >= 1");
  require(pad_width >= 1, "pad_width", "must be >= 1");
  require(p > 0.0 && p <= 1.0, "p", "must be in (0, 1]");
  require(min_vertices >= 1, "min_vertices", "must be >= 1");
  require(max_vertices == 0 || max_vertices >= min_vertices, "max_vertices", "must be 0 or >= min_vertices");
  require(support >= 1, "support", "must be >= 1");
  require(query >= 1, "query", "must be >= 1");
  require(input_len >= 1, "input_len", "must be >= 1");
  require(stride >= 1, "stride", "must be >= 1");
  require(lr > 0.0, "lr", "must be > 0");
  require(epochs >= 1, "epochs", "must be >= 1");
  require(batches_per_epoch >= 1, "batches_per_epoch", "must be >= 1");
  require(jobs >= 1, "jobs", "must be >= 1");
  check_actions(train_actions, "train_actions");
  check_actions(validation_actions, "validation_actions", true);
  for (const auto& a : validation_actions)
    for (const auto& t : train_actions) require(a != t, "validation_actions", "repeats training action '" + a + "'");
  require(validation_tasks >= 1, "validation_tasks", "must be >= 1");
  check_actions(test_actions, "test_actions");
  require(n_tasks >= 1, "n_tasks", "must be >= 1");
}

ModelConfig RunConfig::model_config() const {
  ModelConfig m;
  m.kind = parse_model_kind(model);
  m.hidden = hidden;
  m.horizon = horizon;
  m.ds_inner_depth = ds_inner_depth;
  m.ds_outer_depth = ds_outer_depth;
  m.gcn_layers = gcn_layers;
  m.gru_depth = gru_depth;
  m.residual = residual;
  m.pad_width = pad_width;
  m.seed = seed;
  return m;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.lr = lr;
  t.epochs = epochs;
  t.batches_per_epoch = batches_per_epoch;
  t.seed = seed;
  t.actions = train_actions;
  t.jobs = jobs;
  t.validation_actions = validation_actions;
  t.validation_tasks = validation_tasks;
  return t;
}

SamplerConfig RunConfig::sampler_config() const {
  SamplerConfig s;
  s.p = p;
  s.min_vertices = min_vertices;
  s.max_vertices = max_vertices;
  s.seed = seed;
  return s;
}

EpisodeShape RunConfig::shape() const { return EpisodeShape{support, query, input_len, horizon, stride}; }

#define GHN_RUN_FIELDS(X)                                                                                          \
  X(data_dir) X(graph) X(coupling) X(noise) X(sequences) X(frames) X(data_seed) X(train_subjects) X(test_subjects) \
  X(model) X(hidden) X(horizon) X(ds_inner_depth) X(ds_outer_depth) X(gcn_layers) X(gru_depth) X(residual)      \
  X(pad_width) X(mode) X(p) X(min_vertices) X(max_vertices) X(support) X(query) X(input_len) X(stride) X(lr)    \
  X(epochs) X(batches_per_epoch) X(seed) X(jobs) X(train_actions) X(validation_actions) X(validation_tasks)     \
  X(test_actions) X(n_tasks) X(eval_seed)

std::string run_config_json(const RunConfig& cfg) {
  json j;
#define GHN_PUT(name) j[#name] = cfg.name;
  GHN_RUN_FIELDS(GHN_PUT)
#undef GHN_PUT
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, RunConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
  std::set<std::string> known;
#define GHN_KNOW(name) known.insert(#name);
  GHN_RUN_FIELDS(GHN_KNOW)
#undef GHN_KNOW
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("config: unknown field '" + key + "'");
  }
#define GHN_GET(name)                                                                                   \
  if (j.contains(#name)) {                                                                              \
    try {                                                                                               \
      const auto& v = j.at(#name);                                                                      \
      if constexpr (std::is_unsigned_v<decltype(base.name)> && !std::is_same_v<decltype(base.name), bool>) {                                        \
        if (!v.is_number_unsigned()) throw ConfigError("config: " #name " must be a non-negative integer"); \
      }                                                                                                 \
      base.name = v.get<decltype(base.name)>();                                                         \
    } catch (const json::exception&) {                                                                  \
      throw ConfigError("config: field '" #name "' has the wrong type");                               \
    }                                                                                                   \
  }
  GHN_RUN_FIELDS(GHN_GET)
#undef GHN_GET
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(ss.str(), std::move(base));
}

TaskSource Workspace::train_source(const RunConfig& cfg) const {
  return TaskSource{&train, &host, cfg.sampler_config(), cfg.shape(), parse_graph_mode(cfg.mode)};
}

TaskSource Workspace::test_source(const RunConfig& cfg) const {
  return TaskSource{&test, &host, cfg.sampler_config(), cfg.shape(), parse_graph_mode(cfg.mode)};
}

Workspace load_workspace(const RunConfig& cfg) {
  cfg.validate();
  Workspace ws;
  ws.host = cfg.graph.empty() ? bundled_skeleton() : read_graph_file(cfg.graph);
  ws.host.validate();
  MotionCatalog all;
  if (cfg.data_dir.empty()) {
    all = make_synthetic_catalog(default_synthetic_actions(cfg.coupling, cfg.noise), ws.host, [&] {
      std::vector<int> s = cfg.train_subjects;
      s.insert(s.end(), cfg.test_subjects.begin(), cfg.test_subjects.end());
      return s;
    }(), cfg.sequences, cfg.frames, cfg.data_seed);
  } else {
    all = catalog_from(load_expmap_dir(cfg.data_dir));
    if (all.actions().empty()) throw DataError("data: no recordings found in " + cfg.data_dir);
  }
  if (all.sensor_count() != ws.host.size()) {
    throw DataError("data: recordings have " + std::to_string(all.sensor_count()) + " channels, graph has " +
                    std::to_string(ws.host.size()) + " vertices");
  }
  const MotionCatalog train_raw = all.subset(cfg.train_subjects);
  const MotionCatalog test_raw = all.subset(cfg.test_subjects);
  ws.norm = Normalizer::fit(train_raw.all());
  ws.train = train_raw.normalized(ws.norm);
  ws.test = test_raw.normalized(ws.norm);
  for (const auto& a : cfg.train_actions)
    if (!ws.train.has(a)) throw DataError("data: no training recordings for action '" + a + "'");
  for (const auto& a : cfg.validation_actions)
    if (!ws.train.has(a)) throw DataError("data: no recordings for validation action '" + a + "'");
  for (const auto& a : cfg.test_actions)
    if (!ws.test.has(a)) throw DataError("data: no test recordings for action '" + a + "'");
  return ws;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::vector<Episode> evaluation_episodes(const RunConfig& cfg, const Workspace& ws) {
  return sample_episodes(cfg.test_actions, ws.test_source(cfg), cfg.n_tasks, cfg.eval_seed);
}

namespace {

void write_reports(const ForecastReport& report, const std::filesystem::path& dir) {
  std::ostringstream csv;
  write_report_csv(csv, report);
  write_file_atomic(dir / "report.csv", csv.str());
  write_file_atomic(dir / "report.json", report_json(report) + "\n");
}

}  // namespace

RunOutcome run_train(const RunConfig& cfg, const std::filesystem::path& out_dir, const LogFn& log) {
  cfg.validate();
  const ModelConfig mc = cfg.model_config();
  if (mc.kind == ModelKind::zero_velocity) throw ConfigError("config: model zero-velocity has nothing to train");
  const Workspace ws = load_workspace(cfg);
  std::filesystem::create_directories(out_dir);
  write_file_atomic(out_dir / "config.json", run_config_json(cfg) + "\n");

  auto model = make_model(mc);
  if (log) {
    log("model " + cfg.model + " with " + std::to_string(model->count_params()) + " parameters, budget " +
        std::to_string(cfg.train_config().episode_budget()) + " episodes");
  }
  RunOutcome out;
  out.train = meta_train(*model, ws.train_source(cfg), cfg.train_config(), [&](std::size_t epoch, double loss) {
    if (log) log("epoch " + std::to_string(epoch) + " loss " + std::to_string(loss));
  });
  std::ostringstream losses;
  write_loss_csv(losses, out.train);
  write_file_atomic(out_dir / "losses.csv", losses.str());

  json extra;
  extra["run"] = json::parse(run_config_json(cfg));
  extra["episodes_seen"] = out.train.episodes_seen;
  extra["best_epoch"] = out.train.best_epoch;
  save_checkpoint(out_dir / "checkpoint.bin", *model, extra.dump());

  out.report = evaluate(*model, evaluation_episodes(cfg, ws), &ws.norm);
  write_reports(out.report, out_dir);
  return out;
}

ForecastReport run_eval(const RunConfig& cfg, const Forecaster& model, const std::filesystem::path& out_dir,
                        bool traces) {
  const Workspace ws = load_workspace(cfg);
  const auto episodes = evaluation_episodes(cfg, ws);
  ForecastReport report = evaluate(model, episodes, &ws.norm);
  std::filesystem::create_directories(out_dir);
  write_reports(report, out_dir);
  if (traces) {
    std::ostringstream csv;
    write_traces_csv(csv, model, episodes, &ws.norm);
    write_file_atomic(out_dir / "traces.csv", csv.str());
  }
  return report;
}

}  // namespace ghn
