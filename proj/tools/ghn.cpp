#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "ghn/run.hpp"
#include "json.hpp"

using namespace ghn;
using nlohmann::json;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

// Flags that were given on the command line, collected as a JSON object so
// they can be layered over a config file with the same parser.
class Overrides {
 public:
  template <class T>
  void add(CLI::App* app, const std::string& field, const std::string& help, const std::string& alias = "") {
    auto holder = std::make_shared<T>();
    std::string flag = "--" + field;
    for (char& c : flag)
      if (c == '_') c = '-';
    if (!alias.empty()) flag += ",--" + alias;
    CLI::Option* opt = app->add_option(flag, *holder, help);
    if constexpr (std::is_same_v<T, std::vector<std::string>> || std::is_same_v<T, std::vector<int>>) {
      opt->delimiter(',');
    }
    setters_.push_back([=](json& j) {
      if (opt->count() > 0) j[field] = *holder;
    });
  }

  void add_flag(CLI::App* app, const std::string& flag, const std::string& field, const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    setters_.push_back([=](json& j) {
      if (opt->count() > 0) j[field] = true;
    });
  }

  std::string json_text() const {
    json j = json::object();
    for (const auto& s : setters_) s(j);
    return j.dump();
  }

 private:
  std::vector<std::function<void(json&)>> setters_;
};

void data_flags(CLI::App* app, Overrides& o) {
  o.add<std::string>(app, "data_dir", "Directory of exponential-map recordings (default: synthetic)");
  o.add<std::string>(app, "graph", "Sensor graph file (default: bundled 54-sensor skeleton)");
  o.add<double>(app, "coupling", "Synthetic phase coupling in [0, 1]");
  o.add<double>(app, "noise", "Synthetic noise standard deviation");
  o.add<std::size_t>(app, "sequences", "Synthetic recordings per subject and action");
  o.add<std::size_t>(app, "frames", "Frames per synthetic recording");
  o.add<std::uint64_t>(app, "data_seed", "Seed of the synthetic generator");
  o.add<std::vector<int>>(app, "train_subjects", "Comma-separated training subjects");
  o.add<std::vector<int>>(app, "test_subjects", "Comma-separated test subjects");
}

void task_flags(CLI::App* app, Overrides& o) {
  o.add<std::string>(app, "mode", "heterogeneous or homogeneous task graphs");
  o.add<double>(app, "p", "Neighbour inclusion probability of the subgraph sampler");
  o.add<std::size_t>(app, "min_vertices", "Minimum sampled subgraph size");
  o.add<std::size_t>(app, "max_vertices", "Maximum sampled subgraph size (0: no cap)");
  o.add<std::size_t>(app, "support", "Support instances per task");
  o.add<std::size_t>(app, "query", "Query instances per task");
  o.add<std::size_t>(app, "input_len", "Observed frames T");
  o.add<std::size_t>(app, "horizon", "Forecast frames H");
  o.add<std::size_t>(app, "stride", "Window stride");
}

void eval_flags(CLI::App* app, Overrides& o) {
  o.add<std::vector<std::string>>(app, "test_actions", "Comma-separated held-out actions", "actions");
  o.add<std::size_t>(app, "n_tasks", "Evaluation tasks per action");
  o.add<std::uint64_t>(app, "eval_seed", "Seed of the evaluation task draw");
}

RunConfig layered(const RunConfig& base, const std::string& config_file, const Overrides& o) {
  RunConfig cfg = base;
  if (!config_file.empty()) cfg = load_run_config(config_file, cfg);
  cfg = run_config_from_json(o.json_text(), cfg);
  cfg.validate();
  return cfg;
}

void print_report(const ForecastReport& r) {
  std::printf("%-16s", r.model.c_str());
  for (std::size_t ms : r.horizons_ms) std::printf("%10zu", ms);
  std::printf("%10s\n", "Avg");
  auto row = [](const MetricRow& m) {
    std::printf("%-16s", m.action.c_str());
    for (double v : m.mae) std::printf("%10.4f", v);
    std::printf("%10.4f\n", m.mae_avg());
  };
  for (const auto& m : r.actions) row(m);
  row(r.average);
}

int cmd_train(const RunConfig& cfg, const std::string& out, bool quiet) {
  const auto outcome = run_train(cfg, out, [&](const std::string& line) {
    if (!quiet) std::cerr << line << '\n';
  });
  if (!quiet) print_report(outcome.report);
  std::cout << "wrote " << out << '\n';
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& model_flag, const std::string& config_file,
             const Overrides& o, const std::string& out, bool traces) {
  RunConfig base;
  std::unique_ptr<Forecaster> forecaster;
  if (!checkpoint.empty()) {
    auto trained = load_checkpoint(checkpoint);
    const json header = json::parse(read_checkpoint_header(checkpoint));
    if (header.contains("extra") && header["extra"].contains("run")) {
      base = run_config_from_json(header["extra"]["run"].dump());
    }
    if (!model_flag.empty() && parse_model_kind(model_flag) != trained->kind()) {
      throw ConfigError("eval: checkpoint holds a " + to_string(trained->kind()) + " model, --model asks for " +
                        model_flag);
    }
    forecaster = std::move(trained);
  } else {
    if (model_flag.empty()) throw ConfigError("eval: give --checkpoint or --model zero-velocity");
    if (parse_model_kind(model_flag) != ModelKind::zero_velocity) {
      throw ConfigError("eval: model " + model_flag + " needs a --checkpoint");
    }
  }
  const RunConfig cfg = layered(base, config_file, o);
  if (!forecaster) forecaster = std::make_unique<ZeroVelocity>(cfg.horizon);
  if (forecaster->horizon() != cfg.horizon) {
    throw ConfigError("eval: model forecasts " + std::to_string(forecaster->horizon()) + " frames, config horizon is " +
                      std::to_string(cfg.horizon));
  }
  const auto report = run_eval(cfg, *forecaster, out, traces);
  print_report(report);
  return 0;
}

int cmd_sample_stats(const std::string& graph_file, const SamplerConfig& sampler, std::size_t n, bool as_json) {
  const MotionGraph host = graph_file.empty() ? bundled_skeleton() : read_graph_file(graph_file);
  host.validate();
  sampler.validate(host.size());
  const GraphStats full = graph_stats(host);
  const GraphStats sampled = sample_stats(host, sampler, n);
  if (as_json) {
    auto js = [](const GraphStats& s) {
      return json{{"samples", s.samples},         {"vertices_mean", s.vertices_mean}, {"vertices_std", s.vertices_std},
                  {"degree_mean", s.degree_mean}, {"degree_std", s.degree_std},       {"unique", s.unique},
                  {"unique_fraction", s.unique_fraction}};
    };
    std::cout << json{{"full", js(full)}, {"sampled", js(sampled)}, {"p", sampler.p}}.dump(2) << '\n';
    return 0;
  }
  std::cout << "full graph:   " << format_stats(full) << '\n';
  std::cout << "subgraphs:    " << format_stats(sampled) << '\n';
  std::cout << "unique tasks: " << sampled.unique << " of " << sampled.samples << " ("
            << sampled.unique_fraction * 100.0 << "%)\n";
  return 0;
}

int cmd_gen_synthetic(const RunConfig& cfg, const std::string& out, std::size_t episodes) {
  const MotionGraph host = cfg.graph.empty() ? bundled_skeleton() : read_graph_file(cfg.graph);
  std::vector<int> subjects = cfg.train_subjects;
  subjects.insert(subjects.end(), cfg.test_subjects.begin(), cfg.test_subjects.end());
  const MotionCatalog catalog = make_synthetic_catalog(default_synthetic_actions(cfg.coupling, cfg.noise), host,
                                                       subjects, cfg.sequences, cfg.frames, cfg.data_seed);
  std::filesystem::create_directories(out);
  std::size_t files = 0;
  for (const auto& action : catalog.actions())
    for (const auto& rec : catalog.recordings(action)) {
      const auto name = "S" + std::to_string(rec.subject) + "_" + action + "_" + std::to_string(rec.sequence) + ".txt";
      write_expmap_file(std::filesystem::path(out) / name, rec.frames);
      ++files;
    }
  {
    std::ostringstream g;
    write_graph(g, host);
    write_file_atomic(std::filesystem::path(out) / "graph.txt", g.str());
  }
  if (episodes > 0) {
    const auto dir = std::filesystem::path(out) / "episodes";
    std::filesystem::create_directories(dir);
    const MotionCatalog train = catalog.subset(cfg.train_subjects);
    TaskSource src{&train, &host, cfg.sampler_config(), cfg.shape(), parse_graph_mode(cfg.mode)};
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t e = 0; e < episodes; ++e) {
      const auto batch = meta_batch({cfg.train_actions[e % cfg.train_actions.size()]}, src, rng);
      std::ostringstream os;
      write_episode(os, batch.front());
      char name[48];
      std::snprintf(name, sizeof name, "episode_%04zu.json", e);
      write_file_atomic(dir / name, os.str());
    }
  }
  std::cout << "wrote " << files << " recordings to " << out << '\n';
  return 0;
}

int cmd_inspect(const std::string& path, bool as_json) {
  const json header = json::parse(read_checkpoint_header(path));
  if (as_json) {
    std::cout << header.dump(2) << '\n';
    return 0;
  }
  load_checkpoint(path);
  std::cout << "model:      " << header["model"].value("kind", std::string("?")) << '\n';
  std::cout << "parameters: " << header["scalars"].get<std::uint64_t>() << '\n';
  std::cout << "seed:       " << header["seed"].get<std::uint64_t>() << '\n';
  for (const auto& p : header["params"]) {
    const auto dims = p["dims"].get<std::vector<std::size_t>>();
    std::cout << "  " << p["name"].get<std::string>() << "  " << dims[1] << " x " << dims[2] << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot motion forecasting on heterogeneous sensor graphs"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "Meta-train a model and write a run directory");
  std::string train_config, train_out;
  bool quiet = false, synthetic = false;
  Overrides train_o;
  train->add_option("--config", train_config, "JSON run configuration");
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_flag("--quiet", quiet, "Only print the run directory");
  train->add_flag("--synthetic", synthetic, "Use generated recordings (the default without --data-dir)");
  data_flags(train, train_o);
  task_flags(train, train_o);
  train_o.add<std::string>(train, "model", "graphhetnet, ds-only or supervised-gru");
  train_o.add<std::size_t>(train, "hidden", "GRU units K");
  train_o.add<std::size_t>(train, "ds_inner_depth", "GRUs in each deep-set inner network");
  train_o.add<std::size_t>(train, "ds_outer_depth", "GRUs in each deep-set outer network");
  train_o.add<std::size_t>(train, "gcn_layers", "Graph layers per graph block");
  train_o.add<std::size_t>(train, "gru_depth", "GRUs in the forecasting block");
  train_o.add_flag(train, "--residual", "residual", "Add the last observed frame to the forecast");
  train_o.add<std::size_t>(train, "pad_width", "Channel width of the supervised baseline");
  train_o.add<double>(train, "lr", "Adam learning rate");
  train_o.add<std::size_t>(train, "epochs", "Training epochs");
  train_o.add<std::size_t>(train, "batches_per_epoch", "Meta-batches per epoch");
  train_o.add<std::uint64_t>(train, "seed", "Run seed");
  train_o.add<std::size_t>(train, "jobs", "Worker threads per meta-batch");
  train_o.add<std::vector<std::string>>(train, "train_actions", "Comma-separated meta-train actions");
  train_o.add<std::vector<std::string>>(train, "validation_actions", "Held-out actions for best-epoch selection");
  train_o.add<std::size_t>(train, "validation_tasks", "Validation tasks per action");
  eval_flags(train, train_o);

  auto* eval = app.add_subcommand("eval", "Score a checkpoint or a baseline on held-out actions");
  std::string checkpoint, model_flag, eval_config, eval_out;
  bool traces = false;
  Overrides eval_o;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint written by train");
  eval->add_option("--model", model_flag, "Model kind; zero-velocity needs no checkpoint");
  eval->add_option("--config", eval_config, "JSON run configuration");
  eval->add_option("--out", eval_out, "Report directory")->required();
  eval->add_flag("--traces", traces, "Also write per-sensor forecast traces");
  data_flags(eval, eval_o);
  task_flags(eval, eval_o);
  eval_flags(eval, eval_o);

  auto* stats = app.add_subcommand("sample-stats", "Statistics of sampled induced subgraphs");
  std::string stats_graph;
  SamplerConfig sampler;
  std::size_t n = 10000;
  bool stats_json = false;
  stats->add_option("--graph", stats_graph, "Graph file (default: bundled skeleton)");
  stats->add_option("--p", sampler.p, "Neighbour inclusion probability");
  stats->add_option("--min-vertices", sampler.min_vertices, "Minimum subgraph size");
  stats->add_option("--max-vertices", sampler.max_vertices, "Maximum subgraph size (0: no cap)");
  stats->add_option("--seed", sampler.seed, "Sampler seed");
  stats->add_option("-n,--samples", n, "Number of subgraphs")->check(CLI::PositiveNumber);
  stats->add_flag("--json", stats_json, "Print JSON");

  auto* gen = app.add_subcommand("gen-synthetic", "Write synthetic recordings in the exponential-map text format");
  std::string gen_config, gen_out;
  std::size_t episodes = 0;
  Overrides gen_o;
  gen->add_option("--config", gen_config, "JSON run configuration");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--episodes", episodes, "Also dump this many sampled episodes as JSON");
  data_flags(gen, gen_o);
  task_flags(gen, gen_o);
  gen_o.add<std::uint64_t>(gen, "seed", "Episode sampling seed");

  auto* inspect = app.add_subcommand("inspect-checkpoint", "Print a checkpoint's header");
  std::string inspect_path;
  bool inspect_json = false;
  inspect->add_option("checkpoint", inspect_path, "Checkpoint file")->required();
  inspect->add_flag("--json", inspect_json, "Print the raw JSON header");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*train) return cmd_train(layered({}, train_config, train_o), train_out, quiet);
    if (*eval) return cmd_eval(checkpoint, model_flag, eval_config, eval_o, eval_out, traces);
    if (*stats) return cmd_sample_stats(stats_graph, sampler, n, stats_json);
    if (*gen) return cmd_gen_synthetic(layered({}, gen_config, gen_o), gen_out, episodes);
    if (*inspect) return cmd_inspect(inspect_path, inspect_json);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
