#include "ghn/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "json.hpp"

namespace ghn {

namespace {

struct IdTupleHash {
  std::size_t operator()(const std::vector<std::size_t>& ids) const {
    std::uint64_t h = 1469598103934665603ULL;
    for (std::size_t v : ids) {
      h ^= static_cast<std::uint64_t>(v) + 0x9e3779b97f4a7c15ULL;
      h *= 1099511628211ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

struct Moments {
  double sum = 0.0;
  double sq = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    sq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : 0.0; }
  double stddev() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = (sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1);
    return var > 0.0 ? std::sqrt(var) : 0.0;
  }
};

class StatsAccumulator {
 public:
  void add(const MotionGraph& g) {
    vertices_.add(static_cast<double>(g.size()));
    for (std::size_t v = 0; v < g.size(); ++v) degrees_.add(static_cast<double>(g.degree(v)));
    std::vector<std::size_t> key = g.ids();
    std::sort(key.begin(), key.end());
    seen_.insert(std::move(key));
  }
  GraphStats finish() const {
    GraphStats s;
    s.samples = vertices_.n;
    s.vertices_mean = vertices_.mean();
    s.vertices_std = vertices_.stddev();
    s.degree_mean = degrees_.mean();
    s.degree_std = degrees_.stddev();
    s.unique = seen_.size();
    s.unique_fraction = s.samples ? static_cast<double>(s.unique) / static_cast<double>(s.samples) : 0.0;
    return s;
  }

 private:
  Moments vertices_, degrees_;
  std::unordered_set<std::vector<std::size_t>, IdTupleHash> seen_;
};

}  // namespace

void SamplerConfig::validate(std::size_t host_size) const {
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("sampler: p must lie in (0, 1]");
  if (min_vertices < 1) throw std::invalid_argument("sampler: min vertices must be >= 1");
  const std::size_t max = effective_max(host_size);
  if (min_vertices > max) throw std::invalid_argument("sampler: min vertices exceeds max vertices");
  if (max > host_size || min_vertices > host_size) {
    throw std::invalid_argument("sampler: caps exceed the host graph size " + std::to_string(host_size));
  }
  if (max_attempts < 1) throw std::invalid_argument("sampler: max attempts must be >= 1");
}

std::vector<std::size_t> sample_vertex_set(const MotionGraph& full, const SamplerConfig& cfg, std::mt19937_64& rng) {
  const std::size_t n = full.size();
  if (n == 0) throw GraphError("sampler: empty host graph");
  cfg.validate(n);
  const std::size_t cap = cfg.effective_max(n);
  std::uniform_int_distribution<std::size_t> pick_root(0, n - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::uint8_t> decided(n);
  std::vector<std::size_t> chosen;
  std::deque<std::size_t> frontier;
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    std::fill(decided.begin(), decided.end(), 0);
    chosen.clear();
    frontier.clear();
    const std::size_t root = pick_root(rng);
    decided[root] = 1;
    chosen.push_back(root);
    frontier.push_back(root);
    while (!frontier.empty() && chosen.size() < cap) {
      const std::size_t v = frontier.front();
      frontier.pop_front();
      for (std::size_t w : full.neighbors(v)) {
        if (decided[w]) continue;
        decided[w] = 1;
        if (cfg.p >= 1.0 || unit(rng) < cfg.p) {
          chosen.push_back(w);
          frontier.push_back(w);
          if (chosen.size() == cap) break;
        }
      }
    }
    if (chosen.size() >= cfg.min_vertices) {
      std::sort(chosen.begin(), chosen.end(),
                [&](std::size_t a, std::size_t b) { return full.ids()[a] < full.ids()[b]; });
      return chosen;
    }
  }
  throw GraphError("sampler: no subgraph with at least " + std::to_string(cfg.min_vertices) + " vertices after " +
                   std::to_string(cfg.max_attempts) + " attempts");
}

MotionGraph sample_induced_subgraph(const MotionGraph& full, const SamplerConfig& cfg, std::mt19937_64& rng) {
  const std::vector<std::size_t> vertices = sample_vertex_set(full, cfg, rng);
  return full.induced(vertices);
}

GraphStats subgraph_stats(const std::vector<MotionGraph>& samples) {
  StatsAccumulator acc;
  for (const auto& g : samples) acc.add(g);
  return acc.finish();
}

GraphStats graph_stats(const MotionGraph& graph) { return subgraph_stats({graph}); }

GraphStats sample_stats(const MotionGraph& full, const SamplerConfig& cfg, std::size_t n) {
  std::mt19937_64 rng(cfg.seed);
  StatsAccumulator acc;
  for (std::size_t k = 0; k < n; ++k) acc.add(sample_induced_subgraph(full, cfg, rng));
  return acc.finish();
}

std::string format_stats(const GraphStats& s) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << s.vertices_mean << " ± " << s.vertices_std << " vertices, "
     << s.degree_mean << " ± " << s.degree_std << " edges/vertex";
  return os.str();
}

Episode assemble_episode(const MotionGraph& graph, const std::string& action, const MotionCatalog& catalog,
                         const EpisodeShape& shape, std::mt19937_64& rng) {
  if (shape.support < 1 || shape.query < 1 || shape.input_len < 1 || shape.horizon < 1 || shape.stride < 1) {
    throw std::invalid_argument("episode: support, query, T, H and stride must be >= 1");
  }
  if (graph.size() == 0) throw GraphError("episode: empty graph");
  for (std::size_t id : graph.ids())
    if (id >= catalog.sensor_count()) {
      throw DataError("episode: graph vertex id " + std::to_string(id) + " exceeds the " +
                      std::to_string(catalog.sensor_count()) + " data channels");
    }
  const auto& recs = catalog.recordings(action);
  std::vector<std::size_t> offsets{0};
  for (const auto& r : recs)
    offsets.push_back(offsets.back() + window_count(r.frame_count(), shape.input_len, shape.horizon, shape.stride));
  const std::size_t total = offsets.back();
  const std::size_t need = shape.instances();
  if (total < need) {
    throw DataError("episode: action '" + action + "' has " + std::to_string(total) + " windows, " +
                    std::to_string(need) + " required");
  }
  // Distinct draws without replacement (Floyd's algorithm keeps the draw count fixed).
  std::vector<std::size_t> picks;
  std::unordered_set<std::size_t> taken;
  for (std::size_t j = total - need; j < total; ++j) {
    std::uniform_int_distribution<std::size_t> dist(0, j);
    const std::size_t t = dist(rng);
    const std::size_t v = taken.count(t) ? j : t;
    taken.insert(v);
    picks.push_back(v);
  }
  std::shuffle(picks.begin(), picks.end(), rng);

  const std::size_t c_count = graph.size();
  Episode ep;
  ep.action = action;
  ep.graph = graph;
  ep.xs = Tensor3(shape.support, shape.input_len, c_count);
  ep.ys = Tensor3(shape.support, shape.horizon, c_count);
  ep.xq = Tensor3(shape.query, shape.input_len, c_count);
  ep.yq = Tensor3(shape.query, shape.horizon, c_count);
  for (std::size_t k = 0; k < need; ++k) {
    const std::size_t flat = picks[k];
    const std::size_t rec = static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), flat) -
                                                     offsets.begin()) - 1;
    const WindowRef ref{rec, (flat - offsets[rec]) * shape.stride};
    const bool support = k < shape.support;
    const std::size_t i = support ? k : k - shape.support;
    Tensor3& x = support ? ep.xs : ep.xq;
    Tensor3& y = support ? ep.ys : ep.yq;
    const MotionRecording& r = recs[rec];
    for (std::size_t c = 0; c < c_count; ++c) {
      const std::size_t src = graph.ids()[c];
      for (std::size_t t = 0; t < shape.input_len; ++t) x(i, t, c) = r.at(ref.start + t, src);
      for (std::size_t t = 0; t < shape.horizon; ++t) y(i, t, c) = r.at(ref.start + shape.input_len + t, src);
    }
    (support ? ep.support_windows : ep.query_windows).push_back(ref);
  }
  return ep;
}

GraphMode parse_graph_mode(const std::string& s) {
  if (s == "heterogeneous") return GraphMode::heterogeneous;
  if (s == "homogeneous") return GraphMode::homogeneous;
  throw std::invalid_argument("unknown graph mode '" + s + "' (expected heterogeneous or homogeneous)");
}

std::string to_string(GraphMode mode) {
  return mode == GraphMode::heterogeneous ? "heterogeneous" : "homogeneous";
}

std::vector<Episode> meta_batch(const std::vector<std::string>& actions, const TaskSource& source,
                                std::mt19937_64& rng) {
  if (actions.empty()) throw std::invalid_argument("meta batch: empty action list");
  if (source.catalog == nullptr || source.host == nullptr) throw std::invalid_argument("meta batch: missing source");
  std::vector<Episode> out;
  out.reserve(actions.size());
  for (const auto& action : actions) {
    const MotionGraph graph = source.mode == GraphMode::heterogeneous
                                  ? sample_induced_subgraph(*source.host, source.sampler, rng)
                                  : *source.host;
    out.push_back(assemble_episode(graph, action, *source.catalog, source.shape, rng));
  }
  return out;
}

namespace {

using nlohmann::json;

json tensor_json(const Tensor3& t) {
  return json{{"dims", {t.dims().n, t.dims().t, t.dims().c}}, {"data", t.storage()}};
}

Tensor3 tensor_from(const json& j) {
  const auto dims = j.at("dims").get<std::vector<std::size_t>>();
  if (dims.size() != 3) throw DataError("episode dump: tensor dims must have three entries");
  return Tensor3(Dims{dims[0], dims[1], dims[2]}, j.at("data").get<std::vector<double>>());
}

json windows_json(const std::vector<WindowRef>& ws) {
  json arr = json::array();
  for (const auto& w : ws) arr.push_back({w.recording, w.start});
  return arr;
}

std::vector<WindowRef> windows_from(const json& j) {
  std::vector<WindowRef> out;
  for (const auto& w : j) out.push_back(WindowRef{w.at(0).get<std::size_t>(), w.at(1).get<std::size_t>()});
  return out;
}

}  // namespace

void write_episode(std::ostream& out, const Episode& ep) {
  json edges = json::array();
  for (std::size_t a = 0; a < ep.graph.size(); ++a)
    for (std::size_t b : ep.graph.neighbors(a))
      if (a < b) edges.push_back({a, b});
  const json j{{"format", "ghn-episode"},
               {"version", 1},
               {"action", ep.action},
               {"graph", {{"ids", ep.graph.ids()}, {"labels", ep.graph.labels()}, {"edges", edges}}},
               {"support_windows", windows_json(ep.support_windows)},
               {"query_windows", windows_json(ep.query_windows)},
               {"xs", tensor_json(ep.xs)},
               {"ys", tensor_json(ep.ys)},
               {"xq", tensor_json(ep.xq)},
               {"yq", tensor_json(ep.yq)}};
  out << j.dump() << '\n';
}

Episode read_episode(std::istream& in) {
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("episode dump: ") + e.what());
  }
  if (j.value("format", "") != "ghn-episode" || j.value("version", 0) != 1) {
    throw DataError("episode dump: unsupported format or version");
  }
  Episode ep;
  ep.action = j.at("action").get<std::string>();
  const auto& g = j.at("graph");
  auto ids = g.at("ids").get<std::vector<std::size_t>>();
  auto labels = g.at("labels").get<std::vector<std::string>>();
  const std::size_t n = ids.size();
  std::vector<std::uint8_t> adj(n * n, 0);
  for (const auto& e : g.at("edges")) {
    const auto a = e.at(0).get<std::size_t>(), b = e.at(1).get<std::size_t>();
    if (a >= n || b >= n) throw DataError("episode dump: edge endpoint out of range");
    adj[a * n + b] = adj[b * n + a] = 1;
  }
  ep.graph = MotionGraph(std::move(ids), std::move(labels), std::move(adj));
  ep.support_windows = windows_from(j.at("support_windows"));
  ep.query_windows = windows_from(j.at("query_windows"));
  ep.xs = tensor_from(j.at("xs"));
  ep.ys = tensor_from(j.at("ys"));
  ep.xq = tensor_from(j.at("xq"));
  ep.yq = tensor_from(j.at("yq"));
  return ep;
}

}  // namespace ghn
