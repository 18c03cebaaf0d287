#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ghn/tasks.hpp"

using namespace ghn;

namespace {

const MotionGraph& skeleton() {
  static const MotionGraph g = read_graph_file(GHN_DATA_DIR "/h36m_skeleton.graph");
  return g;
}

bool is_induced(const MotionGraph& sub, const MotionGraph& host) {
  for (std::size_t a = 0; a < sub.size(); ++a)
    for (std::size_t b = 0; b < sub.size(); ++b)
      if (sub.adjacent(a, b) != host.adjacent(sub.ids()[a], sub.ids()[b])) return false;
  return true;
}

MotionCatalog small_catalog(const MotionGraph& host, std::size_t frames = 90) {
  return make_synthetic_catalog(default_synthetic_actions(), host, {1, 5}, 1, frames, 3);
}

}  // namespace

TEST_CASE("shipped skeleton reproduces the full-graph statistics") {
  const GraphStats s = graph_stats(skeleton());
  CHECK(s.vertices_mean == 54.0);
  CHECK(s.vertices_std == 0.0);
  CHECK(std::round(s.degree_mean * 10) / 10 == doctest::Approx(6.6));
  CHECK(std::round(s.degree_std * 10) / 10 == doctest::Approx(3.1));
  CHECK(skeleton().is_connected());
  CHECK(skeleton().is_symmetric());
  CHECK(format_stats(s) == "54.0 ± 0.0 vertices, 6.6 ± 3.1 edges/vertex");
}

TEST_CASE("sampler saturates at p = 1 and honours a unit cap") {
  std::mt19937_64 rng(1);
  SamplerConfig full;
  full.p = 1.0;
  for (int k = 0; k < 20; ++k) CHECK(sample_induced_subgraph(skeleton(), full, rng) == skeleton());
  SamplerConfig one;
  one.max_vertices = 1;
  for (int k = 0; k < 20; ++k) {
    const MotionGraph g = sample_induced_subgraph(skeleton(), one, rng);
    CHECK(g.size() == 1);
    CHECK(g.edge_count() == 0);
  }
}

TEST_CASE("sampled subgraphs are connected, induced and within caps") {
  std::mt19937_64 rng(7);
  SamplerConfig cfg;
  cfg.min_vertices = 5;
  cfg.max_vertices = 35;
  for (int k = 0; k < 2000; ++k) {
    const MotionGraph g = sample_induced_subgraph(skeleton(), cfg, rng);
    CHECK(g.is_connected());
    CHECK(g.is_symmetric());
    CHECK(is_induced(g, skeleton()));
    CHECK(g.size() >= 5);
    CHECK(g.size() <= 35);
    CHECK(std::is_sorted(g.ids().begin(), g.ids().end()));
  }
}

TEST_CASE("sampler rejects unsatisfiable caps") {
  std::mt19937_64 rng(1);
  SamplerConfig cfg;
  cfg.min_vertices = 55;
  CHECK_THROWS_AS(sample_induced_subgraph(skeleton(), cfg, rng), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.p = 0.0;
  CHECK_THROWS_AS(sample_induced_subgraph(skeleton(), cfg, rng), std::invalid_argument);
  cfg = SamplerConfig{};
  cfg.min_vertices = 10;
  cfg.max_vertices = 5;
  CHECK_THROWS_AS(sample_induced_subgraph(skeleton(), cfg, rng), std::invalid_argument);
  // Reachable caps but a tiny budget with tiny p exhausts the attempts.
  cfg = SamplerConfig{};
  cfg.p = 1e-9;
  cfg.min_vertices = 50;
  cfg.max_attempts = 3;
  CHECK_THROWS_AS(sample_induced_subgraph(skeleton(), cfg, rng), GraphError);
}

TEST_CASE("sampling is a pure function of the seed") {
  SamplerConfig cfg;
  std::mt19937_64 a(99), b(99);
  for (int k = 0; k < 100; ++k) CHECK(sample_induced_subgraph(skeleton(), cfg, a) == sample_induced_subgraph(skeleton(), cfg, b));
}

TEST_CASE("uniqueness estimator matches a brute-force set of sets") {
  SamplerConfig cfg;
  std::mt19937_64 rng(5);
  std::vector<MotionGraph> samples;
  std::set<std::set<std::size_t>> brute;
  for (int k = 0; k < 1000; ++k) {
    cfg.max_vertices = k % 3 == 0 ? 3 : 0;  // force some repeats
    samples.push_back(sample_induced_subgraph(skeleton(), cfg, rng));
    brute.insert(std::set<std::size_t>(samples.back().ids().begin(), samples.back().ids().end()));
  }
  const GraphStats s = subgraph_stats(samples);
  CHECK(s.unique == brute.size());
  CHECK(s.unique < 1000);
  CHECK(s.unique_fraction == doctest::Approx(static_cast<double>(brute.size()) / 1000.0));
}

TEST_CASE("identical samples count once") {
  const MotionGraph g = MotionGraph::path(3);
  const GraphStats s = subgraph_stats({g, g});
  CHECK(s.unique_fraction == 0.5);
  CHECK(subgraph_stats({g}).unique_fraction == 1.0);
  // Unbiased std over {2, 4} vertices is sqrt(2).
  const GraphStats t = subgraph_stats({MotionGraph::path(2), MotionGraph::path(4)});
  CHECK(t.vertices_mean == 3.0);
  CHECK(t.vertices_std == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("calibrated sampler matches the sampled-task size") {
  SamplerConfig cfg;
  cfg.seed = 2024;
  const GraphStats s = sample_stats(skeleton(), cfg, 10000);
  CHECK(s.vertices_mean > 26.8 * 0.8);
  CHECK(s.vertices_mean < 26.8 * 1.2);
  CHECK(s.unique_fraction > 0.85);
}

TEST_CASE("episode shapes and disjoint windows") {
  const MotionCatalog cat = small_catalog(skeleton());
  std::mt19937_64 rng(3);
  SamplerConfig cfg;
  const MotionGraph g = sample_induced_subgraph(skeleton(), cfg, rng);
  const Episode ep = assemble_episode(g, "walking", cat, EpisodeShape{}, rng);
  const std::size_t c = g.size();
  CHECK(ep.xs.dims() == Dims{5, 50, c});
  CHECK(ep.ys.dims() == Dims{5, 10, c});
  CHECK(ep.xq.dims() == Dims{2, 50, c});
  CHECK(ep.yq.dims() == Dims{2, 10, c});
  for (const auto& s : ep.support_windows)
    CHECK(std::find(ep.query_windows.begin(), ep.query_windows.end(), s) == ep.query_windows.end());
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (const auto& w : ep.support_windows) all.emplace_back(w.recording, w.start);
  for (const auto& w : ep.query_windows) all.emplace_back(w.recording, w.start);
  std::sort(all.begin(), all.end());
  CHECK(std::adjacent_find(all.begin(), all.end()) == all.end());
}

TEST_CASE("episode channels follow the graph's vertex list") {
  const MotionCatalog cat = small_catalog(skeleton());
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const MotionGraph g = sample_induced_subgraph(skeleton(), SamplerConfig{}, rng);
    const Episode ep = assemble_episode(g, "eating", cat, EpisodeShape{}, rng);
    const auto& recs = cat.recordings("eating");
    for (std::size_t i = 0; i < 5; ++i) {
      const WindowRef w = ep.support_windows[i];
      for (std::size_t j = 0; j < g.size(); ++j) {
        for (std::size_t t = 0; t < 50; ++t) CHECK(ep.xs(i, t, j) == recs[w.recording].at(w.start + t, g.ids()[j]));
        for (std::size_t t = 0; t < 10; ++t)
          CHECK(ep.ys(i, t, j) == recs[w.recording].at(w.start + 50 + t, g.ids()[j]));
      }
    }
    for (std::size_t i = 0; i < 2; ++i) {
      const WindowRef w = ep.query_windows[i];
      for (std::size_t j = 0; j < g.size(); ++j)
        CHECK(ep.yq(i, 9, j) == recs[w.recording].at(w.start + 59, g.ids()[j]));
    }
  }
}

TEST_CASE("too few windows is reported with the action") {
  const MotionCatalog cat = make_synthetic_catalog(default_synthetic_actions(), MotionGraph::path(4), {1}, 1, 62, 1);
  std::mt19937_64 rng(1);
  CHECK_THROWS_WITH_AS(assemble_episode(MotionGraph::path(4), "walking", cat, EpisodeShape{}, rng),
                       doctest::Contains("'walking' has 3 windows, 7 required"), DataError);
  CHECK_THROWS_AS(assemble_episode(MotionGraph::path(4), "flying", cat, EpisodeShape{}, rng), DataError);
}

TEST_CASE("meta batches hold one task per action") {
  const MotionCatalog cat = small_catalog(skeleton());
  TaskSource src{&cat, &skeleton(), SamplerConfig{}, EpisodeShape{}, GraphMode::heterogeneous};
  std::mt19937_64 rng(8);
  const auto actions = default_train_actions();
  const auto batch = meta_batch(actions, src, rng);
  REQUIRE(batch.size() == 11);
  for (std::size_t k = 0; k < 11; ++k) CHECK(batch[k].action == actions[k]);

  src.mode = GraphMode::homogeneous;
  for (const auto& ep : meta_batch(actions, src, rng)) CHECK(ep.graph == skeleton());

  src.mode = GraphMode::heterogeneous;
  std::mt19937_64 a(4), b(4);
  const auto x = meta_batch(actions, src, a);
  const auto y = meta_batch(actions, src, b);
  for (std::size_t k = 0; k < 11; ++k) {
    CHECK(x[k].graph == y[k].graph);
    CHECK(x[k].xq == y[k].xq);
  }
  CHECK_THROWS_AS(meta_batch({}, src, rng), std::invalid_argument);
  CHECK(parse_graph_mode("homogeneous") == GraphMode::homogeneous);
  CHECK_THROWS_AS(parse_graph_mode("mixed"), std::invalid_argument);
}

TEST_CASE("episode dump round trip") {
  const MotionCatalog cat = small_catalog(skeleton());
  std::mt19937_64 rng(6);
  const MotionGraph g = sample_induced_subgraph(skeleton(), SamplerConfig{}, rng);
  const Episode ep = assemble_episode(g, "smoking", cat, EpisodeShape{}, rng);
  std::stringstream buf;
  write_episode(buf, ep);
  const Episode back = read_episode(buf);
  CHECK(back.action == ep.action);
  CHECK(back.graph == ep.graph);
  CHECK(back.xs == ep.xs);
  CHECK(back.ys == ep.ys);
  CHECK(back.xq == ep.xq);
  CHECK(back.yq == ep.yq);
  CHECK(back.support_windows == ep.support_windows);
  std::stringstream bad("{\"format\": \"other\"}");
  CHECK_THROWS_AS(read_episode(bad), DataError);
}
