#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "ghn/data.hpp"
#include "ghn/graph.hpp"
#include "ghn/tensor.hpp"

namespace ghn {

/// Settings of the connected induced-subgraph sampler.
struct SamplerConfig {
  /// Probability of including each not-yet-decided neighbor of a frontier vertex.
  double p = 0.64;
  std::size_t min_vertices = 1;
  /// 0 means no upper cap.
  std::size_t max_vertices = 0;
  std::uint64_t seed = 0;
  /// Resampling budget when the draw falls below min_vertices.
  std::size_t max_attempts = 100000;

  /// Throws std::invalid_argument unless 0 < p <= 1 and 1 <= min <= max <= host size.
  void validate(std::size_t host_size) const;
  std::size_t effective_max(std::size_t host_size) const { return max_vertices == 0 ? host_size : max_vertices; }
};

/// Grows a connected vertex set from a uniform random root by breadth-first
/// expansion: every neighbor not yet decided is included with probability p.
/// Expansion stops when the max cap is reached; draws below the min cap are
/// resampled. Returns positions in the host graph, sorted by host id.
std::vector<std::size_t> sample_vertex_set(const MotionGraph& full, const SamplerConfig& cfg, std::mt19937_64& rng);
/// Induced subgraph on sample_vertex_set.
MotionGraph sample_induced_subgraph(const MotionGraph& full, const SamplerConfig& cfg, std::mt19937_64& rng);

struct GraphStats {
  std::size_t samples = 0;
  double vertices_mean = 0.0;
  double vertices_std = 0.0;
  /// Degrees pooled over every vertex of every sample.
  double degree_mean = 0.0;
  double degree_std = 0.0;
  std::size_t unique = 0;
  double unique_fraction = 0.0;
};

/// Unbiased standard deviations; a single sample reports std 0. Task identity
/// is the sorted tuple of host vertex ids.
GraphStats subgraph_stats(const std::vector<MotionGraph>& samples);
GraphStats graph_stats(const MotionGraph& graph);
/// Streams `n` samples without keeping them.
GraphStats sample_stats(const MotionGraph& full, const SamplerConfig& cfg, std::size_t n);
/// Table-style one-line summary such as "26.8 ± 12.9 vertices, 3.9 ± 1.7 edges/vertex".
std::string format_stats(const GraphStats& s);

struct EpisodeShape {
  std::size_t support = 5;
  std::size_t query = 2;
  std::size_t input_len = 50;
  std::size_t horizon = 10;
  std::size_t stride = 1;

  std::size_t instances() const { return support + query; }
};

/// Location of a window: recording index within the action and start frame.
struct WindowRef {
  std::size_t recording = 0;
  std::size_t start = 0;

  friend bool operator==(const WindowRef&, const WindowRef&) = default;
};

/// One few-shot task over a sensor graph.
struct Episode {
  std::string action;
  MotionGraph graph;
  Tensor3 xs, ys, xq, yq;
  std::vector<WindowRef> support_windows;
  std::vector<WindowRef> query_windows;

  std::size_t sensors() const { return graph.size(); }
};

/// Samples support and query windows of `action` without replacement and
/// keeps the channels listed by graph.ids(), in that order.
Episode assemble_episode(const MotionGraph& graph, const std::string& action, const MotionCatalog& catalog,
                         const EpisodeShape& shape, std::mt19937_64& rng);

enum class GraphMode { heterogeneous, homogeneous };
GraphMode parse_graph_mode(const std::string& s);
std::string to_string(GraphMode mode);

/// Everything needed to draw tasks: data, host graph and sampling settings.
struct TaskSource {
  const MotionCatalog* catalog = nullptr;
  const MotionGraph* host = nullptr;
  SamplerConfig sampler;
  EpisodeShape shape;
  GraphMode mode = GraphMode::heterogeneous;
};

/// One episode per action in the given order. Heterogeneous mode samples a
/// fresh subgraph per episode; homogeneous mode uses the host graph.
std::vector<Episode> meta_batch(const std::vector<std::string>& actions, const TaskSource& source,
                                std::mt19937_64& rng);

/// Self-describing JSON dump with shapes, graph and arrays.
void write_episode(std::ostream& out, const Episode& ep);
Episode read_episode(std::istream& in);

}  // namespace ghn
