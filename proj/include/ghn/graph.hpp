#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ghn {

class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A sensor graph: vertex ids of the host skeleton, labels, and a dense 0/1
/// adjacency matrix. Vertex position k in this graph is channel k of any
/// task that uses it.
class MotionGraph {
 public:
  MotionGraph() = default;
  /// Builds from a dense row-major adjacency. Does not validate; call
  /// validate() where symmetry is required.
  MotionGraph(std::vector<std::size_t> ids, std::vector<std::string> labels,
              std::vector<std::uint8_t> adjacency);
  /// Builds an undirected graph on vertices 0..n-1 from an edge list.
  static MotionGraph from_edges(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> edges);
  static MotionGraph path(std::size_t n);
  static MotionGraph edgeless(std::size_t n);

  std::size_t size() const { return ids_.size(); }
  bool adjacent(std::size_t a, std::size_t b) const { return adjacency_[a * size() + b] != 0; }
  /// Neighbor positions of v, ordered by host vertex id.
  const std::vector<std::size_t>& neighbors(std::size_t v) const { return neighbors_[v]; }
  const std::vector<std::vector<std::size_t>>& neighbor_lists() const { return neighbors_; }
  const std::vector<std::size_t>& ids() const { return ids_; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::uint8_t>& adjacency() const { return adjacency_; }
  std::size_t edge_count() const;
  std::size_t degree(std::size_t v) const { return neighbors_[v].size(); }

  bool is_symmetric() const;
  bool is_connected() const;
  /// Throws GraphError unless the adjacency is symmetric with a zero diagonal.
  void validate() const;

  /// Subgraph on `vertices` (positions in this graph) with all edges whose
  /// endpoints are both in the subset. Vertex order follows `vertices`.
  MotionGraph induced(std::span<const std::size_t> vertices) const;
  /// Relabels so that new vertex k is old vertex perm[k].
  MotionGraph permuted(std::span<const std::size_t> perm) const;

  friend bool operator==(const MotionGraph& a, const MotionGraph& b) {
    return a.ids_ == b.ids_ && a.labels_ == b.labels_ && a.adjacency_ == b.adjacency_;
  }

 private:
  void rebuild_neighbors();

  std::vector<std::size_t> ids_;
  std::vector<std::string> labels_;
  std::vector<std::uint8_t> adjacency_;
  std::vector<std::vector<std::size_t>> neighbors_;
};

/// Plain-text adjacency list, one vertex per line: `id label nbr nbr ...`.
/// Ids must be 0..n-1 in order; `#` starts a comment line.
MotionGraph read_graph(std::istream& in, const std::string& source = "<stream>");
MotionGraph read_graph_file(const std::filesystem::path& path);
void write_graph(std::ostream& out, const MotionGraph& graph);

}  // namespace ghn
