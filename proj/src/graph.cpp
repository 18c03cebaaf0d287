#include "ghn/graph.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace ghn {

MotionGraph::MotionGraph(std::vector<std::size_t> ids, std::vector<std::string> labels,
                         std::vector<std::uint8_t> adjacency)
    : ids_(std::move(ids)), labels_(std::move(labels)), adjacency_(std::move(adjacency)) {
  if (labels_.size() != ids_.size() || adjacency_.size() != ids_.size() * ids_.size()) {
    throw GraphError("graph: ids, labels and adjacency sizes disagree");
  }
  rebuild_neighbors();
}

MotionGraph MotionGraph::from_edges(std::size_t n,
                                    std::span<const std::pair<std::size_t, std::size_t>> edges) {
  std::vector<std::size_t> ids(n);
  std::vector<std::string> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = i;
    labels[i] = "v" + std::to_string(i);
  }
  std::vector<std::uint8_t> adj(n * n, 0);
  for (auto [a, b] : edges) {
    if (a >= n || b >= n || a == b) throw GraphError("graph: invalid edge");
    adj[a * n + b] = 1;
    adj[b * n + a] = 1;
  }
  return MotionGraph(std::move(ids), std::move(labels), std::move(adj));
}

MotionGraph MotionGraph::path(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return from_edges(n, edges);
}

MotionGraph MotionGraph::edgeless(std::size_t n) { return from_edges(n, {}); }

void MotionGraph::rebuild_neighbors() {
  const std::size_t n = size();
  neighbors_.assign(n, {});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (adjacency_[a * n + b] != 0 && a != b) neighbors_[a].push_back(b);
  // Host-id order keeps neighbor sums identical under vertex relabeling.
  for (auto& list : neighbors_) {
    std::stable_sort(list.begin(), list.end(),
                     [this](std::size_t x, std::size_t y) { return ids_[x] < ids_[y]; });
  }
}

std::size_t MotionGraph::edge_count() const {
  std::size_t count = 0;
  for (std::size_t a = 0; a < size(); ++a)
    for (std::size_t b = a + 1; b < size(); ++b) count += adjacent(a, b) ? 1 : 0;
  return count;
}

bool MotionGraph::is_symmetric() const {
  for (std::size_t a = 0; a < size(); ++a) {
    if (adjacent(a, a)) return false;
    for (std::size_t b = a + 1; b < size(); ++b)
      if (adjacent(a, b) != adjacent(b, a)) return false;
  }
  return true;
}

bool MotionGraph::is_connected() const {
  if (size() == 0) return false;
  std::vector<char> seen(size(), 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t reached = 1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t w : neighbors_[v]) {
      if (!seen[w]) {
        seen[w] = 1;
        ++reached;
        stack.push_back(w);
      }
    }
  }
  return reached == size();
}

void MotionGraph::validate() const {
  if (!is_symmetric()) throw GraphError("graph: adjacency must be symmetric with zero diagonal");
}

MotionGraph MotionGraph::induced(std::span<const std::size_t> vertices) const {
  const std::size_t k = vertices.size();
  std::vector<std::size_t> ids(k);
  std::vector<std::string> labels(k);
  std::vector<std::uint8_t> adj(k * k, 0);
  for (std::size_t a = 0; a < k; ++a) {
    if (vertices[a] >= size()) throw GraphError("graph: induced vertex out of range");
    ids[a] = ids_[vertices[a]];
    labels[a] = labels_[vertices[a]];
    for (std::size_t b = 0; b < k; ++b) adj[a * k + b] = adjacency_[vertices[a] * size() + vertices[b]];
  }
  return MotionGraph(std::move(ids), std::move(labels), std::move(adj));
}

MotionGraph MotionGraph::permuted(std::span<const std::size_t> perm) const {
  if (perm.size() != size()) throw GraphError("graph: permutation size mismatch");
  return induced(perm);
}

MotionGraph read_graph(std::istream& in, const std::string& source) {
  std::vector<std::string> labels;
  std::vector<std::vector<std::size_t>> lists;
  std::string line;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& what) {
    throw GraphError(source + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string id_tok, label;
    ls >> id_tok >> label;
    std::size_t id = 0;
    try {
      std::size_t used = 0;
      id = std::stoul(id_tok, &used);
      if (used != id_tok.size()) fail("bad vertex id '" + id_tok + "'");
    } catch (const std::logic_error&) {
      fail("bad vertex id '" + id_tok + "'");
    }
    if (id != labels.size()) fail("vertex ids must be consecutive from 0");
    if (label.empty()) fail("missing label");
    std::vector<std::size_t> nbrs;
    std::string tok;
    while (ls >> tok) {
      try {
        std::size_t used = 0;
        nbrs.push_back(std::stoul(tok, &used));
        if (used != tok.size()) fail("bad neighbor id '" + tok + "'");
      } catch (const std::logic_error&) {
        fail("bad neighbor id '" + tok + "'");
      }
    }
    labels.push_back(label);
    lists.push_back(std::move(nbrs));
  }
  const std::size_t n = labels.size();
  if (n == 0) throw GraphError(source + ": no vertices");
  std::vector<std::uint8_t> adj(n * n, 0);
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t w : lists[v]) {
      if (w >= n) throw GraphError(source + ": vertex " + std::to_string(v) + " lists unknown neighbor " + std::to_string(w));
      if (w == v) throw GraphError(source + ": self loop at vertex " + std::to_string(v));
      adj[v * n + w] = 1;
    }
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  MotionGraph graph(std::move(ids), std::move(labels), std::move(adj));
  for (std::size_t v = 0; v < n; ++v)
    for (std::size_t w = 0; w < n; ++w)
      if (graph.adjacent(v, w) != graph.adjacent(w, v)) {
        throw GraphError(source + ": edge " + std::to_string(v) + "-" + std::to_string(w) +
                         " is not listed in both directions");
      }
  return graph;
}

MotionGraph read_graph_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw GraphError("cannot open graph file " + path.string());
  return read_graph(in, path.string());
}

void write_graph(std::ostream& out, const MotionGraph& graph) {
  for (std::size_t v = 0; v < graph.size(); ++v) {
    out << v << ' ' << graph.labels()[v];
    for (std::size_t w : graph.neighbors(v)) out << ' ' << w;
    out << '\n';
  }
}

}  // namespace ghn
