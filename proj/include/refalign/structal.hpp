#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <deque>
#include <limits>
#include <set>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "refalign/dependency_graph.hpp"
#include "refalign/rng.hpp"
#include "refalign/scene_graph.hpp"

namespace refalign::structal {

struct SignatureConfig {
  int hops = 2;           // K
  int bins = 6;           // B
  double discount = 0.5;  // per-hop weight delta^(k-1)
  double gamma = 1.0;     // Gaussian kernel scale

  void validate() const {
    if (hops < 1) throw std::invalid_argument("SignatureConfig: hops must be >= 1");
    if (bins < 1) throw std::invalid_argument("SignatureConfig: bins must be >= 1");
    if (!(discount > 0.0 && discount <= 1.0)) {
      throw std::invalid_argument("SignatureConfig: discount must be in (0, 1]");
    }
    if (!(gamma > 0.0)) throw std::invalid_argument("SignatureConfig: gamma must be positive");
  }
};

struct StructuralSignature {
  int node_id = 0;
  Eigen::VectorXd vector;  // length 2 * bins * hops
};

// Directed multigraph over the nodes of one scene graph followed by the
// nodes of one dependency graph. Scene relations point subject -> object,
// dependency edges point governor -> dependent, and the two halves are
// never connected to each other.
class UnionGraph {
 public:
  UnionGraph(int image_nodes, int text_nodes, std::vector<std::pair<int, int>> edges)
      : image_nodes_(image_nodes), text_nodes_(text_nodes) {
    const int n = size();
    if (image_nodes < 0 || text_nodes < 0) throw std::invalid_argument("UnionGraph: negative node count");
    in_degree_.assign(static_cast<std::size_t>(n), 0);
    out_degree_.assign(static_cast<std::size_t>(n), 0);
    std::vector<std::set<int>> nbrs(static_cast<std::size_t>(n));
    for (const auto& [from, to] : edges) {
      if (from < 0 || from >= n || to < 0 || to >= n) {
        throw std::invalid_argument("UnionGraph: edge endpoint out of range");
      }
      ++out_degree_[static_cast<std::size_t>(from)];
      ++in_degree_[static_cast<std::size_t>(to)];
      nbrs[static_cast<std::size_t>(from)].insert(to);
      nbrs[static_cast<std::size_t>(to)].insert(from);
    }
    neighbors_.resize(static_cast<std::size_t>(n));
    for (int u = 0; u < n; ++u) {
      neighbors_[static_cast<std::size_t>(u)].assign(nbrs[static_cast<std::size_t>(u)].begin(),
                                                     nbrs[static_cast<std::size_t>(u)].end());
    }
  }

  int size() const { return image_nodes_ + text_nodes_; }
  int image_nodes() const { return image_nodes_; }
  int text_nodes() const { return text_nodes_; }
  int in_degree(int u) const { return in_degree_[check(u)]; }
  int out_degree(int u) const { return out_degree_[check(u)]; }
  const std::vector<int>& undirected_neighbors(int u) const { return neighbors_[check(u)]; }

 private:
  std::size_t check(int u) const {
    if (u < 0 || u >= size()) throw std::invalid_argument("UnionGraph: unknown node id");
    return static_cast<std::size_t>(u);
  }

  int image_nodes_ = 0;
  int text_nodes_ = 0;
  std::vector<int> in_degree_;
  std::vector<int> out_degree_;
  std::vector<std::vector<int>> neighbors_;
};

inline UnionGraph make_union_graph(const SceneGraph& scene, const DependencyGraph& dep) {
  const int n = scene.object_count();
  std::vector<std::pair<int, int>> edges;
  edges.reserve(scene.relations.size() + dep.tokens.size());
  for (const auto& r : scene.relations) edges.emplace_back(r.subject_id, r.object_id);
  for (const auto& t : dep.tokens) {
    if (t.head >= 0) edges.emplace_back(n + t.head, n + t.index);
  }
  return UnionGraph(n, dep.token_count(), std::move(edges));
}

// Per-hop histograms of neighbor in/out degrees. A node at undirected
// distance exactly k contributes discount^(k-1) to bin
// min(bins-1, floor(log2(degree+1))) of the hop-k histograms. Layout:
// [hop1-in, hop1-out, hop2-in, hop2-out, ...], each block `bins` wide.
inline StructuralSignature structural_signature(const UnionGraph& g, int node,
                                                const SignatureConfig& cfg = {}) {
  cfg.validate();
  if (node < 0 || node >= g.size()) throw std::invalid_argument("structural_signature: unknown node id");

  StructuralSignature sig;
  sig.node_id = node;
  sig.vector = Eigen::VectorXd::Zero(2 * cfg.bins * cfg.hops);

  const auto degree_bin = [&cfg](int degree) {
    const int bin = std::bit_width(static_cast<unsigned>(degree) + 1u) - 1;
    return std::min(bin, cfg.bins - 1);
  };

  // BFS over the undirected view, up to cfg.hops levels.
  std::vector<int> dist(static_cast<std::size_t>(g.size()), -1);
  dist[static_cast<std::size_t>(node)] = 0;
  std::deque<int> frontier{node};
  double weight = 1.0;
  for (int hop = 1; hop <= cfg.hops && !frontier.empty(); ++hop) {
    std::deque<int> next;
    for (const int u : frontier) {
      for (const int v : g.undirected_neighbors(u)) {
        if (dist[static_cast<std::size_t>(v)] >= 0) continue;
        dist[static_cast<std::size_t>(v)] = hop;
        next.push_back(v);
        const int base = 2 * cfg.bins * (hop - 1);
        sig.vector[base + degree_bin(g.in_degree(v))] += weight;
        sig.vector[base + cfg.bins + degree_bin(g.out_degree(v))] += weight;
      }
    }
    frontier = std::move(next);
    weight *= cfg.discount;
  }
  return sig;
}

inline std::vector<StructuralSignature> all_signatures(const UnionGraph& g,
                                                       const SignatureConfig& cfg = {}) {
  std::vector<StructuralSignature> sigs;
  sigs.reserve(static_cast<std::size_t>(g.size()));
  for (int u = 0; u < g.size(); ++u) sigs.push_back(structural_signature(g, u, cfg));
  return sigs;
}

inline double signature_kernel(const StructuralSignature& a, const StructuralSignature& b, double gamma) {
  if (a.vector.size() != b.vector.size()) {
    throw std::invalid_argument("signature_kernel: signature length mismatch");
  }
  return std::exp(-gamma * (a.vector - b.vector).squaredNorm());
}

// Gaussian kernel matrix over all node signatures: symmetric, unit
// diagonal, entries in (0, 1], positive semidefinite.
inline Eigen::MatrixXd similarity_matrix(const std::vector<StructuralSignature>& sigs, double gamma) {
  const auto n = static_cast<Eigen::Index>(sigs.size());
  Eigen::MatrixXd s(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    s(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double k = signature_kernel(sigs[static_cast<std::size_t>(i)],
                                        sigs[static_cast<std::size_t>(j)], gamma);
      s(i, j) = k;
      s(j, i) = k;
    }
  }
  return s;
}

inline constexpr double kEigenvalueFloor = 1e-8;

// Low-rank node embedding from a landmark subset of the kernel matrix:
// sample p landmarks, factor the landmark block W = U diag(lambda) U^T,
// and return C U lambda^(-1/2) over the retained eigenpairs. With
// p = n + l this reconstructs the kernel matrix exactly (up to the
// eigenvalue floor).
inline Eigen::MatrixXd landmark_embed(const std::vector<StructuralSignature>& sigs, int p,
                                      std::uint64_t seed, double gamma) {
  const int total = static_cast<int>(sigs.size());
  if (p < 1 || p > total) throw std::invalid_argument("landmark_embed: landmark count out of range");

  rng::Engine eng(seed);
  const std::vector<int> landmarks = rng::sample_indices(total, p, eng);

  Eigen::MatrixXd c(total, p);
  for (int i = 0; i < total; ++i) {
    for (int j = 0; j < p; ++j) {
      c(i, j) = signature_kernel(sigs[static_cast<std::size_t>(i)],
                                 sigs[static_cast<std::size_t>(landmarks[static_cast<std::size_t>(j)])],
                                 gamma);
    }
  }
  Eigen::MatrixXd w(p, p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) {
      w(i, j) = c(landmarks[static_cast<std::size_t>(i)], j);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(w);
  if (solver.info() != Eigen::Success) throw std::runtime_error("landmark_embed: eigendecomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();   // ascending
  const Eigen::MatrixXd& vectors = solver.eigenvectors();

  std::vector<int> kept;
  for (int i = p - 1; i >= 0; --i) {
    if (values[i] >= kEigenvalueFloor) kept.push_back(i);  // descending order
  }
  Eigen::MatrixXd embed(total, static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const int i = kept[k];
    embed.col(static_cast<Eigen::Index>(k)) = c * vectors.col(i) / std::sqrt(values[i]);
  }
  return embed;
}

struct EmbeddingMatrices {
  Eigen::MatrixXd image_rows;  // n x p
  Eigen::MatrixXd text_rows;   // l x p
};

// Row-wise L2 normalization, then a split into the image-node block
// (first n rows) and the text-node block (last l rows). Zero rows pass
// through unchanged.
inline EmbeddingMatrices normalize_split(const Eigen::MatrixXd& embed, int image_nodes, int text_nodes) {
  if (embed.rows() != image_nodes + text_nodes) {
    throw std::invalid_argument("normalize_split: row count does not equal image + text node count");
  }
  Eigen::MatrixXd normalized = embed;
  for (Eigen::Index i = 0; i < normalized.rows(); ++i) {
    const double norm = normalized.row(i).norm();
    if (norm > 0.0) normalized.row(i) /= norm;
  }
  return EmbeddingMatrices{normalized.topRows(image_nodes), normalized.bottomRows(text_nodes)};
}

// alpha(j, i) = exp(-||P1[j] - P2[i]||^2): structural similarity of
// object j and word i. Rows index objects, columns index words.
struct AlignmentMap {
  Eigen::MatrixXd alpha;

  int objects() const { return static_cast<int>(alpha.rows()); }
  int words() const { return static_cast<int>(alpha.cols()); }
};

inline AlignmentMap alignment_map(const EmbeddingMatrices& emb) {
  if (emb.image_rows.cols() != emb.text_rows.cols()) {
    throw std::invalid_argument("alignment_map: embedding column mismatch");
  }
  AlignmentMap map;
  map.alpha.resize(emb.image_rows.rows(), emb.text_rows.rows());
  for (Eigen::Index j = 0; j < emb.image_rows.rows(); ++j) {
    for (Eigen::Index i = 0; i < emb.text_rows.rows(); ++i) {
      map.alpha(j, i) = std::exp(-(emb.image_rows.row(j) - emb.text_rows.row(i)).squaredNorm());
    }
  }
  return map;
}

// Diagnostic matching: repeatedly take the largest entry over unmatched
// rows and columns; ties prefer the lower object id, then the lower word
// index. Returns min(n, l) (object, word) pairs in pick order.
inline std::vector<std::pair<int, int>> greedy_match(const AlignmentMap& map) {
  const int n = map.objects();
  const int l = map.words();
  if (n == 0 || l == 0) throw std::invalid_argument("greedy_match: empty alignment map");
  std::vector<bool> row_used(static_cast<std::size_t>(n), false);
  std::vector<bool> col_used(static_cast<std::size_t>(l), false);
  std::vector<std::pair<int, int>> pairs;
  const int rounds = std::min(n, l);
  for (int round = 0; round < rounds; ++round) {
    double best = -std::numeric_limits<double>::infinity();
    int best_j = -1;
    int best_i = -1;
    for (int j = 0; j < n; ++j) {
      if (row_used[static_cast<std::size_t>(j)]) continue;
      for (int i = 0; i < l; ++i) {
        if (col_used[static_cast<std::size_t>(i)]) continue;
        if (map.alpha(j, i) > best) {
          best = map.alpha(j, i);
          best_j = j;
          best_i = i;
        }
      }
    }
    row_used[static_cast<std::size_t>(best_j)] = true;
    col_used[static_cast<std::size_t>(best_i)] = true;
    pairs.emplace_back(best_j, best_i);
  }
  return pairs;
}

inline constexpr int kDefaultLandmarks = 10;

// Full structural pipeline for one scene/query pair. A non-positive
// landmark count selects the default min(n + l, kDefaultLandmarks).
inline AlignmentMap align_graphs(const SceneGraph& scene, const DependencyGraph& dep,
                                 const SignatureConfig& cfg, int landmarks, std::uint64_t seed) {
  const UnionGraph g = make_union_graph(scene, dep);
  const auto sigs = all_signatures(g, cfg);
  const int p = landmarks > 0 ? std::min(landmarks, g.size()) : std::min(g.size(), kDefaultLandmarks);
  const Eigen::MatrixXd embed = landmark_embed(sigs, p, seed, cfg.gamma);
  return alignment_map(normalize_split(embed, g.image_nodes(), g.text_nodes()));
}

}  // namespace refalign::structal
