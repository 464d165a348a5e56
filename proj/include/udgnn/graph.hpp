#pragma once

// Undirected graphs in CSR form and the normalized propagation operators
// built from them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <span>
#include <thread>
#include <utility>
#include <vector>

#include "udgnn/tensor.hpp"

namespace udgnn {

using Index = std::uint32_t;

/// Raw adjacency structure. Self-loops are never stored here; they are an
/// option of the propagation operator.
class SparseGraph {
 public:
  SparseGraph() : row_offsets_{0} {}

  /// Builds an undirected graph from a list of edges. Each pair may appear in
  /// either orientation and more than once; duplicates collapse. Self-loops
  /// and out-of-range endpoints are rejected.
  static SparseGraph from_edges(std::size_t n_nodes, const std::vector<std::pair<Index, Index>>& edges) {
    std::vector<std::vector<Index>> adj(n_nodes);
    for (const auto& [u, v] : edges) {
      if (u >= n_nodes || v >= n_nodes)
        throw std::out_of_range("edge [" + std::to_string(u) + "," + std::to_string(v) +
                                "] out of range for " + std::to_string(n_nodes) + " nodes");
      if (u == v) throw std::invalid_argument("self-loop on node " + std::to_string(u));
      adj[u].push_back(v);
      adj[v].push_back(u);
    }
    SparseGraph g;
    g.n_nodes_ = n_nodes;
    g.row_offsets_.assign(n_nodes + 1, 0);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      auto& row = adj[i];
      std::sort(row.begin(), row.end());
      row.erase(std::unique(row.begin(), row.end()), row.end());
      g.row_offsets_[i + 1] = g.row_offsets_[i] + row.size();
    }
    g.col_indices_.reserve(g.row_offsets_.back());
    for (const auto& row : adj) g.col_indices_.insert(g.col_indices_.end(), row.begin(), row.end());
    return g;
  }

  static SparseGraph complete(std::size_t n_nodes) {
    SparseGraph g;
    g.n_nodes_ = n_nodes;
    g.row_offsets_.assign(n_nodes + 1, 0);
    g.col_indices_.reserve(n_nodes * (n_nodes ? n_nodes - 1 : 0));
    for (std::size_t i = 0; i < n_nodes; ++i) {
      for (std::size_t j = 0; j < n_nodes; ++j)
        if (j != i) g.col_indices_.push_back(static_cast<Index>(j));
      g.row_offsets_[i + 1] = g.col_indices_.size();
    }
    return g;
  }

  std::size_t n_nodes() const { return n_nodes_; }
  std::size_t n_arcs() const { return col_indices_.size(); }
  std::size_t n_edges() const { return col_indices_.size() / 2; }
  bool undirected() const { return true; }
  const std::vector<std::size_t>& row_offsets() const { return row_offsets_; }
  const std::vector<Index>& col_indices() const { return col_indices_; }

  std::size_t degree(std::size_t i) const { return row_offsets_[i + 1] - row_offsets_[i]; }
  std::span<const Index> neighbors(std::size_t i) const {
    return {col_indices_.data() + row_offsets_[i], degree(i)};
  }

  /// Each undirected edge once, as (u, v) with u < v, in CSR order.
  std::vector<std::pair<Index, Index>> edge_list() const {
    std::vector<std::pair<Index, Index>> out;
    out.reserve(n_edges());
    for (std::size_t u = 0; u < n_nodes_; ++u)
      for (Index v : neighbors(u))
        if (u < v) out.emplace_back(static_cast<Index>(u), v);
    return out;
  }

  bool operator==(const SparseGraph&) const = default;

 private:
  std::size_t n_nodes_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<Index> col_indices_;
};

enum class PropagationKind { SymNorm, SymNormSelfLoop, RowNorm };

inline std::string_view to_string(PropagationKind k) {
  switch (k) {
    case PropagationKind::SymNorm: return "sym_norm";
    case PropagationKind::SymNormSelfLoop: return "sym_norm_self_loop";
    case PropagationKind::RowNorm: return "row_norm";
  }
  return "?";
}

inline PropagationKind propagation_kind_from_string(std::string_view s) {
  if (s == "sym_norm") return PropagationKind::SymNorm;
  if (s == "sym_norm_self_loop") return PropagationKind::SymNormSelfLoop;
  if (s == "row_norm") return PropagationKind::RowNorm;
  throw std::invalid_argument("unknown propagation_kind '" + std::string(s) +
                              "' (expected sym_norm, sym_norm_self_loop, row_norm)");
}

/// Sparse normalized operator P in CSR form.
class PropagationMatrix {
 public:
  PropagationMatrix() : row_offsets_{0} {}
  PropagationMatrix(std::size_t n, std::vector<std::size_t> row_offsets, std::vector<Index> cols,
                    std::vector<double> values, PropagationKind kind)
      : n_(n),
        row_offsets_(std::move(row_offsets)),
        col_indices_(std::move(cols)),
        values_(std::move(values)),
        kind_(kind) {}

  std::size_t n_rows() const { return n_; }
  std::size_t nnz() const { return values_.size(); }
  PropagationKind kind() const { return kind_; }
  bool symmetric() const { return kind_ != PropagationKind::RowNorm; }
  const std::vector<std::size_t>& row_offsets() const { return row_offsets_; }
  const std::vector<Index>& col_indices() const { return col_indices_; }
  const std::vector<double>& values() const { return values_; }

  /// Stored value at (i, j), or 0 when the entry is structurally absent.
  double at(std::size_t i, std::size_t j) const {
    const auto first = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[i]);
    const auto last = col_indices_.begin() + static_cast<std::ptrdiff_t>(row_offsets_[i + 1]);
    const auto it = std::lower_bound(first, last, static_cast<Index>(j));
    return (it != last && *it == j) ? values_[static_cast<std::size_t>(it - col_indices_.begin())] : 0.0;
  }

  Tensor to_dense() const {
    Tensor d(n_, n_);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) d(i, col_indices_[k]) = values_[k];
    return d;
  }

  /// CSR of P^T; column indices stay sorted because rows are visited in order.
  PropagationMatrix transposed() const {
    std::vector<std::size_t> offs(n_ + 1, 0);
    for (Index c : col_indices_) ++offs[c + 1];
    for (std::size_t i = 0; i < n_; ++i) offs[i + 1] += offs[i];
    std::vector<Index> cols(nnz());
    std::vector<double> vals(nnz());
    std::vector<std::size_t> cursor(offs.begin(), offs.end() - 1);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t k = row_offsets_[i]; k < row_offsets_[i + 1]; ++k) {
        const std::size_t dst = cursor[col_indices_[k]]++;
        cols[dst] = static_cast<Index>(i);
        vals[dst] = values_[k];
      }
    return PropagationMatrix(n_, std::move(offs), std::move(cols), std::move(vals), kind_);
  }

 private:
  std::size_t n_ = 0;
  std::vector<std::size_t> row_offsets_;
  std::vector<Index> col_indices_;
  std::vector<double> values_;
  PropagationKind kind_ = PropagationKind::SymNorm;
};

/// SymNorm: D^{-1/2} A D^{-1/2}. SymNormSelfLoop: D'^{-1/2} (A+I) D'^{-1/2}.
/// RowNorm: D^{-1} A. Isolated nodes get all-zero rows (and columns).
inline PropagationMatrix build_propagation(const SparseGraph& g, PropagationKind kind) {
  const std::size_t n = g.n_nodes();
  const bool self_loop = kind == PropagationKind::SymNormSelfLoop;
  std::vector<double> deg(n);
  for (std::size_t i = 0; i < n; ++i) deg[i] = static_cast<double>(g.degree(i)) + (self_loop ? 1.0 : 0.0);

  std::vector<double> scale(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (deg[i] == 0.0) continue;
    scale[i] = kind == PropagationKind::RowNorm ? 1.0 / deg[i] : 1.0 / std::sqrt(deg[i]);
  }

  std::vector<std::size_t> offs(n + 1, 0);
  std::vector<Index> cols;
  std::vector<double> vals;
  cols.reserve(g.n_arcs() + (self_loop ? n : 0));
  vals.reserve(cols.capacity());
  auto emit = [&](std::size_t i, std::size_t j) {
    cols.push_back(static_cast<Index>(j));
    vals.push_back(kind == PropagationKind::RowNorm ? scale[i] : scale[i] * scale[j]);
  };
  for (std::size_t i = 0; i < n; ++i) {
    bool diag_done = !self_loop;
    for (Index j : g.neighbors(i)) {
      if (!diag_done && j > i) {
        emit(i, i);
        diag_done = true;
      }
      emit(i, j);
    }
    if (!diag_done) emit(i, i);
    offs[i + 1] = cols.size();
  }
  return PropagationMatrix(n, std::move(offs), std::move(cols), std::move(vals), kind);
}

namespace detail {
inline void spmm_rows(const PropagationMatrix& p, const Tensor& h, Tensor& out, std::size_t r0, std::size_t r1) {
  const auto& offs = p.row_offsets();
  const auto& cols = p.col_indices();
  const auto& vals = p.values();
  const std::size_t d = h.cols();
  for (std::size_t i = r0; i < r1; ++i) {
    double* oi = out.row(i).data();
    for (std::size_t k = offs[i]; k < offs[i + 1]; ++k) {
      const double w = vals[k];
      const double* hj = h.row(cols[k]).data();
      for (std::size_t c = 0; c < d; ++c) oi[c] += w * hj[c];
    }
  }
}
}  // namespace detail

/// out = P * H. Each output row accumulates in ascending column order, so the
/// result does not depend on `threads`.
inline Tensor spmm(const PropagationMatrix& p, const Tensor& h, unsigned threads = 1) {
  if (h.rows() != p.n_rows())
    throw std::invalid_argument("spmm: operator has " + std::to_string(p.n_rows()) + " rows but H is " +
                                h.shape_string());
  Tensor out(h.rows(), h.cols());
  const std::size_t n = p.n_rows();
  if (threads <= 1 || n < 2 * threads) {
    detail::spmm_rows(p, h, out, 0, n);
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (unsigned t = 0; t < threads; ++t) {
    const std::size_t r0 = n * t / threads;
    const std::size_t r1 = n * (t + 1) / threads;
    pool.emplace_back([&, r0, r1] { detail::spmm_rows(p, h, out, r0, r1); });
  }
  for (auto& th : pool) th.join();
  return out;
}

}  // namespace udgnn
