#pragma once

// Spectral clustering of a row-stochastic affinity: eigendecomposition,
// threshold on the leading eigenvalues, argmax preclustering and the
// minimum-size rule.
//
// The eigensolver permutes P to block upper-triangular form through the
// strongly connected components of its nonzero pattern. Eigenvalues are the
// union of the diagonal blocks' eigenvalues and each eigenvector is completed
// from its own block by back-substitution through the blocks that reach it.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <tuple>
#include <variant>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "v1g/affinity.hpp"

namespace v1g {

using cplx = std::complex<double>;

struct EigenPair {
  cplx lambda;
  Eigen::VectorXcd u;  // empty unless computed; unit norm, phase fixed
  double residual = std::numeric_limits<double>::quiet_NaN();
};

struct EigenSystem {
  std::vector<EigenPair> pairs;  // sorted by |lambda| descending
  double norm = 1.0;             // max absolute row sum of P
  std::size_t n = 0;

  bool has_vector(std::size_t i) const { return pairs[i].u.size() == static_cast<Eigen::Index>(n); }
};

class EigenError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClusterParams {
  double epsilon = 0.05;
  int tau = 150;
  int M = 3;

  void validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must be in (0, 1)");
    if (tau < 1) throw std::invalid_argument("tau must be a positive integer");
    if (M < 1) throw std::invalid_argument("M must be a positive integer");
  }
};

enum class SpectrumMode { real, modulus_squared };

struct ClusterLabels {
  std::vector<int> labels;  // 0 = background, 1..K by descending size
  int K = 0;
};

namespace detail {

struct Csr {
  std::vector<std::size_t> row;
  std::vector<int> col;
  std::vector<double> val;
};

inline Csr to_csr(const DenseMatrix& p) {
  Csr c;
  const auto n = p.rows();
  c.row.assign(static_cast<std::size_t>(n) + 1, 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j)
      if (p(i, j) != 0.0) {
        c.col.push_back(static_cast<int>(j));
        c.val.push_back(p(i, j));
      }
    c.row[static_cast<std::size_t>(i) + 1] = c.col.size();
  }
  return c;
}

// Tarjan's algorithm without recursion. Components come out sinks first.
inline std::vector<std::vector<int>> strong_components(const Csr& g, int n) {
  std::vector<int> index(static_cast<std::size_t>(n), -1), low(static_cast<std::size_t>(n), 0);
  std::vector<char> on_stack(static_cast<std::size_t>(n), 0);
  std::vector<int> stack;
  std::vector<std::pair<int, std::size_t>> call;  // node, next edge
  std::vector<std::vector<int>> comps;
  int counter = 0;
  for (int root = 0; root < n; ++root) {
    if (index[root] >= 0) continue;
    call.emplace_back(root, g.row[root]);
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on_stack[root] = 1;
    while (!call.empty()) {
      auto& [v, e] = call.back();
      if (e < g.row[v + 1]) {
        const int w = g.col[e++];
        if (index[w] < 0) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on_stack[w] = 1;
          call.emplace_back(w, g.row[w]);
        } else if (on_stack[w]) {
          low[v] = std::min(low[v], index[w]);
        }
        continue;
      }
      const int done = v;
      call.pop_back();
      if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[done]);
      if (low[done] == index[done]) {
        std::vector<int> comp;
        int w;
        do {
          w = stack.back();
          stack.pop_back();
          on_stack[w] = 0;
          comp.push_back(w);
        } while (w != done);
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
      }
    }
  }
  return comps;
}

inline double inf_norm(const Csr& c, int n) {
  double m = 0.0;
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t e = c.row[i]; e < c.row[i + 1]; ++e) s += std::abs(c.val[e]);
    m = std::max(m, s);
  }
  return m;
}

inline double residual(const Csr& c, const Eigen::VectorXcd& u, cplx lambda) {
  double r = 0.0;
  const auto n = u.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    cplx s = 0.0;
    for (std::size_t e = c.row[i]; e < c.row[i + 1]; ++e) s += c.val[e] * u[c.col[e]];
    r += std::norm(s - lambda * u[i]);
  }
  return std::sqrt(r);
}

/// Unit norm, then rotate so the largest-modulus entry (lowest index among
/// near-ties) is real and positive.
inline void fix_phase(Eigen::VectorXcd& u) {
  const double nrm = u.norm();
  if (nrm > 0.0) u /= nrm;
  double best = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) best = std::max(best, std::abs(u[i]));
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (std::abs(u[i]) >= best * (1.0 - 1e-9)) {
      const cplx rot = std::conj(u[i]) / std::abs(u[i]);
      u *= rot;
      u[i] = std::abs(u[i]);
      break;
    }
}

struct Candidate {
  cplx lambda;
  int block;   // index into the component list
  int local;   // column in the block's eigen-solution
  int anchor;  // smallest node index of the block
};

// Sort by |lambda|, Re, Im descending; values equal within tol are ordered by
// their block's smallest node, then by position inside the block.
inline void sort_candidates(std::vector<Candidate>& c) {
  std::sort(c.begin(), c.end(), [](const Candidate& a, const Candidate& b) {
    const double ma = std::abs(a.lambda), mb = std::abs(b.lambda);
    if (ma != mb) return ma > mb;
    if (a.lambda.real() != b.lambda.real()) return a.lambda.real() > b.lambda.real();
    if (a.lambda.imag() != b.lambda.imag()) return a.lambda.imag() > b.lambda.imag();
    return std::tie(a.anchor, a.local) < std::tie(b.anchor, b.local);
  });
  const double tol = 1e-10;
  for (std::size_t i = 0; i < c.size();) {
    std::size_t j = i + 1;
    while (j < c.size() && std::abs(c[j].lambda - c[i].lambda) <= tol) ++j;
    std::stable_sort(c.begin() + static_cast<std::ptrdiff_t>(i), c.begin() + static_cast<std::ptrdiff_t>(j),
                     [](const Candidate& a, const Candidate& b) {
                       return std::tie(a.anchor, a.local) < std::tie(b.anchor, b.local);
                     });
    i = j;
  }
}

struct BlockSolution {
  Eigen::VectorXcd values;
  Eigen::MatrixXcd vectors;
  std::optional<Eigen::MatrixXcd> inverse;  // of `vectors`, built on first use

  // x with (lambda I - B) x = rhs through the block's eigenbasis; empty when
  // lambda hits the block spectrum or the basis is too ill-conditioned.
  std::optional<Eigen::VectorXcd> solve_shifted(const Eigen::MatrixXcd& shifted, cplx lambda, const Eigen::VectorXcd& rhs) {
    if (!inverse) inverse = Eigen::PartialPivLU<Eigen::MatrixXcd>(vectors).inverse();
    Eigen::VectorXcd y = *inverse * rhs;
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      const cplx d = lambda - values[k];
      if (std::abs(d) < 1e-12) return std::nullopt;
      y[k] /= d;
    }
    Eigen::VectorXcd x = vectors * y;
    if (!x.allFinite() || (shifted * x - rhs).norm() > 1e-10 * std::max(rhs.norm(), 1e-300)) return std::nullopt;
    return x;
  }
};

}  // namespace detail

/// Chooses how many leading eigenvectors to compute from the sorted spectrum.
using VectorCount = std::function<std::size_t(const std::vector<cplx>&)>;

/// Full spectrum of P with eigenvectors for the leading pairs chosen by
/// `count`.
inline EigenSystem eigendecompose(const DenseMatrix& P, const VectorCount& count) {
  const auto n = static_cast<int>(P.rows());
  if (P.rows() != P.cols()) throw std::invalid_argument("eigendecompose: matrix is not square");
  if (!P.allFinite()) throw std::invalid_argument("eigendecompose: matrix has non-finite entries");
  EigenSystem sys;
  sys.n = static_cast<std::size_t>(n);
  if (n == 0) return sys;

  const detail::Csr csr = detail::to_csr(P);
  sys.norm = std::max(detail::inf_norm(csr, n), std::numeric_limits<double>::min());
  const auto comps = detail::strong_components(csr, n);

  std::vector<detail::BlockSolution> blocks(comps.size());
  std::vector<detail::Candidate> cands;
  cands.reserve(static_cast<std::size_t>(n));
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const auto& nodes = comps[c];
    const auto m = static_cast<Eigen::Index>(nodes.size());
    auto& b = blocks[c];
    if (m == 1) {
      b.values = Eigen::VectorXcd::Constant(1, cplx(P(nodes[0], nodes[0]), 0.0));
      b.vectors = Eigen::MatrixXcd::Ones(1, 1);
    } else {
      Eigen::MatrixXd sub(m, m);
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) sub(i, j) = P(nodes[i], nodes[j]);
      Eigen::EigenSolver<Eigen::MatrixXd> es(sub, true);
      if (es.info() != Eigen::Success) throw EigenError("eigendecompose: QR iteration did not converge");
      b.values = es.eigenvalues();
      b.vectors = es.eigenvectors();
    }
    for (Eigen::Index k = 0; k < m; ++k)
      cands.push_back({b.values[k], static_cast<int>(c), static_cast<int>(k), nodes.front()});
  }
  detail::sort_candidates(cands);
  std::vector<cplx> sorted;
  sorted.reserve(cands.size());
  for (const auto& cd : cands) sorted.push_back(cd.lambda);
  const std::size_t vectors = count(sorted);

  sys.pairs.resize(cands.size());
  for (std::size_t r = 0; r < cands.size(); ++r) sys.pairs[r].lambda = cands[r].lambda;
  const auto q = static_cast<Eigen::Index>(std::min(vectors, cands.size()));
  if (q == 0) return sys;

  // Work in component order: rows of a component only reach earlier ones, so
  // the permuted matrix is block lower triangular and each eigenvector is
  // extended block by block with all q columns at once.
  std::vector<int> order;
  order.reserve(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> start(comps.size() + 1, 0);
  for (std::size_t c = 0; c < comps.size(); ++c) {
    start[c] = static_cast<Eigen::Index>(order.size());
    order.insert(order.end(), comps[c].begin(), comps[c].end());
  }
  start[comps.size()] = n;
  std::vector<Eigen::Index> pos(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) pos[static_cast<std::size_t>(order[i])] = i;

  // rows and columns of U follow `order`
  Eigen::MatrixXd Ure = Eigen::MatrixXd::Zero(n, q), Uim = Eigen::MatrixXd::Zero(n, q);
  std::vector<char> ok(static_cast<std::size_t>(q), 1);
  std::vector<int> singular_at(static_cast<std::size_t>(q), -1);
  for (Eigen::Index r = 0; r < q; ++r) {
    const auto& cd = cands[static_cast<std::size_t>(r)];
    const auto& b = blocks[static_cast<std::size_t>(cd.block)];
    for (Eigen::Index k = 0; k < b.vectors.rows(); ++k) {
      Ure(start[cd.block] + k, r) = b.vectors(k, cd.local).real();
      Uim(start[cd.block] + k, r) = b.vectors(k, cd.local).imag();
    }
  }
  // row i of P U over columns placed before `limit`
  auto row_times_u = [&](Eigen::Index i, Eigen::Index limit, Eigen::RowVectorXd& re, Eigen::RowVectorXd& im) {
    re.setZero();
    im.setZero();
    const int row = order[i];
    for (std::size_t e = csr.row[row]; e < csr.row[row + 1]; ++e) {
      const Eigen::Index j = pos[static_cast<std::size_t>(csr.col[e])];
      if (j >= limit) continue;
      re.noalias() += csr.val[e] * Ure.row(j);
      im.noalias() += csr.val[e] * Uim.row(j);
    }
  };
  Eigen::RowVectorXd acc_re(q), acc_im(q);
  for (std::size_t l = 1; l < comps.size(); ++l) {
    const Eigen::Index s0 = start[l], m = start[l + 1] - start[l];
    Eigen::MatrixXd Rre(m, q), Rim(m, q);
    for (Eigen::Index i = 0; i < m; ++i) {
      row_times_u(s0 + i, s0, acc_re, acc_im);
      Rre.row(i) = acc_re;
      Rim.row(i) = acc_im;
    }
    Eigen::MatrixXcd shifted_base(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) shifted_base(i, j) = -P(order[s0 + i], order[s0 + j]);
    for (Eigen::Index r = 0; r < q; ++r) {
      const auto& cd = cands[static_cast<std::size_t>(r)];
      if (!ok[r] || cd.block >= static_cast<int>(l)) continue;
      if (Rre.col(r).isZero(0.0) && Rim.col(r).isZero(0.0)) continue;
      Eigen::VectorXcd rhs(m);
      for (Eigen::Index i = 0; i < m; ++i) rhs[i] = cplx(Rre(i, r), Rim(i, r));
      Eigen::MatrixXcd shifted = shifted_base;
      shifted.diagonal().array() += cd.lambda;
      auto x = blocks[l].solve_shifted(shifted, cd.lambda, rhs);
      if (!x) {
        Eigen::FullPivLU<Eigen::MatrixXcd> lu(shifted);
        if (!lu.isInvertible()) {
          ok[r] = 0;
          singular_at[r] = static_cast<int>(l);
          continue;
        }
        x = lu.solve(rhs);
      }
      for (Eigen::Index i = 0; i < m; ++i) {
        Ure(s0 + i, r) = (*x)[i].real();
        Uim(s0 + i, r) = (*x)[i].imag();
      }
    }
  }
  // One eigenvector of block c's k-th eigenvalue, extended downstream; on a
  // singular shift, the index of the component where it happened.
  auto extend_one = [&](int c, Eigen::Index k) -> std::variant<Eigen::VectorXcd, int> {
    const cplx lam = blocks[c].values[k];
    Eigen::VectorXcd x = Eigen::VectorXcd::Zero(n);
    for (Eigen::Index i = 0; i < blocks[c].vectors.rows(); ++i) x[start[c] + i] = blocks[c].vectors(i, k);
    for (std::size_t l = static_cast<std::size_t>(c) + 1; l < comps.size(); ++l) {
      const Eigen::Index s0 = start[l], m = start[l + 1] - start[l];
      Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        const int row = order[s0 + i];
        for (std::size_t e = csr.row[row]; e < csr.row[row + 1]; ++e) {
          const Eigen::Index j = pos[static_cast<std::size_t>(csr.col[e])];
          if (j < s0) rhs[i] += csr.val[e] * x[j];
        }
      }
      if (rhs.isZero(0.0)) continue;
      Eigen::MatrixXcd shifted(m, m);
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) shifted(i, j) = (i == j ? lam : cplx(0.0)) - P(order[s0 + i], order[s0 + j]);
      auto y = blocks[l].solve_shifted(shifted, lam, rhs);
      if (!y) {
        Eigen::FullPivLU<Eigen::MatrixXcd> lu(shifted);
        if (!lu.isInvertible()) return static_cast<int>(l);
        y = lu.solve(rhs);
      }
      x.segment(s0, m) = *y;
    }
    Eigen::VectorXcd u(n);
    for (Eigen::Index i = 0; i < n; ++i) u[order[i]] = x[i];
    return u;
  };

  // residual |P u - lambda u| / |u| for every column
  Eigen::MatrixXd PUre(n, q), PUim(n, q);
  for (Eigen::Index i = 0; i < n; ++i) {
    row_times_u(i, n, acc_re, acc_im);
    PUre.row(i) = acc_re;
    PUim.row(i) = acc_im;
  }
  std::optional<Eigen::EigenSolver<Eigen::MatrixXd>> dense;  // fallback, built on demand
  std::vector<char> used_dense;
  for (Eigen::Index r = 0; r < q; ++r) {
    const auto& cd = cands[static_cast<std::size_t>(r)];
    if (ok[r]) {
      Eigen::VectorXcd u(n);
      double res2 = 0.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const cplx ui(Ure(i, r), Uim(i, r));
        res2 += std::norm(cplx(PUre(i, r), PUim(i, r)) - cd.lambda * ui);
        u[order[i]] = ui;
      }
      const double nrm = u.norm();
      const double res = nrm > 0.0 ? std::sqrt(res2) / nrm : std::numeric_limits<double>::infinity();
      if (res <= 1e-8 * sys.norm) {
        detail::fix_phase(u);
        sys.pairs[r].u = std::move(u);
        sys.pairs[r].residual = res;
        continue;
      }
    } else if (singular_at[r] >= 0) {
      // lambda repeats in a component upstream and the matrix is defective
      // there: the eigenvector starts in the furthest such component.
      std::variant<Eigen::VectorXcd, int> got = singular_at[r];
      while (std::holds_alternative<int>(got)) {
        const int l = std::get<int>(got);
        Eigen::Index k = 0;
        (blocks[l].values.array() - cd.lambda).abs().minCoeff(&k);
        got = extend_one(l, k);
      }
      auto& v = std::get<Eigen::VectorXcd>(got);
      detail::fix_phase(v);
      const double res = detail::residual(csr, v, cd.lambda);
      if (res <= 1e-8 * sys.norm) {
        sys.pairs[r].u = std::move(v);
        sys.pairs[r].residual = res;
        continue;
      }
    }
    // Defective or ill-conditioned case: take the closest unused eigenvector
    // of a full dense solve.
    if (!dense) {
      dense.emplace(Eigen::MatrixXd(P), true);
      if (dense->info() != Eigen::Success) throw EigenError("eigendecompose: QR iteration did not converge");
      used_dense.assign(static_cast<std::size_t>(n), 0);
    }
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      const double d = std::abs(dense->eigenvalues()[k] - cd.lambda);
      if (!used_dense[k] && d < best_d) {
        best_d = d;
        best = k;
      }
    }
    used_dense[best] = 1;
    Eigen::VectorXcd v = dense->eigenvectors().col(best);
    detail::fix_phase(v);
    const double res = detail::residual(csr, v, cd.lambda);
    if (!(res <= 1e-8 * sys.norm))
      throw EigenError("eigendecompose: residual check failed for eigenvalue " + std::to_string(cd.lambda.real()) +
                       (cd.lambda.imag() >= 0 ? "+" : "") + std::to_string(cd.lambda.imag()) + "i");
    sys.pairs[r].u = std::move(v);
    sys.pairs[r].residual = res;
  }
  return sys;
}

/// Full spectrum with eigenvectors for the first `vectors` pairs (all by
/// default).
inline EigenSystem eigendecompose(const DenseMatrix& P, std::size_t vectors = std::numeric_limits<std::size_t>::max()) {
  return eigendecompose(P, [vectors](const std::vector<cplx>&) { return vectors; });
}

inline EigenSystem eigendecompose(const NormalizedAffinity& P,
                                  std::size_t vectors = std::numeric_limits<std::size_t>::max()) {
  return eigendecompose(P.p, vectors);
}

/// Symmetric route for P = D^-1 A with symmetric A: D^-1/2 A D^-1/2 is
/// diagonalised per connected component. Rows without mass act as self-loops.
inline EigenSystem eigendecompose_symmetric(const AffinityMatrix& A) {
  if (!A.symmetric || A.a != A.a.transpose()) throw std::invalid_argument("eigendecompose_symmetric: affinity not symmetric");
  const auto n = static_cast<int>(A.a.rows());
  DenseMatrix a = A.a;
  Eigen::VectorXd d = a.rowwise().sum();
  for (int i = 0; i < n; ++i)
    if (d[i] == 0.0) {
      a(i, i) = 1.0;
      d[i] = 1.0;
    }
  const detail::Csr csr_a = detail::to_csr(a);
  const auto comps = detail::strong_components(csr_a, n);
  DenseMatrix P = a;
  for (int i = 0; i < n; ++i) P.row(i) /= d[i];
  const detail::Csr csr = detail::to_csr(P);

  EigenSystem sys;
  sys.n = static_cast<std::size_t>(n);
  sys.norm = detail::inf_norm(csr, n);
  std::vector<detail::Candidate> cands;
  std::vector<Eigen::MatrixXd> vecs(comps.size());
  for (std::size_t c = 0; c < comps.size(); ++c) {
    const auto& nodes = comps[c];
    const auto m = static_cast<Eigen::Index>(nodes.size());
    Eigen::MatrixXd s(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < m; ++j) s(i, j) = a(nodes[i], nodes[j]) / std::sqrt(d[nodes[i]] * d[nodes[j]]);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
    if (es.info() != Eigen::Success) throw EigenError("eigendecompose_symmetric: did not converge");
    vecs[c] = es.eigenvectors();
    for (Eigen::Index i = 0; i < m; ++i) vecs[c].row(i) /= std::sqrt(d[nodes[i]]);
    for (Eigen::Index k = 0; k < m; ++k)
      cands.push_back({cplx(es.eigenvalues()[k], 0.0), static_cast<int>(c), static_cast<int>(k), nodes.front()});
  }
  detail::sort_candidates(cands);
  for (const auto& cd : cands) {
    EigenPair p;
    p.lambda = cd.lambda;
    p.u = Eigen::VectorXcd::Zero(n);
    const auto& nodes = comps[static_cast<std::size_t>(cd.block)];
    for (std::size_t k = 0; k < nodes.size(); ++k) p.u[nodes[k]] = vecs[static_cast<std::size_t>(cd.block)](static_cast<Eigen::Index>(k), cd.local);
    detail::fix_phase(p.u);
    p.residual = detail::residual(csr, p.u, p.lambda);
    sys.pairs.push_back(std::move(p));
  }
  return sys;
}

/// Number of leading eigenvalues passing the threshold. Real mode needs a
/// real positive lambda with lambda^tau > 1 - eps; modulus mode tests
/// (|lambda|^2)^tau > 1 - eps.
inline int select_q(const std::vector<cplx>& sorted, double epsilon, int tau, SpectrumMode mode) {
  int q = 0;
  for (const cplx l : sorted) {
    bool pass;
    if (mode == SpectrumMode::real) {
      const bool real = std::abs(l.imag()) <= 1e-12;
      pass = real && l.real() > 0.0 && std::pow(l.real(), tau) > 1.0 - epsilon;
    } else {
      pass = std::pow(std::norm(l), tau) > 1.0 - epsilon;
    }
    if (!pass) break;
    ++q;
  }
  return q;
}

inline int select_q(const EigenSystem& eigs, double epsilon, int tau, SpectrumMode mode) {
  std::vector<cplx> v;
  v.reserve(eigs.pairs.size());
  for (const auto& p : eigs.pairs) v.push_back(p.lambda);
  return select_q(v, epsilon, tau, mode);
}

/// Real clustering columns: u+ = Re u + Im u for directed graphs, Re u
/// otherwise.
inline Eigen::MatrixXd clustering_columns(const EigenSystem& eigs, int q, bool directed) {
  Eigen::MatrixXd U(static_cast<Eigen::Index>(eigs.n), q);
  for (int j = 0; j < q; ++j) {
    if (!eigs.has_vector(static_cast<std::size_t>(j))) throw std::logic_error("clustering_columns: eigenvector not computed");
    const auto& u = eigs.pairs[static_cast<std::size_t>(j)].u;
    U.col(j) = directed ? Eigen::VectorXd(u.real() + u.imag()) : Eigen::VectorXd(u.real());
  }
  return U;
}

/// Row-wise argmax over the clustering columns; ties go to the lowest column.
/// Columns are unit vectors, so entries closer than 1e-10 count as tied.
inline std::vector<int> precluster(const Eigen::MatrixXd& U) {
  constexpr double tie = 1e-10;
  std::vector<int> out(static_cast<std::size_t>(U.rows()), 0);
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < U.cols(); ++j)
      if (U(i, j) > U(i, best) + tie) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

inline std::vector<int> precluster(const EigenSystem& eigs, int q, bool directed) {
  if (q < 1) throw std::invalid_argument("precluster: q must be >= 1");
  return precluster(clustering_columns(eigs, q, directed));
}

/// Preclusters below M members go to background 0; the rest are numbered
/// 1..K by descending size, ties by smaller precluster id.
inline ClusterLabels apply_min_size(const std::vector<int>& pre, int M) {
  if (M < 1) throw std::invalid_argument("apply_min_size: M must be >= 1");
  int max_id = -1;
  for (int p : pre) max_id = std::max(max_id, p);
  std::vector<int> size(static_cast<std::size_t>(max_id + 1), 0);
  for (int p : pre) {
    if (p < 0) throw std::invalid_argument("apply_min_size: negative precluster id");
    ++size[static_cast<std::size_t>(p)];
  }
  std::vector<int> ids;
  for (int id = 0; id <= max_id; ++id)
    if (size[static_cast<std::size_t>(id)] >= M) ids.push_back(id);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return size[static_cast<std::size_t>(a)] > size[static_cast<std::size_t>(b)]; });
  std::vector<int> relabel(static_cast<std::size_t>(max_id + 1), 0);
  for (std::size_t k = 0; k < ids.size(); ++k) relabel[static_cast<std::size_t>(ids[k])] = static_cast<int>(k) + 1;
  ClusterLabels out;
  out.K = static_cast<int>(ids.size());
  out.labels.reserve(pre.size());
  for (int p : pre) out.labels.push_back(relabel[static_cast<std::size_t>(p)]);
  return out;
}

struct ClusterResult {
  ClusterLabels labels;
  int q = 0;
  EigenSystem eigs;  // vectors present for the first q pairs
};

inline ClusterResult cluster_detailed(const DenseMatrix& P, const ClusterParams& params, bool directed) {
  params.validate();
  ClusterResult r;
  const SpectrumMode mode = directed ? SpectrumMode::modulus_squared : SpectrumMode::real;
  r.eigs = eigendecompose(P, [&](const std::vector<cplx>& values) {
    r.q = select_q(values, params.epsilon, params.tau, mode);
    return static_cast<std::size_t>(r.q);
  });
  if (r.q == 0) {
    r.labels.labels.assign(static_cast<std::size_t>(P.rows()), 0);
    return r;
  }
  r.labels = apply_min_size(precluster(r.eigs, r.q, directed), params.M);
  return r;
}

inline ClusterLabels cluster(const NormalizedAffinity& P, const ClusterParams& params, bool directed) {
  return cluster_detailed(P.p, params, directed).labels;
}

// ---------------------------------------------------------------------------
// export

inline void write_labels_csv(const ClusterLabels& l, std::ostream& os) {
  os << "index,label\n";
  for (std::size_t i = 0; i < l.labels.size(); ++i) os << i << ',' << l.labels[i] << '\n';
}

/// One row per eigenvalue: index, re, im, modulus.
inline void write_spectrum_csv(const EigenSystem& e, std::ostream& os) {
  char buf[128];
  os << "index,re,im,abs\n";
  for (std::size_t i = 0; i < e.pairs.size(); ++i) {
    const auto l = e.pairs[i].lambda;
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, l.real(), l.imag(), std::abs(l));
    os << buf;
  }
}

/// Per-point u+ values of the computed eigenvectors, one column per pair.
inline void write_uplus_csv(const EigenSystem& e, int q, std::ostream& os) {
  const Eigen::MatrixXd U = clustering_columns(e, q, true);
  char buf[32];
  os << "index";
  for (int j = 0; j < q; ++j) os << ",u" << j;
  os << '\n';
  for (Eigen::Index i = 0; i < U.rows(); ++i) {
    os << i;
    for (int j = 0; j < q; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", U(i, j));
      os << ',' << buf;
    }
    os << '\n';
  }
}

}  // namespace v1g
