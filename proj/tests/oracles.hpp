#pragma once

// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the code paths it is used to check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace oracle {

/// Does the unit cell centred at (cx, cy) meet the region swept by the exact
/// circular arcs leaving the origin along +y with curvature |c| <= c_max and
/// arc length <= length? Checked on a sub-sampling of the cell.
inline bool envelope_meets_cell(double cx, double cy, double c_max, double length, int sub = 9) {
  for (int i = 0; i < sub; ++i)
    for (int j = 0; j < sub; ++j) {
      const double x = cx - 0.5 + (i + 0.5) / sub;
      const double y = cy - 0.5 + (j + 0.5) / sub;
      const double r2 = x * x + y * y;
      if (r2 < 1e-12) return true;
      const double c = -2.0 * x / r2;  // circle through the origin tangent to +y
      if (std::abs(c) > c_max) continue;
      double s;
      if (std::abs(c) < 1e-12) {
        if (y < 0) continue;
        s = y;
      } else {
        // arc: x = (cos(cs) - 1) / c, y = sin(cs) / c
        const double phi = std::atan2(c * y, 1.0 + c * x);
        s = phi / c;
        if (s < 0) continue;
      }
      if (s <= length + 0.5) return true;
    }
  return false;
}

/// Coefficients (highest degree first) of det(zI - A) by the Faddeev-LeVerrier
/// recursion.
inline std::vector<double> characteristic_polynomial(const std::vector<std::vector<double>>& a) {
  const std::size_t n = a.size();
  std::vector<double> coeffs{1.0};
  std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));  // M_0 = 0
  double c_prev = 1.0;
  for (std::size_t k = 1; k <= n; ++k) {
    // M_k = A M_{k-1} + c_{k-1} I
    std::vector<std::vector<double>> am(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0;
        for (std::size_t l = 0; l < n; ++l) s += a[i][l] * m[l][j];
        am[i][j] = s + (i == j ? c_prev : 0.0);
      }
    m = am;
    double tr = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t l = 0; l < n; ++l) tr += a[i][l] * m[l][i];
    const double c = -tr / static_cast<double>(k);
    coeffs.push_back(c);
    c_prev = c;
  }
  return coeffs;
}

/// All complex roots of a monic polynomial (Durand-Kerner), polished with
/// Newton steps.
inline std::vector<std::complex<double>> polynomial_roots(const std::vector<double>& coeffs) {
  using C = std::complex<double>;
  const std::size_t n = coeffs.size() - 1;
  auto eval = [&](C z) {
    C v = coeffs[0];
    for (std::size_t i = 1; i < coeffs.size(); ++i) v = v * z + coeffs[i];
    return v;
  };
  auto deriv = [&](C z) {
    C v = 0;
    for (std::size_t i = 0; i < n; ++i) v = v * z + coeffs[i] * static_cast<double>(n - i);
    return v;
  };
  std::vector<C> roots(n);
  const C seed(0.4, 0.9);
  for (std::size_t i = 0; i < n; ++i) roots[i] = std::pow(seed, static_cast<double>(i));
  for (int it = 0; it < 2000; ++it) {
    double change = 0;
    for (std::size_t i = 0; i < n; ++i) {
      C denom = 1;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) denom *= roots[i] - roots[j];
      const C delta = eval(roots[i]) / denom;
      roots[i] -= delta;
      change = std::max(change, std::abs(delta));
    }
    if (change < 1e-15) break;
  }
  for (auto& r : roots)
    for (int it = 0; it < 5; ++it) {
      const C d = deriv(r);
      if (std::abs(d) < 1e-14) break;
      r -= eval(r) / d;
    }
  return roots;
}

/// k-th derivative of a polynomial given highest degree first.
inline std::vector<double> derivative(std::vector<double> c, int k) {
  for (int r = 0; r < k; ++r) {
    const std::size_t n = c.size() - 1;
    std::vector<double> d;
    for (std::size_t i = 0; i < n; ++i) d.push_back(c[i] * static_cast<double>(n - i));
    c = d;
  }
  return c;
}

/// Eigenvalues of a small dense matrix through its characteristic polynomial.
/// Clustered roots (a multiple root perturbed by rounding) are replaced by
/// their mean and refined with Newton on the derivative of matching order.
inline std::vector<std::complex<double>> eigenvalues_by_polynomial(const std::vector<std::vector<double>>& a) {
  using C = std::complex<double>;
  const auto coeffs = characteristic_polynomial(a);
  auto roots = polynomial_roots(coeffs);
  const std::size_t n = roots.size();
  std::vector<int> group(n, -1);
  int g = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (group[i] >= 0) continue;
    group[i] = g;
    for (bool grew = true; grew;) {
      grew = false;
      for (std::size_t j = 0; j < n; ++j)
        if (group[j] < 0)
          for (std::size_t k = 0; k < n; ++k)
            if (group[k] == g && std::abs(roots[j] - roots[k]) < 1e-4) {
              group[j] = g;
              grew = true;
              break;
            }
    }
    ++g;
  }
  std::vector<C> out(n);
  for (int gi = 0; gi < g; ++gi) {
    C mean = 0;
    int m = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (group[i] == gi) {
        mean += roots[i];
        ++m;
      }
    mean /= static_cast<double>(m);
    const auto d = derivative(coeffs, m - 1);
    const auto dd = derivative(coeffs, m);
    auto ev = [](const std::vector<double>& c, C z) {
      C v = 0;
      for (double x : c) v = v * z + x;
      return v;
    };
    for (int it = 0; it < 8; ++it) {
      const C slope = ev(dd, mean);
      if (std::abs(slope) < 1e-300) break;
      const C step = ev(d, mean) / slope;
      if (!(std::abs(step) < 1e-3)) break;
      mean -= step;
    }
    for (std::size_t i = 0; i < n; ++i)
      if (group[i] == gi) out[i] = mean;
  }
  return out;
}

/// Null vector of (A - lambda I) by complex Gaussian elimination with full
/// pivoting; the free variable is set to 1 and the vector normalised.
inline std::vector<std::complex<double>> null_vector(const std::vector<std::vector<double>>& a,
                                                     std::complex<double> lambda) {
  using C = std::complex<double>;
  const std::size_t n = a.size();
  std::vector<std::vector<C>> m(n, std::vector<C>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m[i][j] = a[i][j] - (i == j ? lambda : C(0));
  std::vector<std::size_t> col(n);
  for (std::size_t j = 0; j < n; ++j) col[j] = j;
  std::size_t rank = 0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    std::size_t pi = k, pj = k;
    double best = -1;
    for (std::size_t i = k; i < n; ++i)
      for (std::size_t j = k; j < n; ++j)
        if (std::abs(m[i][j]) > best) {
          best = std::abs(m[i][j]);
          pi = i;
          pj = j;
        }
    std::swap(m[k], m[pi]);
    for (auto& row : m) std::swap(row[k], row[pj]);
    std::swap(col[k], col[pj]);
    for (std::size_t i = k + 1; i < n; ++i) {
      const C f = m[i][k] / m[k][k];
      for (std::size_t j = k; j < n; ++j) m[i][j] -= f * m[k][j];
    }
    ++rank;
  }
  // back-substitute with the last (pivot-less) variable fixed to 1
  std::vector<C> y(n);
  y[n - 1] = 1;
  for (std::size_t k = n - 1; k-- > 0;) {
    C s = 0;
    for (std::size_t j = k + 1; j < n; ++j) s += m[k][j] * y[j];
    y[k] = -s / m[k][k];
  }
  std::vector<C> x(n);
  double norm = 0;
  for (std::size_t j = 0; j < n; ++j) {
    x[col[j]] = y[j];
    norm += std::norm(y[j]);
  }
  norm = std::sqrt(norm);
  for (auto& v : x) v /= norm;
  return x;
}

/// Clustering of a row-stochastic matrix through the doubled real system:
/// for each eigenpair the real vector v = (u+, u-) must satisfy
/// diag(P, P) v = Sigma v with Sigma = [[x, y], [-y, x]] (x) I, and points are
/// clustered on the top half of v for the pairs whose det Sigma = |lambda|^2
/// passes the threshold. Unit-modulus eigenvalues shared by several closed
/// classes get one vector per class, supported on that class and the
/// transient nodes.
struct DoubledResult {
  std::vector<int> labels;
  std::vector<std::complex<double>> eigenvalues;  // sorted
  double max_real_system_residual = 0;
  bool ambiguous = false;  // a selected eigenvalue is degenerate off the unit circle
};

inline DoubledResult doubled_system_clusters(const std::vector<std::vector<double>>& P, double eps, int tau, int M) {
  using C = std::complex<double>;
  const std::size_t n = P.size();
  DoubledResult out;

  // recurrent classes from the transitive closure of the pattern
  std::vector<std::vector<char>> reach(n, std::vector<char>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    reach[i][i] = 1;
    for (std::size_t j = 0; j < n; ++j)
      if (P[i][j] > 0) reach[i][j] = 1;
  }
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t i = 0; i < n; ++i)
      if (reach[i][k])
        for (std::size_t j = 0; j < n; ++j)
          if (reach[k][j]) reach[i][j] = 1;
  std::vector<char> recurrent(n, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (reach[i][j] && !reach[j][i]) recurrent[i] = 0;
  std::vector<std::vector<std::size_t>> classes;
  std::vector<char> seen(n, 0);
  std::vector<std::size_t> transient;
  for (std::size_t i = 0; i < n; ++i) {
    if (!recurrent[i]) {
      transient.push_back(i);
      continue;
    }
    if (seen[i]) continue;
    std::vector<std::size_t> c;
    for (std::size_t j = 0; j < n; ++j)
      if (recurrent[j] && reach[i][j] && reach[j][i]) {
        c.push_back(j);
        seen[j] = 1;
      }
    classes.push_back(c);
  }

  auto sub_null = [&](const std::vector<std::size_t>& nodes, C lambda) {
    std::vector<std::vector<double>> a(nodes.size(), std::vector<double>(nodes.size()));
    for (std::size_t i = 0; i < nodes.size(); ++i)
      for (std::size_t j = 0; j < nodes.size(); ++j) a[i][j] = P[nodes[i]][nodes[j]];
    const auto x = null_vector(a, lambda);
    std::vector<C> u(n, 0.0);
    for (std::size_t i = 0; i < nodes.size(); ++i) u[nodes[i]] = x[i];
    return u;
  };
  auto residual = [&](const std::vector<C>& u, C lambda) {
    double r = 0;
    for (std::size_t i = 0; i < n; ++i) {
      C s = 0;
      for (std::size_t j = 0; j < n; ++j) s += P[i][j] * u[j];
      r += std::norm(s - lambda * u[i]);
    }
    return std::sqrt(r);
  };

  struct Pair {
    C lambda;
    std::vector<C> u;
    std::size_t anchor;
    bool degenerate;
  };
  std::vector<Pair> pairs;
  const auto values = eigenvalues_by_polynomial(P);
  std::vector<char> done(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (done[i]) continue;
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (!done[j] && values[j] == values[i]) {
        done[j] = 1;
        ++m;
      }
    const C lambda = values[i];
    if (m == 1) {
      std::vector<std::size_t> all(n);
      for (std::size_t j = 0; j < n; ++j) all[j] = j;
      pairs.push_back({lambda, sub_null(all, lambda), 0, false});
      continue;
    }
    std::size_t found = 0;
    if (std::abs(std::abs(lambda) - 1.0) < 1e-9) {
      for (const auto& c : classes) {
        std::vector<std::size_t> nodes = c;
        nodes.insert(nodes.end(), transient.begin(), transient.end());
        std::sort(nodes.begin(), nodes.end());
        auto u = sub_null(nodes, lambda);
        bool finite = true;
        for (auto z : u) finite = finite && std::isfinite(z.real()) && std::isfinite(z.imag());
        if (finite && residual(u, lambda) < 1e-9) {
          pairs.push_back({lambda, u, c.front(), false});
          ++found;
        }
      }
    }
    for (; found < m; ++found) pairs.push_back({lambda, {}, n, true});
  }

  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    const double ma = std::abs(a.lambda), mb = std::abs(b.lambda);
    if (std::abs(ma - mb) > 1e-10) return ma > mb;
    if (std::abs(a.lambda.real() - b.lambda.real()) > 1e-10) return a.lambda.real() > b.lambda.real();
    if (std::abs(a.lambda.imag() - b.lambda.imag()) > 1e-10) return a.lambda.imag() > b.lambda.imag();
    return a.anchor < b.anchor;
  });
  for (const auto& p : pairs) out.eigenvalues.push_back(p.lambda);

  std::size_t q = 0;
  while (q < pairs.size() && std::pow(std::norm(pairs[q].lambda), tau) > 1.0 - eps) ++q;
  std::vector<std::vector<double>> top(q);
  for (std::size_t k = 0; k < q; ++k) {
    if (pairs[k].degenerate) {
      out.ambiguous = true;
      return out;
    }
    auto u = pairs[k].u;
    double nrm = 0, best = 0;
    for (auto z : u) nrm += std::norm(z);
    nrm = std::sqrt(nrm);
    for (auto& z : u) {
      z /= nrm;
      best = std::max(best, std::abs(z));
    }
    for (std::size_t i = 0; i < n; ++i)
      if (std::abs(u[i]) >= best * (1.0 - 1e-9)) {
        const C rot = std::conj(u[i]) / std::abs(u[i]);
        for (auto& z : u) z *= rot;
        break;
      }
    // v = (u+, u-) and the real system diag(P, P) v = Sigma v
    const double x = pairs[k].lambda.real(), y = pairs[k].lambda.imag();
    std::vector<double> up(n), um(n);
    for (std::size_t i = 0; i < n; ++i) {
      up[i] = u[i].real() + u[i].imag();
      um[i] = u[i].real() - u[i].imag();
    }
    for (std::size_t i = 0; i < n; ++i) {
      double pu = 0, pm = 0;
      for (std::size_t j = 0; j < n; ++j) {
        pu += P[i][j] * up[j];
        pm += P[i][j] * um[j];
      }
      out.max_real_system_residual = std::max(out.max_real_system_residual, std::abs(pu - (x * up[i] + y * um[i])));
      out.max_real_system_residual = std::max(out.max_real_system_residual, std::abs(pm - (-y * up[i] + x * um[i])));
    }
    top[k] = up;
  }

  std::vector<int> pre(n, 0);
  if (q == 0) {
    out.labels.assign(n, 0);
    return out;
  }
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < q; ++k)
      if (top[k][i] > top[best][i] + 1e-10) best = k;
    pre[i] = static_cast<int>(best);
  }
  std::vector<int> size(q, 0);
  for (int p : pre) ++size[static_cast<std::size_t>(p)];
  std::vector<int> order;
  for (std::size_t k = 0; k < q; ++k)
    if (size[k] >= M) order.push_back(static_cast<int>(k));
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return size[a] > size[b]; });
  std::vector<int> relabel(q, 0);
  for (std::size_t r = 0; r < order.size(); ++r) relabel[static_cast<std::size_t>(order[r])] = static_cast<int>(r) + 1;
  for (int p : pre) out.labels.push_back(relabel[static_cast<std::size_t>(p)]);
  return out;
}

}  // namespace oracle
