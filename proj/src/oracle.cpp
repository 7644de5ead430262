#include "riskpia/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <ostream>

#include "riskpia/error.hpp"
#include "riskpia/parallel.hpp"

namespace riskpia {

DenseEigen dense_principal(std::vector<double> A, std::size_t n, std::size_t normalize_row,
                           double tol, std::size_t max_iter) {
  if (A.size() != n * n || n == 0) throw Error("dense matrix has the wrong size");
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j && A[i * n + j] < 0.0) throw StructureError("negative off-diagonal in dense matrix");
      row += std::abs(A[i * n + j]);
    }
    s = std::max(s, row);
  }
  s += 1.0;
  for (std::size_t i = 0; i < n; ++i) A[i * n + i] += s;

  std::vector<double> x(n, 1.0 / std::sqrt(static_cast<double>(n)));
  std::vector<double> y(n);
  DenseEigen out;
  for (std::size_t it = 0;; ++it) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = 0.0;
    double nrm = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      const double* row = &A[i * n];
      for (std::size_t j = 0; j < n; ++j) acc += row[j] * x[j];
      y[i] = acc;
      lo = std::min(lo, acc / x[i]);
      hi = std::max(hi, acc / x[i]);
      nrm += acc * acc;
    }
    if (hi - lo <= tol || it >= max_iter) {
      if (hi - lo > tol) throw NonConvergence(it, hi - lo);
      out.lower = lo - s;
      out.upper = hi - s;
      out.lambda = 0.5 * (out.lower + out.upper);
      out.iterations = it;
      break;
    }
    nrm = std::sqrt(nrm);
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / nrm;
  }
  const double anchor = x[normalize_row];
  for (double& v : x) v /= anchor;
  out.V = std::move(x);
  return out;
}

double policy_count(std::size_t controls, std::size_t rows) {
  return std::pow(static_cast<double>(controls), static_cast<double>(rows));
}

PolicyField policy_from_index(std::size_t index, std::size_t controls, std::size_t rows) {
  PolicyField v(rows, 0);
  for (std::size_t r = rows; r-- > 0;) {
    v[r] = static_cast<std::uint32_t>(index % controls);
    index /= controls;
  }
  return v;
}

std::string policy_digits(const PolicyField& v, std::size_t controls) {
  static const char* kDigits = "0123456789abcdefghijklmnopqrstuvwxyz";
  std::string s;
  if (controls <= 36) {
    for (auto k : v) s += kDigits[k];
  } else {
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "." : "") + std::to_string(v[i]);
  }
  return s;
}

OracleResult brute_optimum(const Discretization& disc, Sense sense, const OracleOptions& opt) {
  const std::size_t n = disc.rows();
  const std::size_t K = disc.controls();
  const double total = policy_count(K, n);
  if (total > opt.limit) throw TooLarge(total);
  const auto count = static_cast<std::size_t>(std::llround(total));

  // Dense rows of every constant-control matrix; a policy picks row i from
  // control v(i).
  std::vector<std::vector<double>> rows(K, std::vector<double>(n * n, 0.0));
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const RowStencil st = disc.stencil(i, k);
      rows[k][i * n + i] = st.diagonal;
      for (int t = 0; t < st.count; ++t) {
        rows[k][i * n + static_cast<std::size_t>(st.neighbour[static_cast<std::size_t>(t)])] +=
            st.off[static_cast<std::size_t>(t)];
      }
    }
  }

  OracleResult r;
  r.count = count;
  r.controls = K;
  r.sense = sense;
  r.table.resize(count);
  const std::size_t origin = disc.grid().origin_interior();
  parallel_for(count, [&](std::size_t begin, std::size_t end) {
    std::vector<double> A(n * n);
    for (std::size_t idx = begin; idx < end; ++idx) {
      OracleEntry& e = r.table[idx];
      e.policy = policy_from_index(idx, K, n);
      for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(&rows[e.policy[i]][i * n], n, &A[i * n]);
      }
      e.lambda = dense_principal(A, n, origin, opt.eig_tol).lambda;
      e.sparse_lambda = std::numeric_limits<double>::quiet_NaN();
      if (opt.compare_sparse) {
        e.sparse_lambda = principal_eigpair(disc.assemble_policy(e.policy), opt.sparse_eig_tol).lambda;
      }
    }
  });

  for (std::size_t idx = 0; idx < count; ++idx) {
    const OracleEntry& e = r.table[idx];
    const bool take = idx == 0 || (sense == Sense::Min ? e.lambda < r.best_lambda : e.lambda > r.best_lambda);
    if (take) {
      r.best_lambda = e.lambda;
      r.best_index = idx;
    }
    if (opt.compare_sparse) {
      r.max_solver_difference = std::max(r.max_solver_difference, std::abs(e.lambda - e.sparse_lambda));
    }
  }
  r.best_policy = r.table[r.best_index].policy;
  return r;
}

CrosscheckReport crosscheck(const SolveResult& pia, const OracleResult& oracle, double tol) {
  CrosscheckReport c;
  c.pia_lambda = pia.eig.lambda;
  c.oracle_lambda = oracle.best_lambda;
  c.difference = std::abs(c.pia_lambda - c.oracle_lambda);
  c.tol = tol;
  c.pass = c.difference <= tol;
  c.pia_policy = pia.policy;
  c.oracle_policy = oracle.best_policy;
  c.same_policy = c.pia_policy == c.oracle_policy;
  return c;
}

void write_oracle_table(std::ostream& os, const OracleResult& r) {
  const bool sparse = !r.table.empty() && !std::isnan(r.table.front().sparse_lambda);
  os << (sparse ? "policy,lambda,sparse_lambda\n" : "policy,lambda\n");
  char buf[64];
  for (const OracleEntry& e : r.table) {
    os << policy_digits(e.policy, r.controls);
    std::snprintf(buf, sizeof buf, ",%.17g", e.lambda);
    os << buf;
    if (sparse) {
      std::snprintf(buf, sizeof buf, ",%.17g", e.sparse_lambda);
      os << buf;
    }
    os << '\n';
  }
}

}  // namespace riskpia
