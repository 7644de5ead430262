#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "riskpia/genmat.hpp"
#include "riskpia/howard.hpp"

namespace riskpia {

/// Dense row-major matrix and a power iteration written independently of
/// the sparse solver (shift = 1 + largest absolute row sum, ratios of the
/// shifted product).
struct DenseEigen {
  double lambda = 0.0;
  std::vector<double> V;
  double lower = 0.0;
  double upper = 0.0;
  std::size_t iterations = 0;
};
DenseEigen dense_principal(std::vector<double> A, std::size_t n, std::size_t normalize_row,
                           double tol = 1e-12, std::size_t max_iter = 50'000'000);

struct OracleOptions {
  double limit = 1e5;  // largest number of policies to enumerate
  double eig_tol = 1e-12;
  /// Also run the sparse solver on every policy and store its eigenvalue.
  bool compare_sparse = false;
  double sparse_eig_tol = kDefaultEigTol;
};

struct OracleEntry {
  PolicyField policy;
  double lambda = 0.0;
  double sparse_lambda = 0.0;  // NaN unless compare_sparse
};

struct OracleResult {
  double best_lambda = 0.0;
  PolicyField best_policy;
  std::size_t best_index = 0;
  std::vector<OracleEntry> table;  // lexicographic order
  std::size_t count = 0;
  std::size_t controls = 0;
  Sense sense = Sense::Min;
  /// max |dense - sparse| over the table (0 unless compare_sparse).
  double max_solver_difference = 0.0;
};

/// Number of stationary policies K^N (as a double, may be huge).
double policy_count(std::size_t controls, std::size_t rows);
/// Policy number `index` in lexicographic order (row 0 most significant).
PolicyField policy_from_index(std::size_t index, std::size_t controls, std::size_t rows);
/// Base-K digits of a policy, one character per node.
std::string policy_digits(const PolicyField& v, std::size_t controls);

OracleResult brute_optimum(const Discretization& disc, Sense sense, const OracleOptions& opt = {});

struct CrosscheckReport {
  bool pass = false;
  double pia_lambda = 0.0;
  double oracle_lambda = 0.0;
  double difference = 0.0;
  double tol = 0.0;
  PolicyField pia_policy;
  PolicyField oracle_policy;
  bool same_policy = false;
};

CrosscheckReport crosscheck(const SolveResult& pia, const OracleResult& oracle, double tol);

/// CSV with columns policy, lambda (and sparse_lambda when present).
void write_oracle_table(std::ostream& os, const OracleResult& r);

}  // namespace riskpia
