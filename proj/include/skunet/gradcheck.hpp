#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "skunet/tensor.hpp"

namespace skunet::gradcheck {

// Central finite-difference comparison of reverse-mode gradients.
//
// The function output is scalarized with a fixed pseudo-random projection
// (deterministic per element index) so that gradient structure does not cancel;
// the numeric projection is accumulated in double. Returns
//   max over elements of |analytic - numeric| / max(1, |analytic|, |numeric|).
double finite_diff_check(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                         double eps = 1e-3);

// Same, probing only the given flat indices of x.
double finite_diff_check_subset(const std::function<Tensor(const Tensor&)>& fn, const Tensor& x,
                                const std::vector<size_t>& indices, double eps = 1e-3);

struct GradCase {
  std::string name;
  std::function<double()> run;  // returns max relative error
};

// Seeded random instances for every op and both attention blocks; with
// `full`, also the tiny end-to-end network.
std::vector<GradCase> default_suite(bool full);

struct SuiteResult {
  struct Row {
    std::string name;
    double max_rel_err;
    bool pass;
  };
  std::vector<Row> rows;
  bool all_pass;
};

// Runs the cases, printing one table row per case to `os`.
SuiteResult run_suite(const std::vector<GradCase>& cases, std::ostream& os, double tol = 1e-3);

// Projection weight for flat index i (exposed so tests can reuse it).
double projection_weight(size_t i);

}  // namespace skunet::gradcheck

namespace skunet::net {
// Defined in network.cpp: finite-difference check of the total training loss
// w.r.t. a random 32-parameter subsample of a tiny model. Returns max rel err.
double end_to_end_gradcheck();
}  // namespace skunet::net
