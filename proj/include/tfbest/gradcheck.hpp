#pragma once

// Central finite-difference checks of the analytic gradients, in double.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tfbest/tensor.hpp"

namespace tfbest::gradcheck {

struct Options {
  double eps = 1e-3;
  double tolerance = 1e-4;
  // Denominator floor of the relative error; see relative_error().
  double floor = 1.0;
  std::uint64_t seed = 1;
};

// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor);

struct Result {
  std::string name;
  std::size_t coordinates = 0;
  // Coordinates whose step crossed a relu kink and were re-differenced with a
  // smaller step that does not.
  std::size_t kink_coordinates = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "<parameter>[<flat index>]"
  bool pass = false;
};

// Builds a scalar loss on a fresh tape; called once for the analytic pass and
// twice per perturbed coordinate.
using LossFn = std::function<ad::Var<double>(ad::Tape<double>&)>;

// Compares d(loss)/d(p) from backward with central differences for every
// coordinate of every listed parameter. Dropout must be off in loss.
Result check(const std::string& name, const LossFn& loss, const std::vector<ad::Parameter<double>*>& params,
             const Options& options);

// Every op, every layer and the full forward of each model variant at
// T=4, F=3, d_model=8, h=2.
std::vector<Result> run_suite(const Options& options = {});

}  // namespace tfbest::gradcheck
