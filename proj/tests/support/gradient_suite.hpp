#pragma once

#include <cstddef>
#include <string>
#include <vector>

// Finite-difference checks run against the double build. The interface is
// precision-free so float-build code can call it.
namespace gradient_suite {

struct CaseResult {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
};

// One case per differentiable primitive.
std::vector<CaseResult> primitives();

// Full MLE loss and MRT risk of a tiny model on a 2-sentence batch.
std::vector<CaseResult> losses();

// Largest |closed-form dR/dl - autodiff dR/dl| over random sub-spaces.
double analytic_risk_gradient_gap();

}  // namespace gradient_suite
