#pragma once

#include <vector>

#include "seqrisk/seqmodel/parameters.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace objectives {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
};

/// Adam over every tensor of a ParameterStore, reading the accumulated
/// gradients. Moments are held here, not in the store.
class Adam {
 public:
  explicit Adam(const seqmodel::ParameterStore& params, AdamSettings settings = {});

  // Clips by global L2 norm when clip > 0; returns the pre-clip norm.
  double step(seqmodel::ParameterStore& params, double learning_rate, double clip);
  void reset();
  long steps() const { return steps_; }

 private:
  AdamSettings settings_;
  std::vector<std::vector<double>> m_, v_;
  long steps_ = 0;
};

/// Linear warmup to `peak`, then peak * sqrt(warmup / step). Steps count from 1.
double inverse_sqrt_schedule(long step, double peak, long warmup_steps);

}  // namespace objectives
SEQRISK_END_NAMESPACE
