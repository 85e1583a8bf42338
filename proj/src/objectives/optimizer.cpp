#include "seqrisk/objectives/optimizer.hpp"

#include <algorithm>
#include <cmath>

SEQRISK_BEGIN_NAMESPACE
namespace objectives {

Adam::Adam(const seqmodel::ParameterStore& params, AdamSettings settings) : settings_(settings) {
  for (const auto& [name, t] : params.tensors()) {
    m_.emplace_back(t.numel(), 0.0);
    v_.emplace_back(t.numel(), 0.0);
  }
}

void Adam::reset() {
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
  for (auto& v : v_) std::fill(v.begin(), v.end(), 0.0);
  steps_ = 0;
}

double Adam::step(seqmodel::ParameterStore& params, double learning_rate, double clip) {
  auto& tensors = params.tensors();
  if (tensors.size() != m_.size()) throw ContractError("Adam: parameter set changed since construction");

  double sq = 0.0;
  for (const auto& [name, t] : tensors) {
    if (!t.has_grad()) continue;
    for (Scalar g : t.grad()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("Adam: non-finite gradient norm");
  const double factor = (clip > 0.0 && norm > clip) ? clip / norm : 1.0;

  ++steps_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    numkit::Tensor& t = tensors[i].second;
    if (!t.has_grad()) continue;
    const auto grad = t.grad();
    auto values = t.mutable_values();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grad[j] * factor;
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      const double update = (m[j] / correction1) / (std::sqrt(v[j] / correction2) + settings_.epsilon);
      values[j] = static_cast<Scalar>(values[j] - learning_rate * update);
    }
  }
  return norm;
}

double inverse_sqrt_schedule(long step, double peak, long warmup_steps) {
  if (step < 1) throw ContractError("inverse_sqrt_schedule: steps count from 1");
  if (warmup_steps <= 0) return peak / std::sqrt(static_cast<double>(step));
  const double s = static_cast<double>(step), w = static_cast<double>(warmup_steps);
  return peak * std::min(s / w, std::sqrt(w / s));
}

}  // namespace objectives
SEQRISK_END_NAMESPACE
