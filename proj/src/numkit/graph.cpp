#include "seqrisk/numkit/graph.hpp"

#include <algorithm>

SEQRISK_BEGIN_NAMESPACE
namespace numkit {

namespace {
thread_local Graph* active_graph = nullptr;
}

Graph::Scope::Scope(Graph& graph) : previous_(active_graph) { active_graph = &graph; }

Graph::Scope::~Scope() { active_graph = previous_; }

Graph::NoGrad::NoGrad() : previous_(active_graph) { active_graph = nullptr; }

Graph::NoGrad::~NoGrad() { active_graph = previous_; }

Graph* Graph::active() { return active_graph; }

void Graph::record(Tensor output, BackwardFn fn) {
  if (consumed_) throw ContractError("recording into a graph that was already backpropagated");
  nodes_.push_back(Node{std::move(output), std::move(fn)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward needs a scalar loss, got shape " +
                        (loss.defined() ? shape_string(loss.shape()) : std::string("<undefined>")));
  }
  if (consumed_) throw ContractError("graph already backpropagated");
  consumed_ = true;
  loss.mutable_grad()[0] += Scalar(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->fn();
  }
  nodes_.clear();
}

GradientMap backward(Graph& graph, const Tensor& loss, const NamedTensors& params) {
  for (const auto& [name, p] : params) p.zero_grad();
  graph.backward(loss);
  GradientMap out;
  for (const auto& [name, p] : params) {
    Tensor g(p.shape());
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), g.mutable_values().begin());
    out.emplace(name, std::move(g));
  }
  return out;
}

}  // namespace numkit
SEQRISK_END_NAMESPACE
