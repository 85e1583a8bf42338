#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seqrisk/numkit/tensor.hpp"

SEQRISK_BEGIN_NAMESPACE
namespace numkit {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;
using GradientMap = std::map<std::string, Tensor>;

/// Tape of differentiable operations recorded during one forward pass.
///
/// Ops record into the graph bound to the calling thread by a Scope; with no
/// scope bound they only compute values. Nodes are appended in execution
/// order, so reverse traversal is a valid topological order.
class Graph {
 public:
  using BackwardFn = std::function<void()>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  class Scope {
   public:
    explicit Scope(Graph& graph);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Graph* previous_;
  };

  // Suspends recording on this thread, e.g. while sampling inside a training step.
  class NoGrad {
   public:
    NoGrad();
    ~NoGrad();
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;

   private:
    Graph* previous_;
  };

  static Graph* active();

  void record(Tensor output, BackwardFn fn);

  // Seeds d(loss)/d(loss) = 1 and runs every node once in reverse order.
  // Gradients accumulate into the leaves' buffers.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor output;
    BackwardFn fn;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

/// Runs backward on `graph` and returns copies of the gradients of `params`.
/// Parameters not reached by the loss get zero gradients.
GradientMap backward(Graph& graph, const Tensor& loss, const NamedTensors& params);

}  // namespace numkit
SEQRISK_END_NAMESPACE
