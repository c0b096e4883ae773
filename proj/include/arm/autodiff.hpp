#pragma once

// Dense tensors with define-by-run reverse-mode differentiation.
//
// A Graph owns every node created while evaluating one forward pass. Values
// are cheap handles into a graph. Learnable tensors live in a ParameterStore
// and enter a graph through Graph::param, which yields one leaf node per
// parameter per graph. After Graph::backward the leaf gradients can be summed
// into the store with Graph::accumulate_param_grads.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace arm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Parameter {
  std::string path;
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool has_grad = false;
  // ADADELTA running averages of g^2 and dx^2.
  std::vector<double> sq_grad_avg;
  std::vector<double> sq_update_avg;

  std::size_t size() const { return value.size(); }
};

class ParameterStore {
 public:
  using Map = std::map<std::string, Parameter, std::less<>>;

  // Creates a zero-initialized parameter. Throws ContractError if the path exists.
  Parameter& create(std::string path, Shape shape);

  Parameter& at(std::string_view path);
  const Parameter& at(std::string_view path) const;
  bool contains(std::string_view path) const;

  std::vector<std::string> paths(std::string_view prefix = {}) const;

  // Marks every gradient under prefix as present and zero.
  void zero_grad(std::string_view prefix);
  // Drops gradients under prefix (has_grad = false).
  void clear_grad(std::string_view prefix);

  // FNV-1a over paths and raw value bytes under prefix.
  std::uint64_t fingerprint(std::string_view prefix) const;

  std::size_t size() const { return params_.size(); }
  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  Map params_;
};

bool starts_with(std::string_view text, std::string_view prefix);

struct AdadeltaOptions {
  double rho = 0.95;
  double eps = 1e-6;
};

// One ADADELTA update of every parameter under prefix, then clears their
// gradients. Parameters outside the prefix are not touched.
void adadelta_step(ParameterStore& store, std::string_view prefix, const AdadeltaOptions& options);

class Graph;

class Value {
 public:
  Value() = default;

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Shape& shape() const;
  std::size_t size() const;
  std::span<const double> data() const;
  // Empty until backward has run.
  std::span<const double> grad() const;
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }
  std::vector<double> to_vector() const;

 private:
  friend class Graph;
  Value(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

class Graph {
 public:
  // Backward receives the graph and the id of the node being differentiated;
  // it reads the node's grad and accumulates into its inputs.
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Value constant(Shape shape, std::vector<double> data);
  Value constant(std::span<const double> data);  // 1-D
  Value scalar(double v);
  Value zeros(Shape shape);
  // Leaf bound to a stored parameter. Repeated calls return the same node.
  Value param(Parameter& p);

  // Records a computed node. Used by the primitive ops.
  Value record(Shape shape, std::vector<double> data, std::vector<std::size_t> inputs, BackwardFn backward);

  void backward(const Value& loss);
  // Adds each parameter leaf's gradient into Parameter::grad (has_grad set).
  void accumulate_param_grads() const;

  std::size_t node_count() const { return nodes_.size(); }

  const Shape& shape_of(std::size_t id) const { return nodes_[id].shape; }
  std::span<const double> data_of(std::size_t id) const { return nodes_[id].data; }
  std::span<const double> grad_of(std::size_t id) const { return nodes_[id].grad; }
  // Mutable gradient buffer of an input, allocated on first use.
  std::span<double> grad_buffer(std::size_t id);

 private:
  struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// ---- primitive ops -----------------------------------------------------

// [m,k] x [k,n] -> [m,n] and [m,k] x [k] -> [m].
Value matmul(const Value& a, const Value& b);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value add_scalar(const Value& a, double s);
Value scale(const Value& a, double s);
// Concatenation along the last axis. Leading extents must match.
Value concat(std::span<const Value> parts);
Value concat(const Value& a, const Value& b);
Value sigmoid(const Value& a);
Value tanh(const Value& a);
Value relu(const Value& a);
Value exp(const Value& a);
Value log(const Value& a);
Value softmax(const Value& a);
Value log_softmax(const Value& a);
// Row `index` of a [rows, cols] table, shape [cols].
Value lookup(const Value& table, std::size_t index);
// Element `index` of a 1-D value, as a scalar.
Value pick(const Value& a, std::size_t index);
Value sum(const Value& a);
Value mean(const Value& a);

}  // namespace arm
