#include "arm/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <utility>

#include <Eigen/Core>

#include "arm/errors.hpp"

namespace arm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool starts_with(std::string_view text, std::string_view prefix) {
  return text.substr(0, prefix.size()) == prefix;
}

// ---- ParameterStore ----------------------------------------------------

Parameter& ParameterStore::create(std::string path, Shape shape) {
  if (params_.count(path)) throw ContractError("duplicate parameter path: " + path);
  for (auto e : shape)
    if (e == 0) throw ShapeError("parameter " + path + " has zero extent " + shape_string(shape));
  const auto n = shape_size(shape);
  Parameter p;
  p.path = path;
  p.shape = std::move(shape);
  p.value.assign(n, 0.0);
  p.grad.assign(n, 0.0);
  p.sq_grad_avg.assign(n, 0.0);
  p.sq_update_avg.assign(n, 0.0);
  auto [it, inserted] = params_.emplace(std::move(path), std::move(p));
  return it->second;
}

Parameter& ParameterStore::at(std::string_view path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw ContractError("unknown parameter: " + std::string(path));
  return it->second;
}

const Parameter& ParameterStore::at(std::string_view path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw ContractError("unknown parameter: " + std::string(path));
  return it->second;
}

bool ParameterStore::contains(std::string_view path) const { return params_.find(path) != params_.end(); }

std::vector<std::string> ParameterStore::paths(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [path, p] : params_)
    if (starts_with(path, prefix)) out.push_back(path);
  return out;
}

void ParameterStore::zero_grad(std::string_view prefix) {
  for (auto& [path, p] : params_) {
    if (!starts_with(path, prefix)) continue;
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
    p.has_grad = true;
  }
}

void ParameterStore::clear_grad(std::string_view prefix) {
  for (auto& [path, p] : params_) {
    if (!starts_with(path, prefix)) continue;
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
    p.has_grad = false;
  }
}

std::uint64_t ParameterStore::fingerprint(std::string_view prefix) const {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* bytes, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [path, p] : params_) {
    if (!starts_with(path, prefix)) continue;
    mix(path.data(), path.size());
    mix(p.value.data(), p.value.size() * sizeof(double));
  }
  return h;
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.params_.size() != b.params_.size()) return false;
  auto bits_equal = [](const std::vector<double>& x, const std::vector<double>& y) {
    return x.size() == y.size() && std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) == 0;
  };
  for (auto ia = a.params_.begin(), ib = b.params_.begin(); ia != a.params_.end(); ++ia, ++ib) {
    const auto& pa = ia->second;
    const auto& pb = ib->second;
    if (ia->first != ib->first || pa.shape != pb.shape) return false;
    if (!bits_equal(pa.value, pb.value) || !bits_equal(pa.sq_grad_avg, pb.sq_grad_avg) ||
        !bits_equal(pa.sq_update_avg, pb.sq_update_avg))
      return false;
  }
  return true;
}

void adadelta_step(ParameterStore& store, std::string_view prefix, const AdadeltaOptions& options) {
  if (!(options.rho > 0.0 && options.rho < 1.0)) throw ContractError("adadelta: rho must lie in (0,1)");
  if (!(options.eps > 0.0)) throw ContractError("adadelta: eps must be positive");
  std::vector<std::string> missing;
  for (const auto& [path, p] : store)
    if (starts_with(path, prefix) && !p.has_grad) missing.push_back(path);
  if (!missing.empty()) {
    std::string msg = "adadelta: missing gradient for";
    for (const auto& m : missing) msg += " " + m;
    throw ContractError(msg);
  }
  const double rho = options.rho;
  const double eps = options.eps;
  for (auto& [path, p] : store) {
    if (!starts_with(path, prefix)) continue;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      p.sq_grad_avg[i] = rho * p.sq_grad_avg[i] + (1.0 - rho) * g * g;
      const double dx = -std::sqrt(p.sq_update_avg[i] + eps) / std::sqrt(p.sq_grad_avg[i] + eps) * g;
      p.sq_update_avg[i] = rho * p.sq_update_avg[i] + (1.0 - rho) * dx * dx;
      p.value[i] += dx;
    }
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
    p.has_grad = false;
  }
}

// ---- Value / Graph -----------------------------------------------------

const Shape& Value::shape() const { return graph_->shape_of(id_); }
std::size_t Value::size() const { return graph_->data_of(id_).size(); }
std::span<const double> Value::data() const { return graph_->data_of(id_); }
std::span<const double> Value::grad() const { return graph_->grad_of(id_); }

double Value::item() const {
  if (size() != 1) throw ContractError("item() on non-scalar value of shape " + shape_string(shape()));
  return data()[0];
}

std::vector<double> Value::to_vector() const {
  auto d = data();
  return {d.begin(), d.end()};
}

Value Graph::constant(Shape shape, std::vector<double> data) {
  if (shape_size(shape) != data.size())
    throw ShapeError("constant of shape " + shape_string(shape) + " given " + std::to_string(data.size()) + " values");
  return record(std::move(shape), std::move(data), {}, nullptr);
}

Value Graph::constant(std::span<const double> data) {
  return constant(Shape{data.size()}, std::vector<double>(data.begin(), data.end()));
}

Value Graph::scalar(double v) { return constant(Shape{1}, {v}); }

Value Graph::zeros(Shape shape) {
  const auto n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, 0.0));
}

Value Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Value(this, it->second);
  Value v = record(p.shape, p.value, {}, nullptr);
  nodes_[v.id()].param = &p;
  param_nodes_.emplace(&p, v.id());
  return v;
}

Value Graph::record(Shape shape, std::vector<double> data, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.shape = std::move(shape);
  n.data = std::move(data);
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Value(this, nodes_.size() - 1);
}

std::span<double> Graph::grad_buffer(std::size_t id) {
  auto& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
  return n.grad;
}

void Graph::backward(const Value& loss) {
  if (&loss.graph() != this) throw ContractError("backward: loss belongs to another graph");
  if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
  for (auto& n : nodes_) n.grad.clear();
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    // grad_buffer never reallocates nodes_, so the reference stays valid.
    auto& n = nodes_[id];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
  // Leaves that were not reached still get a (zero) gradient.
  for (std::size_t id = 0; id < nodes_.size(); ++id)
    if (!nodes_[id].backward) grad_buffer(id);
}

void Graph::accumulate_param_grads() const {
  for (const auto& n : nodes_) {
    if (!n.param) continue;
    auto& p = *n.param;
    if (!n.grad.empty())
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] += n.grad[i];
    p.has_grad = true;
  }
}

// ---- primitive ops -----------------------------------------------------

namespace {

Graph& same_graph(const Value& a, const Value& b) {
  if (!a.valid() || !b.valid()) throw ContractError("operation on an empty Value");
  if (&a.graph() != &b.graph()) throw ContractError("operands belong to different graphs");
  return a.graph();
}

void require_same_shape(const char* op, const Value& a, const Value& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

// Shared helper for unary elementwise ops: local derivative computed from
// input x and output y.
template <class F, class D>
Value unary(const Value& a, F forward, D derivative) {
  auto& g = a.graph();
  auto in = a.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = forward(in[i]);
  const auto ia = a.id();
  return g.record(a.shape(), std::move(out), {ia}, [ia, derivative](Graph& gr, std::size_t self) {
    auto x = gr.data_of(ia);
    auto y = gr.data_of(self);
    auto gy = gr.grad_of(self);
    auto gx = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * derivative(x[i], y[i]);
  });
}

std::size_t last_extent(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

Value matmul(const Value& a, const Value& b) {
  auto& g = same_graph(a, b);
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.size() != 2 || (sb.size() != 1 && sb.size() != 2) || sa[1] != sb[0])
    throw ShapeError("matmul: shape mismatch " + shape_string(sa) + " vs " + shape_string(sb));
  const std::size_t m = sa[0], k = sa[1], n = sb.size() == 2 ? sb[1] : 1;
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  using MMap = Eigen::Map<RowMat>;
  std::vector<double> out(m * n, 0.0);
  MMap(out.data(), m, n).noalias() = CMap(a.data().data(), m, k) * CMap(b.data().data(), k, n);
  Shape shape = sb.size() == 2 ? Shape{m, n} : Shape{m};
  const auto ia = a.id(), ib = b.id();
  return g.record(std::move(shape), std::move(out), {ia, ib}, [ia, ib, m, k, n](Graph& gr, std::size_t self) {
    const CMap G(gr.grad_of(self).data(), m, n);
    MMap(gr.grad_buffer(ia).data(), m, k).noalias() += G * CMap(gr.data_of(ib).data(), k, n).transpose();
    MMap(gr.grad_buffer(ib).data(), k, n).noalias() += CMap(gr.data_of(ia).data(), m, k).transpose() * G;
  });
}

Value add(const Value& a, const Value& b) {
  auto& g = same_graph(a, b);
  require_same_shape("add", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  const auto ia = a.id(), ib = b.id();
  return g.record(a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph& gr, std::size_t self) {
    auto G = gr.grad_of(self);
    for (auto id : {ia, ib}) {
      auto gx = gr.grad_buffer(id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += G[i];
    }
  });
}

Value sub(const Value& a, const Value& b) {
  auto& g = same_graph(a, b);
  require_same_shape("sub", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  const auto ia = a.id(), ib = b.id();
  return g.record(a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph& gr, std::size_t self) {
    auto G = gr.grad_of(self);
    auto ga = gr.grad_buffer(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += G[i];
    auto gb = gr.grad_buffer(ib);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= G[i];
  });
}

Value mul(const Value& a, const Value& b) {
  auto& g = same_graph(a, b);
  require_same_shape("mul", a, b);
  auto x = a.data(), y = b.data();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  const auto ia = a.id(), ib = b.id();
  return g.record(a.shape(), std::move(out), {ia, ib}, [ia, ib](Graph& gr, std::size_t self) {
    auto G = gr.grad_of(self);
    auto x = gr.data_of(ia), y = gr.data_of(ib);
    {
      auto ga = gr.grad_buffer(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += G[i] * y[i];
    }
    auto gb = gr.grad_buffer(ib);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += G[i] * x[i];
  });
}

Value add_scalar(const Value& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Value scale(const Value& a, double s) {
  return unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Value concat(std::span<const Value> parts) {
  if (parts.empty()) throw ContractError("concat: no operands");
  auto& g = parts.front().graph();
  const Shape& first = parts.front().shape();
  Shape lead(first.begin(), first.end() - (first.empty() ? 0 : 1));
  std::size_t rows = shape_size(lead);
  std::vector<std::size_t> widths;
  std::vector<std::size_t> ids;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (&p.graph() != &g) throw ContractError("concat: operands belong to different graphs");
    const Shape& s = p.shape();
    Shape l(s.begin(), s.end() - (s.empty() ? 0 : 1));
    if (l != lead)
      throw ShapeError("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(s));
    widths.push_back(last_extent(s));
    ids.push_back(p.id());
    total += widths.back();
  }
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto d = parts[k].data();
    for (std::size_t r = 0; r < rows; ++r)
      std::copy_n(d.begin() + r * widths[k], widths[k], out.begin() + r * total + offset);
    offset += widths[k];
  }
  Shape shape = lead;
  shape.push_back(total);
  auto inputs = ids;
  return g.record(std::move(shape), std::move(out), std::move(inputs),
                  [ids, widths, rows, total](Graph& gr, std::size_t self) {
                    auto G = gr.grad_of(self);
                    std::size_t offset = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      auto gx = gr.grad_buffer(ids[k]);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                          gx[r * widths[k] + j] += G[r * total + offset + j];
                      offset += widths[k];
                    }
                  });
}

Value concat(const Value& a, const Value& b) {
  const Value parts[] = {a, b};
  return concat(parts);
}

Value sigmoid(const Value& a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Value tanh(const Value& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Value relu(const Value& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Value exp(const Value& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Value log(const Value& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Value softmax(const Value& a) {
  auto& g = a.graph();
  const std::size_t width = last_extent(a.shape());
  const std::size_t rows = a.size() / width;
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * width;
    const double mx = *std::max_element(row, row + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += (out[r * width + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] /= z;
  }
  const auto ia = a.id();
  return g.record(a.shape(), std::move(out), {ia}, [ia, rows, width](Graph& gr, std::size_t self) {
    auto y = gr.data_of(self);
    auto G = gr.grad_of(self);
    auto gx = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < width; ++j) dot += G[r * width + j] * y[r * width + j];
      for (std::size_t j = 0; j < width; ++j) gx[r * width + j] += y[r * width + j] * (G[r * width + j] - dot);
    }
  });
}

Value log_softmax(const Value& a) {
  auto& g = a.graph();
  const std::size_t width = last_extent(a.shape());
  const std::size_t rows = a.size() / width;
  auto x = a.data();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = x.data() + r * width;
    const double mx = *std::max_element(row, row + width);
    double z = 0.0;
    for (std::size_t j = 0; j < width; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < width; ++j) out[r * width + j] = row[j] - lse;
  }
  const auto ia = a.id();
  return g.record(a.shape(), std::move(out), {ia}, [ia, rows, width](Graph& gr, std::size_t self) {
    auto y = gr.data_of(self);
    auto G = gr.grad_of(self);
    auto gx = gr.grad_buffer(ia);
    for (std::size_t r = 0; r < rows; ++r) {
      double total = 0.0;
      for (std::size_t j = 0; j < width; ++j) total += G[r * width + j];
      for (std::size_t j = 0; j < width; ++j)
        gx[r * width + j] += G[r * width + j] - std::exp(y[r * width + j]) * total;
    }
  });
}

Value lookup(const Value& table, std::size_t index) {
  auto& g = table.graph();
  const auto& s = table.shape();
  if (s.size() != 2) throw ShapeError("lookup: table must be rank 2, got " + shape_string(s));
  if (index >= s[0])
    throw IndexError("lookup: index " + std::to_string(index) + " out of range for " + std::to_string(s[0]) + " rows");
  const std::size_t cols = s[1];
  auto d = table.data();
  std::vector<double> out(d.begin() + index * cols, d.begin() + (index + 1) * cols);
  const auto it = table.id();
  return g.record(Shape{cols}, std::move(out), {it}, [it, index, cols](Graph& gr, std::size_t self) {
    auto G = gr.grad_of(self);
    auto gt = gr.grad_buffer(it);
    for (std::size_t j = 0; j < cols; ++j) gt[index * cols + j] += G[j];
  });
}

Value pick(const Value& a, std::size_t index) {
  auto& g = a.graph();
  if (index >= a.size())
    throw IndexError("pick: index " + std::to_string(index) + " out of range for size " + std::to_string(a.size()));
  const auto ia = a.id();
  return g.record(Shape{1}, {a.data()[index]}, {ia}, [ia, index](Graph& gr, std::size_t self) {
    gr.grad_buffer(ia)[index] += gr.grad_of(self)[0];
  });
}

Value sum(const Value& a) {
  auto& g = a.graph();
  double s = 0.0;
  for (double v : a.data()) s += v;
  const auto ia = a.id();
  return g.record(Shape{1}, {s}, {ia}, [ia](Graph& gr, std::size_t self) {
    const double G = gr.grad_of(self)[0];
    auto gx = gr.grad_buffer(ia);
    for (auto& v : gx) v += G;
  });
}

Value mean(const Value& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

}  // namespace arm
