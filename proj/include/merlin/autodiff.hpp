// Copyright (c) 2026 The merlin-despeckle Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "merlin/error.hpp"

/// Reverse-mode automatic differentiation over dense NCHW tensors with a fixed
/// operator set: conv2d (3x3 / 1x1, stride 1, same padding), leaky_relu, maxpool2,
/// upsample2_nearest, channel_concat, add, subtract, multiply_scalar, exp, log,
/// reduce_mean and reduce_sum. The scalar type is a template parameter so the same
/// graph can be re-evaluated in double precision for gradient checking.
namespace merlin::ad {

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t size() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{}) : shape(s), data(s.size(), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(s), data(std::move(values)) {
    require(data.size() == shape.size(), ErrorCode::shape_mismatch, "tensor data does not match shape " + s.str());
  }

  std::size_t size() const noexcept { return data.size(); }
  T& at(int n, int c, int y, int x) {
    return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }
  const T& at(int n, int c, int y, int x) const {
    return data[((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x];
  }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }
};

enum class Op {
  input,
  parameter,
  conv2d,
  leaky_relu,
  maxpool2,
  upsample2,
  concat,
  add,
  subtract,
  multiply_scalar,
  exp,
  log,
  reduce_mean,
  reduce_sum,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::parameter: return "parameter";
    case Op::conv2d: return "conv2d";
    case Op::leaky_relu: return "leaky_relu";
    case Op::maxpool2: return "maxpool2";
    case Op::upsample2: return "upsample2_nearest";
    case Op::concat: return "channel_concat";
    case Op::add: return "add";
    case Op::subtract: return "subtract";
    case Op::multiply_scalar: return "multiply_scalar";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::reduce_mean: return "reduce_mean";
    case Op::reduce_sum: return "reduce_sum";
  }
  return "?";
}

using NodeId = int;

namespace detail {

/// Runs f(i) for i in [0, n) on up to `threads` workers. Work items must write disjoint memory.
template <typename F>
void parallel_for(int n, int threads, F&& f) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) f(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += workers) f(i);
    });
  }
  for (auto& th : pool) th.join();
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Unfolds one sample (c, h, w) into a (c·k·k, h·w) patch matrix, zero padding k/2.
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, T* col) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    const T* plane = x + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          T* dst = row + static_cast<std::size_t>(y) * w;
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) {
            std::fill(dst, dst + w, T{});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          std::fill(dst, dst + x_lo, T{});
          for (int xx = x_lo; xx < x_hi; ++xx) dst[xx] = src[xx + dx];
          std::fill(dst + std::max(x_hi, x_lo), dst + w, T{});
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates the patch matrix back into (c, h, w).
template <typename T>
void col2im_add(const T* col, int c, int h, int w, int k, T* x) {
  const int pad = k / 2;
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int ci = 0; ci < c; ++ci) {
    T* plane = x + static_cast<std::size_t>(ci) * hw;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * hw;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx), x_hi = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* src = row + static_cast<std::size_t>(y) * w;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          for (int xx = x_lo; xx < x_hi; ++xx) dst[xx + dx] += src[xx];
        }
      }
    }
  }
}

}  // namespace detail

template <typename T>
class Graph {
 public:
  struct Node {
    Op op = Op::input;
    std::vector<NodeId> inputs;
    std::string name;        // input / parameter name
    int channels = 0;        // declared channel count for inputs
    double alpha = 0.0;      // leaky slope, scale factor, or exp clamp
    double beta = 0.0;       // additive offset for multiply_scalar
    bool batch_mean = false; // reduce_sum: divide by batch size
    double fault = 1.0;      // backward gradient multiplier (tests only)
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<std::uint32_t> argmax;  // maxpool2 winners
  };

  // ---- construction --------------------------------------------------------

  NodeId input(std::string name, int channels) {
    require(channels >= 1, ErrorCode::invalid_argument, "input channels must be >= 1");
    for (const auto& n : nodes_) {
      require(!(n.op == Op::input && n.name == name), ErrorCode::invalid_argument, "duplicate input '" + name + "'");
    }
    Node node;
    node.op = Op::input;
    node.name = std::move(name);
    node.channels = channels;
    return push(std::move(node));
  }

  NodeId parameter(std::string name, Shape shape) {
    for (const auto& n : nodes_) {
      require(!(n.op == Op::parameter && n.name == name), ErrorCode::invalid_argument,
              "duplicate parameter '" + name + "'");
    }
    Node node;
    node.op = Op::parameter;
    node.name = std::move(name);
    node.value = Tensor<T>(shape);
    node.grad.assign(shape.size(), T{});
    const NodeId id = push(std::move(node));
    params_.push_back(id);
    return id;
  }

  /// weight: (c_out, c_in, k, k); bias: (1, c_out, 1, 1).
  NodeId conv2d(NodeId x, NodeId weight, NodeId bias) {
    const Shape ws = nodes_.at(static_cast<std::size_t>(weight)).value.shape;
    require(ws.h == ws.w && (ws.h == 1 || ws.h == 3), ErrorCode::invalid_argument, "conv2d supports 1x1 and 3x3 kernels");
    require(nodes_.at(static_cast<std::size_t>(bias)).value.shape == (Shape{1, ws.n, 1, 1}),
            ErrorCode::shape_mismatch, "conv2d bias shape");
    return op(Op::conv2d, {x, weight, bias});
  }
  NodeId leaky_relu(NodeId x, double slope) { return op(Op::leaky_relu, {x}, slope); }
  NodeId maxpool2(NodeId x) { return op(Op::maxpool2, {x}); }
  NodeId upsample2(NodeId x) { return op(Op::upsample2, {x}); }
  NodeId concat(NodeId a, NodeId b) { return op(Op::concat, {a, b}); }
  NodeId add(NodeId a, NodeId b) { return op(Op::add, {a, b}); }
  NodeId subtract(NodeId a, NodeId b) { return op(Op::subtract, {a, b}); }
  /// y = factor·x + offset
  NodeId multiply_scalar(NodeId x, double factor, double offset = 0.0) {
    return op(Op::multiply_scalar, {x}, factor, offset);
  }
  /// y = exp(min(x, clamp)); the gradient is zero where x exceeds the clamp.
  NodeId exp(NodeId x, double clamp = std::numeric_limits<double>::infinity()) { return op(Op::exp, {x}, clamp); }
  NodeId log(NodeId x) { return op(Op::log, {x}); }
  NodeId reduce_mean(NodeId x) { return op(Op::reduce_mean, {x}); }
  /// Sum of all elements; with `batch_mean`, divided by the batch dimension n.
  NodeId reduce_sum(NodeId x, bool batch_mean = false) {
    const NodeId id = op(Op::reduce_sum, {x});
    nodes_.back().batch_mean = batch_mean;
    return id;
  }

  // ---- introspection -------------------------------------------------------

  std::size_t node_count() const noexcept { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }
  const std::vector<NodeId>& parameter_ids() const noexcept { return params_; }

  Tensor<T>& param(NodeId id) { return checked_param(id).value; }
  const Tensor<T>& param(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }
  std::vector<T>& grad(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)).grad; }
  const std::vector<T>& grad(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).grad; }
  const Tensor<T>& value(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }

  NodeId find_parameter(const std::string& name) const {
    for (NodeId id : params_) {
      if (nodes_[static_cast<std::size_t>(id)].name == name) return id;
    }
    return -1;
  }

  std::size_t parameter_count() const {
    std::size_t total = 0;
    for (NodeId id : params_) total += nodes_[static_cast<std::size_t>(id)].value.size();
    return total;
  }

  void set_threads(int threads) { threads_ = std::max(1, threads); }
  int threads() const noexcept { return threads_; }

  /// Scales the gradient a node sends to its inputs. Exists only to build negative
  /// controls for gradient checking.
  void inject_backward_fault(NodeId id, double factor) { nodes_.at(static_cast<std::size_t>(id)).fault = factor; }

  /// Same topology and parameter values in another scalar type.
  template <typename U>
  Graph<U> cast() const {
    Graph<U> out;
    out.threads_ = threads_;
    out.params_ = params_;
    out.nodes_.reserve(nodes_.size());
    for (const auto& n : nodes_) {
      typename Graph<U>::Node m;
      m.op = n.op;
      m.inputs = n.inputs;
      m.name = n.name;
      m.channels = n.channels;
      m.alpha = n.alpha;
      m.beta = n.beta;
      m.batch_mean = n.batch_mean;
      m.fault = n.fault;
      if (n.op == Op::parameter) {
        m.value = n.value.template cast<U>();
        m.grad.assign(n.value.size(), U{});
      }
      out.nodes_.push_back(std::move(m));
    }
    return out;
  }

  // ---- evaluation ----------------------------------------------------------

  /// Evaluates every ancestor of `target` and returns its value. Activations are
  /// cached for a subsequent backward() from the same target.
  const Tensor<T>& forward(const std::map<std::string, Tensor<T>>& inputs, NodeId target) {
    require(target >= 0 && static_cast<std::size_t>(target) < nodes_.size(), ErrorCode::invalid_argument,
            "forward target out of range");
    for (const auto& [name, tensor] : inputs) {
      bool known = false;
      for (const auto& n : nodes_) known = known || (n.op == Op::input && n.name == name);
      if (!known) throw Error(ErrorCode::unknown_input, "graph has no input named '" + name + "'");
    }
    needed_ = ancestors(target);
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!needed_[i]) continue;
      Node& node = nodes_[i];
      if (node.op == Op::input) {
        auto it = inputs.find(node.name);
        if (it == inputs.end()) throw Error(ErrorCode::unknown_input, "missing value for input '" + node.name + "'");
        require(it->second.shape.c == node.channels && it->second.shape.size() == it->second.data.size() &&
                    it->second.shape.size() > 0,
                ErrorCode::shape_mismatch,
                "input '" + node.name + "' has shape " + it->second.shape.str() + ", expected " +
                    std::to_string(node.channels) + " channels");
        node.value = it->second;
      } else if (node.op != Op::parameter) {
        eval_node(static_cast<int>(i));
      }
    }
    forwarded_ = target;
    return nodes_[static_cast<std::size_t>(target)].value;
  }

  /// Fills d(loss)/d(node) for every ancestor of `loss`; parameter gradients are overwritten.
  void backward(NodeId loss) {
    if (forwarded_ != loss) {
      throw Error(ErrorCode::backward_before_forward, "backward requires a forward pass to the loss node");
    }
    Node& out = nodes_[static_cast<std::size_t>(loss)];
    require(out.value.size() == 1, ErrorCode::shape_mismatch, "backward needs a scalar loss");
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (needed_[i]) nodes_[i].grad.assign(nodes_[i].value.size(), T{});
    }
    out.grad[0] = T{1};
    for (int i = loss; i >= 0; --i) {
      if (!needed_[static_cast<std::size_t>(i)]) continue;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.op == Op::input || n.op == Op::parameter) continue;
      backprop_node(i);
    }
  }

 private:
  template <typename U>
  friend class Graph;

  NodeId push(Node node) {
    nodes_.push_back(std::move(node));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  NodeId op(Op kind, std::vector<NodeId> in, double alpha = 0.0, double beta = 0.0) {
    for (NodeId id : in) {
      require(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(), ErrorCode::invalid_argument,
              std::string(op_name(kind)) + ": input node does not exist");
    }
    Node node;
    node.op = kind;
    node.inputs = std::move(in);
    node.alpha = alpha;
    node.beta = beta;
    return push(std::move(node));
  }

  Node& checked_param(NodeId id) {
    Node& n = nodes_.at(static_cast<std::size_t>(id));
    require(n.op == Op::parameter, ErrorCode::invalid_argument, "node is not a parameter");
    return n;
  }

  std::vector<bool> ancestors(NodeId target) const {
    std::vector<bool> mark(nodes_.size(), false);
    mark[static_cast<std::size_t>(target)] = true;
    for (int i = target; i >= 0; --i) {
      if (!mark[static_cast<std::size_t>(i)]) continue;
      for (NodeId in : nodes_[static_cast<std::size_t>(i)].inputs) mark[static_cast<std::size_t>(in)] = true;
    }
    return mark;
  }

  [[noreturn]] void shape_error(int id, const std::string& what) const {
    throw Error(ErrorCode::shape_mismatch,
                "node " + std::to_string(id) + " (" + op_name(nodes_[static_cast<std::size_t>(id)].op) + "): " + what);
  }

  const Tensor<T>& in_value(const Node& n, std::size_t k) const {
    return nodes_[static_cast<std::size_t>(n.inputs[k])].value;
  }

  void eval_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    switch (n.op) {
      case Op::conv2d: eval_conv(id); break;
      case Op::leaky_relu: {
        const auto& x = in_value(n, 0);
        n.value = Tensor<T>(x.shape);
        const T slope = static_cast<T>(n.alpha);
        for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] = x.data[i] > T{0} ? x.data[i] : slope * x.data[i];
        break;
      }
      case Op::maxpool2: {
        const auto& x = in_value(n, 0);
        if (x.shape.h % 2 != 0 || x.shape.w % 2 != 0) shape_error(id, "odd spatial size " + x.shape.str());
        Shape s{x.shape.n, x.shape.c, x.shape.h / 2, x.shape.w / 2};
        n.value = Tensor<T>(s);
        n.argmax.assign(s.size(), 0);
        std::size_t o = 0;
        for (int b = 0; b < s.n; ++b) {
          for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
              for (int xx = 0; xx < s.w; ++xx, ++o) {
                std::size_t best = ((static_cast<std::size_t>(b) * s.c + c) * x.shape.h + 2 * y) * x.shape.w + 2 * xx;
                const std::size_t cand[3] = {best + 1, best + static_cast<std::size_t>(x.shape.w),
                                             best + static_cast<std::size_t>(x.shape.w) + 1};
                for (std::size_t k : cand) {
                  if (x.data[k] > x.data[best]) best = k;
                }
                n.value.data[o] = x.data[best];
                n.argmax[o] = static_cast<std::uint32_t>(best);
              }
            }
          }
        }
        break;
      }
      case Op::upsample2: {
        const auto& x = in_value(n, 0);
        Shape s{x.shape.n, x.shape.c, x.shape.h * 2, x.shape.w * 2};
        n.value = Tensor<T>(s);
        for (int b = 0; b < s.n; ++b) {
          for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
              for (int xx = 0; xx < s.w; ++xx) n.value.at(b, c, y, xx) = x.at(b, c, y / 2, xx / 2);
            }
          }
        }
        break;
      }
      case Op::concat: {
        const auto& a = in_value(n, 0);
        const auto& b = in_value(n, 1);
        if (a.shape.n != b.shape.n || a.shape.h != b.shape.h || a.shape.w != b.shape.w) {
          shape_error(id, a.shape.str() + " vs " + b.shape.str());
        }
        Shape s{a.shape.n, a.shape.c + b.shape.c, a.shape.h, a.shape.w};
        n.value = Tensor<T>(s);
        const std::size_t ablock = static_cast<std::size_t>(a.shape.c) * a.shape.plane();
        const std::size_t bblock = static_cast<std::size_t>(b.shape.c) * b.shape.plane();
        for (int k = 0; k < s.n; ++k) {
          T* dst = n.value.data.data() + static_cast<std::size_t>(k) * (ablock + bblock);
          std::copy_n(a.data.data() + k * ablock, ablock, dst);
          std::copy_n(b.data.data() + k * bblock, bblock, dst + ablock);
        }
        break;
      }
      case Op::add:
      case Op::subtract: {
        const auto& a = in_value(n, 0);
        const auto& b = in_value(n, 1);
        if (!(a.shape == b.shape)) shape_error(id, a.shape.str() + " vs " + b.shape.str());
        n.value = Tensor<T>(a.shape);
        if (n.op == Op::add) {
          for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = a.data[i] + b.data[i];
        } else {
          for (std::size_t i = 0; i < a.size(); ++i) n.value.data[i] = a.data[i] - b.data[i];
        }
        break;
      }
      case Op::multiply_scalar: {
        const auto& x = in_value(n, 0);
        n.value = Tensor<T>(x.shape);
        const T f = static_cast<T>(n.alpha), o = static_cast<T>(n.beta);
        for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] = f * x.data[i] + o;
        break;
      }
      case Op::exp: {
        const auto& x = in_value(n, 0);
        n.value = Tensor<T>(x.shape);
        const T clamp = static_cast<T>(n.alpha);
        for (std::size_t i = 0; i < x.size(); ++i) n.value.data[i] = std::exp(std::min(x.data[i], clamp));
        break;
      }
      case Op::log: {
        const auto& x = in_value(n, 0);
        n.value = Tensor<T>(x.shape);
        for (std::size_t i = 0; i < x.size(); ++i) {
          if (!(x.data[i] > T{0})) throw Error(ErrorCode::non_finite, "log of non-positive value at node " + std::to_string(id));
          n.value.data[i] = std::log(x.data[i]);
        }
        break;
      }
      case Op::reduce_mean:
      case Op::reduce_sum: {
        const auto& x = in_value(n, 0);
        n.value = Tensor<T>(Shape{1, 1, 1, 1});
        T acc{0};
        for (T v : x.data) acc += v;
        if (n.op == Op::reduce_mean) {
          acc /= static_cast<T>(x.size());
        } else if (n.batch_mean) {
          acc /= static_cast<T>(x.shape.n);
        }
        n.value.data[0] = acc;
        break;
      }
      case Op::input:
      case Op::parameter:
        break;
    }
  }

  void eval_conv(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const auto& x = in_value(n, 0);
    const auto& wt = in_value(n, 1);
    const auto& bias = in_value(n, 2);
    const int cout = wt.shape.n, cin = wt.shape.c, k = wt.shape.h;
    if (x.shape.c != cin) {
      shape_error(id, "input has " + std::to_string(x.shape.c) + " channels, kernel expects " + std::to_string(cin));
    }
    const Shape s{x.shape.n, cout, x.shape.h, x.shape.w};
    n.value = Tensor<T>(s);
    const int hw = x.shape.h * x.shape.w;
    const int ckk = cin * k * k;
    Eigen::Map<const detail::RowMat<T>> wm(wt.data.data(), cout, ckk);
    Eigen::Map<const detail::Vec<T>> bv(bias.data.data(), cout);
    detail::parallel_for(s.n, threads_, [&](int b) {
      const T* xb = x.data.data() + static_cast<std::size_t>(b) * cin * hw;
      Eigen::Map<detail::RowMat<T>> om(n.value.data.data() + static_cast<std::size_t>(b) * cout * hw, cout, hw);
      if (k == 1) {
        om.noalias() = wm * Eigen::Map<const detail::RowMat<T>>(xb, cin, hw);
      } else {
        std::vector<T> col(static_cast<std::size_t>(ckk) * hw);
        detail::im2col(xb, cin, x.shape.h, x.shape.w, k, col.data());
        om.noalias() = wm * Eigen::Map<const detail::RowMat<T>>(col.data(), ckk, hw);
      }
      om.colwise() += bv;
    });
  }

  void backprop_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const std::vector<T>& gy = n.grad;
    const T fault = static_cast<T>(n.fault);
    auto grad_in = [&](std::size_t k) -> std::vector<T>& { return nodes_[static_cast<std::size_t>(n.inputs[k])].grad; };
    switch (n.op) {
      case Op::conv2d: backprop_conv(id); break;
      case Op::leaky_relu: {
        const auto& x = in_value(n, 0);
        auto& gx = grad_in(0);
        const T slope = static_cast<T>(n.alpha);
        for (std::size_t i = 0; i < x.size(); ++i) gx[i] += fault * gy[i] * (x.data[i] > T{0} ? T{1} : slope);
        break;
      }
      case Op::maxpool2: {
        auto& gx = grad_in(0);
        for (std::size_t o = 0; o < gy.size(); ++o) gx[n.argmax[o]] += fault * gy[o];
        break;
      }
      case Op::upsample2: {
        auto& gx = grad_in(0);
        const Shape& s = n.value.shape;
        const Shape& xs = in_value(n, 0).shape;
        std::size_t o = 0;
        for (int b = 0; b < s.n; ++b) {
          for (int c = 0; c < s.c; ++c) {
            for (int y = 0; y < s.h; ++y) {
              for (int xx = 0; xx < s.w; ++xx, ++o) {
                gx[((static_cast<std::size_t>(b) * xs.c + c) * xs.h + y / 2) * xs.w + xx / 2] += fault * gy[o];
              }
            }
          }
        }
        break;
      }
      case Op::concat: {
        const auto& a = in_value(n, 0);
        const auto& b = in_value(n, 1);
        auto& ga = grad_in(0);
        auto& gb = grad_in(1);
        const std::size_t ablock = static_cast<std::size_t>(a.shape.c) * a.shape.plane();
        const std::size_t bblock = static_cast<std::size_t>(b.shape.c) * b.shape.plane();
        for (int k = 0; k < a.shape.n; ++k) {
          const T* src = gy.data() + static_cast<std::size_t>(k) * (ablock + bblock);
          for (std::size_t i = 0; i < ablock; ++i) ga[k * ablock + i] += fault * src[i];
          for (std::size_t i = 0; i < bblock; ++i) gb[k * bblock + i] += fault * src[ablock + i];
        }
        break;
      }
      case Op::add:
      case Op::subtract: {
        auto& ga = grad_in(0);
        const T sign = n.op == Op::add ? T{1} : T{-1};
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += fault * gy[i];
        auto& gb = grad_in(1);
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += fault * sign * gy[i];
        break;
      }
      case Op::multiply_scalar: {
        auto& gx = grad_in(0);
        const T f = static_cast<T>(n.alpha);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += fault * f * gy[i];
        break;
      }
      case Op::exp: {
        const auto& x = in_value(n, 0);
        auto& gx = grad_in(0);
        const T clamp = static_cast<T>(n.alpha);
        for (std::size_t i = 0; i < gy.size(); ++i) {
          if (x.data[i] < clamp) gx[i] += fault * gy[i] * n.value.data[i];
        }
        break;
      }
      case Op::log: {
        const auto& x = in_value(n, 0);
        auto& gx = grad_in(0);
        for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += fault * gy[i] / x.data[i];
        break;
      }
      case Op::reduce_mean:
      case Op::reduce_sum: {
        const auto& x = in_value(n, 0);
        auto& gx = grad_in(0);
        T scale = gy[0];
        if (n.op == Op::reduce_mean) {
          scale /= static_cast<T>(x.size());
        } else if (n.batch_mean) {
          scale /= static_cast<T>(x.shape.n);
        }
        for (auto& g : gx) g += fault * scale;
        break;
      }
      case Op::input:
      case Op::parameter:
        break;
    }
  }

  void backprop_conv(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const auto& x = in_value(n, 0);
    const auto& wt = in_value(n, 1);
    const int cout = wt.shape.n, cin = wt.shape.c, k = wt.shape.h;
    const int hw = x.shape.h * x.shape.w;
    const int ckk = cin * k * k;
    const int batch = x.shape.n;
    const T fault = static_cast<T>(n.fault);
    auto& gx = nodes_[static_cast<std::size_t>(n.inputs[0])].grad;
    auto& gw = nodes_[static_cast<std::size_t>(n.inputs[1])].grad;
    auto& gb = nodes_[static_cast<std::size_t>(n.inputs[2])].grad;
    Eigen::Map<const detail::RowMat<T>> wm(wt.data.data(), cout, ckk);

    // Per-sample weight/bias partials are reduced in sample order so results do
    // not depend on the worker count.
    std::vector<detail::RowMat<T>> dw(static_cast<std::size_t>(batch));
    std::vector<detail::Vec<T>> db(static_cast<std::size_t>(batch));
    const bool need_gx = nodes_[static_cast<std::size_t>(n.inputs[0])].op != Op::parameter;
    detail::parallel_for(batch, threads_, [&](int b) {
      Eigen::Map<const detail::RowMat<T>> g(n.grad.data() + static_cast<std::size_t>(b) * cout * hw, cout, hw);
      const T* xb = x.data.data() + static_cast<std::size_t>(b) * cin * hw;
      T* gxb = gx.data() + static_cast<std::size_t>(b) * cin * hw;
      // Plain loop: Eigen's vectorized reductions peel by pointer alignment, which
      // would make the summation order depend on where the buffer was allocated.
      auto& dbb = db[static_cast<std::size_t>(b)];
      dbb.setZero(cout);
      for (int co = 0; co < cout; ++co) {
        const T* row = g.data() + static_cast<std::size_t>(co) * hw;
        T acc{};
        for (int i = 0; i < hw; ++i) acc += row[i];
        dbb[co] = acc;
      }
      if (k == 1) {
        Eigen::Map<const detail::RowMat<T>> xm(xb, cin, hw);
        dw[static_cast<std::size_t>(b)].noalias() = g * xm.transpose();
        if (need_gx) {
          Eigen::Map<detail::RowMat<T>> gxm(gxb, cin, hw);
          gxm.noalias() += fault * (wm.transpose() * g);
        }
      } else {
        std::vector<T> col(static_cast<std::size_t>(ckk) * hw);
        detail::im2col(xb, cin, x.shape.h, x.shape.w, k, col.data());
        Eigen::Map<detail::RowMat<T>> cm(col.data(), ckk, hw);
        dw[static_cast<std::size_t>(b)].noalias() = g * cm.transpose();
        if (need_gx) {
          cm.noalias() = wm.transpose() * g;
          if (fault != T{1}) cm *= fault;
          detail::col2im_add(col.data(), cin, x.shape.h, x.shape.w, k, gxb);
        }
      }
    });
    Eigen::Map<detail::RowMat<T>> gwm(gw.data(), cout, ckk);
    Eigen::Map<detail::Vec<T>> gbv(gb.data(), cout);
    for (int b = 0; b < batch; ++b) {
      gwm += fault * dw[static_cast<std::size_t>(b)];
      gbv += fault * db[static_cast<std::size_t>(b)];
    }
  }

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
  std::vector<bool> needed_;
  NodeId forwarded_ = -1;
  int threads_ = 1;
};

// ---------------------------------------------------------------------------
// Finite-difference gradient checking in a 64-bit shadow copy of the graph.

struct GradientCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_relative_error = 0.0;
};

struct GradientReport {
  std::vector<GradientCheckEntry> entries;
  double tolerance = 0.0;
  bool passed = true;

  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.max_relative_error);
    return w;
  }
};

/// Compares analytic gradients against central differences for every parameter
/// tensor and, if `check_inputs`, for every input tensor. The error of a tensor
/// is max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|).
template <typename T>
GradientReport check_gradients(const Graph<T>& graph, const std::map<std::string, Tensor<T>>& inputs, NodeId loss,
                               double tolerance, double step = 1e-3, bool check_inputs = true,
                               std::size_t max_parameters = 10000) {
  require(graph.parameter_count() <= max_parameters, ErrorCode::invalid_argument,
          "graph too large for finite-difference checking");
  Graph<double> shadow = graph.template cast<double>();
  std::map<std::string, Tensor<double>> in64;
  for (const auto& [name, t] : inputs) in64.emplace(name, t.template cast<double>());

  shadow.forward(in64, loss);
  shadow.backward(loss);

  GradientReport report;
  report.tolerance = tolerance;
  auto finish = [&](std::string name, const std::vector<double>& analytic, const std::vector<double>& numeric) {
    double diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
      diff = std::max(diff, std::abs(analytic[i] - numeric[i]));
      scale = std::max({scale, std::abs(analytic[i]), std::abs(numeric[i])});
    }
    const double err = scale > 0 ? diff / scale : diff;
    report.entries.push_back({std::move(name), analytic.size(), err});
    report.passed = report.passed && err < tolerance;
  };
  auto eval = [&](const std::map<std::string, Tensor<double>>& in) { return shadow.forward(in, loss).data[0]; };

  std::vector<std::pair<std::string, std::vector<double>>> analytic_params;
  for (NodeId id : shadow.parameter_ids()) analytic_params.emplace_back(shadow.node(id).name, shadow.grad(id));
  std::vector<std::pair<std::string, std::vector<double>>> analytic_inputs;
  if (check_inputs) {
    for (std::size_t i = 0; i < shadow.node_count(); ++i) {
      const auto& nd = shadow.node(static_cast<NodeId>(i));
      if (nd.op == Op::input && in64.count(nd.name)) analytic_inputs.emplace_back(nd.name, nd.grad);
    }
  }

  std::size_t k = 0;
  for (NodeId id : shadow.parameter_ids()) {
    auto& p = shadow.param(id).data;
    std::vector<double> numeric(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + step;
      const double up = eval(in64);
      p[i] = orig - step;
      const double down = eval(in64);
      p[i] = orig;
      numeric[i] = (up - down) / (2.0 * step);
    }
    finish(analytic_params[k].first, analytic_params[k].second, numeric);
    ++k;
  }
  for (auto& [name, analytic] : analytic_inputs) {
    auto perturbed = in64;
    auto& x = perturbed.at(name).data;
    std::vector<double> numeric(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double orig = x[i];
      x[i] = orig + step;
      const double up = eval(perturbed);
      x[i] = orig - step;
      const double down = eval(perturbed);
      x[i] = orig;
      numeric[i] = (up - down) / (2.0 * step);
    }
    finish("input:" + name, analytic, numeric);
  }
  return report;
}

}  // namespace merlin::ad
