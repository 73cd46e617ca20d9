// SPDX-License-Identifier: Apache-2.0
//
// Dense float64 tensors and a tape-based reverse-mode autodiff graph.
//
// A Tensor is a shared handle onto row-major storage; copying the handle
// does not copy the data (use clone() for that). Tensors flagged with
// requires_grad own a gradient accumulator of identical shape. Operations
// take the Graph explicitly and append a backward closure to it whenever one
// of their inputs requires a gradient. Graph::backward replays the tape in
// exact reverse order.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "raterbayes/rng.hpp"

namespace raterbayes {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return static_cast<bool>(s_); }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;

  bool requires_grad() const noexcept { return s_ && s_->requires_grad; }
  void set_requires_grad(bool flag);
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  /// Deep copy of shape and values; the copy does not require grad.
  Tensor clone() const;
  bool is_same(const Tensor& other) const noexcept { return s_ == other.s_; }

private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> s_;
};

/// Per-pixel integer class ids, layout [N, H, W].
struct LabelMap {
  std::size_t n = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<std::int32_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t n_, std::size_t h_, std::size_t w_)
      : n(n_), h(h_), w(w_), labels(n_ * h_ * w_, 0) {}
};

class Graph {
public:
  enum class Mode { record, inference };

  explicit Graph(Mode mode = Mode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  bool recording() const noexcept { return mode_ == Mode::record; }

  /// True when the op's output must be tracked: the graph records and one
  /// of the inputs requires a gradient.
  bool tracks(std::initializer_list<const Tensor*> inputs) const;

  /// Append a node. `output` gets a gradient buffer; `backward` reads it and
  /// accumulates into the inputs that require gradients.
  void record(std::string_view op, Tensor output, std::function<void()> backward);

  /// Populate gradients of every tracked tensor reachable from `loss`.
  void backward(Tensor& loss);

  /// Drop all nodes; the graph can be reused for the next step.
  void reset();

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::string& op_name(std::size_t i) const { return nodes_.at(i).op; }

private:
  struct Node {
    std::string op;
    Tensor output;
    std::function<void()> backward;
  };
  Mode mode_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

/// Throws NumericError naming `op` if any value is NaN or infinite.
void require_finite(std::span<const double> values, std::string_view op);

// Network operations. Layouts are NCHW.

Tensor conv2d(Graph& g, const Tensor& input, const Tensor& kernel, const Tensor& bias,
              std::size_t padding = 0, std::size_t stride = 1);
Tensor max_pool2d(Graph& g, const Tensor& input, std::size_t window);
Tensor upsample_nearest(Graph& g, const Tensor& input, std::size_t factor);
Tensor concat_channels(Graph& g, const Tensor& a, const Tensor& b);
Tensor relu(Graph& g, const Tensor& input);
Tensor softmax_channels(Graph& g, const Tensor& logits);
/// Mean over pixels of -log(probs[target]).
Tensor cross_entropy(Graph& g, const Tensor& probs, const LabelMap& target);
/// Inverted dropout: survivors scaled by 1/(1-rate); identity when inactive.
Tensor dropout(Graph& g, const Tensor& input, double rate, Rng& rng, bool active);

// Elementwise helpers used by losses.
Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double factor);
Tensor sum(Graph& g, const Tensor& a);
Tensor mean(Graph& g, const Tensor& a);

} // namespace raterbayes
