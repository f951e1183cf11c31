#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "egonn/common.hpp"

namespace egonn::ad {

/// Reverse-mode tape over dense matrices. Sparse tensors keep their feature
/// rows in a tape node and carry coordinates as metadata, so one value kind
/// covers the whole graph.
///
/// Forward execution appends nodes and backward closures in topological
/// order; backward() replays the closures in reverse exactly once. Closures
/// accumulate into node grads and directly into Parameter grads for leaves.
class Tape {
 public:
  using NodeId = int;

  NodeId new_node(Eigen::Index rows, Eigen::Index cols) {
    values_.emplace_back(Mat::Zero(rows, cols));
    grads_.emplace_back(Mat::Zero(rows, cols));
    return static_cast<NodeId>(values_.size()) - 1;
  }

  NodeId new_node(Mat value) {
    const auto r = value.rows(), c = value.cols();
    values_.emplace_back(std::move(value));
    grads_.emplace_back(Mat::Zero(r, c));
    return static_cast<NodeId>(values_.size()) - 1;
  }

  Mat& val(NodeId id) { return values_[static_cast<size_t>(id)]; }
  const Mat& val(NodeId id) const { return values_[static_cast<size_t>(id)]; }
  Mat& grad(NodeId id) { return grads_[static_cast<size_t>(id)]; }
  const Mat& grad(NodeId id) const { return grads_[static_cast<size_t>(id)]; }

  void record(std::function<void(Tape&)> backward_fn) {
    backward_ops_.push_back(std::move(backward_fn));
  }

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded closure in reverse.
  void backward(NodeId loss) {
    if (val(loss).size() != 1) throw NumericalError("backward requires a scalar loss node");
    if (!std::isfinite(val(loss)(0, 0))) throw NumericalError("non-finite loss");
    grad(loss)(0, 0) = 1.0;
    for (auto it = backward_ops_.rbegin(); it != backward_ops_.rend(); ++it) (*it)(*this);
  }

  size_t num_nodes() const { return values_.size(); }

 private:
  // Deques so node references stay valid while the graph grows.
  std::deque<Mat> values_;
  std::deque<Mat> grads_;
  std::vector<std::function<void(Tape&)>> backward_ops_;
};

}  // namespace egonn::ad
