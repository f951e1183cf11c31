#pragma once

#include <vector>

#include "egonn/parameter.hpp"
#include "egonn/sparse_tensor.hpp"
#include "egonn/tape.hpp"

namespace egonn::ad {

/// Leaf node fed from a parameter's current values; backward accumulates the
/// node grad into the parameter grad. Used by the gradient-check harness to
/// treat layer inputs like trainable coordinates.
Tape::NodeId input_from_param(Tape& tape, Parameter& p);

/// Sparse 3D convolution on the cylindrical voxel lattice.
///
/// kernel shape: (k^3, C_in, C_out), offsets enumerated lexicographically
/// over (d_rho, d_theta, d_z).
///
/// stride 1 (k odd): output coordinates equal input coordinates; each output
/// gathers existing neighbors at centered offsets.
/// stride 2 (k == 2): output coordinates are the unique floor-halved input
/// coordinates; each output gathers its children. The theta axis halves only
/// when its ring size is even; otherwise it keeps its stride and the kernel
/// taps become {0, +1} neighbors on the ring.
///
/// theta_wrap routes theta lookups modulo the ring size at the tensor's
/// stride level.
SparseTensor sparse_conv(Tape& tape, const SparseTensor& x, Parameter& kernel, int stride,
                         bool theta_wrap);

/// Transposed counterpart of the stride-2 convolution: upsamples onto
/// exactly the coordinate set of `target` (the lateral-connection tensor at
/// the finer level). kernel shape: (2^3, C_in, C_out); adjoint of
/// sparse_conv(stride 2) with the per-offset-transposed kernel.
SparseTensor sparse_tconv(Tape& tape, const SparseTensor& x, Parameter& kernel,
                          const SparseTensor& target, bool theta_wrap);

struct BatchNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;  // buffer
  Parameter* running_var = nullptr;   // buffer
  double momentum = 0.1;
  double eps = 1e-5;
};

/// Train mode normalizes with per-channel statistics over every non-empty
/// voxel in the batch and updates the running stats; eval mode uses the
/// running stats (a purely affine map).
SparseTensor batch_norm(Tape& tape, const SparseTensor& x, BatchNorm& bn, bool train);

/// Efficient channel attention: per batch element, mean feature over voxels,
/// 1D convolution across channels (kernel 3, zero padded), sigmoid gate,
/// broadcast multiply. kernel1d shape: (3,).
SparseTensor eca(Tape& tape, const SparseTensor& x, Parameter& kernel1d);

/// y = x * W + b (b broadcast over rows). W: (C_in, C_out), b: (C_out,).
Tape::NodeId linear(Tape& tape, Tape::NodeId x, Parameter& W, Parameter* b);

enum class Activation { Relu, Tanh, Softplus, Sigmoid, L2NormRows };

Tape::NodeId activation(Tape& tape, Tape::NodeId x, Activation kind);

/// Per-voxel MLP: hidden layers get ReLU, the last layer none.
struct Mlp {
  struct Layer {
    Parameter* W;
    Parameter* b;
  };
  std::vector<Layer> layers;

  Tape::NodeId apply(Tape& tape, Tape::NodeId x) const;
};

/// Generalized-mean pooling over each batch element's voxels. Features are
/// clamped to >= 1e-6 before powering; p is a learnable scalar parameter.
/// Returns a (batch_size x C) node. Throws NumericalError if a batch element
/// has no voxels.
Tape::NodeId gem_pool(Tape& tape, const SparseTensor& x, Parameter& p);

/// Elementwise sum of two tensors defined on identical coordinate sets.
SparseTensor add(Tape& tape, const SparseTensor& a, const SparseTensor& b);

/// Scalar node: sum of all entries (test utility and loss assembly).
Tape::NodeId sum_all(Tape& tape, Tape::NodeId x);

/// Scalar node: weighted sum of scalar nodes.
Tape::NodeId add_scaled(Tape& tape, const std::vector<std::pair<Tape::NodeId, double>>& terms);

/// Applies a rigid transform to an (N x 3) point node: y = p * R^T + t^T.
Tape::NodeId se3_apply_points(Tape& tape, Tape::NodeId pts, const geom::PoseSE3& T);

/// Row slice [begin, begin+len) as its own node.
Tape::NodeId slice_rows(Tape& tape, Tape::NodeId x, int begin, int len);

/// Elementwise product of same-shape nodes.
Tape::NodeId mul_elem(Tape& tape, Tape::NodeId a, Tape::NodeId b);

/// x + c elementwise.
Tape::NodeId add_constant(Tape& tape, Tape::NodeId x, double c);

/// Rewraps a tensor's metadata around a new feature node (same coordinates).
inline SparseTensor with_node(const SparseTensor& x, Tape::NodeId node) {
  SparseTensor y = x;
  y.node = node;
  return y;
}

}  // namespace egonn::ad
