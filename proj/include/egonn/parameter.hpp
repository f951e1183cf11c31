#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "egonn/common.hpp"

namespace egonn::ad {

/// Named trainable array (or persistent buffer, e.g. batch-norm running
/// stats). Logical shape is kept for serialization; storage is a 2D matrix:
/// rank 1 -> (1, d0), rank 2 -> (d0, d1), rank 3 -> (d0*d1, d2).
struct Parameter {
  std::string name;
  std::vector<uint64_t> shape;
  Mat values;
  Mat grad;
  bool trainable = true;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  void zero_grad() { grad.setZero(); }

  static std::pair<Eigen::Index, Eigen::Index> storage_dims(const std::vector<uint64_t>& shape);
};

/// Owns parameters in insertion order (ordering is part of the determinism
/// contract for optimizer sweeps and checkpoints).
class ParameterStore {
 public:
  Parameter* create(const std::string& name, std::vector<uint64_t> shape, bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Parameter>>& all() const { return params_; }

  void zero_grads();
  size_t total_values() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, size_t> index_;
};

/// Checkpoint container: magic "EGONN1", then per-parameter records of
/// (name length u64, name bytes, shape rank u64, dims u64..., f32 values),
/// all little-endian. Values are truncated to f32 on save and widened on
/// load, so save/load/save round-trips are byte-identical.
void save_checkpoint(const ParameterStore& store, const std::string& path);

/// Same container with several stores' records concatenated (model weights
/// followed by optimizer/run state).
void save_checkpoint_multi(const std::vector<const ParameterStore*>& stores,
                           const std::string& path);

/// Loads records into existing parameters (shapes must match). Unknown
/// record names are collected into `extra` when given, else rejected.
void load_checkpoint(ParameterStore& store, const std::string& path,
                     std::map<std::string, std::pair<std::vector<uint64_t>, std::vector<float>>>*
                         extra = nullptr);

/// Rounds every value through f32, exactly as a save/load cycle would.
/// Used at checkpoint time so that a resumed run and the run that kept
/// going share bit-identical state.
void quantize_to_f32(ParameterStore& store);

}  // namespace egonn::ad
