#include "egonn/parameter.hpp"

#include <cstring>
#include <fstream>

namespace egonn::ad {

std::pair<Eigen::Index, Eigen::Index> Parameter::storage_dims(
    const std::vector<uint64_t>& shape) {
  switch (shape.size()) {
    case 1:
      return {1, static_cast<Eigen::Index>(shape[0])};
    case 2:
      return {static_cast<Eigen::Index>(shape[0]), static_cast<Eigen::Index>(shape[1])};
    case 3:
      return {static_cast<Eigen::Index>(shape[0] * shape[1]),
              static_cast<Eigen::Index>(shape[2])};
    default:
      throw DataError("parameter rank must be 1..3");
  }
}

Parameter* ParameterStore::create(const std::string& name, std::vector<uint64_t> shape,
                                  bool trainable) {
  if (index_.count(name)) throw DataError("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = name;
  p->shape = std::move(shape);
  auto [r, c] = Parameter::storage_dims(p->shape);
  p->values = Mat::Zero(r, c);
  p->grad = Mat::Zero(r, c);
  p->trainable = trainable;
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return params_.back().get();
}

Parameter* ParameterStore::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

const Parameter* ParameterStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

void ParameterStore::zero_grads() {
  for (auto& p : params_) p->zero_grad();
}

size_t ParameterStore::total_values() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p->values.size());
  return n;
}

namespace {

constexpr char kMagic[6] = {'E', 'G', 'O', 'N', 'N', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("checkpoint truncated");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f32(std::ostream& os, float f) {
  uint32_t u;
  std::memcpy(&u, &f, 4);
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

float read_f32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw DataError("checkpoint truncated");
  uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<uint32_t>(b[i]) << (8 * i);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace

namespace {

void write_store(std::ostream& os, const ParameterStore& store) {
  for (const auto& p : store.all()) {
    write_u64(os, p->name.size());
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_u64(os, p->shape.size());
    for (uint64_t d : p->shape) write_u64(os, d);
    const double* data = p->values.data();
    for (Eigen::Index i = 0; i < p->values.size(); ++i)
      write_f32(os, static_cast<float>(data[i]));
  }
}

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::string& path) {
  save_checkpoint_multi({&store}, path);
}

void save_checkpoint_multi(const std::vector<const ParameterStore*>& stores,
                           const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  for (const ParameterStore* store : stores) write_store(os, *store);
  if (!os) throw DataError("checkpoint write failed: " + path);
}

void load_checkpoint(
    ParameterStore& store, const std::string& path,
    std::map<std::string, std::pair<std::vector<uint64_t>, std::vector<float>>>* extra) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kMagic, 6) != 0)
    throw DataError("bad checkpoint magic: " + path);
  while (true) {
    is.peek();
    if (is.eof()) break;
    const uint64_t name_len = read_u64(is);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    if (!is) throw DataError("checkpoint truncated");
    const uint64_t rank = read_u64(is);
    if (rank == 0 || rank > 3) throw DataError("bad parameter rank in checkpoint");
    std::vector<uint64_t> shape(rank);
    uint64_t count = 1;
    for (auto& d : shape) {
      d = read_u64(is);
      count *= d;
    }
    Parameter* p = store.find(name);
    if (p != nullptr) {
      if (p->shape != shape)
        throw DataError("checkpoint shape mismatch for parameter: " + name);
      double* data = p->values.data();
      for (uint64_t i = 0; i < count; ++i) data[i] = static_cast<double>(read_f32(is));
    } else if (extra != nullptr) {
      std::vector<float> vals(count);
      for (auto& v : vals) v = read_f32(is);
      (*extra)[name] = {std::move(shape), std::move(vals)};
    } else {
      throw DataError("unknown parameter in checkpoint: " + name);
    }
  }
}

void quantize_to_f32(ParameterStore& store) {
  for (const auto& p : store.all()) {
    double* data = p->values.data();
    for (Eigen::Index i = 0; i < p->values.size(); ++i)
      data[i] = static_cast<double>(static_cast<float>(data[i]));
  }
}

}  // namespace egonn::ad
