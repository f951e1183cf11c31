#include "egonn/retrieval.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

namespace egonn::retrieval {

namespace {

constexpr char kMagic[6] = {'E', 'G', 'O', 'D', 'B', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw DataError("descriptor db truncated");
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
  if (!is) throw DataError("descriptor db truncated");
  uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<uint32_t>(b[i]) << (8 * i);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace

void DescriptorDB::add(uint64_t id, const Vec& descriptor, const geom::PoseSE3& pose,
                       const std::string& path) {
  for (const auto& e : entries_)
    if (e.id == id) throw DataError("duplicate db id: " + std::to_string(id));
  if (!entries_.empty() && entries_.front().descriptor.size() != descriptor.size())
    throw DataError("descriptor dimension mismatch");
  entries_.push_back({id, descriptor, pose, path});
}

void DescriptorDB::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open db for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, entries_.size());
  const uint64_t dim = entries_.empty() ? 0 : static_cast<uint64_t>(entries_[0].descriptor.size());
  write_u64(os, dim);
  for (const auto& e : entries_) {
    write_u64(os, e.id);
    for (Eigen::Index i = 0; i < e.descriptor.size(); ++i)
      write_f32(os, static_cast<float>(e.descriptor(i)));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) write_f32(os, static_cast<float>(e.pose.rotation(r, c)));
      write_f32(os, static_cast<float>(e.pose.translation(r)));
    }
    write_u64(os, e.path.size());
    os.write(e.path.data(), static_cast<std::streamsize>(e.path.size()));
  }
  if (!os) throw DataError("db write failed: " + path);
}

DescriptorDB DescriptorDB::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open db: " + path);
  char magic[6];
  is.read(magic, 6);
  if (!is || std::memcmp(magic, kMagic, 6) != 0) throw DataError("bad db magic: " + path);
  const uint64_t count = read_u64(is);
  const uint64_t dim = read_u64(is);
  DescriptorDB db;
  for (uint64_t i = 0; i < count; ++i) {
    DbEntry e;
    e.id = read_u64(is);
    e.descriptor.resize(static_cast<Eigen::Index>(dim));
    for (uint64_t d = 0; d < dim; ++d)
      e.descriptor(static_cast<Eigen::Index>(d)) = static_cast<double>(read_f32(is));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) e.pose.rotation(r, c) = static_cast<double>(read_f32(is));
      e.pose.translation(r) = static_cast<double>(read_f32(is));
    }
    const uint64_t len = read_u64(is);
    e.path.resize(len);
    is.read(e.path.data(), static_cast<std::streamsize>(len));
    if (!is) throw DataError("descriptor db truncated");
    db.entries_.push_back(std::move(e));
  }
  return db;
}

std::vector<uint64_t> DescriptorDB::query_topk(const Vec& query, int k) const {
  if (entries_.empty()) throw DataError("query against empty db");
  if (k < 1) throw DataError("query_topk requires k >= 1");
  std::vector<std::pair<double, uint64_t>> scored;
  scored.reserve(entries_.size());
  for (const auto& e : entries_)
    scored.emplace_back((e.descriptor - query).norm(), e.id);
  std::sort(scored.begin(), scored.end());
  const size_t n = std::min(static_cast<size_t>(k), scored.size());
  std::vector<uint64_t> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = scored[i].second;
  return out;
}

const DbEntry* DescriptorDB::find(uint64_t id) const {
  for (const auto& e : entries_)
    if (e.id == id) return &e;
  return nullptr;
}

std::string RetrievalReport::to_csv() const {
  std::ostringstream os;
  os << "N,threshold_m,recall\n";
  for (const auto& r : rows) {
    os << r.n << "," << r.threshold_m << ",";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", r.recall);
    os << buf << "\n";
  }
  return os.str();
}

RetrievalReport evaluate_recall(const DescriptorDB& db, const std::vector<Query>& queries,
                                const std::vector<int>& ns,
                                const std::vector<double>& thresholds) {
  if (queries.empty()) throw DataError("evaluate_recall requires a non-empty query set");
  const int max_n = *std::max_element(ns.begin(), ns.end());
  RetrievalReport report;
  report.per_query_topk.reserve(queries.size());
  for (const auto& q : queries) report.per_query_topk.push_back(db.query_topk(q.descriptor, max_n));

  for (int n : ns) {
    for (double d : thresholds) {
      int localized = 0;
      for (size_t qi = 0; qi < queries.size(); ++qi) {
        const auto& ranked = report.per_query_topk[qi];
        const int limit = std::min<int>(n, static_cast<int>(ranked.size()));
        for (int r = 0; r < limit; ++r) {
          const DbEntry* e = db.find(ranked[static_cast<size_t>(r)]);
          if (e != nullptr &&
              (e->pose.translation - queries[qi].ground_truth.translation).norm() <= d) {
            ++localized;
            break;
          }
        }
      }
      report.rows.push_back(
          {n, d, static_cast<double>(localized) / static_cast<double>(queries.size())});
    }
  }
  return report;
}

}  // namespace egonn::retrieval
