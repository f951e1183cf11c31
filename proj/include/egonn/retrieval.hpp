#pragma once

#include <string>
#include <vector>

#include "egonn/geometry.hpp"

namespace egonn::retrieval {

struct DbEntry {
  uint64_t id = 0;
  Vec descriptor;
  geom::PoseSE3 pose;
  std::string path;  // reference to the source cloud file
};

/// Geo-tagged global-descriptor database with exact (linear-scan) search.
/// Immutable after build for concurrent queries; mutation is exclusive.
class DescriptorDB {
 public:
  /// Appends an entry; ids must be unique, descriptor dims uniform.
  void add(uint64_t id, const Vec& descriptor, const geom::PoseSE3& pose,
           const std::string& path);

  /// Binary container: magic "EGODB1", entry count u64, descriptor dim u64,
  /// then per entry: id u64, dim f32 descriptor values, 12 f32 row-major 3x4
  /// pose, u64 length-prefixed UTF-8 path. All little-endian; save/load
  /// round-trips byte-identically.
  void save(const std::string& path) const;
  static DescriptorDB load(const std::string& path);

  /// Ranked ids of the k nearest entries in descriptor Euclidean distance,
  /// ties by id ascending; k > size returns everything.
  std::vector<uint64_t> query_topk(const Vec& query, int k) const;

  const std::vector<DbEntry>& entries() const { return entries_; }
  const DbEntry* find(uint64_t id) const;
  size_t size() const { return entries_.size(); }

 private:
  std::vector<DbEntry> entries_;
};

struct RetrievalReport {
  struct Row {
    int n;
    double threshold_m;
    double recall;
  };
  std::vector<Row> rows;
  std::vector<std::vector<uint64_t>> per_query_topk;

  /// CSV with header "N,threshold_m,recall".
  std::string to_csv() const;
};

struct Query {
  Vec descriptor;
  geom::PoseSE3 ground_truth;
};

/// A query counts as localized at (N, d) if any of its top-N entries has a
/// pose translation within d meters of the query's ground-truth translation.
RetrievalReport evaluate_recall(const DescriptorDB& db, const std::vector<Query>& queries,
                                const std::vector<int>& ns, const std::vector<double>& thresholds);

}  // namespace egonn::retrieval
