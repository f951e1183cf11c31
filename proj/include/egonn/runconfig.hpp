#pragma once

#include <map>
#include <string>
#include <vector>

#include "egonn/common.hpp"

namespace egonn::cli {

/// Run configuration parsed from a sectioned key = value text file
/// ([net]/[loss]/[train]/[data]/[eval]) merged with command-line overrides
/// ("section.key=value"). Unknown keys are rejected; the resolved values can
/// be echoed into the run's output directory for provenance.
class RunConfig {
 public:
  RunConfig();

  void load_file(const std::string& path);
  void apply_override(const std::string& assignment);  // "section.key=value"

  double get_double(const std::string& key) const;
  int get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  std::vector<double> get_double_list(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  /// Every known key with its resolved value, in a stable order.
  std::string resolved() const;
  void write_resolved(const std::string& path) const;

 private:
  void set(const std::string& key, const std::string& value);
  std::map<std::string, std::string> values_;  // key -> value, key = "section.key"
};

}  // namespace egonn::cli
