#include "egonn/runconfig.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace egonn::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  // Defaults double as the registry of known keys.
  values_ = {
      {"net.scale", "4"},
      {"net.theta_wrap", "true"},
      {"net.theta_step_deg", "4"},
      {"net.rho_step", "0.3"},
      {"net.z_step", "0.2"},
      {"loss.margin", "0.2"},
      {"loss.tau", "0.02"},
      {"loss.lambda_chamfer", "1"},
      {"loss.lambda_p2p", "1"},
      {"loss.lambda_desc", "1"},
      {"loss.positive_dist", "2"},
      {"loss.negative_dist", "10"},
      {"loss.corr_radius", "0.5"},
      {"train.steps", "260"},
      {"train.global_batch_pairs", "16"},
      {"train.local_pairs", "1"},
      {"train.lr", "0.001"},
      {"train.checkpoint_every", "200"},
      {"train.cuboid_side_min", "2"},
      {"train.cuboid_side_max", "10"},
      {"train.jitter_sigma", "0.1"},
      {"train.local_max_translation", "5"},
      {"data.world_extent", "120"},
      {"data.num_poles", "90"},
      {"data.num_boxes", "25"},
      {"data.num_scatter", "80"},
      {"data.max_range", "40"},
      {"data.rings", "24"},
      {"data.azimuth_res_deg", "1.5"},
      {"data.noise_sigma", "0.02"},
      {"data.num_poses", "200"},
      {"data.traj_radius", "38"},
      {"data.traj_wobble", "3"},
      {"data.sensor_z", "1.6"},
      {"data.perturb_xy", "1.0"},
      {"data.perturb_yaw_deg", "10"},
      {"data.ground_z", "-0.9"},
      {"data.min_disp", "0.2"},
      {"eval.keypoints", "128"},
      {"eval.recall_ns", "1,5"},
      {"eval.thresholds", "5,20"},
      {"eval.inlier_radius", "0.5"},
      {"eval.ransac_iters", "2000"},
      {"eval.min_inliers", "6"},
      {"eval.mutual_matching", "true"},
  };
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw DataError("unknown config key: " + key);
  it->second = value;
}

void RunConfig::load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open config file: " + path);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw DataError("config " + path + ": malformed line " + std::to_string(line_no));
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty())
      throw DataError("config " + path + ": key outside a section at line " +
                      std::to_string(line_no));
    set(section + "." + key, value);
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw DataError("override must be section.key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

double RunConfig::get_double(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw DataError("unknown config key: " + key);
  try {
    return std::stod(it->second);
  } catch (const std::exception&) {
    throw DataError("config value for " + key + " is not a number: " + it->second);
  }
}

int RunConfig::get_int(const std::string& key) const {
  return static_cast<int>(std::llround(get_double(key)));
}

bool RunConfig::get_bool(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw DataError("unknown config key: " + key);
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw DataError("config value for " + key + " is not a boolean: " + it->second);
}

std::string RunConfig::get_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw DataError("unknown config key: " + key);
  return it->second;
}

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  std::stringstream ss(get_string(key));
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!trim(cell).empty()) out.push_back(std::stod(trim(cell)));
  }
  if (out.empty()) throw DataError("empty list for config key: " + key);
  return out;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (double v : get_double_list(key)) out.push_back(static_cast<int>(std::llround(v)));
  return out;
}

std::string RunConfig::resolved() const {
  std::ostringstream os;
  std::string section;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string sec = key.substr(0, dot);
    if (sec != section) {
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << value << "\n";
  }
  return os.str();
}

void RunConfig::write_resolved(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write resolved config: " + path);
  os << resolved();
}

}  // namespace egonn::cli
