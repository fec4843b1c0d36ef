#ifndef FORESTLPR_MANIFEST_HPP
#define FORESTLPR_MANIFEST_HPP

#include <fstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "forestlpr/error.hpp"
#include "forestlpr/geometry.hpp"

namespace forestlpr {

// One record per submap; serialized as JSON-lines.
struct SubmapRecord {
  std::string id;
  std::string sequence;
  double timestamp = 0.0;  // seconds
  std::string pcd_path;
  Pose pose;
};

using Manifest = std::vector<SubmapRecord>;

inline Manifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  Manifest out;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    SubmapRecord rec;
    try {
      rec.id = j.at("id").get<std::string>();
      rec.sequence = j.at("sequence").get<std::string>();
      rec.timestamp = j.at("timestamp").get<double>();
      rec.pcd_path = j.at("pcd").get<std::string>();
      const auto& pose = j.at("pose");
      if (!pose.is_array() || pose.size() != 7) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": pose must be a 7-array");
      }
      rec.pose.tx = pose[0].get<double>();
      rec.pose.ty = pose[1].get<double>();
      rec.pose.tz = pose[2].get<double>();
      rec.pose.qx = pose[3].get<double>();
      rec.pose.qy = pose[4].get<double>();
      rec.pose.qz = pose[5].get<double>();
      rec.pose.qw = pose[6].get<double>();
      rec.pose.normalize_quat();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    if (!seen.insert(rec.id).second) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": duplicate submap id \"" +
                       rec.id + "\"");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

inline void save_manifest(const std::string& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open file for writing");
  for (const SubmapRecord& rec : manifest) {
    nlohmann::json j{
        {"id", rec.id},
        {"sequence", rec.sequence},
        {"timestamp", rec.timestamp},
        {"pcd", rec.pcd_path},
        {"pose",
         {rec.pose.tx, rec.pose.ty, rec.pose.tz, rec.pose.qx, rec.pose.qy, rec.pose.qz,
          rec.pose.qw}},
    };
    out << j.dump() << "\n";
  }
  if (!out) throw Error(path + ": write failed");
}

inline std::unordered_map<std::string, std::size_t> manifest_index(const Manifest& m) {
  std::unordered_map<std::string, std::size_t> idx;
  for (std::size_t i = 0; i < m.size(); ++i) idx[m[i].id] = i;
  return idx;
}

}  // namespace forestlpr

#endif
