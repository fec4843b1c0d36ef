#ifndef FORESTLPR_PCD_IO_HPP
#define FORESTLPR_PCD_IO_HPP

#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "forestlpr/error.hpp"
#include "forestlpr/geometry.hpp"

namespace forestlpr {

// PCD v0.7, FIELDS must include x y z; extra fields are skipped.
// DATA ascii and DATA binary (little-endian f32) are supported.

struct PcdLoadResult {
  PointCloud cloud;
  std::size_t dropped_nan = 0;
};

namespace detail {

struct PcdHeader {
  std::vector<std::string> fields;
  std::vector<int> sizes;
  std::vector<char> types;
  std::vector<int> counts;
  std::size_t points = 0;
  std::string data;  // "ascii" | "binary" | ...
};

inline PcdHeader parse_pcd_header(std::istream& in, const std::string& path) {
  PcdHeader h;
  bool have_points = false, have_fields = false;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "VERSION" || key == "VIEWPOINT" || key == "WIDTH" || key == "HEIGHT") {
      continue;
    } else if (key == "FIELDS") {
      std::string f;
      while (ls >> f) h.fields.push_back(f);
      have_fields = true;
    } else if (key == "SIZE") {
      int v;
      while (ls >> v) h.sizes.push_back(v);
    } else if (key == "TYPE") {
      std::string t;
      while (ls >> t) h.types.push_back(t.empty() ? '?' : t[0]);
    } else if (key == "COUNT") {
      int v;
      while (ls >> v) h.counts.push_back(v);
    } else if (key == "POINTS") {
      long long v = -1;
      if (!(ls >> v) || v < 0) {
        throw ParseError(path + ": malformed header line: \"" + line + "\"");
      }
      h.points = static_cast<std::size_t>(v);
      have_points = true;
    } else if (key == "DATA") {
      if (!(ls >> h.data)) {
        throw ParseError(path + ": malformed header line: \"" + line + "\"");
      }
      if (!have_fields || !have_points) {
        throw ParseError(path + ": DATA before FIELDS/POINTS in header");
      }
      if (h.counts.empty()) h.counts.assign(h.fields.size(), 1);
      if (h.sizes.size() != h.fields.size() || h.types.size() != h.fields.size() ||
          h.counts.size() != h.fields.size()) {
        throw ParseError(path + ": FIELDS/SIZE/TYPE/COUNT length mismatch in header");
      }
      return h;
    } else {
      throw ParseError(path + ": malformed header line: \"" + line + "\"");
    }
  }
  throw ParseError(path + ": missing DATA line in header");
}

}  // namespace detail

inline PcdLoadResult load_pcd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  detail::PcdHeader h = detail::parse_pcd_header(in, path);

  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < h.fields.size(); ++i) {
    if (h.fields[i] == "x") ix = static_cast<int>(i);
    if (h.fields[i] == "y") iy = static_cast<int>(i);
    if (h.fields[i] == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) {
    throw ParseError(path + ": FIELDS must include x y z");
  }

  PcdLoadResult res;
  res.cloud.points.reserve(h.points);

  auto push = [&res](double x, double y, double z) {
    Point3 p{x, y, z};
    if (p.finite()) {
      res.cloud.points.push_back(p);
    } else {
      ++res.dropped_nan;
    }
  };

  if (h.data == "ascii") {
    std::string line;
    std::size_t rows = 0;
    while (rows < h.points && std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream ls(line);
      double x = 0, y = 0, z = 0, v = 0;
      std::string token;
      int col = 0;
      bool ok = true;
      for (std::size_t f = 0; f < h.fields.size() && ok; ++f) {
        for (int c = 0; c < h.counts[f]; ++c, ++col) {
          // strtod rather than stream extraction: PCD writers emit "nan"
          // tokens, which libstdc++ operator>> rejects.
          if (!(ls >> token)) {
            ok = false;
            break;
          }
          char* end = nullptr;
          v = std::strtod(token.c_str(), &end);
          if (end != token.c_str() + token.size()) {
            ok = false;
            break;
          }
          if (static_cast<int>(f) == ix) x = v;
          if (static_cast<int>(f) == iy) y = v;
          if (static_cast<int>(f) == iz) z = v;
        }
      }
      if (!ok) throw ParseError(path + ": malformed ascii data row: \"" + line + "\"");
      push(x, y, z);
      ++rows;
    }
    if (rows < h.points) {
      throw ParseError(path + ": POINTS declares " + std::to_string(h.points) +
                       " but file contains " + std::to_string(rows) + " rows");
    }
  } else if (h.data == "binary") {
    std::size_t stride = 0;
    std::size_t off_x = 0, off_y = 0, off_z = 0;
    for (std::size_t f = 0; f < h.fields.size(); ++f) {
      if (static_cast<int>(f) == ix) off_x = stride;
      if (static_cast<int>(f) == iy) off_y = stride;
      if (static_cast<int>(f) == iz) off_z = stride;
      stride += static_cast<std::size_t>(h.sizes[f]) * h.counts[f];
    }
    if (h.sizes[ix] != 4 || h.types[ix] != 'F' || h.sizes[iy] != 4 || h.sizes[iz] != 4) {
      throw UnsupportedFormatError(path + ": binary PCD requires f32 x/y/z fields");
    }
    std::vector<char> row(stride);
    for (std::size_t i = 0; i < h.points; ++i) {
      in.read(row.data(), static_cast<std::streamsize>(stride));
      if (in.gcount() != static_cast<std::streamsize>(stride)) {
        throw ParseError(path + ": truncated binary data at point " + std::to_string(i));
      }
      float x, y, z;
      std::memcpy(&x, row.data() + off_x, 4);
      std::memcpy(&y, row.data() + off_y, 4);
      std::memcpy(&z, row.data() + off_z, 4);
      push(x, y, z);
    }
  } else {
    throw UnsupportedFormatError(path + ": unsupported DATA encoding \"" + h.data + "\"");
  }
  return res;
}

inline void save_pcd(const std::string& path, const PointCloud& cloud, bool binary = true) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  out << "# .PCD v0.7 - Point Cloud Data file format\n"
      << "VERSION 0.7\n"
      << "FIELDS x y z\n"
      << "SIZE 4 4 4\n"
      << "TYPE F F F\n"
      << "COUNT 1 1 1\n"
      << "WIDTH " << cloud.size() << "\n"
      << "HEIGHT 1\n"
      << "VIEWPOINT 0 0 0 1 0 0 0\n"
      << "POINTS " << cloud.size() << "\n"
      << "DATA " << (binary ? "binary" : "ascii") << "\n";
  if (binary) {
    for (const Point3& p : cloud.points) {
      float v[3] = {static_cast<float>(p.x), static_cast<float>(p.y),
                    static_cast<float>(p.z)};
      out.write(reinterpret_cast<const char*>(v), sizeof(v));
    }
  } else {
    out.precision(std::numeric_limits<float>::max_digits10);
    for (const Point3& p : cloud.points) {
      out << static_cast<float>(p.x) << " " << static_cast<float>(p.y) << " "
          << static_cast<float>(p.z) << "\n";
    }
  }
  if (!out) throw Error(path + ": write failed");
}

// Pose file: one line per submap, `timestamp tx ty tz qx qy qz qw`.
struct TimedPose {
  double timestamp = 0.0;
  Pose pose;
};

inline std::vector<TimedPose> load_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::vector<TimedPose> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    TimedPose tp;
    if (!(ls >> tp.timestamp >> tp.pose.tx >> tp.pose.ty >> tp.pose.tz >> tp.pose.qx >>
          tp.pose.qy >> tp.pose.qz >> tp.pose.qw)) {
      throw ParseError(path + ": malformed pose line " + std::to_string(lineno));
    }
    tp.pose.normalize_quat();
    out.push_back(tp);
  }
  return out;
}

inline void save_pose_file(const std::string& path, const std::vector<TimedPose>& poses) {
  std::ofstream out(path);
  if (!out) throw Error(path + ": cannot open file for writing");
  out.precision(std::numeric_limits<double>::max_digits10);
  for (const TimedPose& tp : poses) {
    out << tp.timestamp << " " << tp.pose.tx << " " << tp.pose.ty << " " << tp.pose.tz << " "
        << tp.pose.qx << " " << tp.pose.qy << " " << tp.pose.qz << " " << tp.pose.qw << "\n";
  }
}

}  // namespace forestlpr

#endif
