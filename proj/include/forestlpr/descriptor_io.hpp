#ifndef FORESTLPR_DESCRIPTOR_IO_HPP
#define FORESTLPR_DESCRIPTOR_IO_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "forestlpr/error.hpp"

namespace forestlpr {

// Descriptor file: magic "FLPR-D", u32 version, u32 count, u32 dim, then
// count x dim f32 LE. A sidecar CSV (<path>.ids.csv) maps row -> submap id.

struct DescriptorSet {
  Eigen::MatrixXd rows;          // count x dim
  std::vector<std::string> ids;  // count entries
};

namespace detail {
constexpr char kDescMagic[6] = {'F', 'L', 'P', 'R', '-', 'D'};
constexpr std::uint32_t kDescVersion = 1;
}  // namespace detail

inline std::string descriptor_sidecar_path(const std::string& path) {
  return path + ".ids.csv";
}

inline void save_descriptors(const std::string& path, const DescriptorSet& set) {
  if (static_cast<std::size_t>(set.rows.rows()) != set.ids.size()) {
    throw UsageError("save_descriptors: row/id count mismatch");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(path + ": cannot open file for writing");
  out.write(detail::kDescMagic, 6);
  const std::uint32_t header[3] = {detail::kDescVersion,
                                   static_cast<std::uint32_t>(set.rows.rows()),
                                   static_cast<std::uint32_t>(set.rows.cols())};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (Eigen::Index i = 0; i < set.rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.rows.cols(); ++j) {
      const float v = static_cast<float>(set.rows(i, j));
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  if (!out) throw Error(path + ": write failed");

  std::ofstream sidecar(descriptor_sidecar_path(path));
  if (!sidecar) throw Error(descriptor_sidecar_path(path) + ": cannot open file for writing");
  sidecar << "row,id\n";
  for (std::size_t i = 0; i < set.ids.size(); ++i) sidecar << i << "," << set.ids[i] << "\n";
}

inline DescriptorSet load_descriptors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path + ": cannot open file");
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, detail::kDescMagic, 6) != 0) {
    throw ParseError(path + ": not a descriptor file (bad magic)");
  }
  std::uint32_t header[3];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in) throw ParseError(path + ": truncated header");
  if (header[0] != detail::kDescVersion) {
    throw ParseError(path + ": unsupported descriptor file version " +
                     std::to_string(header[0]));
  }
  DescriptorSet set;
  set.rows.resize(header[1], header[2]);
  for (Eigen::Index i = 0; i < set.rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < set.rows.cols(); ++j) {
      float v;
      in.read(reinterpret_cast<char*>(&v), 4);
      if (!in) throw ParseError(path + ": truncated descriptor data");
      set.rows(i, j) = v;
    }
  }

  std::ifstream sidecar(descriptor_sidecar_path(path));
  if (!sidecar) throw ParseError(descriptor_sidecar_path(path) + ": cannot open sidecar");
  std::string line;
  std::getline(sidecar, line);  // header
  while (std::getline(sidecar, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw ParseError(descriptor_sidecar_path(path) + ": malformed line: " + line);
    }
    set.ids.push_back(line.substr(comma + 1));
  }
  if (set.ids.size() != static_cast<std::size_t>(set.rows.rows())) {
    throw ParseError(path + ": sidecar row count does not match descriptor count");
  }
  return set;
}

}  // namespace forestlpr

#endif
