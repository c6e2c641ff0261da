#pragma once

// Debug dumps: masks as binary PGM (0 / 255), cost maps as grayscale PFM.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "semloc/costmap.hpp"
#include "semloc/errors.hpp"

namespace semloc {

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string tok;
  while (in >> tok) {
    if (tok[0] != '#') return tok;
    std::string rest;
    std::getline(in, rest);
  }
  throw Error(ErrorKind::kParse, "truncated image header");
}

inline int parse_positive(const std::string& tok, const std::string& path) {
  try {
    const int v = std::stoi(tok);
    if (v > 0) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorKind::kParse, path + ": bad image header value '" + tok + "'");
}

}  // namespace detail

inline void write_pgm(const std::string& path, const SegMask& mask) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::vector<char> row(static_cast<std::size_t>(mask.width));
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) row[static_cast<std::size_t>(x)] = mask.at(x, y) ? char(255) : char(0);
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
}

/// Any nonzero gray level reads back as occupied.
inline SegMask read_pgm(const std::string& path, LandmarkClass cls) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  if (detail::next_token(in) != "P5") throw Error(ErrorKind::kParse, path + ": not a binary PGM");
  const int w = detail::parse_positive(detail::next_token(in), path);
  const int h = detail::parse_positive(detail::next_token(in), path);
  const int maxval = detail::parse_positive(detail::next_token(in), path);
  if (maxval > 255) throw Error(ErrorKind::kParse, path + ": 16-bit PGM not supported");
  in.get();
  SegMask mask(w, h, cls);
  std::vector<char> buf(mask.data.size());
  if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size()))) {
    throw Error(ErrorKind::kParse, path + ": truncated pixel data");
  }
  for (std::size_t i = 0; i < buf.size(); ++i) mask.data[i] = buf[i] != 0 ? 1 : 0;
  return mask;
}

/// Little-endian PFM; rows are stored bottom-up as the format requires.
inline void write_pfm(const std::string& path, const CostMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << "Pf\n" << map.width << ' ' << map.height << "\n-1.0\n";
  for (int y = map.height - 1; y >= 0; --y) {
    for (int x = 0; x < map.width; ++x) {
      const float v = static_cast<float>(map.at(x, y));
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

inline CostMap read_pfm(const std::string& path, LandmarkClass cls) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open " + path);
  if (detail::next_token(in) != "Pf") throw Error(ErrorKind::kParse, path + ": not a grayscale PFM");
  const int w = detail::parse_positive(detail::next_token(in), path);
  const int h = detail::parse_positive(detail::next_token(in), path);
  const double scale = std::stod(detail::next_token(in));
  if (scale >= 0.0) throw Error(ErrorKind::kParse, path + ": big-endian PFM not supported");
  in.get();
  CostMap map(w, h, cls);
  for (int y = h - 1; y >= 0; --y) {
    for (int x = 0; x < w; ++x) {
      float v;
      if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(ErrorKind::kParse, path + ": truncated data");
      map.at(x, y) = v;
    }
  }
  return map;
}

}  // namespace semloc
