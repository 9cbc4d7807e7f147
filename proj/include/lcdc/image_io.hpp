#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>

#include "lcdc/motion.hpp"
#include "lcdc/tensor.hpp"

namespace lcdc {

// 16-bit binary PGM (P5), max-normalized; the normalization constant goes to
// a sidecar text file so the absolute scale stays recoverable.
inline void save_pgm16(const std::string& path, const Tensor& map) {
  if (map.rank() != 2) throw std::invalid_argument("save_pgm16: map must be 2D");
  double vmax = 0.0;
  for (std::size_t i = 0; i < map.numel(); ++i) vmax = std::max(vmax, map[i]);
  const double scale = vmax > 0.0 ? 65535.0 / vmax : 0.0;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_pgm16: cannot open " + path);
  f << "P5\n" << map.dim(1) << " " << map.dim(0) << "\n65535\n";
  for (std::size_t i = 0; i < map.numel(); ++i) {
    const double v = map[i] * scale;
    const auto q = static_cast<std::uint16_t>(std::lround(std::min(65535.0, std::max(0.0, v))));
    const unsigned char hi = static_cast<unsigned char>(q >> 8);
    const unsigned char lo = static_cast<unsigned char>(q & 0xff);
    f.put(static_cast<char>(hi));
    f.put(static_cast<char>(lo));
  }
  if (!f) throw std::runtime_error("save_pgm16: write failed");
  std::ofstream side(path + ".norm.txt");
  side << "max=" << vmax << "\n";
}

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, unsigned char rgb[3]) {
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  rgb[0] = static_cast<unsigned char>(std::lround(255.0 * (r + m)));
  rgb[1] = static_cast<unsigned char>(std::lround(255.0 * (g + m)));
  rgb[2] = static_cast<unsigned char>(std::lround(255.0 * (b + m)));
}

}  // namespace detail

// Binary PPM (P6) with the motion direction as hue and the max-normalized
// magnitude as value.
inline void save_motion_ppm(const std::string& path, const MotionField& m) {
  double vmax = 0.0;
  for (std::size_t r = 0; r < m.h(); ++r)
    for (std::size_t c = 0; c < m.w(); ++c) {
      const double vr = m.row(r, c), vc = m.col(r, c);
      vmax = std::max(vmax, std::sqrt(vr * vr + vc * vc));
    }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("save_motion_ppm: cannot open " + path);
  f << "P6\n" << m.w() << " " << m.h() << "\n255\n";
  for (std::size_t r = 0; r < m.h(); ++r)
    for (std::size_t c = 0; c < m.w(); ++c) {
      const double vr = m.row(r, c), vc = m.col(r, c);
      const double mag = std::sqrt(vr * vr + vc * vc);
      double hue = 0.0;
      if (mag > 0.0) {
        hue = std::atan2(vc, vr) * 180.0 / 3.14159265358979323846 + 180.0;
        if (hue >= 360.0) hue = 0.0;
      }
      unsigned char rgb[3];
      detail::hsv_to_rgb(hue, 1.0, vmax > 0.0 ? mag / vmax : 0.0, rgb);
      f.write(reinterpret_cast<const char*>(rgb), 3);
    }
  if (!f) throw std::runtime_error("save_motion_ppm: write failed");
  std::ofstream side(path + ".norm.txt");
  side << "max=" << vmax << "\n";
}

}  // namespace lcdc
