#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace annulus {

/// 2D point in pixel coordinates, x to the right and y downwards.
struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
  Point operator+(Point o) const { return {x + o.x, y + o.y}; }
  Point operator-(Point o) const { return {x - o.x, y - o.y}; }
  Point operator*(double s) const { return {x * s, y * s}; }
};

double norm(Point p);
double dot(Point a, Point b);

/// Dense row-major single-channel image.
template <class T>
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Plane() = default;
  Plane(int h, int w, T fill = T{})
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  T& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Plane&, const Plane&) = default;
};

using Image = Plane<float>;
using Mask = Plane<std::uint8_t>;

}  // namespace annulus
