#pragma once

#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <ostream>

#include "anatomap/error.hpp"

namespace anatomap {

// Axis order is (z, y, x) everywhere in this library.

/// Integer voxel index.
struct Voxel {
  int z = 0;
  int y = 0;
  int x = 0;

  int operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
  int& operator[](int axis) { return axis == 0 ? z : (axis == 1 ? y : x); }
  friend auto operator<=>(const Voxel&, const Voxel&) = default;
  friend Voxel operator+(Voxel a, Voxel b) { return {a.z + b.z, a.y + b.y, a.x + b.x}; }
  friend Voxel operator-(Voxel a, Voxel b) { return {a.z - b.z, a.y - b.y, a.x - b.x}; }
};

inline std::ostream& operator<<(std::ostream& os, const Voxel& v) {
  return os << '(' << v.z << ',' << v.y << ',' << v.x << ')';
}

/// Real-valued 3-vector; used for physical points (mm), offsets and
/// continuous voxel coordinates.
struct Vec3 {
  double z = 0.0;
  double y = 0.0;
  double x = 0.0;

  double operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
  double& operator[](int axis) { return axis == 0 ? z : (axis == 1 ? y : x); }
  friend bool operator==(const Vec3&, const Vec3&) = default;
  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.z + b.z, a.y + b.y, a.x + b.x}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.z - b.z, a.y - b.y, a.x - b.x}; }
  friend Vec3 operator*(Vec3 a, double s) { return {a.z * s, a.y * s, a.x * s}; }
  double norm() const { return std::sqrt(z * z + y * y + x * x); }
};

inline Vec3 to_vec(Voxel v) { return {double(v.z), double(v.y), double(v.x)}; }

/// Extent of a 3D grid in voxels.
struct Shape3 {
  int z = 0;
  int y = 0;
  int x = 0;

  int operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }
  friend bool operator==(const Shape3&, const Shape3&) = default;
  std::size_t count() const { return std::size_t(z) * std::size_t(y) * std::size_t(x); }
  bool contains(Voxel v) const {
    return v.z >= 0 && v.y >= 0 && v.x >= 0 && v.z < z && v.y < y && v.x < x;
  }
  std::size_t offset(Voxel v) const {
    return (std::size_t(v.z) * std::size_t(y) + std::size_t(v.y)) * std::size_t(x) + std::size_t(v.x);
  }
  Voxel center() const { return {z / 2, y / 2, x / 2}; }
  Voxel clamp(Voxel v) const;
};

inline std::ostream& operator<<(std::ostream& os, const Shape3& s) {
  return os << s.z << 'x' << s.y << 'x' << s.x;
}

/// Physical size of a voxel along each axis, millimetres.
class Spacing {
 public:
  Spacing() = default;
  Spacing(double z, double y, double x);

  double operator[](int axis) const { return v_[std::size_t(axis)]; }
  double z() const { return v_[0]; }
  double y() const { return v_[1]; }
  double x() const { return v_[2]; }
  friend bool operator==(const Spacing&, const Spacing&) = default;

 private:
  std::array<double, 3> v_{1.0, 1.0, 1.0};
};

Vec3 voxel_to_phys(Voxel idx, const Spacing& spacing);
Vec3 voxel_to_phys(const Vec3& idx, const Spacing& spacing);

/// Nearest voxel index; exact half-way points go to the lower index.
Voxel phys_to_voxel(const Vec3& mm, const Spacing& spacing);

/// Round-half-toward-lower on a single coordinate.
int round_half_down(double v);

/// Round-half-up (floor(v + 0.5)).
int round_half_up(double v);

}  // namespace anatomap
