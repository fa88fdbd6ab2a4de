#pragma once

#include "meshprobe/mesh.hpp"

namespace meshprobe {

/// Axis-aligned cube [-0.5, 0.5]^3 with 8 vertices and 12 triangles.
Mesh make_cube();

/// Unit-radius icosphere; subdivisions=0 is the icosahedron (12 vertices).
Mesh make_icosphere(int subdivisions, double radius = 1.0);

/// Closed box [lo, hi] whose faces are split into a regular grid with
/// `cells` quads along each axis.
Mesh make_box(const Vec3& lo, const Vec3& hi, const Eigen::Vector3i& cells);

/// Single triangle.
Mesh make_triangle(const Vec3& a, const Vec3& b, const Vec3& c);

} // namespace meshprobe
