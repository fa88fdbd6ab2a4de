#pragma once

#include <Eigen/Core>

#include "meshprobe/mesh.hpp"

namespace meshprobe {

/// 2*pi minus the sum of incident corner angles, one value per vertex.
/// Vertices with no incident face get 2*pi.
Eigen::VectorXd angular_deficits(const Mesh& mesh);

struct RigidTransform {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Vec3 translation = Vec3::Zero();

    /// Applies x -> R x + t to every row.
    Vertices apply(const Vertices& points) const;
};

/// Least-squares rotation + translation taking `source` rows onto `target`
/// rows (Kabsch). Reflections are excluded. Requires at least three
/// non-collinear source points.
RigidTransform procrustes_align(const Eigen::MatrixX3d& source, const Eigen::MatrixX3d& target);

/// Sum of squared distances between transformed source and target.
double alignment_residual(const RigidTransform& t, const Eigen::MatrixX3d& source,
                          const Eigen::MatrixX3d& target);

/// Closest distance from p to triangle (a, b, c).
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

} // namespace meshprobe
