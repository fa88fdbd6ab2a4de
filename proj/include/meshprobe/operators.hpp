#pragma once

#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "meshprobe/mesh.hpp"

namespace meshprobe {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Largest cotangent magnitude a face may contribute to the Laplacian.
inline constexpr double kCotangentClamp = 1e6;
/// Faces below this area are rejected when building operators.
inline constexpr double kMinFaceArea = 1e-12;

/// Differential operators of a triangle mesh.
///
/// Row 3f+d of `gradient` holds the d-th spatial component of the gradient of
/// the piecewise-linear hat functions on face f, so `gradient * V` stacks one
/// 3x3 block per face whose (d, c) entry is dV_c/dx_d. `mass` is the diagonal
/// of the 3F x 3F mass matrix (face area repeated three times) and
/// `laplacian` is gradient^T * diag(mass) * gradient, which is the positive
/// semi-definite cotangent Laplacian.
struct MeshOperators {
    SparseMatrix gradient;
    Eigen::VectorXd mass;
    SparseMatrix laplacian;
    Eigen::VectorXd areas;
    /// Faces whose mass entry was scaled down to respect kCotangentClamp.
    std::vector<int> clamped_faces;

    int num_vertices() const { return static_cast<int>(gradient.cols()); }
    int num_faces() const { return static_cast<int>(gradient.rows() / 3); }
};

MeshOperators build_operators(const Mesh& mesh);

/// Stacked per-face Jacobians (3F x 3) of the map rest -> positions, i.e.
/// gradient * positions.
Eigen::MatrixX3d face_jacobians(const MeshOperators& ops, const Eigen::MatrixX3d& positions);

} // namespace meshprobe
