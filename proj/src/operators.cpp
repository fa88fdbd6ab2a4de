#include "meshprobe/operators.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Geometry>

namespace meshprobe {

MeshOperators build_operators(const Mesh& mesh)
{
    check_indices(mesh);
    const int n = mesh.num_vertices();
    const int nf = mesh.num_faces();

    MeshOperators ops;
    ops.areas.resize(nf);
    ops.mass.resize(3 * nf);

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(nf) * 9);

    for (int f = 0; f < nf; ++f) {
        const int idx[3] = {mesh.faces(f, 0), mesh.faces(f, 1), mesh.faces(f, 2)};
        const Vec3 p[3] = {mesh.vertices.row(idx[0]), mesh.vertices.row(idx[1]), mesh.vertices.row(idx[2])};
        const Vec3 area_normal = (p[1] - p[0]).cross(p[2] - p[0]);
        const double double_area = area_normal.norm();
        const double area = 0.5 * double_area;
        if (!(area >= kMinFaceArea)) {
            throw NumericalError("face " + std::to_string(f) + " is near-degenerate (area "
                                 + std::to_string(area) + ")");
        }
        const Vec3 normal = area_normal / double_area;

        // grad(phi_i) = n x (p_k - p_j) / (2A), with (i, j, k) cyclic
        for (int i = 0; i < 3; ++i) {
            const Vec3& pj = p[(i + 1) % 3];
            const Vec3& pk = p[(i + 2) % 3];
            const Vec3 g = normal.cross(pk - pj) / double_area;
            for (int d = 0; d < 3; ++d) triplets.emplace_back(3 * f + d, idx[i], g[d]);
        }

        // cot of the angle at corner i is (e_a . e_b) / |e_a x e_b|
        double max_cot = 0.0;
        for (int i = 0; i < 3; ++i) {
            const Vec3 ea = p[(i + 1) % 3] - p[i];
            const Vec3 eb = p[(i + 2) % 3] - p[i];
            max_cot = std::max(max_cot, std::abs(ea.dot(eb)) / double_area);
        }
        double weight = area;
        if (max_cot > kCotangentClamp) {
            // scaling the face weight scales all three of its cotangents alike
            weight *= kCotangentClamp / max_cot;
            ops.clamped_faces.push_back(f);
        }
        ops.areas[f] = area;
        ops.mass.segment<3>(3 * f).setConstant(weight);
    }

    ops.gradient.resize(3 * nf, n);
    ops.gradient.setFromTriplets(triplets.begin(), triplets.end());
    ops.gradient.makeCompressed();

    const SparseMatrix weighted = ops.mass.asDiagonal() * ops.gradient;
    ops.laplacian = SparseMatrix(ops.gradient.transpose()) * weighted;
    ops.laplacian.makeCompressed();
    return ops;
}

Eigen::MatrixX3d face_jacobians(const MeshOperators& ops, const Eigen::MatrixX3d& positions)
{
    if (positions.rows() != ops.num_vertices()) {
        throw InputError("positions have " + std::to_string(positions.rows()) + " rows, mesh has "
                         + std::to_string(ops.num_vertices()) + " vertices");
    }
    return ops.gradient * positions;
}

} // namespace meshprobe
