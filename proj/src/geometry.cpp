#include "meshprobe/geometry.hpp"

#include <cmath>
#include <numbers>

#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace meshprobe {

Eigen::VectorXd angular_deficits(const Mesh& mesh)
{
    check_indices(mesh);
    Eigen::VectorXd deficit = Eigen::VectorXd::Constant(mesh.num_vertices(), 2.0 * std::numbers::pi);
    for (int f = 0; f < mesh.num_faces(); ++f) {
        for (int i = 0; i < 3; ++i) {
            const int v = mesh.faces(f, i);
            const Vec3 p = mesh.vertices.row(v);
            const Vec3 a = Vec3(mesh.vertices.row(mesh.faces(f, (i + 1) % 3))) - p;
            const Vec3 b = Vec3(mesh.vertices.row(mesh.faces(f, (i + 2) % 3))) - p;
            // atan2 stays accurate for angles near 0 and pi
            deficit[v] -= std::atan2(a.cross(b).norm(), a.dot(b));
        }
    }
    return deficit;
}

Vertices RigidTransform::apply(const Vertices& points) const
{
    return ((points * rotation.transpose()).rowwise() + translation.transpose()).eval();
}

RigidTransform procrustes_align(const Eigen::MatrixX3d& source, const Eigen::MatrixX3d& target)
{
    if (source.rows() != target.rows()) {
        throw InputError("procrustes_align: source and target have different point counts");
    }
    if (source.rows() < 3) throw InputError("procrustes_align: need at least 3 correspondences");

    const Vec3 src_mean = source.colwise().mean();
    const Vec3 dst_mean = target.colwise().mean();
    const Eigen::MatrixX3d src = source.rowwise() - src_mean.transpose();
    const Eigen::MatrixX3d dst = target.rowwise() - dst_mean.transpose();

    Eigen::JacobiSVD<Eigen::MatrixX3d> spread(src);
    const auto sv = spread.singularValues();
    if (!(sv[0] > 0.0) || sv[1] <= 1e-9 * sv[0]) {
        throw InputError("procrustes_align: source points are collinear or coincident");
    }

    const Eigen::Matrix3d cov = src.transpose() * dst;
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Eigen::Matrix3d u = svd.matrixU();
    const Eigen::Matrix3d v = svd.matrixV();
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;

    RigidTransform t;
    t.rotation = v * d * u.transpose();
    t.translation = dst_mean - t.rotation * src_mean;
    return t;
}

double alignment_residual(const RigidTransform& t, const Eigen::MatrixX3d& source,
                          const Eigen::MatrixX3d& target)
{
    return (t.apply(source) - target).squaredNorm();
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c)
{
    // Region tests from Ericson, Real-Time Collision Detection, 5.1.5
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return ap.norm();

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return bp.norm();

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return (p - (a + v * ab)).norm();
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return cp.norm();

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return (p - (a + w * ac)).norm();
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).norm();
    }

    const double denom = 1.0 / (va + vb + vc);
    const double v = vb * denom;
    const double w = vc * denom;
    return (p - (a + ab * v + ac * w)).norm();
}

} // namespace meshprobe
