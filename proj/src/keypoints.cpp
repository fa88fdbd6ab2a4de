#include "meshprobe/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include "meshprobe/kdtree.hpp"
#include "meshprobe/random.hpp"

namespace meshprobe {

namespace {

constexpr double kDensityCap = 1e12;

Vec3 canonical_sign(Vec3 axis)
{
    int largest = 0;
    axis.cwiseAbs().maxCoeff(&largest);
    return axis[largest] < 0.0 ? Vec3(-axis) : axis;
}

} // namespace

SurfaceSample sample_surface(const Mesh& mesh, int count, std::uint64_t seed)
{
    if (count < 1) throw InputError("sample count must be at least 1");
    check_indices(mesh);
    const Eigen::VectorXd areas = face_areas(mesh);
    std::vector<double> cumulative(static_cast<std::size_t>(areas.size()));
    std::partial_sum(areas.begin(), areas.end(), cumulative.begin());
    const double total = cumulative.empty() ? 0.0 : cumulative.back();
    if (!(total > 0.0)) throw InputError("cannot sample a mesh with zero surface area");

    SurfaceSample out;
    out.points.resize(count, 3);
    out.normals.resize(count, 3);
    out.source_faces.resize(static_cast<std::size_t>(count));
    Rng rng(seed);
    for (int s = 0; s < count; ++s) {
        const double pick = rng.uniform() * total;
        auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
        if (it == cumulative.end()) --it;
        const int f = static_cast<int>(it - cumulative.begin());
        const double r1 = std::sqrt(rng.uniform());
        const double r2 = rng.uniform();
        const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
        const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
        const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
        out.points.row(s) = (1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c;
        out.normals.row(s) = (b - a).cross(c - a).normalized();
        out.source_faces[static_cast<std::size_t>(s)] = f;
    }
    return out;
}

PrincipalFrame principal_axes(const Eigen::MatrixX3d& points)
{
    if (points.rows() < 3) throw InputError("principal_axes needs at least 3 points");
    PrincipalFrame frame;
    frame.mean = points.colwise().mean();
    const Eigen::MatrixX3d centered = points.rowwise() - frame.mean.transpose();
    const Eigen::Matrix3d cov = centered.transpose() * centered / static_cast<double>(points.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
    const Eigen::Vector3d values = eig.eigenvalues(); // ascending
    if (!(values[2] > 0.0)) throw InputError("principal_axes: points have no spread");

    const Vec3 v1 = canonical_sign(eig.eigenvectors().col(2));
    Vec3 v2 = eig.eigenvectors().col(1);
    v2 = canonical_sign((v2 - v2.dot(v1) * v1).normalized());
    frame.axes.row(0) = v1.transpose();
    frame.axes.row(1) = v2.transpose();
    frame.axes.row(2) = v1.cross(v2).transpose();
    frame.variances = Vec3(values[2], values[1], values[0]);
    return frame;
}

Eigen::VectorXd local_density(const Eigen::MatrixX3d& points, int k)
{
    if (k < 1 || k >= points.rows()) throw InputError("local_density needs 1 <= k < number of points");
    const KdTree tree(points);
    Eigen::VectorXd rho(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        const auto nn = tree.knn(points.row(i).transpose(), k, static_cast<int>(i));
        double sum = 0.0;
        for (const auto& nb : nn) sum += std::sqrt(nb.dist2);
        const double mean = sum / k;
        rho[i] = mean > 1.0 / kDensityCap ? 1.0 / mean : kDensityCap;
    }
    return rho;
}

Vec3 reflect_about_axis(const Vec3& point, const Vec3& axis)
{
    return point - 2.0 * axis.dot(point) * axis;
}

double KeypointSet::min_separation() const
{
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        for (std::size_t j = i + 1; j < entries.size(); ++j) {
            best = std::min(best, (entries[i].coordinates - entries[j].coordinates).norm());
        }
    }
    return best;
}

KeypointSet sample_keypoints(const Mesh& mesh, int count, std::uint64_t seed, const KeypointParams& params)
{
    if (count < 2) throw InputError("keypoint count must be at least 2");
    if (params.samples < count) throw InputError("need at least as many surface samples as keypoints");
    if (!(params.separation > 0.0)) throw InputError("keypoint separation must be positive");

    const SurfaceSample sample = sample_surface(mesh, params.samples, seed);
    const Eigen::MatrixX3d& pts = sample.points;
    const int total = sample.size();

    KeypointSet result;
    result.frame = principal_axes(pts);
    const KdTree tree(pts);
    const Eigen::VectorXd density = local_density(pts, std::min(params.neighbors, total - 1));

    std::vector<int> by_density(static_cast<std::size_t>(total));
    std::iota(by_density.begin(), by_density.end(), 0);
    std::stable_sort(by_density.begin(), by_density.end(),
                     [&](int a, int b) { return density[a] > density[b]; });
    const auto dense_count = static_cast<std::size_t>(
        std::max(1.0, std::ceil(params.density_quantile * total)));
    by_density.resize(std::min(dense_count, by_density.size()));

    const double delta = params.separation;
    std::vector<int> chosen;
    std::vector<int> stage;

    // Symmetric candidates, accepted under L1 separation.
    const int symmetric_target = count / 2;
    auto try_accept_l1 = [&](int id) {
        for (int c : chosen) {
            if (c == id || (pts.row(c) - pts.row(id)).lpNorm<1>() <= delta) return;
        }
        chosen.push_back(id);
        stage.push_back(2);
    };
    for (int cand : by_density) {
        if (static_cast<int>(chosen.size()) >= symmetric_target) break;
        try_accept_l1(cand);
        const Vec3 centered = pts.row(cand).transpose() - result.frame.mean;
        for (int j = 0; j < 3 && static_cast<int>(chosen.size()) < symmetric_target; ++j) {
            const Vec3 mirrored = reflect_about_axis(centered, result.frame.axis(j)) + result.frame.mean;
            try_accept_l1(tree.nearest(mirrored).index);
        }
    }

    // Euclidean pruning; earlier acceptances win.
    {
        std::vector<int> kept, kept_stage;
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            bool ok = true;
            for (int k : kept) ok &= (pts.row(k) - pts.row(chosen[i])).norm() > delta;
            if (ok) {
                kept.push_back(chosen[i]);
                kept_stage.push_back(stage[i]);
            }
        }
        chosen = std::move(kept);
        stage = std::move(kept_stage);
    }

    // Axis-ordered farthest-point completion, cycling v1, v2, v3.
    std::vector<Eigen::VectorXd> projections(3);
    std::vector<std::vector<int>> orderings(3);
    for (int j = 0; j < 3; ++j) {
        projections[static_cast<std::size_t>(j)] = (pts.rowwise() - result.frame.mean.transpose()) * result.frame.axis(j);
        auto& ord = orderings[static_cast<std::size_t>(j)];
        ord.resize(static_cast<std::size_t>(total));
        std::iota(ord.begin(), ord.end(), 0);
        const auto& proj = projections[static_cast<std::size_t>(j)];
        std::stable_sort(ord.begin(), ord.end(), [&](int a, int b) { return proj[a] < proj[b]; });
    }
    Eigen::VectorXd min_dist2 = Eigen::VectorXd::Constant(total, std::numeric_limits<double>::infinity());
    for (int c : chosen) {
        min_dist2 = min_dist2.cwiseMin((pts.rowwise() - pts.row(c)).rowwise().squaredNorm());
    }
    for (int step = 0; static_cast<int>(chosen.size()) < count; ++step) {
        const int j = step % 3;
        const auto& proj = projections[static_cast<std::size_t>(j)];
        int best = -1;
        double best_gap = -1.0;
        // walk from the extreme-projection end so ties prefer the extreme
        const auto& ord = orderings[static_cast<std::size_t>(j)];
        for (auto it = ord.rbegin(); it != ord.rend(); ++it) {
            const int id = *it;
            if (!(min_dist2[id] > delta * delta)) continue;
            double gap = std::numeric_limits<double>::infinity();
            for (int c : chosen) gap = std::min(gap, std::abs(proj[id] - proj[c]));
            if (gap > best_gap) {
                best_gap = gap;
                best = id;
            }
        }
        if (best < 0) {
            throw InputError("cannot place " + std::to_string(count) + " keypoints with separation "
                             + std::to_string(delta) + " (placed " + std::to_string(chosen.size()) + ")");
        }
        chosen.push_back(best);
        stage.push_back(3);
        min_dist2 = min_dist2.cwiseMin((pts.rowwise() - pts.row(best)).rowwise().squaredNorm());
    }

    for (std::size_t i = 0; i < chosen.size(); ++i) {
        Keypoint kp;
        kp.sample_id = chosen[i];
        kp.coordinates = pts.row(chosen[i]).transpose();
        kp.face = sample.source_faces[static_cast<std::size_t>(chosen[i])];
        kp.stage = stage[i];
        result.entries.push_back(kp);
        (kp.stage == 2 ? result.symmetric_count : result.completion_count)++;
    }
    std::sort(result.entries.begin(), result.entries.end(), [](const Keypoint& a, const Keypoint& b) {
        return std::lexicographical_compare(a.coordinates.data(), a.coordinates.data() + 3, b.coordinates.data(),
                                            b.coordinates.data() + 3);
    });
    for (std::size_t i = 0; i < result.entries.size(); ++i) result.entries[i].index = static_cast<int>(i);
    return result;
}

nlohmann::json to_json(const KeypointSet& keypoints)
{
    auto points = nlohmann::json::array();
    for (const auto& kp : keypoints.entries) {
        points.push_back({{"index", kp.index},
                          {"coordinates", {kp.coordinates[0], kp.coordinates[1], kp.coordinates[2]}}});
    }
    return {{"points", points}};
}

KeypointSet keypoints_from_json(const nlohmann::json& j)
{
    if (!j.is_object() || !j.contains("points") || !j["points"].is_array()) {
        throw InputError("keypoint document must contain a 'points' array");
    }
    KeypointSet set;
    for (const auto& p : j["points"]) {
        if (!p.contains("index") || !p["index"].is_number_integer()) throw InputError("keypoint entry missing integer 'index'");
        if (!p.contains("coordinates") || !p["coordinates"].is_array() || p["coordinates"].size() != 3) {
            throw InputError("keypoint entry missing 3-element 'coordinates'");
        }
        Keypoint kp;
        kp.index = p["index"].get<int>();
        for (int k = 0; k < 3; ++k) kp.coordinates[k] = p["coordinates"][static_cast<std::size_t>(k)].get<double>();
        set.entries.push_back(kp);
    }
    return set;
}

std::vector<VertexSnap> snap_to_vertices(const Mesh& mesh, const std::vector<Vec3>& points)
{
    const KdTree tree(mesh.vertices);
    std::vector<VertexSnap> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        const auto nb = tree.nearest(p);
        out.push_back({nb.index, std::sqrt(nb.dist2)});
    }
    return out;
}

} // namespace meshprobe
