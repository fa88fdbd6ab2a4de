#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "meshprobe/mesh.hpp"

namespace meshprobe {

/// Area-uniform points on a mesh with the normals of the faces they lie on.
struct SurfaceSample {
    Eigen::MatrixX3d points;
    Eigen::MatrixX3d normals;
    std::vector<int> source_faces;

    int size() const { return static_cast<int>(points.rows()); }
};

SurfaceSample sample_surface(const Mesh& mesh, int count, std::uint64_t seed);

/// Right-handed orthonormal PCA frame. Rows of `axes` are v1, v2, v3 in
/// order of decreasing variance; v1 and v2 have their largest-magnitude
/// component positive and v3 = v1 x v2.
struct PrincipalFrame {
    Eigen::Matrix3d axes;
    Vec3 mean;
    Vec3 variances;

    Vec3 axis(int j) const { return axes.row(j).transpose(); }
};

PrincipalFrame principal_axes(const Eigen::MatrixX3d& points);

/// Reciprocal mean distance to the k nearest other points, capped at 1e12.
Eigen::VectorXd local_density(const Eigen::MatrixX3d& points, int k);

/// x - 2 (axis . x) axis.
Vec3 reflect_about_axis(const Vec3& point, const Vec3& axis);

struct KeypointParams {
    int samples = 20000;        ///< surface points P
    int neighbors = 8;          ///< k for the density estimate
    double separation = 0.1;    ///< minimum pairwise distance delta
    double density_quantile = 0.2; ///< fraction of densest points tried for symmetric picks
};

struct Keypoint {
    int index = 0;          ///< position in the output list, 0..N-1
    Vec3 coordinates;
    int sample_id = -1;     ///< row in the surface sample
    int face = -1;          ///< mesh face the point lies on
    int stage = 0;          ///< 2 = symmetric candidate, 3 = axis completion
};

struct KeypointSet {
    std::vector<Keypoint> entries;
    PrincipalFrame frame;
    int symmetric_count = 0;
    int completion_count = 0;

    int size() const { return static_cast<int>(entries.size()); }
    double min_separation() const;
};

/// PCA-guided, symmetry-aware keypoint selection: densest points and their
/// mirror images across the principal planes first (about half of the
/// budget), then axis-ordered farthest-point completion, with every pair at
/// least `separation` apart. Output is ordered by coordinates.
KeypointSet sample_keypoints(const Mesh& mesh, int count, std::uint64_t seed, const KeypointParams& params = {});

/// `{"points":[{"index":0,"coordinates":[x,y,z]},...]}`
nlohmann::json to_json(const KeypointSet& keypoints);
KeypointSet keypoints_from_json(const nlohmann::json& j);

/// Nearest mesh vertex for each keypoint, with the snapping distance.
struct VertexSnap {
    int vertex;
    double distance;
};
std::vector<VertexSnap> snap_to_vertices(const Mesh& mesh, const std::vector<Vec3>& points);

} // namespace meshprobe
