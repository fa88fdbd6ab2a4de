#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "meshprobe/error.hpp"

namespace meshprobe {

using Vertices = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Faces = Eigen::Matrix<int, Eigen::Dynamic, 3>;
using Vec3 = Eigen::Vector3d;

/// Triangle mesh with counter-clockwise faces. Index validity and
/// non-degeneracy are checked by check_indices(); closedness by validate().
struct Mesh {
    Vertices vertices;
    Faces faces;

    int num_vertices() const { return static_cast<int>(vertices.rows()); }
    int num_faces() const { return static_cast<int>(faces.rows()); }
    bool empty() const { return vertices.rows() == 0; }
};

/// Throws InputError if any face references a missing vertex or repeats one.
void check_indices(const Mesh& mesh);

/// Reads an ASCII Wavefront OBJ. Only `v` and `f` records are interpreted;
/// `f` entries may use the `v/vt/vn` forms and negative (relative) indices.
Mesh load_obj(const std::filesystem::path& path);
Mesh parse_obj(const std::string& text, const std::string& source_name = "<string>");

/// Writes `v` and `f` records with 17 significant digits.
void save_obj(const Mesh& mesh, const std::filesystem::path& path);
std::string format_obj(const Mesh& mesh);

struct ValidationReport {
    bool watertight = false;
    bool manifold = false;
    int boundary_edges = 0;
    int nonmanifold_edges = 0;
    int nonmanifold_vertices = 0;
    int degenerate_faces = 0;
    int duplicate_vertices = 0;
    double min_face_area = 0.0;
    int min_area_face = -1;
    std::vector<std::pair<int, int>> boundary_edge_list;

    bool ok() const { return watertight && manifold && degenerate_faces == 0; }
};

ValidationReport validate(const Mesh& mesh);
nlohmann::json to_json(const ValidationReport& report);

/// Maps original coordinates x to (x - center) * scale.
struct NormalizationTransform {
    Vec3 center = Vec3::Zero();
    double scale = 1.0;

    Vertices apply(const Vertices& v) const;
    Vertices invert(const Vertices& v) const;
};

/// Centers the bounding box at the origin and scales the largest extent to 1.
std::pair<Mesh, NormalizationTransform> normalize(const Mesh& mesh);
Mesh denormalize(const Mesh& mesh, const NormalizationTransform& transform);

double face_area(const Mesh& mesh, int face);
Eigen::VectorXd face_areas(const Mesh& mesh);
Vec3 bbox_extent(const Vertices& v);

/// Euler characteristic V - E + F.
int euler_characteristic(const Mesh& mesh);

/// Area-weighted vertex normals, unit length.
Vertices vertex_normals(const Mesh& mesh);

} // namespace meshprobe
