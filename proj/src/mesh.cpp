#include "meshprobe/mesh.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <Eigen/Geometry>

namespace meshprobe {

namespace {

std::string_view trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s)
{
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < s.size() && s[j] != ' ' && s[j] != '\t') ++j;
        if (j > i) out.push_back(s.substr(i, j - i));
        i = j;
    }
    return out;
}

[[noreturn]] void obj_error(const std::string& source, int line, const std::string& what)
{
    throw InputError(source + ": " + what + " at line " + std::to_string(line));
}

std::uint64_t edge_key(int a, int b)
{
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint32_t>(b);
}

struct DisjointSet {
    std::vector<std::size_t> parent;

    explicit DisjointSet(std::size_t n) : parent(n)
    {
        for (std::size_t i = 0; i < n; ++i) parent[i] = i;
    }

    std::size_t find(std::size_t x)
    {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }

    void join(std::size_t a, std::size_t b) { parent[find(a)] = find(b); }
};

} // namespace

void check_indices(const Mesh& mesh)
{
    const int n = mesh.num_vertices();
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& face = mesh.faces.row(f);
        for (int k = 0; k < 3; ++k) {
            if (face(k) < 0 || face(k) >= n) {
                throw InputError("face " + std::to_string(f) + " references vertex "
                                 + std::to_string(face(k)) + " outside [0, "
                                 + std::to_string(n) + ")");
            }
        }
        if (face(0) == face(1) || face(1) == face(2) || face(0) == face(2)) {
            throw InputError("face " + std::to_string(f) + " repeats a vertex index");
        }
    }
}

Mesh parse_obj(const std::string& text, const std::string& source_name)
{
    std::vector<Vec3> verts;
    std::vector<Eigen::Vector3i> faces;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        const auto tokens = split_ws(line);
        const auto tag = tokens.front();
        if (tag == "v") {
            if (tokens.size() < 4) obj_error(source_name, line_no, "malformed vertex record");
            Vec3 p;
            for (int k = 0; k < 3; ++k) {
                const auto tok = tokens[k + 1];
                auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), p[k]);
                if (ec != std::errc() || ptr != tok.data() + tok.size()) {
                    obj_error(source_name, line_no, "malformed vertex coordinate");
                }
            }
            verts.push_back(p);
        } else if (tag == "f") {
            if (tokens.size() != 4) {
                if (tokens.size() > 4) obj_error(source_name, line_no, "non-triangular face");
                obj_error(source_name, line_no, "malformed face record");
            }
            Eigen::Vector3i face;
            for (int k = 0; k < 3; ++k) {
                auto tok = tokens[k + 1];
                tok = tok.substr(0, tok.find('/'));
                long idx = 0;
                auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), idx);
                if (ec != std::errc() || ptr != tok.data() + tok.size() || idx == 0) {
                    obj_error(source_name, line_no, "malformed face index");
                }
                const long resolved = idx > 0 ? idx - 1 : static_cast<long>(verts.size()) + idx;
                if (resolved < 0 || resolved >= static_cast<long>(verts.size())) {
                    obj_error(source_name, line_no, "face index out of range");
                }
                face[k] = static_cast<int>(resolved);
            }
            faces.push_back(face);
        }
        // vt, vn, o, g, s, usemtl, mtllib: ignored
    }

    Mesh mesh;
    mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
    mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) mesh.faces.row(static_cast<Eigen::Index>(i)) = faces[i];
    return mesh;
}

Mesh load_obj(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw InputError("cannot open mesh file '" + path.string() + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_obj(buf.str(), path.string());
}

std::string format_obj(const Mesh& mesh)
{
    if (mesh.empty()) throw InputError("empty mesh");
    std::string out;
    out.reserve(static_cast<std::size_t>(mesh.num_vertices()) * 64);
    char buf[64];
    for (int i = 0; i < mesh.num_vertices(); ++i) {
        out += 'v';
        for (int k = 0; k < 3; ++k) {
            out += ' ';
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), mesh.vertices(i, k));
            out.append(buf, ptr);
        }
        out += '\n';
    }
    for (int f = 0; f < mesh.num_faces(); ++f) {
        out += "f " + std::to_string(mesh.faces(f, 0) + 1) + ' ' + std::to_string(mesh.faces(f, 1) + 1)
               + ' ' + std::to_string(mesh.faces(f, 2) + 1) + '\n';
    }
    return out;
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path)
{
    const std::string text = format_obj(mesh);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

double face_area(const Mesh& mesh, int face)
{
    const Vec3 a = mesh.vertices.row(mesh.faces(face, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(face, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(face, 2));
    return 0.5 * (b - a).cross(c - a).norm();
}

Eigen::VectorXd face_areas(const Mesh& mesh)
{
    Eigen::VectorXd areas(mesh.num_faces());
    for (int f = 0; f < mesh.num_faces(); ++f) areas[f] = face_area(mesh, f);
    return areas;
}

ValidationReport validate(const Mesh& mesh)
{
    ValidationReport report;
    const int n = mesh.num_vertices();

    std::unordered_map<std::uint64_t, int> edge_faces;
    bool indices_ok = true;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto face = mesh.faces.row(f);
        bool bad = false;
        for (int k = 0; k < 3; ++k) bad |= face(k) < 0 || face(k) >= n;
        bad |= face(0) == face(1) || face(1) == face(2) || face(0) == face(2);
        if (bad) {
            ++report.degenerate_faces;
            indices_ok = false;
            continue;
        }
        for (int k = 0; k < 3; ++k) ++edge_faces[edge_key(face(k), face((k + 1) % 3))];
    }

    report.min_face_area = mesh.num_faces() > 0 ? std::numeric_limits<double>::infinity() : 0.0;
    if (indices_ok) {
        for (int f = 0; f < mesh.num_faces(); ++f) {
            const double a = face_area(mesh, f);
            if (a < report.min_face_area) {
                report.min_face_area = a;
                report.min_area_face = f;
            }
            if (a < 1e-12) ++report.degenerate_faces;
        }
    }

    std::vector<std::pair<int, int>> boundary;
    for (const auto& [key, count] : edge_faces) {
        if (count == 1) {
            boundary.emplace_back(static_cast<int>(key >> 32), static_cast<int>(key & 0xffffffffu));
        } else if (count > 2) {
            ++report.nonmanifold_edges;
        }
    }
    std::sort(boundary.begin(), boundary.end());
    report.boundary_edges = static_cast<int>(boundary.size());
    report.boundary_edge_list = std::move(boundary);

    // Vertex links: faces around a vertex must form one edge-connected fan.
    if (indices_ok) {
        std::vector<std::vector<int>> incident(static_cast<std::size_t>(n));
        for (int f = 0; f < mesh.num_faces(); ++f) {
            for (int k = 0; k < 3; ++k) incident[static_cast<std::size_t>(mesh.faces(f, k))].push_back(f);
        }
        for (int v = 0; v < n; ++v) {
            const auto& fan = incident[static_cast<std::size_t>(v)];
            if (fan.empty()) continue;
            DisjointSet sets(fan.size());
            std::map<int, std::size_t> first_face_of_neighbor;
            for (std::size_t i = 0; i < fan.size(); ++i) {
                const auto face = mesh.faces.row(fan[i]);
                for (int k = 0; k < 3; ++k) {
                    const int w = face(k);
                    if (w == v) continue;
                    auto [it, inserted] = first_face_of_neighbor.emplace(w, i);
                    if (!inserted) sets.join(i, it->second);
                }
            }
            std::set<std::size_t> roots;
            for (std::size_t i = 0; i < fan.size(); ++i) roots.insert(sets.find(i));
            if (roots.size() > 1) ++report.nonmanifold_vertices;
        }
    }

    // exact duplicate positions
    std::map<std::array<double, 3>, int> seen;
    for (int v = 0; v < n; ++v) {
        const std::array<double, 3> key{mesh.vertices(v, 0), mesh.vertices(v, 1), mesh.vertices(v, 2)};
        if (!seen.emplace(key, v).second) ++report.duplicate_vertices;
    }

    report.watertight = indices_ok && mesh.num_faces() > 0 && report.boundary_edges == 0
                        && report.nonmanifold_edges == 0;
    report.manifold = indices_ok && report.nonmanifold_edges == 0 && report.nonmanifold_vertices == 0;
    return report;
}

nlohmann::json to_json(const ValidationReport& r)
{
    nlohmann::json j;
    j["watertight"] = r.watertight;
    j["manifold"] = r.manifold;
    j["boundary_edges"] = r.boundary_edges;
    j["nonmanifold_edges"] = r.nonmanifold_edges;
    j["nonmanifold_vertices"] = r.nonmanifold_vertices;
    j["degenerate_faces"] = r.degenerate_faces;
    j["duplicate_vertices"] = r.duplicate_vertices;
    j["min_face_area"] = r.min_face_area;
    j["min_area_face"] = r.min_area_face;
    auto edges = nlohmann::json::array();
    for (const auto& [a, b] : r.boundary_edge_list) edges.push_back({a, b});
    j["boundary_edge_list"] = edges;
    return j;
}

Vertices NormalizationTransform::apply(const Vertices& v) const
{
    return ((v.rowwise() - center.transpose()) * scale).eval();
}

Vertices NormalizationTransform::invert(const Vertices& v) const
{
    return ((v / scale).rowwise() + center.transpose()).eval();
}

Vec3 bbox_extent(const Vertices& v)
{
    if (v.rows() == 0) return Vec3::Zero();
    return (v.colwise().maxCoeff() - v.colwise().minCoeff()).transpose();
}

std::pair<Mesh, NormalizationTransform> normalize(const Mesh& mesh)
{
    if (mesh.empty()) throw InputError("cannot normalize an empty mesh");
    const Vec3 lo = mesh.vertices.colwise().minCoeff();
    const Vec3 hi = mesh.vertices.colwise().maxCoeff();
    const double extent = (hi - lo).maxCoeff();
    if (!(extent > 0.0)) throw InputError("cannot normalize a mesh with zero extent on all axes");

    NormalizationTransform t;
    t.center = 0.5 * (lo + hi);
    t.scale = 1.0 / extent;
    Mesh out{t.apply(mesh.vertices), mesh.faces};
    return {std::move(out), t};
}

Mesh denormalize(const Mesh& mesh, const NormalizationTransform& transform)
{
    return Mesh{transform.invert(mesh.vertices), mesh.faces};
}

int euler_characteristic(const Mesh& mesh)
{
    std::set<std::uint64_t> edges;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        for (int k = 0; k < 3; ++k) edges.insert(edge_key(mesh.faces(f, k), mesh.faces(f, (k + 1) % 3)));
    }
    return mesh.num_vertices() - static_cast<int>(edges.size()) + mesh.num_faces();
}

Vertices vertex_normals(const Mesh& mesh)
{
    Vertices normals = Vertices::Zero(mesh.num_vertices(), 3);
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
        const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
        const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
        const Vec3 area_normal = 0.5 * (b - a).cross(c - a);
        for (int k = 0; k < 3; ++k) normals.row(mesh.faces(f, k)) += area_normal.transpose();
    }
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        const double len = normals.row(v).norm();
        if (len > 0.0) normals.row(v) /= len;
    }
    return normals;
}

} // namespace meshprobe
