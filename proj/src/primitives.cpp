#include "meshprobe/primitives.hpp"

#include <array>
#include <cmath>
#include <map>
#include <vector>

namespace meshprobe {

namespace {

Mesh assemble(const std::vector<Vec3>& verts, const std::vector<std::array<int, 3>>& faces)
{
    Mesh mesh;
    mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (std::size_t i = 0; i < verts.size(); ++i) mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i];
    mesh.faces.resize(static_cast<Eigen::Index>(faces.size()), 3);
    for (std::size_t i = 0; i < faces.size(); ++i) {
        mesh.faces.row(static_cast<Eigen::Index>(i)) << faces[i][0], faces[i][1], faces[i][2];
    }
    return mesh;
}

} // namespace

Mesh make_cube()
{
    return make_box(Vec3::Constant(-0.5), Vec3::Constant(0.5), Eigen::Vector3i::Ones());
}

Mesh make_box(const Vec3& lo, const Vec3& hi, const Eigen::Vector3i& cells)
{
    std::map<std::array<int, 3>, int> lattice;
    std::vector<Vec3> verts;
    auto vertex = [&](const std::array<int, 3>& ijk) {
        auto [it, inserted] = lattice.emplace(ijk, static_cast<int>(verts.size()));
        if (inserted) {
            Vec3 p;
            for (int a = 0; a < 3; ++a) p[a] = lo[a] + (hi[a] - lo[a]) * ijk[a] / cells[a];
            verts.push_back(p);
        }
        return it->second;
    };

    std::vector<std::array<int, 3>> faces;
    for (int a = 0; a < 3; ++a) {
        const int b = (a + 1) % 3;
        const int c = (a + 2) % 3;
        for (int side = 0; side < 2; ++side) {
            for (int u = 0; u < cells[b]; ++u) {
                for (int v = 0; v < cells[c]; ++v) {
                    std::array<int, 4> quad{};
                    const int corners[4][2] = {{u, v}, {u + 1, v}, {u + 1, v + 1}, {u, v + 1}};
                    for (int q = 0; q < 4; ++q) {
                        std::array<int, 3> ijk{};
                        ijk[a] = side * cells[a];
                        ijk[b] = corners[q][0];
                        ijk[c] = corners[q][1];
                        quad[q] = vertex(ijk);
                    }
                    // (b, c) ordering faces +e_a; flip on the low side
                    if (side == 1) {
                        faces.push_back({quad[0], quad[1], quad[2]});
                        faces.push_back({quad[0], quad[2], quad[3]});
                    } else {
                        faces.push_back({quad[0], quad[2], quad[1]});
                        faces.push_back({quad[0], quad[3], quad[2]});
                    }
                }
            }
        }
    }
    return assemble(verts, faces);
}

Mesh make_icosphere(int subdivisions, double radius)
{
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
        {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
        {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1},
    };
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1},
    };

    for (int s = 0; s < subdivisions; ++s) {
        std::map<std::pair<int, int>, int> midpoint;
        auto mid = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto [it, inserted] = midpoint.emplace(key, static_cast<int>(verts.size()));
            if (inserted) verts.push_back((verts[static_cast<std::size_t>(a)] + verts[static_cast<std::size_t>(b)]).normalized());
            return it->second;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = mid(f[0], f[1]);
            const int bc = mid(f[1], f[2]);
            const int ca = mid(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces = std::move(next);
    }
    for (auto& v : verts) v *= radius;
    return assemble(verts, faces);
}

Mesh make_triangle(const Vec3& a, const Vec3& b, const Vec3& c)
{
    return assemble({a, b, c}, {{0, 1, 2}});
}

} // namespace meshprobe
