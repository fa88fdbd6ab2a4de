#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <unistd.h>

#include "meshprobe/mesh.hpp"
#include "meshprobe/primitives.hpp"

namespace fixtures {

using meshprobe::Mesh;
using meshprobe::Vec3;

inline std::filesystem::path data_dir() { return MESHPROBE_TEST_DATA; }
inline std::filesystem::path assets_dir() { return MESHPROBE_ASSETS; }

inline std::string read_file(const std::filesystem::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline Mesh equilateral()
{
    return meshprobe::make_triangle(Vec3(0, 0, 0), Vec3(1, 0, 0), Vec3(0.5, std::sqrt(3.0) / 2.0, 0));
}

/// Square frustum: bottom side 2 at z=0, top side 1 at z=1. Closed; the top
/// and bottom corners have distinct angular deficits.
inline Mesh frustum()
{
    Mesh m;
    m.vertices.resize(8, 3);
    m.vertices << -1, -1, 0, 1, -1, 0, 1, 1, 0, -1, 1, 0, -0.5, -0.5, 1, 0.5, -0.5, 1, 0.5, 0.5, 1, -0.5, 0.5, 1;
    m.faces.resize(12, 3);
    m.faces << 0, 2, 1, 0, 3, 2,  // bottom
        4, 5, 6, 4, 6, 7,         // top
        0, 1, 5, 0, 5, 4,         // sides
        1, 2, 6, 1, 6, 5, 2, 3, 7, 2, 7, 6, 3, 0, 4, 3, 4, 7;
    return m;
}

/// Flat hexagonal fan around vertex 0 at the origin.
inline Mesh planar_fan()
{
    Mesh m;
    m.vertices.resize(7, 3);
    m.vertices.row(0) << 0, 0, 0;
    for (int k = 0; k < 6; ++k) {
        const double a = k * std::numbers::pi / 3.0;
        m.vertices.row(k + 1) << std::cos(a), std::sin(a), 0;
    }
    m.faces.resize(6, 3);
    for (int k = 0; k < 6; ++k) m.faces.row(k) << 0, k + 1, (k + 1) % 6 + 1;
    return m;
}

/// Unit square in the xy plane split into two triangles of equal area.
inline Mesh split_square()
{
    Mesh m;
    m.vertices.resize(4, 3);
    m.vertices << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
    m.faces.resize(2, 3);
    m.faces << 0, 1, 2, 0, 2, 3;
    return m;
}

/// Scoped temporary directory.
struct TempDir {
    std::filesystem::path path;

    explicit TempDir(const std::string& tag)
    {
        path = std::filesystem::temp_directory_path() / ("meshprobe-test-" + tag + "-" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace fixtures
