#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "meshprobe/keypoints.hpp"
#include "meshprobe/mesh.hpp"

namespace meshprobe {

struct CameraPose {
    double azimuth = 0.0;   ///< degrees
    double elevation = 0.0; ///< degrees
};

/// (azimuth, elevation)_i = (180 i / n, 180 (0.5 - (i + 0.5) / n)), i = 0..n-1.
std::vector<CameraPose> camera_poses(int n);

/// Four well-spread poses out of camera_poses(10): indices 0, 3, 6, 9.
std::array<CameraPose, 4> panel_poses();

using Rgb = std::array<std::uint8_t, 3>;

struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels; ///< row-major RGB

    Image() = default;
    Image(int w, int h, Rgb fill = {255, 255, 255});

    Rgb at(int x, int y) const;
    void set(int x, int y, Rgb c);
    /// alpha-composites c over the pixel; ignores out-of-bounds coordinates
    void blend(int x, int y, Rgb c, double alpha);
    void fill_rect(int x0, int y0, int w, int h, Rgb c);
    void paste(const Image& src, int x0, int y0);
};

/// Writes an 8-bit RGB PNG.
void write_png(const Image& image, const std::filesystem::path& path);
std::vector<std::uint8_t> encode_png(const Image& image);
/// Binary PPM (P6), for debugging.
void write_ppm(const Image& image, const std::filesystem::path& path);

/// 5x7 bitmap glyphs for digits and A-D, drawn at an integer scale.
inline constexpr int kGlyphWidth = 5;
inline constexpr int kGlyphHeight = 7;
bool has_glyph(char c);
void draw_text(Image& image, const std::string& text, int x, int y, int scale, Rgb color);
int text_width(const std::string& text, int scale);

Rgb palette_color(int index);

struct Marker {
    int keypoint = 0; ///< keypoint index
    double x = 0.0;   ///< pixel coordinates of the disc center
    double y = 0.0;
    int label_x = 0;  ///< top-left of the index label
    int label_y = 0;
};

struct RenderedView {
    Image image;
    CameraPose pose;
    std::vector<Marker> markers;
};

struct PanelImage {
    Image image;
    std::array<RenderedView, 4> views;
    /// Top-left pixel of each quadrant in the panel.
    std::array<std::array<int, 2>, 4> offsets{};
    int view_size = 0;
    int label_scale = 2;
};

struct RenderOptions {
    int view_size = 400;
    double opacity = 0.4;
    int marker_radius = 5;
    int label_scale = 2;
};

/// Orthographic view of the mesh (faces depth-sorted, flat-shaded, partially
/// transparent over white), an RGB axis triad at the origin and numbered
/// keypoint discs drawn last so occluded points stay visible. `scale` maps
/// world units to half the view size.
RenderedView render_view(const Mesh& mesh, const std::vector<Keypoint>& keypoints, const CameraPose& pose,
                         double scale, const RenderOptions& options = {});

/// 2x2 grid of views labeled A-D.
PanelImage render_panel(const Mesh& mesh, const KeypointSet& keypoints, const std::array<CameraPose, 4>& poses,
                        const RenderOptions& options = {});

} // namespace meshprobe
