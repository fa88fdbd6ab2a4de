#include "meshprobe/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include <png.h>

#include <Eigen/Geometry>

#include "meshprobe/error.hpp"

namespace meshprobe {

namespace {

constexpr Rgb kWhite{255, 255, 255};
constexpr Rgb kBlack{0, 0, 0};
constexpr Rgb kMeshColor{70, 110, 180};

struct Glyph {
    char c;
    std::array<std::uint8_t, kGlyphHeight> rows;
};

constexpr Glyph kGlyphs[] = {
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}}, {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}}, {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
};

const Glyph* find_glyph(char c)
{
    for (const auto& g : kGlyphs) {
        if (g.c == c) return &g;
    }
    return nullptr;
}

// tab20
constexpr Rgb kPalette[] = {
    {31, 119, 180}, {174, 199, 232}, {255, 127, 14},  {255, 187, 120}, {44, 160, 44},
    {152, 223, 138}, {214, 39, 40},  {255, 152, 150}, {148, 103, 189}, {197, 176, 213},
    {140, 86, 75},  {196, 156, 148}, {227, 119, 194}, {247, 182, 210}, {127, 127, 127},
    {199, 199, 199}, {188, 189, 34}, {219, 219, 141}, {23, 190, 207},  {158, 218, 229},
};

struct Camera {
    Vec3 right, up, toward;
    double half, scale;

    Eigen::Vector2d project(const Vec3& p) const
    {
        return {half * (1.0 + p.dot(right) / scale), half * (1.0 - p.dot(up) / scale)};
    }
    double depth(const Vec3& p) const { return p.dot(toward); }
};

Camera make_camera(const CameraPose& pose, int size, double scale)
{
    const double az = pose.azimuth * std::numbers::pi / 180.0;
    const double el = pose.elevation * std::numbers::pi / 180.0;
    Camera cam;
    cam.toward = Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    const Vec3 forward = -cam.toward;
    Vec3 right = forward.cross(Vec3::UnitZ());
    if (right.norm() < 1e-9) right = Vec3::UnitY().cross(forward); // looking straight up or down
    cam.right = right.normalized();
    cam.up = cam.right.cross(forward);
    cam.half = size / 2.0;
    cam.scale = scale;
    return cam;
}

void fill_triangle(Image& img, const Eigen::Vector2d& a, Eigen::Vector2d b, Eigen::Vector2d c, Rgb color,
                   double alpha)
{
    auto edge = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q, double x, double y) {
        return (q.x() - p.x()) * (y - p.y()) - (q.y() - p.y()) * (x - p.x());
    };
    double area = edge(a, b, c.x(), c.y());
    if (area == 0.0) return;
    if (area < 0.0) {
        std::swap(b, c);
        area = -area;
    }
    // a shared edge is owned by exactly one of its two triangles
    auto owns = [](const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
        const double dy = q.y() - p.y();
        return dy < 0.0 || (dy == 0.0 && q.x() - p.x() > 0.0);
    };
    const bool own_ab = owns(a, b), own_bc = owns(b, c), own_ca = owns(c, a);

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x(), b.x(), c.x()}))));
    const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(std::max({a.x(), b.x(), c.x()}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y(), b.y(), c.y()}))));
    const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(std::max({a.y(), b.y(), c.y()}))));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            const double w0 = edge(a, b, px, py), w1 = edge(b, c, px, py), w2 = edge(c, a, px, py);
            const bool in = (w0 > 0.0 || (w0 == 0.0 && own_ab)) && (w1 > 0.0 || (w1 == 0.0 && own_bc))
                            && (w2 > 0.0 || (w2 == 0.0 && own_ca));
            if (in) img.blend(x, y, color, alpha);
        }
    }
}

void fill_disc(Image& img, double cx, double cy, double r, Rgb color)
{
    for (int y = static_cast<int>(std::floor(cy - r)); y <= static_cast<int>(std::ceil(cy + r)); ++y) {
        for (int x = static_cast<int>(std::floor(cx - r)); x <= static_cast<int>(std::ceil(cx + r)); ++x) {
            const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
            if (dx * dx + dy * dy <= r * r && x >= 0 && y >= 0 && x < img.width && y < img.height) {
                img.set(x, y, color);
            }
        }
    }
}

void draw_line(Image& img, const Eigen::Vector2d& a, const Eigen::Vector2d& b, double thickness, Rgb color)
{
    const double len = (b - a).norm();
    const int steps = std::max(1, static_cast<int>(std::ceil(len * 4.0)));
    for (int s = 0; s <= steps; ++s) {
        const Eigen::Vector2d p = a + (b - a) * (static_cast<double>(s) / steps);
        fill_disc(img, p.x(), p.y(), thickness / 2.0, color);
    }
}

void png_append(png_structp png, png_bytep data, png_size_t length)
{
    auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + length);
}

} // namespace

std::vector<CameraPose> camera_poses(int n)
{
    if (n < 1) throw InputError("camera_poses needs n >= 1");
    std::vector<CameraPose> poses;
    for (int i = 0; i < n; ++i) {
        poses.push_back({180.0 * i / n, 180.0 * (0.5 - (i + 0.5) / n)});
    }
    return poses;
}

std::array<CameraPose, 4> panel_poses()
{
    const auto all = camera_poses(10);
    return {all[0], all[3], all[6], all[9]};
}

Image::Image(int w, int h, Rgb fill) : width(w), height(h)
{
    if (w <= 0 || h <= 0) throw InputError("image dimensions must be positive");
    pixels.resize(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3);
    for (std::size_t i = 0; i < pixels.size(); i += 3) std::copy(fill.begin(), fill.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i));
}

Rgb Image::at(int x, int y) const
{
    const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
    return {pixels[i], pixels[i + 1], pixels[i + 2]};
}

void Image::set(int x, int y, Rgb c)
{
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
    std::copy(c.begin(), c.end(), pixels.begin() + static_cast<std::ptrdiff_t>(i));
}

void Image::blend(int x, int y, Rgb c, double alpha)
{
    if (x < 0 || y < 0 || x >= width || y >= height) return;
    const Rgb old = at(x, y);
    Rgb out;
    for (int k = 0; k < 3; ++k) {
        out[static_cast<std::size_t>(k)] = static_cast<std::uint8_t>(
            std::lround(alpha * c[static_cast<std::size_t>(k)] + (1.0 - alpha) * old[static_cast<std::size_t>(k)]));
    }
    set(x, y, out);
}

void Image::fill_rect(int x0, int y0, int w, int h, Rgb c)
{
    for (int y = y0; y < y0 + h; ++y) {
        for (int x = x0; x < x0 + w; ++x) set(x, y, c);
    }
}

void Image::paste(const Image& src, int x0, int y0)
{
    for (int y = 0; y < src.height; ++y) {
        for (int x = 0; x < src.width; ++x) set(x0 + x, y0 + y, src.at(x, y));
    }
}

std::vector<std::uint8_t> encode_png(const Image& image)
{
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    std::vector<std::uint8_t> out;
    if (!info || setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, info ? &info : nullptr);
        throw std::runtime_error("PNG encoding failed");
    }
    png_set_write_fn(png, &out, png_append, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_set_compression_level(png, 9);
    png_write_info(png, info);
    for (int y = 0; y < image.height; ++y) {
        auto* row = const_cast<png_bytep>(image.pixels.data() + static_cast<std::size_t>(y) * image.width * 3);
        png_write_row(png, row);
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

void write_png(const Image& image, const std::filesystem::path& path)
{
    const auto bytes = encode_png(image);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_ppm(const Image& image, const std::filesystem::path& path)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path.string());
    f << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    f.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

bool has_glyph(char c) { return find_glyph(c) != nullptr; }

int text_width(const std::string& text, int scale)
{
    if (text.empty()) return 0;
    return static_cast<int>(text.size()) * (kGlyphWidth + 1) * scale - scale;
}

void draw_text(Image& image, const std::string& text, int x, int y, int scale, Rgb color)
{
    int pen = x;
    for (char c : text) {
        const Glyph* g = find_glyph(c);
        if (!g) throw InputError(std::string("no glyph for '") + c + "'");
        for (int r = 0; r < kGlyphHeight; ++r) {
            for (int col = 0; col < kGlyphWidth; ++col) {
                if (g->rows[static_cast<std::size_t>(r)] & (0x10 >> col)) {
                    image.fill_rect(pen + col * scale, y + r * scale, scale, scale, color);
                }
            }
        }
        pen += (kGlyphWidth + 1) * scale;
    }
}

Rgb palette_color(int index)
{
    const int n = static_cast<int>(std::size(kPalette));
    return kPalette[static_cast<std::size_t>(((index % n) + n) % n)];
}

RenderedView render_view(const Mesh& mesh, const std::vector<Keypoint>& keypoints, const CameraPose& pose,
                         double scale, const RenderOptions& options)
{
    if (!(scale > 0.0)) throw InputError("render scale must be positive");
    check_indices(mesh);
    const int size = options.view_size;
    RenderedView view{Image(size, size, kWhite), pose, {}};
    const Camera cam = make_camera(pose, size, scale);

    const Eigen::Index nf = mesh.faces.rows();
    std::vector<double> depth(static_cast<std::size_t>(nf));
    for (Eigen::Index f = 0; f < nf; ++f) {
        Vec3 centroid = Vec3::Zero();
        for (int k = 0; k < 3; ++k) centroid += mesh.vertices.row(mesh.faces(f, k)).transpose();
        depth[static_cast<std::size_t>(f)] = cam.depth(centroid / 3.0);
    }
    std::vector<int> order(static_cast<std::size_t>(nf));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return depth[static_cast<std::size_t>(a)] < depth[static_cast<std::size_t>(b)];
    });
    for (int f : order) {
        const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
        const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
        const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
        const Vec3 n = (b - a).cross(c - a);
        const double lambert = n.norm() > 0.0 ? std::abs(n.normalized().dot(cam.toward)) : 0.0;
        const double shade = 0.35 + 0.65 * lambert;
        const Rgb color{static_cast<std::uint8_t>(std::lround(kMeshColor[0] * shade)),
                        static_cast<std::uint8_t>(std::lround(kMeshColor[1] * shade)),
                        static_cast<std::uint8_t>(std::lround(kMeshColor[2] * shade))};
        fill_triangle(view.image, cam.project(a), cam.project(b), cam.project(c), color, options.opacity);
    }

    const Eigen::Vector2d origin = cam.project(Vec3::Zero());
    const double arm = 0.4 * scale;
    draw_line(view.image, origin, cam.project(Vec3(arm, 0, 0)), 2.0, {220, 30, 30});
    draw_line(view.image, origin, cam.project(Vec3(0, arm, 0)), 2.0, {30, 170, 30});
    draw_line(view.image, origin, cam.project(Vec3(0, 0, arm)), 2.0, {30, 30, 220});

    const int r = options.marker_radius;
    const int ls = options.label_scale;
    for (const auto& kp : keypoints) {
        const Eigen::Vector2d p = cam.project(kp.coordinates);
        Marker m{kp.index, p.x(), p.y(), 0, 0};
        fill_disc(view.image, p.x(), p.y(), r + 1.0, kBlack);
        fill_disc(view.image, p.x(), p.y(), r, palette_color(kp.index));

        const std::string label = std::to_string(kp.index);
        const int w = text_width(label, ls) + 2;
        const int h = kGlyphHeight * ls + 2;
        int lx = static_cast<int>(std::lround(p.x())) + r + 2;
        int ly = static_cast<int>(std::lround(p.y())) - r - h;
        lx = std::clamp(lx, 0, size - w);
        ly = std::clamp(ly, 0, size - h);
        view.image.fill_rect(lx, ly, w, h, kWhite);
        draw_text(view.image, label, lx + 1, ly + 1, ls, kBlack);
        m.label_x = lx + 1;
        m.label_y = ly + 1;
        view.markers.push_back(m);
    }
    return view;
}

PanelImage render_panel(const Mesh& mesh, const KeypointSet& keypoints, const std::array<CameraPose, 4>& poses,
                        const RenderOptions& options)
{
    double radius = 0.0;
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) radius = std::max(radius, mesh.vertices.row(i).norm());
    for (const auto& kp : keypoints.entries) radius = std::max(radius, kp.coordinates.norm());
    if (!(radius > 0.0)) throw InputError("cannot frame a mesh collapsed to the origin");
    const double scale = 1.15 * radius;

    const int s = options.view_size;
    PanelImage panel;
    panel.image = Image(2 * s, 2 * s, kWhite);
    panel.view_size = s;
    panel.label_scale = options.label_scale;
    const char* names = "ABCD";
    for (int q = 0; q < 4; ++q) {
        panel.views[static_cast<std::size_t>(q)] = render_view(mesh, keypoints.entries, poses[static_cast<std::size_t>(q)], scale, options);
        const int ox = (q % 2) * s, oy = (q / 2) * s;
        panel.offsets[static_cast<std::size_t>(q)] = {ox, oy};
        panel.image.paste(panel.views[static_cast<std::size_t>(q)].image, ox, oy);
        draw_text(panel.image, std::string(1, names[q]), ox + 8, oy + 8, 4, kBlack);
    }
    panel.image.fill_rect(s - 1, 0, 2, 2 * s, {128, 128, 128});
    panel.image.fill_rect(0, s - 1, 2 * s, 2, {128, 128, 128});
    return panel;
}

} // namespace meshprobe
