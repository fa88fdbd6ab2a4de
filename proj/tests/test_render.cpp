#include <gtest/gtest.h>

#include <png.h>

#include "fixtures.hpp"
#include "meshprobe/error.hpp"
#include "meshprobe/primitives.hpp"
#include "meshprobe/render.hpp"

using namespace meshprobe;

namespace {

std::uint64_t fnv1a(const std::vector<std::uint8_t>& bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) h = (h ^ b) * 0x100000001b3ULL;
    return h;
}

KeypointSet cube_corners(const Mesh& cube)
{
    KeypointSet k;
    for (int i = 0; i < cube.num_vertices(); ++i) {
        Keypoint p;
        p.index = i;
        p.coordinates = cube.vertices.row(i).transpose();
        k.entries.push_back(p);
    }
    return k;
}

/// Binary mask of a label as the renderer draws it: black glyphs inside a
/// one-pixel white frame.
Image label_template(const std::string& text, int scale)
{
    Image t(text_width(text, scale) + 2, kGlyphHeight * scale + 2);
    draw_text(t, text, 1, 1, scale, {0, 0, 0});
    return t;
}

bool matches_at(const Image& img, const Image& t, int x0, int y0)
{
    for (int y = 0; y < t.height; ++y) {
        for (int x = 0; x < t.width; ++x) {
            if (img.at(x0 + x, y0 + y) != t.at(x, y)) return false;
        }
    }
    return true;
}

bool contains(const Image& img, const Image& t)
{
    for (int y = 0; y + t.height <= img.height; ++y) {
        for (int x = 0; x + t.width <= img.width; ++x) {
            if (matches_at(img, t, x, y)) return true;
        }
    }
    return false;
}

} // namespace

TEST(Poses, Endpoints)
{
    const auto p = camera_poses(10);
    ASSERT_EQ(p.size(), 10u);
    EXPECT_NEAR(p[0].azimuth, 0.0, 1e-12);
    EXPECT_NEAR(p[0].elevation, 81.0, 1e-12);
    EXPECT_NEAR(p[9].azimuth, 162.0, 1e-12);
    EXPECT_NEAR(p[9].elevation, -81.0, 1e-12);
    const auto one = camera_poses(1);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one[0].azimuth, 0.0);
    EXPECT_EQ(one[0].elevation, 0.0);
}

TEST(Poses, ClosedForm)
{
    for (int n = 1; n <= 100; ++n) {
        const auto p = camera_poses(n);
        ASSERT_EQ(static_cast<int>(p.size()), n);
        for (int i = 0; i < n; ++i) {
            EXPECT_EQ(p[static_cast<std::size_t>(i)].azimuth, 180.0 * i / n);
            EXPECT_EQ(p[static_cast<std::size_t>(i)].elevation, 180.0 * (0.5 - (i + 0.5) / n));
        }
    }
    EXPECT_THROW(camera_poses(0), InputError);
}

TEST(Poses, PanelSubset)
{
    const auto all = camera_poses(10);
    const auto panel = panel_poses();
    const int picks[] = {0, 3, 6, 9};
    for (int q = 0; q < 4; ++q) {
        EXPECT_EQ(panel[static_cast<std::size_t>(q)].azimuth, all[static_cast<std::size_t>(picks[q])].azimuth);
        EXPECT_EQ(panel[static_cast<std::size_t>(q)].elevation, all[static_cast<std::size_t>(picks[q])].elevation);
    }
}

TEST(Glyphs, Coverage)
{
    for (char c : std::string("0123456789ABCD")) EXPECT_TRUE(has_glyph(c)) << c;
    EXPECT_FALSE(has_glyph('x'));
    EXPECT_EQ(text_width("12", 2), 2 * (2 * kGlyphWidth) + 2);
}

TEST(Panel, CubeCornerLabelsPresent)
{
    const Mesh cube = make_cube();
    const PanelImage panel = render_panel(cube, cube_corners(cube), panel_poses());
    EXPECT_EQ(panel.image.width, 800);
    EXPECT_EQ(panel.image.height, 800);
    for (int i = 0; i < 8; ++i) {
        EXPECT_TRUE(contains(panel.image, label_template(std::to_string(i), panel.label_scale))) << "label " << i;
    }
    // and no label for an index that was never drawn
    EXPECT_FALSE(contains(panel.image, label_template("9", panel.label_scale)));
}

TEST(Panel, QuadrantLetters)
{
    const Mesh cube = make_cube();
    const PanelImage panel = render_panel(cube, cube_corners(cube), panel_poses());
    const char* names = "ABCD";
    for (int q = 0; q < 4; ++q) {
        const Image t = label_template(std::string(1, names[q]), 4);
        const auto [ox, oy] = panel.offsets[static_cast<std::size_t>(q)];
        EXPECT_TRUE(matches_at(panel.image, t, ox + 7, oy + 7)) << names[q];
    }
}

TEST(Panel, Deterministic)
{
    const Mesh m = normalize(make_icosphere(2)).first;
    const KeypointSet k = sample_keypoints(m, 25, 0);
    const PanelImage a = render_panel(m, k, panel_poses());
    const PanelImage b = render_panel(m, k, panel_poses());
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    EXPECT_EQ(encode_png(a.image), encode_png(b.image));
}

TEST(Panel, GoldenCube)
{
    const Mesh cube = make_cube();
    const PanelImage panel = render_panel(cube, cube_corners(cube), panel_poses());
    EXPECT_EQ(fnv1a(panel.image.pixels), 2311515188192458624ULL);
}

TEST(View, OccludedKeypointStillDrawn)
{
    const Mesh sphere = make_icosphere(2, 0.5);
    const RenderOptions opts;
    for (const CameraPose& pose : panel_poses()) {
        const RenderedView bare = render_view(sphere, {}, pose, 0.6, opts);
        for (int axis = 0; axis < 3; ++axis) {
            for (double sign : {1.0, -1.0}) {
                Keypoint kp;
                kp.index = 4;
                kp.coordinates = Vec3::Zero();
                kp.coordinates[axis] = 0.5 * sign;
                const RenderedView v = render_view(sphere, {kp}, pose, 0.6, opts);
                ASSERT_EQ(v.markers.size(), 1u);
                const int x = static_cast<int>(std::lround(v.markers[0].x));
                const int y = static_cast<int>(std::lround(v.markers[0].y));
                EXPECT_EQ(v.image.at(x, y), palette_color(4));
                EXPECT_NE(bare.image.at(x, y), palette_color(4));
                EXPECT_TRUE(matches_at(v.image, label_template("4", opts.label_scale), v.markers[0].label_x - 1,
                                       v.markers[0].label_y - 1));
            }
        }
    }
}

TEST(View, MeshShadedOverWhite)
{
    const RenderedView v = render_view(make_icosphere(2, 0.5), {}, CameraPose{30, 20}, 0.6);
    EXPECT_EQ(v.image.at(2, 2), (Rgb{255, 255, 255}));
    const Rgb center = v.image.at(200, 200);
    EXPECT_NE(center, (Rgb{255, 255, 255}));
    EXPECT_THROW(render_view(make_cube(), {}, CameraPose{}, 0.0), InputError);
}

TEST(Png, RoundTripThroughLibpng)
{
    Image img(3, 2);
    img.set(0, 0, {255, 0, 0});
    img.set(2, 1, {0, 0, 255});
    const fixtures::TempDir dir("png");
    const auto path = dir.path / "x.png";
    write_png(img, path);

    const std::string bytes = fixtures::read_file(path);
    ASSERT_GE(bytes.size(), 8u);
    EXPECT_EQ(bytes.substr(0, 8), std::string("\x89PNG\r\n\x1a\n", 8));

    png_image decoded{};
    decoded.version = PNG_IMAGE_VERSION;
    ASSERT_TRUE(png_image_begin_read_from_file(&decoded, path.c_str()));
    decoded.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(decoded));
    ASSERT_TRUE(png_image_finish_read(&decoded, nullptr, buf.data(), 0, nullptr));
    EXPECT_EQ(decoded.width, 3u);
    EXPECT_EQ(decoded.height, 2u);
    EXPECT_EQ(buf, img.pixels);
}

TEST(Ppm, Header)
{
    const fixtures::TempDir dir("ppm");
    write_ppm(Image(4, 3), dir.path / "x.ppm");
    const std::string bytes = fixtures::read_file(dir.path / "x.ppm");
    EXPECT_EQ(bytes.rfind("P6\n4 3\n255\n", 0), 0u);
    EXPECT_EQ(bytes.size(), std::string("P6\n4 3\n255\n").size() + 36);
}
