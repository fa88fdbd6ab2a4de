#include "meshprobe/evaluators.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <Eigen/Geometry>

#include "meshprobe/error.hpp"
#include "meshprobe/keypoints.hpp"
#include "meshprobe/random.hpp"

extern char** environ;

namespace meshprobe {

namespace {

void require_nonempty(const Mesh& mesh)
{
    if (mesh.vertices.rows() == 0 || mesh.faces.rows() == 0) throw InputError("empty mesh");
}

/// Columns spanning the plane normal to the axis.
std::pair<int, int> plane_columns(Axis axis)
{
    switch (axis) {
    case Axis::pos_x:
    case Axis::neg_x: return {1, 2};
    case Axis::pos_y:
    case Axis::neg_y: return {2, 0};
    default: return {0, 1};
    }
}

/// Farthest intersection of the ray o + t d (t > 0) with the mesh.
struct RayHit {
    double t = -1.0;
    int face = -1;
};

RayHit farthest_hit(const Mesh& mesh, const Vec3& o, const Vec3& d)
{
    RayHit best;
    for (Eigen::Index f = 0; f < mesh.faces.rows(); ++f) {
        const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
        const Vec3 e1 = Vec3(mesh.vertices.row(mesh.faces(f, 1))) - a;
        const Vec3 e2 = Vec3(mesh.vertices.row(mesh.faces(f, 2))) - a;
        const Vec3 p = d.cross(e2);
        const double det = e1.dot(p);
        if (std::abs(det) < 1e-300) continue;
        const double inv = 1.0 / det;
        const Vec3 s = o - a;
        const double u = s.dot(p) * inv;
        if (u < 0.0 || u > 1.0) continue;
        const Vec3 q = s.cross(e1);
        const double v = d.dot(q) * inv;
        if (v < 0.0 || u + v > 1.0) continue;
        const double t = e2.dot(q) * inv;
        if (t > 0.0 && t > best.t) best = {t, static_cast<int>(f)};
    }
    return best;
}

Vec3 face_normal(const Mesh& mesh, int f)
{
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    return (b - a).cross(c - a).normalized();
}

std::string replace_all(std::string text, const std::string& from, const std::string& to)
{
    for (std::size_t pos = text.find(from); pos != std::string::npos; pos = text.find(from, pos + to.size())) {
        text.replace(pos, from.size(), to);
    }
    return text;
}

void check_keys(const nlohmann::json& spec, std::initializer_list<const char*> allowed)
{
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, value] : spec.items()) {
        if (key != "type" && !ok.count(key)) {
            throw InputError("unknown evaluator option '" + key + "' for " + spec["type"].get<std::string>());
        }
    }
}

template <typename T>
T get_or(const nlohmann::json& spec, const char* key, T fallback)
{
    if (!spec.contains(key)) return fallback;
    try {
        return spec[key].get<T>();
    } catch (const nlohmann::json::exception&) {
        throw InputError(std::string("evaluator option '") + key + "' has the wrong type");
    }
}

} // namespace

double DisplacementNormEvaluator::evaluate(const Mesh&, const EvalContext& ctx) const
{
    if (!ctx.params) return 1.0;
    if (row_ < 0 || row_ >= ctx.params->handle_count()) throw EvaluationFailure("handle row out of range");
    return 1.0 - std::min(1.0, ctx.params->displacements.row(row_).norm() / scale_);
}

Axis parse_axis(const std::string& text)
{
    static const std::pair<const char*, Axis> names[] = {
        {"+x", Axis::pos_x}, {"-x", Axis::neg_x}, {"+y", Axis::pos_y},
        {"-y", Axis::neg_y}, {"+z", Axis::pos_z}, {"-z", Axis::neg_z},
    };
    for (const auto& [name, axis] : names) {
        if (text == name || (text.size() == 1 && text == name + 1 && name[0] == '+')) return axis;
    }
    throw InputError("insertion axis must be one of +x,-x,+y,-y,+z,-z (got '" + text + "')");
}

std::string to_string(Axis axis)
{
    switch (axis) {
    case Axis::pos_x: return "+x";
    case Axis::neg_x: return "-x";
    case Axis::pos_y: return "+y";
    case Axis::neg_y: return "-y";
    case Axis::pos_z: return "+z";
    case Axis::neg_z: return "-z";
    }
    return "?";
}

void PegClearanceConfig::check() const
{
    if (!(aperture_width > 0.0) || !(aperture_depth > 0.0)) throw InputError("aperture must be positive");
    if (trials < 1) throw InputError("trials must be at least 1");
    if (!(clearance >= 0.0)) throw InputError("clearance must be non-negative");
    if (!(yaw_range_deg >= 0.0) || !(xy_range >= 0.0)) throw InputError("pose ranges must be non-negative");
}

PegClearanceEvaluator::PegClearanceEvaluator(PegClearanceConfig config) : config_(config)
{
    config_.check();
}

double PegClearanceEvaluator::evaluate(const Mesh& mesh, const EvalContext& ctx) const
{
    require_nonempty(mesh);
    const auto [cu, cv] = plane_columns(config_.insertion_axis);
    const Eigen::VectorXd u = mesh.vertices.col(cu);
    const Eigen::VectorXd v = mesh.vertices.col(cv);
    const double yaw_range = config_.yaw_range_deg * std::numbers::pi / 180.0;

    Rng rng(derive_seed({ctx.seed, 0x70656cULL}));
    const int n = config_.trials;
    // Latin hypercube over (yaw, dx, dy): each coordinate visits every stratum once
    auto shuffled_strata = [&] {
        std::vector<int> p(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
        for (int i = n - 1; i > 0; --i) {
            std::swap(p[static_cast<std::size_t>(i)], p[rng.below(static_cast<std::uint64_t>(i) + 1)]);
        }
        return p;
    };
    const std::vector<int> sx = shuffled_strata();
    const std::vector<int> sy = shuffled_strata();
    auto stratum_point = [&](int s) { return 2.0 * (s + rng.uniform()) / n - 1.0; };

    int successes = 0;
    for (int k = 0; k < n; ++k) {
        const double yaw = yaw_range * stratum_point(k);
        const double dx = config_.xy_range * stratum_point(sx[static_cast<std::size_t>(k)]);
        const double dy = config_.xy_range * stratum_point(sy[static_cast<std::size_t>(k)]);
        const double c = std::cos(yaw), s = std::sin(yaw);
        const Eigen::VectorXd ru = c * u - s * v;
        const Eigen::VectorXd rv = s * u + c * v;
        const double ext_u = ru.maxCoeff() - ru.minCoeff();
        const double ext_v = rv.maxCoeff() - rv.minCoeff();
        const bool fits = ext_u + 2.0 * config_.clearance + 2.0 * std::abs(dx) <= config_.aperture_width
                          && ext_v + 2.0 * config_.clearance + 2.0 * std::abs(dy) <= config_.aperture_depth;
        successes += fits ? 1 : 0;
    }
    return static_cast<double>(successes) / n;
}

nlohmann::json PegClearanceEvaluator::describe() const
{
    return {{"type", name()},
            {"aperture", {config_.aperture_width, config_.aperture_depth}},
            {"insertion_axis", to_string(config_.insertion_axis)},
            {"clearance", config_.clearance},
            {"trials", config_.trials},
            {"yaw_range", config_.yaw_range_deg},
            {"xy_range", config_.xy_range}};
}

void GraspSpanConfig::check() const
{
    if (!(max_opening > 0.0)) throw InputError("max_opening must be positive");
    if (approach_count < 1) throw InputError("approach_count must be at least 1");
    if (!(normal_opposition_tol >= 0.0)) throw InputError("normal_opposition_tol must be non-negative");
    if (!(contact_band >= 0.0)) throw InputError("contact_band must be non-negative");
    if (surface_samples < 1) throw InputError("surface_samples must be at least 1");
}

GraspSpanEvaluator::GraspSpanEvaluator(GraspSpanConfig config) : config_(config)
{
    config_.check();
}

double GraspSpanEvaluator::evaluate(const Mesh& mesh, const EvalContext& ctx) const
{
    require_nonempty(mesh);
    const SurfaceSample surface = sample_surface(mesh, config_.surface_samples, derive_seed({ctx.seed, 1}));
    const Vec3 centroid = surface.points.colwise().mean();
    const double band = config_.contact_band * bbox_extent(mesh.vertices).maxCoeff();
    const double cos_tol = std::cos(config_.normal_opposition_tol);
    const Eigen::MatrixX3d rel = surface.points.rowwise() - centroid.transpose();

    Rng rng(derive_seed({ctx.seed, 2}));
    const double phase = rng.uniform();
    const int n = config_.approach_count;
    int successes = 0;
    for (int k = 0; k < n; ++k) {
        // stratified in z (area-uniform on the sphere), golden-ratio azimuths
        const double z = 1.0 - 2.0 * (k + rng.uniform()) / n;
        const double turns = std::fmod(phase + k * std::numbers::phi, 1.0);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 dir(r * std::cos(2.0 * std::numbers::pi * turns), r * std::sin(2.0 * std::numbers::pi * turns), z);

        const RayHit front = farthest_hit(mesh, centroid, dir);
        const RayHit back = farthest_hit(mesh, centroid, -dir);
        if (front.face < 0 || back.face < 0) continue;

        double hi = front.t;
        double lo = -back.t;
        const Eigen::VectorXd along = rel * dir;
        for (Eigen::Index i = 0; i < rel.rows(); ++i) {
            const double perp2 = rel.row(i).squaredNorm() - along[i] * along[i];
            if (perp2 > band * band) continue;
            hi = std::max(hi, along[i]);
            lo = std::min(lo, along[i]);
        }
        const bool narrow = hi - lo <= config_.max_opening;
        const bool opposed = face_normal(mesh, front.face).dot(dir) >= cos_tol
                             && face_normal(mesh, back.face).dot(-dir) >= cos_tol;
        successes += narrow && opposed ? 1 : 0;
    }
    return static_cast<double>(successes) / n;
}

nlohmann::json GraspSpanEvaluator::describe() const
{
    return {{"type", name()},
            {"max_opening", config_.max_opening},
            {"approach_count", config_.approach_count},
            {"normal_opposition_tol", config_.normal_opposition_tol},
            {"contact_band", config_.contact_band},
            {"surface_samples", config_.surface_samples}};
}

double parse_score_output(const std::string& output)
{
    std::string last;
    std::istringstream lines(output);
    for (std::string line; std::getline(lines, line);) {
        const auto b = line.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r\n");
        last = line.substr(b, e - b + 1);
    }
    if (last.empty()) throw EvaluationFailure("unparsable output", "no output");
    double score = 0.0;
    const char* first = last.data();
    const char* end = first + last.size();
    if (*first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, end, score);
    if (ec != std::errc() || ptr != end || !std::isfinite(score)) {
        throw EvaluationFailure("unparsable output", "'" + last + "'");
    }
    if (score < 0.0 || score > 1.0) throw EvaluationFailure("score out of range", last);
    return score;
}

CommandResult run_shell_command(const std::string& command, std::chrono::milliseconds timeout)
{
    int fds[2];
    if (pipe2(fds, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);

    std::string shell = "/bin/sh", flag = "-c", cmd = command;
    char* argv[] = {shell.data(), flag.data(), cmd.data(), nullptr};
    pid_t pid = -1;
    const int rc = posix_spawn(&pid, "/bin/sh", &actions, &attr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    close(fds[1]);
    if (rc != 0) {
        close(fds[0]);
        throw std::runtime_error("could not spawn /bin/sh");
    }

    CommandResult result;
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    auto remaining_ms = [&] {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        return static_cast<int>(std::max<long long>(0, left.count()));
    };

    bool open = true;
    char buf[4096];
    while (open) {
        pollfd p{fds[0], POLLIN, 0};
        const int ready = poll(&p, 1, remaining_ms());
        if (ready < 0 && errno == EINTR) continue;
        if (ready <= 0) {
            result.timed_out = true;
            break;
        }
        const ssize_t got = read(fds[0], buf, sizeof buf);
        if (got > 0) {
            result.output.append(buf, static_cast<std::size_t>(got));
        } else if (got == 0 || errno != EINTR) {
            open = false;
        }
    }
    close(fds[0]);

    int status = 0;
    while (!result.timed_out) {
        const pid_t w = waitpid(pid, &status, WNOHANG);
        if (w == pid) break;
        if (w < 0 && errno != EINTR) break;
        if (remaining_ms() == 0) {
            result.timed_out = true;
            break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
    if (result.timed_out) {
        kill(-pid, SIGKILL);
        while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
        }
        return result;
    }
    result.exit_status = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
    return result;
}

ExternalCommandEvaluator::ExternalCommandEvaluator(ExternalCommandConfig config) : config_(std::move(config))
{
    if (config_.command.find("{mesh}") == std::string::npos) {
        throw InputError("external command must contain a {mesh} placeholder");
    }
    if (config_.timeout.count() <= 0) throw InputError("external command timeout must be positive");
    if (config_.trials < 1) throw InputError("trials must be at least 1");
}

double ExternalCommandEvaluator::evaluate(const Mesh& mesh, const EvalContext& ctx) const
{
    require_nonempty(mesh);
    static std::atomic<unsigned long> counter{0};
    const auto path = std::filesystem::temp_directory_path()
                      / ("meshprobe-" + std::to_string(getpid()) + "-" + std::to_string(counter++) + ".obj");
    save_obj(mesh, path);
    struct Cleanup {
        std::filesystem::path p;
        ~Cleanup()
        {
            std::error_code ec;
            std::filesystem::remove(p, ec);
        }
    } cleanup{path};

    std::string cmd = replace_all(config_.command, "{mesh}", path.string());
    cmd = replace_all(cmd, "{seed}", std::to_string(ctx.seed));
    const CommandResult r = run_shell_command(cmd, config_.timeout);
    if (r.timed_out) throw EvaluationFailure("timeout", std::to_string(config_.timeout.count()) + " ms");
    if (r.exit_status != 0) throw EvaluationFailure("nonzero exit", "status " + std::to_string(r.exit_status));
    return parse_score_output(r.output);
}

nlohmann::json ExternalCommandEvaluator::describe() const
{
    return {{"type", name()},
            {"command", config_.command},
            {"timeout_s", static_cast<double>(config_.timeout.count()) / 1000.0},
            {"concurrency_safe", config_.concurrency_safe},
            {"trials", config_.trials}};
}

std::unique_ptr<Evaluator> make_evaluator(const nlohmann::json& spec)
{
    if (!spec.is_object() || !spec.contains("type") || !spec["type"].is_string()) {
        throw InputError("evaluator config needs a string 'type'");
    }
    const std::string type = spec["type"].get<std::string>();
    if (type == "constant") {
        check_keys(spec, {"value"});
        const double value = get_or(spec, "value", 1.0);
        if (!(value >= 0.0 && value <= 1.0)) throw InputError("constant evaluator value must be in [0, 1]");
        return std::make_unique<ConstantEvaluator>(value);
    }
    if (type == "displacement_norm") {
        check_keys(spec, {"row", "scale"});
        const double scale = get_or(spec, "scale", 0.05);
        if (!(scale > 0.0)) throw InputError("displacement_norm scale must be positive");
        return std::make_unique<DisplacementNormEvaluator>(get_or(spec, "row", 0), scale);
    }
    if (type == "peg_clearance") {
        check_keys(spec, {"aperture", "aperture_width", "aperture_depth", "insertion_axis", "clearance", "trials",
                          "yaw_range", "xy_range"});
        PegClearanceConfig c;
        if (spec.contains("aperture")) {
            const auto& a = spec["aperture"];
            if (!a.is_array() || a.size() != 2) throw InputError("aperture must be [width, depth]");
            c.aperture_width = a[0].get<double>();
            c.aperture_depth = a[1].get<double>();
        }
        c.aperture_width = get_or(spec, "aperture_width", c.aperture_width);
        c.aperture_depth = get_or(spec, "aperture_depth", c.aperture_depth);
        c.insertion_axis = parse_axis(get_or<std::string>(spec, "insertion_axis", to_string(c.insertion_axis)));
        c.clearance = get_or(spec, "clearance", c.clearance);
        c.trials = get_or(spec, "trials", c.trials);
        c.yaw_range_deg = get_or(spec, "yaw_range", c.yaw_range_deg);
        c.xy_range = get_or(spec, "xy_range", c.xy_range);
        return std::make_unique<PegClearanceEvaluator>(c);
    }
    if (type == "grasp_span") {
        check_keys(spec, {"max_opening", "approach_count", "normal_opposition_tol", "contact_band", "surface_samples"});
        GraspSpanConfig c;
        c.max_opening = get_or(spec, "max_opening", c.max_opening);
        c.approach_count = get_or(spec, "approach_count", c.approach_count);
        c.normal_opposition_tol = get_or(spec, "normal_opposition_tol", c.normal_opposition_tol);
        c.contact_band = get_or(spec, "contact_band", c.contact_band);
        c.surface_samples = get_or(spec, "surface_samples", c.surface_samples);
        return std::make_unique<GraspSpanEvaluator>(c);
    }
    if (type == "external_command") {
        check_keys(spec, {"command", "timeout_s", "concurrency_safe", "trials"});
        ExternalCommandConfig c;
        c.command = get_or<std::string>(spec, "command", "");
        const double timeout_s = get_or(spec, "timeout_s", 600.0);
        if (!(timeout_s > 0.0)) throw InputError("timeout_s must be positive");
        c.timeout = std::chrono::milliseconds(static_cast<long long>(std::llround(timeout_s * 1000.0)));
        c.concurrency_safe = get_or(spec, "concurrency_safe", false);
        c.trials = get_or(spec, "trials", 1);
        return std::make_unique<ExternalCommandEvaluator>(c);
    }
    throw InputError("unknown evaluator type '" + type + "'");
}

} // namespace meshprobe
