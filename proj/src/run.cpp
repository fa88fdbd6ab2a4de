#include "meshprobe/run.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "meshprobe/error.hpp"
#include "meshprobe/keypoints.hpp"
#include "meshprobe/render.hpp"
#include "meshprobe/vlm_client.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace meshprobe {

namespace {

fs::path resolve(const fs::path& base, const fs::path& p)
{
    return p.is_absolute() ? p : base / p;
}

std::vector<int> index_list(const json& j, const std::string& what)
{
    if (!j.is_array()) throw InputError(what + " must be a list of vertex indices");
    std::vector<int> out;
    for (const auto& v : j) {
        if (!v.is_number_integer()) throw InputError(what + " contains a non-integer entry " + v.dump());
        out.push_back(v.get<int>());
    }
    return out;
}

Vec3 vec3_from(const json& j, const std::string& what)
{
    if (!j.is_array() || j.size() != 3) throw InputError(what + " must be [x, y, z]");
    Vec3 v;
    for (int i = 0; i < 3; ++i) {
        if (!j[static_cast<std::size_t>(i)].is_number()) throw InputError(what + " must be numeric");
        v[i] = j[static_cast<std::size_t>(i)].get<double>();
    }
    return v;
}

std::vector<int> vertices_in_regions(const Mesh& mesh, const json& regions, const std::string& key)
{
    if (!regions.is_array() || regions.empty()) throw InputError(key + ".regions must be a non-empty list");
    std::vector<std::pair<Vec3, Vec3>> boxes;
    for (const auto& r : regions) {
        if (!r.is_object() || !r.contains("min") || !r.contains("max")) {
            throw InputError(key + ".regions entries need \"min\" and \"max\"");
        }
        boxes.emplace_back(vec3_from(r["min"], key + ".regions.min"), vec3_from(r["max"], key + ".regions.max"));
    }
    std::vector<int> out;
    for (Eigen::Index i = 0; i < mesh.vertices.rows(); ++i) {
        const Vec3 p = mesh.vertices.row(i).transpose();
        for (const auto& [lo, hi] : boxes) {
            if ((p.array() >= lo.array()).all() && (p.array() <= hi.array()).all()) {
                out.push_back(static_cast<int>(i));
                break;
            }
        }
    }
    if (out.empty()) throw InputError(key + ".regions select no vertices");
    return out;
}

json parse_json_text(const std::string& text, const std::string& source)
{
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw InputError(source + ": invalid JSON: " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot write " + path.string());
    f << text;
}

int iterations_reached(const RunLog& log)
{
    int t = static_cast<int>(log.iterations.size());
    for (const auto& r : log.records) t = std::max(t, r.id.iteration);
    return t;
}

json summary_json(const RunConfig& config, const std::vector<int>& handles, const RunLog& log,
                  const CandidateRecord* best)
{
    json iterations = json::array();
    for (const auto& it : log.iterations) iterations.push_back(to_json(it));
    return {{"mesh", config.mesh_path.string()},
            {"seed", config.optimizer.seed},
            {"nominal_score", log.nominal_score},
            {"iterations", iterations_reached(log)},
            {"evaluations", log.records.size()},
            {"best", best ? to_json(*best) : json(nullptr)},
            {"best_score", best ? json(best->score) : json(nullptr)},
            {"handles", handles},
            {"anchors", config.anchors},
            {"deform", to_json(config.deform)},
            {"evaluator", config.evaluator},
            {"history", iterations},
            {"metrics",
             {{"bins", config.metrics.bins}, {"chamfer_samples", config.metrics.chamfer_samples}}},
            {"aborted", log.abort_reason ? json(*log.abort_reason) : json(nullptr)}};
}

const CandidateRecord* best_record(const std::vector<CandidateRecord>& records)
{
    const CandidateRecord* best = nullptr;
    for (const auto& r : records) {
        if (!r.failed() && (!best || r.score < best->score)) best = &r;
    }
    return best;
}

std::vector<const CandidateRecord*> lowest_scores(const std::vector<CandidateRecord>& records, int count)
{
    std::vector<const CandidateRecord*> ranked;
    for (const auto& r : records) {
        if (!r.failed()) ranked.push_back(&r);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) { return a->score < b->score; });
    if (static_cast<int>(ranked.size()) > count) ranked.resize(static_cast<std::size_t>(count));
    return ranked;
}

struct VlmStage {
    std::vector<int> handles;
    std::optional<std::string> error;
};

VlmStage run_vlm_stage(const RunConfig& config, const fs::path& dir)
{
    const fs::path vdir = dir / "vlm";
    fs::create_directories(vdir);
    const auto [normalized, transform] = normalize(config.mesh);
    KeypointParams kp;
    kp.separation = config.vlm.separation;
    const KeypointSet keypoints = sample_keypoints(normalized, config.vlm.keypoints, derive_seed({config.optimizer.seed, 3}), kp);
    write_json(vdir / "keypoints.json", to_json(keypoints));
    const PanelImage panel = render_panel(normalized, keypoints, panel_poses());
    const std::vector<std::uint8_t> png = encode_png(panel.image);
    {
        std::ofstream f(vdir / "panel.png", std::ios::binary);
        f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
    }
    write_text(vdir / "prompt_geometric.txt", build_geometric_prompt(keypoints, config.vlm.task_hint));
    write_text(vdir / "prompt_ranking.txt", build_ranking_prompt());

    VlmStage out;
    try {
        VlmClient client(endpoint_from_env(config.vlm.endpoint_env), vdir / "transcripts");
        const HandleSelection sel = select_handles(client, normalized, keypoints, png, config.vlm.task_hint);
        const std::set<int> anchors(config.anchors.begin(), config.anchors.end());
        json snaps = json::array();
        for (std::size_t i = 0; i < sel.snaps.size(); ++i) {
            snaps.push_back({{"keypoint", sel.top.keypoint_indices[i]},
                             {"vertex", sel.snaps[i].vertex},
                             {"distance", sel.snaps[i].distance}});
        }
        json dropped = json::array();
        for (int v : sel.vertices) {
            if (anchors.count(v)) dropped.push_back(v);
            else out.handles.push_back(v);
        }
        write_json(vdir / "selection.json", {{"choices", choices_to_json(sel.proposals)},
                                             {"top_choice", to_json(sel.top)},
                                             {"snaps", snaps},
                                             {"dropped_anchor_overlap", dropped},
                                             {"handles", out.handles}});
        if (out.handles.empty()) throw ResponseError("every selected vertex is an anchor", "keypoint_indices");
    } catch (const EndpointError& e) {
        out.handles.clear();
        out.error = e.what();
    } catch (const ResponseError& e) {
        out.handles.clear();
        out.error = e.what();
    }
    if (out.error) write_json(vdir / "error.json", {{"error", *out.error}, {"fallback", !config.handles.empty()}});
    return out;
}

} // namespace

std::vector<int> select_vertices(const Mesh& mesh, const json& selector, const std::string& key, const fs::path& base_dir)
{
    if (selector.is_array()) return index_list(selector, key);
    if (!selector.is_object()) throw InputError(key + " must be a list, {\"file\": ...} or {\"regions\": [...]}");
    if (selector.contains("regions")) return vertices_in_regions(mesh, selector["regions"], key);
    if (selector.contains("file")) {
        if (!selector["file"].is_string()) throw InputError(key + ".file must be a path");
        const fs::path path = resolve(base_dir, selector["file"].get<std::string>());
        const json doc = read_json(path);
        if (doc.is_array()) return index_list(doc, path.string());
        if (doc.is_object() && doc.contains(key)) return index_list(doc[key], path.string() + ": " + key);
        throw InputError(path.string() + " has neither a list nor a \"" + key + "\" entry");
    }
    throw InputError(key + " must be a list, {\"file\": ...} or {\"regions\": [...]}");
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir, const RunOverrides& overrides)
{
    if (!j.is_object()) throw InputError("run config must be a JSON object");
    static const std::set<std::string> known = {"mesh", "handles", "anchors", "optimizer", "evaluator", "deform",
                                                "budget", "seed", "out", "metrics", "vlm", "description"};
    for (const auto& [key, value] : j.items()) {
        if (key == "evaluators") throw InputError("exactly one evaluator may be configured (use \"evaluator\")");
        if (!known.count(key)) throw InputError("unknown run config key '" + key + "'");
    }

    RunConfig c;
    if (!j.contains("mesh") || !j["mesh"].is_string()) throw InputError("run config needs \"mesh\" (a path)");
    c.mesh_path = fs::absolute(resolve(base_dir, j["mesh"].get<std::string>())).lexically_normal();
    if (!fs::exists(c.mesh_path)) throw InputError("mesh file not found: " + c.mesh_path.string());
    c.mesh = load_obj(c.mesh_path);

    if (j.contains("optimizer")) {
        if (j["optimizer"].is_object() && j["optimizer"].contains("seed")) {
            throw InputError("set the seed at the top level of the run config, not under \"optimizer\"");
        }
        c.optimizer = optimizer_config_from_json(j["optimizer"]);
    }
    if (overrides.seed) c.optimizer.seed = *overrides.seed;
    else if (j.contains("seed")) {
        if (!j["seed"].is_number_integer() || j["seed"].get<std::int64_t>() < 0) {
            throw InputError("seed must be a non-negative integer");
        }
        c.optimizer.seed = j["seed"].get<std::uint64_t>();
    } else {
        throw InputError("run config needs a \"seed\"");
    }
    if (j.contains("budget") && !j["budget"].is_null()) {
        if (!j["budget"].is_number()) throw InputError("budget must be a number");
        c.optimizer.budget = j["budget"].get<double>();
    }
    if (overrides.budget) c.optimizer.budget = *overrides.budget;
    if (overrides.workers) c.optimizer.workers = *overrides.workers;

    if (overrides.evaluator) c.evaluator = *overrides.evaluator;
    else if (j.contains("evaluator")) c.evaluator = j["evaluator"];
    else throw InputError("run config needs an \"evaluator\"");
    make_evaluator(c.evaluator); // validates

    if (j.contains("deform")) c.deform = solver_options_from_json(j["deform"]);
    c.deform.check();

    if (j.contains("metrics")) {
        const auto& m = j["metrics"];
        if (!m.is_object()) throw InputError("metrics must be an object");
        for (const auto& [key, value] : m.items()) {
            if (!value.is_number_integer()) throw InputError("metrics." + key + " must be an integer");
            if (key == "bins") c.metrics.bins = value.get<int>();
            else if (key == "chamfer_samples") c.metrics.chamfer_samples = value.get<int>();
            else if (key == "worst_count") c.metrics.worst_count = value.get<int>();
            else throw InputError("unknown metrics option '" + key + "'");
        }
        if (c.metrics.bins < 1 || c.metrics.chamfer_samples < 1 || c.metrics.worst_count < 0) {
            throw InputError("metrics options must be positive");
        }
    }

    if (j.contains("vlm")) {
        const auto& v = j["vlm"];
        if (!v.is_object()) throw InputError("vlm must be an object");
        try {
            for (const auto& [key, value] : v.items()) {
                if (key == "enabled") c.vlm.enabled = value.get<bool>();
                else if (key == "keypoints") c.vlm.keypoints = value.get<int>();
                else if (key == "separation") c.vlm.separation = value.get<double>();
                else if (key == "task_hint") c.vlm.task_hint = value.get<std::string>();
                else if (key == "endpoint_env") c.vlm.endpoint_env = value.get<std::string>();
                else throw InputError("unknown vlm option '" + key + "'");
            }
        } catch (const json::exception& e) {
            throw InputError(std::string("vlm config: ") + e.what());
        }
    }
    if (overrides.endpoint_env) c.vlm.endpoint_env = *overrides.endpoint_env;

    if (!j.contains("anchors")) throw InputError("run config needs \"anchors\"");
    c.anchors = select_vertices(c.mesh, j["anchors"], "anchors", base_dir);
    if (j.contains("handles")) c.handles = select_vertices(c.mesh, j["handles"], "handles", base_dir);
    if (c.handles.empty() && !c.vlm.enabled) throw InputError("run config needs \"handles\" (or vlm.enabled)");
    if (!c.handles.empty()) {
        check_handle_anchor_sets(static_cast<int>(c.mesh.vertices.rows()), c.handles, c.anchors);
        c.optimizer.check(static_cast<int>(c.handles.size()));
    }

    if (overrides.out) c.out = *overrides.out;
    else if (j.contains("out")) {
        if (!j["out"].is_string()) throw InputError("out must be a path");
        c.out = resolve(base_dir, j["out"].get<std::string>());
    }
    return c;
}

RunConfig load_run_config(const fs::path& path, const RunOverrides& overrides)
{
    return parse_run_config(read_json(path), path.parent_path(), overrides);
}

json to_json(const RunConfig& c)
{
    json j = {{"mesh", c.mesh_path.string()},
              {"seed", c.optimizer.seed},
              {"handles", c.handles},
              {"anchors", c.anchors},
              {"optimizer", to_json(c.optimizer)},
              {"evaluator", c.evaluator},
              {"deform", to_json(c.deform)},
              {"metrics",
               {{"bins", c.metrics.bins}, {"chamfer_samples", c.metrics.chamfer_samples}, {"worst_count", c.metrics.worst_count}}},
              {"vlm",
               {{"enabled", c.vlm.enabled},
                {"keypoints", c.vlm.keypoints},
                {"separation", c.vlm.separation},
                {"task_hint", c.vlm.task_hint},
                {"endpoint_env", c.vlm.endpoint_env}}}};
    j["optimizer"].erase("seed");
    return j;
}

RunOutcome execute_run(const RunConfig& config, const fs::path& directory)
{
    fs::create_directories(directory);
    RunOutcome outcome;
    outcome.directory = directory;
    outcome.handles = config.handles;

    if (config.vlm.enabled) {
        VlmStage stage = run_vlm_stage(config, directory);
        if (stage.error) {
            outcome.vlm_error = stage.error;
            if (config.handles.empty()) throw InputError("handle selection failed and no manual handles are configured: " + *stage.error);
        } else {
            outcome.vlm_used = true;
            outcome.handles = std::move(stage.handles);
        }
    }
    check_handle_anchor_sets(static_cast<int>(config.mesh.vertices.rows()), outcome.handles, config.anchors);
    config.optimizer.check(static_cast<int>(outcome.handles.size()));

    json snapshot = to_json(config);
    snapshot["handles"] = outcome.handles;
    write_json(directory / "config.json", snapshot);

    const DeformPipeline pipeline(config.mesh, outcome.handles, config.anchors, config.deform);
    const auto evaluator = make_evaluator(config.evaluator);

    std::ofstream log_file(directory / "log.jsonl", std::ios::binary | std::ios::trunc);
    RunHooks hooks;
    hooks.on_record = [&](const CandidateRecord& r) { log_file << to_json(r).dump() << '\n' << std::flush; };

    RunLog log;
    try {
        RunResult result = run(config.optimizer, pipeline, *evaluator, hooks);
        log = result.log;
        outcome.result = std::move(result);
    } catch (const RunAborted& e) {
        log = e.log();
        outcome.abort_reason = e.what();
        log_file << json{{"abort", e.what()}}.dump() << '\n';
    }
    log_file.close();

    const CandidateRecord* best = best_record(log.records);
    write_json(directory / "summary.json", summary_json(config, outcome.handles, log, best));

    if (best) save_obj(pipeline.deform(best->params).mesh, directory / "best.obj");
    const fs::path worst_dir = directory / "worst";
    fs::create_directories(worst_dir);
    json index = json::array();
    int rank = 0;
    for (const auto* r : lowest_scores(log.records, config.metrics.worst_count)) {
        char name[32];
        std::snprintf(name, sizeof name, "rank_%02d.obj", rank++);
        save_obj(pipeline.deform(r->params).mesh, worst_dir / name);
        index.push_back({{"file", name}, {"iter", r->id.iteration}, {"cand", r->id.candidate}, {"score", r->score}, {"ss", r->smoothness}});
    }
    write_json(worst_dir / "index.json", index);

    RunContext ctx;
    ctx.nominal = config.mesh;
    ctx.handles = outcome.handles;
    ctx.anchors = config.anchors;
    ctx.deform = config.deform;
    ctx.nominal_score = log.nominal_score;
    ctx.iterations = iterations_reached(log);
    ctx.seed = config.optimizer.seed;
    if (!log.records.empty() && ctx.iterations > 0) {
        outcome.metrics = compute_run_metrics(ctx, log.records, config.metrics);
        write_json(directory / "metrics.json", to_json(outcome.metrics));
    }
    return outcome;
}

std::vector<CandidateRecord> read_run_log(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot read log " + path.string());
    std::vector<CandidateRecord> records;
    std::string line;
    int number = 0;
    while (std::getline(f, line)) {
        ++number;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw InputError(path.string() + ":" + std::to_string(number) + ": malformed JSON");
        if (j.is_object() && j.contains("abort")) continue;
        try {
            records.push_back(candidate_record_from_json(j));
        } catch (const InputError& e) {
            throw InputError(path.string() + ":" + std::to_string(number) + ": " + e.what());
        }
    }
    if (records.empty()) throw InputError("log " + path.string() + " has no candidate records");
    return records;
}

std::vector<double> best_so_far(const std::vector<CandidateRecord>& records, int iterations)
{
    std::vector<double> out(static_cast<std::size_t>(iterations), kFailureScore);
    for (const auto& r : records) {
        if (r.id.iteration < 1 || r.id.iteration > iterations) {
            throw InputError("record iteration " + std::to_string(r.id.iteration) + " is outside 1.."
                             + std::to_string(iterations));
        }
        if (r.failed()) continue;
        auto& slot = out[static_cast<std::size_t>(r.id.iteration - 1)];
        slot = std::min(slot, r.score);
    }
    for (std::size_t t = 1; t < out.size(); ++t) out[t] = std::min(out[t], out[t - 1]);
    return out;
}

MetricsReport compute_run_metrics(const RunContext& context, const std::vector<CandidateRecord>& records,
                                  const MetricsOptions& options)
{
    std::vector<double> scores{context.nominal_score};
    for (double s : best_so_far(records, context.iterations)) scores.push_back(s);
    MetricsReport report = curve_metrics(context.nominal_score, scores);
    report.bins = options.bins;

    const CandidateRecord* best = best_record(records);
    if (!context.nominal || context.handles.empty() || !best) return report;
    const DeformPipeline pipeline(*context.nominal, context.handles, context.anchors, context.deform);
    RunLog log;
    log.records = records;
    report.delta_complexity = delta_complexity(log, pipeline, options.bins);
    report.chamfer_best = chamfer_distance(pipeline.deform(best->params).mesh, *context.nominal,
                                           options.chamfer_samples, context.seed);
    report.chamfer_samples = options.chamfer_samples;
    return report;
}

RunContext load_run_context(const fs::path& log_path, const std::optional<fs::path>& mesh_override)
{
    const fs::path summary_path = log_path.parent_path() / "summary.json";
    if (!fs::exists(summary_path)) throw InputError("no summary.json next to " + log_path.string());
    const json s = read_json(summary_path);
    RunContext ctx;
    try {
        ctx.nominal_score = s.at("nominal_score").get<double>();
        ctx.iterations = s.at("iterations").get<int>();
        if (s.contains("seed")) ctx.seed = s["seed"].get<std::uint64_t>();
        if (s.contains("handles")) ctx.handles = index_list(s["handles"], "summary handles");
        if (s.contains("anchors")) ctx.anchors = index_list(s["anchors"], "summary anchors");
        if (s.contains("deform")) ctx.deform = solver_options_from_json(s["deform"]);
        if (s.contains("metrics")) {
            ctx.metrics.bins = s["metrics"].value("bins", ctx.metrics.bins);
            ctx.metrics.chamfer_samples = s["metrics"].value("chamfer_samples", ctx.metrics.chamfer_samples);
        }
    } catch (const json::exception& e) {
        throw InputError(summary_path.string() + ": " + e.what());
    }
    if (mesh_override) {
        ctx.nominal = load_obj(*mesh_override);
    } else if (s.contains("mesh") && s["mesh"].is_string()) {
        const fs::path mesh = resolve(log_path.parent_path(), s["mesh"].get<std::string>());
        if (!fs::exists(mesh)) throw InputError("nominal mesh not found: " + mesh.string());
        ctx.nominal = load_obj(mesh);
    }
    return ctx;
}

void write_json(const fs::path& path, const json& j)
{
    write_text(path, j.dump(2) + "\n");
}

json read_json(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_json_text(ss.str(), path.string());
}

} // namespace meshprobe
