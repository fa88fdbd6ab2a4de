#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "meshprobe/deform.hpp"
#include "meshprobe/error.hpp"
#include "meshprobe/keypoints.hpp"
#include "meshprobe/metrics.hpp"
#include "meshprobe/optimizer.hpp"
#include "meshprobe/prompts.hpp"
#include "meshprobe/render.hpp"
#include "meshprobe/run.hpp"
#include "meshprobe/vlm_client.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace meshprobe;

namespace {

std::string read_text(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void emit(const std::string& text, const std::string& out)
{
    if (out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out, std::ios::binary);
    if (!f) throw InputError("cannot write " + out);
    f << text;
}

/// A file holding either a bare value or an object with `key`.
json keyed_file(const fs::path& path, const std::string& key)
{
    const json j = read_json(path);
    if (j.is_object() && j.contains(key)) return j[key];
    return j;
}

Mesh load_mesh(const std::string& path)
{
    if (!fs::exists(path)) throw InputError("mesh file not found: " + path);
    return load_obj(path);
}

/// `--evaluator` takes inline JSON or a path to a JSON file.
json evaluator_arg(const std::string& text)
{
    const auto first = text.find_first_not_of(" \t\n");
    if (first != std::string::npos && text[first] == '{') {
        const json j = json::parse(text, nullptr, false);
        if (j.is_discarded()) throw InputError("--evaluator is not valid JSON");
        return j;
    }
    return read_json(text);
}

struct KeypointsArgs {
    std::string mesh;
    int n = 25;
    std::uint64_t seed = 0;
    KeypointParams params;
    std::string out;
};

int cmd_keypoints(const KeypointsArgs& a)
{
    const auto [normalized, transform] = normalize(load_mesh(a.mesh));
    const KeypointSet kps = sample_keypoints(normalized, a.n, a.seed, a.params);
    emit(to_json(kps).dump(2) + "\n", a.out);
    std::fprintf(stderr, "keypoints: %d (symmetric %d, completion %d), min pairwise distance %.6f\n", kps.size(),
                 kps.symmetric_count, kps.completion_count, kps.min_separation());
    return 0;
}

struct DeformArgs {
    std::string mesh, handles, anchors, displacements, out;
    int bins = kDefaultEntropyBins;
    std::string options;
};

int cmd_deform(const DeformArgs& a)
{
    const Mesh mesh = load_mesh(a.mesh);
    const fs::path base = fs::path(a.mesh).parent_path();
    const auto handles = select_vertices(mesh, keyed_file(a.handles, "handles"), "handles", base);
    const auto anchors = select_vertices(mesh, keyed_file(a.anchors, "anchors"), "anchors", base);
    const DeformationParams params{matrix_from_json(keyed_file(a.displacements, "displacements"), "displacements")};
    SolverOptions opts;
    if (!a.options.empty()) opts = solver_options_from_json(read_json(a.options));
    check_handle_anchor_sets(static_cast<int>(mesh.vertices.rows()), handles, anchors);
    if (params.handle_count() != static_cast<int>(handles.size())) {
        throw InputError("displacements have " + std::to_string(params.handle_count()) + " rows for "
                         + std::to_string(handles.size()) + " handles");
    }

    const DeformResult r = deform_pipeline(mesh, handles, anchors, params, opts);
    save_obj(r.mesh, a.out);
    const double delta = complexity_entropy(r.mesh, a.bins) - complexity_entropy(mesh, a.bins);
    const json sidecar = {{"handle_loss", r.handle_loss},
                          {"ss", smoothness_score(params)},
                          {"delta_complexity", delta},
                          {"entropy_bins", a.bins},
                          {"converged", r.converged},
                          {"iterations", r.iterations},
                          {"aligned", r.aligned},
                          {"anchor_drift", r.anchor_drift},
                          {"warning", r.converged ? json(nullptr) : json("solver did not converge; result written anyway")}};
    write_json(fs::path(a.out).replace_extension(".json"), sidecar);
    if (!r.converged) std::fprintf(stderr, "warning: solver did not converge after %d iterations\n", r.iterations);
    std::fprintf(stderr, "handle loss %.3e, SS %.6f, delta complexity %.6f\n", r.handle_loss, smoothness_score(params), delta);
    return 0;
}

struct RedteamArgs {
    std::string config;
    RunOverrides overrides;
    std::string out, evaluator;
};

int cmd_redteam(RedteamArgs a)
{
    if (!a.out.empty()) a.overrides.out = a.out;
    if (!a.evaluator.empty()) a.overrides.evaluator = evaluator_arg(a.evaluator);
    if (!fs::exists(a.config)) throw InputError("config not found: " + a.config);
    const RunConfig config = load_run_config(a.config, a.overrides);
    if (!config.out) throw InputError("no output directory: pass --out or set \"out\" in the config");

    const RunOutcome outcome = execute_run(config, *config.out);
    if (outcome.vlm_error) std::fprintf(stderr, "handle selection failed, using manual handles: %s\n", outcome.vlm_error->c_str());
    if (outcome.abort_reason) {
        std::fprintf(stderr, "run aborted: %s (partial log in %s)\n", outcome.abort_reason->c_str(),
                     outcome.directory.string().c_str());
        return 1;
    }
    const MetricsReport& m = outcome.metrics;
    std::printf("S0 %.6f  best %.6f  final_drop %.6f  auc %.6f  iter@50%% %s\n", m.nominal_score, m.best_score,
                m.final_drop, m.auc, m.iter_at_50 ? std::to_string(*m.iter_at_50).c_str() : "-");
    std::printf("run directory: %s\n", outcome.directory.string().c_str());
    return 0;
}

struct MetricsArgs {
    std::vector<std::string> logs;
    std::string mesh, out;
    std::optional<int> bins, samples;
};

int cmd_metrics(const MetricsArgs& a)
{
    std::vector<MetricsReport> reports;
    json runs = json::object();
    for (const auto& log : a.logs) {
        const auto records = read_run_log(log);
        RunContext ctx = load_run_context(log, a.mesh.empty() ? std::nullopt : std::optional<fs::path>(a.mesh));
        MetricsOptions opts = ctx.metrics;
        if (a.bins) opts.bins = *a.bins;
        if (a.samples) opts.chamfer_samples = *a.samples;
        if (opts.bins < 1 || opts.chamfer_samples < 1) throw InputError("--bins and --samples must be positive");
        reports.push_back(compute_run_metrics(ctx, records, opts));
        runs[log] = to_json(reports.back());
    }
    const json out = reports.size() == 1 ? to_json(reports.front())
                                         : json{{"runs", runs}, {"aggregate", aggregate_reports(reports)}};
    emit(out.dump(2) + "\n", a.out);
    return 0;
}

struct PanelArgs {
    std::string mesh, keypoints, out;
    int size = 400;
};

int cmd_panel(const PanelArgs& a)
{
    const auto [normalized, transform] = normalize(load_mesh(a.mesh));
    const KeypointSet kps = keypoints_from_json(read_json(a.keypoints));
    RenderOptions opts;
    opts.view_size = a.size;
    const auto poses = panel_poses();
    const PanelImage panel = render_panel(normalized, kps, poses, opts);
    write_png(panel.image, a.out);
    const char labels[] = "ABCD";
    for (int i = 0; i < 4; ++i) {
        std::printf("%c azimuth %.1f elevation %.1f\n", labels[i], poses[static_cast<std::size_t>(i)].azimuth,
                    poses[static_cast<std::size_t>(i)].elevation);
    }
    return 0;
}

struct PromptArgs {
    std::string input, hint, stage, out;
    std::optional<int> keypoint_count;
};

int cmd_prompt_build(const PromptArgs& a)
{
    if (a.stage == "ranking") {
        emit(build_ranking_prompt(), a.out);
        return 0;
    }
    if (a.input.empty()) throw InputError("prompt build needs a keypoints file");
    emit(build_geometric_prompt(keypoints_from_json(read_json(a.input)), a.hint), a.out);
    return 0;
}

int cmd_prompt_parse(const PromptArgs& a)
{
    const std::string text = read_text(a.input);
    json out;
    if (a.stage == "top") {
        const HandleProposal p = parse_top_rank(text);
        if (a.keypoint_count) check_proposal_indices(p, *a.keypoint_count);
        out = {{"top_choice", to_json(p)}};
    } else {
        const auto proposals = parse_choices(text);
        if (a.keypoint_count) {
            for (const auto& p : proposals) check_proposal_indices(p, *a.keypoint_count);
        }
        out = choices_to_json(proposals);
    }
    emit(out.dump(2) + "\n", a.out);
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Red-team mesh-conditioned evaluators with Jacobian-field deformations"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "meshprobe 0.1.0");

    KeypointsArgs kp;
    auto* keypoints = app.add_subcommand("keypoints", "Sample surface keypoints (normalized frame)");
    keypoints->add_option("mesh", kp.mesh, "Input OBJ")->required();
    keypoints->add_option("--n", kp.n, "Number of keypoints")->capture_default_str();
    keypoints->add_option("--seed", kp.seed, "Random seed")->capture_default_str();
    keypoints->add_option("--samples", kp.params.samples, "Surface samples")->capture_default_str();
    keypoints->add_option("--neighbors", kp.params.neighbors, "Neighbors for the density estimate")->capture_default_str();
    keypoints->add_option("--separation", kp.params.separation, "Minimum pairwise distance")->capture_default_str();
    keypoints->add_option("--out", kp.out, "Output JSON (default stdout)");

    DeformArgs df;
    auto* deform = app.add_subcommand("deform", "Deform a mesh by handle displacements");
    deform->add_option("mesh", df.mesh, "Input OBJ")->required();
    deform->add_option("--handles", df.handles, "Handle vertices JSON")->required();
    deform->add_option("--anchors", df.anchors, "Anchor vertices JSON")->required();
    deform->add_option("--displacements", df.displacements, "Displacements JSON (normalized units)")->required();
    deform->add_option("--out", df.out, "Output OBJ; a .json sidecar is written next to it")->required();
    deform->add_option("--bins", df.bins, "Entropy histogram bins")->capture_default_str();
    deform->add_option("--options", df.options, "Solver options JSON");

    RedteamArgs rt;
    auto* redteam = app.add_subcommand("redteam", "Run the deformation search against an evaluator");
    redteam->add_option("config", rt.config, "Run config JSON")->required();
    redteam->add_option("--out", rt.out, "Run directory");
    redteam->add_option("--seed", rt.overrides.seed, "Override the config seed");
    redteam->add_option("--workers", rt.overrides.workers, "Concurrent candidate evaluations");
    redteam->add_option("--budget", rt.overrides.budget, "Smoothness budget");
    redteam->add_option("--evaluator", rt.evaluator, "Evaluator JSON (inline or file)");
    redteam->add_option("--endpoint-env", rt.overrides.endpoint_env, "Environment prefix of the chat endpoint");

    MetricsArgs mt;
    auto* metrics = app.add_subcommand("metrics", "Recompute metrics from run logs");
    metrics->add_option("logs", mt.logs, "log.jsonl files")->required();
    metrics->add_option("--mesh", mt.mesh, "Nominal mesh (default: from summary.json)");
    metrics->add_option("--bins", mt.bins, "Entropy histogram bins");
    metrics->add_option("--samples", mt.samples, "Chamfer samples per mesh");
    metrics->add_option("--out", mt.out, "Output JSON (default stdout)");

    PanelArgs pn;
    auto* panel = app.add_subcommand("panel", "Render the annotated 2x2 view panel");
    panel->add_option("mesh", pn.mesh, "Input OBJ")->required();
    panel->add_option("keypoints", pn.keypoints, "Keypoints JSON")->required();
    panel->add_option("--out", pn.out, "Output PNG")->required();
    panel->add_option("--size", pn.size, "Pixels per view")->capture_default_str();

    PromptArgs pb, pp;
    auto* prompt = app.add_subcommand("prompt", "Build prompts or parse responses");
    prompt->require_subcommand(1);
    auto* build = prompt->add_subcommand("build", "Write a prompt");
    build->add_option("keypoints", pb.input, "Keypoints JSON");
    build->add_option("--hint", pb.hint, "Task-specific hint");
    build->add_option("--stage", pb.stage, "geometric or ranking")
        ->default_val("geometric")
        ->check(CLI::IsMember({"geometric", "ranking"}));
    build->add_option("--out", pb.out, "Output file (default stdout)");
    auto* parse = prompt->add_subcommand("parse", "Parse a model response");
    parse->add_option("response", pp.input, "Response text file")->required();
    parse->add_option("--stage", pp.stage, "choices or top")->default_val("choices")->check(CLI::IsMember({"choices", "top"}));
    parse->add_option("--keypoints", pp.keypoint_count, "Number of keypoints, to range-check indices");
    parse->add_option("--out", pp.out, "Output JSON (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*keypoints) return cmd_keypoints(kp);
        if (*deform) return cmd_deform(df);
        if (*redteam) return cmd_redteam(rt);
        if (*metrics) return cmd_metrics(mt);
        if (*panel) return cmd_panel(pn);
        if (*build) return cmd_prompt_build(pb);
        if (*parse) return cmd_prompt_parse(pp);
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const EndpointError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.kind() == EndpointError::Kind::not_configured ? 2 : 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
    return 1;
}
