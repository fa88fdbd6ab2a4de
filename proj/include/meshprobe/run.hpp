#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshprobe/deform.hpp"
#include "meshprobe/evaluators.hpp"
#include "meshprobe/metrics.hpp"
#include "meshprobe/optimizer.hpp"

namespace meshprobe {

/// Vertex selection in a config: a list of indices, `{"file": path}` (a list
/// or an object with `key`), or `{"regions": [{"min": [..], "max": [..]}]}`
/// selecting every vertex inside any of the boxes.
std::vector<int> select_vertices(const Mesh& mesh, const nlohmann::json& selector, const std::string& key,
                                 const std::filesystem::path& base_dir);

struct VlmOptions {
    bool enabled = false;
    int keypoints = 25;
    double separation = 0.1;
    std::string task_hint;
    std::string endpoint_env = "MESHPROBE_VLM";
};

struct MetricsOptions {
    int bins = kDefaultEntropyBins;
    int chamfer_samples = 2000;
    int worst_count = 10;
};

struct RunConfig {
    std::filesystem::path mesh_path;
    Mesh mesh;
    std::vector<int> handles; ///< empty when only the VLM is to choose them
    std::vector<int> anchors;
    OptimizerConfig optimizer;
    nlohmann::json evaluator;
    SolverOptions deform;
    MetricsOptions metrics;
    VlmOptions vlm;
    std::optional<std::filesystem::path> out;
};

struct RunOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    std::optional<double> budget;
    std::optional<nlohmann::json> evaluator;
    std::optional<std::filesystem::path> out;
    std::optional<std::string> endpoint_env;
};

/// Parses and validates a run config; relative paths resolve against
/// `base_dir`. Throws InputError on any problem.
RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base_dir,
                           const RunOverrides& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path, const RunOverrides& overrides = {});

/// Snapshot written to the run directory.
nlohmann::json to_json(const RunConfig& config);

struct RunOutcome {
    std::filesystem::path directory;
    std::optional<RunResult> result;
    std::optional<std::string> abort_reason;
    MetricsReport metrics;
    std::vector<int> handles;
    bool vlm_used = false;
    std::optional<std::string> vlm_error;
};

/// Runs the red-team search and writes config.json, log.jsonl, summary.json,
/// best.obj, worst/rank_NN.obj, metrics.json (and vlm/ when enabled) into
/// `directory`. An aborted run still writes the partial log with an abort
/// record and a summary.
RunOutcome execute_run(const RunConfig& config, const std::filesystem::path& directory);

/// Log lines in order; errors name the 1-based line.
std::vector<CandidateRecord> read_run_log(const std::filesystem::path& path);

/// Best-so-far score after each iteration 1..T, from the records.
std::vector<double> best_so_far(const std::vector<CandidateRecord>& records, int iterations);

/// Everything the metrics need to be recomputed from disk.
struct RunContext {
    std::optional<Mesh> nominal; ///< geometric metrics are skipped without it
    std::vector<int> handles;
    std::vector<int> anchors;
    SolverOptions deform;
    double nominal_score = 1.0;
    int iterations = 0;
    std::uint64_t seed = 0;
    MetricsOptions metrics; ///< options the run was reported with
};

MetricsReport compute_run_metrics(const RunContext& context, const std::vector<CandidateRecord>& records,
                                  const MetricsOptions& options);

/// Reads summary.json next to a log file.
RunContext load_run_context(const std::filesystem::path& log_path, const std::optional<std::filesystem::path>& mesh_override);

/// Two-space-indented JSON with a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

} // namespace meshprobe
