#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "meshprobe/deform.hpp"
#include "meshprobe/evaluators.hpp"
#include "meshprobe/random.hpp"

namespace meshprobe {

/// Score given to candidates whose deformation or evaluation failed.
inline constexpr double kFailureScore = 2.0;

struct OptimizerConfig {
    int population = 10;
    double elite_fraction = 0.2;
    int iterations = 10;
    double perturb_fraction = 0.5;
    /// Per-handle mean and standard deviation of the initial population;
    /// empty means 0 and 0.001 for every entry.
    Eigen::MatrixX3d init_mean;
    Eigen::MatrixX3d init_std;
    std::optional<double> budget;
    std::uint64_t seed = 0;
    int workers = 1;

    int elite_count() const;
    /// Rows of the handles selected per perturbation, at least 1.
    int perturb_count(int handle_count) const;
    Eigen::MatrixX3d mean_for(int handle_count) const;
    Eigen::MatrixX3d std_for(int handle_count) const;
    void check(int handle_count) const;
};

nlohmann::json to_json(const OptimizerConfig& config);
/// Missing keys keep their defaults. `init_mean` / `init_std` accept a scalar
/// or an M x 3 array.
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

/// Mean per-handle displacement norm.
double smoothness_score(const DeformationParams& params);

/// Uniformly rescales the displacements onto SS = tau when SS exceeds tau.
DeformationParams project_budget(const DeformationParams& params, double tau);

/// Adds zero-mean Gaussian noise (standard deviations from the config) to
/// perturb_count distinct handle rows chosen uniformly; other rows are left
/// untouched. `rows`, if given, receives the chosen rows in ascending order.
DeformationParams perturb(const DeformationParams& params, const OptimizerConfig& config, Rng& rng,
                          std::vector<int>* rows = nullptr);

struct CandidateId {
    int iteration = 0;
    int candidate = 0;

    bool operator==(const CandidateId&) const = default;
};

struct CandidateRecord {
    CandidateId id;
    std::optional<CandidateId> parent;
    DeformationParams params;
    double score = kFailureScore;
    double smoothness = 0.0;
    std::optional<std::string> failure;

    bool failed() const { return failure.has_value(); }
};

struct IterationRecord {
    int iteration = 0;
    std::vector<CandidateId> elites;
    double best_so_far = kFailureScore;
};

struct RunLog {
    double nominal_score = 1.0;
    nlohmann::json config;
    std::vector<CandidateRecord> records;
    std::vector<IterationRecord> iterations;
    std::optional<std::string> abort_reason;

    /// Nominal score followed by the best-so-far score after each iteration.
    std::vector<double> best_scores() const;
    const CandidateRecord* find(const CandidateId& id) const;
};

struct RunResult {
    CandidateRecord best;
    RunLog log;
};

/// Thrown when every candidate of an iteration failed; carries the partial log.
class RunAborted : public std::runtime_error {
public:
    RunAborted(const std::string& what, RunLog log) : std::runtime_error(what), log_(std::move(log)) {}
    const RunLog& log() const { return log_; }

private:
    RunLog log_;
};

/// Scores one candidate; throws (EvaluationFailure, NumericalError, ...) on
/// failure. Called concurrently when config.workers > 1.
using CandidateScorer = std::function<double(const DeformationParams& params, std::uint64_t seed)>;

struct RunHooks {
    /// Receives each candidate record, in (iteration, candidate) order.
    std::function<void(const CandidateRecord&)> on_record;
    std::function<void(const IterationRecord&)> on_iteration;
};

/// Population search over handle displacements, minimizing the score.
/// Each iteration perturbs the N parents, scores the children, and keeps the
/// ceil(rho N) lowest scores among the children and the previous elites;
/// the elites are replicated cyclically to form the next parents. The
/// evaluator always receives the run seed, so candidates are compared on
/// the same trial draws.
RunResult run_search(const OptimizerConfig& config, int handle_count, double nominal_score,
                     const CandidateScorer& scorer, const RunHooks& hooks = {});

/// Red-team run: candidates are deformed by `pipeline` and scored by
/// `evaluator`; the nominal score is the evaluator on the undeformed mesh.
RunResult run(const OptimizerConfig& config, const DeformPipeline& pipeline, const Evaluator& evaluator,
              const RunHooks& hooks = {});

/// `{"iter","cand","score","ss","theta","fail"}`
nlohmann::json to_json(const CandidateRecord& record);
CandidateRecord candidate_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const IterationRecord& record);

} // namespace meshprobe
