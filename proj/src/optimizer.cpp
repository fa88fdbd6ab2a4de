#include "meshprobe/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "meshprobe/error.hpp"

namespace meshprobe {

namespace {

constexpr double kDefaultStd = 0.001;

Eigen::MatrixX3d expand(const Eigen::MatrixX3d& m, int rows, double fallback, const char* what)
{
    if (m.rows() == 0) return Eigen::MatrixX3d::Constant(rows, 3, fallback);
    if (m.rows() == 1) return m.replicate(rows, 1);
    if (m.rows() != rows) {
        throw InputError(std::string(what) + " has " + std::to_string(m.rows()) + " rows but there are "
                         + std::to_string(rows) + " handles");
    }
    return m;
}

Eigen::MatrixX3d matrix_or_scalar(const nlohmann::json& j, const std::string& field)
{
    if (j.is_number()) return Eigen::MatrixX3d::Constant(1, 3, j.get<double>());
    return matrix_from_json(j, field);
}

nlohmann::json id_json(const CandidateId& id) { return {id.iteration, id.candidate}; }

/// Runs body(i) for i in [0, n) on up to `workers` threads.
template <typename Body>
void parallel_for(int n, int workers, Body body)
{
    workers = std::clamp(workers, 1, std::max(1, n));
    if (workers == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (int i = next++; i < n; i = next++) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

} // namespace

int OptimizerConfig::elite_count() const
{
    return std::max(1, static_cast<int>(std::ceil(elite_fraction * population - 1e-9)));
}

int OptimizerConfig::perturb_count(int handle_count) const
{
    const int k = static_cast<int>(std::floor(perturb_fraction * handle_count + 1e-9));
    return std::clamp(k, 1, std::max(1, handle_count));
}

Eigen::MatrixX3d OptimizerConfig::mean_for(int handle_count) const
{
    return expand(init_mean, handle_count, 0.0, "init_mean");
}

Eigen::MatrixX3d OptimizerConfig::std_for(int handle_count) const
{
    return expand(init_std, handle_count, kDefaultStd, "init_std");
}

void OptimizerConfig::check(int handle_count) const
{
    if (population < 2) throw InputError("population must be at least 2");
    if (!(elite_fraction > 0.0 && elite_fraction <= 1.0)) throw InputError("elite_fraction must be in (0, 1]");
    if (iterations < 1) throw InputError("iterations must be at least 1");
    if (!(perturb_fraction > 0.0 && perturb_fraction <= 1.0)) throw InputError("perturb_fraction must be in (0, 1]");
    if (handle_count < 1) throw InputError("at least one handle is required");
    if (!(std_for(handle_count).array() > 0.0).all()) throw InputError("init_std entries must be positive");
    if (!mean_for(handle_count).allFinite()) throw InputError("init_mean entries must be finite");
    if (budget && !(*budget > 0.0)) throw InputError("budget must be positive");
    if (workers < 1) throw InputError("workers must be at least 1");
}

nlohmann::json to_json(const OptimizerConfig& c)
{
    nlohmann::json j = {{"population", c.population},
                        {"elite_fraction", c.elite_fraction},
                        {"iterations", c.iterations},
                        {"perturb_fraction", c.perturb_fraction},
                        {"seed", c.seed},
                        {"workers", c.workers}};
    j["init_mean"] = c.init_mean.rows() ? matrix_to_json(c.init_mean) : nlohmann::json(0.0);
    j["init_std"] = c.init_std.rows() ? matrix_to_json(c.init_std) : nlohmann::json(kDefaultStd);
    j["budget"] = c.budget ? nlohmann::json(*c.budget) : nlohmann::json(nullptr);
    return j;
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw InputError("optimizer config must be an object");
    OptimizerConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "population") c.population = value.get<int>();
            else if (key == "elite_fraction") c.elite_fraction = value.get<double>();
            else if (key == "iterations") c.iterations = value.get<int>();
            else if (key == "perturb_fraction") c.perturb_fraction = value.get<double>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "workers") c.workers = value.get<int>();
            else if (key == "init_mean") c.init_mean = matrix_or_scalar(value, key);
            else if (key == "init_std") c.init_std = matrix_or_scalar(value, key);
            else if (key == "budget") c.budget = value.is_null() ? std::nullopt : std::optional(value.get<double>());
            else throw InputError("unknown optimizer option '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("optimizer config: ") + e.what());
    }
    return c;
}

double smoothness_score(const DeformationParams& params)
{
    if (params.handle_count() == 0) throw InputError("smoothness score needs at least one handle");
    return params.displacements.rowwise().norm().mean();
}

DeformationParams project_budget(const DeformationParams& params, double tau)
{
    if (!(tau > 0.0)) throw InputError("budget must be positive");
    const double ss = smoothness_score(params);
    if (ss <= tau) return params;
    DeformationParams out{params.displacements * (tau / ss)};
    // guard against the last ulp of rounding
    while (smoothness_score(out) > tau) out.displacements *= 1.0 - 1e-15;
    return out;
}

DeformationParams perturb(const DeformationParams& params, const OptimizerConfig& config, Rng& rng,
                          std::vector<int>* rows)
{
    const int m = params.handle_count();
    const int k = config.perturb_count(m);
    const Eigen::MatrixX3d sd = config.std_for(m);

    std::vector<int> order(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
    for (int i = 0; i < k; ++i) {
        const auto j = static_cast<std::size_t>(i) + rng.below(static_cast<std::uint64_t>(m - i));
        std::swap(order[static_cast<std::size_t>(i)], order[j]);
    }
    order.resize(static_cast<std::size_t>(k));
    std::sort(order.begin(), order.end());

    DeformationParams out = params;
    for (int r : order) {
        for (int c = 0; c < 3; ++c) out.displacements(r, c) += rng.normal(0.0, sd(r, c));
    }
    if (rows) *rows = order;
    return out;
}

std::vector<double> RunLog::best_scores() const
{
    std::vector<double> out{nominal_score};
    for (const auto& it : iterations) out.push_back(it.best_so_far);
    return out;
}

const CandidateRecord* RunLog::find(const CandidateId& id) const
{
    for (const auto& r : records) {
        if (r.id == id) return &r;
    }
    return nullptr;
}

RunResult run_search(const OptimizerConfig& config, int handle_count, double nominal_score,
                     const CandidateScorer& scorer, const RunHooks& hooks)
{
    config.check(handle_count);
    const int n = config.population;
    const int elite_n = config.elite_count();

    RunLog log;
    log.nominal_score = nominal_score;
    log.config = to_json(config);

    // initial samples from N(mu0, Sigma0)
    const Eigen::MatrixX3d mean = config.mean_for(handle_count);
    const Eigen::MatrixX3d sd = config.std_for(handle_count);
    std::vector<CandidateRecord> parents(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed({config.seed, 0, static_cast<std::uint64_t>(i)}));
        Eigen::MatrixX3d theta(handle_count, 3);
        for (int r = 0; r < handle_count; ++r) {
            for (int c = 0; c < 3; ++c) theta(r, c) = rng.normal(mean(r, c), sd(r, c));
        }
        parents[static_cast<std::size_t>(i)].params = DeformationParams{theta};
    }

    std::vector<CandidateRecord> elites;
    for (int t = 1; t <= config.iterations; ++t) {
        std::vector<CandidateRecord> batch(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            const auto& parent = parents[static_cast<std::size_t>(i)];
            Rng rng(derive_seed({config.seed, static_cast<std::uint64_t>(t), static_cast<std::uint64_t>(i)}));
            auto& child = batch[static_cast<std::size_t>(i)];
            child.id = {t, i};
            if (t > 1) child.parent = parent.id;
            child.params = perturb(parent.params, config, rng);
            if (config.budget) child.params = project_budget(child.params, *config.budget);
            child.smoothness = smoothness_score(child.params);
        }

        parallel_for(n, config.workers, [&](int i) {
            auto& child = batch[static_cast<std::size_t>(i)];
            try {
                const double s = scorer(child.params, config.seed);
                if (!(s >= 0.0 && s <= 1.0)) throw EvaluationFailure("score out of range", std::to_string(s));
                child.score = s;
            } catch (const EvaluationFailure& e) {
                child.failure = e.what();
            } catch (const NumericalError& e) {
                child.failure = std::string("deformation failed: ") + e.what();
            } catch (const std::exception& e) {
                child.failure = e.what();
            }
            if (child.failure) child.score = kFailureScore;
        });

        for (const auto& child : batch) {
            log.records.push_back(child);
            if (hooks.on_record) hooks.on_record(child);
        }
        const bool any_ok = std::any_of(batch.begin(), batch.end(), [](const auto& c) { return !c.failed(); });
        if (!any_ok) {
            log.abort_reason = "all " + std::to_string(n) + " candidates failed in iteration " + std::to_string(t)
                               + " (first failure: " + *batch.front().failure + ")";
            const std::string reason = *log.abort_reason;
            throw RunAborted(reason, std::move(log));
        }

        std::vector<CandidateRecord> pool = elites;
        for (const auto& child : batch) {
            if (!child.failed()) pool.push_back(child);
        }
        std::stable_sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
            if (a.score != b.score) return a.score < b.score;
            if (a.id.iteration != b.id.iteration) return a.id.iteration < b.id.iteration;
            return a.id.candidate < b.id.candidate;
        });
        pool.resize(std::min(pool.size(), static_cast<std::size_t>(elite_n)));
        elites = std::move(pool);

        IterationRecord summary{t, {}, elites.front().score};
        for (const auto& e : elites) summary.elites.push_back(e.id);
        log.iterations.push_back(summary);
        if (hooks.on_iteration) hooks.on_iteration(summary);

        for (int i = 0; i < n; ++i) {
            parents[static_cast<std::size_t>(i)] = elites[static_cast<std::size_t>(i) % elites.size()];
        }
    }
    return {elites.front(), std::move(log)};
}

RunResult run(const OptimizerConfig& config, const DeformPipeline& pipeline, const Evaluator& evaluator,
              const RunHooks& hooks)
{
    const double nominal = evaluator.evaluate(pipeline.original(), EvalContext{config.seed, nullptr});
    std::mutex serial;
    const bool safe = evaluator.concurrency_safe();
    auto scorer = [&](const DeformationParams& params, std::uint64_t seed) {
        const DeformResult deformed = pipeline.deform(params);
        const EvalContext ctx{seed, &params};
        if (safe) return evaluator.evaluate(deformed.mesh, ctx);
        std::lock_guard lock(serial);
        return evaluator.evaluate(deformed.mesh, ctx);
    };
    return run_search(config, pipeline.handle_count(), nominal, scorer, hooks);
}

nlohmann::json to_json(const CandidateRecord& r)
{
    return {{"iter", r.id.iteration},
            {"cand", r.id.candidate},
            {"score", r.score},
            {"ss", r.smoothness},
            {"theta", matrix_to_json(r.params.displacements)},
            {"fail", r.failure ? nlohmann::json(*r.failure) : nlohmann::json(nullptr)}};
}

CandidateRecord candidate_record_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) throw InputError("record is not a JSON object");
    for (const char* key : {"iter", "cand", "score", "ss", "theta", "fail"}) {
        if (!j.contains(key)) throw InputError(std::string("record is missing '") + key + "'");
    }
    CandidateRecord r;
    try {
        r.id = {j["iter"].get<int>(), j["cand"].get<int>()};
        r.score = j["score"].get<double>();
        r.smoothness = j["ss"].get<double>();
        if (!j["fail"].is_null()) r.failure = j["fail"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("record field has the wrong type: ") + e.what());
    }
    r.params = DeformationParams{matrix_from_json(j["theta"], "theta")};
    return r;
}

nlohmann::json to_json(const IterationRecord& r)
{
    auto elites = nlohmann::json::array();
    for (const auto& e : r.elites) elites.push_back(id_json(e));
    return {{"iter", r.iteration}, {"elites", elites}, {"best", r.best_so_far}};
}

} // namespace meshprobe
