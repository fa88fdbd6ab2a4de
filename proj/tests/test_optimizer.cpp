#include <gtest/gtest.h>

#include <atomic>

#include "fixtures.hpp"
#include "meshprobe/error.hpp"
#include "meshprobe/optimizer.hpp"
#include "meshprobe/primitives.hpp"
#include "oracles.hpp"

using namespace meshprobe;

namespace {

DeformationParams params_of(std::initializer_list<Vec3> rows)
{
    DeformationParams p = DeformationParams::zeros(static_cast<int>(rows.size()));
    int i = 0;
    for (const Vec3& r : rows) p.displacements.row(i++) = r;
    return p;
}

OptimizerConfig default_config(std::uint64_t seed)
{
    OptimizerConfig c;
    c.seed = seed;
    return c;
}

double norm_score(const DeformationParams& p, int row, double scale)
{
    return 1.0 - std::min(1.0, p.displacements.row(row).norm() / scale);
}

} // namespace

TEST(Smoothness, MeanRowNorm)
{
    EXPECT_DOUBLE_EQ(smoothness_score(params_of({Vec3(3, 4, 0), Vec3(0, 0, 1)})), 3.0);
    EXPECT_DOUBLE_EQ(smoothness_score(DeformationParams::zeros(4)), 0.0);
    EXPECT_THROW(smoothness_score(DeformationParams::zeros(0)), InputError);
}

TEST(Budget, ProjectsOntoTau)
{
    const DeformationParams p = params_of({Vec3(3, 4, 0), Vec3(0, 0, 1)});
    const DeformationParams q = project_budget(p, 1.5);
    EXPECT_LE(smoothness_score(q), 1.5);
    EXPECT_NEAR(smoothness_score(q), 1.5, 1e-12);
    EXPECT_LE((q.displacements - 0.5 * p.displacements).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Budget, InsideBudgetUnchanged)
{
    const DeformationParams p = params_of({Vec3(0.001, 0, 0)});
    EXPECT_EQ(project_budget(p, 0.01).displacements, p.displacements);
    EXPECT_THROW(project_budget(p, 0.0), InputError);
}

TEST(Budget, PreservesDirections)
{
    Rng rng(2);
    DeformationParams p = DeformationParams::zeros(20);
    for (int r = 0; r < 20; ++r) {
        for (int c = 0; c < 3; ++c) p.displacements(r, c) = rng.normal();
    }
    const DeformationParams q = project_budget(p, 0.01);
    for (int r = 0; r < 20; ++r) {
        const double cosine = p.displacements.row(r).dot(q.displacements.row(r))
                              / (p.displacements.row(r).norm() * q.displacements.row(r).norm());
        EXPECT_NEAR(cosine, 1.0, 1e-12);
    }
}

TEST(Perturb, TouchesFloorGammaRows)
{
    OptimizerConfig c;
    c.perturb_fraction = 0.5;
    Rng rng(11);
    const DeformationParams base = DeformationParams::zeros(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> rows;
        const DeformationParams out = perturb(base, c, rng, &rows);
        ASSERT_EQ(rows.size(), 3u);
        int changed = 0;
        for (int r = 0; r < 7; ++r) {
            const bool moved = out.displacements.row(r).norm() > 0.0;
            changed += moved ? 1 : 0;
            EXPECT_EQ(moved, std::find(rows.begin(), rows.end(), r) != rows.end());
        }
        EXPECT_EQ(changed, 3);
    }
}

TEST(Perturb, AtLeastOneRow)
{
    OptimizerConfig c;
    c.perturb_fraction = 0.1;
    EXPECT_EQ(c.perturb_count(3), 1);
    EXPECT_EQ(c.perturb_count(10), 1);
    EXPECT_EQ(c.perturb_count(25), 2);
}

TEST(Perturb, RowsUniform)
{
    OptimizerConfig c;
    c.perturb_fraction = 0.25;
    Rng rng(4);
    std::vector<int> hits(8, 0);
    const int trials = 8000;
    for (int t = 0; t < trials; ++t) {
        std::vector<int> rows;
        perturb(DeformationParams::zeros(8), c, rng, &rows);
        for (int r : rows) ++hits[static_cast<std::size_t>(r)];
    }
    // each row chosen with probability 2/8
    const double sd = std::sqrt(trials * 0.25 * 0.75);
    for (int h : hits) EXPECT_NEAR(h, trials * 0.25, 4 * sd);
}

TEST(Perturb, NoiseScale)
{
    OptimizerConfig c;
    c.perturb_fraction = 1.0;
    c.init_std = Eigen::MatrixX3d::Constant(1, 3, 0.02);
    Rng rng(5);
    double sum2 = 0.0;
    const int trials = 5000;
    for (int t = 0; t < trials; ++t) sum2 += perturb(DeformationParams::zeros(1), c, rng).displacements.squaredNorm();
    EXPECT_NEAR(std::sqrt(sum2 / (3 * trials)), 0.02, 0.02 * 0.03);
}

TEST(Config, ElitesAndDefaults)
{
    const OptimizerConfig c;
    EXPECT_EQ(c.population, 10);
    EXPECT_EQ(c.iterations, 10);
    EXPECT_EQ(c.elite_count(), 2);
    EXPECT_DOUBLE_EQ(c.perturb_fraction, 0.5);
    EXPECT_DOUBLE_EQ(c.std_for(3)(2, 1), 0.001);
    EXPECT_DOUBLE_EQ(c.mean_for(3)(0, 0), 0.0);
}

TEST(Config, JsonRoundTripAndErrors)
{
    OptimizerConfig c;
    c.population = 6;
    c.budget = 0.02;
    c.seed = 99;
    c.workers = 3;
    const OptimizerConfig r = optimizer_config_from_json(to_json(c));
    EXPECT_EQ(r.population, 6);
    EXPECT_EQ(*r.budget, 0.02);
    EXPECT_EQ(r.seed, 99u);
    EXPECT_EQ(r.workers, 3);
    EXPECT_THROW(optimizer_config_from_json({{"populaton", 5}}), InputError);
    EXPECT_THROW(optimizer_config_from_json({{"population", "ten"}}), InputError);
    OptimizerConfig bad;
    bad.elite_fraction = 0.0;
    EXPECT_THROW(bad.check(3), InputError);
    bad = OptimizerConfig{};
    bad.init_std = Eigen::MatrixX3d::Constant(2, 3, 0.1);
    EXPECT_THROW(bad.check(3), InputError);
}

TEST(Search, RecordCountAndNumbering)
{
    const auto scorer = [](const DeformationParams&, std::uint64_t) { return 0.7; };
    OptimizerConfig c = default_config(1);
    c.population = 6;
    c.iterations = 4;
    const RunResult r = run_search(c, 3, 0.7, scorer);
    ASSERT_EQ(r.log.records.size(), 24u);
    for (int t = 1; t <= 4; ++t) {
        for (int i = 0; i < 6; ++i) {
            const auto& rec = r.log.records[static_cast<std::size_t>((t - 1) * 6 + i)];
            EXPECT_EQ(rec.id, (CandidateId{t, i}));
            EXPECT_EQ(rec.parent.has_value(), t > 1);
        }
    }
    EXPECT_EQ(r.log.iterations.size(), 4u);
    EXPECT_EQ(r.log.best_scores(), std::vector<double>({0.7, 0.7, 0.7, 0.7, 0.7}));
}

TEST(Search, ConstantEvaluatorThroughPipeline)
{
    const Mesh m = make_icosphere(1);
    const DeformPipeline pipe(m, {0, 1}, {40, 41}, SolverOptions{});
    const ConstantEvaluator eval(0.5);
    const RunResult r = run(default_config(3), pipe, eval);
    EXPECT_EQ(r.log.records.size(), 100u);
    EXPECT_DOUBLE_EQ(r.log.nominal_score, 0.5);
    EXPECT_DOUBLE_EQ(r.best.score, 0.5);
}

TEST(Search, ParentsAreElitesOfPreviousIteration)
{
    const auto scorer = [](const DeformationParams& p, std::uint64_t) { return norm_score(p, 0, 0.05); };
    const RunResult r = run_search(default_config(8), 2, 1.0, scorer);
    for (const auto& rec : r.log.records) {
        if (!rec.parent) continue;
        const auto& elites = r.log.iterations[static_cast<std::size_t>(rec.id.iteration - 2)].elites;
        EXPECT_NE(std::find(elites.begin(), elites.end(), *rec.parent), elites.end());
        // the child differs from its parent in exactly floor(gamma M) = 1 row
        const CandidateRecord* parent = r.log.find(*rec.parent);
        ASSERT_NE(parent, nullptr);
        const Eigen::MatrixX3d diff = rec.params.displacements - parent->params.displacements;
        EXPECT_EQ((diff.rowwise().norm().array() > 0).count(), 1);
    }
}

TEST(Search, BestSoFarMonotone)
{
    const auto scorer = [](const DeformationParams& p, std::uint64_t) { return norm_score(p, 0, 0.05); };
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto best = run_search(default_config(seed), 4, 1.0, scorer).log.best_scores();
        for (std::size_t i = 1; i < best.size(); ++i) EXPECT_LE(best[i], best[i - 1]);
    }
}

TEST(Search, MatchesRandomSearchOracle)
{
    const auto scorer = [](const DeformationParams& p, std::uint64_t) { return norm_score(p, 0, 0.05); };
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const RunResult r = run_search(default_config(seed), 3, 1.0, scorer);
        Rng rng(derive_seed({seed, 77}));
        const double oracle_best = oracle::random_search_best(rng, 10000, 0.001, 0.05);
        EXPECT_LE(r.best.score, oracle_best + 0.05) << "seed " << seed;
    }
}

TEST(Search, BudgetRespectedByEveryCandidate)
{
    const auto scorer = [](const DeformationParams& p, std::uint64_t) { return norm_score(p, 0, 0.05); };
    for (double tau : {0.005, 0.01, 0.02}) {
        OptimizerConfig c = default_config(2);
        c.budget = tau;
        c.init_std = Eigen::MatrixX3d::Constant(4, 3, 0.05);
        for (const auto& rec : run_search(c, 4, 1.0, scorer).log.records) {
            EXPECT_LE(rec.smoothness, tau + 1e-12);
            EXPECT_LE(smoothness_score(rec.params), tau + 1e-12);
        }
    }
}

TEST(Search, EvaluatorSeesRunSeed)
{
    std::atomic<int> mismatched{0};
    const auto scorer = [&](const DeformationParams&, std::uint64_t s) {
        if (s != 1234) ++mismatched;
        return 0.5;
    };
    run_search(default_config(1234), 2, 0.5, scorer);
    EXPECT_EQ(mismatched.load(), 0);
}

TEST(Search, WorkerCountDoesNotChangeLog)
{
    const auto scorer = [](const DeformationParams& p, std::uint64_t) { return norm_score(p, 1, 0.02); };
    OptimizerConfig a = default_config(21), b = default_config(21);
    b.workers = 4;
    const RunResult ra = run_search(a, 5, 1.0, scorer), rb = run_search(b, 5, 1.0, scorer);
    ASSERT_EQ(ra.log.records.size(), rb.log.records.size());
    for (std::size_t i = 0; i < ra.log.records.size(); ++i) {
        EXPECT_EQ(to_json(ra.log.records[i]).dump(), to_json(rb.log.records[i]).dump());
    }
}

TEST(Search, FailuresGetSentinel)
{
    const auto scorer = [](const DeformationParams& p, std::uint64_t) -> double {
        if (p.displacements(0, 0) > 0) throw EvaluationFailure("nonzero exit", "status 1");
        return 0.4;
    };
    const RunResult r = run_search(default_config(5), 2, 0.4, scorer);
    int failed = 0;
    for (const auto& rec : r.log.records) {
        if (rec.failed()) {
            ++failed;
            EXPECT_EQ(rec.score, kFailureScore);
            EXPECT_NE(rec.failure->find("nonzero exit"), std::string::npos);
        }
    }
    EXPECT_GT(failed, 0);
    EXPECT_FALSE(r.best.failed());
    for (const auto& it : r.log.iterations) EXPECT_LE(it.best_so_far, 1.0);
}

TEST(Search, OutOfRangeScoreIsFailure)
{
    const auto scorer = [](const DeformationParams& p, std::uint64_t) {
        return p.displacements(0, 0) > 0 ? 1.5 : 0.3;
    };
    const RunResult r = run_search(default_config(6), 1, 0.3, scorer);
    for (const auto& rec : r.log.records) {
        if (rec.params.displacements(0, 0) > 0) {
            EXPECT_TRUE(rec.failed());
        }
    }
}

TEST(Search, AllFailuresAbortWithPartialLog)
{
    int calls = 0;
    const auto scorer = [&](const DeformationParams&, std::uint64_t) -> double {
        ++calls;
        if (calls > 10) throw EvaluationFailure("timeout");
        return 0.9;
    };
    try {
        run_search(default_config(1), 2, 1.0, scorer);
        FAIL() << "no abort";
    } catch (const RunAborted& e) {
        EXPECT_EQ(e.log().records.size(), 20u);
        EXPECT_EQ(e.log().iterations.size(), 1u);
        ASSERT_TRUE(e.log().abort_reason.has_value());
        EXPECT_NE(std::string(e.what()).find("iteration 2"), std::string::npos) << e.what();
    }
}

TEST(Search, HooksSeeEveryRecordInOrder)
{
    std::vector<CandidateId> seen;
    int iterations = 0;
    RunHooks hooks;
    hooks.on_record = [&](const CandidateRecord& r) { seen.push_back(r.id); };
    hooks.on_iteration = [&](const IterationRecord&) { ++iterations; };
    OptimizerConfig c = default_config(0);
    c.workers = 3;
    run_search(c, 2, 1.0, [](const DeformationParams&, std::uint64_t) { return 1.0; }, hooks);
    ASSERT_EQ(seen.size(), 100u);
    for (std::size_t k = 0; k < seen.size(); ++k) {
        EXPECT_EQ(seen[k], (CandidateId{static_cast<int>(k / 10) + 1, static_cast<int>(k % 10)}));
    }
    EXPECT_EQ(iterations, 10);
}

TEST(Records, JsonRoundTrip)
{
    CandidateRecord r;
    r.id = {3, 7};
    r.params = params_of({Vec3(0.1, -0.2, 1e-17), Vec3(0, 0, 0.3)});
    r.score = 0.123456789012345678;
    r.smoothness = smoothness_score(r.params);
    const CandidateRecord back = candidate_record_from_json(nlohmann::json::parse(to_json(r).dump()));
    EXPECT_EQ(back.id, r.id);
    EXPECT_EQ(back.params.displacements, r.params.displacements);
    EXPECT_EQ(back.score, r.score);
    EXPECT_EQ(back.smoothness, r.smoothness);
    EXPECT_FALSE(back.failed());

    r.failure = "timeout";
    r.score = kFailureScore;
    const CandidateRecord failed = candidate_record_from_json(to_json(r));
    EXPECT_EQ(*failed.failure, "timeout");
    EXPECT_EQ(to_json(r)["fail"], "timeout");
    for (const char* key : {"iter", "cand", "score", "ss", "theta", "fail"}) EXPECT_TRUE(to_json(r).contains(key));
}

TEST(Records, MissingKeyRejected)
{
    EXPECT_THROW(candidate_record_from_json(nlohmann::json::parse(R"({"iter":1,"cand":0})")), InputError);
}
