#include <gtest/gtest.h>

#include <numbers>

#include "fixtures.hpp"
#include "meshprobe/error.hpp"
#include "meshprobe/geometry.hpp"
#include "meshprobe/metrics.hpp"
#include "meshprobe/primitives.hpp"
#include "oracles.hpp"

using namespace meshprobe;

TEST(Curve, Formula)
{
    EXPECT_EQ(degradation_curve(1.0, {1, 0.5, 0}).values, std::vector<double>({0, 0.5, 1}));
    EXPECT_EQ(degradation_curve(0.8, {0.8, 0.8, 0.8}).values, std::vector<double>({0, 0, 0}));
    EXPECT_THROW(degradation_curve(0.0, {0.0}), InputError);
    EXPECT_THROW(degradation_curve(-1.0, {0.0}), InputError);
}

TEST(Curve, InsertionDegradation)
{
    const DegradationCurve c = degradation_curve(0.9, {0.9, 0.5, 0.225});
    EXPECT_EQ(c.values.back(), 0.75);
    EXPECT_EQ(final_drop(c), 0.75);
}

TEST(Curve, ClampsNoise)
{
    const DegradationCurve c = degradation_curve(0.5, {0.6, 0.4});
    EXPECT_TRUE(c.clamped);
    EXPECT_EQ(c.values[0], 0.0);
    EXPECT_FALSE(degradation_curve(0.5, {0.5, 0.4}).clamped);
}

TEST(Auc, Examples)
{
    EXPECT_EQ(auc(degradation_curve(1.0, {1, 0.5, 0})), 1.0);
    EXPECT_EQ(auc(degradation_curve(1.0, std::vector<double>(11, 1.0))), 0.0);
    EXPECT_EQ(auc(degradation_curve(1.0, std::vector<double>(11, 0.0))), 10.0);
    EXPECT_THROW(auc(degradation_curve(1.0, {0.5})), InputError);
}

TEST(Auc, AgreesWithGenericTrapezoid)
{
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s{1.0};
        for (int t = 0; t < 10; ++t) s.push_back(s.back() * rng.uniform());
        const DegradationCurve c = degradation_curve(1.0, s);
        EXPECT_NEAR(auc(c), trapezoid(c.values), 1e-12);
        EXPECT_NEAR(auc(c), oracle::trapezoid(c.values), 1e-12);
    }
}

TEST(FinalDrop, Examples)
{
    EXPECT_EQ(final_drop(degradation_curve(1.0, {1, 0.5, 0})), 1.0);
    const DegradationCurve c = degradation_curve(1.0, {1, 0.7, 0.7});
    EXPECT_DOUBLE_EQ(final_drop(c), 0.3);
    EXPECT_GE(final_drop(c), c.values.back());
}

TEST(IterAt50, Examples)
{
    EXPECT_EQ(iter_at_50(degradation_curve(0.9, {0.9, 0.5, 0.4})), 2);
    EXPECT_EQ(iter_at_50(degradation_curve(1.0, {1.0, 0.9, 0.8})), std::nullopt);
    EXPECT_EQ(iter_at_50(degradation_curve(1.0, {0.45, 0.4})), 0);
    // a tie at exactly half counts as reached
    EXPECT_EQ(iter_at_50(degradation_curve(1.0, {1.0, 0.5})), 1);
}

TEST(CatastrophicThreshold, TriggersIffHalfOrLess)
{
    const double s0 = 0.8;
    for (double s : {0.41, 0.400000001, 0.4, 0.39, 0.0}) {
        EXPECT_EQ(iter_at_50(degradation_curve(s0, {s0, s})).has_value(), s <= 0.5 * s0) << s;
    }
}

TEST(Entropy, CubeIsZero)
{
    EXPECT_EQ(complexity_entropy(make_cube()), 0.0);
}

TEST(Entropy, TwoEvenBinsIsLn2)
{
    const Mesh m = fixtures::frustum();
    const Eigen::VectorXd d = angular_deficits(m);
    // four bottom and four top corners, with different deficits
    EXPECT_GT(std::abs(d[0] - d[4]), 4 * std::numbers::pi / 64);
    EXPECT_NEAR(complexity_entropy(m), std::log(2.0), 1e-15);
}

TEST(Entropy, IcosphereMatchesRecount)
{
    const Mesh m = make_icosphere(2);
    const Eigen::VectorXd d = angular_deficits(m);
    const double want = oracle::histogram_entropy(std::vector<double>(d.data(), d.data() + d.size()), 64);
    const double got = complexity_entropy(m, 64);
    EXPECT_EQ(got, want);
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, std::log(64.0));
}

TEST(Entropy, IrregularSpherePositive)
{
    Mesh m = make_icosphere(2);
    Rng rng(12);
    for (int i = 0; i < m.num_vertices(); ++i) m.vertices.row(i) *= 1.0 + 0.2 * rng.uniform();
    const Eigen::VectorXd d = angular_deficits(m);
    const double h = complexity_entropy(m);
    EXPECT_EQ(h, oracle::histogram_entropy(std::vector<double>(d.data(), d.data() + d.size()), 64));
    EXPECT_GT(h, 0.0);
}

TEST(Entropy, BoundedByLogBins)
{
    for (const Mesh& m : {make_icosphere(1), make_icosphere(3), fixtures::frustum(),
                          load_obj(fixtures::assets_dir() / "plug.obj")}) {
        for (int bins : {2, 8, 64, 256}) {
            const double h = complexity_entropy(m, bins);
            EXPECT_GE(h, 0.0);
            EXPECT_LE(h, std::log(static_cast<double>(bins)) + 1e-12);
        }
    }
    EXPECT_THROW(complexity_entropy(make_cube(), 1), InputError);
}

TEST(Median, LowerMiddle)
{
    EXPECT_EQ(lower_median({0.1, 0.3, 0.2}), 0.2);
    EXPECT_EQ(lower_median({4, 1, 3, 2}), 2);
    EXPECT_EQ(lower_median({7}), 7);
    EXPECT_THROW(lower_median({}), InputError);
}

namespace {

RunLog zero_log(int handles, int count)
{
    RunLog log;
    for (int i = 0; i < count; ++i) {
        CandidateRecord r;
        r.id = {1, i};
        r.params = DeformationParams::zeros(handles);
        r.score = 0.1 * i;
        log.records.push_back(r);
    }
    return log;
}

} // namespace

TEST(DeltaComplexity, ZeroDisplacementsGiveZero)
{
    const Mesh m = make_icosphere(2);
    const DeformPipeline pipe(m, {0, 1, 2}, {100, 101, 102, 103}, SolverOptions{});
    const ComplexityDelta d = delta_complexity(zero_log(3, 14), pipe);
    EXPECT_EQ(d.median, 0.0);
    EXPECT_EQ(d.candidates.size(), 10u);
    // the ten lowest scores are candidates 0..9
    for (int i = 0; i < 10; ++i) EXPECT_EQ(d.candidates[static_cast<std::size_t>(i)].candidate, i);
}

TEST(DeltaComplexity, FewerThanTenCandidates)
{
    const Mesh m = make_icosphere(1);
    const DeformPipeline pipe(m, {0}, {20, 21, 22}, SolverOptions{});
    const ComplexityDelta d = delta_complexity(zero_log(1, 3), pipe);
    EXPECT_EQ(d.deltas.size(), 3u);
}

TEST(DeltaComplexity, SkipsFailedAndMatchesDirectComputation)
{
    const Mesh m = make_icosphere(2);
    const DeformPipeline pipe(m, {0, 1}, {100, 101, 102}, SolverOptions{});
    RunLog log = zero_log(2, 4);
    log.records[1].params.displacements.row(0) << 0.2, 0.1, 0;
    log.records[2].params.displacements.row(1) << 0, 0, 0.3;
    log.records[3].failure = "timeout";
    log.records[3].score = kFailureScore;
    const ComplexityDelta d = delta_complexity(log, pipe);
    ASSERT_EQ(d.deltas.size(), 3u);
    const double base = complexity_entropy(m);
    std::vector<double> want;
    for (int i = 0; i < 3; ++i) want.push_back(complexity_entropy(pipe.deform(log.records[i].params).mesh) - base);
    EXPECT_EQ(d.deltas, want);
    EXPECT_EQ(d.median, lower_median(want));
}

TEST(Chamfer, IdentityAndSymmetry)
{
    const Mesh a = make_icosphere(2);
    Mesh b = a;
    b.vertices *= 1.2;
    EXPECT_EQ(chamfer_distance(a, a, 500, 1), 0.0);
    EXPECT_NEAR(chamfer_distance(a, b, 500, 1), chamfer_distance(b, a, 500, 1), 1e-15);
    EXPECT_EQ(chamfer_distance(a, b, 500, 1), chamfer_distance(a, b, 500, 1));
}

TEST(Chamfer, TranslatedPointLikeMesh)
{
    const Mesh a = make_triangle(Vec3(0, 0, 0), Vec3(1e-6, 0, 0), Vec3(0, 1e-6, 0));
    Mesh b = a;
    b.vertices.col(0).array() += 1.0;
    EXPECT_NEAR(chamfer_distance(a, b, 200, 3), 2.0, 1e-5);
}

TEST(Chamfer, ShrinksAlongBlend)
{
    const Mesh a = make_icosphere(2);
    Mesh far = a;
    far.vertices = a.vertices * 1.5;
    far.vertices.col(2).array() += 0.3;
    double previous = 1e300;
    for (double s : {0.0, 0.5, 1.0}) {
        Mesh b = a;
        b.vertices = (1 - s) * far.vertices + s * a.vertices;
        const double d = chamfer_distance(a, b, 1000, 2);
        EXPECT_LT(d, previous);
        previous = d;
    }
    EXPECT_EQ(previous, 0.0);
}

TEST(Report, JsonAndAggregate)
{
    MetricsReport a = curve_metrics(1.0, {1.0, 0.4, 0.3});
    MetricsReport b = curve_metrics(1.0, {1.0, 0.9, 0.8});
    EXPECT_EQ(a.iter_at_50, 1);
    EXPECT_EQ(b.iter_at_50, std::nullopt);
    EXPECT_EQ(b.iter_at_50_or_budget(), 2);
    EXPECT_DOUBLE_EQ(a.best_score, 0.3);

    const nlohmann::json ja = to_json(a);
    EXPECT_DOUBLE_EQ(ja["final_drop"].get<double>(), 0.7);
    EXPECT_TRUE(ja["delta_complexity"].is_null());
    EXPECT_TRUE(to_json(b)["iter_at_50"].is_null());

    const nlohmann::json agg = aggregate_reports({a, b});
    EXPECT_EQ(agg["runs"], 2);
    EXPECT_DOUBLE_EQ(agg["final_drop"].get<double>(), (0.7 + 0.2) / 2);
    EXPECT_DOUBLE_EQ(agg["iter_at_50_or_budget"].get<double>(), 1.5);
    EXPECT_DOUBLE_EQ(agg["iter_at_50_reached"].get<double>(), 1.0);
    EXPECT_EQ(agg["runs_reaching_50"], 1);
    EXPECT_THROW(aggregate_reports({}), InputError);
}
