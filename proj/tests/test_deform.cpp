#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "meshprobe/deform.hpp"
#include "meshprobe/primitives.hpp"
#include "meshprobe/random.hpp"

using namespace meshprobe;

namespace {

JacobianField rest_field(const MeshOperators& ops, const Mesh& m)
{
    return {face_jacobians(ops, m.vertices)};
}

Mesh unit_sphere()
{
    return normalize(make_icosphere(2)).first;
}

int top_vertex(const Mesh& m)
{
    int best = 0;
    for (int i = 1; i < m.num_vertices(); ++i) {
        if (m.vertices(i, 2) > m.vertices(best, 2)) best = i;
    }
    return best;
}

std::vector<int> below(const Mesh& m, double z)
{
    std::vector<int> out;
    for (int i = 0; i < m.num_vertices(); ++i) {
        if (m.vertices(i, 2) < z) out.push_back(i);
    }
    return out;
}

/// ~20 vertices: a box with a 2x1x1 cell grid.
Mesh small_box()
{
    return make_box(Vec3(0, 0, 0), Vec3(2, 1, 1), Eigen::Vector3i(2, 1, 2));
}

} // namespace

TEST(Poisson, RestFieldReproducesRest)
{
    for (const Mesh& m : {make_cube(), unit_sphere(), small_box()}) {
        const MeshOperators ops = build_operators(m);
        const AnchorSet anchors = AnchorSet::at_rest(m, {0, 1, 2});
        const Eigen::MatrixX3d v = poisson_solve(ops, rest_field(ops, m), anchors, 1e4);
        EXPECT_LE((v - m.vertices).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Poisson, TranslatedAnchorTranslatesMesh)
{
    const Mesh m = unit_sphere();
    const MeshOperators ops = build_operators(m);
    AnchorSet anchors = AnchorSet::at_rest(m, {0});
    anchors.targets.row(0) += Eigen::RowVector3d(0.1, 0, 0);
    const Eigen::MatrixX3d v = poisson_solve(ops, rest_field(ops, m), anchors, 1e6);
    const Eigen::MatrixX3d shift = v - m.vertices;
    for (int i = 0; i < m.num_vertices(); ++i) {
        EXPECT_NEAR(shift(i, 0), 0.1, 1e-6);
        EXPECT_NEAR(shift(i, 1), 0.0, 1e-6);
        EXPECT_NEAR(shift(i, 2), 0.0, 1e-6);
    }
}

TEST(Poisson, NormalResidualOnRandomField)
{
    const Mesh m = unit_sphere();
    const MeshOperators ops = build_operators(m);
    const PoissonSystem sys(ops, AnchorSet::at_rest(m, {0, 5, 9}), 1e4);
    Rng rng(11);
    JacobianField field = rest_field(ops, m);
    for (int i = 0; i < field.stacked.size(); ++i) field.stacked.data()[i] += 0.1 * rng.normal();
    EXPECT_LT(sys.normal_residual(field, sys.solve(field)), 1e-8);
}

TEST(HandleLoss, ZeroAtRest)
{
    const Mesh m = small_box();
    const MeshOperators ops = build_operators(m);
    const AnchorSet anchors = AnchorSet::at_rest(m, {0, 1});
    const HandleSet handles{{7}, m.vertices.row(7)};
    const HandleLoss hl = handle_loss(ops, rest_field(ops, m), anchors, handles, 1e4);
    EXPECT_LT(hl.loss, 1e-20);
    EXPECT_LT(hl.grad.stacked.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(HandleLoss, GradientMatchesFiniteDifferences)
{
    const Mesh m = small_box();
    ASSERT_LE(m.num_vertices(), 50);
    const MeshOperators ops = build_operators(m);
    const PoissonSystem sys(ops, AnchorSet::at_rest(m, {0, 1, 2}), 1e4);
    HandleSet handles{{m.num_vertices() - 1, m.num_vertices() - 2}, Eigen::MatrixX3d(2, 3)};
    handles.targets.row(0) = m.vertices.row(handles.indices[0]) + Eigen::RowVector3d(0.1, -0.05, 0.2);
    handles.targets.row(1) = m.vertices.row(handles.indices[1]) + Eigen::RowVector3d(-0.1, 0.1, 0.0);

    Rng rng(2);
    JacobianField field = rest_field(ops, m);
    for (int i = 0; i < field.stacked.size(); ++i) field.stacked.data()[i] += 0.05 * rng.normal();

    const HandleLoss hl = handle_loss(sys, field, handles);
    const double eps = 1e-5;
    double worst = 0.0;
    for (int i = 0; i < field.stacked.size(); ++i) {
        JacobianField plus = field, minus = field;
        plus.stacked.data()[i] += eps;
        minus.stacked.data()[i] -= eps;
        const double fd = (handle_loss(sys, plus, handles).loss - handle_loss(sys, minus, handles).loss) / (2 * eps);
        const double an = hl.grad.stacked.data()[i];
        worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an))));
    }
    EXPECT_LT(worst, 1e-4);
}

TEST(HandleLoss, FirstDescentStepDecreasesLoss)
{
    const Mesh m = unit_sphere();
    const int h = top_vertex(m);
    const AnchorSet anchors = AnchorSet::at_rest(m, below(m, -0.3));
    HandleSet handles{{h}, m.vertices.row(h)};
    handles.targets(0, 2) += 0.1;
    SolverOptions o;
    o.method = FitMethod::descent;
    const DeformationSolver solver(m, {h}, anchors, o);
    const double before = handle_loss(solver.system(), solver.rest_field(), handles).loss;
    o.max_iters = 1;
    const DeformationSolver one(m, {h}, anchors, o);
    const FitResult r = one.fit(handles.targets);
    EXPECT_GT(before, 0.0);
    EXPECT_LT(r.loss, before);
}

TEST(Fit, ZeroDisplacementIsIdentity)
{
    for (FitMethod method : {FitMethod::direct, FitMethod::descent}) {
        const Mesh m = unit_sphere();
        const int h = top_vertex(m);
        SolverOptions o;
        o.method = method;
        const FitResult r = fit(m, HandleSet{{h}, m.vertices.row(h)}, AnchorSet::at_rest(m, below(m, -0.3)), o);
        EXPECT_LE((r.positions - m.vertices).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Fit, SingleHandlePull)
{
    for (FitMethod method : {FitMethod::direct, FitMethod::descent}) {
        const Mesh m = unit_sphere();
        const int h = top_vertex(m);
        const std::vector<int> ring = below(m, -0.3);
        HandleSet handles{{h}, m.vertices.row(h)};
        handles.targets(0, 2) += 0.1;
        SolverOptions o;
        o.method = method;
        const FitResult r = fit(m, handles, AnchorSet::at_rest(m, ring), o);
        EXPECT_LE((r.positions.row(h) - handles.targets.row(0)).norm(), 1e-3);
        for (int a : ring) EXPECT_LE((r.positions.row(a) - m.vertices.row(a)).norm(), 1e-3);
        EXPECT_TRUE(r.converged);
        EXPECT_LE(r.iterations, 500);
    }
}

TEST(Fit, MethodsAgree)
{
    const Mesh m = unit_sphere();
    const int h = top_vertex(m);
    HandleSet handles{{h}, m.vertices.row(h)};
    handles.targets.row(0) += Eigen::RowVector3d(0.05, 0.0, 0.08);
    const AnchorSet anchors = AnchorSet::at_rest(m, below(m, -0.3));
    SolverOptions d, g;
    g.method = FitMethod::descent;
    g.max_iters = 5000;
    g.tol = 1e-12;
    const FitResult a = fit(m, handles, anchors, d);
    const FitResult b = fit(m, handles, anchors, g);
    EXPECT_LE((a.positions - b.positions).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Fit, OverlapRejected)
{
    const Mesh m = make_cube();
    EXPECT_THROW(fit(m, HandleSet{{0, 1}, m.vertices.topRows(2)}, AnchorSet::at_rest(m, {1, 2}), {}), InputError);
    EXPECT_THROW(check_handle_anchor_sets(8, {0, 0}, {1}), InputError);
    EXPECT_THROW(check_handle_anchor_sets(8, {9}, {1}), InputError);
}

TEST(Pipeline, ZeroThetaIdentity)
{
    std::vector<Mesh> meshes = {make_cube(), make_icosphere(2, 3.0), load_obj(fixtures::assets_dir() / "plug.obj")};
    for (const Mesh& m : meshes) {
        const double zmin = m.vertices.col(2).minCoeff();
        const DeformResult r = deform_pipeline(m, {top_vertex(m)}, below(m, zmin + 0.3 * bbox_extent(m.vertices).z()),
                                               DeformationParams::zeros(1), {});
        EXPECT_LE((r.mesh.vertices - m.vertices).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Pipeline, AnchorDriftSmall)
{
    const Mesh m = make_icosphere(2, 2.0);
    const int h = top_vertex(m);
    const std::vector<int> ring = below(m, -0.6);
    DeformationParams p = DeformationParams::zeros(1);
    p.displacements.row(0) << 0.02, -0.01, 0.05;
    const DeformResult r = deform_pipeline(m, {h}, ring, p, {});
    const double extent = bbox_extent(m.vertices).maxCoeff();
    double drift = 0.0;
    for (int a : ring) drift += (r.mesh.vertices.row(a) - m.vertices.row(a)).norm();
    drift /= static_cast<double>(ring.size());
    EXPECT_LE(drift, 1e-3 * extent);
    EXPECT_NEAR(r.anchor_drift, drift, 1e-9);
    EXPECT_TRUE(r.aligned);
}

TEST(Pipeline, SmallDeformationStaysWatertight)
{
    const Mesh m = make_icosphere(2);
    const int h = top_vertex(m);
    DeformationParams p = DeformationParams::zeros(1);
    p.displacements(0, 2) = 0.03;
    const DeformResult r = deform_pipeline(m, {h}, below(m, -0.3), p, {});
    const ValidationReport v = validate(r.mesh);
    EXPECT_TRUE(v.watertight);
    EXPECT_TRUE(v.manifold);
}

TEST(Pipeline, HandleMovesByDisplacementInOriginalUnits)
{
    Mesh m = make_icosphere(2, 5.0); // extent 10, so normalized scale 0.1
    const int h = top_vertex(m);
    DeformationParams p = DeformationParams::zeros(1);
    p.displacements(0, 2) = 0.05;
    const DeformPipeline pipe(m, {h}, below(m, -1.5), {});
    const DeformResult r = pipe.deform(p);
    EXPECT_NEAR(r.mesh.vertices(h, 2) - m.vertices(h, 2), 0.5, 0.02);
    EXPECT_LT(r.handle_loss, 1e-6);
}

TEST(Pipeline, ReusableAcrossCalls)
{
    const Mesh m = make_icosphere(1);
    const int h = top_vertex(m);
    const DeformPipeline pipe(m, {h}, below(m, -0.3), {});
    DeformationParams p = DeformationParams::zeros(1);
    p.displacements(0, 0) = 0.04;
    const DeformResult a = pipe.deform(p);
    const DeformResult b = pipe.deform(p);
    EXPECT_EQ(a.mesh.vertices, b.mesh.vertices);
}

TEST(Document, RoundTrip)
{
    DeformationDocument d;
    d.handles = {3, 4};
    d.anchors = {0, 1, 2};
    d.displacements = DeformationParams::zeros(2);
    d.displacements->displacements(1, 2) = 0.25;
    const DeformationDocument e = parse_deformation_document(to_json(d));
    EXPECT_EQ(e.handles, d.handles);
    EXPECT_EQ(e.anchors, d.anchors);
    EXPECT_EQ(e.displacements->displacements, d.displacements->displacements);
    EXPECT_THROW(matrix_from_json(nlohmann::json::parse("[[1,2]]"), "displacements"), InputError);
}

TEST(SolverOptions, JsonRoundTripAndValidation)
{
    SolverOptions o;
    o.lambda = 123.0;
    o.method = FitMethod::descent;
    const SolverOptions p = solver_options_from_json(to_json(o));
    EXPECT_EQ(p.lambda, 123.0);
    EXPECT_EQ(p.method, FitMethod::descent);
    EXPECT_THROW(solver_options_from_json(nlohmann::json{{"lamda", 1}}), InputError);
    o.lambda = -1;
    EXPECT_THROW(o.check(), InputError);
}
