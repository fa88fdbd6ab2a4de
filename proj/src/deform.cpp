#include "meshprobe/deform.hpp"

#include <algorithm>
#include <set>
#include <string>

#include <Eigen/QR>

namespace meshprobe {

namespace {

Eigen::MatrixX3d gather_rows(const Eigen::MatrixX3d& m, const std::vector<int>& rows)
{
    Eigen::MatrixX3d out(static_cast<Eigen::Index>(rows.size()), 3);
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

} // namespace

AnchorSet AnchorSet::at_rest(const Mesh& mesh, std::vector<int> indices)
{
    AnchorSet set;
    set.targets = gather_rows(mesh.vertices, indices);
    set.indices = std::move(indices);
    return set;
}

void SolverOptions::check() const
{
    if (!(lambda > 0.0)) throw InputError("solver lambda must be positive");
    if (!(tol > 0.0)) throw InputError("solver tol must be positive");
    if (!(step_size > 0.0)) throw InputError("solver step_size must be positive");
    if (max_iters < 0) throw InputError("solver max_iters must be non-negative");
}

nlohmann::json to_json(const SolverOptions& o)
{
    return {{"lambda", o.lambda},
            {"max_iters", o.max_iters},
            {"step_size", o.step_size},
            {"tol", o.tol},
            {"method", o.method == FitMethod::direct ? "direct" : "descent"},
            {"metric", o.metric == FieldMetric::area ? "area" : "euclidean"}};
}

SolverOptions solver_options_from_json(const nlohmann::json& j)
{
    SolverOptions o;
    if (j.is_null()) return o;
    if (!j.is_object()) throw InputError("deform options must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "lambda" && key != "max_iters" && key != "step_size" && key != "tol" && key != "method"
            && key != "metric") {
            throw InputError("unknown deform option '" + key + "'");
        }
    }
    try {
        o.lambda = j.value("lambda", o.lambda);
        o.max_iters = j.value("max_iters", o.max_iters);
        o.step_size = j.value("step_size", o.step_size);
        o.tol = j.value("tol", o.tol);
        const std::string method = j.value("method", std::string("direct"));
        if (method == "direct") o.method = FitMethod::direct;
        else if (method == "descent") o.method = FitMethod::descent;
        else throw InputError("unknown deform method '" + method + "'");
        const std::string metric = j.value("metric", std::string("area"));
        if (metric == "area") o.metric = FieldMetric::area;
        else if (metric == "euclidean") o.metric = FieldMetric::euclidean;
        else throw InputError("unknown field metric '" + metric + "'");
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("deform options: ") + e.what());
    }
    o.check();
    return o;
}

PoissonSystem::PoissonSystem(const MeshOperators& ops, const AnchorSet& anchors, double lambda)
    : laplacian_(ops.laplacian), gradient_(ops.gradient), mass_(ops.mass), lambda_(lambda)
{
    const int n = ops.num_vertices();
    if (anchors.indices.empty()) {
        throw InputError("the Poisson system is singular without anchors; supply at least one anchor vertex");
    }
    if (static_cast<Eigen::Index>(anchors.indices.size()) != anchors.targets.rows()) {
        throw InputError("anchor targets do not match anchor indices");
    }
    if (!(lambda > 0.0)) throw InputError("lambda must be positive");

    divergence_ = SparseMatrix(gradient_.transpose()) * mass_.asDiagonal();

    SparseMatrix selector(static_cast<Eigen::Index>(anchors.indices.size()), n);
    std::vector<Eigen::Triplet<double>> trip;
    for (std::size_t i = 0; i < anchors.indices.size(); ++i) {
        const int v = anchors.indices[i];
        if (v < 0 || v >= n) throw InputError("anchor index " + std::to_string(v) + " out of range");
        trip.emplace_back(static_cast<int>(i), v, 1.0);
    }
    selector.setFromTriplets(trip.begin(), trip.end());

    const SparseMatrix anchor_term = SparseMatrix(selector.transpose()) * selector;
    system_ = SparseMatrix(laplacian_.transpose()) * laplacian_ + lambda * anchor_term;
    system_.makeCompressed();
    anchor_rhs_ = lambda * (selector.transpose() * anchors.targets);

    cholesky_.compute(system_);
    if (cholesky_.info() != Eigen::Success) {
        throw NumericalError("Cholesky factorization of the Poisson system failed; every connected "
                             "component needs an anchor");
    }
}

Eigen::MatrixX3d PoissonSystem::rhs(const JacobianField& field) const
{
    return laplacian_ * (divergence_ * field.stacked) + anchor_rhs_;
}

Eigen::MatrixX3d PoissonSystem::solve(const JacobianField& field) const
{
    if (field.stacked.rows() != gradient_.rows()) {
        throw InputError("Jacobian field has " + std::to_string(field.stacked.rows()) + " rows, expected "
                         + std::to_string(gradient_.rows()));
    }
    Eigen::MatrixX3d v = cholesky_.solve(rhs(field));
    if (cholesky_.info() != Eigen::Success || !v.allFinite()) {
        throw NumericalError("Poisson solve failed");
    }
    return v;
}

Eigen::MatrixXd PoissonSystem::solve_raw(const Eigen::MatrixXd& b) const
{
    return cholesky_.solve(b);
}

double PoissonSystem::normal_residual(const JacobianField& field, const Eigen::MatrixX3d& positions) const
{
    return (system_ * positions - rhs(field)).cwiseAbs().maxCoeff();
}

Eigen::MatrixX3d poisson_solve(const MeshOperators& ops, const JacobianField& field,
                               const AnchorSet& anchors, double lambda)
{
    return PoissonSystem(ops, anchors, lambda).solve(field);
}

HandleLoss handle_loss(const PoissonSystem& system, const JacobianField& field, const HandleSet& handles)
{
    const Eigen::MatrixX3d v = system.solve(field);
    Eigen::MatrixX3d dloss_dv = Eigen::MatrixX3d::Zero(v.rows(), 3);
    HandleLoss out;
    for (std::size_t i = 0; i < handles.indices.size(); ++i) {
        const int h = handles.indices[i];
        const Eigen::RowVector3d r = v.row(h) - handles.targets.row(static_cast<Eigen::Index>(i));
        out.loss += r.squaredNorm();
        dloss_dv.row(h) += 2.0 * r;
    }
    // adjoint: dL/dJ = (L grad^T A)^T S^{-1} dL/dV, with S and L symmetric
    const Eigen::MatrixX3d adjoint = system.solve_raw(dloss_dv);
    const Eigen::MatrixX3d lap_adjoint = system.laplacian() * adjoint;
    out.grad.stacked = system.divergence().transpose() * lap_adjoint;
    return out;
}

HandleLoss handle_loss(const MeshOperators& ops, const JacobianField& field, const AnchorSet& anchors,
                       const HandleSet& handles, double lambda)
{
    return handle_loss(PoissonSystem(ops, anchors, lambda), field, handles);
}

void check_handle_anchor_sets(int num_vertices, const std::vector<int>& handles,
                              const std::vector<int>& anchors)
{
    auto check_set = [&](const std::vector<int>& set, const char* name) {
        std::set<int> seen;
        for (int v : set) {
            if (v < 0 || v >= num_vertices) {
                throw InputError(std::string(name) + " index " + std::to_string(v) + " out of range [0, "
                                 + std::to_string(num_vertices) + ")");
            }
            if (!seen.insert(v).second) {
                throw InputError(std::string(name) + " index " + std::to_string(v) + " is repeated");
            }
        }
        return seen;
    };
    const auto hs = check_set(handles, "handle");
    const auto as = check_set(anchors, "anchor");
    for (int v : hs) {
        if (as.count(v)) throw InputError("vertex " + std::to_string(v) + " is both a handle and an anchor");
    }
    if (anchors.empty()) throw InputError("at least one anchor vertex is required");
}

DeformationSolver::DeformationSolver(const Mesh& mesh, std::vector<int> handle_indices,
                                     const AnchorSet& anchors, const SolverOptions& opts)
    : mesh_(mesh), ops_(build_operators(mesh)), handles_(std::move(handle_indices)), opts_(opts)
{
    opts_.check();
    check_handle_anchor_sets(mesh.num_vertices(), handles_, anchors.indices);
    system_ = std::make_unique<PoissonSystem>(ops_, anchors, opts_.lambda);
    rest_field_.stacked = face_jacobians(ops_, mesh.vertices);
    rest_solution_ = system_->solve(rest_field_);

    const int n = mesh.num_vertices();
    const auto m = static_cast<Eigen::Index>(handles_.size());
    Eigen::MatrixXd selector_t = Eigen::MatrixXd::Zero(n, m);
    for (Eigen::Index i = 0; i < m; ++i) selector_t(handles_[static_cast<std::size_t>(i)], i) = 1.0;
    const Eigen::MatrixXd z = system_->solve_raw(selector_t);
    laplacian_z_ = ops_.laplacian * z;

    // Q = grad^T A W^{-1} A grad: L for the area metric, grad^T A^2 grad otherwise
    Eigen::MatrixXd q_lz;
    if (opts_.metric == FieldMetric::area) {
        q_lz = ops_.laplacian * laplacian_z_;
    } else {
        const Eigen::MatrixXd a_grad = ops_.mass.asDiagonal() * (ops_.gradient * laplacian_z_);
        q_lz = SparseMatrix(ops_.gradient.transpose()) * (ops_.mass.asDiagonal() * a_grad);
    }
    const Eigen::MatrixXd gram = laplacian_z_.transpose() * q_lz;
    response_ = system_->solve_raw(ops_.laplacian * q_lz);
    gram_pinv_ = Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd>(gram).pseudoInverse();
}

FitResult DeformationSolver::fit(const Eigen::MatrixX3d& handle_targets) const
{
    return opts_.method == FitMethod::direct ? fit_direct(handle_targets) : fit_descent(handle_targets);
}

FitResult DeformationSolver::fit_direct(const Eigen::MatrixX3d& handle_targets) const
{
    if (handle_targets.rows() != static_cast<Eigen::Index>(handles_.size())) {
        throw InputError("expected " + std::to_string(handles_.size()) + " handle targets, got "
                         + std::to_string(handle_targets.rows()));
    }
    const Eigen::MatrixX3d residual = handle_targets - gather_rows(rest_solution_, handles_);
    const Eigen::MatrixX3d y = gram_pinv_ * residual;

    FitResult out;
    out.positions = rest_solution_ + response_ * y;
    Eigen::MatrixX3d delta = ops_.gradient * (laplacian_z_ * y);
    if (opts_.metric == FieldMetric::euclidean) delta = ops_.mass.asDiagonal() * delta;
    out.field.stacked = rest_field_.stacked + delta;
    out.loss = (gather_rows(out.positions, handles_) - handle_targets).squaredNorm();
    out.converged = out.loss < opts_.tol;
    out.iterations = 1;
    return out;
}

FitResult DeformationSolver::fit_descent(const Eigen::MatrixX3d& handle_targets) const
{
    if (handle_targets.rows() != static_cast<Eigen::Index>(handles_.size())) {
        throw InputError("expected " + std::to_string(handles_.size()) + " handle targets, got "
                         + std::to_string(handle_targets.rows()));
    }
    const HandleSet handles{handles_, handle_targets};
    FitResult out;
    out.field = rest_field_;
    for (int it = 0;; ++it) {
        HandleLoss hl = handle_loss(*system_, out.field, handles);
        out.loss = hl.loss;
        out.iterations = it;
        if (hl.loss < opts_.tol) {
            out.converged = true;
            break;
        }
        if (it == opts_.max_iters) break;
        if (opts_.metric == FieldMetric::area) hl.grad.stacked = ops_.mass.cwiseInverse().asDiagonal() * hl.grad.stacked;
        out.field.stacked -= opts_.step_size * hl.grad.stacked;
    }
    out.positions = system_->solve(out.field);
    return out;
}

FitResult fit(const Mesh& mesh, const HandleSet& handles, const AnchorSet& anchors, const SolverOptions& opts)
{
    if (handles.targets.rows() != static_cast<Eigen::Index>(handles.indices.size())) {
        throw InputError("handle targets do not match handle indices");
    }
    const DeformationSolver solver(mesh, handles.indices, anchors, opts);
    return solver.fit(handles.targets);
}

DeformPipeline::DeformPipeline(const Mesh& mesh, std::vector<int> handle_indices,
                               std::vector<int> anchor_indices, const SolverOptions& opts)
    : original_(mesh), handles_(std::move(handle_indices)), anchors_(std::move(anchor_indices))
{
    check_handle_anchor_sets(mesh.num_vertices(), handles_, anchors_);
    auto [normalized, transform] = normalize(mesh);
    normalized_ = std::move(normalized);
    transform_ = transform;
    solver_ = std::make_unique<DeformationSolver>(normalized_, handles_, AnchorSet::at_rest(normalized_, anchors_),
                                                  opts);
}

DeformResult DeformPipeline::deform(const DeformationParams& params) const
{
    if (params.handle_count() != handle_count()) {
        throw InputError("expected displacements for " + std::to_string(handle_count()) + " handles, got "
                         + std::to_string(params.handle_count()));
    }
    const Eigen::MatrixX3d targets = gather_rows(normalized_.vertices, handles_) + params.displacements;
    const FitResult fitted = solver_->fit(targets);

    DeformResult out;
    out.handle_loss = fitted.loss;
    out.iterations = fitted.iterations;
    out.converged = fitted.converged;
    out.mesh = Mesh{transform_.invert(fitted.positions), original_.faces};

    const Eigen::MatrixX3d rest_anchors = gather_rows(original_.vertices, anchors_);
    try {
        const RigidTransform align = procrustes_align(gather_rows(out.mesh.vertices, anchors_), rest_anchors);
        out.mesh.vertices = align.apply(out.mesh.vertices);
        out.aligned = true;
    } catch (const InputError&) {
        // fewer than three non-collinear anchors: leave the solve's placement as is
        out.aligned = false;
    }
    const Eigen::MatrixX3d moved = gather_rows(out.mesh.vertices, anchors_);
    out.anchor_drift = (moved - rest_anchors).rowwise().norm().mean();
    return out;
}

DeformResult deform_pipeline(const Mesh& mesh, const std::vector<int>& handles, const std::vector<int>& anchors,
                             const DeformationParams& params, const SolverOptions& opts)
{
    return DeformPipeline(mesh, handles, anchors, opts).deform(params);
}

nlohmann::json matrix_to_json(const Eigen::MatrixX3d& m)
{
    auto rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back({m(i, 0), m(i, 1), m(i, 2)});
    return rows;
}

Eigen::MatrixX3d matrix_from_json(const nlohmann::json& j, const std::string& field)
{
    if (!j.is_array()) throw InputError("'" + field + "' must be an array of [x,y,z] rows");
    Eigen::MatrixX3d m(static_cast<Eigen::Index>(j.size()), 3);
    for (std::size_t i = 0; i < j.size(); ++i) {
        const auto& row = j[i];
        if (!row.is_array() || row.size() != 3) {
            throw InputError("'" + field + "' row " + std::to_string(i) + " is not a 3-vector");
        }
        for (std::size_t k = 0; k < 3; ++k) {
            if (!row[k].is_number()) throw InputError("'" + field + "' row " + std::to_string(i) + " has a non-number");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = row[k].get<double>();
        }
    }
    return m;
}

namespace {

std::vector<int> index_list(const nlohmann::json& j, const char* field)
{
    if (!j.is_array()) throw InputError(std::string("'") + field + "' must be an array of integers");
    std::vector<int> out;
    for (const auto& v : j) {
        if (!v.is_number_integer()) throw InputError(std::string("'") + field + "' must contain integers");
        out.push_back(v.get<int>());
    }
    return out;
}

} // namespace

DeformationDocument parse_deformation_document(const nlohmann::json& j)
{
    if (!j.is_object()) throw InputError("deformation document must be a JSON object");
    DeformationDocument doc;
    if (j.contains("handles")) doc.handles = index_list(j["handles"], "handles");
    if (j.contains("anchors")) doc.anchors = index_list(j["anchors"], "anchors");
    if (j.contains("displacements")) {
        doc.displacements = DeformationParams{matrix_from_json(j["displacements"], "displacements")};
    }
    return doc;
}

nlohmann::json to_json(const DeformationDocument& doc)
{
    nlohmann::json j;
    j["handles"] = doc.handles;
    j["anchors"] = doc.anchors;
    j["displacements"] = doc.displacements ? matrix_to_json(doc.displacements->displacements)
                                           : nlohmann::json::array();
    return j;
}

} // namespace meshprobe
