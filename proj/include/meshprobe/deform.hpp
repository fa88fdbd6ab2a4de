#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <nlohmann/json.hpp>

#include "meshprobe/geometry.hpp"
#include "meshprobe/mesh.hpp"
#include "meshprobe/operators.hpp"

namespace meshprobe {

/// Vertices pulled toward target positions (K_h selects `indices`).
struct HandleSet {
    std::vector<int> indices;
    Eigen::MatrixX3d targets;
};

/// Vertices held at target positions by the soft anchor term.
struct AnchorSet {
    std::vector<int> indices;
    Eigen::MatrixX3d targets;

    static AnchorSet at_rest(const Mesh& mesh, std::vector<int> indices);
};

/// Per-handle displacement vectors in normalized mesh units; the search point
/// of the red-team optimizer.
struct DeformationParams {
    Eigen::MatrixX3d displacements;

    static DeformationParams zeros(int handle_count)
    {
        return {Eigen::MatrixX3d::Zero(handle_count, 3)};
    }
    int handle_count() const { return static_cast<int>(displacements.rows()); }
};

/// One 3x3 block per face, stacked in the layout of MeshOperators::gradient.
struct JacobianField {
    Eigen::MatrixX3d stacked;

    int num_faces() const { return static_cast<int>(stacked.rows() / 3); }
    Eigen::Matrix3d block(int face) const { return stacked.middleRows<3>(3 * face); }
};

enum class FitMethod {
    descent, ///< fixed-step gradient descent on the field
    direct,  ///< closed-form minimizer that descent converges to
};

/// Inner product on the Jacobian field used for descent steps.
enum class FieldMetric {
    area,      ///< faces weighted by their mass entry
    euclidean, ///< plain coefficient-wise inner product
};

struct SolverOptions {
    double lambda = 1e4;
    int max_iters = 500;
    double step_size = 0.1;
    double tol = 1e-6;
    FitMethod method = FitMethod::direct;
    FieldMetric metric = FieldMetric::area;

    void check() const;
};

nlohmann::json to_json(const SolverOptions& opts);
SolverOptions solver_options_from_json(const nlohmann::json& j);

/// Factored normal equations of
///   min_V |L V - grad^T A J|^2 + lambda |K_a V - T_a|^2,
/// i.e. (L^T L + lambda K_a^T K_a) V = L grad^T A J + lambda K_a^T T_a.
/// The factorization depends only on the mesh, anchors and lambda.
class PoissonSystem {
public:
    PoissonSystem(const MeshOperators& ops, const AnchorSet& anchors, double lambda);

    Eigen::MatrixX3d rhs(const JacobianField& field) const;
    Eigen::MatrixX3d solve(const JacobianField& field) const;
    /// Solves the system matrix against arbitrary right-hand sides.
    Eigen::MatrixXd solve_raw(const Eigen::MatrixXd& b) const;
    /// Max-abs residual of the normal equations at `positions`.
    double normal_residual(const JacobianField& field, const Eigen::MatrixX3d& positions) const;

    const SparseMatrix& laplacian() const { return laplacian_; }
    const SparseMatrix& divergence() const { return divergence_; }
    const SparseMatrix& gradient() const { return gradient_; }
    const Eigen::VectorXd& mass() const { return mass_; }
    double lambda() const { return lambda_; }

private:
    SparseMatrix laplacian_;
    SparseMatrix gradient_;
    SparseMatrix divergence_; // grad^T diag(mass)
    Eigen::VectorXd mass_;
    SparseMatrix system_;
    Eigen::MatrixX3d anchor_rhs_;
    double lambda_;
    Eigen::SimplicialLLT<SparseMatrix> cholesky_;
};

Eigen::MatrixX3d poisson_solve(const MeshOperators& ops, const JacobianField& field,
                               const AnchorSet& anchors, double lambda);

struct HandleLoss {
    double loss = 0.0;
    JacobianField grad; ///< d loss / d J, same layout as the field
};

/// |K_h V*(J) - T_h|^2 and its exact gradient through the Poisson solve.
HandleLoss handle_loss(const PoissonSystem& system, const JacobianField& field, const HandleSet& handles);
HandleLoss handle_loss(const MeshOperators& ops, const JacobianField& field, const AnchorSet& anchors,
                       const HandleSet& handles, double lambda);

struct FitResult {
    Eigen::MatrixX3d positions;
    JacobianField field;
    double loss = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Prepared handle-driven deformation of one mesh with fixed handle and anchor
/// vertex sets. Everything that does not depend on the handle targets is
/// computed once, so repeated fits are cheap and may run concurrently.
class DeformationSolver {
public:
    DeformationSolver(const Mesh& mesh, std::vector<int> handle_indices, const AnchorSet& anchors,
                      const SolverOptions& opts);

    FitResult fit(const Eigen::MatrixX3d& handle_targets) const;
    FitResult fit_descent(const Eigen::MatrixX3d& handle_targets) const;
    FitResult fit_direct(const Eigen::MatrixX3d& handle_targets) const;

    const Mesh& mesh() const { return mesh_; }
    const MeshOperators& operators() const { return ops_; }
    const PoissonSystem& system() const { return *system_; }
    const JacobianField& rest_field() const { return rest_field_; }
    const std::vector<int>& handle_indices() const { return handles_; }
    const SolverOptions& options() const { return opts_; }

private:
    Mesh mesh_;
    MeshOperators ops_;
    std::unique_ptr<PoissonSystem> system_;
    std::vector<int> handles_;
    SolverOptions opts_;
    JacobianField rest_field_;
    Eigen::MatrixX3d rest_solution_;
    Eigen::MatrixXd laplacian_z_; // L S^{-1} K_h^T
    Eigen::MatrixXd response_;    // S^{-1} L Q L S^{-1} K_h^T
    Eigen::MatrixXd gram_pinv_;
};

/// Checks index ranges, duplicates and handle/anchor disjointness.
void check_handle_anchor_sets(int num_vertices, const std::vector<int>& handles,
                              const std::vector<int>& anchors);

FitResult fit(const Mesh& mesh, const HandleSet& handles, const AnchorSet& anchors,
              const SolverOptions& opts);

struct DeformResult {
    Mesh mesh;
    double handle_loss = 0.0;
    int iterations = 0;
    bool converged = false;
    bool aligned = false;
    /// Mean distance between deformed and rest anchors after alignment.
    double anchor_drift = 0.0;
};

/// normalize -> fit -> denormalize -> rigid re-alignment on the anchors.
/// Displacements are given in normalized units.
class DeformPipeline {
public:
    DeformPipeline(const Mesh& mesh, std::vector<int> handle_indices, std::vector<int> anchor_indices,
                   const SolverOptions& opts);

    DeformResult deform(const DeformationParams& params) const;

    const Mesh& original() const { return original_; }
    const NormalizationTransform& transform() const { return transform_; }
    const DeformationSolver& solver() const { return *solver_; }
    const std::vector<int>& handle_indices() const { return handles_; }
    const std::vector<int>& anchor_indices() const { return anchors_; }
    int handle_count() const { return static_cast<int>(handles_.size()); }

private:
    Mesh original_;
    Mesh normalized_;
    NormalizationTransform transform_;
    std::vector<int> handles_;
    std::vector<int> anchors_;
    std::unique_ptr<DeformationSolver> solver_;
};

DeformResult deform_pipeline(const Mesh& mesh, const std::vector<int>& handles,
                             const std::vector<int>& anchors, const DeformationParams& params,
                             const SolverOptions& opts);

/// `{"handles":[...],"anchors":[...],"displacements":[[x,y,z],...]}`; every
/// key is optional on input.
struct DeformationDocument {
    std::vector<int> handles;
    std::vector<int> anchors;
    std::optional<DeformationParams> displacements;
};

DeformationDocument parse_deformation_document(const nlohmann::json& j);
nlohmann::json to_json(const DeformationDocument& doc);
nlohmann::json matrix_to_json(const Eigen::MatrixX3d& m);
Eigen::MatrixX3d matrix_from_json(const nlohmann::json& j, const std::string& field);

} // namespace meshprobe
