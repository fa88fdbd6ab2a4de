#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "meshprobe/deform.hpp"
#include "meshprobe/mesh.hpp"

namespace meshprobe {

/// An evaluator could not produce a score for a mesh. `reason` is a short
/// stable tag ("nonzero exit", "timeout", ...), logged by the optimizer.
class EvaluationFailure : public std::runtime_error {
public:
    explicit EvaluationFailure(std::string reason, const std::string& detail = {})
        : std::runtime_error(detail.empty() ? reason : reason + ": " + detail), reason_(std::move(reason))
    {
    }
    const std::string& reason() const { return reason_; }

private:
    std::string reason_;
};

struct EvalContext {
    std::uint64_t seed = 0;
    /// Displacements that produced the mesh, when known.
    const DeformationParams* params = nullptr;
};

/// Black-box task score of a mesh: 1 is full success, 0 total failure.
/// Implementations must be deterministic in (mesh, seed).
class Evaluator {
public:
    virtual ~Evaluator() = default;

    virtual double evaluate(const Mesh& mesh, const EvalContext& ctx) const = 0;
    virtual std::string name() const = 0;
    virtual int trials() const { return 1; }
    virtual bool concurrency_safe() const { return true; }
    virtual nlohmann::json describe() const { return {{"type", name()}}; }
};

class ConstantEvaluator final : public Evaluator {
public:
    explicit ConstantEvaluator(double value) : value_(value) {}
    double evaluate(const Mesh&, const EvalContext&) const override { return value_; }
    std::string name() const override { return "constant"; }
    nlohmann::json describe() const override { return {{"type", name()}, {"value", value_}}; }

private:
    double value_;
};

/// 1 - min(1, |theta_row| / scale); ignores the mesh. Used to test the search.
class DisplacementNormEvaluator final : public Evaluator {
public:
    DisplacementNormEvaluator(int row, double scale) : row_(row), scale_(scale) {}
    double evaluate(const Mesh& mesh, const EvalContext& ctx) const override;
    std::string name() const override { return "displacement_norm"; }
    nlohmann::json describe() const override { return {{"type", name()}, {"row", row_}, {"scale", scale_}}; }

private:
    int row_;
    double scale_;
};

enum class Axis { pos_x, neg_x, pos_y, neg_y, pos_z, neg_z };
Axis parse_axis(const std::string& text);
std::string to_string(Axis axis);

struct PegClearanceConfig {
    double aperture_width = 12.0;
    double aperture_depth = 12.0;
    Axis insertion_axis = Axis::neg_z;
    double clearance = 0.5;
    int trials = 64;
    double yaw_range_deg = 0.0;
    /// Lateral misalignment of the approach; the silhouette must fit even
    /// when shifted by up to this much.
    double xy_range = 0.0;

    void check() const;
};

/// Insertion surrogate: does the object's silhouette, yawed about the
/// insertion axis, fit a rectangular socket with clearance on every side?
class PegClearanceEvaluator final : public Evaluator {
public:
    explicit PegClearanceEvaluator(PegClearanceConfig config);
    double evaluate(const Mesh& mesh, const EvalContext& ctx) const override;
    std::string name() const override { return "peg_clearance"; }
    int trials() const override { return config_.trials; }
    nlohmann::json describe() const override;
    const PegClearanceConfig& config() const { return config_; }

private:
    PegClearanceConfig config_;
};

struct GraspSpanConfig {
    double max_opening = 0.08;
    int approach_count = 64;
    double normal_opposition_tol = 0.349065850398866; // 20 degrees
    double contact_band = 0.05;
    int surface_samples = 4096;

    void check() const;
};

/// Parallel-jaw surrogate: for sampled closing directions through the
/// centroid, is the object narrow enough and are the contact normals
/// opposed along the closing axis?
class GraspSpanEvaluator final : public Evaluator {
public:
    explicit GraspSpanEvaluator(GraspSpanConfig config);
    double evaluate(const Mesh& mesh, const EvalContext& ctx) const override;
    std::string name() const override { return "grasp_span"; }
    int trials() const override { return config_.approach_count; }
    nlohmann::json describe() const override;

private:
    GraspSpanConfig config_;
};

struct ExternalCommandConfig {
    std::string command; ///< must contain {mesh}; {seed} optional
    std::chrono::milliseconds timeout{std::chrono::seconds(600)};
    bool concurrency_safe = false;
    int trials = 1;
};

/// Bridge to an outside simulator: writes the mesh to a temporary OBJ, runs
/// the command through /bin/sh and reads the score from the last line of
/// standard output.
class ExternalCommandEvaluator final : public Evaluator {
public:
    explicit ExternalCommandEvaluator(ExternalCommandConfig config);
    double evaluate(const Mesh& mesh, const EvalContext& ctx) const override;
    std::string name() const override { return "external_command"; }
    int trials() const override { return config_.trials; }
    bool concurrency_safe() const override { return config_.concurrency_safe; }
    nlohmann::json describe() const override;

private:
    ExternalCommandConfig config_;
};

/// Parses the last non-empty line of `output` as a score in [0, 1];
/// throws EvaluationFailure otherwise.
double parse_score_output(const std::string& output);

struct CommandResult {
    int exit_status = -1;
    bool timed_out = false;
    std::string output;
};
CommandResult run_shell_command(const std::string& command, std::chrono::milliseconds timeout);

/// Builds an evaluator from `{"type": "...", ...params}`.
std::unique_ptr<Evaluator> make_evaluator(const nlohmann::json& spec);

} // namespace meshprobe
