#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshprobe/deform.hpp"
#include "meshprobe/mesh.hpp"
#include "meshprobe/optimizer.hpp"

namespace meshprobe {

inline constexpr int kDefaultEntropyBins = 64;

/// C(t) = (S0 - S_t) / S0 for t = 0..T.
struct DegradationCurve {
    double nominal = 1.0;
    std::vector<double> scores;
    std::vector<double> values;
    /// Set when some S_t exceeded S0 and C(t) was clamped to 0.
    bool clamped = false;

    int steps() const { return static_cast<int>(values.size()) - 1; }
};

DegradationCurve degradation_curve(double nominal, const std::vector<double>& best_scores);

/// Trapezoid rule over unit-spaced samples.
double trapezoid(const std::vector<double>& y);
/// sum_{t=1..T} (C(t) + C(t-1)) / 2
double auc(const DegradationCurve& curve);
double final_drop(const DegradationCurve& curve);
/// First t with S_t <= S0 / 2.
std::optional<int> iter_at_50(const DegradationCurve& curve);

/// Shannon entropy (nats) of the angular-deficit histogram over [-2pi, 2pi).
double complexity_entropy(const Mesh& mesh, int bins = kDefaultEntropyBins);

struct ComplexityDelta {
    double median = 0.0;
    std::vector<CandidateId> candidates;
    std::vector<double> deltas;
    std::vector<std::string> excluded;
};

/// Median entropy increase over the (at most) `count` lowest-score logged
/// candidates, rebuilt through `pipeline`. Even counts take the lower middle.
ComplexityDelta delta_complexity(const RunLog& log, const DeformPipeline& pipeline,
                                 int bins = kDefaultEntropyBins, int count = 10);

/// Lower median of `values`; throws on an empty list.
double lower_median(std::vector<double> values);

/// Symmetric Chamfer distance with squared point distances over
/// area-uniform surface samples (the same seed on both meshes).
double chamfer_distance(const Mesh& a, const Mesh& b, int samples, std::uint64_t seed);

struct MetricsReport {
    double nominal_score = 0.0;
    double best_score = 0.0;
    DegradationCurve curve;
    double final_drop = 0.0;
    double auc = 0.0;
    std::optional<int> iter_at_50;
    int bins = kDefaultEntropyBins;
    std::optional<ComplexityDelta> delta_complexity;
    std::optional<double> chamfer_best;
    int chamfer_samples = 0;

    int iter_at_50_or_budget() const { return iter_at_50.value_or(curve.steps()); }
};

MetricsReport curve_metrics(double nominal, const std::vector<double>& best_scores);
nlohmann::json to_json(const MetricsReport& report);

/// Means over several runs; Iter@50% is reported both over the runs that
/// reached it and with misses counted as the full budget.
nlohmann::json aggregate_reports(const std::vector<MetricsReport>& reports);

} // namespace meshprobe
