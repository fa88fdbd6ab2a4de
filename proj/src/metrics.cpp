#include "meshprobe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "meshprobe/error.hpp"
#include "meshprobe/geometry.hpp"
#include "meshprobe/kdtree.hpp"
#include "meshprobe/keypoints.hpp"

namespace meshprobe {

DegradationCurve degradation_curve(double nominal, const std::vector<double>& best_scores)
{
    if (!(nominal > 0.0)) throw InputError("nominal score must be positive");
    if (best_scores.empty()) throw InputError("degradation curve needs at least one score");
    DegradationCurve c;
    c.nominal = nominal;
    c.scores = best_scores;
    for (double s : best_scores) {
        double v = (nominal - s) / nominal;
        if (v < 0.0) {
            v = 0.0;
            c.clamped = true;
        }
        c.values.push_back(std::min(v, 1.0));
    }
    return c;
}

double trapezoid(const std::vector<double>& y)
{
    double area = 0.0;
    for (std::size_t i = 1; i < y.size(); ++i) area += 0.5 * (y[i] + y[i - 1]);
    return area;
}

double auc(const DegradationCurve& curve)
{
    if (curve.steps() < 1) throw InputError("AUC needs at least one optimization step");
    double sum = 0.0;
    for (int t = 1; t <= curve.steps(); ++t) {
        sum += (curve.values[static_cast<std::size_t>(t)] + curve.values[static_cast<std::size_t>(t - 1)]) / 2.0;
    }
    return sum;
}

double final_drop(const DegradationCurve& curve)
{
    return *std::max_element(curve.values.begin(), curve.values.end());
}

std::optional<int> iter_at_50(const DegradationCurve& curve)
{
    for (std::size_t t = 0; t < curve.scores.size(); ++t) {
        if (curve.scores[t] <= 0.5 * curve.nominal) return static_cast<int>(t);
    }
    return std::nullopt;
}

double complexity_entropy(const Mesh& mesh, int bins)
{
    if (bins < 2) throw InputError("entropy needs at least 2 bins");
    const Eigen::VectorXd deficits = angular_deficits(mesh);
    if (deficits.size() == 0) return 0.0;
    const double lo = -2.0 * std::numbers::pi;
    const double width = 4.0 * std::numbers::pi;
    std::vector<int> counts(static_cast<std::size_t>(bins), 0);
    for (double phi : deficits) {
        const int b = static_cast<int>(std::floor((phi - lo) / width * bins));
        counts[static_cast<std::size_t>(std::clamp(b, 0, bins - 1))]++;
    }
    double h = 0.0;
    for (int c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(deficits.size());
        h -= p * std::log(p);
    }
    return h;
}

double lower_median(std::vector<double> values)
{
    if (values.empty()) throw InputError("median of an empty list");
    std::sort(values.begin(), values.end());
    return values[(values.size() - 1) / 2];
}

ComplexityDelta delta_complexity(const RunLog& log, const DeformPipeline& pipeline, int bins, int count)
{
    std::vector<const CandidateRecord*> ranked;
    for (const auto& r : log.records) {
        if (!r.failed()) ranked.push_back(&r);
    }
    if (ranked.empty()) throw InputError("no evaluated candidates in the log");
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) { return a->score < b->score; });
    if (static_cast<int>(ranked.size()) > count) ranked.resize(static_cast<std::size_t>(count));

    const double base = complexity_entropy(pipeline.original(), bins);
    ComplexityDelta out;
    for (const auto* r : ranked) {
        try {
            const DeformResult d = pipeline.deform(r->params);
            out.deltas.push_back(complexity_entropy(d.mesh, bins) - base);
            out.candidates.push_back(r->id);
        } catch (const std::exception& e) {
            out.excluded.push_back("iter " + std::to_string(r->id.iteration) + " cand "
                                   + std::to_string(r->id.candidate) + ": " + e.what());
        }
    }
    if (out.deltas.empty()) throw NumericalError("no logged candidate could be rebuilt");
    out.median = lower_median(out.deltas);
    return out;
}

double chamfer_distance(const Mesh& a, const Mesh& b, int samples, std::uint64_t seed)
{
    const SurfaceSample sa = sample_surface(a, samples, seed);
    const SurfaceSample sb = sample_surface(b, samples, seed);
    auto one_way = [](const Eigen::MatrixX3d& from, const Eigen::MatrixX3d& to) {
        const KdTree tree(to);
        double sum = 0.0;
        for (Eigen::Index i = 0; i < from.rows(); ++i) sum += tree.nearest(from.row(i).transpose()).dist2;
        return sum / static_cast<double>(from.rows());
    };
    return one_way(sa.points, sb.points) + one_way(sb.points, sa.points);
}

MetricsReport curve_metrics(double nominal, const std::vector<double>& best_scores)
{
    MetricsReport r;
    r.nominal_score = nominal;
    r.curve = degradation_curve(nominal, best_scores);
    r.best_score = *std::min_element(best_scores.begin(), best_scores.end());
    r.final_drop = final_drop(r.curve);
    r.auc = r.curve.steps() >= 1 ? auc(r.curve) : 0.0;
    r.iter_at_50 = iter_at_50(r.curve);
    return r;
}

nlohmann::json to_json(const MetricsReport& r)
{
    nlohmann::json j = {{"nominal_score", r.nominal_score},
                        {"best_score", r.best_score},
                        {"iterations", r.curve.steps()},
                        {"curve", r.curve.values},
                        {"curve_clamped", r.curve.clamped},
                        {"final_drop", r.final_drop},
                        {"auc", r.auc},
                        {"iter_at_50", r.iter_at_50 ? nlohmann::json(*r.iter_at_50) : nlohmann::json(nullptr)},
                        {"iter_at_50_or_budget", r.iter_at_50_or_budget()},
                        {"entropy_bins", r.bins},
                        {"entropy_units", "nats"}};
    if (r.delta_complexity) {
        const auto& d = *r.delta_complexity;
        auto ids = nlohmann::json::array();
        for (const auto& id : d.candidates) ids.push_back({id.iteration, id.candidate});
        j["delta_complexity"] = d.median;
        j["delta_complexity_detail"] = {{"candidates", ids}, {"deltas", d.deltas}, {"excluded", d.excluded}};
    } else {
        j["delta_complexity"] = nullptr;
    }
    if (r.chamfer_best) {
        j["chamfer_best"] = *r.chamfer_best;
        j["chamfer_samples"] = r.chamfer_samples;
        j["chamfer_distance"] = "squared";
    }
    return j;
}

nlohmann::json aggregate_reports(const std::vector<MetricsReport>& reports)
{
    if (reports.empty()) throw InputError("nothing to aggregate");
    double drop = 0.0, area = 0.0, clamped = 0.0, reached_sum = 0.0, complexity = 0.0;
    int reached = 0, with_complexity = 0;
    for (const auto& r : reports) {
        drop += r.final_drop;
        area += r.auc;
        clamped += r.iter_at_50_or_budget();
        if (r.iter_at_50) {
            reached_sum += *r.iter_at_50;
            ++reached;
        }
        if (r.delta_complexity) {
            complexity += r.delta_complexity->median;
            ++with_complexity;
        }
    }
    const double n = static_cast<double>(reports.size());
    return {{"runs", reports.size()},
            {"final_drop", drop / n},
            {"auc", area / n},
            {"iter_at_50_or_budget", clamped / n},
            {"iter_at_50_reached", reached ? nlohmann::json(reached_sum / reached) : nlohmann::json(nullptr)},
            {"runs_reaching_50", reached},
            {"delta_complexity", with_complexity ? nlohmann::json(complexity / with_complexity) : nlohmann::json(nullptr)}};
}

} // namespace meshprobe
