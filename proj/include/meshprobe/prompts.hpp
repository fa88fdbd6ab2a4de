#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshprobe/error.hpp"
#include "meshprobe/keypoints.hpp"

namespace meshprobe {

/// A set of keypoints proposed as deformation handles.
struct HandleProposal {
    std::vector<int> keypoint_indices;
    std::string semantic_object_label;
    std::vector<std::string> expected_transformations;

    bool operator==(const HandleProposal&) const = default;
};

/// A model response did not contain a usable payload. `field` names the
/// offending schema field, or is empty when no JSON was found at all.
class ResponseError : public InputError {
public:
    ResponseError(const std::string& what, std::string field) : InputError(what), field_(std::move(field)) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

/// First-stage prompt asking for candidate handle subsets. A non-empty
/// `task_hint` is added as an extra numbered hint.
std::string build_geometric_prompt(const KeypointSet& keypoints, const std::string& task_hint = {});

/// Second-stage prompt asking for the single best subset.
std::string build_ranking_prompt();

/// The keypoint listing embedded in the geometric prompt.
std::string format_keypoint_json(const KeypointSet& keypoints);

/// Recovers the keypoints from the block between the "---" fences of a
/// geometric prompt.
KeypointSet extract_prompt_keypoints(const std::string& prompt);

/// First balanced {...} or [...] span of `text` that parses as JSON.
nlohmann::json extract_json(const std::string& text);

/// Accepts `{"0": {...}, "1": {...}}`, `{"choices": [...]}` or a plain list.
std::vector<HandleProposal> parse_choices(const std::string& response);
/// Accepts `{"top_choice": {...}}`.
HandleProposal parse_top_rank(const std::string& response);

HandleProposal proposal_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HandleProposal& proposal);
/// Keyed-map form: `{"0": {...}, ...}`.
nlohmann::json choices_to_json(const std::vector<HandleProposal>& proposals);

/// Throws if an index falls outside [0, count).
void check_proposal_indices(const HandleProposal& proposal, int count);

} // namespace meshprobe
