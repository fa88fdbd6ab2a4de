#include "meshprobe/prompts.hpp"

#include <charconv>
#include <cmath>
#include <optional>

namespace meshprobe {

namespace {

const char* const kGeometricHead =
    "High-level Task: Deformation of a 3D mesh object via key point manipulation.\n"
    "\n"
    "Index:\n"
    "\n"
    "1. Handle Points -- Mesh vertices which serve as keypoints to be displaced for the purposes of mesh deformation.\n"
    "\n"
    "2. Anchor Points -- Mesh vertices which remain in place through the deformation process.\n"
    "\n"
    "3. Displacement Vectors -- Directional displacements of handle points for the purposes of mesh deformation.\n"
    "\n"
    "Method: Jacobian field optimization by means of a Poisson solver over the entire mesh under the constraints "
    "imposed by the deformation parameters.\n"
    "\n"
    "Input:\n"
    "\n"
    "1. Images containing multiple canonical views of the object under inspection, annotated with keypoints sampled "
    "on the object's surface.\n"
    "\n"
    "2. A JSON file containing the 3D location of the object in the world coordinates.\n"
    "\n"
    "Objective: Provide multiple subsets of keypoints to serve as handle points for the deformation process, along "
    "with a single line description of the transformations one can hope to achieve using those handle points.\n"
    "\n"
    "Hints: \n"
    "1. The multiple annotated views of the underlying object, along with the 3D world frame positions of the "
    "keypoints, can be used to localize the keypoints and reason about the type and structure of the object.\n"
    "2. Deformations that yield realistic objects often maintain symmetry across the key axes of symmetry.\n";

const char* const kGeometricTail =
    "\n"
    "Penalty: \n"
    "You'll lose points if the returned output contains any content other than requested output.\n"
    "\n"
    "Json File:\n"
    "---\n";

const char* const kRanking =
    "Rank the deformations using pareto-optimality in your reasoning. The objectives of interest at the end of the "
    "deformation process, ranked in order of priority, are:\n"
    "\n"
    "1. Existence of similar objects in the real world.\n"
    "2. Handle point placements that provide a good avenue for red-teaming a grasping policy.\n"
    "\n"
    "Objective: Return a single json file containing the information on the highest ranking subset.\n"
    "\n"
    "Penalty: You'll lose points if the returned output contains any content other than requested output.\n";

std::string format_double(double v)
{
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    std::string s(buf, end);
    if (std::isfinite(v) && s.find_first_of(".en") == std::string::npos) s += ".0";
    return s;
}

/// End of the balanced span starting at text[begin] ('{' or '['), or npos.
std::size_t balanced_end(const std::string& text, std::size_t begin)
{
    int depth = 0;
    bool in_string = false, escaped = false;
    for (std::size_t i = begin; i < text.size(); ++i) {
        const char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{' || c == '[') ++depth;
        else if (c == '}' || c == ']') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string::npos;
}

[[noreturn]] void schema_error(const std::string& field, const std::string& detail)
{
    throw ResponseError("response schema violation in '" + field + "': " + detail, field);
}

bool looks_like_proposal(const nlohmann::json& j)
{
    return j.is_object() && (j.contains("keypoint_indices") || j.contains("semantic_object_label"));
}

} // namespace

std::string format_keypoint_json(const KeypointSet& keypoints)
{
    std::string out = "{\n    \"points\": [\n";
    for (std::size_t i = 0; i < keypoints.entries.size(); ++i) {
        const auto& kp = keypoints.entries[i];
        out += "        {\"index\": " + std::to_string(kp.index) + ", \"coordinates\": [" + format_double(kp.coordinates[0])
               + ", " + format_double(kp.coordinates[1]) + ", " + format_double(kp.coordinates[2]) + "]}";
        out += i + 1 < keypoints.entries.size() ? ",\n" : "\n";
    }
    out += "    ]\n}";
    return out;
}

std::string build_geometric_prompt(const KeypointSet& keypoints, const std::string& task_hint)
{
    std::string prompt = kGeometricHead;
    if (!task_hint.empty()) prompt += "3. " + task_hint + "\n";
    prompt += kGeometricTail;
    prompt += format_keypoint_json(keypoints);
    prompt += "\n---\n";
    return prompt;
}

std::string build_ranking_prompt() { return kRanking; }

KeypointSet extract_prompt_keypoints(const std::string& prompt)
{
    const std::string fence = "\n---\n";
    const auto open = prompt.find(fence);
    if (open == std::string::npos) throw InputError("prompt has no fenced JSON block");
    const auto close = prompt.find(fence, open + fence.size());
    if (close == std::string::npos) throw InputError("prompt JSON block is not closed");
    const std::string body = prompt.substr(open + fence.size(), close - open - fence.size());
    try {
        return keypoints_from_json(nlohmann::json::parse(body));
    } catch (const nlohmann::json::exception& e) {
        throw InputError(std::string("prompt JSON block does not parse: ") + e.what());
    }
}

namespace {

std::vector<nlohmann::json> json_spans(const std::string& text)
{
    std::vector<nlohmann::json> spans;
    for (std::size_t i = 0; i < text.size(); ++i) {
        if (text[i] != '{' && text[i] != '[') continue;
        const std::size_t end = balanced_end(text, i);
        if (end == std::string::npos) continue;
        auto parsed = nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(i),
                                            text.begin() + static_cast<std::ptrdiff_t>(end), nullptr, false);
        if (parsed.is_discarded()) continue;
        spans.push_back(std::move(parsed));
        i = end - 1;
    }
    return spans;
}

} // namespace

nlohmann::json extract_json(const std::string& text)
{
    auto spans = json_spans(text);
    if (spans.empty()) throw ResponseError("no JSON payload found in response", "");
    return spans.front();
}

HandleProposal proposal_from_json(const nlohmann::json& j)
{
    if (!j.is_object()) schema_error("choice", "expected an object");
    HandleProposal p;

    if (!j.contains("keypoint_indices")) schema_error("keypoint_indices", "missing");
    const auto& idx = j["keypoint_indices"];
    if (!idx.is_array()) schema_error("keypoint_indices", "expected a list of integers");
    for (const auto& v : idx) {
        if (!v.is_number_integer()) schema_error("keypoint_indices", "non-integer entry " + v.dump());
        p.keypoint_indices.push_back(v.get<int>());
    }
    if (p.keypoint_indices.empty()) schema_error("keypoint_indices", "empty list");

    if (!j.contains("semantic_object_label")) schema_error("semantic_object_label", "missing");
    if (!j["semantic_object_label"].is_string()) schema_error("semantic_object_label", "expected a string");
    p.semantic_object_label = j["semantic_object_label"].get<std::string>();

    if (!j.contains("expected_transformations")) schema_error("expected_transformations", "missing");
    const auto& tr = j["expected_transformations"];
    if (!tr.is_array()) schema_error("expected_transformations", "expected a list of strings");
    for (const auto& v : tr) {
        if (!v.is_string()) schema_error("expected_transformations", "non-string entry " + v.dump());
        p.expected_transformations.push_back(v.get<std::string>());
    }
    return p;
}

namespace {

std::vector<HandleProposal> choices_from_payload(const nlohmann::json& payload)
{
    std::vector<HandleProposal> out;
    if (payload.is_array()) {
        for (const auto& c : payload) out.push_back(proposal_from_json(c));
    } else if (payload.is_object() && payload.contains("choices")) {
        if (!payload["choices"].is_array()) schema_error("choices", "expected a list");
        for (const auto& c : payload["choices"]) out.push_back(proposal_from_json(c));
    } else if (looks_like_proposal(payload)) {
        out.push_back(proposal_from_json(payload));
    } else if (payload.is_object()) {
        // keyed map "0", "1", ...; keep numeric key order
        std::vector<std::pair<long, const nlohmann::json*>> keyed;
        for (const auto& [key, value] : payload.items()) {
            long k = 0;
            const auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), k);
            if (ec != std::errc() || ptr != key.data() + key.size()) schema_error("choices", "unexpected key '" + key + "'");
            keyed.emplace_back(k, &value);
        }
        std::stable_sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [k, v] : keyed) out.push_back(proposal_from_json(*v));
    } else {
        schema_error("choices", "expected an object or list");
    }
    if (out.empty()) schema_error("choices", "no proposals");
    return out;
}

HandleProposal top_rank_from_payload(const nlohmann::json& payload)
{
    if (!payload.is_object() || !payload.contains("top_choice")) schema_error("top_choice", "missing");
    return proposal_from_json(payload["top_choice"]);
}

/// Applies `parse` to each JSON span in turn; the first success wins,
/// otherwise the first span's error is reported.
template <typename Parse>
auto first_valid(const std::string& response, Parse parse) -> decltype(parse(nlohmann::json{}))
{
    const auto spans = json_spans(response);
    if (spans.empty()) throw ResponseError("no JSON payload found in response", "");
    std::optional<ResponseError> first_error;
    for (const auto& span : spans) {
        try {
            return parse(span);
        } catch (const ResponseError& e) {
            if (!first_error) first_error = e;
        }
    }
    throw *first_error;
}

} // namespace

std::vector<HandleProposal> parse_choices(const std::string& response)
{
    return first_valid(response, choices_from_payload);
}

HandleProposal parse_top_rank(const std::string& response)
{
    return first_valid(response, top_rank_from_payload);
}

nlohmann::json to_json(const HandleProposal& p)
{
    return {{"semantic_object_label", p.semantic_object_label},
            {"keypoint_indices", p.keypoint_indices},
            {"expected_transformations", p.expected_transformations}};
}

nlohmann::json choices_to_json(const std::vector<HandleProposal>& proposals)
{
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t i = 0; i < proposals.size(); ++i) j[std::to_string(i)] = to_json(proposals[i]);
    return j;
}

void check_proposal_indices(const HandleProposal& proposal, int count)
{
    for (int i : proposal.keypoint_indices) {
        if (i < 0 || i >= count) {
            throw ResponseError("keypoint index " + std::to_string(i) + " is outside 0.." + std::to_string(count - 1),
                                "keypoint_indices");
        }
    }
}

} // namespace meshprobe
