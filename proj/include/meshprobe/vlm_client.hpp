#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "meshprobe/keypoints.hpp"
#include "meshprobe/mesh.hpp"
#include "meshprobe/prompts.hpp"

namespace meshprobe {

inline constexpr const char* kDefaultEndpointEnv = "MESHPROBE_VLM";

/// OpenAI-style chat-completions endpoint.
struct EndpointConfig {
    std::string url; ///< full URL; a bare host gets /v1/chat/completions
    std::string api_key;
    std::string model = "gpt-4o";
    std::chrono::seconds timeout{120};
    int retries = 2;
    std::chrono::milliseconds backoff{1000};
};

class EndpointError : public std::runtime_error {
public:
    enum class Kind { not_configured, auth, network, timeout, http, malformed };

    EndpointError(Kind kind, const std::string& what, int attempts = 0, int status = 0)
        : std::runtime_error(what), kind_(kind), attempts_(attempts), status_(status)
    {
    }
    Kind kind() const { return kind_; }
    int attempts() const { return attempts_; }
    int status() const { return status_; }

private:
    Kind kind_;
    int attempts_;
    int status_;
};

/// Reads <prefix>_URL, <prefix>_API_KEY and optionally <prefix>_MODEL,
/// <prefix>_TIMEOUT (seconds) and <prefix>_RETRIES. Throws
/// EndpointError::not_configured when the URL or key is missing.
EndpointConfig endpoint_from_env(const std::string& prefix = kDefaultEndpointEnv);

struct ChatMessage {
    std::string role; ///< "user" or "assistant"
    std::string text;
    std::vector<std::vector<std::uint8_t>> png_images;
};

std::string base64_encode(const std::vector<std::uint8_t>& bytes);

/// Request body for the message history; with `redact_images` the image
/// payloads are replaced by a size note (for transcripts).
nlohmann::json build_chat_request(const std::string& model, const std::vector<ChatMessage>& history,
                                  bool redact_images = false);
/// choices[0].message.content of a chat-completions response body.
std::string parse_chat_response(const std::string& body);

/// One conversation with the endpoint. Every exchange is appended to the
/// history, so later prompts are sent together with the earlier turns.
/// Requests and responses are written to `transcript_dir` when set.
class VlmClient {
public:
    explicit VlmClient(EndpointConfig config, std::filesystem::path transcript_dir = {});

    std::string send(const std::string& prompt, const std::vector<std::vector<std::uint8_t>>& images = {});

    const std::vector<ChatMessage>& history() const { return history_; }
    const EndpointConfig& config() const { return config_; }

private:
    void write_transcript(const std::string& name, const nlohmann::json& content) const;

    EndpointConfig config_;
    std::filesystem::path transcript_dir_;
    std::vector<ChatMessage> history_;
    int exchange_ = 0;
};

struct HandleSelection {
    std::vector<HandleProposal> proposals;
    HandleProposal top;
    std::vector<int> vertices;       ///< mesh vertex for each chosen keypoint, deduplicated
    std::vector<VertexSnap> snaps;   ///< per chosen keypoint, in proposal order
};

/// Two-stage selection: geometric prompt with the panel image, then the
/// ranking prompt with the first exchange replayed. The chosen keypoints are
/// snapped to the nearest vertices of `mesh` (same frame as the keypoints).
HandleSelection select_handles(VlmClient& client, const Mesh& mesh, const KeypointSet& keypoints,
                               const std::vector<std::uint8_t>& panel_png, const std::string& task_hint = {});

} // namespace meshprobe
