#include "meshprobe/vlm_client.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <thread>

#include <httplib.h>
#include <openssl/evp.h>

namespace meshprobe {

namespace {

std::string env_or_empty(const std::string& name)
{
    const char* v = std::getenv(name.c_str());
    return v ? std::string(v) : std::string();
}

struct SplitUrl {
    std::string origin; ///< scheme://host[:port]
    std::string path;
};

SplitUrl split_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw EndpointError(EndpointError::Kind::not_configured, "endpoint URL needs a scheme: " + url);
    }
    const auto path_begin = url.find('/', scheme_end + 3);
    if (path_begin == std::string::npos) return {url, "/v1/chat/completions"};
    return {url.substr(0, path_begin), url.substr(path_begin)};
}

} // namespace

EndpointConfig endpoint_from_env(const std::string& prefix)
{
    EndpointConfig c;
    c.url = env_or_empty(prefix + "_URL");
    c.api_key = env_or_empty(prefix + "_API_KEY");
    if (c.url.empty() || c.api_key.empty()) {
        throw EndpointError(EndpointError::Kind::not_configured,
                            "endpoint not configured: set " + prefix + "_URL and " + prefix + "_API_KEY");
    }
    if (auto m = env_or_empty(prefix + "_MODEL"); !m.empty()) c.model = m;
    try {
        if (auto t = env_or_empty(prefix + "_TIMEOUT"); !t.empty()) c.timeout = std::chrono::seconds(std::stoi(t));
        if (auto r = env_or_empty(prefix + "_RETRIES"); !r.empty()) c.retries = std::stoi(r);
    } catch (const std::exception&) {
        throw EndpointError(EndpointError::Kind::not_configured, prefix + "_TIMEOUT / _RETRIES must be integers");
    }
    return c;
}

std::string base64_encode(const std::vector<std::uint8_t>& bytes)
{
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

nlohmann::json build_chat_request(const std::string& model, const std::vector<ChatMessage>& history, bool redact_images)
{
    auto messages = nlohmann::json::array();
    for (const auto& m : history) {
        if (m.png_images.empty()) {
            messages.push_back({{"role", m.role}, {"content", m.text}});
            continue;
        }
        auto content = nlohmann::json::array();
        content.push_back({{"type", "text"}, {"text", m.text}});
        for (const auto& png : m.png_images) {
            const std::string url = redact_images ? "<image/png, " + std::to_string(png.size()) + " bytes>"
                                                  : "data:image/png;base64," + base64_encode(png);
            content.push_back({{"type", "image_url"}, {"image_url", {{"url", url}}}});
        }
        messages.push_back({{"role", m.role}, {"content", content}});
    }
    return {{"model", model}, {"messages", messages}, {"temperature", 0}};
}

std::string parse_chat_response(const std::string& body)
{
    const auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw EndpointError(EndpointError::Kind::malformed, "endpoint returned non-JSON body");
    try {
        const auto& content = j.at("choices").at(0).at("message").at("content");
        if (content.is_string()) return content.get<std::string>();
        // some servers return a list of content parts
        std::string text;
        for (const auto& part : content) {
            if (part.contains("text")) text += part["text"].get<std::string>();
        }
        return text;
    } catch (const nlohmann::json::exception&) {
        throw EndpointError(EndpointError::Kind::malformed, "endpoint response has no choices[0].message.content");
    }
}

VlmClient::VlmClient(EndpointConfig config, std::filesystem::path transcript_dir)
    : config_(std::move(config)), transcript_dir_(std::move(transcript_dir))
{
    if (config_.url.empty() || config_.api_key.empty()) {
        throw EndpointError(EndpointError::Kind::not_configured, "endpoint not configured");
    }
    if (config_.retries < 0) throw EndpointError(EndpointError::Kind::not_configured, "retries must be >= 0");
    if (!transcript_dir_.empty()) std::filesystem::create_directories(transcript_dir_);
}

void VlmClient::write_transcript(const std::string& name, const nlohmann::json& content) const
{
    if (transcript_dir_.empty()) return;
    std::ofstream f(transcript_dir_ / name);
    f << content.dump(2) << '\n';
}

std::string VlmClient::send(const std::string& prompt, const std::vector<std::vector<std::uint8_t>>& images)
{
    std::vector<ChatMessage> messages = history_;
    messages.push_back({"user", prompt, images});
    const std::string body = build_chat_request(config_.model, messages).dump();
    const auto tag = [&](const char* what) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%02d-%s.json", exchange_, what);
        return std::string(buf);
    };
    ++exchange_;
    write_transcript(tag("request"), build_chat_request(config_.model, messages, true));

    const SplitUrl url = split_url(config_.url);
    httplib::Client client(url.origin);
    client.set_connection_timeout(config_.timeout);
    client.set_read_timeout(config_.timeout);
    client.set_write_timeout(config_.timeout);
    const httplib::Headers headers = {{"Authorization", "Bearer " + config_.api_key}};

    const int attempts = config_.retries + 1;
    for (int attempt = 1;; ++attempt) {
        std::optional<EndpointError> failure;
        auto res = client.Post(url.path, headers, body, "application/json");
        if (!res) {
            const auto err = res.error();
            const auto kind = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read
                                  ? EndpointError::Kind::timeout
                                  : EndpointError::Kind::network;
            failure.emplace(kind, "request failed (" + httplib::to_string(err) + ") after " + std::to_string(attempt)
                                      + " attempt(s)", attempt);
        } else if (res->status == 401 || res->status == 403) {
            failure.emplace(EndpointError::Kind::auth,
                            "authentication rejected (HTTP " + std::to_string(res->status) + ") after "
                                + std::to_string(attempt) + " attempt(s)",
                            attempt, res->status);
        } else if (res->status < 200 || res->status >= 300) {
            failure.emplace(EndpointError::Kind::http,
                            "HTTP " + std::to_string(res->status) + " after " + std::to_string(attempt) + " attempt(s)",
                            attempt, res->status);
        } else {
            const std::string reply = parse_chat_response(res->body);
            write_transcript(tag("response"), {{"status", res->status}, {"attempts", attempt}, {"body", nlohmann::json::parse(res->body)}});
            history_ = std::move(messages);
            history_.push_back({"assistant", reply, {}});
            return reply;
        }
        if (attempt >= attempts) {
            write_transcript(tag("error"), {{"error", failure->what()}, {"attempts", attempt}});
            throw *failure;
        }
        std::this_thread::sleep_for(config_.backoff * attempt);
    }
}

HandleSelection select_handles(VlmClient& client, const Mesh& mesh, const KeypointSet& keypoints,
                               const std::vector<std::uint8_t>& panel_png, const std::string& task_hint)
{
    HandleSelection sel;
    const std::string first = client.send(build_geometric_prompt(keypoints, task_hint), {panel_png});
    sel.proposals = parse_choices(first);
    const std::string second = client.send(build_ranking_prompt());
    sel.top = parse_top_rank(second);
    check_proposal_indices(sel.top, keypoints.size());

    std::vector<Vec3> points;
    for (int i : sel.top.keypoint_indices) {
        const auto it = std::find_if(keypoints.entries.begin(), keypoints.entries.end(),
                                     [&](const Keypoint& k) { return k.index == i; });
        if (it == keypoints.entries.end()) {
            throw ResponseError("keypoint index " + std::to_string(i) + " does not exist", "keypoint_indices");
        }
        points.push_back(it->coordinates);
    }
    sel.snaps = snap_to_vertices(mesh, points);
    for (const auto& s : sel.snaps) {
        if (std::find(sel.vertices.begin(), sel.vertices.end(), s.vertex) == sel.vertices.end()) {
            sel.vertices.push_back(s.vertex);
        }
    }
    return sel;
}

} // namespace meshprobe
