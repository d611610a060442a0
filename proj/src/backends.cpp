#include "aspectcheck/backend.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "aspectcheck/error.hpp"

namespace aspectcheck {

using nlohmann::json;

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xF];
    }
    return out;
}

ScriptedBackend::ScriptedBackend(Script script, std::string identity)
    : script_(std::move(script)), identity_(std::move(identity)) {}

std::string ScriptedBackend::complete(const std::string& prompt, double temperature, int sample_index) {
    ++calls_;
    return script_(prompt, temperature, sample_index);
}

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    if (!config_.api_key_env.empty()) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (key == nullptr || *key == '\0')
            throw BackendError("environment variable " + config_.api_key_env + " is not set");
        api_key_ = key;
    }
}

std::string HttpBackend::identity_for(const HttpBackendConfig& config) {
    return "http:" + config.model + "@" + config.base_url;
}

std::string HttpBackend::complete(const std::string& prompt, double temperature, int /*sample_index*/) {
    json body = {{"model", config_.model},
                 {"messages",
                  json::array({{{"role", "system"}, {"content", config_.system_prompt}},
                               {{"role", "user"}, {"content", prompt}}})},
                 {"temperature", temperature}};
    if (config_.max_tokens > 0) body["max_tokens"] = config_.max_tokens;
    const std::string payload = body.dump();

    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    auto backoff = config_.initial_backoff;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(backoff);
            backoff = std::min(backoff * 2, config_.max_backoff);
        }
        httplib::Client client(config_.base_url);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        ++requests_;
        auto res = client.Post(config_.path, headers, payload, "application/json");
        if (!res) {
            last_error = "transport error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            if (auto ra = res->get_header_value("Retry-After"); !ra.empty()) {
                int secs = 0;
                auto [p, ec] = std::from_chars(ra.data(), ra.data() + ra.size(), secs);
                if (ec == std::errc() && secs > 0)
                    backoff = std::min<std::chrono::milliseconds>(std::chrono::seconds(secs), config_.max_backoff);
            }
            continue;
        }
        if (res->status != 200)
            throw BackendError("HTTP " + std::to_string(res->status) + " from " + config_.base_url + ": " +
                               res->body.substr(0, 300));
        try {
            auto doc = json::parse(res->body);
            return doc.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw BackendError(std::string("unexpected response shape: ") + e.what());
        }
    }
    throw BackendError("giving up after " + std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

CachingBackend::CachingBackend(std::string identity, std::filesystem::path dir, std::shared_ptr<LlmBackend> inner)
    : identity_(std::move(identity)), dir_(std::move(dir)), inner_(std::move(inner)) {
    std::filesystem::create_directories(dir_);
}

std::string CachingBackend::cache_key(const std::string& identity, const std::string& prompt, double temperature,
                                      int sample_index) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, temperature);
    std::string material = identity;
    material += '\0';
    material += prompt;
    material += '\0';
    material.append(buf, end);
    material += '\0';
    material += std::to_string(sample_index);
    return sha256_hex(material);
}

std::filesystem::path CachingBackend::path_for(const std::string& key) const {
    return dir_ / key.substr(0, 2) / key;
}

std::string CachingBackend::complete(const std::string& prompt, double temperature, int sample_index) {
    const auto key = cache_key(identity_, prompt, temperature, sample_index);
    const auto path = path_for(key);
    {
        std::ifstream in(path, std::ios::binary);
        if (in) {
            ++hits_;
            std::ostringstream buf;
            buf << in.rdbuf();
            return buf.str();
        }
    }
    ++misses_;
    if (!inner_) throw CacheMissError("offline cache miss for key " + key);
    auto response = inner_->complete(prompt, temperature, sample_index);

    std::lock_guard lock(write_mutex_);
    std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write cache file " + tmp.string());
        out << response;
    }
    std::filesystem::rename(tmp, path);
    return response;
}

}  // namespace aspectcheck
