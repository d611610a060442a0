#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>

namespace aspectcheck {

/// A chat-completion style model. Implementations must be safe to call from
/// several threads at once.
class LlmBackend {
public:
    virtual ~LlmBackend() = default;

    /// `sample_index` distinguishes repeated samplings of the same prompt; it
    /// takes part in cache keys but is not sent to the model.
    virtual std::string complete(const std::string& prompt, double temperature, int sample_index) = 0;

    /// Stable name used in cache keys, e.g. "http:gpt-4@https://api.openai.com".
    virtual std::string identity() const = 0;
};

/// Deterministic backend driven by a function, for tests and offline runs.
class ScriptedBackend : public LlmBackend {
public:
    using Script = std::function<std::string(const std::string& prompt, double temperature, int sample_index)>;

    explicit ScriptedBackend(Script script, std::string identity = "scripted");

    std::string complete(const std::string& prompt, double temperature, int sample_index) override;
    std::string identity() const override { return identity_; }
    std::size_t calls() const { return calls_.load(); }

private:
    Script script_;
    std::string identity_;
    std::atomic<std::size_t> calls_{0};
};

struct HttpBackendConfig {
    std::string base_url = "https://api.openai.com";
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    /// Name of the environment variable holding the bearer token; empty sends no token.
    std::string api_key_env = "OPENAI_API_KEY";
    std::string system_prompt = "You are a helpful assistant.";
    int max_retries = 5;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::milliseconds max_backoff{30000};
    std::chrono::seconds timeout{120};
    int max_tokens = 0;  // 0 leaves it to the server
};

/// POSTs {"model", "messages": [system, user], "temperature"} and returns
/// choices[0].message.content. Retries 429, 5xx and transport errors with
/// exponential backoff; other statuses fail at once.
class HttpBackend : public LlmBackend {
public:
    explicit HttpBackend(HttpBackendConfig config);

    std::string complete(const std::string& prompt, double temperature, int sample_index) override;
    std::string identity() const override { return identity_for(config_); }
    /// Identity without constructing (and so without needing an API key), for offline replay.
    static std::string identity_for(const HttpBackendConfig& config);
    std::size_t requests() const { return requests_.load(); }

private:
    HttpBackendConfig config_;
    std::string api_key_;
    std::atomic<std::size_t> requests_{0};
};

/// Response cache keyed by SHA-256 of (identity, prompt, temperature, sample index),
/// one file per key. With no inner backend it runs offline and a miss throws
/// CacheMissError.
class CachingBackend : public LlmBackend {
public:
    CachingBackend(std::string identity, std::filesystem::path dir, std::shared_ptr<LlmBackend> inner);

    static std::string cache_key(const std::string& identity, const std::string& prompt, double temperature,
                                 int sample_index);

    std::string complete(const std::string& prompt, double temperature, int sample_index) override;
    std::string identity() const override { return identity_; }

    std::size_t hits() const { return hits_.load(); }
    std::size_t misses() const { return misses_.load(); }
    bool offline() const { return inner_ == nullptr; }

private:
    std::filesystem::path path_for(const std::string& key) const;

    std::string identity_;
    std::filesystem::path dir_;
    std::shared_ptr<LlmBackend> inner_;
    std::mutex write_mutex_;
    std::atomic<std::size_t> hits_{0};
    std::atomic<std::size_t> misses_{0};
};

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

}  // namespace aspectcheck
