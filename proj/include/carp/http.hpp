#pragma once

#include <cstdlib>
#include <string>
#include <vector>

#include "carp/embedding.hpp"
#include "carp/errors.hpp"
#include "carp/gateway.hpp"
#include "httplib.h"
#include "json.hpp"

namespace carp::gateway {

namespace detail {

struct ParsedUrl {
    std::string host_port;  // scheme://host:port
    std::string base_path;  // path prefix, no trailing slash
};

inline ParsedUrl parse_base_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base URL needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, ""};
    std::string path = url.substr(path_start);
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {url.substr(0, path_start), path};
}

inline void classify_http_failure(const httplib::Result& res, const std::string& what) {
    if (!res)
        throw ProviderError(what + ": transport error (" + httplib::to_string(res.error()) + ")",
                            true);
    bool transient = res->status == 429 || res->status >= 500;
    throw ProviderError(what + ": HTTP " + std::to_string(res->status), transient);
}

}  // namespace detail

/// Completion endpoint client. POSTs the request body to <base_url>/complete
/// and expects {text, finish_reason, token_logprobs?} back. Credentials are
/// read from the named environment variable and sent as a bearer token. Each
/// request runs on its own connection, so concurrent in-flight requests
/// (bounded by the gateway) need no shared state.
class HttpProvider : public Provider {
public:
    HttpProvider(std::string base_url, std::string credentials_env = "",
                 std::string provider_id = "")
        : base_(detail::parse_base_url(base_url)),
          id_(provider_id.empty() ? base_url : std::move(provider_id)) {
        if (!credentials_env.empty()) {
            const char* key = std::getenv(credentials_env.c_str());
            if (!key)
                throw ConfigError("credentials environment variable not set: " + credentials_env);
            bearer_ = std::string("Bearer ") + key;
        }
    }

    std::string id() const override { return id_; }

    CompletionResponse complete(const CompletionRequest& req) override {
        nlohmann::json body = {{"prompt", req.prompt},
                               {"temperature", req.temperature},
                               {"top_p", req.top_p},
                               {"max_tokens", req.max_tokens},
                               {"frequency_penalty", req.frequency_penalty},
                               {"presence_penalty", req.presence_penalty},
                               {"logprobs", req.want_logprobs}};
        httplib::Client client(base_.host_port);
        client.set_connection_timeout(10);
        client.set_read_timeout(120);
        if (!bearer_.empty()) client.set_default_headers({{"Authorization", bearer_}});
        auto res = client.Post(base_.base_path + "/complete", body.dump(), "application/json");
        if (!res || res->status != 200) detail::classify_http_failure(res, "completion request");
        try {
            auto resp = response_from_json(nlohmann::json::parse(res->body));
            resp.provider_id = id_;
            return resp;
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("malformed completion response: ") + e.what(), false);
        }
    }

private:
    detail::ParsedUrl base_;
    std::string id_;
    std::string bearer_;
};

/// Embedding service client. POSTs {texts: [...]} to <base_url>/embed and
/// expects {vectors: [[...]]} back, order-preserving.
class EmbeddingServiceClient {
public:
    explicit EmbeddingServiceClient(std::string base_url, RetryPolicy retry = {})
        : base_(detail::parse_base_url(base_url)), retry_(std::move(retry)) {}

    std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) {
        int attempts = 0;
        for (;;) {
            try {
                ++attempts;
                return embed_once(texts);
            } catch (const ProviderError& e) {
                if (!e.transient() || attempts >= retry_.max_attempts) throw;
                auto delay =
                    std::chrono::milliseconds(retry_.base_delay_ms) * (1 << (attempts - 1));
                if (retry_.sleeper)
                    retry_.sleeper(delay);
                else
                    std::this_thread::sleep_for(delay);
            }
        }
    }

private:
    std::vector<std::vector<double>> embed_once(const std::vector<std::string>& texts) {
        nlohmann::json body = {{"texts", texts}};
        httplib::Client client(base_.host_port);
        client.set_connection_timeout(10);
        client.set_read_timeout(120);
        auto res = client.Post(base_.base_path + "/embed", body.dump(), "application/json");
        if (!res || res->status != 200) detail::classify_http_failure(res, "embedding request");
        try {
            auto parsed = nlohmann::json::parse(res->body);
            auto vectors = parsed.at("vectors").get<std::vector<std::vector<double>>>();
            if (vectors.size() != texts.size())
                throw ProviderError("embedding service returned " + std::to_string(vectors.size()) +
                                        " vectors for " + std::to_string(texts.size()) + " texts",
                                    false);
            return vectors;
        } catch (const nlohmann::json::exception& e) {
            throw ProviderError(std::string("malformed embedding response: ") + e.what(), false);
        }
    }

    detail::ParsedUrl base_;
    RetryPolicy retry_;
};

}  // namespace carp::gateway

namespace carp::embed {

/// Where query vectors for test inputs come from: a precomputed lookup file
/// or a live embedding service.
class EmbeddingSource {
public:
    static EmbeddingSource from_file(const std::filesystem::path& path) {
        EmbeddingSource src;
        src.vectors_ = QueryVectors::load(path);
        return src;
    }

    static EmbeddingSource from_service(std::string base_url, gateway::RetryPolicy retry = {}) {
        EmbeddingSource src;
        src.client_ = std::make_shared<gateway::EmbeddingServiceClient>(std::move(base_url),
                                                                        std::move(retry));
        return src;
    }

    /// Query vector for a test example; file sources look the id up, service
    /// sources embed the text. The result must match the index dimension.
    std::vector<double> query(const std::string& id, const std::string& text,
                              std::size_t expected_dim) const {
        std::vector<double> v;
        if (client_) {
            v = client_->embed({text}).at(0);
        } else if (vectors_) {
            v = vectors_->get(id);
        } else {
            throw Error("embedding source not configured");
        }
        if (v.size() != expected_dim)
            throw Error("query embedding for '" + id + "' has dimension " +
                        std::to_string(v.size()) + ", index has " + std::to_string(expected_dim));
        return v;
    }

private:
    std::optional<QueryVectors> vectors_;
    std::shared_ptr<gateway::EmbeddingServiceClient> client_;
};

}  // namespace carp::embed
