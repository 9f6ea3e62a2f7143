#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "carp/digest.hpp"
#include "carp/errors.hpp"
#include "carp/util.hpp"

namespace carp::gateway {

/// One completion request. Defaults mirror the reference API configuration
/// (temperature 0.7, top_p 1, max_tokens 200, zero penalties, best_of 1).
struct CompletionRequest {
    std::string prompt;
    double temperature = 0.7;
    double top_p = 1.0;
    int max_tokens = 200;
    double frequency_penalty = 0.0;
    double presence_penalty = 0.0;
    bool want_logprobs = false;
    int best_of = 1;  // pass-through, no local semantics
    int run_index = 0;
};

struct TokenLogprob {
    std::string token;
    double logprob;
};

struct CompletionResponse {
    std::string text;
    std::optional<std::vector<TokenLogprob>> token_logprobs;
    std::string finish_reason;
    std::string provider_id;
};

inline nlohmann::json to_json(const CompletionResponse& r) {
    nlohmann::json j;
    j["text"] = r.text;
    j["finish_reason"] = r.finish_reason;
    j["provider_id"] = r.provider_id;
    if (r.token_logprobs) {
        nlohmann::json lps = nlohmann::json::array();
        for (const auto& tl : *r.token_logprobs)
            lps.push_back({{"token", tl.token}, {"logprob", tl.logprob}});
        j["token_logprobs"] = std::move(lps);
    }
    return j;
}

inline CompletionResponse response_from_json(const nlohmann::json& j) {
    CompletionResponse r;
    r.text = j.at("text").get<std::string>();
    r.finish_reason = j.value("finish_reason", "");
    r.provider_id = j.value("provider_id", "");
    if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null()) {
        std::vector<TokenLogprob> lps;
        for (const auto& e : j.at("token_logprobs"))
            lps.push_back({e.at("token").get<std::string>(), e.at("logprob").get<double>()});
        r.token_logprobs = std::move(lps);
    }
    return r;
}

/// Cache key: digest over the provider id, every sampling parameter, the
/// prompt, and the run index (so distinct voting runs cache independently).
inline std::string request_digest(std::string_view provider_id, const CompletionRequest& req) {
    nlohmann::json j;
    j["provider_id"] = std::string(provider_id);
    j["prompt"] = req.prompt;
    j["temperature"] = req.temperature;
    j["top_p"] = req.top_p;
    j["max_tokens"] = req.max_tokens;
    j["frequency_penalty"] = req.frequency_penalty;
    j["presence_penalty"] = req.presence_penalty;
    j["logprobs"] = req.want_logprobs;
    j["best_of"] = req.best_of;
    j["run_index"] = req.run_index;
    return sha256_hex(j.dump());
}

class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string id() const = 0;
    virtual CompletionResponse complete(const CompletionRequest& req) = 0;
};

/// Fallback rule for the mock provider when no fixture matches: emit a fixed
/// text, or read the demonstration label lines out of the prompt and echo the
/// last (highest-similarity under low-to-high ordering) or most frequent one.
struct MockFallback {
    enum class Kind { none, fixed, last_demo_label, majority_demo_label } kind = Kind::none;
    std::string fixed_text;
    std::string label_header = "SENTIMENT";  // demo label field scanned by the demo rules
};

/// Deterministic provider for tests and offline runs: exact-digest fixture
/// lookup, then an optional fallback rule, else an error naming the digest.
class MockProvider : public Provider {
public:
    using Fallback = MockFallback;

    explicit MockProvider(std::string id = "mock", Fallback fallback = {})
        : id_(std::move(id)), fallback_(std::move(fallback)) {}

    std::string id() const override { return id_; }

    void add_fixture(const CompletionRequest& req, CompletionResponse resp) {
        std::lock_guard lock(mu_);
        resp.provider_id = id_;
        fixtures_[request_digest(id_, req)] = std::move(resp);
    }

    void add_fixture_text(const CompletionRequest& req, std::string text) {
        CompletionResponse r;
        r.text = std::move(text);
        r.finish_reason = "stop";
        add_fixture(req, std::move(r));
    }

    std::uint64_t calls() const { return calls_.load(); }

    /// Peak number of concurrently executing complete() calls, for
    /// concurrency-bound assertions.
    int max_in_flight() const { return max_in_flight_.load(); }

    /// Artificial per-call latency, to widen concurrency windows in tests.
    void set_delay(std::chrono::milliseconds d) { delay_ = d; }

    CompletionResponse complete(const CompletionRequest& req) override {
        calls_.fetch_add(1);
        int now = in_flight_.fetch_add(1) + 1;
        int prev = max_in_flight_.load();
        while (now > prev && !max_in_flight_.compare_exchange_weak(prev, now)) {
        }
        if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
        struct Guard {
            std::atomic<int>& c;
            ~Guard() { c.fetch_sub(1); }
        } guard{in_flight_};

        std::string digest = request_digest(id_, req);
        {
            std::lock_guard lock(mu_);
            auto it = fixtures_.find(digest);
            if (it != fixtures_.end()) return it->second;
        }
        switch (fallback_.kind) {
            case Fallback::Kind::fixed: {
                CompletionResponse r;
                r.text = fallback_.fixed_text;
                r.finish_reason = "stop";
                r.provider_id = id_;
                return r;
            }
            case Fallback::Kind::last_demo_label:
            case Fallback::Kind::majority_demo_label: {
                auto labels = demo_labels(req.prompt);
                if (labels.empty())
                    throw ProviderError("mock fallback: no demo labels in prompt (digest " +
                                            digest + ")",
                                        false);
                std::string word;
                if (fallback_.kind == Fallback::Kind::last_demo_label) {
                    word = labels.back();
                } else {
                    std::unordered_map<std::string, int> counts;
                    int best = 0;
                    for (const auto& l : labels) {
                        int c = ++counts[l];
                        // plurality, first-seen wins ties
                        if (c > best) {
                            best = c;
                            word = l;
                        }
                    }
                }
                CompletionResponse r;
                r.text = fallback_.label_header + ": " + word;
                r.finish_reason = "stop";
                r.provider_id = id_;
                return r;
            }
            case Fallback::Kind::none:
                break;
        }
        throw ProviderError("mock provider: no fixture for digest " + digest, false);
    }

private:
    // Values of every non-empty "<label_header>: ..." line, in prompt order.
    // Under the default low-to-high demo ordering the last one belongs to the
    // highest-similarity demonstration.
    std::vector<std::string> demo_labels(const std::string& prompt) const {
        std::vector<std::string> labels;
        std::size_t pos = 0;
        while (pos <= prompt.size()) {
            std::size_t eol = prompt.find('\n', pos);
            std::string_view line(prompt.data() + pos,
                                  (eol == std::string::npos ? prompt.size() : eol) - pos);
            std::string_view rest = line;
            if (rest.size() > fallback_.label_header.size() &&
                util::iequals(rest.substr(0, fallback_.label_header.size()),
                              fallback_.label_header)) {
                rest.remove_prefix(fallback_.label_header.size());
                while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t'))
                    rest.remove_prefix(1);
                if (!rest.empty() && rest.front() == ':') {
                    rest.remove_prefix(1);
                    std::string value = util::trim(rest);
                    if (!value.empty()) labels.push_back(std::move(value));
                }
            }
            if (eol == std::string::npos) break;
            pos = eol + 1;
        }
        return labels;
    }

    std::string id_;
    Fallback fallback_;
    mutable std::mutex mu_;
    std::unordered_map<std::string, CompletionResponse> fixtures_;
    std::atomic<std::uint64_t> calls_{0};
    std::atomic<int> in_flight_{0};
    std::atomic<int> max_in_flight_{0};
    std::chrono::milliseconds delay_{0};
};

struct RetryPolicy {
    int max_attempts = 5;
    int base_delay_ms = 200;  // doubles per attempt
    std::function<void(std::chrono::milliseconds)> sleeper;  // injectable for tests
};

/// Issues a completion, retrying transient failures with exponential backoff
/// up to max_attempts. Permanent errors and exhausted retries propagate.
inline CompletionResponse complete_with_retry(Provider& provider, const CompletionRequest& req,
                                              const RetryPolicy& policy = {}) {
    if (util::trim_view(req.prompt).empty()) throw Error("completion request has empty prompt");
    int attempts = 0;
    for (;;) {
        try {
            ++attempts;
            return provider.complete(req);
        } catch (const ProviderError& e) {
            if (!e.transient() || attempts >= policy.max_attempts)
                throw ProviderError(std::string(e.what()) + " (after " + std::to_string(attempts) +
                                        " attempts)",
                                    e.transient());
            auto delay = std::chrono::milliseconds(policy.base_delay_ms) * (1 << (attempts - 1));
            if (policy.sleeper)
                policy.sleeper(delay);
            else
                std::this_thread::sleep_for(delay);
        }
    }
}

/// One stored completion: the request digest it is keyed by, the response,
/// and when it was written (the entry file's mtime).
struct CacheEntry {
    std::string key;
    CompletionResponse response;
    std::filesystem::file_time_type created_at;
};

/// Disk cache: one file per entry named <digest>.json, body is the canonical
/// JSON serialization of the response. Writers are serialized and atomic
/// (tmp file + rename); readers need no coordination.
class DiskCache {
public:
    explicit DiskCache(std::filesystem::path dir) : dir_(std::move(dir)) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& dir() const { return dir_; }

    std::optional<CompletionResponse> get(const std::string& digest) const {
        auto path = entry_path(digest);
        std::error_code ec;
        if (!std::filesystem::exists(path, ec)) return std::nullopt;
        try {
            return response_from_json(nlohmann::json::parse(util::read_file(path)));
        } catch (const std::exception& e) {
            std::cerr << "warning: unreadable cache entry " << path << ": " << e.what() << "\n";
            return std::nullopt;
        }
    }

    std::optional<CacheEntry> entry(const std::string& digest) const {
        auto response = get(digest);
        if (!response) return std::nullopt;
        std::error_code ec;
        auto written = std::filesystem::last_write_time(entry_path(digest), ec);
        return CacheEntry{digest, std::move(*response), written};
    }

    void put(const std::string& digest, const CompletionResponse& resp) {
        std::lock_guard lock(write_mu_);
        auto path = entry_path(digest);
        auto tmp = path;
        tmp += ".tmp";
        try {
            util::write_file(tmp, to_json(resp).dump());
            std::filesystem::rename(tmp, path);
        } catch (const std::exception& e) {
            std::cerr << "warning: cache write failed for " << path << ": " << e.what() << "\n";
        }
    }

    std::size_t entry_count() const {
        std::size_t n = 0;
        for (const auto& e : std::filesystem::directory_iterator(dir_))
            if (e.path().extension() == ".json") ++n;
        return n;
    }

private:
    std::filesystem::path entry_path(const std::string& digest) const {
        return dir_ / (digest + ".json");
    }

    std::filesystem::path dir_;
    std::mutex write_mu_;
};

/// Cache-through completion. Hits return the stored response without touching
/// the provider; misses call complete_with_retry and store the result.
inline std::pair<CompletionResponse, bool> cached_complete(DiskCache* cache, Provider& provider,
                                                           const CompletionRequest& req,
                                                           const RetryPolicy& policy = {}) {
    std::string digest = request_digest(provider.id(), req);
    if (cache) {
        if (auto hit = cache->get(digest)) return {std::move(*hit), true};
    }
    CompletionResponse resp = complete_with_retry(provider, req, policy);
    if (cache) cache->put(digest, resp);
    return {std::move(resp), false};
}

/// Front door used by the pipeline: caching, retries and a bound on the
/// number of requests in flight. Shared freely across threads.
class Gateway {
public:
    Gateway(Provider& provider, DiskCache* cache, RetryPolicy retry = {}, int max_in_flight = 4)
        : provider_(provider), cache_(cache), retry_(std::move(retry)),
          slots_(max_in_flight > 0 ? max_in_flight : 1) {}

    CompletionResponse complete(const CompletionRequest& req) {
        std::string digest = request_digest(provider_.id(), req);
        if (cache_) {
            if (auto hit = cache_->get(digest)) {
                cache_hits_.fetch_add(1);
                return std::move(*hit);
            }
        }
        CompletionResponse resp;
        {
            Slot slot(*this);
            provider_calls_.fetch_add(1);
            resp = complete_with_retry(provider_, req, retry_);
        }
        if (cache_) cache_->put(digest, resp);
        return resp;
    }

    Provider& provider() { return provider_; }
    std::uint64_t provider_calls() const { return provider_calls_.load(); }
    std::uint64_t cache_hits() const { return cache_hits_.load(); }

private:
    struct Slot {
        Gateway& g;
        explicit Slot(Gateway& gw) : g(gw) {
            std::unique_lock lock(g.mu_);
            g.cv_.wait(lock, [&] { return g.in_flight_ < g.slots_; });
            ++g.in_flight_;
        }
        ~Slot() {
            {
                std::lock_guard lock(g.mu_);
                --g.in_flight_;
            }
            g.cv_.notify_one();
        }
    };

    Provider& provider_;
    DiskCache* cache_;
    RetryPolicy retry_;
    int slots_;
    int in_flight_ = 0;
    std::mutex mu_;
    std::condition_variable cv_;
    std::atomic<std::uint64_t> provider_calls_{0};
    std::atomic<std::uint64_t> cache_hits_{0};
};

}  // namespace carp::gateway
