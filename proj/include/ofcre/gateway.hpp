#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofcre/core.hpp"

namespace ofcre {

// Transport-level failure after retries; distinct from a parsed NA result.
struct GatewayTransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CandidateTriplet {
    std::string subject;
    std::optional<std::string> relation_trigger;  // nullopt <=> non-relational pair (NA)
    std::string object;

    bool is_na() const { return !relation_trigger.has_value(); }
};

class GatewayBackend {
public:
    virtual ~GatewayBackend() = default;
    virtual std::string complete(const std::string& prompt) = 0;
    virtual std::string tag() const = 0;
};

// Deterministic scripted backend; a pure function of the prompt. Unscripted
// triplet requests fall back to a between-entities trigger heuristic so whole
// pipelines run offline.
class MockBackend : public GatewayBackend {
public:
    std::string complete(const std::string& prompt) override;
    std::string tag() const override { return "mock"; }

    // Pin the triplet for a (sentence, unordered pair). Null trigger => NA.
    void script_triplet(const std::string& sentence_text, const std::string& subject,
                        const std::string& object, std::optional<std::string> trigger);

    size_t call_count() const { return calls_; }
    void reset_call_count() { calls_ = 0; }

private:
    std::string complete_oie(const std::string& prompt);
    std::string complete_augment(const std::string& prompt);
    std::string complete_candidate(const std::string& prompt);

    struct ScriptedTriplet {
        std::string subject;
        std::string object;
        std::optional<std::string> trigger;
    };
    std::map<std::string, ScriptedTriplet> scripted_;  // key: text \x1f lo \x1f hi
    size_t calls_ = 0;
};

// Chat-completion client with exponential backoff (3 retries). Optional; not
// exercised by the test suite.
class HttpBackend : public GatewayBackend {
public:
    struct Options {
        std::string host = "http://localhost:8000";
        std::string path = "/v1/chat/completions";
        std::string model = "gpt-4o-mini";
        std::string api_key_env = "OFCRE_API_KEY";
        int max_retries = 3;
    };
    explicit HttpBackend(Options opts) : opts_(std::move(opts)) {}

    std::string complete(const std::string& prompt) override;
    std::string tag() const override { return "http:" + opts_.model; }

private:
    Options opts_;
};

// Append-only JSONL store keyed by hash(backend tag, prompt); collisions are
// resolved by full-prompt comparison. Thread-safe writes.
class ResponseCache {
public:
    ResponseCache() = default;                    // in-memory only
    explicit ResponseCache(std::string path);     // loads existing entries

    std::optional<std::string> lookup(const std::string& backend_tag, const std::string& prompt) const;
    void store(const std::string& backend_tag, const std::string& prompt, const std::string& completion);
    size_t size() const;

    static std::string key_of(const std::string& backend_tag, const std::string& prompt);

private:
    struct Entry {
        std::string prompt;
        std::string completion;
        std::string backend;
    };
    mutable std::mutex mu_;
    std::string path_;
    std::map<std::string, std::vector<Entry>> entries_;
};

// ---- prompt rendering (byte-stable; golden-file checked) ----------------------

std::string render_oie_prompt(const std::string& text, const std::string& entity_a,
                              const std::string& entity_b);
std::string render_candidate_prompt(const std::string& text, const CandidateTriplet& triplet,
                                    const std::string& relation_name, int k);
std::string render_augment_prompt(const std::string& relation_name, const std::string& description,
                                  int k);

// ---- gateway operations ----------------------------------------------------------

class OieGateway {
public:
    explicit OieGateway(GatewayBackend& backend, ResponseCache* cache = nullptr)
        : backend_(backend), cache_(cache) {}

    CandidateTriplet extract_triplet(std::span<const std::string> tokens, const EntitySpan& e1,
                                     const EntitySpan& e2);

    // Requires a non-null trigger; returns up to k definition texts, each
    // bundled with its example sentences.
    std::vector<std::string> generate_candidate_descriptions(const CandidateTriplet& triplet,
                                                             const std::string& relation_name,
                                                             const std::string& sentence_text, int k);

    // Not applicable to UR; returns k expanded descriptions with examples.
    std::vector<std::string> augment_relation_description(const RelationInfo& relation, int k);

    GatewayBackend& backend() { return backend_; }

private:
    std::string complete_cached(const std::string& prompt, bool force_refresh = false);

    GatewayBackend& backend_;
    ResponseCache* cache_ = nullptr;
};

// Exposed for tests: parse a bracketed triplet completion; nullopt on failure.
std::optional<CandidateTriplet> parse_triplet_completion(const std::string& completion);

}  // namespace ofcre
