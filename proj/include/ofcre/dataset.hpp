#pragma once

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ofcre/core.hpp"

namespace ofcre {

// Recoverable per-sentence extraction failure; the dataset builder keeps the
// sentence with its annotated entities only.
struct NerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class NerInterface {
public:
    virtual ~NerInterface() = default;
    virtual std::vector<EntitySpan> extract(std::span<const std::string> tokens) const = 0;
    virtual std::string tag() const = 0;
};

// Exact token-sequence matching against a phrase list. Leftmost-longest,
// non-overlapping matches.
class GazetteerNer : public NerInterface {
public:
    explicit GazetteerNer(const std::vector<std::string>& phrases);
    static GazetteerNer from_wordlist_file(const std::string& path);

    std::vector<EntitySpan> extract(std::span<const std::string> tokens) const override;
    std::string tag() const override { return "gazetteer"; }

private:
    std::vector<std::vector<std::string>> entries_;  // sorted, deduped
    size_t max_len_ = 0;
};

struct RawAnnotation {
    EntitySpan head;
    EntitySpan tail;
    std::string relation;
};

struct RawSentence {
    std::string id;
    std::vector<std::string> tokens;
    std::vector<RawAnnotation> annotations;
};

struct SentenceRecord {
    std::string id;
    std::vector<std::string> tokens;
    std::vector<EntitySpan> entities;  // merged list
    int annotation_count = 0;
};

struct OpenDataset {
    std::vector<SentenceRecord> sentences;
    std::vector<Instance> instances;
    std::map<std::string, RelationInfo> relations;
};

struct DatasetStats {
    long dr_count = 0;
    long ur_count = 0;
    double avg_entities_per_sample = 0.0;

    std::string to_json() const;
};

std::vector<EntitySpan> extract_entities(std::span<const std::string> tokens, const NerInterface& ner);

// Annotated spans are kept verbatim; extracted spans overlapping an annotated
// one are absorbed into it (source becomes Merged); exact duplicates dropped;
// result sorted by range.
std::vector<EntitySpan> merge_entities(std::vector<EntitySpan> extracted,
                                       std::vector<EntitySpan> annotated);

// One DR instance per annotation, one UR instance per unordered non-annotated
// pair of merged entities. Overlapping span pairs cannot form instances and
// are skipped. Throws on annotations that reference spans absent from merged.
std::vector<Instance> enumerate_pairs(const std::string& sentence_id,
                                      const std::vector<std::string>& tokens,
                                      const std::vector<EntitySpan>& merged,
                                      const std::vector<RawAnnotation>& annotations);

DatasetStats compute_stats(const OpenDataset& dataset);

OpenDataset build_open_dataset(const std::vector<RawSentence>& sentences, const NerInterface* ner,
                               std::map<std::string, RelationInfo> relations = {});

// Deterministic episodic sampler: disjoint relation sets per task, K-shot DR
// training instances per relation, UR instances follow their sentence's task.
TaskStream sample_task_stream(const OpenDataset& dataset, const ExperimentConfig& cfg, uint64_t seed);

// ---- ingestion ---------------------------------------------------------------

// Object keyed by relation id; samples carry tokens plus h/t index triples.
std::vector<RawSentence> ingest_fewrel(const std::string& json_text);

// Array of records with token list, inclusive subj/obj spans and a relation
// name; records labeled no_relation are dropped.
std::vector<RawSentence> ingest_tacred(const std::string& json_text);

// Optional {"relation id": "description", ...} side input.
std::map<std::string, RelationInfo> relations_from_descriptions(const std::string& json_text);

// ---- persistence ---------------------------------------------------------------

void write_dataset(const OpenDataset& dataset, const std::string& dir);
OpenDataset load_dataset(const std::string& dir);

// Stable in-place shuffle driven by the given engine (library shuffles are
// implementation-defined across standard libraries).
template <typename T>
void deterministic_shuffle(std::vector<T>& xs, std::mt19937_64& rng) {
    for (size_t i = xs.size(); i > 1; --i) {
        const size_t j = static_cast<size_t>(rng() % i);
        std::swap(xs[i - 1], xs[j]);
    }
}

}  // namespace ofcre
