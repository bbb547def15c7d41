#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

namespace ofcre {

// Distinguished label for undetermined relations. Present in every task.
inline constexpr const char* kUndeterminedLabel = "UR";

// Fixed description attached to the UR label in every dataset.
inline constexpr const char* kUndeterminedDescription =
    "This relation is used when the relationship between entities is either not applicable or "
    "unknown. It serves as a default category when no other relation type clearly applies or "
    "when there is insufficient information to determine the relationship.";

enum class SpanSource { Annotated, NerExtracted, Merged };
enum class RelationKind { DR, UR };
enum class InstanceOrigin { OriginalAnnotation, PairEnumeration };

// Token-level half-open span [start, end) into a sentence.
struct EntitySpan {
    std::string text;
    int start = 0;
    int end = 0;
    SpanSource source = SpanSource::Annotated;

    bool same_range(const EntitySpan& o) const { return start == o.start && end == o.end; }
    bool overlaps(const EntitySpan& o) const { return start < o.end && o.start < end; }
    int length() const { return end - start; }
};

// One (sentence, head, tail, label) unit; the atom of training and testing.
struct Instance {
    std::string id;
    std::vector<std::string> tokens;
    EntitySpan head;
    EntitySpan tail;
    std::string label;
    RelationKind kind = RelationKind::DR;
    InstanceOrigin origin = InstanceOrigin::OriginalAnnotation;

    std::string sentence_text() const;
};

struct RelationInfo {
    std::string id;
    std::string name;
    std::string original_description;
    std::vector<std::string> augmented_descriptions;
    std::vector<std::string> candidate_descriptions;

    bool is_undetermined() const { return id == kUndeterminedLabel; }
    static RelationInfo undetermined();
};

struct TaskDataset {
    int index = 0;  // 1-based task position
    std::vector<std::string> relations;
    std::vector<Instance> train;
    std::vector<Instance> test;
};

struct TaskStream {
    std::vector<TaskDataset> tasks;
    int relations_per_task = 0;
    int shots_per_relation = 0;
    int task_count = 0;
};

// Memory, prototypes and accumulated relation knowledge across tasks.
struct ContinualState {
    std::map<std::string, std::vector<Instance>> memory;
    std::map<std::string, std::vector<double>> prototypes;
    std::set<std::string> seen_relations;
    std::map<std::string, RelationInfo> relations;
    int memory_per_relation = 5;
};

struct ExperimentConfig {
    int relations_per_task = 10;       // N
    int shots_per_relation = 5;        // K-shot
    int task_count = 8;                // T
    int memory_per_relation = 5;       // L
    int descriptions_per_relation = 5; // K augmented / candidate descriptions
    double alpha_x = 1.0;
    double alpha_xd = 2.0;
    double alpha_xc = 2.0;
    double tau = 0.1;
    int encoder_dim = 768;
    int max_seq_len = 256;
    int epochs = 10;
    int memory_epochs = 10;
    double step_size = 1e-5;
    int batch_size = 16;
    std::vector<uint64_t> seeds = {42};

    // First-task profile; 0 means "same as the rest of the stream".
    int first_task_relations = 0;
    int first_task_shots = 0;

    // Toy-encoder shape knobs.
    int vocab_size = 257;
    int prompt_n0 = 3;
    int prompt_n1 = 6;
    int prompt_n2 = 9;
    int prompt_n3 = 12;
    bool shared_bilinear = false;
    bool macro_f1 = false;

    int effective_first_task_relations() const {
        return first_task_relations > 0 ? first_task_relations : relations_per_task;
    }
    int effective_first_task_shots() const {
        return first_task_shots > 0 ? first_task_shots : shots_per_relation;
    }

    static ExperimentConfig fewrel_profile();
    static ExperimentConfig tacred_profile();

    // Throws std::invalid_argument on violated invariants.
    void validate() const;
};

// ---- validation ------------------------------------------------------------

// Returns the list of violated invariants; empty means valid. Never throws.
std::vector<std::string> validate_instance(const Instance& inst,
                                           const std::set<std::string>& relation_vocab);

// ---- serialization ---------------------------------------------------------

std::string instance_to_jsonl(const Instance& inst);
Instance instance_from_jsonl(const std::string& line);

std::string relation_to_jsonl(const RelationInfo& rel);
RelationInfo relation_from_jsonl(const std::string& line);

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);

bool operator==(const EntitySpan& a, const EntitySpan& b);
bool operator==(const Instance& a, const Instance& b);
bool operator==(const RelationInfo& a, const RelationInfo& b);

// ---- small shared utilities ------------------------------------------------

std::string join_tokens(std::span<const std::string> tokens, int start, int end);
uint64_t fnv1a64(std::string_view s);
void log_warn(const std::string& msg);
void set_log_quiet(bool quiet);

}  // namespace ofcre
