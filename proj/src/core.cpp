#include "ofcre/core.hpp"

#include <atomic>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ofcre {

using nlohmann::json;

namespace {
std::atomic<bool> g_log_quiet{false};
}

void set_log_quiet(bool quiet) { g_log_quiet = quiet; }

void log_warn(const std::string& msg) {
    if (!g_log_quiet) std::cerr << "[warn] " << msg << "\n";
}

uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string join_tokens(std::span<const std::string> tokens, int start, int end) {
    std::string out;
    for (int i = start; i < end; ++i) {
        if (i > start) out += ' ';
        out += tokens[static_cast<size_t>(i)];
    }
    return out;
}

std::string Instance::sentence_text() const { return join_tokens(tokens, 0, static_cast<int>(tokens.size())); }

RelationInfo RelationInfo::undetermined() {
    RelationInfo r;
    r.id = kUndeterminedLabel;
    r.name = "undetermined relation";
    r.original_description = kUndeterminedDescription;
    return r;
}

ExperimentConfig ExperimentConfig::fewrel_profile() {
    ExperimentConfig c;
    c.relations_per_task = 10;
    c.shots_per_relation = 5;
    c.task_count = 8;
    c.first_task_relations = 10;
    c.first_task_shots = 100;
    return c;
}

ExperimentConfig ExperimentConfig::tacred_profile() {
    ExperimentConfig c;
    c.relations_per_task = 5;
    c.shots_per_relation = 5;
    c.task_count = 8;
    c.first_task_relations = 6;
    c.first_task_shots = 100;
    return c;
}

void ExperimentConfig::validate() const {
    if (alpha_x < 0 || alpha_xd < 0 || alpha_xc < 0)
        throw std::invalid_argument("config: loss coefficients must be >= 0");
    if (batch_size < 2) throw std::invalid_argument("config: batch_size must be >= 2 for contrastive losses");
    if (tau <= 0) throw std::invalid_argument("config: tau must be > 0");
    if (relations_per_task < 1 || task_count < 1 || shots_per_relation < 1)
        throw std::invalid_argument("config: stream shape fields must be >= 1");
    if (encoder_dim < 1 || max_seq_len < 4) throw std::invalid_argument("config: encoder shape invalid");
    if (memory_per_relation < 1) throw std::invalid_argument("config: memory_per_relation must be >= 1");
    if (descriptions_per_relation < 1)
        throw std::invalid_argument("config: descriptions_per_relation must be >= 1");
    if (!(prompt_n0 <= prompt_n1 && prompt_n1 <= prompt_n2 && prompt_n2 <= prompt_n3))
        throw std::invalid_argument("config: prompt boundaries must be non-decreasing");
    if (seeds.empty()) throw std::invalid_argument("config: at least one seed required");
}

std::vector<std::string> validate_instance(const Instance& inst,
                                           const std::set<std::string>& relation_vocab) {
    std::vector<std::string> report;
    const int n = static_cast<int>(inst.tokens.size());

    auto check_span = [&](const EntitySpan& s, const char* which) {
        if (!(0 <= s.start && s.start < s.end && s.end <= n)) {
            report.push_back(std::string(which) + " span out of range");
            return;
        }
        if (s.text != join_tokens(inst.tokens, s.start, s.end))
            report.push_back(std::string(which) + " span text mismatch");
    };
    check_span(inst.head, "head");
    check_span(inst.tail, "tail");

    if (inst.head.overlaps(inst.tail)) report.push_back("overlapping spans");

    const bool label_is_ur = inst.label == kUndeterminedLabel;
    if ((inst.kind == RelationKind::DR) == label_is_ur) report.push_back("kind/label mismatch");

    if (!label_is_ur && !relation_vocab.empty() && !relation_vocab.count(inst.label))
        report.push_back("unknown relation label");

    if (inst.id.empty()) report.push_back("empty id");
    return report;
}

namespace {

json span_to_json(const EntitySpan& s) { return json{{"start", s.start}, {"end", s.end}}; }

EntitySpan span_from_json(const json& j, const std::vector<std::string>& tokens, SpanSource source) {
    EntitySpan s;
    s.start = j.at("start").get<int>();
    s.end = j.at("end").get<int>();
    s.source = source;
    if (s.start >= 0 && s.end <= static_cast<int>(tokens.size()) && s.start < s.end)
        s.text = join_tokens(tokens, s.start, s.end);
    return s;
}

}  // namespace

std::string instance_to_jsonl(const Instance& inst) {
    json j{{"id", inst.id},
           {"tokens", inst.tokens},
           {"head", span_to_json(inst.head)},
           {"tail", span_to_json(inst.tail)},
           {"label", inst.label},
           {"kind", inst.kind == RelationKind::DR ? "DR" : "UR"}};
    return j.dump();
}

Instance instance_from_jsonl(const std::string& line) {
    json j = json::parse(line);
    Instance inst;
    inst.id = j.at("id").get<std::string>();
    inst.tokens = j.at("tokens").get<std::vector<std::string>>();
    inst.head = span_from_json(j.at("head"), inst.tokens, SpanSource::Annotated);
    inst.tail = span_from_json(j.at("tail"), inst.tokens, SpanSource::Annotated);
    inst.label = j.at("label").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "DR" && kind != "UR") throw std::invalid_argument("instance kind must be DR or UR");
    inst.kind = kind == "DR" ? RelationKind::DR : RelationKind::UR;
    inst.origin =
        inst.kind == RelationKind::UR ? InstanceOrigin::PairEnumeration : InstanceOrigin::OriginalAnnotation;
    return inst;
}

std::string relation_to_jsonl(const RelationInfo& rel) {
    json j{{"id", rel.id},
           {"name", rel.name},
           {"description", rel.original_description},
           {"augmented", rel.augmented_descriptions},
           {"candidates", rel.candidate_descriptions}};
    return j.dump();
}

RelationInfo relation_from_jsonl(const std::string& line) {
    json j = json::parse(line);
    RelationInfo r;
    r.id = j.at("id").get<std::string>();
    r.name = j.at("name").get<std::string>();
    r.original_description = j.at("description").get<std::string>();
    r.augmented_descriptions = j.at("augmented").get<std::vector<std::string>>();
    r.candidate_descriptions = j.at("candidates").get<std::vector<std::string>>();
    return r;
}

namespace {

// Flat key set mirroring the ExperimentConfig fields.
template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

std::string config_to_json(const ExperimentConfig& c) {
    json j{{"relations_per_task", c.relations_per_task},
           {"shots_per_relation", c.shots_per_relation},
           {"task_count", c.task_count},
           {"memory_per_relation", c.memory_per_relation},
           {"descriptions_per_relation", c.descriptions_per_relation},
           {"alpha_x", c.alpha_x},
           {"alpha_xd", c.alpha_xd},
           {"alpha_xc", c.alpha_xc},
           {"tau", c.tau},
           {"encoder_dim", c.encoder_dim},
           {"max_seq_len", c.max_seq_len},
           {"epochs", c.epochs},
           {"memory_epochs", c.memory_epochs},
           {"step_size", c.step_size},
           {"batch_size", c.batch_size},
           {"seeds", c.seeds},
           {"first_task_relations", c.first_task_relations},
           {"first_task_shots", c.first_task_shots},
           {"vocab_size", c.vocab_size},
           {"prompt_n0", c.prompt_n0},
           {"prompt_n1", c.prompt_n1},
           {"prompt_n2", c.prompt_n2},
           {"prompt_n3", c.prompt_n3},
           {"shared_bilinear", c.shared_bilinear},
           {"macro_f1", c.macro_f1}};
    return j.dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
    json j = json::parse(text);
    ExperimentConfig c;
    read_if(j, "relations_per_task", c.relations_per_task);
    read_if(j, "shots_per_relation", c.shots_per_relation);
    read_if(j, "task_count", c.task_count);
    read_if(j, "memory_per_relation", c.memory_per_relation);
    read_if(j, "descriptions_per_relation", c.descriptions_per_relation);
    read_if(j, "alpha_x", c.alpha_x);
    read_if(j, "alpha_xd", c.alpha_xd);
    read_if(j, "alpha_xc", c.alpha_xc);
    read_if(j, "tau", c.tau);
    read_if(j, "encoder_dim", c.encoder_dim);
    read_if(j, "max_seq_len", c.max_seq_len);
    read_if(j, "epochs", c.epochs);
    read_if(j, "memory_epochs", c.memory_epochs);
    read_if(j, "step_size", c.step_size);
    read_if(j, "batch_size", c.batch_size);
    read_if(j, "seeds", c.seeds);
    read_if(j, "first_task_relations", c.first_task_relations);
    read_if(j, "first_task_shots", c.first_task_shots);
    read_if(j, "vocab_size", c.vocab_size);
    read_if(j, "prompt_n0", c.prompt_n0);
    read_if(j, "prompt_n1", c.prompt_n1);
    read_if(j, "prompt_n2", c.prompt_n2);
    read_if(j, "prompt_n3", c.prompt_n3);
    read_if(j, "shared_bilinear", c.shared_bilinear);
    read_if(j, "macro_f1", c.macro_f1);
    c.validate();
    return c;
}

bool operator==(const EntitySpan& a, const EntitySpan& b) {
    return a.start == b.start && a.end == b.end && a.text == b.text;
}

bool operator==(const Instance& a, const Instance& b) {
    return a.id == b.id && a.tokens == b.tokens && a.head == b.head && a.tail == b.tail &&
           a.label == b.label && a.kind == b.kind;
}

bool operator==(const RelationInfo& a, const RelationInfo& b) {
    return a.id == b.id && a.name == b.name && a.original_description == b.original_description &&
           a.augmented_descriptions == b.augmented_descriptions &&
           a.candidate_descriptions == b.candidate_descriptions;
}

}  // namespace ofcre
