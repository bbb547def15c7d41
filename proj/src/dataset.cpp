#include "ofcre/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace ofcre {

using nlohmann::json;
namespace fs = std::filesystem;

// ---- gazetteer ----------------------------------------------------------------

GazetteerNer::GazetteerNer(const std::vector<std::string>& phrases) {
    std::set<std::vector<std::string>> uniq;
    for (const std::string& p : phrases) {
        std::vector<std::string> toks;
        std::istringstream in(p);
        std::string t;
        while (in >> t) toks.push_back(t);
        if (!toks.empty()) uniq.insert(std::move(toks));
    }
    entries_.assign(uniq.begin(), uniq.end());
    for (const auto& e : entries_) max_len_ = std::max(max_len_, e.size());
}

GazetteerNer GazetteerNer::from_wordlist_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open gazetteer wordlist: " + path);
    std::vector<std::string> phrases;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) phrases.push_back(line);
    }
    return GazetteerNer(phrases);
}

std::vector<EntitySpan> GazetteerNer::extract(std::span<const std::string> tokens) const {
    std::vector<EntitySpan> out;
    const size_t n = tokens.size();
    size_t pos = 0;
    while (pos < n) {
        size_t best = 0;
        const size_t cap = std::min(max_len_, n - pos);
        for (size_t len = cap; len >= 1; --len) {
            std::vector<std::string> window(tokens.begin() + static_cast<long>(pos),
                                            tokens.begin() + static_cast<long>(pos + len));
            if (std::binary_search(entries_.begin(), entries_.end(), window)) {
                best = len;
                break;
            }
        }
        if (best == 0) {
            ++pos;
            continue;
        }
        EntitySpan s;
        s.start = static_cast<int>(pos);
        s.end = static_cast<int>(pos + best);
        s.text = join_tokens(tokens, s.start, s.end);
        s.source = SpanSource::NerExtracted;
        out.push_back(std::move(s));
        pos += best;
    }
    return out;
}

// ---- construction ----------------------------------------------------------------

std::vector<EntitySpan> extract_entities(std::span<const std::string> tokens, const NerInterface& ner) {
    if (tokens.empty()) throw std::invalid_argument("extract_entities: empty token sequence");
    std::vector<EntitySpan> spans = ner.extract(tokens);
    std::vector<EntitySpan> out;
    const int n = static_cast<int>(tokens.size());
    for (EntitySpan& s : spans) {
        if (s.start < 0 || s.end > n || s.start >= s.end) continue;
        s.source = SpanSource::NerExtracted;
        if (s.text.empty()) s.text = join_tokens(tokens, s.start, s.end);
        out.push_back(std::move(s));
    }
    std::sort(out.begin(), out.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return std::tie(a.start, a.end) < std::tie(b.start, b.end); });
    return out;
}

std::vector<EntitySpan> merge_entities(std::vector<EntitySpan> extracted,
                                       std::vector<EntitySpan> annotated) {
    std::vector<EntitySpan> out;
    auto seen = [&](const EntitySpan& s) {
        return std::any_of(out.begin(), out.end(), [&](const EntitySpan& o) { return o.same_range(s); });
    };
    for (EntitySpan& a : annotated) {
        if (seen(a)) continue;
        const bool absorbed = std::any_of(extracted.begin(), extracted.end(), [&](const EntitySpan& e) {
            return e.overlaps(a) && !e.same_range(a);
        });
        if (absorbed && a.source == SpanSource::Annotated) a.source = SpanSource::Merged;
        out.push_back(std::move(a));
    }
    for (EntitySpan& e : extracted) {
        if (seen(e)) continue;
        const bool overlaps_annotated = std::any_of(out.begin(), out.end(), [&](const EntitySpan& o) {
            return o.source != SpanSource::NerExtracted && o.overlaps(e);
        });
        if (overlaps_annotated) continue;
        // Keep the first of identical extracted ranges.
        out.push_back(std::move(e));
    }
    std::sort(out.begin(), out.end(),
              [](const EntitySpan& a, const EntitySpan& b) { return std::tie(a.start, a.end) < std::tie(b.start, b.end); });
    out.erase(std::unique(out.begin(), out.end(),
                          [](const EntitySpan& a, const EntitySpan& b) { return a.same_range(b); }),
              out.end());
    return out;
}

std::vector<Instance> enumerate_pairs(const std::string& sentence_id,
                                      const std::vector<std::string>& tokens,
                                      const std::vector<EntitySpan>& merged,
                                      const std::vector<RawAnnotation>& annotations) {
    auto find_span = [&](const EntitySpan& s) -> const EntitySpan* {
        for (const EntitySpan& m : merged)
            if (m.same_range(s)) return &m;
        return nullptr;
    };

    std::vector<Instance> out;
    std::set<std::pair<std::pair<int, int>, std::pair<int, int>>> annotated_pairs;
    int dr_index = 0;
    for (const RawAnnotation& a : annotations) {
        const EntitySpan* head = find_span(a.head);
        const EntitySpan* tail = find_span(a.tail);
        if (!head || !tail)
            throw std::runtime_error("enumerate_pairs: annotation in sentence '" + sentence_id +
                                     "' references a span absent from the merged entity list");
        Instance inst;
        inst.id = sentence_id + "#dr" + std::to_string(dr_index++);
        inst.tokens = tokens;
        inst.head = *head;
        inst.tail = *tail;
        inst.label = a.relation;
        inst.kind = RelationKind::DR;
        inst.origin = InstanceOrigin::OriginalAnnotation;
        out.push_back(std::move(inst));
        annotated_pairs.insert({{a.head.start, a.head.end}, {a.tail.start, a.tail.end}});
        annotated_pairs.insert({{a.tail.start, a.tail.end}, {a.head.start, a.head.end}});
    }

    int ur_index = 0;
    for (size_t i = 0; i < merged.size(); ++i) {
        for (size_t j = i + 1; j < merged.size(); ++j) {
            const EntitySpan& a = merged[i];
            const EntitySpan& b = merged[j];
            if (a.overlaps(b)) continue;
            if (annotated_pairs.count({{a.start, a.end}, {b.start, b.end}})) continue;
            Instance inst;
            inst.id = sentence_id + "#ur" + std::to_string(ur_index++);
            inst.tokens = tokens;
            inst.head = a;  // earlier span is the head; merged is sorted
            inst.tail = b;
            inst.label = kUndeterminedLabel;
            inst.kind = RelationKind::UR;
            inst.origin = InstanceOrigin::PairEnumeration;
            out.push_back(std::move(inst));
        }
    }
    return out;
}

DatasetStats compute_stats(const OpenDataset& dataset) {
    DatasetStats s;
    for (const Instance& inst : dataset.instances)
        (inst.kind == RelationKind::DR ? s.dr_count : s.ur_count)++;
    if (!dataset.sentences.empty()) {
        double total = 0.0;
        for (const SentenceRecord& sent : dataset.sentences) total += static_cast<double>(sent.entities.size());
        s.avg_entities_per_sample = total / static_cast<double>(dataset.sentences.size());
    }
    return s;
}

std::string DatasetStats::to_json() const {
    json j{{"dr_count", dr_count}, {"ur_count", ur_count}, {"avg_entities_per_sample", avg_entities_per_sample}};
    return j.dump();
}

OpenDataset build_open_dataset(const std::vector<RawSentence>& sentences, const NerInterface* ner,
                               std::map<std::string, RelationInfo> relations) {
    OpenDataset ds;
    ds.relations = std::move(relations);
    for (const RawSentence& raw : sentences) {
        std::vector<EntitySpan> extracted;
        if (ner) {
            try {
                extracted = extract_entities(raw.tokens, *ner);
            } catch (const NerError& e) {
                log_warn("entity extraction failed for sentence '" + raw.id + "': " + e.what() +
                         " (keeping annotated entities only)");
            }
        }
        std::vector<EntitySpan> annotated;
        for (const RawAnnotation& a : raw.annotations) {
            annotated.push_back(a.head);
            annotated.push_back(a.tail);
        }
        for (EntitySpan& s : annotated) s.source = SpanSource::Annotated;
        std::vector<EntitySpan> merged = merge_entities(std::move(extracted), std::move(annotated));

        std::vector<Instance> insts = enumerate_pairs(raw.id, raw.tokens, merged, raw.annotations);
        ds.instances.insert(ds.instances.end(), std::make_move_iterator(insts.begin()),
                            std::make_move_iterator(insts.end()));

        SentenceRecord rec;
        rec.id = raw.id;
        rec.tokens = raw.tokens;
        rec.entities = std::move(merged);
        rec.annotation_count = static_cast<int>(raw.annotations.size());
        ds.sentences.push_back(std::move(rec));

        for (const RawAnnotation& a : raw.annotations) {
            if (!ds.relations.count(a.relation)) {
                RelationInfo r;
                r.id = a.relation;
                r.name = a.relation;
                r.original_description = a.relation;
                ds.relations.emplace(a.relation, std::move(r));
            }
        }
    }
    if (!ds.relations.count(kUndeterminedLabel))
        ds.relations.emplace(kUndeterminedLabel, RelationInfo::undetermined());
    return ds;
}

// ---- episodic sampling ----------------------------------------------------------------

TaskStream sample_task_stream(const OpenDataset& dataset, const ExperimentConfig& cfg, uint64_t seed) {
    cfg.validate();
    std::mt19937_64 rng(seed);

    std::map<std::string, std::vector<const Instance*>> by_relation;
    std::map<std::string, std::vector<const Instance*>> ur_by_sentence;
    auto sentence_of = [](const Instance& inst) {
        const size_t cut = inst.id.rfind('#');
        return cut == std::string::npos ? inst.id : inst.id.substr(0, cut);
    };
    for (const Instance& inst : dataset.instances) {
        if (inst.kind == RelationKind::DR)
            by_relation[inst.label].push_back(&inst);
        else
            ur_by_sentence[sentence_of(inst)].push_back(&inst);
    }
    for (auto& [rel, insts] : by_relation)
        std::sort(insts.begin(), insts.end(),
                  [](const Instance* a, const Instance* b) { return a->id < b->id; });

    std::vector<std::string> relation_ids;
    for (const auto& [rel, insts] : by_relation) relation_ids.push_back(rel);
    deterministic_shuffle(relation_ids, rng);

    const int first_rel = cfg.effective_first_task_relations();
    const int first_shots = cfg.effective_first_task_shots();

    TaskStream stream;
    stream.relations_per_task = cfg.relations_per_task;
    stream.shots_per_relation = cfg.shots_per_relation;
    stream.task_count = cfg.task_count;

    size_t cursor = 0;
    auto pick_relations = [&](int count, int min_instances, int task_index) {
        std::vector<std::string> picked;
        while (static_cast<int>(picked.size()) < count && cursor < relation_ids.size()) {
            const std::string& rel = relation_ids[cursor++];
            if (static_cast<int>(by_relation[rel].size()) >= min_instances) picked.push_back(rel);
        }
        if (static_cast<int>(picked.size()) < count) {
            std::ostringstream msg;
            msg << "sample_task_stream: task " << task_index << " needs " << count << " relations with >= "
                << min_instances << " instances; only " << picked.size() << " available";
            throw std::runtime_error(msg.str());
        }
        return picked;
    };

    // sentence -> (earliest train task, earliest test task)
    std::map<std::string, std::pair<int, int>> sentence_task;
    auto note_sentence = [&](const std::string& sid, int task, bool train) {
        auto [it, _] = sentence_task.try_emplace(sid, std::make_pair(0, 0));
        int& slot = train ? it->second.first : it->second.second;
        if (slot == 0 || task < slot) slot = task;
    };

    for (int t = 1; t <= cfg.task_count; ++t) {
        const int shots = t == 1 ? first_shots : cfg.shots_per_relation;
        const int rel_count = t == 1 ? first_rel : cfg.relations_per_task;
        TaskDataset task;
        task.index = t;
        task.relations = pick_relations(rel_count, shots, t);
        std::sort(task.relations.begin(), task.relations.end());
        for (const std::string& rel : task.relations) {
            std::vector<const Instance*> pool = by_relation[rel];
            deterministic_shuffle(pool, rng);
            for (int i = 0; i < static_cast<int>(pool.size()); ++i) {
                const Instance* inst = pool[static_cast<size_t>(i)];
                const bool is_train = i < shots;
                (is_train ? task.train : task.test).push_back(*inst);
                note_sentence(sentence_of(*inst), t, is_train);
            }
        }
        stream.tasks.push_back(std::move(task));
    }

    // UR instances ride with their sentence: train split of the earliest task
    // that trains on the sentence, else test split of the earliest test task.
    for (const auto& [sid, insts] : ur_by_sentence) {
        auto it = sentence_task.find(sid);
        if (it == sentence_task.end()) continue;
        const auto [train_task, test_task] = it->second;
        if (train_task > 0)
            for (const Instance* inst : insts)
                stream.tasks[static_cast<size_t>(train_task - 1)].train.push_back(*inst);
        else if (test_task > 0)
            for (const Instance* inst : insts)
                stream.tasks[static_cast<size_t>(test_task - 1)].test.push_back(*inst);
    }

    for (TaskDataset& task : stream.tasks) {
        auto by_id = [](const Instance& a, const Instance& b) { return a.id < b.id; };
        std::sort(task.train.begin(), task.train.end(), by_id);
        std::sort(task.test.begin(), task.test.end(), by_id);
    }
    return stream;
}

// ---- ingestion ----------------------------------------------------------------

namespace {

EntitySpan span_from_index_list(const json& indices, const std::vector<std::string>& tokens) {
    if (!indices.is_array() || indices.empty())
        throw std::invalid_argument("ingest: entity index list missing");
    int lo = indices[0].get<int>();
    int hi = lo;
    for (const auto& v : indices) {
        const int i = v.get<int>();
        lo = std::min(lo, i);
        hi = std::max(hi, i);
    }
    EntitySpan s;
    s.start = lo;
    s.end = hi + 1;
    s.source = SpanSource::Annotated;
    if (s.start < 0 || s.end > static_cast<int>(tokens.size()))
        throw std::invalid_argument("ingest: entity span out of range");
    s.text = join_tokens(tokens, s.start, s.end);
    return s;
}

}  // namespace

std::vector<RawSentence> ingest_fewrel(const std::string& json_text) {
    json root = json::parse(json_text);
    if (!root.is_object()) throw std::invalid_argument("ingest_fewrel: expected an object keyed by relation");
    std::vector<RawSentence> out;
    for (const auto& [relation, samples] : root.items()) {
        int index = 0;
        for (const auto& sample : samples) {
            RawSentence s;
            s.id = relation + "_" + std::to_string(index++);
            s.tokens = sample.at("tokens").get<std::vector<std::string>>();
            const json& h = sample.at("h");
            const json& t = sample.at("t");
            RawAnnotation a;
            a.head = span_from_index_list(h.at(2).at(0), s.tokens);
            a.tail = span_from_index_list(t.at(2).at(0), s.tokens);
            a.relation = relation;
            s.annotations.push_back(std::move(a));
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<RawSentence> ingest_tacred(const std::string& json_text) {
    json root = json::parse(json_text);
    if (!root.is_array()) throw std::invalid_argument("ingest_tacred: expected an array of records");
    std::vector<RawSentence> out;
    int index = 0;
    for (const auto& rec : root) {
        const std::string relation = rec.at("relation").get<std::string>();
        ++index;
        if (relation == "no_relation") continue;
        RawSentence s;
        s.id = rec.contains("id") ? rec.at("id").get<std::string>() : "tacred_" + std::to_string(index - 1);
        s.tokens = rec.at("token").get<std::vector<std::string>>();
        auto make_span = [&](const char* lo_key, const char* hi_key) {
            EntitySpan sp;
            sp.start = rec.at(lo_key).get<int>();
            sp.end = rec.at(hi_key).get<int>() + 1;  // inclusive -> half-open
            sp.source = SpanSource::Annotated;
            if (sp.start < 0 || sp.end > static_cast<int>(s.tokens.size()) || sp.start >= sp.end)
                throw std::invalid_argument("ingest_tacred: span out of range in record " + s.id);
            sp.text = join_tokens(s.tokens, sp.start, sp.end);
            return sp;
        };
        RawAnnotation a;
        a.head = make_span("subj_start", "subj_end");
        a.tail = make_span("obj_start", "obj_end");
        a.relation = relation;
        s.annotations.push_back(std::move(a));
        out.push_back(std::move(s));
    }
    return out;
}

std::map<std::string, RelationInfo> relations_from_descriptions(const std::string& json_text) {
    json root = json::parse(json_text);
    std::map<std::string, RelationInfo> out;
    for (const auto& [id, desc] : root.items()) {
        RelationInfo r;
        r.id = id;
        r.name = id;
        r.original_description = desc.get<std::string>();
        out.emplace(id, std::move(r));
    }
    return out;
}

// ---- persistence ----------------------------------------------------------------

void write_dataset(const OpenDataset& dataset, const std::string& dir) {
    fs::create_directories(dir);
    {
        std::ofstream out(fs::path(dir) / "instances.jsonl", std::ios::binary);
        for (const Instance& inst : dataset.instances) out << instance_to_jsonl(inst) << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "relations.jsonl", std::ios::binary);
        for (const auto& [id, rel] : dataset.relations) out << relation_to_jsonl(rel) << "\n";
    }
    {
        std::ofstream out(fs::path(dir) / "sentences.jsonl", std::ios::binary);
        for (const SentenceRecord& s : dataset.sentences) {
            json ents = json::array();
            for (const EntitySpan& e : s.entities) ents.push_back({{"start", e.start}, {"end", e.end}});
            out << json{{"id", s.id}, {"tokens", s.tokens}, {"entities", ents},
                        {"annotations", s.annotation_count}}
                       .dump()
                << "\n";
        }
    }
}

OpenDataset load_dataset(const std::string& dir) {
    OpenDataset ds;
    auto read_lines = [](const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());
        std::vector<std::string> lines;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) lines.push_back(line);
        return lines;
    };
    for (const std::string& line : read_lines(fs::path(dir) / "instances.jsonl"))
        ds.instances.push_back(instance_from_jsonl(line));
    for (const std::string& line : read_lines(fs::path(dir) / "relations.jsonl")) {
        RelationInfo r = relation_from_jsonl(line);
        ds.relations.emplace(r.id, std::move(r));
    }
    for (const std::string& line : read_lines(fs::path(dir) / "sentences.jsonl")) {
        json j = json::parse(line);
        SentenceRecord s;
        s.id = j.at("id").get<std::string>();
        s.tokens = j.at("tokens").get<std::vector<std::string>>();
        for (const auto& e : j.at("entities")) {
            EntitySpan sp;
            sp.start = e.at("start").get<int>();
            sp.end = e.at("end").get<int>();
            sp.text = join_tokens(s.tokens, sp.start, sp.end);
            sp.source = SpanSource::Merged;
            s.entities.push_back(std::move(sp));
        }
        s.annotation_count = j.at("annotations").get<int>();
        ds.sentences.push_back(std::move(s));
    }
    return ds;
}

}  // namespace ofcre
