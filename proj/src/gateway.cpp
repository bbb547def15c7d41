#include "ofcre/gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace ofcre {

using nlohmann::json;

// ---- prompt rendering ---------------------------------------------------------

std::string render_oie_prompt(const std::string& text, const std::string& entity_a,
                              const std::string& entity_b) {
    std::string p;
    p += "Given a piece of text, two entities subject, object (not ordered) and corresponding "
         "relation type between two entities, extract the relation trigger in the form of "
         "[Subject, Relation, Object] from it. If there is not any relation, relation is null.\n";
    p += "Here are some examples:\n";
    p += "\n";
    p += "Example 1:\n";
    p += "Text: \"he passed away on saturday .\"\n";
    p += "Subject, Object entities(not ordered): \"he\", \"saturday\"\n";
    p += "Complete triplets: [\"he\", \"passed away on\", \"saturday\"]\n";
    p += "\n";
    p += "Example 2:\n";
    p += "Text: \"as a substantial shareholder in cnac's subsidiary air china, cathay pacific said "
         "late monday it would give serious consideration to joining cnac and form a strategic "
         "partnership with china eastern.\"\n";
    p += "Subject, Object entities(not ordered): \"cnac\", \"cathay pacific\"\n";
    p += "Complete triplets: [\"cathay pacific\", \"a substantial shareholder\", \"cnac\"]\n";
    p += "\n";
    p += "Now it's your turn! Please extract the relation from the following text:\n";
    p += "Text: \"" + text + "\"\n";
    p += "Subject, Object (not ordered): \"" + entity_a + "\", \"" + entity_b + "\"\n";
    p += "Complete triplets: ";
    return p;
}

std::string render_candidate_prompt(const std::string& text, const CandidateTriplet& triplet,
                                    const std::string& relation_name, int k) {
    if (triplet.is_na())
        throw std::invalid_argument("render_candidate_prompt: triplet has no relation trigger");
    const std::string& trigger = *triplet.relation_trigger;
    std::string p;
    p += "Define the relationship in a relational triplet extracted from a given text and provide 3 "
         "sentence examples of the relationship.\n";
    p += "You must generate " + std::to_string(k) +
         " diverse samples of (relation definition, example) pairs for the relationship.\n";
    p += "\n";
    p += "Example 1:\n";
    p += "Text: \"Albert Einstein was born in Germany in 1879.\"\n";
    p += "Triplet: [\"Albert Einstein\", \"was born in\", \"Germany\"]\n";
    p += "Relation type: \"person place of birth\"\n";
    p += "Definitions and examples of \"was born in\":\n";
    p += "\n";
    p += "Sample 1:\n";
    p += "{\n";
    p += "    \"definition\": \"The relationship between a person and the place where they were born.\",\n";
    p += "    \"examples\": [\n";
    p += "        \"Isaac Newton was born in England in 1643.\",\n";
    p += "        \"Marie Curie was born in Warsaw, Poland.\",\n";
    p += "        \"Leonardo da Vinci was born in Vinci, Italy.\"\n";
    p += "    ]\n";
    p += "}\n";
    p += "\n";
    p += "Now it's your turn! Please define the relationship in the following relational triplet:\n";
    p += "Text: \"" + text + "\"\n";
    p += "Triplet: [\"" + triplet.subject + "\", \"" + trigger + "\", \"" + triplet.object + "\"]\n";
    p += "Relation type: \"" + relation_name + "\"\n";
    p += "Definitions and examples of \"" + trigger + "\":";
    return p;
}

std::string render_augment_prompt(const std::string& relation_name, const std::string& description,
                                  int k) {
    std::string p;
    p += "You are an experienced data scientist working on a relation extraction task.\n";
    p += "Your objective is to take a given relation and its brief description and produce a more "
         "detailed explanation. Additionally, you should generate three diverse sentence examples "
         "demonstrating the relation in use.\n";
    p += "The relation is: " + relation_name + "\n";
    p += "The description is: " + description + "\n";
    p += "Please provide " + std::to_string(k) + " distinct (relation description, examples) pairs.\n";
    p += "Your response:";
    return p;
}

// ---- small parsing helpers ----------------------------------------------------

namespace {

std::optional<std::string> slice_between(const std::string& s, const std::string& after,
                                         const std::string& until, size_t from = 0) {
    const size_t a = s.find(after, from);
    if (a == std::string::npos) return std::nullopt;
    const size_t start = a + after.size();
    const size_t b = s.find(until, start);
    if (b == std::string::npos) return std::nullopt;
    return s.substr(start, b - start);
}

// Reads a quoted string starting at s[pos]=='"'; returns the unescaped content
// and advances pos past the closing quote.
std::optional<std::string> read_quoted(const std::string& s, size_t& pos) {
    if (pos >= s.size() || s[pos] != '"') return std::nullopt;
    std::string out;
    for (size_t i = pos + 1; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '\\' && i + 1 < s.size()) {
            out += s[++i];
            continue;
        }
        if (c == '"') {
            pos = i + 1;
            return out;
        }
        out += c;
    }
    return std::nullopt;
}

void skip_ws(const std::string& s, size_t& pos) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
}

std::vector<std::string> split_tokens(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string t;
    while (in >> t) out.push_back(t);
    return out;
}

// First occurrence of `needle` as a contiguous token subsequence.
std::optional<std::pair<int, int>> find_token_seq(const std::vector<std::string>& tokens,
                                                  const std::vector<std::string>& needle) {
    if (needle.empty() || needle.size() > tokens.size()) return std::nullopt;
    for (size_t i = 0; i + needle.size() <= tokens.size(); ++i) {
        bool ok = true;
        for (size_t j = 0; j < needle.size(); ++j)
            if (tokens[i + j] != needle[j]) {
                ok = false;
                break;
            }
        if (ok) return std::make_pair(static_cast<int>(i), static_cast<int>(i + needle.size()));
    }
    return std::nullopt;
}

}  // namespace

std::optional<CandidateTriplet> parse_triplet_completion(const std::string& completion) {
    size_t pos = completion.find('[');
    if (pos == std::string::npos) return std::nullopt;
    ++pos;
    std::vector<std::optional<std::string>> fields;
    while (pos < completion.size() && fields.size() < 4) {
        skip_ws(completion, pos);
        if (pos >= completion.size()) return std::nullopt;
        if (completion[pos] == '"') {
            auto q = read_quoted(completion, pos);
            if (!q) return std::nullopt;
            fields.push_back(std::move(q));
        } else {
            size_t end = completion.find_first_of(",]", pos);
            if (end == std::string::npos) return std::nullopt;
            std::string bare = completion.substr(pos, end - pos);
            bare.erase(bare.find_last_not_of(" \t\r\n") + 1);
            std::string lowered = bare;
            std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                           [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
            if (lowered == "null" || lowered == "none" || lowered == "nil")
                fields.push_back(std::nullopt);
            else
                fields.push_back(std::move(bare));
            pos = end;
        }
        skip_ws(completion, pos);
        if (pos < completion.size() && completion[pos] == ',') {
            ++pos;
            continue;
        }
        if (pos < completion.size() && completion[pos] == ']') break;
    }
    if (fields.size() != 3 || !fields[0] || !fields[2]) return std::nullopt;
    CandidateTriplet t;
    t.subject = *fields[0];
    t.relation_trigger = fields[1];
    t.object = *fields[2];
    return t;
}

// ---- MockBackend ---------------------------------------------------------------

void MockBackend::script_triplet(const std::string& sentence_text, const std::string& subject,
                                 const std::string& object, std::optional<std::string> trigger) {
    const std::string lo = std::min(subject, object);
    const std::string hi = std::max(subject, object);
    scripted_[sentence_text + '\x1f' + lo + '\x1f' + hi] =
        ScriptedTriplet{subject, object, std::move(trigger)};
}

std::string MockBackend::complete(const std::string& prompt) {
    ++calls_;
    if (prompt.rfind("Given a piece of text", 0) == 0) return complete_oie(prompt);
    if (prompt.rfind("You are an experienced data scientist", 0) == 0) return complete_augment(prompt);
    if (prompt.rfind("Define the relationship", 0) == 0) return complete_candidate(prompt);
    throw std::invalid_argument("MockBackend: unrecognized prompt shape");
}

std::string MockBackend::complete_oie(const std::string& prompt) {
    const std::string marker = "Now it's your turn!";
    const size_t at = prompt.find(marker);
    auto text = slice_between(prompt, "Text: \"", "\"\nSubject, Object (not ordered): ", at);
    auto e1 = slice_between(prompt, "Subject, Object (not ordered): \"", "\", \"", at);
    if (!text || !e1) throw std::invalid_argument("MockBackend: malformed triplet prompt");
    const size_t e2_from = prompt.find("\", \"", prompt.find("Subject, Object (not ordered): \"", at));
    auto e2 = slice_between(prompt, "\", \"", "\"\nComplete triplets:", e2_from);
    if (!e2) throw std::invalid_argument("MockBackend: malformed triplet prompt");

    auto emit = [](const std::string& s, const std::optional<std::string>& trig, const std::string& o) {
        if (trig) return "[\"" + s + "\", \"" + *trig + "\", \"" + o + "\"]";
        return "[\"" + s + "\", null, \"" + o + "\"]";
    };

    const std::string lo = std::min(*e1, *e2);
    const std::string hi = std::max(*e1, *e2);
    auto it = scripted_.find(*text + '\x1f' + lo + '\x1f' + hi);
    if (it != scripted_.end())
        return emit(it->second.subject, it->second.trigger, it->second.object);

    // Fallback: a short token run strictly between the two mentions acts as
    // the trigger; anything else is non-relational.
    const std::vector<std::string> tokens = split_tokens(*text);
    auto a = find_token_seq(tokens, split_tokens(*e1));
    auto b = find_token_seq(tokens, split_tokens(*e2));
    if (a && b) {
        const std::string* subj = e1->c_str() ? &*e1 : nullptr;
        std::pair<int, int> first = *a, second = *b;
        const std::string* obj = &*e2;
        subj = &*e1;
        if (first.first > second.first) {
            std::swap(first, second);
            subj = &*e2;
            obj = &*e1;
        }
        const int gap = second.first - first.second;
        if (gap >= 1 && gap <= 4) {
            std::string trig;
            for (int i = first.second; i < second.first; ++i) {
                if (!trig.empty()) trig += ' ';
                trig += tokens[static_cast<size_t>(i)];
            }
            return emit(*subj, trig, *obj);
        }
        return emit(*subj, std::nullopt, *obj);
    }
    return emit(*e1, std::nullopt, *e2);
}

std::string MockBackend::complete_augment(const std::string& prompt) {
    auto name = slice_between(prompt, "The relation is: ", "\n");
    auto desc = slice_between(prompt, "The description is: ", "\n");
    auto k_str = slice_between(prompt, "Please provide ", " distinct");
    if (!name || !desc || !k_str) throw std::invalid_argument("MockBackend: malformed augment prompt");
    const int k = std::stoi(*k_str);

    std::string out;
    for (int i = 1; i <= k; ++i) {
        if (i > 1) out += "\n\n";
        out += "This relation, " + *name + ", is understood as follows: " + *desc +
               " Reading " + std::to_string(i) + " emphasizes how the relation " + *name +
               " connects the two entities in context.\n";
        out += "Examples:\n";
        out += "- One reported case shows the relation " + *name + " holding between two entities (reading " +
               std::to_string(i) + ").\n";
        out += "- Another sentence expresses " + *name + " between a subject and an object (reading " +
               std::to_string(i) + ").\n";
        out += "- A further text attests " + *name + " linking the mentioned pair (reading " +
               std::to_string(i) + ").";
    }
    return out;
}

namespace {

std::string candidate_block(int index, const std::string& definition,
                            const std::vector<std::string>& examples) {
    std::string out;
    out += "Sample " + std::to_string(index) + ":\n";
    out += "{\n";
    out += "    \"definition\": \"" + definition + "\",\n";
    out += "    \"examples\": [\n";
    for (size_t i = 0; i < examples.size(); ++i) {
        out += "        \"" + examples[i] + "\"";
        out += i + 1 < examples.size() ? ",\n" : "\n";
    }
    out += "    ]\n";
    out += "}";
    return out;
}

}  // namespace

std::string MockBackend::complete_candidate(const std::string& prompt) {
    const std::string marker = "Now it's your turn!";
    const size_t at = prompt.find(marker);
    auto triplet_line = slice_between(prompt, "Triplet: ", "\n", at);
    auto relation = slice_between(prompt, "Relation type: \"", "\"\n", at);
    auto k_str = slice_between(prompt, "You must generate ", " diverse");
    if (!triplet_line || !relation || !k_str)
        throw std::invalid_argument("MockBackend: malformed candidate prompt");
    auto triplet = parse_triplet_completion(*triplet_line);
    if (!triplet || triplet->is_na())
        throw std::invalid_argument("MockBackend: candidate prompt without a trigger");
    const int k = std::stoi(*k_str);
    const std::string& trigger = *triplet->relation_trigger;

    std::vector<std::string> blocks;
    if (trigger == "founded" && *relation == "organization founder") {
        blocks.push_back(candidate_block(
            1, "The relationship between a person and an organization they established.",
            {"Bill Gates founded Microsoft in 1975.", "Steve Jobs founded Apple in 1976.",
             "Mark Zuckerberg founded Facebook while studying at Harvard."}));
        blocks.push_back(candidate_block(
            2,
            "The connection between an individual and the company or organization they initiated, "
            "often as its creator or co-founder.",
            {"Larry Page and Sergey Brin founded Google in 1998.", "Jeff Bezos founded Amazon in 1994.",
             "Jack Ma founded Alibaba in 1999."}));
    }
    for (int i = static_cast<int>(blocks.size()) + 1; i <= k; ++i) {
        const std::string idx = std::to_string(i);
        blocks.push_back(candidate_block(
            i,
            "The relationship expressed by '" + trigger + "' between the subject and the object, in "
            "the sense of " + *relation + " (sense " + idx + ").",
            {triplet->subject + " " + trigger + " " + triplet->object + " according to one source (sense " +
                 idx + ").",
             "It is reported that " + triplet->subject + " " + trigger + " " + triplet->object +
                 " (sense " + idx + ").",
             "Records show " + triplet->subject + " " + trigger + " " + triplet->object + " (sense " + idx +
                 ")."}));
    }
    if (static_cast<int>(blocks.size()) > k) blocks.resize(static_cast<size_t>(k));

    std::string out;
    for (size_t i = 0; i < blocks.size(); ++i) {
        if (i) out += "\n\n";
        out += blocks[i];
    }
    return out;
}

// ---- HttpBackend ---------------------------------------------------------------

std::string HttpBackend::complete(const std::string& prompt) {
    const char* key = std::getenv(opts_.api_key_env.c_str());
    json body{{"model", opts_.model},
              {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
              {"temperature", 0}};
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= opts_.max_retries; ++attempt) {
        if (attempt > 0)
            std::this_thread::sleep_for(std::chrono::milliseconds(250 << (attempt - 1)));
        try {
            // Declared here so a connection failure counts as a retryable attempt.
            extern std::string http_post_json(const std::string& host, const std::string& path,
                                              const std::string& body, const char* bearer);
            const std::string resp = http_post_json(opts_.host, opts_.path, body.dump(), key);
            json j = json::parse(resp);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception& e) {
            last_error = e.what();
        }
    }
    throw GatewayTransportError("chat completion failed after retries: " + last_error);
}

// ---- ResponseCache ---------------------------------------------------------------

std::string ResponseCache::key_of(const std::string& backend_tag, const std::string& prompt) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(backend_tag + '\x1f' + prompt)));
    return buf;
}

ResponseCache::ResponseCache(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) return;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            json j = json::parse(line);
            Entry e{j.at("prompt").get<std::string>(), j.at("completion").get<std::string>(),
                    j.at("backend").get<std::string>()};
            entries_[j.at("key").get<std::string>()].push_back(std::move(e));
        } catch (const std::exception& e) {
            log_warn(std::string("skipping corrupt cache line: ") + e.what());
        }
    }
}

std::optional<std::string> ResponseCache::lookup(const std::string& backend_tag,
                                                 const std::string& prompt) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = entries_.find(key_of(backend_tag, prompt));
    if (it == entries_.end()) return std::nullopt;
    for (auto e = it->second.rbegin(); e != it->second.rend(); ++e)
        if (e->prompt == prompt && e->backend == backend_tag) return e->completion;
    return std::nullopt;
}

void ResponseCache::store(const std::string& backend_tag, const std::string& prompt,
                          const std::string& completion) {
    std::lock_guard<std::mutex> lock(mu_);
    const std::string key = key_of(backend_tag, prompt);
    entries_[key].push_back(Entry{prompt, completion, backend_tag});
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::binary | std::ios::app);
    if (!out) {
        log_warn("cannot append to response cache: " + path_);
        return;
    }
    out << json{{"key", key},
                {"prompt", prompt},
                {"completion", completion},
                {"backend", backend_tag},
                {"timestamp", static_cast<long>(std::time(nullptr))}}
               .dump()
        << "\n";
}

size_t ResponseCache::size() const {
    std::lock_guard<std::mutex> lock(mu_);
    size_t n = 0;
    for (const auto& [k, v] : entries_) n += v.size();
    return n;
}

// ---- OieGateway ---------------------------------------------------------------

std::string OieGateway::complete_cached(const std::string& prompt, bool force_refresh) {
    if (cache_ && !force_refresh) {
        if (auto hit = cache_->lookup(backend_.tag(), prompt)) return *hit;
    }
    std::string completion = backend_.complete(prompt);
    if (cache_) cache_->store(backend_.tag(), prompt, completion);
    return completion;
}

CandidateTriplet OieGateway::extract_triplet(std::span<const std::string> tokens, const EntitySpan& e1,
                                             const EntitySpan& e2) {
    const int n = static_cast<int>(tokens.size());
    if (e1.start < 0 || e1.end > n || e2.start < 0 || e2.end > n || e1.start >= e1.end ||
        e2.start >= e2.end)
        throw std::invalid_argument("extract_triplet: spans do not belong to the sentence");

    const std::string text = join_tokens(tokens, 0, n);
    const std::string prompt = render_oie_prompt(text, e1.text, e2.text);

    auto try_parse = [&](const std::string& completion) -> std::optional<CandidateTriplet> {
        auto t = parse_triplet_completion(completion);
        if (!t) return std::nullopt;
        const bool pair_matches = (t->subject == e1.text && t->object == e2.text) ||
                                  (t->subject == e2.text && t->object == e1.text);
        if (!pair_matches) return std::nullopt;
        return t;
    };

    if (auto t = try_parse(complete_cached(prompt))) return *t;
    log_warn("triplet completion unparseable; reprompting once");
    if (auto t = try_parse(complete_cached(prompt, /*force_refresh=*/true))) return *t;
    log_warn("triplet completion unparseable after reprompt; treating pair as non-relational");
    return CandidateTriplet{e1.text, std::nullopt, e2.text};
}

namespace {

// Pulls {"definition": ..., "examples": [...]} blocks out of free-form text.
std::vector<std::string> parse_definition_blocks(const std::string& completion) {
    std::vector<std::string> out;
    size_t pos = 0;
    while ((pos = completion.find("\"definition\"", pos)) != std::string::npos) {
        size_t p = completion.find(':', pos);
        if (p == std::string::npos) break;
        ++p;
        skip_ws(completion, p);
        auto def = read_quoted(completion, p);
        if (!def) {
            pos += 12;
            continue;
        }
        std::string bundle = *def;
        const size_t ex_at = completion.find("\"examples\"", p);
        const size_t next_def = completion.find("\"definition\"", p);
        if (ex_at != std::string::npos && (next_def == std::string::npos || ex_at < next_def)) {
            size_t q = completion.find('[', ex_at);
            if (q != std::string::npos) {
                bundle += "\nExamples:";
                ++q;
                while (q < completion.size()) {
                    skip_ws(completion, q);
                    if (q < completion.size() && completion[q] == '"') {
                        auto ex = read_quoted(completion, q);
                        if (!ex) break;
                        bundle += "\n- " + *ex;
                    }
                    skip_ws(completion, q);
                    if (q < completion.size() && completion[q] == ',') {
                        ++q;
                        continue;
                    }
                    break;
                }
            }
        }
        out.push_back(std::move(bundle));
        pos = p;
    }
    return out;
}

std::vector<std::string> parse_description_blocks(const std::string& completion) {
    std::vector<std::string> blocks;
    std::istringstream in(completion);
    std::string line;
    std::string desc;
    std::vector<std::string> examples;
    bool in_examples = false;
    auto flush = [&]() {
        if (desc.empty()) return;
        std::string bundle = desc;
        if (!examples.empty()) {
            bundle += "\nExamples:";
            for (const std::string& e : examples) bundle += "\n- " + e;
        }
        blocks.push_back(std::move(bundle));
        desc.clear();
        examples.clear();
        in_examples = false;
    };
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line == "Examples:") {
            in_examples = true;
            continue;
        }
        if (line.rfind("- ", 0) == 0) {
            if (in_examples) examples.push_back(line.substr(2));
            continue;
        }
        if (in_examples) flush();  // prose after an example list starts a new block
        if (!desc.empty()) desc += ' ';
        desc += line;
    }
    flush();
    return blocks;
}

}  // namespace

std::vector<std::string> OieGateway::generate_candidate_descriptions(const CandidateTriplet& triplet,
                                                                     const std::string& relation_name,
                                                                     const std::string& sentence_text,
                                                                     int k) {
    if (triplet.is_na())
        throw std::invalid_argument("generate_candidate_descriptions: triplet has no relation trigger");
    if (k < 1) throw std::invalid_argument("generate_candidate_descriptions: k must be >= 1");
    const std::string prompt = render_candidate_prompt(sentence_text, triplet, relation_name, k);
    const std::string completion = complete_cached(prompt);
    std::vector<std::string> defs = parse_definition_blocks(completion);
    if (defs.empty()) {
        log_warn("candidate completion had no parseable definitions; using it verbatim");
        defs.push_back(completion);
    }
    if (static_cast<int>(defs.size()) > k) defs.resize(static_cast<size_t>(k));
    return defs;
}

std::vector<std::string> OieGateway::augment_relation_description(const RelationInfo& relation, int k) {
    if (relation.is_undetermined())
        throw std::invalid_argument("augment_relation_description: not applicable to the UR label");
    if (k < 1) throw std::invalid_argument("augment_relation_description: k must be >= 1");
    const std::string prompt = render_augment_prompt(relation.name, relation.original_description, k);
    std::string completion = complete_cached(prompt);
    std::vector<std::string> blocks = parse_description_blocks(completion);
    if (blocks.empty()) {
        log_warn("augmentation completion unparseable; retrying once");
        completion = complete_cached(prompt, /*force_refresh=*/true);
        blocks = parse_description_blocks(completion);
    }
    if (blocks.empty()) {
        log_warn("augmentation completion still unparseable; using whole completion as one description");
        blocks.push_back(completion);
    }
    if (static_cast<int>(blocks.size()) > k) blocks.resize(static_cast<size_t>(k));
    if (static_cast<int>(blocks.size()) < k)
        log_warn("backend returned fewer augmented descriptions than requested for '" + relation.id + "'");
    return blocks;
}

}  // namespace ofcre
