#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <random>
#include <set>

#include "ofcre/dataset.hpp"
#include "toyworld.hpp"

using namespace ofcre;

namespace {

const std::vector<std::string> kAbbeySentence = {
    "Spearhafoc", "was", "succeeded", "by",      "William", "the",   "Norman", "and",
    "was",        "the", "last",      "Bishop",  "of",      "London", "of",     "English",
    "descent",    "until", "Roger",   "Niger",   "was",     "appointed", "in",  "1228"};

EntitySpan span_of(const std::vector<std::string>& tokens, int start, int end,
                   SpanSource source = SpanSource::Annotated) {
    return EntitySpan{join_tokens(tokens, start, end), start, end, source};
}

}  // namespace

TEST_CASE("gazetteer finds a single-entry mention") {
    GazetteerNer ner({"Spearhafoc"});
    auto spans = extract_entities(kAbbeySentence, ner);
    REQUIRE(spans.size() == 1);
    CHECK(spans[0].start == 0);
    CHECK(spans[0].end == 1);
    CHECK(spans[0].text == "Spearhafoc");
    CHECK(spans[0].source == SpanSource::NerExtracted);
}

TEST_CASE("empty gazetteer extracts nothing") {
    GazetteerNer ner(std::vector<std::string>{});
    CHECK(extract_entities(kAbbeySentence, ner).empty());
    CHECK_THROWS_AS(extract_entities(std::vector<std::string>{}, ner), std::invalid_argument);
}

TEST_CASE("two disjoint hits come back sorted and non-overlapping") {
    GazetteerNer ner({"William the Norman", "Roger Niger"});
    auto spans = extract_entities(kAbbeySentence, ner);
    REQUIRE(spans.size() == 2);
    CHECK(spans[0].text == "William the Norman");
    CHECK(spans[1].text == "Roger Niger");
    CHECK(spans[0].end <= spans[1].start);

    // Brute-force oracle: every window matched against the phrase list, then
    // reduced leftmost-longest without overlaps.
    std::set<std::vector<std::string>> phrases{{"William", "the", "Norman"}, {"Roger", "Niger"}};
    std::vector<std::pair<int, int>> expect;
    int pos = 0;
    const int n = static_cast<int>(kAbbeySentence.size());
    while (pos < n) {
        int best = 0;
        for (int len = n - pos; len >= 1; --len) {
            std::vector<std::string> window(kAbbeySentence.begin() + pos,
                                            kAbbeySentence.begin() + pos + len);
            if (phrases.count(window)) {
                best = len;
                break;
            }
        }
        if (best == 0) {
            ++pos;
            continue;
        }
        expect.emplace_back(pos, pos + best);
        pos += best;
    }
    REQUIRE(spans.size() == expect.size());
    for (size_t i = 0; i < spans.size(); ++i) {
        CHECK(spans[i].start == expect[i].first);
        CHECK(spans[i].end == expect[i].second);
    }
}

TEST_CASE("merge replaces overlapping extracted spans with the annotated span") {
    std::vector<std::string> tokens{"a", "b", "c", "d", "e", "f", "g"};
    auto merged = merge_entities({span_of(tokens, 0, 2, SpanSource::NerExtracted)},
                                 {span_of(tokens, 1, 3)});
    REQUIRE(merged.size() == 1);
    CHECK(merged[0].start == 1);
    CHECK(merged[0].end == 3);
    CHECK(merged[0].source == SpanSource::Merged);
}

TEST_CASE("merge keeps disjoint spans and dedups exact duplicates") {
    std::vector<std::string> tokens{"a", "b", "c", "d", "e", "f", "g"};
    auto disjoint = merge_entities({span_of(tokens, 5, 6, SpanSource::NerExtracted)},
                                   {span_of(tokens, 0, 2)});
    REQUIRE(disjoint.size() == 2);
    CHECK(disjoint[0].start == 0);
    CHECK(disjoint[1].start == 5);

    auto dedup = merge_entities({span_of(tokens, 0, 2, SpanSource::NerExtracted),
                                 span_of(tokens, 0, 2, SpanSource::NerExtracted)},
                                {});
    REQUIRE(dedup.size() == 1);
}

TEST_CASE("merge is idempotent against the same annotated list") {
    std::mt19937_64 rng(13);
    std::vector<std::string> tokens;
    for (int i = 0; i < 20; ++i) tokens.push_back("t" + std::to_string(i));
    for (int trial = 0; trial < 200; ++trial) {
        auto random_spans = [&](int count, SpanSource source) {
            std::vector<EntitySpan> out;
            for (int i = 0; i < count; ++i) {
                const int start = static_cast<int>(rng() % 18);
                const int len = 1 + static_cast<int>(rng() % 3);
                out.push_back(span_of(tokens, start, std::min(20, start + len), source));
            }
            return out;
        };
        auto annotated = random_spans(static_cast<int>(rng() % 4), SpanSource::Annotated);
        auto extracted = random_spans(static_cast<int>(rng() % 5), SpanSource::NerExtracted);
        auto merged = merge_entities(extracted, annotated);
        auto twice = merge_entities(merged, annotated);
        REQUIRE(merged.size() == twice.size());
        for (size_t i = 0; i < merged.size(); ++i) CHECK(merged[i].same_range(twice[i]));
        // every annotated span appears verbatim
        for (const auto& a : annotated) {
            bool present = false;
            for (const auto& m : merged) present |= m.same_range(a);
            CHECK(present);
        }
    }
}

TEST_CASE("pair enumeration: one annotation among three entities gives 1 DR + 2 UR") {
    std::vector<std::string> tokens{"anna", "works", "for", "acme", "in", "berlin"};
    std::vector<EntitySpan> merged{span_of(tokens, 0, 1), span_of(tokens, 3, 4), span_of(tokens, 5, 6)};
    std::vector<RawAnnotation> anns{{merged[0], merged[1], "works_for"}};
    auto insts = enumerate_pairs("s0", tokens, merged, anns);

    int dr = 0, ur = 0;
    for (const auto& i : insts) (i.kind == RelationKind::DR ? dr : ur)++;
    CHECK(dr == 1);
    CHECK(ur == 2);
    for (const auto& i : insts) {
        CHECK(i.tokens == tokens);
        CHECK(validate_instance(i, {"works_for"}).empty());
        if (i.kind == RelationKind::UR) {
            CHECK(i.head.start < i.tail.start);  // canonical UR head order
            CHECK(i.origin == InstanceOrigin::PairEnumeration);
        }
    }
}

TEST_CASE("pair enumeration: both orders annotated leaves no UR pair") {
    std::vector<std::string> tokens{"a", "x", "b"};
    std::vector<EntitySpan> merged{span_of(tokens, 0, 1), span_of(tokens, 2, 3)};
    std::vector<RawAnnotation> anns{{merged[0], merged[1], "r1"}, {merged[1], merged[0], "r2"}};
    auto insts = enumerate_pairs("s0", tokens, merged, anns);
    REQUIRE(insts.size() == 2);
    for (const auto& i : insts) CHECK(i.kind == RelationKind::DR);
}

TEST_CASE("pair enumeration matches the published example sentence") {
    const auto& tokens = kAbbeySentence;
    EntitySpan spearhafoc = span_of(tokens, 0, 1);
    EntitySpan bishop = span_of(tokens, 11, 14);  // "Bishop of London"
    EntitySpan roger = span_of(tokens, 18, 20);   // "Roger Niger"
    std::vector<EntitySpan> merged{spearhafoc, bishop, roger};
    std::vector<RawAnnotation> anns{{spearhafoc, bishop, "location_of_formation"}};
    auto insts = enumerate_pairs("abbey", tokens, merged, anns);

    bool dr_found = false, na_found = false;
    for (const auto& i : insts) {
        if (i.kind == RelationKind::DR && i.head.text == "Spearhafoc" && i.tail.text == "Bishop of London")
            dr_found = true;
        if (i.kind == RelationKind::UR && i.head.text == "Spearhafoc" && i.tail.text == "Roger Niger")
            na_found = true;
    }
    CHECK(dr_found);
    CHECK(na_found);
}

TEST_CASE("annotation outside the merged list is a dataset inconsistency") {
    std::vector<std::string> tokens{"a", "b", "c"};
    std::vector<EntitySpan> merged{span_of(tokens, 0, 1)};
    std::vector<RawAnnotation> anns{{span_of(tokens, 0, 1), span_of(tokens, 2, 3), "r1"}};
    CHECK_THROWS_AS(enumerate_pairs("s0", tokens, merged, anns), std::runtime_error);
}

TEST_CASE("UR instance count equals C(m,2) minus annotated pairs") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 150; ++trial) {
        const int m = 2 + static_cast<int>(rng() % 5);
        std::vector<std::string> tokens;
        for (int i = 0; i < 2 * m; ++i) tokens.push_back("w" + std::to_string(i));
        std::vector<EntitySpan> merged;
        for (int i = 0; i < m; ++i) merged.push_back(span_of(tokens, 2 * i, 2 * i + 1));

        std::vector<std::pair<int, int>> all_pairs;
        for (int i = 0; i < m; ++i)
            for (int j = i + 1; j < m; ++j) all_pairs.emplace_back(i, j);
        deterministic_shuffle(all_pairs, rng);
        const int a = static_cast<int>(rng() % (all_pairs.size() + 1));
        std::vector<RawAnnotation> anns;
        for (int i = 0; i < a; ++i) {
            const bool flip = rng() % 2 == 0;
            const auto [x, y] = all_pairs[static_cast<size_t>(i)];
            anns.push_back(RawAnnotation{merged[static_cast<size_t>(flip ? y : x)],
                                         merged[static_cast<size_t>(flip ? x : y)],
                                         "r" + std::to_string(i)});
        }
        auto insts = enumerate_pairs("s", tokens, merged, anns);
        long ur = 0;
        for (const auto& i : insts) ur += i.kind == RelationKind::UR;
        CHECK(ur == static_cast<long>(all_pairs.size()) - a);
    }
}

TEST_CASE("dataset statistics count instances and average entities per sentence") {
    std::vector<std::string> tokens{"anna", "works", "for", "acme", "in", "berlin"};
    RawSentence s;
    s.id = "s0";
    s.tokens = tokens;
    s.annotations.push_back({span_of(tokens, 0, 1), span_of(tokens, 3, 4), "works_for"});
    GazetteerNer ner({"anna", "acme", "berlin"});
    OpenDataset ds = build_open_dataset({s}, &ner);
    DatasetStats st = compute_stats(ds);
    CHECK(st.dr_count == 1);
    CHECK(st.ur_count == 2);
    CHECK(st.avg_entities_per_sample == doctest::Approx(3.0));

    CHECK(compute_stats(OpenDataset{}).dr_count == 0);
    CHECK(compute_stats(OpenDataset{}).ur_count == 0);
    CHECK(compute_stats(OpenDataset{}).avg_entities_per_sample == 0.0);
}

TEST_CASE("ten sentences with four entities and one annotation each give dr=10 ur=50") {
    std::vector<RawSentence> sentences;
    std::vector<std::string> gazetteer;
    for (int i = 0; i < 10; ++i) {
        std::vector<std::string> tokens;
        for (int e = 0; e < 4; ++e) {
            tokens.push_back("ent" + std::to_string(i) + "_" + std::to_string(e));
            tokens.push_back("filler" + std::to_string(e));
            gazetteer.push_back("ent" + std::to_string(i) + "_" + std::to_string(e));
        }
        RawSentence s;
        s.id = "s" + std::to_string(i);
        s.tokens = tokens;
        s.annotations.push_back({span_of(tokens, 0, 1), span_of(tokens, 2, 3), "r0"});
        sentences.push_back(std::move(s));
    }
    GazetteerNer ner(gazetteer);
    DatasetStats st = compute_stats(build_open_dataset(sentences, &ner));
    CHECK(st.dr_count == 10);
    CHECK(st.ur_count == 50);  // 10 * (C(4,2) - 1)
    CHECK(st.avg_entities_per_sample == doctest::Approx(4.0));
}

TEST_CASE("NER failure keeps the sentence with annotated entities only") {
    struct FailingNer : NerInterface {
        std::vector<EntitySpan> extract(std::span<const std::string>) const override {
            throw NerError("backend down");
        }
        std::string tag() const override { return "failing"; }
    };
    std::vector<std::string> tokens{"a", "x", "b", "y", "c"};
    RawSentence s;
    s.id = "s0";
    s.tokens = tokens;
    s.annotations.push_back({span_of(tokens, 0, 1), span_of(tokens, 2, 3), "r1"});
    FailingNer ner;
    set_log_quiet(true);
    OpenDataset ds = build_open_dataset({s}, &ner);
    set_log_quiet(false);
    REQUIRE(ds.sentences.size() == 1);
    CHECK(ds.sentences[0].entities.size() == 2);
    CHECK(ds.instances.size() == 1);  // just the annotated DR pair
}

TEST_CASE("task stream sampling honors the benchmark-style profiles") {
    // 10 heavy relations (first-task eligible) plus 70 light ones.
    std::vector<RawSentence> sentences;
    std::vector<std::string> gaz;
    auto add_relation = [&](int r, int count) {
        for (int s = 0; s < count; ++s) {
            const std::string subj = "s" + std::to_string(r) + "_" + std::to_string(s);
            const std::string obj = "o" + std::to_string(r) + "_" + std::to_string(s);
            std::vector<std::string> tokens{subj, "verb" + std::to_string(r), obj};
            RawSentence sent;
            sent.id = "rel" + std::to_string(r) + "_s" + std::to_string(s);
            sent.tokens = tokens;
            sent.annotations.push_back(
                {span_of(tokens, 0, 1), span_of(tokens, 2, 3), "rel" + std::to_string(r)});
            sentences.push_back(std::move(sent));
            gaz.push_back(subj);
            gaz.push_back(obj);
        }
    };
    for (int r = 0; r < 10; ++r) add_relation(r, 105);
    for (int r = 10; r < 80; ++r) add_relation(r, 8);
    GazetteerNer ner(gaz);
    OpenDataset ds = build_open_dataset(sentences, &ner);

    ExperimentConfig cfg = ExperimentConfig::fewrel_profile();
    TaskStream stream = sample_task_stream(ds, cfg, 1234);
    REQUIRE(stream.tasks.size() == 8);
    std::set<std::string> all_rels;
    for (const TaskDataset& task : stream.tasks) {
        CHECK(task.relations.size() == 10);
        for (const auto& r : task.relations) CHECK(all_rels.insert(r).second);  // disjoint
        std::map<std::string, int> train_dr;
        for (const Instance& inst : task.train)
            if (inst.kind == RelationKind::DR) train_dr[inst.label]++;
        for (const auto& r : task.relations)
            CHECK(train_dr[r] == (task.index == 1 ? 100 : 5));
    }

    // Deterministic for a fixed seed, and UR instances ride with their sentences.
    TaskStream again = sample_task_stream(ds, cfg, 1234);
    REQUIRE(again.tasks.size() == stream.tasks.size());
    for (size_t t = 0; t < again.tasks.size(); ++t) {
        REQUIRE(again.tasks[t].train.size() == stream.tasks[t].train.size());
        for (size_t i = 0; i < again.tasks[t].train.size(); ++i)
            CHECK(again.tasks[t].train[i].id == stream.tasks[t].train[i].id);
    }
}

TEST_CASE("tacred-style profile puts six relations in the first task") {
    toyworld::World w = toyworld::make_world(41, 8, 7);
    // give the first six relations a heavier pool
    toyworld::World heavy = toyworld::make_world(6, 105, 9);
    for (auto& s : heavy.sentences) s.id = "heavy_" + s.id;
    w.sentences.insert(w.sentences.end(), heavy.sentences.begin(), heavy.sentences.end());
    w.gazetteer.insert(w.gazetteer.end(), heavy.gazetteer.begin(), heavy.gazetteer.end());
    OpenDataset ds = toyworld::build_dataset(w);

    ExperimentConfig cfg = ExperimentConfig::tacred_profile();
    TaskStream stream = sample_task_stream(ds, cfg, 99);
    REQUIRE(stream.tasks.size() == 8);
    CHECK(stream.tasks[0].relations.size() == 6);
    for (size_t t = 1; t < stream.tasks.size(); ++t) CHECK(stream.tasks[t].relations.size() == 5);
}

TEST_CASE("relation disjointness holds across 100 seeds at toy scale") {
    toyworld::World w = toyworld::make_world(6, 8, 21);
    OpenDataset ds = toyworld::build_dataset(w);
    ExperimentConfig cfg = toyworld::toy_config(2, 3);
    for (uint64_t seed = 0; seed < 100; ++seed) {
        TaskStream stream = sample_task_stream(ds, cfg, seed);
        std::set<std::string> seen;
        for (const TaskDataset& task : stream.tasks)
            for (const std::string& r : task.relations) CHECK(seen.insert(r).second);
        // UR training instances share a sentence with the task's DR instances
        for (const TaskDataset& task : stream.tasks) {
            std::set<std::string> train_sentences;
            for (const Instance& inst : task.train)
                if (inst.kind == RelationKind::DR)
                    train_sentences.insert(inst.id.substr(0, inst.id.rfind('#')));
            for (const Instance& inst : task.train)
                if (inst.kind == RelationKind::UR)
                    CHECK(train_sentences.count(inst.id.substr(0, inst.id.rfind('#'))) == 1);
        }
    }
}

TEST_CASE("insufficient relations raise an error naming the deficit") {
    toyworld::World w = toyworld::make_world(3, 8, 5);
    OpenDataset ds = toyworld::build_dataset(w);
    ExperimentConfig cfg = toyworld::toy_config(2, 4);  // needs 8 relations, only 3 exist
    try {
        sample_task_stream(ds, cfg, 5);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("relations") != std::string::npos);
    }
}

TEST_CASE("fewrel and tacred ingestion shapes") {
    const std::string fewrel = R"({
      "P1": [
        {"tokens": ["amy", "visited", "rome", "today"],
         "h": ["amy", "Q1", [[0]]],
         "t": ["rome", "Q2", [[2]]]}
      ]
    })";
    auto sentences = ingest_fewrel(fewrel);
    REQUIRE(sentences.size() == 1);
    CHECK(sentences[0].annotations[0].relation == "P1");
    CHECK(sentences[0].annotations[0].head.text == "amy");
    CHECK(sentences[0].annotations[0].tail.text == "rome");

    const std::string tacred = R"([
      {"token": ["bob", "leads", "initech", "now"],
       "relation": "org:top_member",
       "subj_start": 0, "subj_end": 0, "obj_start": 2, "obj_end": 2},
      {"token": ["bob", "saw", "a", "bird"],
       "relation": "no_relation",
       "subj_start": 0, "subj_end": 0, "obj_start": 3, "obj_end": 3}
    ])";
    auto tac = ingest_tacred(tacred);
    REQUIRE(tac.size() == 1);  // no_relation dropped
    CHECK(tac[0].annotations[0].head.text == "bob");
    CHECK(tac[0].annotations[0].tail.text == "initech");
    CHECK(tac[0].annotations[0].tail.start == 2);
    CHECK(tac[0].annotations[0].tail.end == 3);
}

TEST_CASE("dataset persistence round-trips") {
    toyworld::World w = toyworld::make_world(2, 3, 31);
    OpenDataset ds = toyworld::build_dataset(w);
    const std::string dir = "test_dataset_dir";
    write_dataset(ds, dir);
    OpenDataset back = load_dataset(dir);
    REQUIRE(back.instances.size() == ds.instances.size());
    for (size_t i = 0; i < ds.instances.size(); ++i) CHECK(back.instances[i] == ds.instances[i]);
    REQUIRE(back.relations.size() == ds.relations.size());
    CHECK(back.relations.count(kUndeterminedLabel) == 1);
    CHECK(back.sentences.size() == ds.sentences.size());
    std::filesystem::remove_all(dir);
}
