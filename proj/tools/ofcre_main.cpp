#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ofcre/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::unique_ptr<ofcre::GatewayBackend> make_backend(const std::string& name) {
    if (name == "mock") return std::make_unique<ofcre::MockBackend>();
    if (name == "http") return std::make_unique<ofcre::HttpBackend>(ofcre::HttpBackend::Options{});
    throw std::runtime_error("unknown backend: " + name);
}

std::vector<ofcre::Instance> load_instances(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open instances file: " + path);
    std::vector<ofcre::Instance> out;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) out.push_back(ofcre::instance_from_jsonl(line));
    return out;
}

int cmd_build_dataset(const std::string& input, const std::string& format, const std::string& ner_spec,
                      const std::string& descriptions, const std::string& output) {
    std::vector<ofcre::RawSentence> raw;
    const std::string text = read_file(input);
    if (format == "fewrel")
        raw = ofcre::ingest_fewrel(text);
    else if (format == "tacred")
        raw = ofcre::ingest_tacred(text);
    else
        throw std::runtime_error("unknown format: " + format);

    std::map<std::string, ofcre::RelationInfo> relations;
    if (!descriptions.empty())
        relations = ofcre::relations_from_descriptions(read_file(descriptions));

    ofcre::OpenDataset ds;
    if (!ner_spec.empty()) {
        const std::string prefix = "gazetteer:";
        if (ner_spec.rfind(prefix, 0) != 0)
            throw std::runtime_error("unsupported --ner spec (expected gazetteer:<wordlist>): " + ner_spec);
        ofcre::GazetteerNer ner =
            ofcre::GazetteerNer::from_wordlist_file(ner_spec.substr(prefix.size()));
        ds = ofcre::build_open_dataset(raw, &ner, std::move(relations));
    } else {
        ds = ofcre::build_open_dataset(raw, nullptr, std::move(relations));
    }
    ofcre::write_dataset(ds, output);
    std::cout << ofcre::compute_stats(ds).to_json() << "\n";
    return 0;
}

int cmd_stats(const std::string& dataset_dir) {
    std::cout << ofcre::compute_stats(ofcre::load_dataset(dataset_dir)).to_json() << "\n";
    return 0;
}

int cmd_augment(const std::string& relations_path, int k, const std::string& backend_name,
                const std::string& cache_path, const std::string& output) {
    std::map<std::string, ofcre::RelationInfo> relations;
    {
        std::ifstream in(relations_path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open relations file: " + relations_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            ofcre::RelationInfo r = ofcre::relation_from_jsonl(line);
            relations.emplace(r.id, std::move(r));
        }
    }
    auto backend = make_backend(backend_name);
    ofcre::ResponseCache cache(cache_path.empty() ? std::string{} : cache_path);
    ofcre::OieGateway gateway(*backend, cache_path.empty() ? nullptr : &cache);
    ofcre::augment_relations(relations, gateway, k);
    std::ofstream out(output.empty() ? relations_path : output, std::ios::binary);
    for (const auto& [id, rel] : relations) out << ofcre::relation_to_jsonl(rel) << "\n";
    return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& config_path, uint64_t seed,
              const std::string& output, const std::string& backend_name, const std::string& cache_path) {
    ofcre::PipelineConfig cfg;
    if (!config_path.empty()) cfg = ofcre::PipelineConfig::from_file(config_path);
    cfg.input_path = dataset_dir;
    cfg.input_format = "dataset-dir";
    cfg.backend = backend_name;
    if (!cache_path.empty()) cfg.cache_path = cache_path;
    cfg.run_dir = output;
    cfg.experiment.seeds = {seed};
    ofcre::RunManifest manifest = ofcre::run_pipeline(cfg);
    std::cout << manifest.to_json() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& run_dir, uint64_t seed, int task, const std::string& mode_name,
                 const std::string& test_path, const std::string& backend_name,
                 const std::string& cache_path) {
    const fs::path seed_dir = fs::path(run_dir) / ("seed" + std::to_string(seed));
    int last_task = task;
    if (last_task <= 0) {
        last_task = 0;
        for (int t = 1; fs::exists(seed_dir / ("task" + std::to_string(t))); ++t) last_task = t;
        if (last_task == 0) throw std::runtime_error("no task checkpoints under " + seed_dir.string());
    }
    const fs::path task_dir = seed_dir / ("task" + std::to_string(last_task));
    ofcre::ModelState model = ofcre::ModelState::load((task_dir / "model.json").string());
    json state_json = json::parse(read_file((task_dir / "state.json").string()));
    ofcre::ContinualState state;
    state.seen_relations = state_json.at("seen_relations").get<std::set<std::string>>();
    state.prototypes = state_json.at("prototypes").get<std::map<std::string, std::vector<double>>>();

    const std::vector<ofcre::Instance> test = load_instances(test_path);
    const ofcre::PredictionMode mode = ofcre::prediction_mode_from_string(mode_name);

    auto backend = make_backend(backend_name);
    ofcre::ResponseCache cache(cache_path.empty() ? std::string{} : cache_path);
    ofcre::OieGateway gateway(*backend, cache_path.empty() ? nullptr : &cache);

    const double f1 = ofcre::evaluate_split(test, state, model, mode, &gateway);
    std::cout << json{{"mode", mode_name}, {"task", last_task}, {"f1", f1 * 100.0}}.dump() << "\n";
    return 0;
}

int cmd_report(const std::string& run_dir) {
    std::map<std::string, std::vector<ofcre::MetricTable>> tables;
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        if (!entry.is_directory()) continue;
        const std::string name = entry.path().filename().string();
        if (name.rfind("seed", 0) != 0) continue;
        const fs::path metrics_path = entry.path() / "metrics.json";
        if (!fs::exists(metrics_path)) continue;
        const uint64_t seed = std::stoull(name.substr(4));
        json metrics = json::parse(read_file(metrics_path.string()));
        for (const auto& [mode, m] : metrics.items()) {
            ofcre::MetricTable t;
            t.mode = mode;
            t.seed = seed;
            t.per_task_f1 = m.at("per_task_f1").get<std::vector<double>>();
            tables[mode].push_back(std::move(t));
        }
    }
    if (tables.empty()) throw std::runtime_error("no seed metrics found under " + run_dir);
    for (const auto& [mode, recs] : tables) {
        const ofcre::SeedSummary s = ofcre::aggregate_seeds(recs);
        std::cout << mode << " (" << s.seed_count << " seeds):";
        for (const std::string& cell : s.cells()) std::cout << "  " << cell;
        std::cout << "  forgetting=" << s.forgetting_mean << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Open few-shot continual relation extraction toolkit"};
    app.require_subcommand(1);

    // build-dataset
    std::string bd_input, bd_format = "fewrel", bd_ner, bd_descriptions, bd_output = "dataset";
    auto* bd = app.add_subcommand("build-dataset", "Construct the open dataset from a benchmark dump");
    bd->add_option("--input", bd_input, "Raw benchmark JSON")->required();
    bd->add_option("--format", bd_format, "fewrel | tacred");
    bd->add_option("--ner", bd_ner, "Entity extractor spec, e.g. gazetteer:words.txt");
    bd->add_option("--descriptions", bd_descriptions, "JSON object of relation descriptions");
    bd->add_option("--output", bd_output, "Output dataset directory");

    // stats
    std::string st_dataset;
    auto* st = app.add_subcommand("stats", "Print dataset statistics");
    st->add_option("--dataset", st_dataset, "Dataset directory")->required();

    // augment
    std::string au_relations, au_backend = "mock", au_cache, au_output;
    int au_k = 5;
    auto* au = app.add_subcommand("augment", "Expand relation descriptions through the gateway");
    au->add_option("--relations", au_relations, "relations.jsonl to augment")->required();
    au->add_option("--k", au_k, "Descriptions per relation");
    au->add_option("--backend", au_backend, "mock | http");
    au->add_option("--cache", au_cache, "Gateway cache JSONL path");
    au->add_option("--output", au_output, "Output path (defaults to in-place)");

    // train
    std::string tr_dataset, tr_config, tr_output = "run", tr_backend = "mock", tr_cache;
    uint64_t tr_seed = 42;
    auto* tr = app.add_subcommand("train", "Train over a sampled task stream");
    tr->add_option("--dataset", tr_dataset, "Dataset directory")->required();
    tr->add_option("--config", tr_config, "Config JSON path");
    tr->add_option("--seed", tr_seed, "Stream/model seed");
    tr->add_option("--output", tr_output, "Run directory");
    tr->add_option("--backend", tr_backend, "mock | http");
    tr->add_option("--cache", tr_cache, "Gateway cache JSONL path");

    // evaluate
    std::string ev_run, ev_mode = "with_ur", ev_test, ev_backend = "mock", ev_cache;
    uint64_t ev_seed = 42;
    int ev_task = 0;
    auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a test split");
    ev->add_option("--run", ev_run, "Run directory")->required();
    ev->add_option("--seed", ev_seed, "Seed whose checkpoints to use");
    ev->add_option("--task", ev_task, "Task index (default: last)");
    ev->add_option("--mode", ev_mode, "dr_only | with_ur | with_ur_oie");
    ev->add_option("--test", ev_test, "instances.jsonl test split")->required();
    ev->add_option("--backend", ev_backend, "mock | http");
    ev->add_option("--cache", ev_cache, "Gateway cache JSONL path");

    // report
    std::string rp_run;
    auto* rp = app.add_subcommand("report", "Aggregate per-seed metrics into the final table");
    rp->add_option("--run", rp_run, "Run directory")->required();

    // run
    std::string rn_config;
    bool rn_dry = false;
    auto* rn = app.add_subcommand("run", "Execute the full pipeline from a config file");
    rn->add_option("--config", rn_config, "Pipeline config JSON")->required();
    rn->add_flag("--dry-run", rn_dry, "Validate config and inputs without executing");

    CLI11_PARSE(app, argc, argv);

    try {
        if (bd->parsed()) return cmd_build_dataset(bd_input, bd_format, bd_ner, bd_descriptions, bd_output);
        if (st->parsed()) return cmd_stats(st_dataset);
        if (au->parsed()) return cmd_augment(au_relations, au_k, au_backend, au_cache, au_output);
        if (tr->parsed()) return cmd_train(tr_dataset, tr_config, tr_seed, tr_output, tr_backend, tr_cache);
        if (ev->parsed())
            return cmd_evaluate(ev_run, ev_seed, ev_task, ev_mode, ev_test, ev_backend, ev_cache);
        if (rp->parsed()) return cmd_report(rp_run);
        if (rn->parsed()) {
            ofcre::PipelineConfig cfg = ofcre::PipelineConfig::from_file(rn_config);
            if (rn_dry) {
                const std::vector<std::string> problems = ofcre::dry_run(cfg);
                for (const std::string& p : problems) std::cerr << "problem: " << p << "\n";
                std::cout << (problems.empty() ? "config ok" : "config has problems") << "\n";
                return problems.empty() ? 0 : 1;
            }
            ofcre::RunManifest manifest = ofcre::run_pipeline(cfg);
            std::cout << "report: " << (fs::path(cfg.run_dir) / "report.json").string() << "\n";
            std::cout << "manifest: " << (fs::path(cfg.run_dir) / "manifest.json").string() << "\n";
            (void)manifest;
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
