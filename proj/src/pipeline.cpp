#include "ofcre/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace ofcre {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << content;
}

std::string file_hash(const std::string& path) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(read_file(path))));
    return buf;
}

// One pipeline per working directory.
class LockFile {
public:
    explicit LockFile(const std::string& path) : path_(path) {
        fd_ = ::open(path.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0)
            throw std::runtime_error("run directory is locked by another pipeline (" + path +
                                     "); remove the lock file if that run is dead");
    }
    ~LockFile() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    LockFile(const LockFile&) = delete;
    LockFile& operator=(const LockFile&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

template <typename F>
auto stage(const char* name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("stage '") + name + "' failed: " + e.what());
    }
}

}  // namespace

// ---- config ----------------------------------------------------------------

std::string PipelineConfig::to_json() const {
    json j = json::parse(config_to_json(experiment));
    j["input_path"] = input_path;
    j["input_format"] = input_format;
    j["descriptions_path"] = descriptions_path;
    j["gazetteer_path"] = gazetteer_path;
    j["backend"] = backend;
    j["cache_path"] = cache_path;
    j["run_dir"] = run_dir;
    j["modes"] = modes;
    return j.dump(2);
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    PipelineConfig c;
    c.experiment = config_from_json(text);
    json j = json::parse(text);
    auto read = [&](const char* key, auto& out) {
        if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
    };
    read("input_path", c.input_path);
    read("input_format", c.input_format);
    read("descriptions_path", c.descriptions_path);
    read("gazetteer_path", c.gazetteer_path);
    read("backend", c.backend);
    read("cache_path", c.cache_path);
    read("run_dir", c.run_dir);
    read("modes", c.modes);
    return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    return from_json(read_file(path));
}

std::string ablation_label(const ExperimentConfig& cfg) {
    std::string label = "OFCRE";
    if (cfg.alpha_x == 0.0) label += " w/o L_HSMT";
    if (cfg.alpha_xd == 0.0) label += " w/o L_WMI_SD";
    if (cfg.alpha_xc == 0.0) label += " w/o L_WMI_SC";
    return label;
}

// ---- manifest ----------------------------------------------------------------

std::string RunManifest::to_json() const {
    return json{{"label", label},
                {"config", json::parse(config_snapshot)},
                {"dataset_hashes", dataset_hashes},
                {"backend_tag", backend_tag},
                {"seeds", seeds},
                {"artifacts", artifacts},
                {"started_at", started_at},
                {"finished_at", finished_at},
                {"backend_invocations", backend_invocations}}
        .dump(2);
}

RunManifest RunManifest::from_file(const std::string& path) {
    json j = json::parse(read_file(path));
    RunManifest m;
    m.label = j.at("label").get<std::string>();
    m.config_snapshot = j.at("config").dump();
    m.dataset_hashes = j.at("dataset_hashes").get<std::map<std::string, std::string>>();
    m.backend_tag = j.at("backend_tag").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<uint64_t>>();
    m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
    m.started_at = j.at("started_at").get<long>();
    m.finished_at = j.at("finished_at").get<long>();
    m.backend_invocations = j.at("backend_invocations").get<long>();
    return m;
}

// ---- stages ----------------------------------------------------------------

std::vector<std::string> dry_run(const PipelineConfig& cfg) {
    std::vector<std::string> problems;
    try {
        cfg.experiment.validate();
    } catch (const std::exception& e) {
        problems.push_back(std::string("config: ") + e.what());
    }
    if (cfg.input_format != "fewrel" && cfg.input_format != "tacred" && cfg.input_format != "dataset-dir")
        problems.push_back("unknown input_format: " + cfg.input_format);
    if (cfg.backend != "mock" && cfg.backend != "http")
        problems.push_back("unknown backend: " + cfg.backend);
    for (const std::string& m : cfg.modes) {
        try {
            prediction_mode_from_string(m);
        } catch (const std::exception& e) {
            problems.push_back(e.what());
        }
    }
    if (cfg.input_path.empty()) {
        problems.push_back("input_path not set");
    } else if (cfg.input_format == "dataset-dir") {
        if (!fs::is_directory(cfg.input_path))
            problems.push_back("input_path is not a dataset directory: " + cfg.input_path);
    } else if (!fs::is_regular_file(cfg.input_path)) {
        problems.push_back("input_path does not exist: " + cfg.input_path);
    } else {
        try {
            const std::string text = read_file(cfg.input_path);
            if (cfg.input_format == "fewrel")
                ingest_fewrel(text);
            else
                ingest_tacred(text);
        } catch (const std::exception& e) {
            problems.push_back(std::string("input schema: ") + e.what());
        }
    }
    if (!cfg.gazetteer_path.empty() && !fs::is_regular_file(cfg.gazetteer_path))
        problems.push_back("gazetteer wordlist does not exist: " + cfg.gazetteer_path);
    if (!cfg.descriptions_path.empty() && !fs::is_regular_file(cfg.descriptions_path))
        problems.push_back("descriptions file does not exist: " + cfg.descriptions_path);
    return problems;
}

namespace {

OpenDataset load_input(const PipelineConfig& cfg) {
    if (cfg.input_format == "dataset-dir") return load_dataset(cfg.input_path);
    std::vector<RawSentence> raw;
    const std::string text = read_file(cfg.input_path);
    if (cfg.input_format == "fewrel")
        raw = ingest_fewrel(text);
    else if (cfg.input_format == "tacred")
        raw = ingest_tacred(text);
    else
        throw std::runtime_error("unknown input_format: " + cfg.input_format);

    std::map<std::string, RelationInfo> relations;
    if (!cfg.descriptions_path.empty())
        relations = relations_from_descriptions(read_file(cfg.descriptions_path));

    if (!cfg.gazetteer_path.empty()) {
        GazetteerNer ner = GazetteerNer::from_wordlist_file(cfg.gazetteer_path);
        return build_open_dataset(raw, &ner, std::move(relations));
    }
    return build_open_dataset(raw, nullptr, std::move(relations));
}

std::vector<Instance> cumulative_test(const TaskStream& stream, int up_to_task) {
    std::vector<Instance> out;
    for (const TaskDataset& task : stream.tasks) {
        if (task.index > up_to_task) break;
        out.insert(out.end(), task.test.begin(), task.test.end());
    }
    return out;
}

}  // namespace

void augment_relations(std::map<std::string, RelationInfo>& relations, OieGateway& gateway, int k) {
    for (auto& [id, rel] : relations) {
        if (rel.is_undetermined() || !rel.augmented_descriptions.empty()) continue;
        rel.augmented_descriptions = gateway.augment_relation_description(rel, k);
    }
}

RunManifest run_pipeline(const PipelineConfig& cfg, GatewayBackend* injected_backend) {
    fs::create_directories(cfg.run_dir);
    LockFile lock((fs::path(cfg.run_dir) / ".lock").string());

    RunManifest manifest;
    manifest.started_at = static_cast<long>(std::time(nullptr));
    manifest.label = ablation_label(cfg.experiment);
    manifest.config_snapshot = cfg.to_json();
    manifest.seeds = cfg.experiment.seeds;

    // -- dataset ---------------------------------------------------------------
    OpenDataset dataset = stage("dataset", [&] { return load_input(cfg); });
    const std::string dataset_dir = (fs::path(cfg.run_dir) / "dataset").string();
    stage("dataset", [&] {
        write_dataset(dataset, dataset_dir);
        write_file((fs::path(dataset_dir) / "stats.json").string(), compute_stats(dataset).to_json());
        return 0;
    });
    for (const char* name : {"instances.jsonl", "relations.jsonl", "sentences.jsonl"}) {
        const std::string p = (fs::path(dataset_dir) / name).string();
        manifest.dataset_hashes[name] = file_hash(p);
        manifest.artifacts.push_back(p);
    }

    // -- backend / cache ---------------------------------------------------------
    MockBackend own_mock;
    HttpBackend own_http(HttpBackend::Options{});
    GatewayBackend* backend = injected_backend;
    if (!backend) backend = cfg.backend == "http" ? static_cast<GatewayBackend*>(&own_http) : &own_mock;
    manifest.backend_tag = backend->tag();
    const std::string cache_path =
        cfg.cache_path.empty() ? (fs::path(cfg.run_dir) / "gateway_cache.jsonl").string() : cfg.cache_path;
    ResponseCache cache(cache_path);
    OieGateway gateway(*backend, &cache);
    MockBackend* mock = dynamic_cast<MockBackend*>(backend);
    const size_t calls_before = mock ? mock->call_count() : 0;

    // -- train + evaluate per seed -------------------------------------------------
    std::map<std::string, std::vector<MetricTable>> tables;  // mode -> per-seed tables
    stage("train", [&] {
        for (uint64_t seed : cfg.experiment.seeds) {
            const fs::path seed_dir = fs::path(cfg.run_dir) / ("seed" + std::to_string(seed));
            fs::create_directories(seed_dir);
            TaskStream stream = sample_task_stream(dataset, cfg.experiment, seed);

            std::map<std::string, MetricTable> seed_tables;
            for (const std::string& m : cfg.modes)
                seed_tables[m] = MetricTable{m, seed, {}};

            EvalHook hook = [&](int task_index, ModelState& model, const ContinualState& state) {
                const std::vector<Instance> test = cumulative_test(stream, task_index);
                for (const std::string& m : cfg.modes) {
                    const PredictionMode mode = prediction_mode_from_string(m);
                    const double f1 = evaluate_split(test, state, model, mode, &gateway,
                                                     cfg.experiment.macro_f1);
                    seed_tables[m].per_task_f1.push_back(f1 * 100.0);
                }
            };

            TrainRunRecord record =
                run_stream(stream, dataset.relations, cfg.experiment, seed, &gateway, hook);

            write_file((seed_dir / "record.json").string(), record.to_json());
            manifest.artifacts.push_back((seed_dir / "record.json").string());
            {
                std::ofstream log((seed_dir / "train_log.jsonl").string(), std::ios::binary);
                for (const TaskSnapshot& snap : record.snapshots)
                    for (const LossPoint& p : snap.trajectory)
                        log << json{{"task", snap.task_index}, {"phase", p.phase},   {"epoch", p.epoch},
                                    {"step", p.step},          {"total", p.total},   {"hsmt", p.hsmt},
                                    {"wmi_sd", p.wmi_sd},      {"wmi_sc", p.wmi_sc}}
                                   .dump()
                            << "\n";
            }
            for (const TaskSnapshot& snap : record.snapshots) {
                const fs::path task_dir = seed_dir / ("task" + std::to_string(snap.task_index));
                fs::create_directories(task_dir);
                write_file((task_dir / "model.json").string(), snap.model_json);
                json state_json{{"seen_relations", snap.seen_relations},
                                {"memory", snap.memory_ids},
                                {"prototypes", snap.prototypes}};
                write_file((task_dir / "state.json").string(), state_json.dump());
            }

            json metrics;
            for (auto& [m, table] : seed_tables) {
                metrics[m] = json{{"per_task_f1", table.per_task_f1},
                                  {"forgetting", table.forgetting_rate()}};
                tables[m].push_back(std::move(table));
            }
            write_file((seed_dir / "metrics.json").string(), metrics.dump(2));
            manifest.artifacts.push_back((seed_dir / "metrics.json").string());
        }
        return 0;
    });

    // -- report ---------------------------------------------------------------
    stage("report", [&] {
        json modes_json;
        std::ostringstream csv;
        csv << "label,mode,task,mean,std\n";
        csv.setf(std::ios::fixed);
        csv.precision(4);
        for (const auto& [m, recs] : tables) {
            const SeedSummary summary = aggregate_seeds(recs);
            json seed_rows;
            for (const MetricTable& r : recs)
                seed_rows[std::to_string(r.seed)] = r.per_task_f1;
            modes_json[m] = json{{"per_task_mean", summary.mean},
                                 {"per_task_std", summary.stddev},
                                 {"cells", summary.cells()},
                                 {"forgetting_mean", summary.forgetting_mean},
                                 {"per_seed", seed_rows}};
            for (size_t t = 0; t < summary.mean.size(); ++t)
                csv << manifest.label << ',' << m << ',' << (t + 1) << ',' << summary.mean[t] << ','
                    << summary.stddev[t] << "\n";
        }
        json report{{"label", manifest.label}, {"seeds", cfg.experiment.seeds}, {"modes", modes_json}};
        write_file((fs::path(cfg.run_dir) / "report.json").string(), report.dump(2));
        write_file((fs::path(cfg.run_dir) / "report.csv").string(), csv.str());
        return 0;
    });
    manifest.artifacts.push_back((fs::path(cfg.run_dir) / "report.json").string());
    manifest.artifacts.push_back((fs::path(cfg.run_dir) / "report.csv").string());

    if (mock) manifest.backend_invocations = static_cast<long>(mock->call_count() - calls_before);
    manifest.finished_at = static_cast<long>(std::time(nullptr));

    // Written last via rename so partially-complete runs never leave a manifest.
    const std::string tmp = (fs::path(cfg.run_dir) / "manifest.json.tmp").string();
    write_file(tmp, manifest.to_json());
    fs::rename(tmp, fs::path(cfg.run_dir) / "manifest.json");
    return manifest;
}

}  // namespace ofcre
