#pragma once

#include <map>
#include <string>
#include <vector>

#include "ofcre/core.hpp"
#include "ofcre/dataset.hpp"
#include "ofcre/eval.hpp"
#include "ofcre/gateway.hpp"
#include "ofcre/trainer.hpp"

namespace ofcre {

// Flat config file: ExperimentConfig keys plus the pipeline keys below.
struct PipelineConfig {
    ExperimentConfig experiment;
    std::string input_path;
    std::string input_format = "fewrel";  // fewrel | tacred | dataset-dir
    std::string descriptions_path;
    std::string gazetteer_path;
    std::string backend = "mock";  // mock | http
    std::string cache_path;        // defaults to <run_dir>/gateway_cache.jsonl
    std::string run_dir = "run";
    std::vector<std::string> modes = {"dr_only", "with_ur", "with_ur_oie"};

    std::string to_json() const;
    static PipelineConfig from_json(const std::string& text);
    static PipelineConfig from_file(const std::string& path);
};

struct RunManifest {
    std::string label;
    std::string config_snapshot;
    std::map<std::string, std::string> dataset_hashes;
    std::string backend_tag;
    std::vector<uint64_t> seeds;
    std::vector<std::string> artifacts;
    long started_at = 0;
    long finished_at = 0;
    long backend_invocations = -1;  // known only for the mock backend

    std::string to_json() const;
    static RunManifest from_file(const std::string& path);
};

// Report row label; zeroed loss coefficients name the ablation.
std::string ablation_label(const ExperimentConfig& cfg);

// Validates config and input schemas without executing stages. Returns the
// list of problems found (empty means the run would start).
std::vector<std::string> dry_run(const PipelineConfig& cfg);

// dataset -> train/evaluate per seed -> report -> manifest (written last,
// atomically). Stage failures abort with the stage name; a missing manifest
// marks a partial run. An injected backend overrides cfg.backend.
RunManifest run_pipeline(const PipelineConfig& cfg, GatewayBackend* injected_backend = nullptr);

// Raw-description augmentation for every non-UR relation lacking one.
void augment_relations(std::map<std::string, RelationInfo>& relations, OieGateway& gateway, int k);

}  // namespace ofcre
