#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ofcre/core.hpp"
#include "ofcre/encoding.hpp"
#include "ofcre/gateway.hpp"
#include "ofcre/objectives.hpp"

namespace ofcre {

// Raised on a non-finite loss; carries the failing step and batch ids.
struct TrainError : std::runtime_error {
    int step;
    std::vector<std::string> batch_ids;
    TrainError(const std::string& msg, int step_, std::vector<std::string> ids)
        : std::runtime_error(msg), step(step_), batch_ids(std::move(ids)) {}
};

struct LossPoint {
    std::string phase;  // "task" or "memory"
    int epoch = 0;
    int step = 0;
    double total = 0.0;
    double hsmt = 0.0;
    double wmi_sd = 0.0;
    double wmi_sc = 0.0;
};

struct TaskSnapshot {
    int task_index = 0;
    std::set<std::string> seen_relations;
    std::map<std::string, std::vector<std::string>> memory_ids;
    std::map<std::string, std::vector<double>> prototypes;
    std::vector<LossPoint> trajectory;
    std::string model_json;
};

struct TrainRunRecord {
    uint64_t seed = 0;
    std::vector<TaskSnapshot> snapshots;

    std::string to_json() const;
};

// Mini-batch SGD over the total objective for `epochs` passes. Appends one
// LossPoint per step to `trajectory` when given.
void train_task(ModelState& model, const std::vector<Instance>& data, const ContinualState& state,
                const ExperimentConfig& cfg, std::mt19937_64& rng,
                std::vector<LossPoint>* trajectory = nullptr, const std::string& phase = "task",
                int epochs_override = -1);

// The relation's instances closest to their own 1-means centroid under the
// current model; ties broken by instance id.
std::vector<Instance> select_memory(const std::vector<Instance>& task_data, const std::string& relation,
                                    int limit, ModelState& model);

// DR prototypes are memory means under the current model; UR gets the mean of
// its description embeddings. Covers every seen relation or throws.
void build_prototypes(ContinualState& state, ModelState& model);

// Memory replay over the union of the memory store and the current task data,
// followed by a prototype rebuild under the final parameters.
void replay_train(ModelState& model, ContinualState& state, const std::vector<Instance>& current_task,
                  const ExperimentConfig& cfg, std::mt19937_64& rng,
                  std::vector<LossPoint>* trajectory = nullptr);

// Invoked after each completed task with (task index, model, state).
using EvalHook = std::function<void(int, ModelState&, const ContinualState&)>;

// Full continual run: per-task description accumulation (augmenting through
// the gateway when provided), task training, memory selection, prototype
// construction and replay. Deterministic for a fixed seed and mock backends.
TrainRunRecord run_stream(const TaskStream& stream,
                          const std::map<std::string, RelationInfo>& dataset_relations,
                          const ExperimentConfig& cfg, uint64_t seed, OieGateway* gateway = nullptr,
                          const EvalHook& hook = nullptr, ContinualState* final_state = nullptr,
                          ModelState* final_model = nullptr);

// Raw-channel description texts for a label: augmented descriptions when
// present, otherwise the original description.
std::vector<std::string> raw_description_texts(const RelationInfo& rel);

}  // namespace ofcre
