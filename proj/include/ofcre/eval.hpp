#pragma once

#include <string>
#include <vector>

#include "ofcre/core.hpp"
#include "ofcre/encoding.hpp"
#include "ofcre/gateway.hpp"

namespace ofcre {

enum class PredictionMode { DrOnly, WithUr, WithUrOie };

PredictionMode prediction_mode_from_string(const std::string& name);
std::string to_string(PredictionMode mode);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Nearest-class-mean over the prototype store. DrOnly drops the UR candidate;
// the UR entry itself is a description mean, installed by build_prototypes.
// Deterministic tie-break by relation id.
std::string predict(std::span<const double> z, const ContinualState& state, PredictionMode mode);

// OIE filter in front of NCM: a null trigger sends the pair straight to UR;
// survivors are encoded and classified against prototypes plus the UR entry.
// Gateway transport errors degrade to plain with-UR prediction.
std::string oie_filtered_predict(const EntitySpan& e_i, const EntitySpan& e_j,
                                 const std::vector<std::string>& tokens, const ContinualState& state,
                                 ModelState& model, OieGateway& gateway);

// Micro-averaged F1 over determined relations; UR is never a positive class.
double micro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds);
double macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds);

// Score drop from the first task to the last.
double forgetting(double first_task_score, double final_score);

struct MetricTable {
    std::string mode;
    uint64_t seed = 0;
    std::vector<double> per_task_f1;  // after each task, over the cumulative test set

    double forgetting_rate() const;
};

struct SeedSummary {
    std::string mode;
    std::vector<double> mean;
    std::vector<double> stddev;  // sample standard deviation
    double forgetting_mean = 0.0;
    int seed_count = 0;

    // One "mean±std" cell per task, in the benchmark table layout.
    std::vector<std::string> cells() const;
};

SeedSummary aggregate_seeds(const std::vector<MetricTable>& records);

// F1 of one prediction mode over a test split. DrOnly evaluates only DR
// instances; the UR modes evaluate everything. The gateway is required for
// the OIE-filtered mode.
double evaluate_split(const std::vector<Instance>& test, const ContinualState& state, ModelState& model,
                      PredictionMode mode, OieGateway* gateway = nullptr, bool use_macro_f1 = false);

}  // namespace ofcre
