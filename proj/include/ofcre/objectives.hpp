#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ofcre/autodiff.hpp"
#include "ofcre/core.hpp"
#include "ofcre/encoding.hpp"

namespace ofcre {

enum class DescChannel { Raw, Candidate };

struct BatchItem {
    std::string id;
    ad::Vec z;
    std::string label;
};

// One training batch: sample embeddings plus the description embeddings of
// every label represented in it. Description lists may differ in length per
// label (UR carries a single fixed description).
struct Batch {
    std::vector<BatchItem> items;
    std::map<std::string, std::vector<ad::Vec>> raw_descriptions;
    std::map<std::string, std::vector<ad::Vec>> candidate_descriptions;

    int size() const { return static_cast<int>(items.size()); }
};

struct AnchorDiagnostics {
    std::string id;
    std::string label;
    double weight = 0.0;
    std::optional<double> hsmt;  // absent when the anchor lacks positives or negatives
    double wmi_sd = 0.0;
    double wmi_sc = 0.0;
};

struct LossReport {
    double total = 0.0;
    double hsmt = 0.0;
    double wmi_sd = 0.0;
    double wmi_sc = 0.0;
    std::vector<AnchorDiagnostics> anchors;

    std::string to_json_line(int step) const;
};

// ---- plain-value operations (shared by tests and diagnostics) ---------------

double euclidean_distance(std::span<const double> a, std::span<const double> b);

// exp(z^T W d / tau); throws on tau <= 0 or shape mismatch.
double bilinear_score(std::span<const double> z, std::span<const double> d, const ad::Tensor& w,
                      double tau);

// Imbalance weight of Eq.-7 shape: B / (c(x) + sum_{y in N(x)} c(x)/c(y)),
// where c counts batch samples sharing a label, anchor included.
double class_weight(std::span<const std::string> labels, int anchor);

// ---- graph-building losses ---------------------------------------------------

// Hardest-positive / hardest-negative soft-margin triplet loss, averaged over
// anchors that have both a positive and a negative. Optional per-anchor output
// aligned with batch order (disengaged anchors get no value).
ad::Vec hsmt_loss(ad::Graph& g, const Batch& batch,
                  std::vector<std::optional<double>>* per_anchor = nullptr);

// Weighted InfoNCE-style alignment of samples to their label descriptions,
// normalized against the descriptions of every negative sample's label.
// Candidate channel falls back to raw descriptions for labels without
// candidates (UR in particular). Missing descriptions raise std::runtime_error
// naming the label. Mean over all anchors.
ad::Vec wmi_loss(ad::Graph& g, ModelState& model, const Batch& batch, DescChannel channel,
                 std::vector<double>* per_anchor = nullptr);

struct TotalLoss {
    ad::Vec value;
    LossReport report;
};

// total = alpha_x * hsmt + alpha_xd * wmi(raw) + alpha_xc * wmi(candidate).
// A zero coefficient skips that component entirely (ablation switch).
TotalLoss total_loss(ad::Graph& g, ModelState& model, const Batch& batch,
                     const ExperimentConfig& cfg);

// ---- convenience value wrappers ------------------------------------------------

double hsmt_loss_value(const std::vector<std::vector<double>>& embeddings,
                       const std::vector<std::string>& labels,
                       std::vector<std::optional<double>>* per_anchor = nullptr);

double wmi_loss_value(const std::vector<std::vector<double>>& embeddings,
                      const std::vector<std::string>& labels,
                      const std::map<std::string, std::vector<std::vector<double>>>& descriptions,
                      const ad::Tensor& w, double tau, std::vector<double>* per_anchor = nullptr);

// Anchor loss computed directly from score values; used by algebraic checks.
double wmi_anchor_from_scores(const std::vector<double>& own_scores,
                              const std::vector<double>& negative_scores, double weight);

// InfoNCE lower-bound term over a batch: mean_i log(S_i / sum_j S_j) with
// S_i the anchor's own-description score mass. Always <= 0.
double info_nce(const std::vector<std::vector<double>>& embeddings,
                const std::vector<std::vector<std::vector<double>>>& descriptions_per_item,
                const ad::Tensor& w, double tau);

}  // namespace ofcre
