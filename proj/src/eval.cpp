#include "ofcre/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace ofcre {

PredictionMode prediction_mode_from_string(const std::string& name) {
    if (name == "dr_only") return PredictionMode::DrOnly;
    if (name == "with_ur") return PredictionMode::WithUr;
    if (name == "with_ur_oie") return PredictionMode::WithUrOie;
    throw std::invalid_argument("unknown prediction mode: " + name);
}

std::string to_string(PredictionMode mode) {
    switch (mode) {
        case PredictionMode::DrOnly: return "dr_only";
        case PredictionMode::WithUr: return "with_ur";
        case PredictionMode::WithUrOie: return "with_ur_oie";
    }
    return "?";
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dimension mismatch");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return -1.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::string predict(std::span<const double> z, const ContinualState& state, PredictionMode mode) {
    const std::string* best = nullptr;
    double best_sim = 0.0;
    for (const auto& [rel, proto] : state.prototypes) {
        if (mode == PredictionMode::DrOnly && rel == kUndeterminedLabel) continue;
        const double sim = cosine_similarity(z, proto);
        if (!best || sim > best_sim) {  // map order makes ties resolve to the lowest id
            best = &rel;
            best_sim = sim;
        }
    }
    if (!best) throw std::runtime_error("predict: empty prototype store");
    return *best;
}

std::string oie_filtered_predict(const EntitySpan& e_i, const EntitySpan& e_j,
                                 const std::vector<std::string>& tokens, const ContinualState& state,
                                 ModelState& model, OieGateway& gateway) {
    bool filtered_na = false;
    try {
        filtered_na = gateway.extract_triplet(tokens, e_i, e_j).is_na();
    } catch (const GatewayTransportError& e) {
        log_warn(std::string("OIE filter unavailable, passing pair through: ") + e.what());
    }
    if (filtered_na) return kUndeterminedLabel;

    Instance probe;
    probe.id = "probe";
    probe.tokens = tokens;
    probe.head = e_i;
    probe.tail = e_j;
    probe.label = kUndeterminedLabel;
    probe.kind = RelationKind::UR;
    const std::vector<double> z = encode_value(model, build_template(probe, model.prompt));
    return predict(z, state, PredictionMode::WithUr);
}

namespace {

struct Counts {
    long tp = 0;
    long fp = 0;
    long fn = 0;
};

std::map<std::string, Counts> confusion_by_class(const std::vector<std::string>& preds,
                                                 const std::vector<std::string>& golds) {
    if (preds.size() != golds.size()) throw std::invalid_argument("f1: prediction/gold length mismatch");
    std::map<std::string, Counts> by_class;
    for (size_t i = 0; i < preds.size(); ++i) {
        const std::string& p = preds[i];
        const std::string& g = golds[i];
        const bool p_dr = p != kUndeterminedLabel;
        const bool g_dr = g != kUndeterminedLabel;
        if (p_dr && g_dr && p == g) {
            by_class[p].tp++;
        } else {
            if (p_dr) by_class[p].fp++;
            if (g_dr) by_class[g].fn++;
        }
    }
    return by_class;
}

}  // namespace

double micro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
    long tp = 0, fp = 0, fn = 0;
    for (const auto& [cls, c] : confusion_by_class(preds, golds)) {
        tp += c.tp;
        fp += c.fp;
        fn += c.fn;
    }
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp) / denom;
}

double macro_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds) {
    const auto by_class = confusion_by_class(preds, golds);
    if (by_class.empty()) return 0.0;
    double acc = 0.0;
    for (const auto& [cls, c] : by_class) {
        const double denom = static_cast<double>(2 * c.tp + c.fp + c.fn);
        acc += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / denom;
    }
    return acc / static_cast<double>(by_class.size());
}

double forgetting(double first_task_score, double final_score) { return first_task_score - final_score; }

double MetricTable::forgetting_rate() const {
    if (per_task_f1.empty()) return 0.0;
    return forgetting(per_task_f1.front(), per_task_f1.back());
}

SeedSummary aggregate_seeds(const std::vector<MetricTable>& records) {
    if (records.empty()) throw std::invalid_argument("aggregate_seeds: no records");
    const size_t tasks = records[0].per_task_f1.size();
    for (const MetricTable& r : records) {
        if (r.per_task_f1.size() != tasks || r.mode != records[0].mode)
            throw std::invalid_argument("aggregate_seeds: record structure mismatch");
    }
    SeedSummary s;
    s.mode = records[0].mode;
    s.seed_count = static_cast<int>(records.size());
    s.mean.resize(tasks, 0.0);
    s.stddev.resize(tasks, 0.0);
    const double n = static_cast<double>(records.size());
    for (size_t t = 0; t < tasks; ++t) {
        double m = 0.0;
        for (const MetricTable& r : records) m += r.per_task_f1[t];
        m /= n;
        s.mean[t] = m;
        if (records.size() > 1) {
            double ss = 0.0;
            for (const MetricTable& r : records) {
                const double d = r.per_task_f1[t] - m;
                ss += d * d;
            }
            s.stddev[t] = std::sqrt(ss / (n - 1.0));
        }
    }
    for (const MetricTable& r : records) s.forgetting_mean += r.forgetting_rate();
    s.forgetting_mean /= n;
    return s;
}

std::vector<std::string> SeedSummary::cells() const {
    std::vector<std::string> out;
    for (size_t t = 0; t < mean.size(); ++t) {
        std::ostringstream cell;
        cell.setf(std::ios::fixed);
        cell.precision(2);
        cell << mean[t] << "±" << stddev[t];
        out.push_back(cell.str());
    }
    return out;
}

double evaluate_split(const std::vector<Instance>& test, const ContinualState& state, ModelState& model,
                      PredictionMode mode, OieGateway* gateway, bool use_macro_f1) {
    if (mode == PredictionMode::WithUrOie && !gateway)
        throw std::invalid_argument("evaluate_split: OIE mode requires a gateway");
    std::vector<std::string> preds, golds;
    for (const Instance& inst : test) {
        if (mode == PredictionMode::DrOnly && inst.kind == RelationKind::UR) continue;
        golds.push_back(inst.label);
        if (mode == PredictionMode::WithUrOie) {
            preds.push_back(oie_filtered_predict(inst.head, inst.tail, inst.tokens, state, model, *gateway));
        } else {
            const std::vector<double> z = encode_value(model, build_template(inst, model.prompt));
            preds.push_back(predict(z, state, mode));
        }
    }
    return use_macro_f1 ? macro_f1(preds, golds) : micro_f1(preds, golds);
}

}  // namespace ofcre
