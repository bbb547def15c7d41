#include "ofcre/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "ofcre/dataset.hpp"

namespace ofcre {

using nlohmann::json;

std::vector<std::string> raw_description_texts(const RelationInfo& rel) {
    if (!rel.augmented_descriptions.empty()) return rel.augmented_descriptions;
    return {rel.original_description};
}

namespace {

Batch assemble_batch(ad::Graph& g, ModelState& model, const std::vector<const Instance*>& items,
                     const ContinualState& state) {
    Batch batch;
    for (const Instance* inst : items) {
        TemplateSequence t = build_template(*inst, model.prompt);
        batch.items.push_back(BatchItem{inst->id, encode(g, model, t), inst->label});
    }
    for (const BatchItem& item : batch.items) {
        if (batch.raw_descriptions.count(item.label)) continue;
        auto rel_it = state.relations.find(item.label);
        if (rel_it == state.relations.end())
            throw std::runtime_error("train: no relation info for label '" + item.label + "'");
        const RelationInfo& rel = rel_it->second;
        std::vector<ad::Vec> raw;
        for (const std::string& text : raw_description_texts(rel))
            raw.push_back(encode_description(g, model, text));
        batch.raw_descriptions.emplace(item.label, std::move(raw));
        if (!rel.candidate_descriptions.empty()) {
            std::vector<ad::Vec> cand;
            for (const std::string& text : rel.candidate_descriptions)
                cand.push_back(encode_description(g, model, text));
            batch.candidate_descriptions.emplace(item.label, std::move(cand));
        }
    }
    return batch;
}

void sgd_step(ModelState& model, double step_size) {
    for (ad::Param* p : model.trainable_params()) {
        for (size_t i = 0; i < p->value.v.size(); ++i) p->value.v[i] -= step_size * p->grad.v[i];
        p->zero_grad();
    }
}

}  // namespace

void train_task(ModelState& model, const std::vector<Instance>& data, const ContinualState& state,
                const ExperimentConfig& cfg, std::mt19937_64& rng, std::vector<LossPoint>* trajectory,
                const std::string& phase, int epochs_override) {
    if (data.empty()) throw std::invalid_argument("train_task: empty task data");
    const int epochs = epochs_override >= 0 ? epochs_override : cfg.epochs;
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    ad::Graph g;
    int step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        deterministic_shuffle(order, rng);
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const size_t hi = std::min(order.size(), at + static_cast<size_t>(cfg.batch_size));
            std::vector<const Instance*> items;
            for (size_t i = at; i < hi; ++i) items.push_back(&data[order[i]]);

            g.clear();
            Batch batch = assemble_batch(g, model, items, state);
            TotalLoss loss = total_loss(g, model, batch, cfg);
            if (!std::isfinite(loss.report.total)) {
                std::vector<std::string> ids;
                for (const Instance* inst : items) ids.push_back(inst->id);
                std::ostringstream msg;
                msg << "train: non-finite loss at step " << step << " (" << loss.report.total << ")";
                throw TrainError(msg.str(), step, std::move(ids));
            }
            g.backward(loss.value);
            sgd_step(model, cfg.step_size);

            if (trajectory)
                trajectory->push_back(LossPoint{phase, epoch, step, loss.report.total, loss.report.hsmt,
                                                loss.report.wmi_sd, loss.report.wmi_sc});
            ++step;
        }
    }
}

std::vector<Instance> select_memory(const std::vector<Instance>& task_data, const std::string& relation,
                                    int limit, ModelState& model) {
    std::vector<const Instance*> members;
    for (const Instance& inst : task_data)
        if (inst.label == relation) members.push_back(&inst);
    if (members.empty()) return {};
    std::sort(members.begin(), members.end(),
              [](const Instance* a, const Instance* b) { return a->id < b->id; });

    std::vector<std::vector<double>> zs;
    zs.reserve(members.size());
    for (const Instance* inst : members)
        zs.push_back(encode_value(model, build_template(*inst, model.prompt)));

    const size_t dim = zs[0].size();
    std::vector<double> centroid(dim, 0.0);
    for (const auto& z : zs)
        for (size_t i = 0; i < dim; ++i) centroid[i] += z[i];
    for (double& c : centroid) c /= static_cast<double>(zs.size());

    std::vector<std::pair<double, size_t>> ranked;
    for (size_t i = 0; i < zs.size(); ++i)
        ranked.emplace_back(euclidean_distance(zs[i], centroid), i);
    std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return members[a.second]->id < members[b.second]->id;
    });

    std::vector<Instance> out;
    const size_t take = std::min<size_t>(static_cast<size_t>(limit), ranked.size());
    for (size_t i = 0; i < take; ++i) out.push_back(*members[ranked[i].second]);
    return out;
}

void build_prototypes(ContinualState& state, ModelState& model) {
    std::map<std::string, std::vector<double>> protos;
    for (const std::string& rel : state.seen_relations) {
        if (rel == kUndeterminedLabel) continue;
        auto mem_it = state.memory.find(rel);
        if (mem_it == state.memory.end() || mem_it->second.empty())
            throw std::runtime_error("build_prototypes: empty memory for seen relation '" + rel + "'");
        std::vector<double> proto;
        for (const Instance& inst : mem_it->second) {
            std::vector<double> z = encode_value(model, build_template(inst, model.prompt));
            if (proto.empty()) proto.assign(z.size(), 0.0);
            for (size_t i = 0; i < z.size(); ++i) proto[i] += z[i];
        }
        for (double& p : proto) p /= static_cast<double>(mem_it->second.size());
        protos.emplace(rel, std::move(proto));
    }
    // The UR entry is the mean of its description embeddings, not a memory mean.
    auto ur_it = state.relations.find(kUndeterminedLabel);
    if (ur_it != state.relations.end()) {
        std::vector<double> proto;
        const std::vector<std::string> texts = raw_description_texts(ur_it->second);
        for (const std::string& text : texts) {
            std::vector<double> z = encode_description_value(model, text);
            if (proto.empty()) proto.assign(z.size(), 0.0);
            for (size_t i = 0; i < z.size(); ++i) proto[i] += z[i];
        }
        for (double& p : proto) p /= static_cast<double>(texts.size());
        protos.emplace(kUndeterminedLabel, std::move(proto));
    }
    state.prototypes = std::move(protos);
}

void replay_train(ModelState& model, ContinualState& state, const std::vector<Instance>& current_task,
                  const ExperimentConfig& cfg, std::mt19937_64& rng, std::vector<LossPoint>* trajectory) {
    std::vector<Instance> combined;
    std::set<std::string> seen_ids;
    for (const auto& [rel, insts] : state.memory)
        for (const Instance& inst : insts)
            if (seen_ids.insert(inst.id).second) combined.push_back(inst);
    for (const Instance& inst : current_task)
        if (seen_ids.insert(inst.id).second) combined.push_back(inst);
    std::sort(combined.begin(), combined.end(),
              [](const Instance& a, const Instance& b) { return a.id < b.id; });

    if (!combined.empty())
        train_task(model, combined, state, cfg, rng, trajectory, "memory", cfg.memory_epochs);
    build_prototypes(state, model);
}

namespace {

void accumulate_task_descriptions(ContinualState& state, const TaskDataset& task,
                                  const std::map<std::string, RelationInfo>& dataset_relations,
                                  const ExperimentConfig& cfg, OieGateway* gateway) {
    if (!state.relations.count(kUndeterminedLabel)) {
        auto it = dataset_relations.find(kUndeterminedLabel);
        state.relations.emplace(kUndeterminedLabel, it != dataset_relations.end()
                                                        ? it->second
                                                        : RelationInfo::undetermined());
    }
    for (const std::string& rel_id : task.relations) {
        if (state.relations.count(rel_id)) continue;
        auto it = dataset_relations.find(rel_id);
        RelationInfo rel = it != dataset_relations.end() ? it->second : RelationInfo{};
        if (rel.id.empty()) {
            rel.id = rel_id;
            rel.name = rel_id;
            rel.original_description = rel_id;
        }
        if (gateway && rel.augmented_descriptions.empty())
            rel.augmented_descriptions =
                gateway->augment_relation_description(rel, cfg.descriptions_per_relation);
        if (gateway && rel.candidate_descriptions.empty()) {
            // First training sample whose pair yields a trigger seeds the
            // candidate descriptions for the whole relation.
            for (const Instance& inst : task.train) {
                if (inst.label != rel_id) continue;
                CandidateTriplet t = gateway->extract_triplet(inst.tokens, inst.head, inst.tail);
                if (t.is_na()) continue;
                rel.candidate_descriptions = gateway->generate_candidate_descriptions(
                    t, rel.name, inst.sentence_text(), cfg.descriptions_per_relation);
                break;
            }
        }
        state.relations.emplace(rel_id, std::move(rel));
    }
}

}  // namespace

TrainRunRecord run_stream(const TaskStream& stream,
                          const std::map<std::string, RelationInfo>& dataset_relations,
                          const ExperimentConfig& cfg, uint64_t seed, OieGateway* gateway,
                          const EvalHook& hook, ContinualState* final_state, ModelState* final_model) {
    cfg.validate();
    if (stream.tasks.empty()) throw std::invalid_argument("run_stream: empty task stream");

    ModelState model = ModelState::init(cfg, seed);
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
    ContinualState state;
    state.memory_per_relation = cfg.memory_per_relation;

    TrainRunRecord record;
    record.seed = seed;

    for (const TaskDataset& task : stream.tasks) {
        accumulate_task_descriptions(state, task, dataset_relations, cfg, gateway);

        std::vector<LossPoint> trajectory;
        train_task(model, task.train, state, cfg, rng, &trajectory);

        for (const std::string& rel : task.relations) {
            std::vector<Instance> mem = select_memory(task.train, rel, cfg.memory_per_relation, model);
            auto& slot = state.memory[rel];
            slot.insert(slot.end(), mem.begin(), mem.end());
        }
        // UR memory keeps replay batches from collapsing to DR-only content.
        {
            std::vector<Instance> mem =
                select_memory(task.train, kUndeterminedLabel, cfg.memory_per_relation, model);
            auto& slot = state.memory[kUndeterminedLabel];
            slot.insert(slot.end(), mem.begin(), mem.end());
        }

        state.seen_relations.insert(task.relations.begin(), task.relations.end());
        state.seen_relations.insert(kUndeterminedLabel);

        build_prototypes(state, model);
        replay_train(model, state, task.train, cfg, rng, &trajectory);

        TaskSnapshot snap;
        snap.task_index = task.index;
        snap.seen_relations = state.seen_relations;
        for (const auto& [rel, insts] : state.memory) {
            std::vector<std::string> ids;
            for (const Instance& inst : insts) ids.push_back(inst.id);
            snap.memory_ids.emplace(rel, std::move(ids));
        }
        snap.prototypes = state.prototypes;
        snap.trajectory = std::move(trajectory);
        snap.model_json = model.to_json();
        record.snapshots.push_back(std::move(snap));

        if (hook) hook(task.index, model, state);
    }

    if (final_state) *final_state = state;
    if (final_model) *final_model = model.clone();
    return record;
}

std::string TrainRunRecord::to_json() const {
    json snaps = json::array();
    for (const TaskSnapshot& s : snapshots) {
        json traj = json::array();
        for (const LossPoint& p : s.trajectory)
            traj.push_back(json{{"phase", p.phase},
                                {"epoch", p.epoch},
                                {"step", p.step},
                                {"total", p.total},
                                {"hsmt", p.hsmt},
                                {"wmi_sd", p.wmi_sd},
                                {"wmi_sc", p.wmi_sc}});
        snaps.push_back(json{{"task", s.task_index},
                             {"seen_relations", s.seen_relations},
                             {"memory", s.memory_ids},
                             {"prototypes", s.prototypes},
                             {"trajectory", traj},
                             {"model", json::parse(s.model_json)}});
    }
    return json{{"seed", seed}, {"snapshots", snaps}}.dump();
}

}  // namespace ofcre
