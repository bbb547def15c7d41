#include "ofcre/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace ofcre {

using nlohmann::json;

double euclidean_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("euclidean_distance: dimension mismatch");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

double bilinear_score(std::span<const double> z, std::span<const double> d, const ad::Tensor& w,
                      double tau) {
    if (tau <= 0.0) throw std::invalid_argument("bilinear_score: tau must be > 0");
    if (static_cast<int>(z.size()) != w.rows || static_cast<int>(d.size()) != w.cols)
        throw std::invalid_argument("bilinear_score: dimension mismatch");
    double s = 0.0;
    for (int r = 0; r < w.rows; ++r) {
        double wd = 0.0;
        auto row = w.row(r);
        for (int c = 0; c < w.cols; ++c) wd += row[static_cast<size_t>(c)] * d[static_cast<size_t>(c)];
        s += z[static_cast<size_t>(r)] * wd;
    }
    return std::exp(s / tau);
}

double class_weight(std::span<const std::string> labels, int anchor) {
    const int b = static_cast<int>(labels.size());
    if (anchor < 0 || anchor >= b) throw std::invalid_argument("class_weight: anchor out of range");
    std::map<std::string, int> counts;
    for (const auto& l : labels) counts[l]++;
    const double own = static_cast<double>(counts[labels[static_cast<size_t>(anchor)]]);
    double denom = own;
    for (int i = 0; i < b; ++i) {
        if (labels[static_cast<size_t>(i)] == labels[static_cast<size_t>(anchor)]) continue;
        denom += own / static_cast<double>(counts[labels[static_cast<size_t>(i)]]);
    }
    return static_cast<double>(b) / denom;
}

ad::Vec hsmt_loss(ad::Graph& g, const Batch& batch, std::vector<std::optional<double>>* per_anchor) {
    const int b = batch.size();
    if (per_anchor) per_anchor->assign(static_cast<size_t>(b), std::nullopt);

    // Pairwise distances computed once and shared across anchors.
    std::vector<std::vector<ad::Vec>> dist(static_cast<size_t>(b), std::vector<ad::Vec>(static_cast<size_t>(b)));
    for (int i = 0; i < b; ++i)
        for (int j = i + 1; j < b; ++j) {
            ad::Vec d = g.euclidean(batch.items[static_cast<size_t>(i)].z, batch.items[static_cast<size_t>(j)].z);
            dist[static_cast<size_t>(i)][static_cast<size_t>(j)] = d;
            dist[static_cast<size_t>(j)][static_cast<size_t>(i)] = d;
        }

    std::vector<ad::Vec> engaged;
    for (int i = 0; i < b; ++i) {
        std::vector<ad::Vec> pos, neg;
        for (int j = 0; j < b; ++j) {
            if (j == i) continue;
            if (batch.items[static_cast<size_t>(j)].label == batch.items[static_cast<size_t>(i)].label)
                pos.push_back(dist[static_cast<size_t>(i)][static_cast<size_t>(j)]);
            else
                neg.push_back(dist[static_cast<size_t>(i)][static_cast<size_t>(j)]);
        }
        if (pos.empty() || neg.empty()) continue;
        ad::Vec anchor = g.softplus(g.sub(g.max_of(pos), g.min_of(neg)));
        if (per_anchor) (*per_anchor)[static_cast<size_t>(i)] = g.value0(anchor);
        engaged.push_back(anchor);
    }
    if (engaged.empty()) return g.constant(0.0);
    std::vector<double> ws(engaged.size(), 1.0 / static_cast<double>(engaged.size()));
    return g.weighted_sum(engaged, ws);
}

namespace {

const std::vector<ad::Vec>& channel_descriptions(const Batch& batch, const std::string& label,
                                                 DescChannel channel) {
    if (channel == DescChannel::Candidate) {
        auto it = batch.candidate_descriptions.find(label);
        if (it != batch.candidate_descriptions.end() && !it->second.empty()) return it->second;
    }
    auto it = batch.raw_descriptions.find(label);
    if (it == batch.raw_descriptions.end() || it->second.empty())
        throw std::runtime_error("wmi_loss: missing descriptions for label '" + label + "'");
    return it->second;
}

}  // namespace

ad::Vec wmi_loss(ad::Graph& g, ModelState& model, const Batch& batch, DescChannel channel,
                 std::vector<double>* per_anchor) {
    const int b = batch.size();
    if (per_anchor) per_anchor->assign(static_cast<size_t>(b), 0.0);
    if (b == 0) return g.constant(0.0);

    ad::Param& w = model.channel_matrix(channel == DescChannel::Candidate);
    const double inv_tau = 1.0 / model.tau;

    // W*d is shared across anchors; exponents z^T(Wd)/tau are per (anchor, label).
    std::map<std::string, std::vector<ad::Vec>> projected;
    for (const BatchItem& item : batch.items) {
        if (projected.count(item.label)) continue;
        const std::vector<ad::Vec>& descs = channel_descriptions(batch, item.label, channel);
        std::vector<ad::Vec> proj;
        proj.reserve(descs.size());
        for (const ad::Vec& d : descs) proj.push_back(g.matvec(w, d));
        projected.emplace(item.label, std::move(proj));
    }

    std::vector<std::string> labels;
    labels.reserve(static_cast<size_t>(b));
    for (const BatchItem& item : batch.items) labels.push_back(item.label);

    std::vector<ad::Vec> anchor_losses;
    anchor_losses.reserve(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i) {
        const BatchItem& anchor = batch.items[static_cast<size_t>(i)];
        std::map<std::string, std::vector<ad::Vec>> exponents;
        auto exps_for = [&](const std::string& label) -> const std::vector<ad::Vec>& {
            auto it = exponents.find(label);
            if (it != exponents.end()) return it->second;
            std::vector<ad::Vec> es;
            for (const ad::Vec& wd : projected.at(label))
                es.push_back(g.scale(g.dot(anchor.z, wd), inv_tau));
            return exponents.emplace(label, std::move(es)).first->second;
        };

        const std::vector<ad::Vec>& own = exps_for(anchor.label);
        std::vector<ad::Vec> all(own.begin(), own.end());
        for (int j = 0; j < b; ++j) {
            if (j == i || labels[static_cast<size_t>(j)] == anchor.label) continue;
            // Per-sample normalization: repeated negative labels repeat their terms.
            const std::vector<ad::Vec>& es = exps_for(labels[static_cast<size_t>(j)]);
            all.insert(all.end(), es.begin(), es.end());
        }

        const double weight = class_weight(labels, i);
        ad::Vec loss = g.scale(g.sub(g.logsumexp(all), g.logsumexp(own)), weight);
        if (per_anchor) (*per_anchor)[static_cast<size_t>(i)] = g.value0(loss);
        anchor_losses.push_back(loss);
    }
    std::vector<double> ws(anchor_losses.size(), 1.0 / static_cast<double>(b));
    return g.weighted_sum(anchor_losses, ws);
}

TotalLoss total_loss(ad::Graph& g, ModelState& model, const Batch& batch,
                     const ExperimentConfig& cfg) {
    TotalLoss out;
    LossReport& rep = out.report;
    rep.anchors.resize(static_cast<size_t>(batch.size()));
    std::vector<std::string> labels;
    for (int i = 0; i < batch.size(); ++i) {
        rep.anchors[static_cast<size_t>(i)].id = batch.items[static_cast<size_t>(i)].id;
        rep.anchors[static_cast<size_t>(i)].label = batch.items[static_cast<size_t>(i)].label;
        labels.push_back(batch.items[static_cast<size_t>(i)].label);
    }
    for (int i = 0; i < batch.size(); ++i)
        rep.anchors[static_cast<size_t>(i)].weight = class_weight(labels, i);

    std::vector<ad::Vec> terms;
    std::vector<double> coeffs;
    if (cfg.alpha_x > 0.0) {
        std::vector<std::optional<double>> per_anchor;
        ad::Vec h = hsmt_loss(g, batch, &per_anchor);
        rep.hsmt = g.value0(h);
        for (int i = 0; i < batch.size(); ++i)
            rep.anchors[static_cast<size_t>(i)].hsmt = per_anchor[static_cast<size_t>(i)];
        terms.push_back(h);
        coeffs.push_back(cfg.alpha_x);
    }
    if (cfg.alpha_xd > 0.0) {
        std::vector<double> per_anchor;
        ad::Vec l = wmi_loss(g, model, batch, DescChannel::Raw, &per_anchor);
        rep.wmi_sd = g.value0(l);
        for (int i = 0; i < batch.size(); ++i)
            rep.anchors[static_cast<size_t>(i)].wmi_sd = per_anchor[static_cast<size_t>(i)];
        terms.push_back(l);
        coeffs.push_back(cfg.alpha_xd);
    }
    if (cfg.alpha_xc > 0.0) {
        std::vector<double> per_anchor;
        ad::Vec l = wmi_loss(g, model, batch, DescChannel::Candidate, &per_anchor);
        rep.wmi_sc = g.value0(l);
        for (int i = 0; i < batch.size(); ++i)
            rep.anchors[static_cast<size_t>(i)].wmi_sc = per_anchor[static_cast<size_t>(i)];
        terms.push_back(l);
        coeffs.push_back(cfg.alpha_xc);
    }
    out.value = terms.empty() ? g.constant(0.0) : g.weighted_sum(terms, coeffs);
    rep.total = g.value0(out.value);
    return out;
}

std::string LossReport::to_json_line(int step) const {
    json j{{"step", step}, {"total", total}, {"hsmt", hsmt}, {"wmi_sd", wmi_sd}, {"wmi_sc", wmi_sc}};
    return j.dump();
}

// ---- convenience value wrappers ---------------------------------------------

double hsmt_loss_value(const std::vector<std::vector<double>>& embeddings,
                       const std::vector<std::string>& labels,
                       std::vector<std::optional<double>>* per_anchor) {
    if (embeddings.size() != labels.size())
        throw std::invalid_argument("hsmt_loss_value: embeddings/labels size mismatch");
    ad::Graph g;
    Batch batch;
    for (size_t i = 0; i < embeddings.size(); ++i)
        batch.items.push_back(BatchItem{"i" + std::to_string(i), g.input(embeddings[i]), labels[i]});
    return g.value0(hsmt_loss(g, batch, per_anchor));
}

double wmi_loss_value(const std::vector<std::vector<double>>& embeddings,
                      const std::vector<std::string>& labels,
                      const std::map<std::string, std::vector<std::vector<double>>>& descriptions,
                      const ad::Tensor& w, double tau, std::vector<double>* per_anchor) {
    if (embeddings.size() != labels.size())
        throw std::invalid_argument("wmi_loss_value: embeddings/labels size mismatch");
    ad::Graph g;
    ModelState model;
    model.bilinear_raw = ad::Param("bilinear_raw", w.rows, w.cols);
    model.bilinear_raw.value = w;
    model.bilinear_cand = model.bilinear_raw;
    model.tau = tau;
    Batch batch;
    for (size_t i = 0; i < embeddings.size(); ++i)
        batch.items.push_back(BatchItem{"i" + std::to_string(i), g.input(embeddings[i]), labels[i]});
    for (const auto& [label, descs] : descriptions) {
        std::vector<ad::Vec> vs;
        for (const auto& d : descs) vs.push_back(g.input(d));
        batch.raw_descriptions.emplace(label, std::move(vs));
    }
    return g.value0(wmi_loss(g, model, batch, DescChannel::Raw, per_anchor));
}

double wmi_anchor_from_scores(const std::vector<double>& own_scores,
                              const std::vector<double>& negative_scores, double weight) {
    if (own_scores.empty()) throw std::invalid_argument("wmi_anchor_from_scores: no own scores");
    double numer = 0.0;
    for (double h : own_scores) numer += h;
    double z = numer;
    for (double h : negative_scores) z += h;
    return -weight * std::log(numer / z);
}

double info_nce(const std::vector<std::vector<double>>& embeddings,
                const std::vector<std::vector<std::vector<double>>>& descriptions_per_item,
                const ad::Tensor& w, double tau) {
    if (embeddings.size() != descriptions_per_item.size())
        throw std::invalid_argument("info_nce: size mismatch");
    const size_t b = embeddings.size();
    if (b == 0) return 0.0;
    std::vector<double> mass(b, 0.0);
    double denom = 0.0;
    for (size_t j = 0; j < b; ++j) {
        for (const auto& d : descriptions_per_item[j])
            mass[j] += bilinear_score(embeddings[j], d, w, tau);
        denom += mass[j];
    }
    double acc = 0.0;
    for (size_t i = 0; i < b; ++i) acc += std::log(mass[i] / denom);
    return acc / static_cast<double>(b);
}

}  // namespace ofcre
