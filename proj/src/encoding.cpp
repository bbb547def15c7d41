#include "ofcre/encoding.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace ofcre {

using nlohmann::json;

namespace {

void append_prompts(std::vector<TemplateSlot>& slots, int from, int to) {
    for (int i = from; i < to; ++i) slots.push_back(TemplateSlot{SlotKind::SoftPrompt, "", i});
}

void append_entity(std::vector<TemplateSlot>& slots, const Instance& inst, const EntitySpan& span,
                   SlotKind kind) {
    for (int i = span.start; i < span.end; ++i)
        slots.push_back(TemplateSlot{kind, inst.tokens[static_cast<size_t>(i)], -1});
}

}  // namespace

TemplateSequence build_template(const Instance& inst, const PromptConfig& cfg) {
    TemplateSequence t;
    // Everything after the sentence is fixed-size; the sentence absorbs truncation.
    const int tail_len = cfg.n3 + inst.head.length() + inst.tail.length() + 1;
    if (tail_len >= cfg.max_seq_len)
        throw std::invalid_argument("build_template: template tail exceeds max sequence length");

    int sentence_budget = cfg.max_seq_len - tail_len;
    int sentence_len = static_cast<int>(inst.tokens.size());
    if (sentence_len > sentence_budget) {
        sentence_len = sentence_budget;
        t.truncated = true;
    }
    for (int i = 0; i < sentence_len; ++i)
        t.slots.push_back(TemplateSlot{SlotKind::SentenceToken, inst.tokens[static_cast<size_t>(i)], -1});

    append_prompts(t.slots, 0, cfg.n0);
    append_entity(t.slots, inst, inst.head, SlotKind::HeadToken);
    append_prompts(t.slots, cfg.n0, cfg.n1);
    t.mask_index = static_cast<int>(t.slots.size());
    t.slots.push_back(TemplateSlot{SlotKind::Mask, "", -1});
    append_prompts(t.slots, cfg.n1, cfg.n2);
    append_entity(t.slots, inst, inst.tail, SlotKind::TailToken);
    append_prompts(t.slots, cfg.n2, cfg.n3);
    return t;
}

TemplateSequence build_description_template(const std::string& text, const PromptConfig& cfg) {
    if (text.empty()) throw std::invalid_argument("build_description_template: empty text");
    TemplateSequence t;
    std::vector<std::string> tokens = whitespace_tokenize(text);
    int budget = cfg.max_seq_len - 1;
    if (static_cast<int>(tokens.size()) > budget) {
        tokens.resize(static_cast<size_t>(budget));
        t.truncated = true;
    }
    for (auto& tok : tokens) t.slots.push_back(TemplateSlot{SlotKind::SentenceToken, tok, -1});
    t.mask_index = static_cast<int>(t.slots.size());
    t.slots.push_back(TemplateSlot{SlotKind::Mask, "", -1});
    return t;
}

std::vector<std::string> whitespace_tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::vector<double> positional_encoding(int pos, int dim) {
    std::vector<double> enc(static_cast<size_t>(dim));
    for (int i = 0; i < dim; ++i) {
        const double rate = std::pow(10000.0, -2.0 * (i / 2) / static_cast<double>(dim));
        enc[static_cast<size_t>(i)] = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
    return enc;
}

// ---- ToyEncoder -------------------------------------------------------------

namespace {

void fill_normal(ad::Tensor& t, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (double& x : t.v) x = dist(rng);
}

}  // namespace

ToyEncoder::ToyEncoder(int dim, int vocab_size, int soft_prompt_len, std::mt19937_64& rng)
    : embeddings("embeddings", vocab_size, dim),
      soft_prompts("soft_prompts", soft_prompt_len, dim),
      mask_embedding("mask_embedding", 1, dim),
      mix_input("mix_input", dim, dim),
      mix_input_bias("mix_input_bias", 1, dim),
      mix_mask("mix_mask", dim, dim),
      mix_context("mix_context", dim, dim),
      mix_bias("mix_bias", 1, dim),
      proj1("proj1", dim, dim),
      proj1_bias("proj1_bias", 1, dim),
      proj2("proj2", dim, dim),
      proj2_bias("proj2_bias", 1, dim),
      dim_(dim),
      vocab_size_(vocab_size),
      soft_prompt_len_(soft_prompt_len) {
    if (dim < 1 || vocab_size < 1 || soft_prompt_len < 0)
        throw std::invalid_argument("ToyEncoder: invalid shape");
    const double w = 1.0 / std::sqrt(static_cast<double>(dim));
    fill_normal(embeddings.value, rng, 0.5);
    fill_normal(soft_prompts.value, rng, 0.5);
    fill_normal(mask_embedding.value, rng, 0.5);
    fill_normal(mix_input.value, rng, w);
    fill_normal(mix_mask.value, rng, w);
    fill_normal(mix_context.value, rng, w);
    fill_normal(proj1.value, rng, w);
    fill_normal(proj2.value, rng, w);
}

int ToyEncoder::token_row(const std::string& token) const {
    return static_cast<int>(fnv1a64(token) % static_cast<uint64_t>(vocab_size_));
}

ad::Vec ToyEncoder::encode(ad::Graph& g, const TemplateSequence& t) {
    if (t.mask_index < 0 || t.mask_index >= t.length())
        throw std::invalid_argument("encode: template has no mask");

    std::vector<ad::Vec> hidden;
    hidden.reserve(t.slots.size());
    ad::Vec mask_hidden;
    for (int pos = 0; pos < t.length(); ++pos) {
        const TemplateSlot& slot = t.slots[static_cast<size_t>(pos)];
        ad::Vec e;
        switch (slot.kind) {
            case SlotKind::SoftPrompt:
                if (slot.prompt_index < 0 || slot.prompt_index >= soft_prompt_len_)
                    throw std::invalid_argument("encode: soft prompt index out of range");
                e = g.param_row(soft_prompts, slot.prompt_index);
                break;
            case SlotKind::Mask:
                e = g.param_row(mask_embedding, 0);
                break;
            default:
                e = g.param_row(embeddings, token_row(slot.token));
                break;
        }
        e = g.offset(e, positional_encoding(pos, dim_));
        ad::Vec h = g.tanh_(g.add(g.matvec(mix_input, e), g.param_bias(mix_input_bias)));
        hidden.push_back(h);
        if (pos == t.mask_index) mask_hidden = h;
    }

    ad::Vec context = g.mean(hidden);
    ad::Vec u = g.tanh_(g.add(g.add(g.matvec(mix_mask, mask_hidden), g.matvec(mix_context, context)),
                              g.param_bias(mix_bias)));
    ad::Vec z1 = g.tanh_(g.add(g.matvec(proj1, u), g.param_bias(proj1_bias)));
    return g.add(g.matvec(proj2, z1), g.param_bias(proj2_bias));
}

std::vector<ad::Param*> ToyEncoder::params() {
    return {&embeddings, &soft_prompts, &mask_embedding, &mix_input, &mix_input_bias,
            &mix_mask,   &mix_context,  &mix_bias,       &proj1,     &proj1_bias,
            &proj2,      &proj2_bias};
}

std::unique_ptr<Encoder> ToyEncoder::clone() const { return std::unique_ptr<ToyEncoder>(new ToyEncoder(*this)); }

namespace {

json tensor_to_json(const ad::Tensor& t) {
    return json{{"rows", t.rows}, {"cols", t.cols}, {"data", t.v}};
}

ad::Tensor tensor_from_json(const json& j) {
    ad::Tensor t(j.at("rows").get<int>(), j.at("cols").get<int>());
    t.v = j.at("data").get<std::vector<double>>();
    if (static_cast<int>(t.v.size()) != t.rows * t.cols)
        throw std::invalid_argument("tensor: data size does not match shape");
    return t;
}

}  // namespace

std::string ToyEncoder::to_json() const {
    json tensors;
    for (const ad::Param* p : const_cast<ToyEncoder*>(this)->params())
        tensors[p->name] = tensor_to_json(p->value);
    json j{{"format_version", 1},
           {"kind", "toy"},
           {"dim", dim_},
           {"vocab_size", vocab_size_},
           {"soft_prompt_len", soft_prompt_len_},
           {"tensors", tensors}};
    return j.dump();
}

std::unique_ptr<ToyEncoder> ToyEncoder::from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1)
        throw std::invalid_argument("encoder checkpoint: unsupported format version");
    if (j.at("kind").get<std::string>() != "toy")
        throw std::invalid_argument("encoder checkpoint: unknown encoder kind");
    std::unique_ptr<ToyEncoder> enc(new ToyEncoder());
    enc->dim_ = j.at("dim").get<int>();
    enc->vocab_size_ = j.at("vocab_size").get<int>();
    enc->soft_prompt_len_ = j.at("soft_prompt_len").get<int>();
    const json& tensors = j.at("tensors");
    auto load = [&](ad::Param& p, const char* name) {
        p.name = name;
        p.value = tensor_from_json(tensors.at(name));
        p.grad = ad::Tensor(p.value.rows, p.value.cols);
    };
    load(enc->embeddings, "embeddings");
    load(enc->soft_prompts, "soft_prompts");
    load(enc->mask_embedding, "mask_embedding");
    load(enc->mix_input, "mix_input");
    load(enc->mix_input_bias, "mix_input_bias");
    load(enc->mix_mask, "mix_mask");
    load(enc->mix_context, "mix_context");
    load(enc->mix_bias, "mix_bias");
    load(enc->proj1, "proj1");
    load(enc->proj1_bias, "proj1_bias");
    load(enc->proj2, "proj2");
    load(enc->proj2_bias, "proj2_bias");
    return enc;
}

// ---- ModelState -------------------------------------------------------------

ModelState ModelState::init(const ExperimentConfig& cfg, uint64_t seed) {
    std::mt19937_64 rng(seed);
    ModelState m;
    m.encoder = std::make_unique<ToyEncoder>(cfg.encoder_dim, cfg.vocab_size, cfg.prompt_n3, rng);
    m.bilinear_raw = ad::Param("bilinear_raw", cfg.encoder_dim, cfg.encoder_dim);
    m.bilinear_cand = ad::Param("bilinear_cand", cfg.encoder_dim, cfg.encoder_dim);
    const double w = 0.1 / std::sqrt(static_cast<double>(cfg.encoder_dim));
    fill_normal(m.bilinear_raw.value, rng, w);
    fill_normal(m.bilinear_cand.value, rng, w);
    for (int i = 0; i < cfg.encoder_dim; ++i) {
        m.bilinear_raw.value.at(i, i) += 1.0;
        m.bilinear_cand.value.at(i, i) += 1.0;
    }
    m.tau = cfg.tau;
    m.shared_bilinear = cfg.shared_bilinear;
    m.prompt = PromptConfig::from(cfg);
    return m;
}

ModelState ModelState::clone() const {
    ModelState m;
    m.encoder = encoder->clone();
    m.bilinear_raw = bilinear_raw;
    m.bilinear_cand = bilinear_cand;
    m.tau = tau;
    m.shared_bilinear = shared_bilinear;
    m.prompt = prompt;
    return m;
}

std::vector<ad::Param*> ModelState::trainable_params() {
    std::vector<ad::Param*> out = encoder->params();
    out.push_back(&bilinear_raw);
    if (!shared_bilinear) out.push_back(&bilinear_cand);
    return out;
}

std::string ModelState::to_json() const {
    json j{{"format_version", 1},
           {"encoder", json::parse(encoder->to_json())},
           {"bilinear_raw", tensor_to_json(bilinear_raw.value)},
           {"bilinear_cand", tensor_to_json(bilinear_cand.value)},
           {"tau", tau},
           {"shared_bilinear", shared_bilinear},
           {"prompt", {{"n0", prompt.n0},
                       {"n1", prompt.n1},
                       {"n2", prompt.n2},
                       {"n3", prompt.n3},
                       {"max_seq_len", prompt.max_seq_len}}}};
    return j.dump();
}

ModelState ModelState::from_json(const std::string& text) {
    json j = json::parse(text);
    if (j.at("format_version").get<int>() != 1)
        throw std::invalid_argument("model checkpoint: unsupported format version");
    ModelState m;
    m.encoder = ToyEncoder::from_json(j.at("encoder").dump());
    m.bilinear_raw = ad::Param();
    m.bilinear_raw.name = "bilinear_raw";
    m.bilinear_raw.value = tensor_from_json(j.at("bilinear_raw"));
    m.bilinear_raw.grad = ad::Tensor(m.bilinear_raw.value.rows, m.bilinear_raw.value.cols);
    m.bilinear_cand.name = "bilinear_cand";
    m.bilinear_cand.value = tensor_from_json(j.at("bilinear_cand"));
    m.bilinear_cand.grad = ad::Tensor(m.bilinear_cand.value.rows, m.bilinear_cand.value.cols);
    m.tau = j.at("tau").get<double>();
    m.shared_bilinear = j.at("shared_bilinear").get<bool>();
    const json& p = j.at("prompt");
    m.prompt = PromptConfig{p.at("n0").get<int>(), p.at("n1").get<int>(), p.at("n2").get<int>(),
                            p.at("n3").get<int>(), p.at("max_seq_len").get<int>()};
    return m;
}

void ModelState::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out << to_json();
}

ModelState ModelState::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

ad::Vec encode(ad::Graph& g, ModelState& model, const TemplateSequence& t) {
    return model.encoder->encode(g, t);
}

ad::Vec encode_description(ad::Graph& g, ModelState& model, const std::string& text) {
    return encode(g, model, build_description_template(text, model.prompt));
}

std::vector<double> encode_value(ModelState& model, const TemplateSequence& t) {
    ad::Graph g;
    ad::Vec z = encode(g, model, t);
    auto v = g.value(z);
    return {v.begin(), v.end()};
}

std::vector<double> encode_description_value(ModelState& model, const std::string& text) {
    ad::Graph g;
    ad::Vec z = encode_description(g, model, text);
    auto v = g.value(z);
    return {v.begin(), v.end()};
}

}  // namespace ofcre
