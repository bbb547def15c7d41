#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "ofcre/autodiff.hpp"
#include "ofcre/core.hpp"

namespace ofcre {

struct PromptConfig {
    int n0 = 3;
    int n1 = 6;
    int n2 = 9;
    int n3 = 12;
    int max_seq_len = 256;

    static PromptConfig from(const ExperimentConfig& c) {
        return PromptConfig{c.prompt_n0, c.prompt_n1, c.prompt_n2, c.prompt_n3, c.max_seq_len};
    }
};

enum class SlotKind { SentenceToken, SoftPrompt, HeadToken, Mask, TailToken };

struct TemplateSlot {
    SlotKind kind = SlotKind::SentenceToken;
    std::string token;      // surface token for vocab lookup; empty for soft prompts / mask
    int prompt_index = -1;  // soft-prompt slot index
};

// Cloze template: sentence, prompt block, head entity, prompt block, MASK,
// prompt block, tail entity, prompt block. Exactly one mask slot.
struct TemplateSequence {
    std::vector<TemplateSlot> slots;
    int mask_index = -1;
    bool truncated = false;

    int length() const { return static_cast<int>(slots.size()); }
};

TemplateSequence build_template(const Instance& inst, const PromptConfig& cfg);

// Wraps free text (a relation description) in a minimal mask-bearing template
// so description vectors live in the same space as sample vectors.
TemplateSequence build_description_template(const std::string& text, const PromptConfig& cfg);

// Encoder contract: template in, d-dimensional latent at the mask out.
class Encoder {
public:
    virtual ~Encoder() = default;
    virtual ad::Vec encode(ad::Graph& g, const TemplateSequence& t) = 0;
    virtual std::vector<ad::Param*> params() = 0;
    virtual int output_dim() const = 0;
    virtual std::unique_ptr<Encoder> clone() const = 0;
    virtual std::string to_json() const = 0;
};

// Hash-vocabulary token embeddings with positional encodings, a mean-pooled
// context mix, and a two-layer projection head over the mask state. Small
// enough to finite-difference, expressive enough to separate toy relations.
class ToyEncoder : public Encoder {
public:
    ToyEncoder(int dim, int vocab_size, int soft_prompt_len, std::mt19937_64& rng);

    ad::Vec encode(ad::Graph& g, const TemplateSequence& t) override;
    std::vector<ad::Param*> params() override;
    int output_dim() const override { return dim_; }
    std::unique_ptr<Encoder> clone() const override;
    std::string to_json() const override;
    static std::unique_ptr<ToyEncoder> from_json(const std::string& text);

    int vocab_size() const { return vocab_size_; }
    int token_row(const std::string& token) const;

    ad::Param embeddings;    // vocab_size x d
    ad::Param soft_prompts;  // soft_prompt_len x d
    ad::Param mask_embedding;  // 1 x d
    ad::Param mix_input;     // d x d
    ad::Param mix_input_bias;  // 1 x d
    ad::Param mix_mask;      // d x d
    ad::Param mix_context;   // d x d
    ad::Param mix_bias;      // 1 x d
    ad::Param proj1;         // d x d
    ad::Param proj1_bias;    // 1 x d
    ad::Param proj2;         // d x d
    ad::Param proj2_bias;    // 1 x d

private:
    ToyEncoder() = default;
    int dim_ = 0;
    int vocab_size_ = 0;
    int soft_prompt_len_ = 0;
};

// Fixed sinusoidal positional encoding, dimension dim, position pos.
std::vector<double> positional_encoding(int pos, int dim);

// Encoder state plus the bilinear alignment matrices and temperature.
struct ModelState {
    std::unique_ptr<Encoder> encoder;
    ad::Param bilinear_raw;   // W for the raw-description channel
    ad::Param bilinear_cand;  // W for the candidate-description channel
    double tau = 0.1;
    bool shared_bilinear = false;
    PromptConfig prompt;

    static ModelState init(const ExperimentConfig& cfg, uint64_t seed);
    ModelState clone() const;

    std::vector<ad::Param*> trainable_params();
    ad::Param& channel_matrix(bool candidate) {
        return candidate && !shared_bilinear ? bilinear_cand : bilinear_raw;
    }

    std::string to_json() const;
    static ModelState from_json(const std::string& text);
    void save(const std::string& path) const;
    static ModelState load(const std::string& path);
};

// z for a sample template: mask hidden state through the projection head.
ad::Vec encode(ad::Graph& g, ModelState& model, const TemplateSequence& t);

// z for a description text, via the wrapper template.
ad::Vec encode_description(ad::Graph& g, ModelState& model, const std::string& text);

// Convenience no-grad forward passes returning plain vectors.
std::vector<double> encode_value(ModelState& model, const TemplateSequence& t);
std::vector<double> encode_description_value(ModelState& model, const std::string& text);

std::vector<std::string> whitespace_tokenize(const std::string& text);

}  // namespace ofcre
