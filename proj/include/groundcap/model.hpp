#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "groundcap/attention.hpp"
#include "groundcap/geometry.hpp"
#include "groundcap/image.hpp"
#include "groundcap/tensor.hpp"
#include "groundcap/vocab.hpp"

namespace groundcap {

struct ModelConfig {
    int image_size = 64;
    int patch = 8;
    int d = 64;
    int heads = 4;
    int d_ff = 256;
    int vision_layers = 2;
    int text_layers = 2;
    int max_caption = 12;   // predicted tokens per caption, terminator included
    int max_text = 16;      // text position table size
    double ln_eps = 1e-5;
    // Initialization gain. Weight matrices are drawn at stddev
    // gain/sqrt(fan_in); embeddings and the class token at gain/sqrt(d);
    // query/key projections at twice their fan-in scale so attention starts
    // peaked. Vision position rows use fixed 2-D sin/cos at this amplitude:
    // position must be as loud as content, or cross-attention averages it
    // away and the grounding head settles on the dataset-marginal box.
    double init_gain = 1.0;

    int vocab_size() const;
    int patches_per_side() const { return image_size / patch; }
    int vision_tokens() const { return patches_per_side() * patches_per_side() + 1; }

    /// Canonical one-line rendering; the checkpoint hash covers it.
    std::string canonical() const;
    uint64_t hash() const;
};

/// ViT-style encoder: linear patch embedding, class token, learned position
/// embeddings (initialized to a 2-D sin/cos lattice), self-attention stack,
/// final layer norm.
struct VisionEncoder {
    Tensor patch_w, patch_b;  // (patch*patch*3) x d projection
    Tensor cls;               // 1 x d
    Tensor pos;               // (n_patches + 1) x d
    std::vector<SelfLayer> layers;
    LayerNormParams final_ln;

    static VisionEncoder init(const ModelConfig& cfg, RngStream& rng);
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Token + position tables shared by the grounding encoder and the
/// captioning decoder (one text embedding space).
struct TextEmbeddings {
    Tensor tok;  // V x d
    Tensor pos;  // max_text x d

    static TextEmbeddings init(const ModelConfig& cfg, RngStream& rng);
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct GroundingModel {
    std::vector<TextLayer> layers;
    LayerNormParams final_ln;
    Tensor head_w1, head_b1, head_w2, head_b2, head_w3, head_b3;  // d -> d -> d -> 4

    static GroundingModel init(const ModelConfig& cfg, RngStream& rng,
                               SharedBlockRegistry& registry);
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct CaptioningModel {
    Tensor box_w, box_b;  // 4 -> d regional projection (FC_box)
    std::vector<TextLayer> layers;
    LayerNormParams final_ln;
    Tensor head_w, head_b;  // d -> V vocabulary head

    static CaptioningModel init(const ModelConfig& cfg, RngStream& rng,
                                SharedBlockRegistry& registry);
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct GenResult {
    std::vector<int> tokens;  // caption words, specials stripped
    double logprob = 0.0;     // sum of emitted-token log-probabilities
    bool terminated = false;  // true when the terminator was produced
};

/// The joint system: one vision encoder, shared text embeddings, and the two
/// task models whose cross-attention/FFN blocks alias the registry storages.
struct Models {
    ModelConfig cfg;
    VisionEncoder vision;
    TextEmbeddings embeddings;
    SharedBlockRegistry registry;
    GroundingModel grounding;
    CaptioningModel captioner;

    static Models init(const ModelConfig& cfg, uint64_t seed);

    /// Image -> (vision_tokens x d), class token first.
    Tensor encode_image(const Image& img) const;

    /// Expression -> predicted box through the [ENC] output embedding and the
    /// 3-layer head; result is a 1x4 tensor in (0,1)^4 on the tape.
    Tensor ground(const Tensor& v, const std::vector<int>& expression) const;

    /// e_box = FC_box(box) broadcast-added to every vision token.
    Tensor region_condition(const Tensor& v, const Tensor& box) const;

    /// Teacher-forced mean NLL of (expression + terminator) given v*.
    Tensor caption_nll(const Tensor& v_star, const std::vector<int>& expression) const;

    /// Autoregressive decoding conditioned on (v, box); beam_width 1 is
    /// greedy. Deterministic: ties by smaller token id, then beam order.
    GenResult generate(const Tensor& v, const Box& box, int beam_width,
                       bool length_normalize = false) const;

    /// Next-token logits for each position of `input_ids` under causal
    /// decoding; row t scores the token following input_ids[t].
    Tensor decoder_logits(const Tensor& v_star, const std::vector<int>& input_ids) const;

    /// Deterministic inventory; shared storages appear exactly once.
    NamedParams named_parameters() const;
    std::vector<Tensor> parameters() const;

private:
    Models(const ModelConfig& c, uint64_t seed);
};

Box to_box(const Tensor& t);
Tensor box_to_tensor(const Box& b);

/// The conditioning used for whole-image captions.
inline Box global_box() { return {0.5, 0.5, 1.0, 1.0}; }

// ---- Checkpointing -------------------------------------------------------
// Binary layout (all integers little-endian):
//   magic "GCPK", u32 version (1), u64 config_hash, u64 train_hash,
//   u64 step, u64 seed, u64 tensor count, then per tensor: u32 name length,
//   name bytes, u64 rows, u64 cols, rows*cols f64 values in row-major order.

struct CheckpointMeta {
    uint64_t config_hash = 0;  // model architecture hash
    uint64_t train_hash = 0;   // training-recipe hash; 0 for raw inits
    uint64_t step = 0;
    uint64_t seed = 0;
};

void save_checkpoint(const std::string& path, const NamedParams& params,
                     const CheckpointMeta& meta);

/// Loads values into the given (already shaped) named parameters; throws on
/// bad magic/version, missing or extra tensors, or shape mismatch.
CheckpointMeta load_checkpoint(const std::string& path, const NamedParams& params);

/// Reads only the metadata record.
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace groundcap
