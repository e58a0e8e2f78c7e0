#pragma once

#include <memory>
#include <string>
#include <vector>

#include "groundcap/ops.hpp"
#include "groundcap/tensor.hpp"

namespace groundcap {

/// Named parameter list; checkpointing and the optimizer both consume it.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    int heads = 1;

    /// Weights are drawn at stddev gain/sqrt(d); the query and key
    /// projections get twice that so attention starts peaked rather than
    /// uniform (uniform attention averages away the positional content the
    /// grounding head must decode, and the symmetry is slow to break).
    static AttentionParams init(int d, int heads, RngStream& rng, double gain);
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct FfnParams {
    Tensor w1, b1, w2, b2;

    /// w1 at gain/sqrt(d), w2 at gain/sqrt(d_ff) (fan-in scaled).
    static FfnParams init(int d, int d_ff, RngStream& rng, double gain);
    void collect(const std::string& prefix, NamedParams& out) const;
};

struct LayerNormParams {
    Tensor gain, bias;

    static LayerNormParams init(int d);
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// True = attention allowed. Every query row must keep at least one
/// allowed key.
BoolMat causal_mask(Eigen::Index n);
BoolMat full_mask(Eigen::Index n_q, Eigen::Index n_kv);

/// Scaled dot-product attention with `heads` heads (scale 1/sqrt(d/heads)),
/// queries from `q`, keys/values from `kv`, masked positions given exactly
/// zero weight, output projected back to width d.
Tensor multi_head_attention(const Tensor& q, const Tensor& kv, const BoolMat& mask,
                            const AttentionParams& p);

/// Position-wise d -> d_ff -> d with ReLU between.
Tensor feed_forward(const Tensor& x, const FfnParams& p);

/// The single storage of the cross-attention + FFN sublayers (with the layer
/// norms that wrap them) referenced by a grounding-encoder layer and a
/// captioning-decoder layer at the same depth.
struct SharedBlock {
    LayerNormParams ln_cross;
    AttentionParams cross;
    LayerNormParams ln_ffn;
    FfnParams ffn;

    static SharedBlock init(int d, int heads, int d_ff, RngStream& rng, double gain);
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Owns one SharedBlock per layer depth and hands out aliases, at most one
/// per branch (encoder / decoder) per layer.
class SharedBlockRegistry {
public:
    enum class Branch { Encoder, Decoder };

    SharedBlockRegistry(int layers, int d, int heads, int d_ff, RngStream& rng, double gain);

    /// Aliased storage for `layer`; throws std::out_of_range past the stack
    /// depth and std::logic_error when the same branch binds a layer twice.
    std::shared_ptr<SharedBlock> bind(int layer, Branch branch);

    int layers() const { return static_cast<int>(blocks_.size()); }
    const std::shared_ptr<SharedBlock>& block(int layer) const;
    void collect(const std::string& prefix, NamedParams& out) const;

private:
    std::vector<std::shared_ptr<SharedBlock>> blocks_;
    std::vector<bool> encoder_bound_, decoder_bound_;
};

/// One text-stack layer: self-attention (bi-directional or causal by mask)
/// plus the registry-shared cross-attention and FFN, all pre-norm residual.
struct TextLayer {
    LayerNormParams ln_self;
    AttentionParams self_attn;
    std::shared_ptr<SharedBlock> shared;

    static TextLayer init(int d, int heads, RngStream& rng, double gain,
                          std::shared_ptr<SharedBlock> shared);
    void collect(const std::string& prefix, NamedParams& out) const;
};

/// Bi-directional self-attention -> cross-attention to vision -> FFN.
/// `key_allowed[j]` masks key j out of self-attention for every query
/// (used to hide PAD); pass empty to allow all.
Tensor grounded_text_encoder_layer(const Tensor& text, const Tensor& vision,
                                   const TextLayer& layer, double ln_eps,
                                   const std::vector<bool>& key_allowed = {});

/// As the encoder layer but with causal self-attention.
Tensor grounded_text_decoder_layer(const Tensor& text, const Tensor& vision,
                                   const TextLayer& layer, double ln_eps);

/// Self-attention + FFN layer (the vision stack; no cross-attention).
struct SelfLayer {
    LayerNormParams ln1;
    AttentionParams attn;
    LayerNormParams ln2;
    FfnParams ffn;

    static SelfLayer init(int d, int heads, int d_ff, RngStream& rng, double gain);
    void collect(const std::string& prefix, NamedParams& out) const;
};

Tensor self_attention_layer(const Tensor& x, const SelfLayer& layer, double ln_eps);

}  // namespace groundcap
