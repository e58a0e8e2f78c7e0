#include "groundcap/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace groundcap {

AttentionParams AttentionParams::init(int d, int heads, RngStream& rng, double gain) {
    if (heads < 1 || d % heads != 0)
        throw std::invalid_argument("AttentionParams: d must be divisible by heads >= 1");
    AttentionParams p;
    p.heads = heads;
    double fan = gain / std::sqrt(static_cast<double>(d));
    // Query/key at twice the fan-in scale: peaked attention at init (score
    // stddev ~ 4 for layer-normed inputs) breaks the uniform-averaging
    // symmetry that otherwise stalls position learning.
    p.wq = Tensor::randn_param(d, d, 2.0 * fan, rng);
    p.wk = Tensor::randn_param(d, d, 2.0 * fan, rng);
    p.wv = Tensor::randn_param(d, d, fan, rng);
    p.wo = Tensor::randn_param(d, d, fan, rng);
    p.bq = Tensor::zeros(1, d, true);
    p.bk = Tensor::zeros(1, d, true);
    p.bv = Tensor::zeros(1, d, true);
    p.bo = Tensor::zeros(1, d, true);
    return p;
}

void AttentionParams::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".wq", wq);
    out.emplace_back(prefix + ".bq", bq);
    out.emplace_back(prefix + ".wk", wk);
    out.emplace_back(prefix + ".bk", bk);
    out.emplace_back(prefix + ".wv", wv);
    out.emplace_back(prefix + ".bv", bv);
    out.emplace_back(prefix + ".wo", wo);
    out.emplace_back(prefix + ".bo", bo);
}

FfnParams FfnParams::init(int d, int d_ff, RngStream& rng, double gain) {
    if (d_ff < d) throw std::invalid_argument("FfnParams: d_ff must be >= d");
    FfnParams p;
    p.w1 = Tensor::randn_param(d, d_ff, gain / std::sqrt(static_cast<double>(d)), rng);
    p.b1 = Tensor::zeros(1, d_ff, true);
    p.w2 = Tensor::randn_param(d_ff, d, gain / std::sqrt(static_cast<double>(d_ff)), rng);
    p.b2 = Tensor::zeros(1, d, true);
    return p;
}

void FfnParams::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w2", w2);
    out.emplace_back(prefix + ".b2", b2);
}

LayerNormParams LayerNormParams::init(int d) {
    LayerNormParams p;
    p.gain = Tensor::full(1, d, 1.0);
    p.gain.set_requires_grad(true);
    p.bias = Tensor::zeros(1, d, true);
    return p;
}

void LayerNormParams::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".gain", gain);
    out.emplace_back(prefix + ".bias", bias);
}

BoolMat causal_mask(Eigen::Index n) {
    if (n < 1) throw std::invalid_argument("causal_mask: n must be >= 1");
    BoolMat m(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) m(i, j) = j <= i;
    return m;
}

BoolMat full_mask(Eigen::Index n_q, Eigen::Index n_kv) {
    if (n_q < 1 || n_kv < 1) throw std::invalid_argument("full_mask: empty side");
    return BoolMat::Constant(n_q, n_kv, true);
}

Tensor multi_head_attention(const Tensor& q, const Tensor& kv, const BoolMat& mask,
                            const AttentionParams& p) {
    Eigen::Index d = p.wq.rows();
    if (q.cols() != d || kv.cols() != d)
        throw std::invalid_argument("multi_head_attention: width mismatch");
    if (q.rows() < 1 || kv.rows() < 1)
        throw std::invalid_argument("multi_head_attention: empty input");
    if (mask.rows() != q.rows() || mask.cols() != kv.rows())
        throw std::invalid_argument("multi_head_attention: mask dims mismatch");

    Tensor Q = affine(q, p.wq, p.bq);
    Tensor K = affine(kv, p.wk, p.bk);
    Tensor V = affine(kv, p.wv, p.bv);

    Eigen::Index dh = d / p.heads;
    double scl = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Tensor> ctx;
    ctx.reserve(static_cast<size_t>(p.heads));
    for (int h = 0; h < p.heads; ++h) {
        Tensor qh = block(Q, 0, h * dh, Q.rows(), dh);
        Tensor kh = block(K, 0, h * dh, K.rows(), dh);
        Tensor vh = block(V, 0, h * dh, V.rows(), dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), scl);
        Tensor weights = masked_softmax_rows(scores, mask);
        ctx.push_back(matmul(weights, vh));
    }
    return affine(concat_cols(ctx), p.wo, p.bo);
}

Tensor feed_forward(const Tensor& x, const FfnParams& p) {
    if (x.cols() != p.w1.rows()) throw std::invalid_argument("feed_forward: width mismatch");
    return affine(relu(affine(x, p.w1, p.b1)), p.w2, p.b2);
}

SharedBlock SharedBlock::init(int d, int heads, int d_ff, RngStream& rng, double gain) {
    SharedBlock b;
    b.ln_cross = LayerNormParams::init(d);
    b.cross = AttentionParams::init(d, heads, rng, gain);
    b.ln_ffn = LayerNormParams::init(d);
    b.ffn = FfnParams::init(d, d_ff, rng, gain);
    return b;
}

void SharedBlock::collect(const std::string& prefix, NamedParams& out) const {
    ln_cross.collect(prefix + ".ln_cross", out);
    cross.collect(prefix + ".cross", out);
    ln_ffn.collect(prefix + ".ln_ffn", out);
    ffn.collect(prefix + ".ffn", out);
}

SharedBlockRegistry::SharedBlockRegistry(int layers, int d, int heads, int d_ff,
                                         RngStream& rng, double gain) {
    if (layers < 1) throw std::invalid_argument("SharedBlockRegistry: layers must be >= 1");
    blocks_.reserve(static_cast<size_t>(layers));
    for (int i = 0; i < layers; ++i) {
        RngStream layer_rng = rng.substream(static_cast<uint64_t>(i));
        blocks_.push_back(
            std::make_shared<SharedBlock>(SharedBlock::init(d, heads, d_ff, layer_rng, gain)));
    }
    encoder_bound_.assign(static_cast<size_t>(layers), false);
    decoder_bound_.assign(static_cast<size_t>(layers), false);
}

std::shared_ptr<SharedBlock> SharedBlockRegistry::bind(int layer, Branch branch) {
    if (layer < 0 || layer >= layers())
        throw std::out_of_range("SharedBlockRegistry::bind: layer out of range");
    auto& bound = branch == Branch::Encoder ? encoder_bound_ : decoder_bound_;
    if (bound[static_cast<size_t>(layer)])
        throw std::logic_error("SharedBlockRegistry::bind: layer already bound for this branch");
    bound[static_cast<size_t>(layer)] = true;
    return blocks_[static_cast<size_t>(layer)];
}

const std::shared_ptr<SharedBlock>& SharedBlockRegistry::block(int layer) const {
    if (layer < 0 || layer >= layers())
        throw std::out_of_range("SharedBlockRegistry::block: layer out of range");
    return blocks_[static_cast<size_t>(layer)];
}

void SharedBlockRegistry::collect(const std::string& prefix, NamedParams& out) const {
    for (int i = 0; i < layers(); ++i)
        blocks_[static_cast<size_t>(i)]->collect(prefix + ".layer" + std::to_string(i), out);
}

TextLayer TextLayer::init(int d, int heads, RngStream& rng, double gain,
                          std::shared_ptr<SharedBlock> shared) {
    TextLayer l;
    l.ln_self = LayerNormParams::init(d);
    l.self_attn = AttentionParams::init(d, heads, rng, gain);
    l.shared = std::move(shared);
    return l;
}

void TextLayer::collect(const std::string& prefix, NamedParams& out) const {
    ln_self.collect(prefix + ".ln_self", out);
    self_attn.collect(prefix + ".self_attn", out);
    // Shared block parameters are collected once through the registry.
}

namespace {

Tensor text_layer_body(const Tensor& text, const Tensor& vision, const TextLayer& layer,
                       double ln_eps, const BoolMat& self_mask) {
    if (text.rows() < 1 || vision.rows() < 1)
        throw std::invalid_argument("text layer: empty input");
    Tensor normed = layer_norm(text, layer.ln_self.gain, layer.ln_self.bias, ln_eps);
    Tensor h = add(text, multi_head_attention(normed, normed, self_mask, layer.self_attn));

    const SharedBlock& s = *layer.shared;
    Tensor cq = layer_norm(h, s.ln_cross.gain, s.ln_cross.bias, ln_eps);
    h = add(h, multi_head_attention(cq, vision, full_mask(h.rows(), vision.rows()), s.cross));

    Tensor fq = layer_norm(h, s.ln_ffn.gain, s.ln_ffn.bias, ln_eps);
    return add(h, feed_forward(fq, s.ffn));
}

}  // namespace

Tensor grounded_text_encoder_layer(const Tensor& text, const Tensor& vision,
                                   const TextLayer& layer, double ln_eps,
                                   const std::vector<bool>& key_allowed) {
    BoolMat mask = full_mask(text.rows(), text.rows());
    if (!key_allowed.empty()) {
        if (static_cast<Eigen::Index>(key_allowed.size()) != text.rows())
            throw std::invalid_argument("encoder layer: key mask length mismatch");
        for (Eigen::Index j = 0; j < text.rows(); ++j)
            if (!key_allowed[static_cast<size_t>(j)]) mask.col(j).setConstant(false);
    }
    return text_layer_body(text, vision, layer, ln_eps, mask);
}

Tensor grounded_text_decoder_layer(const Tensor& text, const Tensor& vision,
                                   const TextLayer& layer, double ln_eps) {
    return text_layer_body(text, vision, layer, ln_eps, causal_mask(text.rows()));
}

SelfLayer SelfLayer::init(int d, int heads, int d_ff, RngStream& rng, double gain) {
    SelfLayer l;
    l.ln1 = LayerNormParams::init(d);
    l.attn = AttentionParams::init(d, heads, rng, gain);
    l.ln2 = LayerNormParams::init(d);
    l.ffn = FfnParams::init(d, d_ff, rng, gain);
    return l;
}

void SelfLayer::collect(const std::string& prefix, NamedParams& out) const {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    ffn.collect(prefix + ".ffn", out);
}

Tensor self_attention_layer(const Tensor& x, const SelfLayer& layer, double ln_eps) {
    if (x.rows() < 1) throw std::invalid_argument("self_attention_layer: empty input");
    Tensor normed = layer_norm(x, layer.ln1.gain, layer.ln1.bias, ln_eps);
    Tensor h =
        add(x, multi_head_attention(normed, normed, full_mask(x.rows(), x.rows()), layer.attn));
    Tensor f = layer_norm(h, layer.ln2.gain, layer.ln2.bias, ln_eps);
    return add(h, feed_forward(f, layer.ffn));
}

}  // namespace groundcap
