#include "groundcap/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace groundcap {

int ModelConfig::vocab_size() const { return Vocab::instance().size(); }

std::string ModelConfig::canonical() const {
    std::ostringstream s;
    s << "image_size=" << image_size << ";patch=" << patch << ";d=" << d
      << ";heads=" << heads << ";d_ff=" << d_ff << ";vision_layers=" << vision_layers
      << ";text_layers=" << text_layers << ";max_caption=" << max_caption
      << ";max_text=" << max_text << ";ln_eps=" << ln_eps << ";init_gain=" << init_gain
      << ";vocab=" << vocab_size();
    return s.str();
}

uint64_t ModelConfig::hash() const {
    // FNV-1a over the canonical string plus a code-format version tag, so
    // checkpoints from incompatible layouts refuse to load.
    std::string payload = canonical() + "|format1";
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : payload) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// ---- Parameter construction ------------------------------------------------

VisionEncoder VisionEncoder::init(const ModelConfig& cfg, RngStream& rng) {
    if (cfg.image_size % cfg.patch != 0)
        throw std::invalid_argument("VisionEncoder: image size not divisible by patch");
    if (cfg.d % 4 != 0)
        throw std::invalid_argument("VisionEncoder: d must be divisible by 4 for sin/cos positions");
    VisionEncoder v;
    int pdim = cfg.patch * cfg.patch * 3;
    double emb = cfg.init_gain / std::sqrt(static_cast<double>(cfg.d));
    v.patch_w = Tensor::randn_param(pdim, cfg.d, cfg.init_gain / std::sqrt(static_cast<double>(pdim)), rng);
    v.patch_b = Tensor::zeros(1, cfg.d, true);
    v.cls = Tensor::randn_param(1, cfg.d, emb, rng);
    // Position embeddings start as a 2-D sin/cos lattice at full amplitude
    // (row 0, the class token slot, stays random). Patch content is
    // layer-normed to unit scale downstream, so positions drawn at the usual
    // small init would be invisible to attention: heads would average over
    // the image and the box head could never recover WHERE, only WHAT.
    v.pos = Tensor::randn_param(cfg.vision_tokens(), cfg.d, emb, rng);
    int side = cfg.patches_per_side();
    int half = cfg.d / 2, quarter = cfg.d / 4;
    for (int py = 0; py < side; ++py) {
        for (int px = 0; px < side; ++px) {
            int row = 1 + py * side + px;
            for (int k = 0; k < quarter; ++k) {
                double omega = 1.0 / std::pow(100.0, static_cast<double>(k) / quarter);
                v.pos.value_mut()(row, 2 * k) = cfg.init_gain * std::sin(omega * px);
                v.pos.value_mut()(row, 2 * k + 1) = cfg.init_gain * std::cos(omega * px);
                v.pos.value_mut()(row, half + 2 * k) = cfg.init_gain * std::sin(omega * py);
                v.pos.value_mut()(row, half + 2 * k + 1) = cfg.init_gain * std::cos(omega * py);
            }
        }
    }
    for (int i = 0; i < cfg.vision_layers; ++i) {
        RngStream lr = rng.substream(static_cast<uint64_t>(i));
        v.layers.push_back(SelfLayer::init(cfg.d, cfg.heads, cfg.d_ff, lr, cfg.init_gain));
    }
    v.final_ln = LayerNormParams::init(cfg.d);
    return v;
}

void VisionEncoder::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".patch_w", patch_w);
    out.emplace_back(prefix + ".patch_b", patch_b);
    out.emplace_back(prefix + ".cls", cls);
    out.emplace_back(prefix + ".pos", pos);
    for (size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    final_ln.collect(prefix + ".final_ln", out);
}

TextEmbeddings TextEmbeddings::init(const ModelConfig& cfg, RngStream& rng) {
    TextEmbeddings e;
    double emb = cfg.init_gain / std::sqrt(static_cast<double>(cfg.d));
    e.tok = Tensor::randn_param(cfg.vocab_size(), cfg.d, emb, rng);
    e.pos = Tensor::randn_param(cfg.max_text, cfg.d, emb, rng);
    return e;
}

void TextEmbeddings::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".tok", tok);
    out.emplace_back(prefix + ".pos", pos);
}

GroundingModel GroundingModel::init(const ModelConfig& cfg, RngStream& rng,
                                    SharedBlockRegistry& registry) {
    GroundingModel g;
    for (int i = 0; i < cfg.text_layers; ++i) {
        RngStream lr = rng.substream(static_cast<uint64_t>(i));
        g.layers.push_back(TextLayer::init(cfg.d, cfg.heads, lr, cfg.init_gain,
                                           registry.bind(i, SharedBlockRegistry::Branch::Encoder)));
    }
    g.final_ln = LayerNormParams::init(cfg.d);
    double fan = cfg.init_gain / std::sqrt(static_cast<double>(cfg.d));
    g.head_w1 = Tensor::randn_param(cfg.d, cfg.d, fan, rng);
    g.head_b1 = Tensor::zeros(1, cfg.d, true);
    g.head_w2 = Tensor::randn_param(cfg.d, cfg.d, fan, rng);
    g.head_b2 = Tensor::zeros(1, cfg.d, true);
    g.head_w3 = Tensor::randn_param(cfg.d, 4, fan, rng);
    g.head_b3 = Tensor::zeros(1, 4, true);
    // Bias the width/height channels toward the typical object size so the
    // sigmoid starts near a plausible box. Starting at 0.5x0.5 makes the
    // cheapest descent direction "shrink everything", which drags the head
    // into predicting the dataset-marginal box before localization can win.
    double size_prior = std::log(0.2 / 0.8);
    g.head_b3.value_mut()(0, 2) = size_prior;
    g.head_b3.value_mut()(0, 3) = size_prior;
    return g;
}

void GroundingModel::collect(const std::string& prefix, NamedParams& out) const {
    for (size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    final_ln.collect(prefix + ".final_ln", out);
    out.emplace_back(prefix + ".head_w1", head_w1);
    out.emplace_back(prefix + ".head_b1", head_b1);
    out.emplace_back(prefix + ".head_w2", head_w2);
    out.emplace_back(prefix + ".head_b2", head_b2);
    out.emplace_back(prefix + ".head_w3", head_w3);
    out.emplace_back(prefix + ".head_b3", head_b3);
}

CaptioningModel CaptioningModel::init(const ModelConfig& cfg, RngStream& rng,
                                      SharedBlockRegistry& registry) {
    CaptioningModel c;
    // The region projection starts loud (4x the base gain): the box signal is
    // four numbers against 65 content tokens, and when it is quiet at init the
    // decoder settles on describing some salient object instead of the
    // requested region (attribute accuracy sticks at ~1/objects-per-scene).
    c.box_w = Tensor::randn_param(4, cfg.d, 4.0 * cfg.init_gain, rng);
    c.box_b = Tensor::zeros(1, cfg.d, true);
    for (int i = 0; i < cfg.text_layers; ++i) {
        RngStream lr = rng.substream(static_cast<uint64_t>(i));
        c.layers.push_back(TextLayer::init(cfg.d, cfg.heads, lr, cfg.init_gain,
                                           registry.bind(i, SharedBlockRegistry::Branch::Decoder)));
    }
    c.final_ln = LayerNormParams::init(cfg.d);
    c.head_w = Tensor::randn_param(cfg.d, cfg.vocab_size(), cfg.init_gain / std::sqrt(static_cast<double>(cfg.d)), rng);
    c.head_b = Tensor::zeros(1, cfg.vocab_size(), true);
    return c;
}

void CaptioningModel::collect(const std::string& prefix, NamedParams& out) const {
    out.emplace_back(prefix + ".box_w", box_w);
    out.emplace_back(prefix + ".box_b", box_b);
    for (size_t i = 0; i < layers.size(); ++i)
        layers[i].collect(prefix + ".layer" + std::to_string(i), out);
    final_ln.collect(prefix + ".final_ln", out);
    out.emplace_back(prefix + ".head_w", head_w);
    out.emplace_back(prefix + ".head_b", head_b);
}

Models::Models(const ModelConfig& c, uint64_t seed)
    : cfg(c),
      vision([&] {
          RngStream r = RngStream(seed).substream("vision");
          return VisionEncoder::init(c, r);
      }()),
      embeddings([&] {
          RngStream r = RngStream(seed).substream("embed");
          return TextEmbeddings::init(c, r);
      }()),
      registry([&] {
          RngStream r = RngStream(seed).substream("shared");
          return SharedBlockRegistry(c.text_layers, c.d, c.heads, c.d_ff, r, c.init_gain);
      }()),
      grounding([&] {
          RngStream r = RngStream(seed).substream("ground");
          return GroundingModel::init(c, r, registry);
      }()),
      captioner([&] {
          RngStream r = RngStream(seed).substream("caption");
          return CaptioningModel::init(c, r, registry);
      }()) {}

Models Models::init(const ModelConfig& cfg, uint64_t seed) { return Models(cfg, seed); }

NamedParams Models::named_parameters() const {
    NamedParams out;
    embeddings.collect("embed", out);
    vision.collect("vision", out);
    registry.collect("shared", out);
    grounding.collect("ground", out);
    captioner.collect("caption", out);
    return out;
}

std::vector<Tensor> Models::parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
}

// ---- Forward paths ---------------------------------------------------------

namespace {

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    return transpose(concat_cols({transpose(a), transpose(b)}));
}

void validate_box_tensor(const Tensor& t, const char* where) {
    if (t.rows() != 1 || t.cols() != 4)
        throw std::invalid_argument(std::string(where) + ": box tensor must be 1x4");
    const Mat& v = t.value();
    Box b{v(0, 0), v(0, 1), v(0, 2), v(0, 3)};
    if (!box_valid(b)) throw std::invalid_argument(std::string(where) + ": invalid box");
}

}  // namespace

Tensor Models::encode_image(const Image& img) const {
    int P = cfg.patch;
    auto plane_ok = [&](const Mat& m) {
        return m.rows() == cfg.image_size && m.cols() == cfg.image_size;
    };
    if (!plane_ok(img.r) || !plane_ok(img.g) || !plane_ok(img.b))
        throw std::invalid_argument("encode_image: image is not image_size x image_size x 3");
    int side = cfg.patches_per_side();
    Mat patches(side * side, P * P * 3);
    const Mat* planes[3] = {&img.r, &img.g, &img.b};
    for (int py = 0; py < side; ++py)
        for (int px = 0; px < side; ++px) {
            Eigen::Index row = py * side + px;
            for (int c = 0; c < 3; ++c) {
                // Patch pixels row-major within their plane, planes concatenated.
                for (int y = 0; y < P; ++y)
                    for (int x = 0; x < P; ++x)
                        patches(row, c * P * P + y * P + x) = (*planes[c])(py * P + y, px * P + x);
            }
        }
    Tensor tokens = affine(Tensor(std::move(patches)), vision.patch_w, vision.patch_b);
    Tensor x = add(concat_rows(vision.cls, tokens), vision.pos);
    for (const SelfLayer& l : vision.layers) x = self_attention_layer(x, l, cfg.ln_eps);
    return layer_norm(x, vision.final_ln.gain, vision.final_ln.bias, cfg.ln_eps);
}

namespace {

Tensor embed_sequence(const TextEmbeddings& e, const std::vector<int>& ids, int max_text, int d) {
    if (static_cast<int>(ids.size()) > max_text)
        throw std::invalid_argument("text sequence exceeds position table");
    Tensor emb = gather_rows(e.tok, ids);
    Tensor pos = block(e.pos, 0, 0, static_cast<Eigen::Index>(ids.size()), d);
    return add(emb, pos);
}

}  // namespace

Tensor Models::ground(const Tensor& v, const std::vector<int>& expression) const {
    if (expression.empty()) throw std::invalid_argument("ground: empty expression");
    std::vector<int> ids;
    ids.reserve(expression.size() + 1);
    ids.push_back(Vocab::kEnc);
    ids.insert(ids.end(), expression.begin(), expression.end());

    std::vector<bool> key_allowed(ids.size());
    bool any_pad = false;
    for (size_t i = 0; i < ids.size(); ++i) {
        key_allowed[i] = ids[i] != Vocab::kPad;
        any_pad |= !key_allowed[i];
    }

    Tensor x = embed_sequence(embeddings, ids, cfg.max_text, cfg.d);
    for (const TextLayer& l : grounding.layers)
        x = grounded_text_encoder_layer(x, v, l, cfg.ln_eps,
                                        any_pad ? key_allowed : std::vector<bool>{});
    x = layer_norm(x, grounding.final_ln.gain, grounding.final_ln.bias, cfg.ln_eps);

    Tensor enc = block(x, 0, 0, 1, cfg.d);
    Tensor h = relu(affine(enc, grounding.head_w1, grounding.head_b1));
    h = relu(affine(h, grounding.head_w2, grounding.head_b2));
    return sigmoid(affine(h, grounding.head_w3, grounding.head_b3));
}

Tensor Models::region_condition(const Tensor& v, const Tensor& box) const {
    validate_box_tensor(box, "region_condition");
    Tensor e_box = affine(box, captioner.box_w, captioner.box_b);
    return add_rowvec(v, e_box);
}

Tensor Models::decoder_logits(const Tensor& v_star, const std::vector<int>& input_ids) const {
    Tensor x = embed_sequence(embeddings, input_ids, cfg.max_text, cfg.d);
    for (const TextLayer& l : captioner.layers)
        x = grounded_text_decoder_layer(x, v_star, l, cfg.ln_eps);
    x = layer_norm(x, captioner.final_ln.gain, captioner.final_ln.bias, cfg.ln_eps);
    return affine(x, captioner.head_w, captioner.head_b);
}

Tensor Models::caption_nll(const Tensor& v_star, const std::vector<int>& expression) const {
    if (expression.empty()) throw std::invalid_argument("caption_nll: empty target");
    std::vector<int> targets = expression;
    targets.push_back(Vocab::kSep);
    if (static_cast<int>(targets.size()) > cfg.max_caption)
        throw std::invalid_argument("caption_nll: target longer than maximum caption length");
    std::vector<int> input;
    input.reserve(targets.size());
    input.push_back(Vocab::kDec);
    input.insert(input.end(), expression.begin(), expression.end());
    return cross_entropy_rows(decoder_logits(v_star, input), targets);
}

GenResult Models::generate(const Tensor& v, const Box& box, int beam_width,
                           bool length_normalize) const {
    if (beam_width < 1) throw std::invalid_argument("generate: beam width must be >= 1");
    if (!box_valid(box)) throw std::invalid_argument("generate: invalid box");
    NoGradScope off;
    Tensor v_star = region_condition(v, box_to_tensor(box));

    struct Hyp {
        std::vector<int> seq;  // emitted tokens, terminator excluded
        double logp = 0.0;
        bool done = false;
    };
    std::vector<Hyp> active{{}};
    std::vector<Hyp> completed;
    // A hypothesis may emit at most max_caption - 1 words so that the
    // terminator always fits within the max_caption predicted positions
    // (round-trips through caption_nll stay legal).
    const int max_words = cfg.max_caption - 1;
    const int V = cfg.vocab_size();

    struct Cand {
        double logp;
        int parent;
        int token;
    };
    for (int step = 0; step < max_words && !active.empty(); ++step) {
        std::vector<Cand> cands;
        cands.reserve(active.size() * static_cast<size_t>(V));
        for (size_t bi = 0; bi < active.size(); ++bi) {
            std::vector<int> input;
            input.reserve(active[bi].seq.size() + 1);
            input.push_back(Vocab::kDec);
            input.insert(input.end(), active[bi].seq.begin(), active[bi].seq.end());
            Tensor logits = decoder_logits(v_star, input);
            Eigen::Index last = logits.rows() - 1;
            double m = logits.value().row(last).maxCoeff();
            double lse =
                m + std::log((logits.value().row(last).array() - m).exp().sum());
            for (int t = 0; t < V; ++t) {
                // Decoder contract: structural specials are never emitted, and
                // the terminator cannot precede the first word, so every
                // caption is a non-empty word sequence.
                if (t == Vocab::kPad || t == Vocab::kEnc || t == Vocab::kDec) continue;
                if (t == Vocab::kSep && active[bi].seq.empty()) continue;
                cands.push_back({active[bi].logp + logits.value()(last, t) - lse,
                                 static_cast<int>(bi), t});
            }
        }
        std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
            if (a.logp != b.logp) return a.logp > b.logp;
            if (a.token != b.token) return a.token < b.token;
            return a.parent < b.parent;
        });
        std::vector<Hyp> next;
        for (const Cand& c : cands) {
            if (static_cast<int>(next.size() + completed.size()) >= beam_width) break;
            Hyp h = active[static_cast<size_t>(c.parent)];
            h.logp = c.logp;
            if (c.token == Vocab::kSep) {
                h.done = true;
                completed.push_back(std::move(h));
            } else {
                h.seq.push_back(c.token);
                next.push_back(std::move(h));
            }
        }
        active = std::move(next);
    }
    // Length cap reached: retire what is still active, unterminated.
    for (Hyp& h : active) completed.push_back(std::move(h));

    size_t best = 0;
    auto score = [&](const Hyp& h) {
        if (!length_normalize) return h.logp;
        size_t n = h.seq.size() + (h.done ? 1 : 0);
        return h.logp / static_cast<double>(std::max<size_t>(n, 1));
    };
    for (size_t i = 1; i < completed.size(); ++i)
        if (score(completed[i]) > score(completed[best])) best = i;

    GenResult out;
    out.tokens = completed[best].seq;
    out.logprob = completed[best].logp;
    out.terminated = completed[best].done;
    return out;
}

Box to_box(const Tensor& t) {
    if (t.rows() != 1 || t.cols() != 4)
        throw std::invalid_argument("to_box: tensor must be 1x4");
    return {t.value()(0, 0), t.value()(0, 1), t.value()(0, 2), t.value()(0, 3)};
}

Tensor box_to_tensor(const Box& b) {
    Mat m(1, 4);
    m << b.cx, b.cy, b.w, b.h;
    return Tensor(std::move(m));
}

// ---- Checkpoint I/O --------------------------------------------------------

namespace {

void put_u32(std::ostream& o, uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    o.write(reinterpret_cast<char*>(b), 4);
}

void put_u64(std::ostream& o, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    o.write(reinterpret_cast<char*>(b), 8);
}

void put_f64(std::ostream& o, double d) {
    uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(o, v);
}

uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
}

uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in) {
    uint64_t v = get_u64(in);
    double d;
    std::memcpy(&d, &v, 8);
    return d;
}

constexpr char kMagic[4] = {'G', 'C', 'P', 'K'};
constexpr uint32_t kVersion = 1;

CheckpointMeta read_header(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    uint32_t version = get_u32(in);
    if (version != kVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    CheckpointMeta meta;
    meta.config_hash = get_u64(in);
    meta.train_hash = get_u64(in);
    meta.step = get_u64(in);
    meta.seed = get_u64(in);
    return meta;
}

}  // namespace

void save_checkpoint(const std::string& path, const NamedParams& params,
                     const CheckpointMeta& meta) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("checkpoint: cannot open for writing: " + path);
    out.write(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, meta.config_hash);
    put_u64(out, meta.train_hash);
    put_u64(out, meta.step);
    put_u64(out, meta.seed);
    put_u64(out, static_cast<uint64_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(out, static_cast<uint64_t>(t.rows()));
        put_u64(out, static_cast<uint64_t>(t.cols()));
        const Mat& m = t.value();
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) put_f64(out, m(i, j));
    }
    if (!out) throw std::runtime_error("checkpoint: write failure: " + path);
}

CheckpointMeta load_checkpoint(const std::string& path, const NamedParams& params) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    CheckpointMeta meta = read_header(in);
    uint64_t count = get_u64(in);

    std::map<std::string, Mat> loaded;
    for (uint64_t k = 0; k < count; ++k) {
        uint32_t len = get_u32(in);
        std::string name(len, '\0');
        in.read(name.data(), len);
        uint64_t rows = get_u64(in);
        uint64_t cols = get_u64(in);
        Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = get_f64(in);
        if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
        if (!loaded.emplace(std::move(name), std::move(m)).second)
            throw std::runtime_error("checkpoint: duplicate tensor name");
    }

    if (loaded.size() != params.size())
        throw std::runtime_error("checkpoint: tensor count mismatch");
    for (const auto& [name, t] : params) {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
        if (it->second.rows() != t.rows() || it->second.cols() != t.cols())
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        Tensor alias = t;  // same storage
        alias.value_mut() = it->second;
    }
    return meta;
}

CheckpointMeta peek_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open: " + path);
    return read_header(in);
}

}  // namespace groundcap
