#include "groundcap/gradcheck.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

#include "groundcap/box_loss.hpp"
#include "groundcap/cycle.hpp"
#include "groundcap/model.hpp"
#include "groundcap/ops.hpp"
#include "groundcap/shapesworld.hpp"

namespace groundcap {

double GradCheckReport::worst() const {
    double w = 0.0;
    for (const GradCheckEntry& e : entries) w = std::max(w, e.max_rel_err);
    return w;
}

const GradCheckEntry* GradCheckReport::worst_entry() const {
    const GradCheckEntry* w = nullptr;
    for (const GradCheckEntry& e : entries)
        if (w == nullptr || e.max_rel_err > w->max_rel_err) w = &e;
    return w;
}

bool GradCheckReport::passed(double tol) const {
    if (entries.empty()) return false;
    return worst() <= tol;
}

namespace {

constexpr double kStep = 1e-5;       // central-difference half step
constexpr double kRelFloor = 1e-6;   // absolute floor in the relative error

/// Compares the taped gradient of fn() against central differences over every
/// element of every leaf. fn must rebuild its graph from the leaves' current
/// values on each call.
GradCheckEntry check_fn(const std::string& name, std::vector<Tensor> leaves,
                        const std::function<Tensor()>& fn) {
    GradCheckEntry entry;
    entry.name = name;

    Tape tape;
    std::vector<Mat> ad;
    {
        TapeScope scope(tape);
        for (Tensor& l : leaves) l.zero_grad();
        Tensor y = fn();
        tape.backward(y);
        for (const Tensor& l : leaves)
            ad.push_back(l.has_grad() ? l.grad() : Mat(Mat::Zero(l.rows(), l.cols())));
    }

    NoGradScope ng;
    for (size_t k = 0; k < leaves.size(); ++k) {
        Mat& v = leaves[k].value_mut();
        for (Eigen::Index i = 0; i < v.rows(); ++i)
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                double saved = v(i, j);
                v(i, j) = saved + kStep;
                double hi = fn().item();
                v(i, j) = saved - kStep;
                double lo = fn().item();
                v(i, j) = saved;
                double fd = (hi - lo) / (2.0 * kStep);
                double a = ad[k](i, j);
                double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), kRelFloor});
                entry.max_rel_err = std::max(entry.max_rel_err, rel);
                ++entry.elements;
            }
    }
    return entry;
}

Tensor rand_leaf(Eigen::Index rows, Eigen::Index cols, RngStream& rng, double lo = -1.5,
                 double hi = 1.5) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(lo, hi);
    Tensor t(std::move(m));
    t.set_requires_grad(true);
    return t;
}

/// Fixed random mixing constant so the scalarized objective has a distinct
/// weight per output element (a plain sum would hide sign errors that cancel).
Tensor rand_const(Eigen::Index rows, Eigen::Index cols, RngStream& rng) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.uniform(-1.0, 1.0);
    return Tensor(std::move(m));
}

/// Moves every element at least `margin` away from the nearest point in
/// `kinks` so central differences never straddle a non-smooth point.
void avoid_kinks(Tensor& t, const std::vector<double>& kinks, double margin) {
    Mat& v = t.value_mut();
    for (Eigen::Index i = 0; i < v.rows(); ++i)
        for (Eigen::Index j = 0; j < v.cols(); ++j)
            for (double kink : kinks) {
                double d = v(i, j) - kink;
                if (std::abs(d) < margin) v(i, j) = kink + (d >= 0 ? margin : -margin);
            }
}

void check_primitives(GradCheckReport& rep, RngStream& rng) {
    auto scalarized = [&](const std::string& name, std::vector<Tensor> leaves,
                          const std::function<Tensor()>& make) {
        // Build once to learn the output shape, then mix with fixed weights.
        Tensor probe;
        {
            NoGradScope ng;
            probe = make();
        }
        Tensor w = rand_const(probe.rows(), probe.cols(), rng);
        rep.entries.push_back(
            check_fn(name, std::move(leaves), [make, w]() { return sum(mul(make(), w)); }));
    };

    {
        Tensor a = rand_leaf(3, 4, rng), b = rand_leaf(3, 4, rng);
        scalarized("primitive/add", {a, b}, [=] { return add(a, b); });
    }
    {
        Tensor a = rand_leaf(3, 4, rng), b = rand_leaf(3, 4, rng);
        scalarized("primitive/sub", {a, b}, [=] { return sub(a, b); });
    }
    {
        Tensor a = rand_leaf(3, 4, rng), b = rand_leaf(3, 4, rng);
        scalarized("primitive/mul", {a, b}, [=] { return mul(a, b); });
    }
    {
        Tensor a = rand_leaf(3, 4, rng);
        Tensor b = rand_leaf(3, 4, rng, 0.5, 2.0);  // denominator away from zero
        scalarized("primitive/div", {a, b}, [=] { return div(a, b); });
    }
    {
        // Ties route the whole gradient to one side; keep the operands apart
        // so the differencing never crosses the tie.
        Tensor a = rand_leaf(3, 4, rng), b = rand_leaf(3, 4, rng);
        Mat& bv = b.value_mut();
        const Mat& av = a.value();
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 4; ++j)
                if (std::abs(bv(i, j) - av(i, j)) < 1e-3)
                    bv(i, j) = av(i, j) + (bv(i, j) >= av(i, j) ? 1e-3 : -1e-3);
        Tensor a2 = a, b2 = b;
        scalarized("primitive/minimum", {a, b}, [=] { return minimum(a, b); });
        scalarized("primitive/maximum", {a2, b2}, [=] { return maximum(a2, b2); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        avoid_kinks(x, {0.0}, 1e-3);
        scalarized("primitive/relu", {x}, [=] { return relu(x); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        scalarized("primitive/sigmoid", {x}, [=] { return sigmoid(x); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        scalarized("primitive/exp", {x}, [=] { return exp(x); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng, 0.2, 3.0);
        scalarized("primitive/log", {x}, [=] { return log(x); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng, -2.0, 2.0);
        avoid_kinks(x, {-1.0, 1.0}, 1e-3);  // kernel switches branch at |d| = 1
        scalarized("primitive/smooth_l1_kernel", {x}, [=] { return smooth_l1_kernel(x); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        scalarized("primitive/scale", {x}, [=] { return scale(x, -1.7); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        scalarized("primitive/add_const", {x}, [=] { return add_const(x, 0.37); });
    }
    {
        Tensor a = rand_leaf(3, 4, rng), b = rand_leaf(4, 2, rng);
        scalarized("primitive/matmul", {a, b}, [=] { return matmul(a, b); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        scalarized("primitive/transpose", {x}, [=] { return transpose(x); });
    }
    {
        Tensor x = rand_leaf(4, 5, rng);
        scalarized("primitive/block", {x}, [=] { return block(x, 1, 2, 2, 3); });
    }
    {
        Tensor a = rand_leaf(3, 2, rng), b = rand_leaf(3, 3, rng), c = rand_leaf(3, 1, rng);
        scalarized("primitive/concat_cols", {a, b, c},
                   [=] { return concat_cols({a, b, c}); });
    }
    {
        Tensor x = rand_leaf(4, 5, rng), row = rand_leaf(1, 5, rng);
        scalarized("primitive/add_rowvec", {x, row}, [=] { return add_rowvec(x, row); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        Tensor x2 = x;
        scalarized("primitive/softmax_rows", {x}, [=] { return softmax(x, 1); });
        scalarized("primitive/softmax_cols", {x2}, [=] { return softmax(x2, 0); });
    }
    {
        Tensor s = rand_leaf(3, 5, rng);
        BoolMat allowed(3, 5);
        allowed.setConstant(true);
        allowed(0, 1) = allowed(0, 4) = allowed(1, 0) = allowed(2, 2) = allowed(2, 3) = false;
        scalarized("primitive/masked_softmax_rows", {s},
                   [=] { return masked_softmax_rows(s, allowed); });
    }
    {
        Tensor x = rand_leaf(3, 8, rng);
        Tensor gain = rand_leaf(1, 8, rng, 0.5, 1.5);
        Tensor bias = rand_leaf(1, 8, rng, -0.5, 0.5);
        scalarized("primitive/layer_norm", {x, gain, bias},
                   [=] { return layer_norm(x, gain, bias, 1e-5); });
    }
    {
        Tensor x = rand_leaf(3, 4, rng);
        Tensor x2 = x;
        rep.entries.push_back(check_fn("primitive/sum", {x}, [=] { return sum(x); }));
        rep.entries.push_back(check_fn("primitive/mean", {x2}, [=] { return mean(x2); }));
    }
    {
        Tensor table = rand_leaf(6, 4, rng);
        std::vector<int> ids = {0, 3, 3, 5};  // the repeat exercises scatter-add
        scalarized("primitive/gather_rows", {table}, [=] { return gather_rows(table, ids); });
    }
    {
        Tensor logits = rand_leaf(4, 7, rng);
        std::vector<int> targets = {1, 0, 6, 3};
        rep.entries.push_back(check_fn("primitive/cross_entropy_rows", {logits}, [=] {
            return cross_entropy_rows(logits, targets);
        }));
    }
    {
        Tensor x = rand_leaf(3, 4, rng), w = rand_leaf(4, 2, rng), b = rand_leaf(1, 2, rng);
        scalarized("primitive/affine", {x, w, b}, [=] { return affine(x, w, b); });
    }
}

ModelConfig miniature_config() {
    ModelConfig cfg;
    cfg.image_size = 8;
    cfg.patch = 4;
    cfg.d = 8;
    cfg.heads = 2;
    cfg.d_ff = 16;
    cfg.vision_layers = 1;
    cfg.text_layers = 1;
    cfg.max_caption = 12;
    cfg.max_text = 16;
    cfg.init_gain = 1.0;
    return cfg;
}

void check_losses(GradCheckReport& rep, uint64_t seed) {
    ModelConfig mcfg = miniature_config();
    Models m = Models::init(mcfg, seed);
    std::vector<Tensor> params = m.parameters();

    // A deterministic fully-annotated record provides the image, the
    // expression, and the ground-truth box. The ic->vg check needs a record
    // whose untrained greedy caption is non-degenerate, so probe a few.
    DatasetBundle data = build_dataset(8, 0, seed);
    size_t pick = data.train.size();
    {
        NoGradScope ng;
        for (size_t i = 0; i < data.train.size(); ++i) {
            const DatasetRecord& r = data.train[i];
            GenResult g = m.generate(m.encode_image(r.image(mcfg.image_size)), r.box(), 1);
            if (!g.tokens.empty()) {
                pick = i;
                break;
            }
        }
    }
    if (pick == data.train.size())
        throw std::runtime_error("gradcheck: every probe caption degenerate; change the seed");
    const DatasetRecord& rec = data.train[pick];
    const Image img = rec.image(mcfg.image_size);
    const std::vector<int> ids = Vocab::instance().encode(rec.expression());
    const Box gt = rec.box();
    const Tensor gt_t = box_to_tensor(gt);

    rep.entries.push_back(check_fn("loss/grounding", params, [&] {
        return grounding_loss_t(m.ground(m.encode_image(img), ids), gt_t, 1.0, 1.0);
    }));
    rep.entries.push_back(check_fn("loss/caption_nll", params, [&] {
        return m.caption_nll(m.region_condition(m.encode_image(img), gt_t), ids);
    }));
    rep.entries.push_back(check_fn("loss/cycle_vg_ic(grad_through_box=on)", params, [&] {
        return cycle_vg_ic_loss(m, m.encode_image(img), ids, /*grad_through_box=*/true);
    }));

    // With gradients cut at the box, the loss treats the predicted box as a
    // constant, so the differencing must hold it at its base value too.
    {
        Tensor b_frozen;
        {
            NoGradScope ng;
            b_frozen = m.ground(m.encode_image(img), ids).detach();
        }
        rep.entries.push_back(check_fn("loss/cycle_vg_ic(grad_through_box=off)", params, [&] {
            Tape* t = active_tape();
            if (t != nullptr)
                return cycle_vg_ic_loss(m, m.encode_image(img), ids, /*grad_through_box=*/false);
            return m.caption_nll(m.region_condition(m.encode_image(img), b_frozen), ids);
        }));
    }

    // The caption in the ic->vg cycle comes from discrete decoding and is a
    // constant of the differentiation: decode once, differentiate the smooth
    // remainder. The taped gradient still comes from the real composition.
    {
        GenResult gen;
        {
            NoGradScope ng;
            gen = m.generate(m.encode_image(img), gt, /*beam_width=*/1);
        }
        if (gen.tokens.empty())
            throw std::runtime_error("gradcheck: degenerate greedy caption; change the seed");
        std::vector<int> cap = gen.tokens;
        CycleStats stats;
        rep.entries.push_back(check_fn("loss/cycle_ic_vg", params, [&, cap] {
            Tape* t = active_tape();
            if (t != nullptr) {
                Tensor loss = cycle_ic_vg_loss(m, m.encode_image(img), gt, 1.0, 1.0, stats);
                if (stats.ic_vg_evaluated == 0)
                    throw std::runtime_error("gradcheck: ic->vg cycle skipped; change the seed");
                return loss;
            }
            return grounding_loss_t(m.ground(m.encode_image(img), cap), gt_t, 1.0, 1.0);
        }));
    }
}

}  // namespace

GradCheckReport run_gradcheck(uint64_t seed) {
    GradCheckReport rep;
    RngStream rng(seed);
    check_primitives(rep, rng);
    check_losses(rep, seed);
    return rep;
}

}  // namespace groundcap
