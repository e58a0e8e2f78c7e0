#include "groundcap/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "groundcap/box_loss.hpp"
#include "groundcap/cycle.hpp"
#include "groundcap/metrics.hpp"
#include "groundcap/ops.hpp"
#include "groundcap/vocab.hpp"

namespace groundcap {

namespace {

const char* kRegimeWords[] = {"sup20_only", "pseudo_label", "semi_weak_cycle",
                              "supervised_full", "supervised_full_plus_cycle"};

uint64_t fnv1a(const std::string& payload) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : payload) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace

const char* regime_word(Regime r) { return kRegimeWords[static_cast<int>(r)]; }

Regime regime_from_word(const std::string& w) {
    for (int i = 0; i < 5; ++i)
        if (w == kRegimeWords[i]) return static_cast<Regime>(i);
    throw std::invalid_argument("unknown regime '" + w + "'");
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("epochs must be positive");
    if (batch < 1) throw std::invalid_argument("batch size must be positive");
    if (peak_lr <= 0) throw std::invalid_argument("peak learning rate must be positive");
    if (warmup_steps < 1) throw std::invalid_argument("warmup_steps must be positive");
    if (weight_decay < 0) throw std::invalid_argument("weight decay must be non-negative");
    if (w_giou < 0 || w_l1 < 0 || w_nll < 0 || w_cyc_vg_ic < 0 || w_cyc_ic_vg < 0)
        throw std::invalid_argument("loss weights must be non-negative");
    if (eval_every < 0) throw std::invalid_argument("eval_every must be non-negative");
    if (eval_beam < 1) throw std::invalid_argument("eval beam must be positive");
    double s = split.full_fraction + split.box_only_fraction + split.text_only_fraction;
    if (split.full_fraction < 0 || split.box_only_fraction < 0 || split.text_only_fraction < 0 ||
        std::abs(s - 1.0) > 1e-9)
        throw std::invalid_argument("split fractions must be non-negative and sum to 1");
}

std::string TrainConfig::canonical() const {
    std::ostringstream s;
    s << "regime=" << regime_word(regime) << ";split=" << split.full_fraction << "/"
      << split.box_only_fraction << "/" << split.text_only_fraction << ";epochs=" << epochs
      << ";batch=" << batch << ";peak_lr=" << peak_lr << ";warmup=" << warmup_steps
      << ";weight_decay=" << weight_decay
      << ";w_giou=" << w_giou << ";w_l1=" << w_l1 << ";w_nll=" << w_nll
      << ";w_cyc_vg_ic=" << w_cyc_vg_ic << ";w_cyc_ic_vg=" << w_cyc_ic_vg
      << ";grad_through_box=" << (grad_through_box ? "on" : "off") << ";seed=" << seed
      << ";eval_every=" << eval_every << ";eval_beam=" << eval_beam;
    return s.str();
}

uint64_t TrainConfig::hash() const { return fnv1a(canonical() + "|train1"); }

// ---- Metrics log -----------------------------------------------------------

const char* MetricsLog::header() {
    return "step,lr,loss_total,loss_ground,loss_nll,loss_cyc_vg_ic,loss_cyc_ic_vg,"
           "acc05,bleu4,cider,attr_acc,seconds";
}

std::string MetricsLog::to_csv() const {
    std::string out = header();
    out += '\n';
    char buf[512];
    for (const MetricsRow& r : rows) {
        std::snprintf(buf, sizeof buf,
                      "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.3f\n",
                      static_cast<long long>(r.step), r.lr, r.loss_total, r.loss_ground,
                      r.loss_nll, r.loss_cyc_vg_ic, r.loss_cyc_ic_vg, r.acc05, r.bleu4, r.cider,
                      r.attr_acc, r.seconds);
        out += buf;
    }
    return out;
}

void MetricsLog::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out << to_csv();
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

// ---- Batch losses ----------------------------------------------------------

namespace {

struct ComponentAccum {
    double ground = 0, nll = 0, vg_ic = 0, ic_vg = 0;
    int n_ground = 0, n_nll = 0, n_vg_ic = 0, n_ic_vg = 0;
};

Tensor supervised_record_loss(const Models& m, const DatasetRecord& rec, const TrainConfig& cfg,
                              ComponentAccum& acc, CycleStats& stats) {
    const Vocab& vocab = Vocab::instance();
    std::vector<int> ids = vocab.encode(rec.expression());
    Tensor vis = m.encode_image(rec.image(m.cfg.image_size));
    Tensor gt = box_to_tensor(rec.box());
    Tensor ground = grounding_loss_t(m.ground(vis, ids), gt, cfg.w_giou, cfg.w_l1);
    Tensor nll = m.caption_nll(m.region_condition(vis, gt), ids);
    acc.ground += ground.item();
    ++acc.n_ground;
    acc.nll += nll.item();
    ++acc.n_nll;
    Tensor total = add(ground, scale(nll, cfg.w_nll));
    if (cfg.regime == Regime::SupervisedFullPlusCycle) {
        // Zero-weight cycle terms are skipped outright so the loss reduces to
        // the plain supervised value bit-exactly (and costs nothing extra).
        if (cfg.w_cyc_vg_ic > 0) {
            Tensor c = cycle_vg_ic_loss(m, vis, ids, cfg.grad_through_box);
            acc.vg_ic += c.item();
            ++acc.n_vg_ic;
            total = add(total, scale(c, cfg.w_cyc_vg_ic));
        }
        if (cfg.w_cyc_ic_vg > 0) {
            Tensor c = cycle_ic_vg_loss(m, vis, rec.box(), cfg.w_giou, cfg.w_l1, stats);
            acc.ic_vg += c.item();
            ++acc.n_ic_vg;
            total = add(total, scale(c, cfg.w_cyc_ic_vg));
        }
    }
    return total;
}

Tensor weak_record_loss(const Models& m, const DatasetRecord& rec, const TrainConfig& cfg,
                        ComponentAccum& acc, CycleStats& stats) {
    Tensor vis = m.encode_image(rec.image(m.cfg.image_size));
    if (rec.kind() == RecordKind::TextOnly) {
        std::vector<int> ids = Vocab::instance().encode(rec.expression());
        Tensor c = cycle_vg_ic_loss(m, vis, ids, cfg.grad_through_box);
        acc.vg_ic += c.item();
        ++acc.n_vg_ic;
        return scale(c, cfg.w_cyc_vg_ic);
    }
    Tensor c = cycle_ic_vg_loss(m, vis, rec.box(), cfg.w_giou, cfg.w_l1, stats);
    acc.ic_vg += c.item();
    ++acc.n_ic_vg;
    return scale(c, cfg.w_cyc_ic_vg);
}

BatchParts run_batch(const Models& m, const Batch& batch, const TrainConfig& cfg, bool backward,
                     bool allow_weak) {
    if (batch.empty()) throw std::invalid_argument("batch loss: empty batch");
    BatchParts parts;
    for (const DatasetRecord* r : batch) {
        if (r == nullptr) throw std::invalid_argument("batch loss: null record");
        switch (r->kind()) {
            case RecordKind::Full: ++parts.n_full; break;
            case RecordKind::BoxOnly: ++parts.n_box_only; break;
            case RecordKind::TextOnly: ++parts.n_text_only; break;
        }
        if (!allow_weak && r->kind() != RecordKind::Full)
            throw std::invalid_argument("supervised batch loss requires full records");
    }

    ComponentAccum acc;
    CycleStats stats;
    double total = 0.0;
    const double inv = 1.0 / static_cast<double>(batch.size());
    for (const DatasetRecord* r : batch) {
        auto record_loss = [&]() {
            return r->kind() == RecordKind::Full ? supervised_record_loss(m, *r, cfg, acc, stats)
                                                 : weak_record_loss(m, *r, cfg, acc, stats);
        };
        if (backward) {
            // One tape per record: gradients of mean loss accumulate as the
            // sum of per-record gradients scaled by 1/|batch|.
            Tape tape;
            TapeScope scope(tape);
            Tensor loss = record_loss();
            total += loss.item();
            tape.backward(scale(loss, inv));
        } else {
            NoGradScope ng;
            total += record_loss().item();
        }
    }
    parts.total = total * inv;
    parts.ground = acc.n_ground ? acc.ground / acc.n_ground : 0.0;
    parts.nll = acc.n_nll ? acc.nll / acc.n_nll : 0.0;
    parts.cyc_vg_ic = acc.n_vg_ic ? acc.vg_ic / acc.n_vg_ic : 0.0;
    parts.cyc_ic_vg = acc.n_ic_vg ? acc.ic_vg / acc.n_ic_vg : 0.0;
    parts.ic_vg_skipped = stats.ic_vg_skipped;
    return parts;
}

}  // namespace

BatchParts supervised_batch_loss(const Models& m, const Batch& batch, const TrainConfig& cfg,
                                 bool backward) {
    return run_batch(m, batch, cfg, backward, /*allow_weak=*/false);
}

BatchParts semi_weak_batch_loss(const Models& m, const Batch& batch, const TrainConfig& cfg,
                                bool backward) {
    return run_batch(m, batch, cfg, backward, /*allow_weak=*/true);
}

// ---- Pseudo-labeling -------------------------------------------------------

std::vector<DatasetRecord> pseudo_label(const Models& m,
                                        const std::vector<DatasetRecord>& records) {
    bool any_weak = std::any_of(records.begin(), records.end(), [](const DatasetRecord& r) {
        return r.kind() != RecordKind::Full;
    });
    if (!any_weak) throw std::invalid_argument("pseudo_label: no weak records to label");

    NoGradScope ng;
    const Vocab& vocab = Vocab::instance();
    std::vector<DatasetRecord> out;
    out.reserve(records.size());
    for (const DatasetRecord& r : records) {
        if (r.kind() == RecordKind::Full) {
            out.push_back(r);
            continue;
        }
        Tensor vis = m.encode_image(r.image(m.cfg.image_size));
        if (r.kind() == RecordKind::BoxOnly) {
            GenResult gen = m.generate(vis, r.box(), /*beam_width=*/1);
            if (gen.tokens.empty())
                throw std::runtime_error("pseudo_label: greedy caption came out empty");
            out.push_back(r.completed(vocab.decode(gen.tokens), std::nullopt));
        } else {
            Tensor pred = m.ground(vis, vocab.encode(r.expression()));
            out.push_back(r.completed(std::nullopt, to_box(pred)));
        }
    }
    return out;
}

// ---- Evaluation ------------------------------------------------------------

EvalReport evaluate(const Models& m, const std::vector<DatasetRecord>& testset, int beam) {
    if (testset.size() < 2)
        throw std::invalid_argument("evaluate: need at least 2 records (CIDEr idf)");
    if (beam < 1) throw std::invalid_argument("evaluate: beam must be >= 1");
    for (const DatasetRecord& r : testset)
        if (r.kind() != RecordKind::Full)
            throw std::invalid_argument("evaluate: test records must be fully annotated");

    NoGradScope ng;
    const Vocab& vocab = Vocab::instance();
    std::vector<std::pair<Box, Box>> boxes;
    std::vector<TokenSeq> candidates;
    std::vector<std::vector<TokenSeq>> references;
    std::vector<std::pair<int, int>> attrs;
    double nll_sum = 0.0;
    for (const DatasetRecord& r : testset) {
        std::vector<int> ids = vocab.encode(r.expression());
        Tensor vis = m.encode_image(r.image(m.cfg.image_size));
        boxes.emplace_back(to_box(m.ground(vis, ids)), r.box());
        GenResult gen = m.generate(vis, r.box(), beam);
        candidates.push_back(gen.tokens);
        references.push_back({ids});
        attrs.emplace_back(vocab.id(color_word(r.target_color())),
                           vocab.id(shape_word(r.target_shape())));
        nll_sum += m.caption_nll(m.region_condition(vis, box_to_tensor(r.box())), ids).item();
    }
    EvalReport rep;
    rep.n = static_cast<int>(testset.size());
    rep.acc05 = top1_accuracy(boxes);
    rep.bleu4 = corpus_bleu4(candidates, references);
    rep.cider = cider(candidates, references);
    rep.attr_acc = attribute_accuracy(candidates, attrs);
    rep.mean_nll = nll_sum / static_cast<double>(rep.n);
    return rep;
}

// ---- Training loop ---------------------------------------------------------

namespace {

/// Endless shuffled-epoch batch source over a record set. Epoch permutations
/// come from per-epoch sub-streams of one rng, so the order is a pure
/// function of (seed, epoch index) and survives phase switches.
class BatchSource {
public:
    BatchSource(const std::vector<DatasetRecord>* source, int batch, RngStream order_rng)
        : source_(source), batch_(batch), order_rng_(order_rng) {}

    void reset(const std::vector<DatasetRecord>* source) {
        source_ = source;
        perm_.clear();
        cursor_ = 0;
    }

    Batch next() {
        Batch b;
        while (static_cast<int>(b.size()) < batch_) {
            if (cursor_ >= perm_.size()) {
                if (!b.empty()) break;  // partial batch closes the epoch
                perm_.resize(source_->size());
                std::iota(perm_.begin(), perm_.end(), size_t{0});
                RngStream r = order_rng_.substream(static_cast<uint64_t>(epoch_++));
                r.shuffle(perm_);
                cursor_ = 0;
            }
            b.push_back(&(*source_)[perm_[cursor_++]]);
        }
        return b;
    }

private:
    const std::vector<DatasetRecord>* source_;
    int batch_;
    RngStream order_rng_;
    std::vector<size_t> perm_;
    size_t cursor_ = 0;
    int64_t epoch_ = 0;
};

}  // namespace

TrainResult train(Models& models, const TrainConfig& cfg,
                  const std::vector<DatasetRecord>& train_records,
                  const std::vector<DatasetRecord>& eval_records,
                  const std::string& checkpoint_path, std::ostream* progress) {
    cfg.validate();
    if (train_records.empty()) throw std::invalid_argument("train: empty training set");
    for (const DatasetRecord& r : train_records)
        if (r.kind() != RecordKind::Full)
            throw std::invalid_argument("train: source dataset must be fully annotated");

    RngStream root(cfg.seed);

    // Regime data. The split depends only on the seed, so at a fixed seed all
    // regimes agree on which records form the 20% slice.
    std::vector<DatasetRecord> mixed;
    std::vector<DatasetRecord> slice;
    std::vector<DatasetRecord> labeled;  // PseudoLabel phase B source
    const std::vector<DatasetRecord>* source = &train_records;
    bool needs_split = cfg.regime == Regime::Sup20Only || cfg.regime == Regime::PseudoLabel ||
                       cfg.regime == Regime::SemiWeakCycle;
    if (needs_split) {
        RngStream split_rng = root.substream("semiweak_split");
        mixed = split_semi_weak(train_records, cfg.split, split_rng);
        if (cfg.regime == Regime::SemiWeakCycle) {
            source = &mixed;
            bool any_weak = std::any_of(mixed.begin(), mixed.end(), [](const DatasetRecord& r) {
                return r.kind() != RecordKind::Full;
            });
            if (!any_weak && progress)
                *progress << "note: semi_weak_cycle on an all-full dataset; "
                             "every batch reduces to the supervised loss\n";
        } else {
            for (const DatasetRecord& r : mixed)
                if (r.kind() == RecordKind::Full) slice.push_back(r);
            if (slice.empty())
                throw std::invalid_argument(
                    "regime needs a non-empty fully-annotated slice; the split assigns none");
            source = &slice;
        }
    }

    // Equal compute across regimes: every run takes epochs * ceil(N/batch)
    // optimizer steps with N the size of the underlying training set.
    const int64_t steps_per_epoch =
        (static_cast<int64_t>(train_records.size()) + cfg.batch - 1) / cfg.batch;
    const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * steps_per_epoch;
    const int64_t eval_every = cfg.eval_every > 0 ? cfg.eval_every : steps_per_epoch;
    const int64_t phase_a_end = cfg.regime == Regime::PseudoLabel ? total_steps / 2 : 0;

    LrSchedule schedule{cfg.peak_lr, cfg.warmup_steps, total_steps};
    AdamWConfig opt_cfg;
    opt_cfg.weight_decay = cfg.weight_decay;
    AdamW opt(models.parameters(), opt_cfg);
    BatchSource batches(source, cfg.batch, root.substream("order"));

    TrainResult result;
    auto t0 = std::chrono::steady_clock::now();
    double sum_total = 0, sum_ground = 0, sum_nll = 0, sum_vg_ic = 0, sum_ic_vg = 0;
    int64_t since_eval = 0;
    std::vector<double> step_losses;
    step_losses.reserve(static_cast<size_t>(total_steps));

    for (int64_t step = 1; step <= total_steps; ++step) {
        if (cfg.regime == Regime::PseudoLabel && step == phase_a_end + 1 && phase_a_end > 0) {
            labeled = pseudo_label(models, mixed);
            batches.reset(&labeled);
            source = &labeled;
            if (progress)
                *progress << "pseudo_label: completed " << labeled.size() - slice.size()
                          << " weak records at step " << step - 1 << "\n";
        }

        double lr = lr_at(step, schedule);
        Batch batch = batches.next();
        opt.zero_grad();
        BatchParts parts = cfg.regime == Regime::SemiWeakCycle
                               ? semi_weak_batch_loss(models, batch, cfg, /*backward=*/true)
                               : supervised_batch_loss(models, batch, cfg, /*backward=*/true);
        opt.step(lr);

        step_losses.push_back(parts.total);
        sum_total += parts.total;
        sum_ground += parts.ground;
        sum_nll += parts.nll;
        sum_vg_ic += parts.cyc_vg_ic;
        sum_ic_vg += parts.cyc_ic_vg;
        ++since_eval;

        if (step % eval_every == 0 || step == total_steps) {
            EvalReport er = evaluate(models, eval_records, cfg.eval_beam);
            MetricsRow row;
            row.step = step;
            row.lr = lr;
            row.loss_total = sum_total / static_cast<double>(since_eval);
            row.loss_ground = sum_ground / static_cast<double>(since_eval);
            row.loss_nll = sum_nll / static_cast<double>(since_eval);
            row.loss_cyc_vg_ic = sum_vg_ic / static_cast<double>(since_eval);
            row.loss_cyc_ic_vg = sum_ic_vg / static_cast<double>(since_eval);
            row.acc05 = er.acc05;
            row.bleu4 = er.bleu4;
            row.cider = er.cider;
            row.attr_acc = er.attr_acc;
            row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            result.log.rows.push_back(row);
            result.final_eval = er;
            sum_total = sum_ground = sum_nll = sum_vg_ic = sum_ic_vg = 0;
            since_eval = 0;
            if (progress)
                *progress << "step " << step << "/" << total_steps << " loss "
                          << row.loss_total << " acc05 " << er.acc05 << " bleu4 " << er.bleu4
                          << "\n";
        }
    }

    size_t win = std::min<size_t>(50, step_losses.size());
    if (win > 0) {
        double first = 0.0, last = 0.0;
        for (size_t i = 0; i < win; ++i) {
            first += step_losses[i];
            last += step_losses[step_losses.size() - win + i];
        }
        result.loss_ma_first = first / static_cast<double>(win);
        result.loss_ma_last = last / static_cast<double>(win);
    }

    // Realized kind mix of the final training source.
    int n_full = 0, n_box = 0, n_text = 0;
    for (const DatasetRecord& r : *source) {
        if (r.kind() == RecordKind::Full) ++n_full;
        else if (r.kind() == RecordKind::BoxOnly) ++n_box;
        else ++n_text;
    }
    double denom = static_cast<double>(source->size());
    result.full_ratio = n_full / denom;
    result.box_only_ratio = n_box / denom;
    result.text_only_ratio = n_text / denom;
    if (progress)
        *progress << "kind mix of training source: full=" << result.full_ratio
                  << " box_only=" << result.box_only_ratio
                  << " text_only=" << result.text_only_ratio << "\n";

    result.meta = CheckpointMeta{models.cfg.hash(), cfg.hash(),
                                 static_cast<uint64_t>(total_steps), cfg.seed};
    if (!checkpoint_path.empty())
        save_checkpoint(checkpoint_path, models.named_parameters(), result.meta);
    return result;
}

}  // namespace groundcap
