#include "groundcap/metrics.hpp"

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>

namespace groundcap {

namespace {

using GramCounts = std::unordered_map<uint64_t, long>;

/// Tokens are small non-negative ids, so an n-gram of order <= 4 packs into
/// 16 bits per position (offset by one to distinguish lengths).
GramCounts count_ngrams(const TokenSeq& s, int n) {
    GramCounts out;
    if (static_cast<int>(s.size()) < n) return out;
    for (size_t i = 0; i + static_cast<size_t>(n) <= s.size(); ++i) {
        uint64_t key = 0;
        for (int j = 0; j < n; ++j) {
            int t = s[i + static_cast<size_t>(j)];
            if (t < 0 || t > 0xfffe) throw std::invalid_argument("n-gram token out of range");
            key |= (static_cast<uint64_t>(t) + 1) << (16 * j);
        }
        ++out[key];
    }
    return out;
}

void check_corpus(const std::vector<TokenSeq>& candidates,
                  const std::vector<std::vector<TokenSeq>>& references, const char* what) {
    if (candidates.empty())
        throw std::invalid_argument(std::string(what) + ": empty corpus");
    if (candidates.size() != references.size())
        throw std::invalid_argument(std::string(what) + ": candidate/reference count mismatch");
    for (const auto& refs : references)
        if (refs.empty())
            throw std::invalid_argument(std::string(what) + ": sample without references");
}

}  // namespace

double corpus_bleu4(const std::vector<TokenSeq>& candidates,
                    const std::vector<std::vector<TokenSeq>>& references) {
    check_corpus(candidates, references, "corpus_bleu4");
    long clipped[4] = {0, 0, 0, 0};
    long total[4] = {0, 0, 0, 0};
    long cand_len = 0;
    long ref_len = 0;
    for (size_t i = 0; i < candidates.size(); ++i) {
        const TokenSeq& c = candidates[i];
        cand_len += static_cast<long>(c.size());
        // Effective reference length: closest to the candidate, shorter wins ties.
        long best = -1;
        for (const TokenSeq& r : references[i]) {
            long len = static_cast<long>(r.size());
            if (best < 0 || std::abs(len - static_cast<long>(c.size())) <
                                std::abs(best - static_cast<long>(c.size())) ||
                (std::abs(len - static_cast<long>(c.size())) ==
                     std::abs(best - static_cast<long>(c.size())) &&
                 len < best))
                best = len;
        }
        ref_len += best;
        for (int n = 1; n <= 4; ++n) {
            GramCounts cg = count_ngrams(c, n);
            GramCounts max_ref;
            for (const TokenSeq& r : references[i])
                for (auto& [g, cnt] : count_ngrams(r, n)) {
                    long& slot = max_ref[g];
                    if (cnt > slot) slot = cnt;
                }
            for (auto& [g, cnt] : cg) {
                total[n - 1] += cnt;
                auto it = max_ref.find(g);
                if (it != max_ref.end()) clipped[n - 1] += std::min(cnt, it->second);
            }
        }
    }
    double log_prec = 0.0;
    for (int n = 0; n < 4; ++n) {
        if (clipped[n] == 0 || total[n] == 0) return 0.0;
        log_prec += std::log(static_cast<double>(clipped[n]) / static_cast<double>(total[n]));
    }
    double bp = cand_len < ref_len
                    ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(cand_len))
                    : 1.0;
    return bp * std::exp(log_prec / 4.0);
}

double sentence_bleu4_smoothed(const TokenSeq& candidate, const TokenSeq& reference) {
    if (candidate.empty() || reference.empty()) return 0.0;
    double log_prec = 0.0;
    for (int n = 1; n <= 4; ++n) {
        GramCounts cg = count_ngrams(candidate, n);
        GramCounts rg = count_ngrams(reference, n);
        long clipped = 0, total = 0;
        for (auto& [g, cnt] : cg) {
            total += cnt;
            auto it = rg.find(g);
            if (it != rg.end()) clipped += std::min(cnt, it->second);
        }
        double num = static_cast<double>(clipped);
        double den = static_cast<double>(total);
        if (n > 1) {  // add-one smoothing keeps short hypotheses comparable
            num += 1.0;
            den += 1.0;
        }
        if (den == 0.0 || num == 0.0) return 0.0;
        log_prec += std::log(num / den);
    }
    long c = static_cast<long>(candidate.size());
    long r = static_cast<long>(reference.size());
    double bp = c < r ? std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)) : 1.0;
    return bp * std::exp(log_prec / 4.0);
}

double cider(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references) {
    check_corpus(candidates, references, "cider");
    size_t N = candidates.size();
    if (N < 2) throw std::invalid_argument("cider: needs at least 2 samples for the idf");

    // Document frequency over reference sets, per n-gram order.
    std::unordered_map<uint64_t, long> df[4];
    for (const auto& refs : references) {
        for (int n = 1; n <= 4; ++n) {
            GramCounts seen;
            for (const TokenSeq& r : refs)
                for (auto& [g, cnt] : count_ngrams(r, n)) seen[g] = 1;
            for (auto& [g, one] : seen) ++df[n - 1][g];
        }
    }
    double log_n = std::log(static_cast<double>(N));
    auto idf = [&](int n, uint64_t g) {
        auto it = df[n - 1].find(g);
        long d = it == df[n - 1].end() ? 0 : it->second;
        return log_n - std::log(static_cast<double>(std::max(d, 1L)));
    };

    double score_sum = 0.0;
    for (size_t i = 0; i < N; ++i) {
        double per_n_sum = 0.0;
        for (int n = 1; n <= 4; ++n) {
            GramCounts cg = count_ngrams(candidates[i], n);
            double c_norm2 = 0.0;
            for (auto& [g, cnt] : cg) {
                double w = cnt * idf(n, g);
                c_norm2 += w * w;
            }
            double sim_sum = 0.0;
            for (const TokenSeq& r : references[i]) {
                GramCounts rg = count_ngrams(r, n);
                double r_norm2 = 0.0, dot = 0.0;
                for (auto& [g, cnt] : rg) {
                    double w = cnt * idf(n, g);
                    r_norm2 += w * w;
                    auto it = cg.find(g);
                    if (it != cg.end()) dot += w * (it->second * idf(n, g));
                }
                if (c_norm2 > 0.0 && r_norm2 > 0.0)
                    sim_sum += dot / std::sqrt(c_norm2 * r_norm2);
            }
            per_n_sum += sim_sum / static_cast<double>(references[i].size());
        }
        score_sum += 10.0 * per_n_sum / 4.0;
    }
    return score_sum / static_cast<double>(N);
}

double top1_accuracy(const std::vector<std::pair<Box, Box>>& pred_gt) {
    if (pred_gt.empty()) throw std::invalid_argument("top1_accuracy: empty list");
    long hits = 0;
    for (const auto& [pred, gt] : pred_gt)
        if (iou(pred, gt) >= 0.5) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred_gt.size());
}

double attribute_accuracy(const std::vector<TokenSeq>& captions,
                          const std::vector<std::pair<int, int>>& color_shape) {
    if (captions.empty()) throw std::invalid_argument("attribute_accuracy: empty list");
    if (captions.size() != color_shape.size())
        throw std::invalid_argument("attribute_accuracy: size mismatch");
    long hits = 0;
    for (size_t i = 0; i < captions.size(); ++i) {
        bool has_color = false, has_shape = false;
        for (int t : captions[i]) {
            has_color |= t == color_shape[i].first;
            has_shape |= t == color_shape[i].second;
        }
        hits += has_color && has_shape;
    }
    return static_cast<double>(hits) / static_cast<double>(captions.size());
}

}  // namespace groundcap
