#pragma once

#include <utility>
#include <vector>

#include "groundcap/geometry.hpp"

namespace groundcap {

using TokenSeq = std::vector<int>;

/// Corpus-level BLEU@4: clipped n-gram precisions pooled over the whole
/// corpus, geometric mean over n = 1..4, brevity penalty exp(1 - r/c) when
/// the candidate corpus is shorter than the effective reference length r
/// (closest reference length per sentence, ties resolved to the shorter).
/// Zero if any n-gram order has no clipped matches anywhere in the corpus.
/// `references[i]` lists the reference captions for candidate i.
double corpus_bleu4(const std::vector<TokenSeq>& candidates,
                    const std::vector<std::vector<TokenSeq>>& references);

/// Single-pair BLEU@4 with add-one smoothing on orders 2..4 (a diagnostic;
/// the reported metric is the corpus score above).
double sentence_bleu4_smoothed(const TokenSeq& candidate, const TokenSeq& reference);

/// Consensus captioning score: mean over n = 1..4 of the cosine similarity
/// between tf-idf n-gram vectors of candidate and reference (averaged over
/// references), scaled by 10. idf of gram g is log(N) - log(max(df_g, 1))
/// with df counted over the N reference sets; similarity is 0 whenever
/// either vector has zero norm. Requires N >= 2 so the idf is defined.
double cider(const std::vector<TokenSeq>& candidates,
             const std::vector<std::vector<TokenSeq>>& references);

/// Fraction of pairs with IoU(pred, gt) >= 0.5; the boundary counts as a hit.
double top1_accuracy(const std::vector<std::pair<Box, Box>>& pred_gt);

/// Fraction of captions containing both the target color token and the
/// target shape token (in any position).
double attribute_accuracy(const std::vector<TokenSeq>& captions,
                          const std::vector<std::pair<int, int>>& color_shape);

}  // namespace groundcap
