#pragma once

#include <vector>

#include "mimea/tensor.hpp"

namespace mimea {

// Ranking metrics for entity alignment. Queries are ranked against every
// candidate by cosine similarity, descending, ties broken by candidate index.
struct RankingResult {
  std::vector<int> ranks;  // 1-based rank of the true counterpart per query
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits10 = 0.0;
};

// truth[i] is the candidate row holding query i's counterpart.
RankingResult rank_alignments(const Tensor& query_emb, const Tensor& candidate_emb,
                              const std::vector<int>& truth);

// Recomputes the aggregates from a rank list (used after merging directions).
RankingResult from_ranks(std::vector<int> ranks);

}  // namespace mimea
