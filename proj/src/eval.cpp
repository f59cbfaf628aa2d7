#include "mimea/eval.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace mimea {

namespace {

std::vector<double> row_units(const Tensor& t) {
  std::vector<double> out(t.values());
  for (int i = 0; i < t.rows(); ++i) {
    double sq = 0.0;
    for (int j = 0; j < t.cols(); ++j) sq += t.at(i, j) * t.at(i, j);
    const double nr = std::sqrt(sq);
    if (nr > 0.0) {
      for (int j = 0; j < t.cols(); ++j) out[static_cast<std::size_t>(i) * t.cols() + j] /= nr;
    }
  }
  return out;
}

}  // namespace

RankingResult rank_alignments(const Tensor& query_emb, const Tensor& candidate_emb,
                              const std::vector<int>& truth) {
  if (query_emb.cols() != candidate_emb.cols()) {
    throw std::invalid_argument("rank_alignments: embedding widths differ, " +
                                query_emb.shape_str() + " vs " + candidate_emb.shape_str());
  }
  if (static_cast<int>(truth.size()) != query_emb.rows()) {
    throw std::invalid_argument("rank_alignments: need one truth index per query row");
  }
  const int nq = query_emb.rows();
  const int nc = candidate_emb.rows();
  const int d = query_emb.cols();
  for (int i = 0; i < nq; ++i) {
    if (truth[i] < 0 || truth[i] >= nc) {
      throw std::invalid_argument("rank_alignments: truth index " + std::to_string(truth[i]) +
                                  " for query " + std::to_string(i) + " is out of range");
    }
  }
  const std::vector<double> q = row_units(query_emb);
  const std::vector<double> c = row_units(candidate_emb);

  std::vector<int> ranks(nq);
  for (int i = 0; i < nq; ++i) {
    std::vector<double> sim(nc, 0.0);
    for (int j = 0; j < nc; ++j) {
      double s = 0.0;
      for (int k = 0; k < d; ++k) {
        s += q[static_cast<std::size_t>(i) * d + k] * c[static_cast<std::size_t>(j) * d + k];
      }
      sim[j] = s;
    }
    const int t = truth[i];
    int rank = 1;
    for (int j = 0; j < nc; ++j) {
      if (sim[j] > sim[t] || (sim[j] == sim[t] && j < t)) ++rank;
    }
    ranks[i] = rank;
  }
  return from_ranks(std::move(ranks));
}

RankingResult from_ranks(std::vector<int> ranks) {
  RankingResult out;
  out.ranks = std::move(ranks);
  if (out.ranks.empty()) return out;
  double inv = 0.0;
  int h1 = 0;
  int h10 = 0;
  for (int r : out.ranks) {
    if (r < 1) throw std::invalid_argument("from_ranks: ranks are 1-based");
    inv += 1.0 / r;
    if (r <= 1) ++h1;
    if (r <= 10) ++h10;
  }
  const double n = static_cast<double>(out.ranks.size());
  out.mrr = inv / n;
  out.hits1 = h1 / n;
  out.hits10 = h10 / n;
  return out;
}

}  // namespace mimea
