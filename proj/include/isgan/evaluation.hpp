#pragma once

#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "isgan/dataset.hpp"
#include "isgan/model.hpp"

namespace isgan::eval {

struct RetrievalSet {
  torch::Tensor query;    // [N_q, D]
  torch::Tensor gallery;  // [N_g, D]
  std::vector<int> query_ids, gallery_ids;
  std::vector<int> query_cams, gallery_cams;
};

struct EvalResult {
  std::vector<double> cmc;  // cmc[k - 1] = rank-k accuracy
  double map = 0.0;
  std::vector<double> average_precision;  // per evaluated query
  int num_queries = 0;                    // evaluated (not skipped) queries
  int skipped = 0;

  double rank(int k) const;
  // {rank1, rank5, rank10, mAP, num_queries}
  nlohmann::json to_json() const;
};

// Concatenated identity-related features (eval mode, no augmentation) of
// records[indices], row order preserved. Throws DataError naming a record
// whose features are non-finite.
torch::Tensor extract_features(IsganModel& model, const data::DatasetIndex& index,
                               const std::vector<std::size_t>& indices, bool l2_normalize = false,
                               int batch_size = 64);

// Mean identity-unrelated code mu (deterministic mode), same conventions.
torch::Tensor extract_unrelated_features(IsganModel& model, const data::DatasetIndex& index,
                                         const std::vector<std::size_t>& indices, int batch_size = 64);

// Exact pairwise Euclidean distances in float64, [N_q, N_g].
torch::Tensor distance_matrix(const torch::Tensor& query, const torch::Tensor& gallery);

// Single-query CMC / mAP. Gallery items of the query's identity seen by the
// query's camera are excluded, as are junk items (identity -1); ties rank by
// gallery index. Queries without a valid match are skipped with a warning;
// throws DataError when no query can be evaluated.
EvalResult evaluate(const torch::Tensor& dist, const std::vector<int>& query_ids,
                    const std::vector<int>& gallery_ids, const std::vector<int>& query_cams,
                    const std::vector<int>& gallery_cams, int max_rank = 50);

EvalResult evaluate(const RetrievalSet& set, int max_rank = 50);

// Builds the query/gallery retrieval set from a dataset with a trained model.
RetrievalSet build_retrieval_set(IsganModel& model, const data::DatasetIndex& index,
                                 bool l2_normalize = false);

}  // namespace isgan::eval
