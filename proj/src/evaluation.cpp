#include "isgan/evaluation.hpp"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "isgan/errors.hpp"

namespace isgan::eval {

double EvalResult::rank(int k) const {
  if (cmc.empty()) return 0.0;
  const auto i = static_cast<std::size_t>(std::clamp<int>(k, 1, static_cast<int>(cmc.size())) - 1);
  return cmc[i];
}

nlohmann::json EvalResult::to_json() const {
  return {{"rank1", rank(1)}, {"rank5", rank(5)}, {"rank10", rank(10)}, {"mAP", map},
          {"num_queries", num_queries}};
}

namespace {

class EvalModeGuard {
 public:
  explicit EvalModeGuard(torch::nn::Module& m) : module_(m), was_training_(m.is_training()) { m.eval(); }
  ~EvalModeGuard() { module_.train(was_training_); }

 private:
  torch::nn::Module& module_;
  bool was_training_;
};

template <typename Fn>
torch::Tensor batched_features(IsganModel& model, const data::DatasetIndex& index,
                               const std::vector<std::size_t>& indices, int batch_size, Fn&& features) {
  EvalModeGuard guard(*model);
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> rows;
  for (std::size_t start = 0; start < indices.size(); start += batch_size) {
    const std::size_t end = std::min(indices.size(), start + batch_size);
    std::vector<std::size_t> chunk(indices.begin() + start, indices.begin() + end);
    auto fmap = model->backbone->forward(data::stack_pixels(index, chunk));
    auto f = features(fmap);
    auto finite = torch::isfinite(f).all(1);
    if (!finite.all().template item<bool>()) {
      const auto bad = torch::nonzero(~finite)[0][0].template item<int64_t>();
      throw DataError("non-finite features for record " + index.records[chunk[bad]].file);
    }
    rows.push_back(f);
  }
  if (rows.empty()) return torch::empty({0, 0});
  return torch::cat(rows, 0);
}

}  // namespace

torch::Tensor extract_features(IsganModel& model, const data::DatasetIndex& index,
                               const std::vector<std::size_t>& indices, bool l2_normalize,
                               int batch_size) {
  auto f = batched_features(model, index, indices, batch_size, [&](const torch::Tensor& fmap) {
    return concat_bundle(model->identity_encoder->forward(fmap).features);
  });
  if (l2_normalize && f.numel() > 0) f = f / f.norm(2, 1, true).clamp_min(1e-12);
  return f;
}

torch::Tensor extract_unrelated_features(IsganModel& model, const data::DatasetIndex& index,
                                         const std::vector<std::size_t>& indices, int batch_size) {
  return batched_features(model, index, indices, batch_size, [&](const torch::Tensor& fmap) {
    return concat_bundle(model->unrelated_encoder->forward(fmap, CodeMode::deterministic).mu);
  });
}

torch::Tensor distance_matrix(const torch::Tensor& query, const torch::Tensor& gallery) {
  if (query.dim() != 2 || gallery.dim() != 2 || query.size(1) != gallery.size(1)) {
    throw std::invalid_argument("distance_matrix: feature dimensions differ");
  }
  auto q = query.to(torch::kFloat64);
  auto g = gallery.to(torch::kFloat64);
  auto out = torch::empty({q.size(0), g.size(0)}, torch::kFloat64);
  for (int64_t i = 0; i < q.size(0); ++i) {
    out[i] = (g - q[i]).pow(2).sum(1).sqrt();
  }
  return out;
}

EvalResult evaluate(const torch::Tensor& dist, const std::vector<int>& query_ids,
                    const std::vector<int>& gallery_ids, const std::vector<int>& query_cams,
                    const std::vector<int>& gallery_cams, int max_rank) {
  const auto nq = static_cast<std::size_t>(dist.size(0));
  const auto ng = static_cast<std::size_t>(dist.size(1));
  if (query_ids.size() != nq || query_cams.size() != nq || gallery_ids.size() != ng ||
      gallery_cams.size() != ng) {
    throw std::invalid_argument("evaluate: label arrays do not match the distance matrix");
  }
  if (max_rank < 1) throw std::invalid_argument("evaluate: max_rank must be >= 1");

  auto d = dist.to(torch::kFloat64).contiguous();
  const double* data = d.data_ptr<double>();
  EvalResult result;
  result.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);
  std::vector<std::size_t> order(ng);

  for (std::size_t q = 0; q < nq; ++q) {
    const double* row = data + q * ng;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [row](std::size_t a, std::size_t b) { return row[a] < row[b]; });

    std::size_t position = 0;  // rank among kept items
    std::size_t hits = 0;
    std::size_t first_hit = ng;
    double precision_sum = 0.0;
    for (auto g : order) {
      const int gid = gallery_ids[g];
      if (gid == data::kJunkIdentity) continue;
      const bool same_id = gid == query_ids[q];
      if (same_id && gallery_cams[g] == query_cams[q]) continue;
      ++position;
      if (same_id) {
        ++hits;
        if (first_hit == ng) first_hit = position;
        precision_sum += static_cast<double>(hits) / static_cast<double>(position);
      }
    }
    if (hits == 0) {
      spdlog::warn("query {} (identity {}) has no valid gallery match; skipped", q, query_ids[q]);
      ++result.skipped;
      continue;
    }
    for (std::size_t k = first_hit; k <= result.cmc.size(); ++k) result.cmc[k - 1] += 1.0;
    result.average_precision.push_back(precision_sum / static_cast<double>(hits));
  }

  result.num_queries = static_cast<int>(result.average_precision.size());
  if (result.num_queries == 0) throw DataError("no query has a valid gallery match");
  for (auto& c : result.cmc) c /= result.num_queries;
  result.map = std::accumulate(result.average_precision.begin(), result.average_precision.end(), 0.0) /
               result.num_queries;
  return result;
}

EvalResult evaluate(const RetrievalSet& set, int max_rank) {
  return evaluate(distance_matrix(set.query, set.gallery), set.query_ids, set.gallery_ids, set.query_cams,
                  set.gallery_cams, max_rank);
}

RetrievalSet build_retrieval_set(IsganModel& model, const data::DatasetIndex& index, bool l2_normalize) {
  const auto qi = index.split_indices(data::Split::query);
  const auto gi = index.split_indices(data::Split::gallery);
  if (qi.empty()) throw DataError("dataset has no query split");
  if (gi.empty()) throw DataError("dataset has no gallery split");
  RetrievalSet set;
  set.query = extract_features(model, index, qi, l2_normalize);
  set.gallery = extract_features(model, index, gi, l2_normalize);
  for (auto i : qi) {
    set.query_ids.push_back(index.records[i].identity);
    set.query_cams.push_back(index.records[i].camera);
  }
  for (auto i : gi) {
    set.gallery_ids.push_back(index.records[i].identity);
    set.gallery_cams.push_back(index.records[i].camera);
  }
  return set;
}

}  // namespace isgan::eval
