#ifndef XMODAL_EVAL_HPP_
#define XMODAL_EVAL_HPP_

#include <cstdint>
#include <functional>
#include <ostream>
#include <span>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "xmodal/data.hpp"
#include "xmodal/network.hpp"

namespace xmodal {

enum class EvalMode { kSingleShot, kMultiShot };
enum class QueryDirection { kIrToRgb, kRgbToIr };

std::string_view eval_mode_name(EvalMode mode);
EvalMode parse_eval_mode(std::string_view name);  // "single" | "multi"
std::string_view direction_name(QueryDirection d);
QueryDirection parse_direction(std::string_view name);  // "ir2rgb" | "rgb2ir"

/// Row-major descriptor matrix.
struct Descriptors {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(values).subspan(i * dim, dim);
  }
};

struct RetrievalResult {
  std::size_t num_query = 0;
  std::size_t num_gallery = 0;
  std::vector<double> distances;  // num_query x num_gallery, last redraw
  std::vector<double> cmc;        // cmc[r-1] = rank-r accuracy
  double map = 0.0;
  std::vector<double> average_precision;  // per query
};

/// Entry (i,j) = 0.5 * |q_i - g_j|^2. Rows are split across `threads`
/// workers; the result does not depend on the thread count.
std::vector<double> distance_matrix(const Descriptors& query,
                                    const Descriptors& gallery,
                                    std::size_t threads = 1);

/// Throws std::invalid_argument naming the first query without any
/// relevant gallery item. Ties rank the lower gallery index first.
std::vector<double> cmc_curve(std::span<const double> distances,
                              std::span<const std::size_t> query_ids,
                              std::span<const std::size_t> gallery_ids);

std::vector<double> average_precisions(std::span<const double> distances,
                                       std::span<const std::size_t> query_ids,
                                       std::span<const std::size_t> gallery_ids);

double mean_ap(std::span<const double> distances,
               std::span<const std::size_t> query_ids,
               std::span<const std::size_t> gallery_ids);

struct EvalOptions {
  EvalMode mode = EvalMode::kSingleShot;
  std::size_t shots = 1;  // gallery images per identity in multi-shot mode
  std::size_t redraws = 10;
  QueryDirection direction = QueryDirection::kIrToRgb;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Optional predicate restricting which images may enter the gallery.
  std::function<bool(const Image&)> gallery_filter;
};

/// Queries are every image of the query modality; each redraw samples
/// `shots` gallery images per identity from the other modality. CMC, AP,
/// and mAP are averaged over redraws.
RetrievalResult evaluate_descriptors(const Descriptors& all_images,
                                     const Dataset& dataset,
                                     const EvalOptions& options);

/// Descriptors for every dataset image, computed in chunks without a graph.
Descriptors extract_descriptors(const Network& network, const Dataset& dataset);

RetrievalResult evaluate(const Network& network, const Dataset& dataset,
                         const EvalOptions& options);

/// XMODAL_THREADS if set to a positive integer, otherwise 1.
std::size_t eval_threads_from_env();

nlohmann::json result_to_json(const RetrievalResult& result,
                              const EvalOptions& options);
void write_cmc_csv(std::ostream& os, const RetrievalResult& result);

}  // namespace xmodal

#endif  // XMODAL_EVAL_HPP_
