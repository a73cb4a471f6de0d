#include "xmodal/eval.hpp"

#include <algorithm>
#include <cstdlib>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>

#include "xmodal/losses.hpp"

namespace xmodal {

std::string_view eval_mode_name(EvalMode mode) {
  return mode == EvalMode::kSingleShot ? "single" : "multi";
}

EvalMode parse_eval_mode(std::string_view name) {
  if (name == "single") return EvalMode::kSingleShot;
  if (name == "multi") return EvalMode::kMultiShot;
  throw ConfigError("unknown eval mode '" + std::string(name) + "'");
}

std::string_view direction_name(QueryDirection d) {
  return d == QueryDirection::kIrToRgb ? "ir2rgb" : "rgb2ir";
}

QueryDirection parse_direction(std::string_view name) {
  if (name == "ir2rgb") return QueryDirection::kIrToRgb;
  if (name == "rgb2ir") return QueryDirection::kRgbToIr;
  throw ConfigError("unknown query direction '" + std::string(name) + "'");
}

std::vector<double> distance_matrix(const Descriptors& query,
                                    const Descriptors& gallery,
                                    std::size_t threads) {
  if (query.dim != gallery.dim) {
    throw ShapeError("distance_matrix: descriptor dims differ (" +
                     std::to_string(query.dim) + " vs " +
                     std::to_string(gallery.dim) + ")");
  }
  std::vector<double> out(query.rows * gallery.rows);
  auto fill_rows = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = 0; j < gallery.rows; ++j) {
        out[i * gallery.rows + j] = sq_euclidean(query.row(i), gallery.row(j));
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, query.rows));
  if (threads == 1) {
    fill_rows(0, query.rows);
    return out;
  }
  std::vector<std::thread> workers;
  const std::size_t chunk = (query.rows + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(query.rows, begin + chunk);
    if (begin >= end) break;
    workers.emplace_back(fill_rows, begin, end);
  }
  for (auto& w : workers) w.join();
  return out;
}

namespace {

// Gallery order for one query: ascending distance, ties by index.
std::vector<std::size_t> ranking(std::span<const double> row) {
  std::vector<std::size_t> order(row.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });
  return order;
}

std::size_t check_dims(std::span<const double> distances,
                       std::span<const std::size_t> query_ids,
                       std::span<const std::size_t> gallery_ids) {
  if (distances.size() != query_ids.size() * gallery_ids.size()) {
    throw ShapeError("retrieval: distance matrix does not match id counts");
  }
  return gallery_ids.size();
}

[[noreturn]] void no_relevant(std::size_t q) {
  throw std::invalid_argument("query " + std::to_string(q) +
                              " has no relevant gallery item");
}

}  // namespace

std::vector<double> cmc_curve(std::span<const double> distances,
                              std::span<const std::size_t> query_ids,
                              std::span<const std::size_t> gallery_ids) {
  const std::size_t ng = check_dims(distances, query_ids, gallery_ids);
  std::vector<double> hits(ng, 0.0);
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const auto order = ranking(distances.subspan(q * ng, ng));
    std::size_t first = ng;
    for (std::size_t r = 0; r < ng; ++r) {
      if (gallery_ids[order[r]] == query_ids[q]) {
        first = r;
        break;
      }
    }
    if (first == ng) no_relevant(q);
    hits[first] += 1.0;
  }
  std::vector<double> cmc(ng);
  double running = 0.0;
  for (std::size_t r = 0; r < ng; ++r) {
    running += hits[r];
    cmc[r] = running / static_cast<double>(query_ids.size());
  }
  return cmc;
}

std::vector<double> average_precisions(std::span<const double> distances,
                                       std::span<const std::size_t> query_ids,
                                       std::span<const std::size_t> gallery_ids) {
  const std::size_t ng = check_dims(distances, query_ids, gallery_ids);
  std::vector<double> ap(query_ids.size());
  for (std::size_t q = 0; q < query_ids.size(); ++q) {
    const auto order = ranking(distances.subspan(q * ng, ng));
    std::size_t found = 0;
    double precision_sum = 0.0;
    for (std::size_t r = 0; r < ng; ++r) {
      if (gallery_ids[order[r]] == query_ids[q]) {
        ++found;
        precision_sum += static_cast<double>(found) / static_cast<double>(r + 1);
      }
    }
    if (found == 0) no_relevant(q);
    ap[q] = precision_sum / static_cast<double>(found);
  }
  return ap;
}

double mean_ap(std::span<const double> distances,
               std::span<const std::size_t> query_ids,
               std::span<const std::size_t> gallery_ids) {
  const auto ap = average_precisions(distances, query_ids, gallery_ids);
  if (ap.empty()) return 0.0;
  return std::accumulate(ap.begin(), ap.end(), 0.0) / static_cast<double>(ap.size());
}

namespace {

Descriptors select_rows(const Descriptors& all, std::span<const std::size_t> rows) {
  Descriptors d;
  d.rows = rows.size();
  d.dim = all.dim;
  d.values.reserve(rows.size() * all.dim);
  for (std::size_t r : rows) {
    auto src = all.row(r);
    d.values.insert(d.values.end(), src.begin(), src.end());
  }
  return d;
}

}  // namespace

RetrievalResult evaluate_descriptors(const Descriptors& all_images,
                                     const Dataset& dataset,
                                     const EvalOptions& options) {
  if (all_images.rows != dataset.images.size()) {
    throw ShapeError("evaluate: descriptor rows do not match dataset size");
  }
  if (options.redraws == 0) throw ConfigError("evaluate: redraws must be >= 1");
  const std::size_t shots = options.mode == EvalMode::kSingleShot ? 1 : options.shots;
  if (shots == 0) throw ConfigError("evaluate: shots must be >= 1");
  const Modality query_modality =
      options.direction == QueryDirection::kIrToRgb ? Modality::kIr : Modality::kRgb;
  const Modality gallery_modality =
      query_modality == Modality::kIr ? Modality::kRgb : Modality::kIr;

  std::vector<std::size_t> query_rows, query_ids;
  for (std::size_t i = 0; i < dataset.images.size(); ++i) {
    if (dataset.images[i].modality == query_modality) {
      query_rows.push_back(i);
      query_ids.push_back(dataset.images[i].id);
    }
  }
  if (query_rows.empty()) throw ConfigError("evaluate: dataset has no query images");

  // Candidate gallery pools per identity that has queries.
  const auto index = dataset.by_identity();
  std::vector<std::pair<std::size_t, std::vector<std::size_t>>> pools;
  for (std::size_t id = 0; id < index.size(); ++id) {
    std::vector<std::size_t> pool;
    for (std::size_t i : index[id][static_cast<std::size_t>(gallery_modality)]) {
      if (!options.gallery_filter || options.gallery_filter(dataset.images[i])) {
        pool.push_back(i);
      }
    }
    const bool has_queries =
        !index[id][static_cast<std::size_t>(query_modality)].empty();
    if (!has_queries && pool.empty()) continue;
    if (pool.size() < shots) {
      throw ConfigError("evaluate: identity " + std::to_string(id) + " has " +
                        std::to_string(pool.size()) +
                        " gallery images, fewer than shots=" + std::to_string(shots));
    }
    pools.emplace_back(id, std::move(pool));
  }

  const Descriptors queries = select_rows(all_images, query_rows);
  std::mt19937_64 rng(options.seed);
  RetrievalResult result;
  result.num_query = query_rows.size();
  result.average_precision.assign(query_rows.size(), 0.0);
  for (std::size_t redraw = 0; redraw < options.redraws; ++redraw) {
    std::vector<std::size_t> gallery_rows, gallery_ids;
    for (auto& [id, pool] : pools) {
      std::vector<std::size_t> candidates = pool;
      for (std::size_t s = 0; s < shots; ++s) {
        std::uniform_int_distribution<std::size_t> pick(s, candidates.size() - 1);
        std::swap(candidates[s], candidates[pick(rng)]);
        gallery_rows.push_back(candidates[s]);
        gallery_ids.push_back(id);
      }
    }
    const Descriptors gallery = select_rows(all_images, gallery_rows);
    auto dist = distance_matrix(queries, gallery, options.threads);
    auto cmc = cmc_curve(dist, query_ids, gallery_ids);
    auto ap = average_precisions(dist, query_ids, gallery_ids);
    if (result.cmc.empty()) result.cmc.assign(cmc.size(), 0.0);
    for (std::size_t r = 0; r < cmc.size(); ++r) result.cmc[r] += cmc[r];
    for (std::size_t q = 0; q < ap.size(); ++q) result.average_precision[q] += ap[q];
    result.num_gallery = gallery_rows.size();
    result.distances = std::move(dist);
  }
  const double inv = 1.0 / static_cast<double>(options.redraws);
  for (double& v : result.cmc) v *= inv;
  for (double& v : result.average_precision) v *= inv;
  result.map = std::accumulate(result.average_precision.begin(),
                               result.average_precision.end(), 0.0) /
               static_cast<double>(result.average_precision.size());
  return result;
}

Descriptors extract_descriptors(const Network& network, const Dataset& dataset) {
  constexpr std::size_t kChunk = 64;
  Descriptors out;
  out.rows = dataset.images.size();
  out.dim = network.descriptor_dim();
  out.values.resize(out.rows * out.dim);
  // Consecutive runs of a single modality are batched together.
  std::size_t i = 0;
  while (i < dataset.images.size()) {
    const Modality m = dataset.images[i].modality;
    std::vector<std::size_t> rows;
    while (i < dataset.images.size() && rows.size() < kChunk &&
           dataset.images[i].modality == m) {
      rows.push_back(i++);
    }
    Tensor d = network.descriptors(dataset.stack(rows), m);
    std::copy(d.data().begin(), d.data().end(),
              out.values.begin() + rows.front() * out.dim);
  }
  return out;
}

RetrievalResult evaluate(const Network& network, const Dataset& dataset,
                         const EvalOptions& options) {
  return evaluate_descriptors(extract_descriptors(network, dataset), dataset,
                              options);
}

std::size_t eval_threads_from_env() {
  const char* v = std::getenv("XMODAL_THREADS");
  if (!v) return 1;
  try {
    const long n = std::stol(v);
    return n > 0 ? static_cast<std::size_t>(n) : 1;
  } catch (const std::exception&) {
    return 1;
  }
}

nlohmann::json result_to_json(const RetrievalResult& result,
                              const EvalOptions& options) {
  return {{"mode", eval_mode_name(options.mode)},
          {"direction", direction_name(options.direction)},
          {"shots", options.mode == EvalMode::kSingleShot ? 1 : options.shots},
          {"redraws", options.redraws},
          {"cmc", result.cmc},
          {"map", result.map},
          {"seed", options.seed}};
}

void write_cmc_csv(std::ostream& os, const RetrievalResult& result) {
  os << "rank,cmc\n";
  os.precision(17);
  for (std::size_t r = 0; r < result.cmc.size(); ++r) {
    os << (r + 1) << ',' << result.cmc[r] << '\n';
  }
}

}  // namespace xmodal
