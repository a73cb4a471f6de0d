// Acceptance suite: one PASS/FAIL line per criterion, details indented below.
//
// Usage: acceptance [path/to/synthetic.cfg]
// The config drives the end-to-end and ablation criteria (6 and 7); without
// it the built-in defaults are used.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "xmodal/checkpoint.hpp"
#include "xmodal/cli.hpp"
#include "xmodal/config.hpp"
#include "xmodal/gradcheck.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/train.hpp"

using namespace xmodal;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Report {
  int failures = 0;
  void line(int id, bool ok, const std::string& what, const std::string& detail) {
    std::cout << (ok ? "PASS " : "FAIL ") << id << ' ' << what << ": " << detail << std::endl;
    if (!ok) ++failures;
  }
};

// 1 -------------------------------------------------------------------------

void gradient_suite(Report& r) {
  const auto start = Clock::now();
  const auto entries = run_gradcheck_suite(1);
  const double secs = seconds_since(start);
  bool ok = secs < 60.0;
  double worst_op = 0.0, worst_net = 0.0;
  for (const auto& e : entries) {
    ok = ok && e.passed();
    double& worst = e.name == "mtmfe_network" ? worst_net : worst_op;
    worst = std::max(worst, e.result.max_rel_error);
    if (!e.passed()) std::cout << "    " << e.name << " rel err " << e.result.max_rel_error << '\n';
  }
  std::ostringstream os;
  os << std::setprecision(3) << entries.size() << " entries; op max rel err " << worst_op
     << " (tol 1e-4); network " << worst_net << " (tol 1e-3); " << secs << " s (limit 60)";
  r.line(1, ok, "gradient suite", os.str());
}

// 2 -------------------------------------------------------------------------

void projection_identities(Report& r) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> small(1, 6);
  std::normal_distribution<double> g;
  int bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t d = small(rng), groups = small(rng), h = small(rng), w = small(rng);
    // Odd repetitions use the batched layout.
    const std::size_t b = rep % 2 ? small(rng) : 1;
    std::vector<double> xs(b * groups * d * h * w);
    for (double& v : xs) v = g(rng);
    Shape xshape{groups * d, h, w}, yshape{groups, d, h, w};
    if (rep % 2) {
      xshape.insert(xshape.begin(), b);
      yshape.insert(yshape.begin(), b);
    }
    Tensor x = Tensor::from_data(xshape, xs);
    Tensor y = Tensor::from_data(yshape, xs);
    Tensor back = pt2d(pt3d(x, d));
    Tensor fwd = pt3d(pt2d(y), d);
    const bool same = back.shape() == x.shape() && fwd.shape() == y.shape() &&
                      std::equal(back.data().begin(), back.data().end(), xs.begin()) &&
                      std::equal(fwd.data().begin(), fwd.data().end(), xs.begin());
    bad += !same;
  }
  r.line(2, bad == 0, "projection identities",
         "100 random shapes, " + std::to_string(bad) + " not bitwise identical");
}

// 3 -------------------------------------------------------------------------

std::vector<std::size_t> ranked(const std::vector<double>& dist, std::size_t q, std::size_t ng) {
  std::vector<std::size_t> order(ng);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const double da = dist[q * ng + a], db = dist[q * ng + b];
    return da < db || (da == db && a < b);
  });
  return order;
}

void metric_oracles(Report& r) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> nq_d(1, 20), ng_d(1, 30);
  double worst = 0.0;
  for (int rep = 0; rep < 200; ++rep) {
    const std::size_t nq = nq_d(rng), ng = ng_d(rng);
    const std::size_t n_ids = std::min<std::size_t>(ng, 1 + rep % 7);
    std::vector<std::size_t> gids(ng), qids(nq);
    for (std::size_t j = 0; j < ng; ++j) gids[j] = j < n_ids ? j : rng() % n_ids;
    std::shuffle(gids.begin(), gids.end(), rng);
    for (auto& q : qids) q = rng() % n_ids;
    std::vector<double> dist(nq * ng);
    for (double& v : dist)
      v = rep % 2 ? static_cast<double>(rng() % 5) : std::uniform_real_distribution<double>(0, 4)(rng);

    std::vector<double> cmc(ng, 0.0);
    double map = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      const auto order = ranked(dist, q, ng);
      double hits = 0.0, ap = 0.0;
      bool found = false;
      for (std::size_t k = 0; k < ng; ++k) {
        if (gids[order[k]] != qids[q]) continue;
        if (!found)
          for (std::size_t t = k; t < ng; ++t) cmc[t] += 1.0 / static_cast<double>(nq);
        found = true;
        hits += 1.0;
        ap += hits / static_cast<double>(k + 1);
      }
      map += ap / hits / static_cast<double>(nq);
    }
    const auto got = cmc_curve(dist, qids, gids);
    for (std::size_t k = 0; k < ng; ++k) worst = std::max(worst, std::abs(got[k] - cmc[k]));
    worst = std::max(worst, std::abs(mean_ap(dist, qids, gids) - map));
  }
  const std::vector<double> d{0.1, 0.2, 0.3, 0.4};
  const std::vector<std::size_t> q{1}, gal{1, 0, 1, 2};
  const double ap = mean_ap(d, q, gal);
  std::ostringstream os;
  os << "200 instances up to 20x30, max |delta| " << worst << "; two-relevant AP "
     << std::setprecision(6) << ap;
  r.line(3, worst <= 1e-9 && std::abs(ap - 0.833333) < 1e-6, "metric oracles", os.str());
}

// 4 -------------------------------------------------------------------------

std::size_t exhaustive_pick(const std::vector<double>& d, std::size_t n, std::size_t a,
                            const std::vector<std::size_t>& ids, const std::vector<Modality>& mods,
                            bool same_id, bool cross) {
  std::size_t best = MinedIndices::kNone;
  for (std::size_t j = 0; j < n; ++j) {
    if (j == a || (ids[j] == ids[a]) != same_id || (mods[j] != mods[a]) != cross) continue;
    if (best == MinedIndices::kNone) {
      best = j;
      continue;
    }
    const double v = d[a * n + j], b = d[a * n + best];
    if (same_id ? v > b : v < b) best = j;
  }
  return best;
}

void loss_algebra(Report& r) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  int negative = 0, cq_below = 0, mining_mismatch = 0, mining_checked = 0;
  double swap_delta = 0.0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n_ids = 2 + rep % 4, k = 2 + (rep / 4) % 3, dim = 2 + rep % 5;
    std::vector<std::size_t> ids;
    std::vector<Modality> mods;
    std::vector<double> f;
    for (Modality m : {Modality::kRgb, Modality::kIr})
      for (std::size_t id = 0; id < n_ids; ++id)
        for (std::size_t j = 0; j < k; ++j) {
          ids.push_back(id);
          mods.push_back(m);
          for (std::size_t e = 0; e < dim; ++e) f.push_back(g(rng));
        }
    // Shuffle rows so modality and identity blocks are interleaved.
    const std::size_t n = ids.size();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::size_t> pids(n);
    std::vector<Modality> pmods(n), swapped(n);
    std::vector<double> pf(n * dim);
    for (std::size_t i = 0; i < n; ++i) {
      pids[i] = ids[perm[i]];
      pmods[i] = mods[perm[i]];
      swapped[i] = pmods[i] == Modality::kRgb ? Modality::kIr : Modality::kRgb;
      std::copy_n(f.begin() + perm[i] * dim, dim, pf.begin() + i * dim);
    }
    Tensor x = Tensor::from_data({n, dim}, pf);
    const double m = 0.3;
    const double bdtr = bdtr_loss(x, pids, pmods, m).item();
    const double cq = cq_loss(x, pids, pmods, m).item();
    const double smt = smt_loss(x, pids, pmods, m).item();
    negative += (bdtr < 0.0) + (cq < 0.0) + (smt < 0.0);
    cq_below += cq < bdtr;
    swap_delta = std::max({swap_delta, std::abs(bdtr_loss(x, pids, swapped, m).item() - bdtr),
                           std::abs(cq_loss(x, pids, swapped, m).item() - cq),
                           std::abs(smt_loss(x, pids, swapped, m).item() - smt)});
    if (n_ids <= 4 && k <= 3) {
      ++mining_checked;
      Tensor d = pairwise_sq_distance(l2_normalize(x));
      std::vector<double> dv(d.data().begin(), d.data().end());
      const MinedIndices mined = mine_batch_hard(dv, pids, pmods);
      for (std::size_t a = 0; a < n; ++a) {
        mining_mismatch += mined.cross_positive[a] != exhaustive_pick(dv, n, a, pids, pmods, true, true);
        mining_mismatch += mined.cross_negative[a] != exhaustive_pick(dv, n, a, pids, pmods, false, true);
        mining_mismatch += mined.intra_positive[a] != exhaustive_pick(dv, n, a, pids, pmods, true, false);
        mining_mismatch += mined.intra_negative[a] != exhaustive_pick(dv, n, a, pids, pmods, false, false);
      }
    }
  }
  std::ostringstream os;
  os << "1000 batches: " << negative << " negative losses, " << cq_below
     << " with cq < bdtr, max swap delta " << swap_delta << ", mining mismatches "
     << mining_mismatch << " over " << mining_checked << " small batches";
  r.line(4, negative == 0 && cq_below == 0 && swap_delta <= 1e-12 && mining_mismatch == 0,
         "loss algebra", os.str());
}

// 5 -------------------------------------------------------------------------

void sampler_contract(Report& r) {
  SynthDatasetSpec spec;
  const Dataset d = generate_dataset(spec);
  std::mt19937_64 rng(5);
  const int draws = 10000;
  int malformed = 0;
  std::vector<int> counts(spec.num_identities, 0);
  for (int t = 0; t < draws; ++t) {
    const Batch b = sample_batch(d, 8, 4, rng);
    std::map<std::size_t, std::array<int, 2>> per_id;
    for (std::size_t i = 0; i < b.size(); ++i)
      per_id[b.ids[i]][static_cast<std::size_t>(b.modalities[i])]++;
    bool ok = b.size() == 64 && per_id.size() == 8;
    for (const auto& [id, c] : per_id) {
      ok = ok && c[0] == 4 && c[1] == 4;
      counts[id]++;
    }
    malformed += !ok;
  }
  const double p = 8.0 / static_cast<double>(spec.num_identities);
  const double mean = draws * p, sigma = std::sqrt(draws * p * (1.0 - p));
  double worst_z = 0.0;
  for (int c : counts) worst_z = std::max(worst_z, std::abs(c - mean) / sigma);
  std::ostringstream os;
  os << std::setprecision(3) << draws << " batches, " << malformed
     << " malformed; identity frequencies within " << worst_z << " sigma (limit 3)";
  r.line(5, malformed == 0 && worst_z <= 3.0, "sampler contract", os.str());
}

// 6, 7 ----------------------------------------------------------------------

struct RowRuns {
  std::string name;
  std::vector<double> rank1;
  std::vector<double> seconds;
};

RowRuns run_row(const RunConfig& base, const AblationRow& row, std::size_t seeds) {
  RowRuns out{row.name, {}, {}};
  const Dataset train_set = generate_dataset(base.train_spec());
  const Dataset eval_set = generate_dataset(base.eval_spec());
  for (std::size_t s = 0; s < seeds; ++s) {
    RunConfig c = base;
    c.seed = base.seed + s;
    c.ablation = row.switches;
    c.eval_mode = EvalMode::kSingleShot;
    c.eval_direction = QueryDirection::kIrToRgb;
    const auto start = Clock::now();
    const TrainOutcome trained = train(c, train_set);
    const RetrievalResult res = evaluate(trained.network, eval_set, c.eval_options());
    out.seconds.push_back(seconds_since(start));
    out.rank1.push_back(res.cmc.at(0));
    std::cout << "    " << row.name << " seed " << c.seed << ": rank-1 " << std::fixed
              << std::setprecision(4) << res.cmc[0] << " mAP " << res.map << " ("
              << std::setprecision(1) << out.seconds.back() << " s)" << std::defaultfloat
              << std::endl;
  }
  return out;
}

void end_to_end_and_ablation(Report& r, const RunConfig& config) {
  const std::size_t seeds = 5;
  std::map<std::string, RowRuns> rows;
  for (const auto& row : select_ablation_rows("+RF+CQ,+RF,+ML+P")) {
    rows[row.name] = run_row(config, row, seeds);
  }
  const RowRuns& full = rows.at("+RF+CQ");
  const double full_med = median(full.rank1);
  const double slowest = *std::max_element(full.seconds.begin(), full.seconds.end());
  std::ostringstream os6;
  os6 << std::fixed << std::setprecision(4) << "full model median IR->RGB rank-1 " << full_med
      << " (need >= 0.90) over " << seeds << " seeds, " << config.epochs
      << " epochs; slowest run " << std::setprecision(1) << slowest << " s (limit 300)";
  r.line(6, full_med >= 0.90 && slowest < 300.0 && config.epochs <= 15, "synthetic end-to-end",
         os6.str());

  const double rf_med = median(rows.at("+RF").rank1);
  const double app_med = median(rows.at("+ML+P").rank1);
  std::ostringstream os7;
  os7 << std::fixed << std::setprecision(4) << "median rank-1 full " << full_med << " >= +RF "
      << rf_med << " >= +ML+P " << app_med << "; gap " << full_med - app_med << " (need >= 0.03)";
  r.line(7, full_med >= rf_med && rf_med >= app_med && full_med - app_med >= 0.03,
         "ablation direction", os7.str());
}

// 8 -------------------------------------------------------------------------

void determinism_and_persistence(Report& r, RunConfig config) {
  config.epochs = 2;
  config.batches_per_epoch = 10;
  config.id_warmup_epochs = 1;
  const Dataset data = generate_dataset(config.train_spec());
  const TrainOutcome a = train(config, data);
  const TrainOutcome b = train(config, data);
  const bool curves_equal = a.log.batch_losses == b.log.batch_losses;

  const fs::path dir = fs::temp_directory_path() / "xmodal_acceptance_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  save_checkpoint(dir / "model.mtmf", a.network.params().named());
  const RetrievalResult direct =
      evaluate(a.network, generate_dataset(config.eval_spec()), config.eval_options());
  cmd_eval(config, dir / "model.mtmf", dir / "loaded");
  std::ifstream is(dir / "loaded" / "eval.json");
  nlohmann::json loaded = nlohmann::json::parse(is);
  loaded.erase("checkpoint");
  const bool eval_equal = loaded == result_to_json(direct, config.eval_options());
  fs::remove_all(dir);

  std::ostringstream os;
  os << a.log.batch_losses.size() << " batch losses "
     << (curves_equal ? "bitwise identical" : "DIFFER") << " across two runs; reloaded checkpoint "
     << (eval_equal ? "gives identical" : "gives DIFFERENT") << " evaluation JSON";
  r.line(8, curves_equal && eval_equal, "determinism and persistence", os.str());
}

}  // namespace

int main(int argc, char** argv) {
  RunConfig config;
  try {
    if (argc > 1) config = load_run_config(argv[1]);
    config.validate();
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  Report report;
  try {
    gradient_suite(report);
    projection_identities(report);
    metric_oracles(report);
    loss_algebra(report);
    sampler_contract(report);
    end_to_end_and_ablation(report, config);
    determinism_and_persistence(report, config);
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << '\n';
    return kExitFailure;
  }
  std::cout << (report.failures == 0 ? "all criteria passed"
                                     : std::to_string(report.failures) + " criteria failed")
            << std::endl;
  return report.failures == 0 ? kExitOk : kExitAcceptance;
}
