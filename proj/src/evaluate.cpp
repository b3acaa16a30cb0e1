#include "mgtraj/evaluate.hpp"

#include <cmath>
#include <cstdio>

#include "mgtraj/threading.hpp"

namespace mgtraj::net {

EvalReport evaluate(const Model& m, const sim::Dataset& ds, const EvalOptions& opt) {
  if (ds.records.empty()) throw ConfigError("evaluate: empty dataset");
  if (opt.k < 1) throw ConfigError("evaluate: k must be >= 1");

  const std::size_t total = ds.records.size();
  std::vector<std::size_t> chosen;
  if (opt.n_eval == 0 || opt.n_eval >= total) {
    chosen.resize(total);
    for (std::size_t i = 0; i < total; ++i) chosen[i] = i;
  } else {
    chosen.resize(opt.n_eval);
    for (std::size_t i = 0; i < opt.n_eval; ++i) chosen[i] = i * total / opt.n_eval;
  }

  const RecordIndex index = build_record_index(ds);
  EvalReport report;
  report.k = opt.k;
  report.r_max = opt.r_max;
  report.n_eval = chosen.size();
  report.records.resize(chosen.size());

  const int threads = opt.threads > 0 ? opt.threads : worker_threads();
  parallel_for(chosen.size(), threads, [&](std::size_t slot) {
    const std::size_t ri = chosen[slot];
    const auto& rec = ds.records[ri];
    const BatchInputs in = make_batch(ds, {ri}, index);
    Rng rng = Rng::stream(opt.seed, ri);
    EvalRecord out;
    out.record_index = ri;
    out.predictions = predict(m, in, opt.k, opt.strategy, rng);

    std::vector<metrics::Traj> generated;
    generated.reserve(out.predictions.trajectories.size());
    for (const auto& p : out.predictions.trajectories) {
      generated.emplace_back(p.positions.begin(), p.positions.end());
    }
    const auto split = sim::split_obs_future(rec);
    const metrics::Traj truth(split.future.begin(), split.future.end());
    out.ade = metrics::ade_min_k(generated, truth);
    out.fde = metrics::fde_min_k(generated, truth);

    // Conditional support: futures of records sharing the observation key,
    // re-rooted at this record's last observed position. Group members match
    // only up to the key quantization (0.5 m / 30 deg), and an unaligned
    // offset can never be covered at early timesteps where R^t shrinks below
    // it -- that would measure the key grid, not the prediction.
    std::vector<metrics::Traj> gt_futures;
    const Vec2 origin = rec.positions[sim::kObsLen - 1];
    const auto it = ds.gt.groups.find(sim::observation_key(rec));
    if (it != ds.gt.groups.end()) {
      for (std::size_t gi : it->second) {
        const auto& other = ds.records[gi];
        const Vec2 shift = origin - other.positions[sim::kObsLen - 1];
        metrics::Traj future;
        future.reserve(sim::kPredLen);
        for (std::size_t t = sim::kObsLen; t < sim::kRecordLen; ++t) {
          future.push_back(other.positions[t] + shift);
        }
        gt_futures.push_back(std::move(future));
      }
    } else {
      gt_futures.push_back(truth);  // degenerate group: the record itself
    }
    out.precision = metrics::precision(generated, gt_futures, opt.r_max);
    out.recall = metrics::recall(generated, gt_futures, opt.r_max);
    report.records[slot] = std::move(out);
  });

  for (const auto& r : report.records) {
    report.ade += r.ade;
    report.fde += r.fde;
    report.precision += r.precision;
    report.recall += r.recall;
  }
  const double n = static_cast<double>(report.records.size());
  report.ade /= n;
  report.fde /= n;
  report.precision /= n;
  report.recall /= n;
  report.f1 = metrics::f1(report.precision, report.recall);
  return report;
}

std::string metrics_json(const EvalReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "{ \"ade\": %.6f, \"fde\": %.6f, \"precision\": %.6f, \"recall\": %.6f, "
                "\"f1\": %.6f, \"k\": %d, \"r_max\": %.6f, \"n_eval\": %zu }",
                r.ade, r.fde, r.precision, r.recall, r.f1, r.k, r.r_max, r.n_eval);
  return std::string(buf);
}

}  // namespace mgtraj::net
