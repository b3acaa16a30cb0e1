#pragma once

#include <string>
#include <vector>

#include "mgtraj/metrics.hpp"
#include "mgtraj/sampling.hpp"

namespace mgtraj::net {

struct EvalOptions {
  int k = 20;
  Strategy strategy = Strategy::expectation;
  double r_max = 2.0;
  std::size_t n_eval = 0;  // 0 = every record, else an evenly spaced subsample
  std::uint64_t seed = 1;
  int threads = 0;         // 0 = worker pool default
};

struct EvalRecord {
  std::size_t record_index = 0;
  PredictionSet predictions;
  double ade = 0.0;
  double fde = 0.0;
  double precision = 0.0;  // vs the record's observation-key ground-truth group
  double recall = 0.0;
};

struct EvalReport {
  double ade = 0.0;
  double fde = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int k = 0;
  double r_max = 0.0;
  std::size_t n_eval = 0;
  std::vector<EvalRecord> records;
};

// Predicts k futures per evaluated record (each record gets its own RNG
// stream, so results are independent of thread count) and aggregates
// min-over-k ADE/FDE plus manifold precision/recall against the record's
// ground-truth group.
EvalReport evaluate(const Model& m, const sim::Dataset& ds, const EvalOptions& opt);

std::string metrics_json(const EvalReport& r);

}  // namespace mgtraj::net
