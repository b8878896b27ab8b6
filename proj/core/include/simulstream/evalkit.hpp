#pragma once

#include <string>
#include <vector>

#include "simulstream/policy.hpp"
#include "simulstream/toyspeech.hpp"

namespace simulstream::evalkit {

struct LatencyMetrics {
  double al = 0, ap = 0, dal = 0, start_offset = 0, end_offset = 0, laal = 0, atd = 0;
};

struct StreamingDegree {
  double num_chunks = 0, rtf = 0;
  double discontinuity_sum = 0, discontinuity_ave = 0, discontinuity_num = 0;
};

struct QualityMetrics {
  double unit_bleu = 0, text_bleu = 0, unit_exact_match = 0;
};

struct MetricsReport {
  LatencyMetrics ideal, ca;
  StreamingDegree streaming;
  QualityMetrics quality;
};

// Ideal-clock latency formulas over the trace timestamps. AL's cutoff is the
// first output frame emitted at or after the end of the source.
LatencyMetrics compute_latency_metrics(const policy::EmissionTrace& trace);

// Same formulas over the wall-clock channel; the AL/LAAL cutoff stays the one
// derived from the ideal channel so a uniform wall-clock shift moves AL_CA by
// exactly that shift.
LatencyMetrics compute_ca_metrics(const policy::EmissionTrace& trace);

StreamingDegree compute_streaming_degree(const policy::EmissionTrace& trace);

// Corpus-level BLEU with brevity penalty. Counts for n >= 2 are add-1
// smoothed only when the clipped match count is zero.
double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references, int max_n = 4);

struct AggregateReport {
  LatencyMetrics ideal, ca;       // per-sample means
  StreamingDegree streaming;      // per-sample means
  QualityMetrics quality;         // corpus-level
  int num_samples = 0;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row(const std::string& label) const;
};

// Quality scores for emitted text/units against references. Trailing <eos>
// is stripped from text on both sides.
QualityMetrics score_quality(const std::vector<std::vector<int>>& hyp_text,
                             const std::vector<std::vector<int>>& hyp_units,
                             const std::vector<const toyspeech::Sample*>& refs);

AggregateReport aggregate(const std::vector<MetricsReport>& per_sample,
                          const QualityMetrics& quality);

struct CurveRow {
  int chunk_frames = 0;  // model::kChunkInfinity for the offline point
  AggregateReport report;
};

// One evaluation sweep per chunk size, rows sorted by ascending mean AL.
std::vector<CurveRow> quality_latency_curve(const model::Model& m,
                                            const toyspeech::Corpus& corpus,
                                            const std::vector<int>& chunk_grid,
                                            const policy::InferenceOptions& base_opts,
                                            int num_threads = 1);

// Per-sample evaluation helper shared by the CLI and the curve sweep.
struct SampleEval {
  policy::InferenceResult result;
  MetricsReport report;
};

SampleEval evaluate_sample(const model::Model& m, const toyspeech::Sample& sample,
                           const policy::InferenceOptions& opts);

std::vector<MetricsReport> evaluate_corpus(const model::Model& m,
                                           const toyspeech::Corpus& corpus,
                                           const policy::InferenceOptions& opts,
                                           QualityMetrics* quality_out,
                                           std::vector<policy::EmissionTrace>* traces_out,
                                           int num_threads = 1);

}  // namespace simulstream::evalkit
