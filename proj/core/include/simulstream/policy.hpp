#pragma once

#include <string>
#include <vector>

#include "simulstream/model.hpp"

namespace simulstream::policy {

inline constexpr const char* kTraceFormat = "simulstream-trace-v1";

enum class Action { kRead, kWrite };

// WRITE iff a new source token was recognized since the reference count AND
// the aligned-target count exceeds what was already emitted. Counts may be
// expected (training) or discrete (inference).
Action decide_action(double recognized_ref, double recognized_now, double aligned_targets,
                     int emitted_targets);

struct Segment {
  double t_ms = 0;     // emission moment of the segment (ideal clock)
  double t_ca_ms = 0;  // wall clock at the segment's first emission
  int num_frames = 0;  // output frames (units) in the segment
};

struct EmissionTrace {
  std::vector<double> t_ms;     // per output frame, non-decreasing
  std::vector<double> t_ca_ms;  // >= t_ms elementwise
  std::vector<double> chunk_reads_ms;
  std::vector<Segment> segments;
  double x_ms = 0;
  double s_ms = 0;  // |S| used by the latency formulas; the runners set the
                    // emitted duration |U| * unit_ms
  double frame_ms = 40.0;
  double unit_ms = 20.0;
  std::vector<int> text_tokens;  // emitted Y (includes <eos> when reached)
  std::vector<int> units;
  std::vector<int> g_frames;  // realized g(i): frames received when token i was emitted
  int flush_tokens = 0;       // tokens that only materialized in the terminal flush
  bool cap_hit = false;

  void validate() const;
  std::string to_json() const;
  static EmissionTrace from_json(const std::string& text);
};

// Computation-aware timing. The cost model charges a fixed rate per
// multiply-add executed by the tensor kernels, which keeps traces
// byte-reproducible; kReal measures actual wall time around model calls.
enum class CaClock { kCostModel, kReal };

struct InferenceOptions {
  int chunk_frames = 8;  // C; model::kChunkInfinity = offline
  double frame_ms = 40.0;
  double unit_ms = 20.0;
  CaClock clock = CaClock::kCostModel;
  double ms_per_mflop = 1.0;
  int cap_slack = 8;  // |Y| hard cap is 2 * |X| + cap_slack
};

struct InferenceResult {
  std::vector<int> text_tokens;
  std::vector<int> units;
  EmissionTrace trace;
};

// Chunked READ/WRITE loop driven by the two CTC probes (discrete collapse
// counts), with a terminal flush to <eos> once the stream is exhausted.
InferenceResult run_simul_inference(const model::Model& m,
                                    const std::vector<std::vector<double>>& x,
                                    const InferenceOptions& opts);

// Fixed policy: wait k chunks, then one target token (plus its units) per
// chunk; remaining tokens and units are flushed at stream end.
InferenceResult run_waitk_inference(const model::Model& m,
                                    const std::vector<std::vector<double>>& x, int k,
                                    const InferenceOptions& opts);

struct OfflineResult {
  std::vector<int> text_tokens;
  std::vector<int> units;
};

// Greedy AR decode to <eos> over the fully encoded input, then full T2U.
OfflineResult run_offline_inference(const model::Model& m,
                                    const std::vector<std::vector<double>>& x,
                                    int cap_slack = 8);

}  // namespace simulstream::policy
