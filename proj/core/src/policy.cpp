#include "simulstream/policy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

#include "simulstream/ops.hpp"

namespace simulstream::policy {

using nlohmann::json;
using model::kChunkInfinity;
using model::Model;

Action decide_action(double recognized_ref, double recognized_now, double aligned_targets,
                     int emitted_targets) {
  bool new_source = recognized_now > recognized_ref;
  bool headroom = aligned_targets > static_cast<double>(emitted_targets);
  return (new_source && headroom) ? Action::kWrite : Action::kRead;
}

void EmissionTrace::validate() const {
  if (t_ms.size() != t_ca_ms.size()) throw std::invalid_argument("trace: t/t_ca length mismatch");
  for (size_t i = 0; i < t_ms.size(); ++i) {
    if (i > 0 && t_ms[i] < t_ms[i - 1]) throw std::invalid_argument("trace: t not monotone");
    if (t_ca_ms[i] < t_ms[i] - 1e-9) throw std::invalid_argument("trace: t_ca below ideal clock");
  }
  int covered = 0;
  for (const auto& s : segments) covered += s.num_frames;
  if (covered != static_cast<int>(t_ms.size())) {
    throw std::invalid_argument("trace: segments do not partition the outputs");
  }
}

std::string EmissionTrace::to_json() const {
  json j;
  j["format"] = kTraceFormat;
  j["t"] = t_ms;
  j["t_ca"] = t_ca_ms;
  j["chunk_reads"] = chunk_reads_ms;
  json segs = json::array();
  for (const auto& s : segments) {
    segs.push_back({{"t_ms", s.t_ms}, {"t_ca_ms", s.t_ca_ms}, {"num_frames", s.num_frames}});
  }
  j["segments"] = segs;
  j["totals"] = {{"x_ms", x_ms}, {"s_ms", s_ms}};
  j["frame_ms"] = frame_ms;
  j["unit_ms"] = unit_ms;
  j["y"] = text_tokens;
  j["u"] = units;
  j["g_frames"] = g_frames;
  j["flush_tokens"] = flush_tokens;
  j["cap_hit"] = cap_hit;
  return j.dump();
}

EmissionTrace EmissionTrace::from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.contains("format") || j["format"] != kTraceFormat) {
    throw std::invalid_argument("trace: format tag mismatch, expected " +
                                std::string(kTraceFormat));
  }
  EmissionTrace tr;
  tr.t_ms = j.at("t").get<std::vector<double>>();
  tr.t_ca_ms = j.at("t_ca").get<std::vector<double>>();
  tr.chunk_reads_ms = j.at("chunk_reads").get<std::vector<double>>();
  for (const auto& s : j.at("segments")) {
    tr.segments.push_back(
        {s.at("t_ms").get<double>(), s.at("t_ca_ms").get<double>(), s.at("num_frames").get<int>()});
  }
  tr.x_ms = j.at("totals").at("x_ms").get<double>();
  tr.s_ms = j.at("totals").at("s_ms").get<double>();
  tr.frame_ms = j.value("frame_ms", 40.0);
  tr.unit_ms = j.value("unit_ms", 20.0);
  tr.text_tokens = j.value("y", std::vector<int>{});
  tr.units = j.value("u", std::vector<int>{});
  tr.g_frames = j.value("g_frames", std::vector<int>{});
  tr.flush_tokens = j.value("flush_tokens", 0);
  tr.cap_hit = j.value("cap_hit", false);
  tr.validate();
  return tr;
}

namespace {

// Wall clock for computation-aware timestamps. Source arrival pins the lower
// bound; model calls push it forward either by measured time or by the
// deterministic cost model.
class ComputeClock {
 public:
  ComputeClock(CaClock mode, double ms_per_mflop) : mode_(mode), rate_(ms_per_mflop) {}

  void arrive(double source_ms) { wall_ms_ = std::max(wall_ms_, source_ms); }

  template <typename F>
  auto timed(F&& f) {
    if (mode_ == CaClock::kReal) {
      auto start = std::chrono::steady_clock::now();
      auto cleanup = [&] {
        std::chrono::duration<double, std::milli> d = std::chrono::steady_clock::now() - start;
        wall_ms_ += d.count();
      };
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        cleanup();
      } else {
        auto out = f();
        cleanup();
        return out;
      }
    } else {
      uint64_t before = flop_counter();
      if constexpr (std::is_void_v<decltype(f())>) {
        f();
        wall_ms_ += static_cast<double>(flop_counter() - before) * 1e-6 * rate_;
      } else {
        auto out = f();
        wall_ms_ += static_cast<double>(flop_counter() - before) * 1e-6 * rate_;
        return out;
      }
    }
  }

  double now_ms() const { return wall_ms_; }

 private:
  CaClock mode_;
  double rate_;
  double wall_ms_ = 0.0;
};

// Shared machinery of the simultaneous and wait-k runners: incremental
// encoding, AR extension, unit emission with trace bookkeeping.
struct Runner {
  const Model& m;
  const InferenceOptions& opts;
  const std::vector<std::vector<double>>& x;

  model::EncoderCache enc;
  model::DecoderState dec;
  model::T2uState t2u;
  ctc::StreamingCollapser asr_counter, nar_counter;
  ComputeClock clock;

  InferenceResult res;
  int received = 0;
  int prev_token = ctc::kEos;
  bool eos = false;
  int cap = 0;

  Runner(const Model& m_, const std::vector<std::vector<double>>& x_,
         const InferenceOptions& opts_, int chunk_frames)
      : m(m_), opts(opts_), x(x_), enc(m_.make_encoder_cache(chunk_frames)),
        dec(m_.make_decoder_state()), t2u(m_.make_t2u_state()),
        clock(opts_.clock, opts_.ms_per_mflop) {
    if (x.empty()) throw std::invalid_argument("inference: empty input stream");
    cap = 2 * static_cast<int>(x.size()) + opts.cap_slack;
  }

  double now_source_ms() const { return received * opts.frame_ms; }

  // Reads the next chunk; returns false when the stream is exhausted.
  bool read_chunk(int chunk_frames) {
    int total = static_cast<int>(x.size());
    if (received >= total) return false;
    int c = chunk_frames == kChunkInfinity ? total : std::min(chunk_frames, total - received);
    std::vector<std::vector<double>> chunk(x.begin() + received, x.begin() + received + c);
    received += c;
    clock.arrive(now_source_ms());
    clock.timed([&] {
      Tensor h_new = m.encode_chunk(enc, chunk);
      auto [asr, nar] = m.probe_probs(h_new);
      for (int r = 0; r < c; ++r) {
        asr_counter.push(row_argmax(asr, r));
        nar_counter.push(row_argmax(nar, r));
      }
    });
    res.trace.chunk_reads_ms.push_back(now_source_ms());
    return true;
  }

  static int row_argmax(const Tensor& probs, int row) {
    int64_t v = probs.dim(1);
    auto vals = probs.values().subspan(row * v, v);
    int best = 0;
    for (int64_t i = 1; i < v; ++i)
      if (vals[i] > vals[best]) best = static_cast<int>(i);
    return best;
  }

  // Emits one AR token and its units; appends trace rows stamped at the
  // current received duration. The <eos> position feeds no unit block,
  // mirroring the training-side T2U input.
  void emit_token(bool from_flush) {
    auto step = clock.timed([&] { return m.decode_step(dec, enc.h, prev_token); });
    prev_token = step.token;
    res.text_tokens.push_back(step.token);
    res.trace.g_frames.push_back(received);
    if (from_flush) ++res.trace.flush_tokens;
    if (step.token == ctc::kEos) eos = true;
    if (eos) return;
    auto new_units = clock.timed([&] { return m.t2u_extend(t2u, step.hidden, step.token); });
    if (!new_units.empty()) {
      double t = now_source_ms();
      double t_ca = clock.now_ms();
      if (!res.trace.segments.empty() && res.trace.segments.back().t_ms == t) {
        res.trace.segments.back().num_frames += static_cast<int>(new_units.size());
      } else {
        res.trace.segments.push_back({t, t_ca, static_cast<int>(new_units.size())});
      }
      for (size_t i = 0; i < new_units.size(); ++i) {
        res.trace.t_ms.push_back(t);
        res.trace.t_ca_ms.push_back(t_ca);
      }
      res.units.insert(res.units.end(), new_units.begin(), new_units.end());
    }
  }

  bool at_cap() {
    if (static_cast<int>(res.text_tokens.size()) >= cap) {
      res.trace.cap_hit = true;
      return true;
    }
    return false;
  }

  void flush() {
    while (!eos && !at_cap()) emit_token(true);
  }

  InferenceResult finish() {
    res.trace.x_ms = static_cast<double>(x.size()) * opts.frame_ms;
    res.trace.s_ms = static_cast<double>(res.units.size()) * opts.unit_ms;
    res.trace.frame_ms = opts.frame_ms;
    res.trace.unit_ms = opts.unit_ms;
    res.trace.text_tokens = res.text_tokens;
    res.trace.units = res.units;
    res.trace.validate();
    return std::move(res);
  }
};

}  // namespace

InferenceResult run_simul_inference(const Model& m, const std::vector<std::vector<double>>& x,
                                    const InferenceOptions& opts) {
  NoGradGuard ng;
  Runner r(m, x, opts, opts.chunk_frames);
  int accepted_asr = 0;
  while (r.read_chunk(opts.chunk_frames)) {
    if (r.eos || r.res.trace.cap_hit) continue;  // nothing left to write; drain the stream
    int asr_now = r.asr_counter.count();
    int nar_now = r.nar_counter.count();
    if (decide_action(accepted_asr, asr_now, nar_now,
                      static_cast<int>(r.res.text_tokens.size())) == Action::kWrite) {
      accepted_asr = asr_now;
      while (static_cast<int>(r.res.text_tokens.size()) < nar_now && !r.eos && !r.at_cap()) {
        r.emit_token(false);
      }
    }
  }
  r.flush();
  return r.finish();
}

InferenceResult run_waitk_inference(const Model& m, const std::vector<std::vector<double>>& x,
                                    int k, const InferenceOptions& opts) {
  if (k < 1) throw std::invalid_argument("wait-k: k must be >= 1");
  if (opts.chunk_frames == kChunkInfinity) {
    throw std::invalid_argument("wait-k: chunk size must be finite");
  }
  NoGradGuard ng;
  Runner r(m, x, opts, opts.chunk_frames);
  int chunks_read = 0;
  while (r.read_chunk(opts.chunk_frames)) {
    ++chunks_read;
    if (chunks_read >= k && !r.eos && !r.res.trace.cap_hit) {
      r.emit_token(false);  // one target token per chunk after the wait
    }
  }
  r.flush();
  return r.finish();
}

OfflineResult run_offline_inference(const Model& m, const std::vector<std::vector<double>>& x,
                                    int cap_slack) {
  NoGradGuard ng;
  if (x.empty()) throw std::invalid_argument("inference: empty input stream");
  auto enc = m.make_encoder_cache(kChunkInfinity);
  m.encode_chunk(enc, x);
  auto dec = m.make_decoder_state();
  auto t2u = m.make_t2u_state();
  OfflineResult out;
  int prev = ctc::kEos;
  int cap = 2 * static_cast<int>(x.size()) + cap_slack;
  while (static_cast<int>(out.text_tokens.size()) < cap) {
    auto step = m.decode_step(dec, enc.h, prev);
    out.text_tokens.push_back(step.token);
    prev = step.token;
    if (step.token == ctc::kEos) break;
    auto units = m.t2u_extend(t2u, step.hidden, step.token);
    out.units.insert(out.units.end(), units.begin(), units.end());
  }
  return out;
}

}  // namespace simulstream::policy
