#include "simulstream/evalkit.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace simulstream::evalkit {

using nlohmann::json;
using policy::EmissionTrace;

namespace {

// Formula inputs shared by the ideal and wall-clock channels.
struct Channel {
  const std::vector<double>& t;
  double x_ms;
  double s_ms;      // declared target duration |S|
  double unit_ms;   // per-output-frame duration
  double frame_ms;
  size_t tau;       // cutoff index (1-based) for AL/LAAL
};

size_t al_cutoff(const std::vector<double>& t, double x_ms) {
  for (size_t i = 0; i < t.size(); ++i) {
    if (t[i] >= x_ms) return i + 1;
  }
  return t.size();
}

LatencyMetrics compute_channel(const Channel& ch) {
  const size_t f = ch.t.size();
  if (f == 0) throw std::invalid_argument("latency metrics: empty trace");
  if (ch.x_ms <= 0 || ch.s_ms <= 0) {
    throw std::invalid_argument("latency metrics: non-positive |X| or |S|");
  }
  LatencyMetrics out;
  // Source-time quantum per output frame under the reference pacing.
  const double step = ch.x_ms * ch.unit_ms / ch.s_ms;
  const double emitted_ms = static_cast<double>(f) * ch.unit_ms;
  const double step_laal = ch.x_ms * ch.unit_ms / std::max(ch.s_ms, emitted_ms);

  double al = 0, laal = 0;
  for (size_t i = 0; i < ch.tau; ++i) {
    al += ch.t[i] - static_cast<double>(i) * step;
    laal += ch.t[i] - static_cast<double>(i) * step_laal;
  }
  out.al = al / static_cast<double>(ch.tau);
  out.laal = laal / static_cast<double>(ch.tau);

  double sum_t = 0;
  for (double v : ch.t) sum_t += v;
  out.ap = ch.unit_ms * sum_t / (ch.x_ms * ch.s_ms);

  double dal = 0, t_prev = 0;
  for (size_t i = 0; i < f; ++i) {
    double ti = i == 0 ? ch.t[0] : std::max(ch.t[i], t_prev + step);
    dal += ti - static_cast<double>(i) * step;
    t_prev = ti;
  }
  out.dal = dal / static_cast<double>(f);

  out.start_offset = ch.t.front();
  out.end_offset = ch.t.back() - ch.x_ms;

  // Each output frame is paired with the input frame at the proportional
  // cumulative duration; its delay is measured against that frame's end time.
  double atd = 0;
  for (size_t i = 0; i < f; ++i) {
    double cum_in = static_cast<double>(i + 1) * step;
    double xi = std::min(std::ceil(cum_in / ch.frame_ms) * ch.frame_ms, ch.x_ms);
    atd += ch.t[i] - xi;
  }
  out.atd = atd / static_cast<double>(f);
  return out;
}

}  // namespace

LatencyMetrics compute_latency_metrics(const EmissionTrace& trace) {
  Channel ch{trace.t_ms, trace.x_ms, trace.s_ms, trace.unit_ms, trace.frame_ms,
             al_cutoff(trace.t_ms, trace.x_ms)};
  return compute_channel(ch);
}

LatencyMetrics compute_ca_metrics(const EmissionTrace& trace) {
  if (trace.t_ca_ms.size() != trace.t_ms.size()) {
    throw std::invalid_argument("latency metrics: missing wall-clock channel");
  }
  Channel ch{trace.t_ca_ms, trace.x_ms, trace.s_ms, trace.unit_ms, trace.frame_ms,
             al_cutoff(trace.t_ms, trace.x_ms)};
  return compute_channel(ch);
}

StreamingDegree compute_streaming_degree(const EmissionTrace& trace) {
  StreamingDegree out;
  out.num_chunks = static_cast<double>(trace.segments.size());
  out.rtf = trace.t_ms.empty() || trace.x_ms <= 0 ? 0.0 : trace.t_ms.back() / trace.x_ms;
  double playback_end = -1.0;
  for (const auto& seg : trace.segments) {
    if (playback_end >= 0.0) {
      double gap = seg.t_ms - playback_end;
      if (gap > 0.0) {
        out.discontinuity_sum += gap;
        out.discontinuity_num += 1.0;
      }
    }
    playback_end = std::max(playback_end, seg.t_ms) + seg.num_frames * trace.unit_ms;
  }
  out.discontinuity_ave =
      out.discontinuity_num > 0 ? out.discontinuity_sum / out.discontinuity_num : 0.0;
  return out;
}

// --- BLEU -------------------------------------------------------------------

namespace {

void count_ngrams(const std::vector<int>& seq, int n, std::map<std::vector<int>, int>& out) {
  if (static_cast<int>(seq.size()) < n) return;
  for (size_t i = 0; i + n <= seq.size(); ++i) {
    out[std::vector<int>(seq.begin() + i, seq.begin() + i + n)]++;
  }
}

}  // namespace

double corpus_bleu(const std::vector<std::vector<int>>& hypotheses,
                   const std::vector<std::vector<int>>& references, int max_n) {
  if (hypotheses.size() != references.size()) {
    throw std::invalid_argument("bleu: hypothesis/reference count mismatch");
  }
  if (hypotheses.empty()) throw std::invalid_argument("bleu: empty corpus");
  for (const auto& r : references) {
    if (r.empty()) throw std::invalid_argument("bleu: empty reference");
  }
  std::vector<long> match(max_n, 0), total(max_n, 0);
  long hyp_len = 0, ref_len = 0;
  for (size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    hyp_len += static_cast<long>(hyp.size());
    ref_len += static_cast<long>(ref.size());
    for (int n = 1; n <= max_n; ++n) {
      std::map<std::vector<int>, int> hyp_counts, ref_counts;
      count_ngrams(hyp, n, hyp_counts);
      count_ngrams(ref, n, ref_counts);
      for (const auto& [gram, count] : hyp_counts) {
        total[n - 1] += count;
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) match[n - 1] += std::min(count, it->second);
      }
    }
  }
  double log_prec = 0.0;
  int used = 0;
  for (int n = 1; n <= max_n; ++n) {
    long m = match[n - 1], t = total[n - 1];
    if (t == 0) continue;  // hypotheses shorter than n everywhere
    if (m == 0) {
      if (n == 1) return 0.0;  // no unigram overlap: score is zero, unsmoothed
      log_prec += std::log(1.0 / static_cast<double>(t + 1));
    } else {
      log_prec += std::log(static_cast<double>(m) / static_cast<double>(t));
    }
    ++used;
  }
  if (used == 0 || hyp_len == 0) return 0.0;
  double bp = hyp_len < ref_len
                  ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                  : 1.0;
  return 100.0 * bp * std::exp(log_prec / static_cast<double>(used));
}

// --- aggregation and the curve ----------------------------------------------

namespace {

std::vector<int> strip_eos(const std::vector<int>& seq) {
  std::vector<int> out = seq;
  while (!out.empty() && out.back() == ctc::kEos) out.pop_back();
  return out;
}

}  // namespace

QualityMetrics score_quality(const std::vector<std::vector<int>>& hyp_text,
                             const std::vector<std::vector<int>>& hyp_units,
                             const std::vector<const toyspeech::Sample*>& refs) {
  if (hyp_text.size() != refs.size() || hyp_units.size() != refs.size()) {
    throw std::invalid_argument("score_quality: size mismatch");
  }
  QualityMetrics q;
  std::vector<std::vector<int>> ht, rt, ru;
  int exact = 0;
  for (size_t i = 0; i < refs.size(); ++i) {
    ht.push_back(strip_eos(hyp_text[i]));
    rt.push_back(strip_eos(refs[i]->target_tokens));
    ru.push_back(refs[i]->units);
    if (hyp_units[i] == refs[i]->units) ++exact;
  }
  q.text_bleu = corpus_bleu(ht, rt);
  q.unit_bleu = corpus_bleu(hyp_units, ru);
  q.unit_exact_match = static_cast<double>(exact) / static_cast<double>(refs.size());
  return q;
}

AggregateReport aggregate(const std::vector<MetricsReport>& per_sample,
                          const QualityMetrics& quality) {
  if (per_sample.empty()) {
    // Nothing was emitted anywhere; quality still stands, latency is vacuous.
    AggregateReport empty;
    empty.quality = quality;
    return empty;
  }
  AggregateReport agg;
  agg.num_samples = static_cast<int>(per_sample.size());
  double n = static_cast<double>(per_sample.size());
  auto add_lat = [](LatencyMetrics& dst, const LatencyMetrics& src) {
    dst.al += src.al;
    dst.ap += src.ap;
    dst.dal += src.dal;
    dst.start_offset += src.start_offset;
    dst.end_offset += src.end_offset;
    dst.laal += src.laal;
    dst.atd += src.atd;
  };
  auto div_lat = [n](LatencyMetrics& m) {
    m.al /= n;
    m.ap /= n;
    m.dal /= n;
    m.start_offset /= n;
    m.end_offset /= n;
    m.laal /= n;
    m.atd /= n;
  };
  for (const auto& r : per_sample) {
    add_lat(agg.ideal, r.ideal);
    add_lat(agg.ca, r.ca);
    agg.streaming.num_chunks += r.streaming.num_chunks;
    agg.streaming.rtf += r.streaming.rtf;
    agg.streaming.discontinuity_sum += r.streaming.discontinuity_sum;
    agg.streaming.discontinuity_ave += r.streaming.discontinuity_ave;
    agg.streaming.discontinuity_num += r.streaming.discontinuity_num;
  }
  div_lat(agg.ideal);
  div_lat(agg.ca);
  agg.streaming.num_chunks /= n;
  agg.streaming.rtf /= n;
  agg.streaming.discontinuity_sum /= n;
  agg.streaming.discontinuity_ave /= n;
  agg.streaming.discontinuity_num /= n;
  agg.quality = quality;
  return agg;
}

namespace {

json latency_json(const LatencyMetrics& m, const char* suffix) {
  json j;
  j[std::string("AL") + suffix] = m.al;
  j[std::string("AP") + suffix] = m.ap;
  j[std::string("DAL") + suffix] = m.dal;
  j[std::string("StartOffset") + suffix] = m.start_offset;
  j[std::string("EndOffset") + suffix] = m.end_offset;
  j[std::string("LAAL") + suffix] = m.laal;
  j[std::string("ATD") + suffix] = m.atd;
  return j;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

std::string AggregateReport::to_json() const {
  json j;
  j["latency"] = latency_json(ideal, "");
  j["latency_ca"] = latency_json(ca, "_CA");
  j["streaming"] = {{"NumChunks", streaming.num_chunks},
                    {"RTF", streaming.rtf},
                    {"DiscontinuitySum", streaming.discontinuity_sum},
                    {"DiscontinuityAve", streaming.discontinuity_ave},
                    {"DiscontinuityNum", streaming.discontinuity_num}};
  j["quality"] = {{"unit_bleu", quality.unit_bleu},
                  {"text_bleu", quality.text_bleu},
                  {"unit_exact_match", quality.unit_exact_match}};
  j["num_samples"] = num_samples;
  return j.dump(2);
}

std::string AggregateReport::csv_header() {
  return "label,AL,AP,DAL,StartOffset,EndOffset,LAAL,ATD,"
         "AL_CA,AP_CA,DAL_CA,StartOffset_CA,EndOffset_CA,LAAL_CA,ATD_CA,"
         "NumChunks,RTF,DiscontinuitySum,DiscontinuityAve,DiscontinuityNum,"
         "unit_bleu,text_bleu,unit_exact_match,num_samples";
}

std::string AggregateReport::csv_row(const std::string& label) const {
  std::string row = label;
  auto push = [&row](double v) { row += "," + fmt_double(v); };
  for (const LatencyMetrics* m : {&ideal, &ca}) {
    push(m->al);
    push(m->ap);
    push(m->dal);
    push(m->start_offset);
    push(m->end_offset);
    push(m->laal);
    push(m->atd);
  }
  push(streaming.num_chunks);
  push(streaming.rtf);
  push(streaming.discontinuity_sum);
  push(streaming.discontinuity_ave);
  push(streaming.discontinuity_num);
  push(quality.unit_bleu);
  push(quality.text_bleu);
  push(quality.unit_exact_match);
  row += "," + std::to_string(num_samples);
  return row;
}

SampleEval evaluate_sample(const model::Model& m, const toyspeech::Sample& sample,
                           const policy::InferenceOptions& opts) {
  SampleEval ev;
  ev.result = policy::run_simul_inference(m, sample.frames, opts);
  ev.report.ideal = compute_latency_metrics(ev.result.trace);
  ev.report.ca = compute_ca_metrics(ev.result.trace);
  ev.report.streaming = compute_streaming_degree(ev.result.trace);
  return ev;
}

std::vector<MetricsReport> evaluate_corpus(const model::Model& m, const toyspeech::Corpus& corpus,
                                           const policy::InferenceOptions& opts,
                                           QualityMetrics* quality_out,
                                           std::vector<policy::EmissionTrace>* traces_out,
                                           int num_threads) {
  const size_t n = corpus.samples.size();
  if (n == 0) throw std::invalid_argument("evaluate_corpus: empty corpus");
  std::vector<MetricsReport> reports(n);
  std::vector<std::vector<int>> hyp_text(n), hyp_units(n);
  std::vector<policy::EmissionTrace> traces(n);

  std::vector<char> has_output(n, 0);
  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= n) break;
      policy::InferenceResult result = policy::run_simul_inference(m, corpus.samples[i].frames, opts);
      if (!result.trace.t_ms.empty()) {
        has_output[i] = 1;
        reports[i].ideal = compute_latency_metrics(result.trace);
        reports[i].ca = compute_ca_metrics(result.trace);
        reports[i].streaming = compute_streaming_degree(result.trace);
      }
      hyp_text[i] = result.text_tokens;
      hyp_units[i] = result.units;
      traces[i] = std::move(result.trace);
    }
  };
  if (num_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < num_threads; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (quality_out) {
    std::vector<const toyspeech::Sample*> refs;
    for (const auto& s : corpus.samples) refs.push_back(&s);
    *quality_out = score_quality(hyp_text, hyp_units, refs);
  }
  if (traces_out) *traces_out = std::move(traces);
  // Latency statistics only exist for runs that produced output; quality
  // above already penalizes the silent ones.
  std::vector<MetricsReport> kept;
  kept.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    if (has_output[i]) kept.push_back(reports[i]);
  }
  return kept;
}

std::vector<CurveRow> quality_latency_curve(const model::Model& m,
                                            const toyspeech::Corpus& corpus,
                                            const std::vector<int>& chunk_grid,
                                            const policy::InferenceOptions& base_opts,
                                            int num_threads) {
  if (chunk_grid.empty()) throw std::invalid_argument("curve: empty chunk grid");
  std::vector<CurveRow> rows;
  for (int chunk : chunk_grid) {
    policy::InferenceOptions opts = base_opts;
    opts.chunk_frames = chunk;
    QualityMetrics quality;
    auto reports = evaluate_corpus(m, corpus, opts, &quality, nullptr, num_threads);
    rows.push_back({chunk, aggregate(reports, quality)});
  }
  std::sort(rows.begin(), rows.end(), [](const CurveRow& a, const CurveRow& b) {
    return a.report.ideal.al < b.report.ideal.al;
  });
  return rows;
}

}  // namespace simulstream::evalkit
