#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "simulstream/evalkit.hpp"
#include "simulstream/rng.hpp"
#include "support/naive_latency.hpp"

using namespace simulstream;
using namespace simulstream::evalkit;
using policy::EmissionTrace;

namespace {

// Trace with every output frame emitted at the stream end.
EmissionTrace offline_trace(double x_ms, double s_ms, double unit_ms = 20.0) {
  EmissionTrace tr;
  int frames = static_cast<int>(s_ms / unit_ms);
  tr.t_ms.assign(frames, x_ms);
  tr.t_ca_ms.assign(frames, x_ms);
  tr.x_ms = x_ms;
  tr.s_ms = s_ms;
  tr.unit_ms = unit_ms;
  tr.frame_ms = 40.0;
  tr.segments.push_back({x_ms, x_ms, frames});
  return tr;
}

EmissionTrace random_trace(Rng& rng) {
  EmissionTrace tr;
  tr.unit_ms = 20.0;
  tr.frame_ms = 40.0;
  int frames = rng.next_int(1, 40);
  tr.x_ms = rng.next_int(5, 100) * tr.frame_ms;
  double t = 0;
  for (int i = 0; i < frames; ++i) {
    t = std::min(tr.x_ms, t + rng.next_int(0, 5) * tr.frame_ms);
    tr.t_ms.push_back(t);
    tr.t_ca_ms.push_back(t + rng.next_double() * 300.0);
  }
  // Ensure the final frame lands at stream end half the time.
  if (rng.next_int(0, 1) == 1) {
    tr.t_ms.back() = tr.x_ms;
    tr.t_ca_ms.back() = std::max(tr.t_ca_ms.back(), tr.x_ms);
  }
  // Declared |S| sometimes differs from the emitted duration (over-generation).
  double emitted = frames * tr.unit_ms;
  tr.s_ms = rng.next_int(0, 1) == 0 ? emitted : emitted * (0.5 + rng.next_double());
  tr.s_ms = std::max(tr.s_ms, tr.unit_ms);
  tr.segments.push_back({tr.t_ms.front(), tr.t_ca_ms.front(), frames});
  return tr;
}

}  // namespace

TEST_CASE("offline fixture: formulas collapse to their boundary values") {
  auto tr = offline_trace(2000.0, 1000.0);
  auto m = compute_latency_metrics(tr);
  CHECK(m.ap == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(m.al == doctest::Approx(2000.0));
  CHECK(m.start_offset == doctest::Approx(2000.0));
  CHECK(m.end_offset == doctest::Approx(0.0));
  CHECK(m.laal == doctest::Approx(2000.0));
}

TEST_CASE("ideal four-frame fixture: AL=1, AP=0.625, DAL=1") {
  EmissionTrace tr;
  tr.t_ms = {1, 2, 3, 4};
  tr.t_ca_ms = {1, 2, 3, 4};
  tr.x_ms = 4;
  tr.s_ms = 4;
  tr.unit_ms = 1;
  tr.frame_ms = 1;
  tr.segments.push_back({1, 1, 4});
  auto m = compute_latency_metrics(tr);
  CHECK(m.al == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.ap == doctest::Approx(0.625).epsilon(1e-12));
  CHECK(m.dal == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.laal == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("LAAL equals AL whenever generation does not overshoot |S|") {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    auto tr = random_trace(rng);
    double emitted = tr.t_ms.size() * tr.unit_ms;
    auto m = compute_latency_metrics(tr);
    if (emitted <= tr.s_ms) {
      CHECK(m.laal == doctest::Approx(m.al).epsilon(1e-12));
    } else {
      // Over-generation: the length-adaptive ratio corrects AL upward.
      CHECK(m.laal >= m.al - 1e-9);
    }
  }
}

TEST_CASE("CA channel: zero compute time reproduces the ideal metrics") {
  auto tr = offline_trace(1200.0, 600.0);
  auto ideal = compute_latency_metrics(tr);
  auto ca = compute_ca_metrics(tr);
  CHECK(ca.al == ideal.al);
  CHECK(ca.ap == ideal.ap);
  CHECK(ca.dal == ideal.dal);
  CHECK(ca.atd == ideal.atd);
}

TEST_CASE("CA channel: a uniform 100ms shift moves AL_CA by exactly 100ms") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    auto tr = random_trace(rng);
    tr.t_ca_ms = tr.t_ms;
    for (double& v : tr.t_ca_ms) v += 100.0;
    auto ideal = compute_latency_metrics(tr);
    auto ca = compute_ca_metrics(tr);
    CHECK(ca.al == doctest::Approx(ideal.al + 100.0).epsilon(1e-9));
    CHECK(ca.start_offset == doctest::Approx(ideal.start_offset + 100.0));
    CHECK(ca.end_offset == doctest::Approx(ideal.end_offset + 100.0));
  }
}

TEST_CASE("CA metrics dominate ideal metrics when wall time lags") {
  Rng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    auto tr = random_trace(rng);
    auto ideal = compute_latency_metrics(tr);
    auto ca = compute_ca_metrics(tr);
    CHECK(ca.al >= ideal.al - 1e-9);
    CHECK(ca.ap >= ideal.ap - 1e-9);
    CHECK(ca.dal >= ideal.dal - 1e-9);
    CHECK(ca.start_offset >= ideal.start_offset - 1e-9);
    CHECK(ca.end_offset >= ideal.end_offset - 1e-9);
    CHECK(ca.laal >= ideal.laal - 1e-9);
    CHECK(ca.atd >= ideal.atd - 1e-9);
  }
}

TEST_CASE("metrics agree with the naive second evaluator on random traces") {
  Rng rng(17);
  for (int trial = 0; trial < 1000; ++trial) {
    auto tr = random_trace(rng);
    auto m = compute_latency_metrics(tr);
    naive_latency::Inputs in;
    in.d = tr.t_ms;
    in.x = tr.x_ms;
    in.s = tr.s_ms;
    in.q = tr.unit_ms;
    in.tau = static_cast<int>(tr.t_ms.size());
    for (size_t i = 0; i < tr.t_ms.size(); ++i) {
      if (tr.t_ms[i] >= tr.x_ms) {
        in.tau = static_cast<int>(i) + 1;
        break;
      }
    }
    CHECK(m.al == doctest::Approx(naive_latency::average_lagging(in)).epsilon(1e-9));
    CHECK(m.ap == doctest::Approx(naive_latency::average_proportion(in)).epsilon(1e-9));
    CHECK(m.dal ==
          doctest::Approx(naive_latency::differentiable_average_lagging(in)).epsilon(1e-9));
    CHECK(m.laal ==
          doctest::Approx(naive_latency::length_adaptive_average_lagging(in)).epsilon(1e-9));
  }
}

TEST_CASE("metrics are pure functions of the trace") {
  Rng rng(19);
  auto tr = random_trace(rng);
  auto a = compute_latency_metrics(tr);
  auto b = compute_latency_metrics(tr);
  CHECK(a.al == b.al);
  CHECK(a.atd == b.atd);
  CHECK(std::memcmp(&a, &b, sizeof(a)) == 0);
}

TEST_CASE("streaming degree: single segment at stream end") {
  auto tr = offline_trace(2000.0, 800.0);
  auto sd = compute_streaming_degree(tr);
  CHECK(sd.num_chunks == 1.0);
  CHECK(sd.discontinuity_num == 0.0);
  CHECK(sd.discontinuity_sum == 0.0);
  CHECK(sd.rtf == doctest::Approx(1.0));
}

TEST_CASE("streaming degree: the hand-built two-segment gap") {
  EmissionTrace tr;
  tr.unit_ms = 20.0;
  tr.frame_ms = 40.0;
  tr.x_ms = 960.0;
  // seg1 emitted at 320ms, 100ms of audio (5 frames); seg2 at 640ms.
  tr.segments.push_back({320.0, 320.0, 5});
  tr.segments.push_back({640.0, 640.0, 3});
  for (int i = 0; i < 5; ++i) {
    tr.t_ms.push_back(320.0);
    tr.t_ca_ms.push_back(320.0);
  }
  for (int i = 0; i < 3; ++i) {
    tr.t_ms.push_back(640.0);
    tr.t_ca_ms.push_back(640.0);
  }
  tr.s_ms = 8 * 20.0;
  auto sd = compute_streaming_degree(tr);
  CHECK(sd.num_chunks == 2.0);
  CHECK(sd.discontinuity_num == 1.0);
  CHECK(sd.discontinuity_sum == doctest::Approx(220.0));
  CHECK(sd.discontinuity_ave == doctest::Approx(220.0));
}

TEST_CASE("streaming degree: back-to-back segments leave no gap") {
  EmissionTrace tr;
  tr.unit_ms = 20.0;
  tr.x_ms = 800.0;
  tr.segments.push_back({320.0, 320.0, 4});  // plays until 400
  tr.segments.push_back({400.0, 400.0, 2});  // starts exactly at playback end
  for (int i = 0; i < 4; ++i) tr.t_ms.push_back(320.0);
  for (int i = 0; i < 2; ++i) tr.t_ms.push_back(400.0);
  tr.t_ca_ms = tr.t_ms;
  tr.s_ms = 6 * 20.0;
  auto sd = compute_streaming_degree(tr);
  CHECK(sd.discontinuity_num == 0.0);
  CHECK(sd.discontinuity_sum == 0.0);
}

TEST_CASE("RTF cross-check: (|X| + EndOffset) / |X| equals RTF") {
  Rng rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    auto tr = random_trace(rng);
    auto m = compute_latency_metrics(tr);
    auto sd = compute_streaming_degree(tr);
    CHECK(sd.rtf == doctest::Approx((tr.x_ms + m.end_offset) / tr.x_ms).epsilon(1e-12));
  }
}

TEST_CASE("missing wall-clock channel is rejected") {
  auto tr = offline_trace(1000.0, 500.0);
  tr.t_ca_ms.pop_back();
  CHECK_THROWS_AS(compute_ca_metrics(tr), std::invalid_argument);
}

TEST_CASE("empty trace is rejected") {
  EmissionTrace tr;
  tr.x_ms = 100;
  tr.s_ms = 100;
  CHECK_THROWS_AS(compute_latency_metrics(tr), std::invalid_argument);
}

TEST_CASE("bleu: perfect hypotheses score 100") {
  std::vector<std::vector<int>> refs = {{3, 4, 5, 6, 7}, {4, 4, 5}};
  CHECK(corpus_bleu(refs, refs) == doctest::Approx(100.0));
}

TEST_CASE("bleu: disjoint vocabularies score 0") {
  std::vector<std::vector<int>> hyp = {{3, 4, 5, 6}};
  std::vector<std::vector<int>> ref = {{7, 8, 9, 10}};
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(0.0));
}

TEST_CASE("bleu: hand-derived single pair") {
  // hyp [a,b,c,d] vs ref [a,b,c,c]:
  // p1 = 3/4, p2 = 2/3, p3 = 1/2, p4 = 0/1 -> smoothed 1/2; BP = 1.
  std::vector<std::vector<int>> hyp = {{3, 4, 5, 6}};
  std::vector<std::vector<int>> ref = {{3, 4, 5, 5}};
  double want = 100.0 * std::pow(0.75 * (2.0 / 3.0) * 0.5 * 0.5, 0.25);
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(want).epsilon(1e-12));
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(59.4603557501).epsilon(1e-9));
}

TEST_CASE("bleu: brevity penalty for short hypotheses") {
  std::vector<std::vector<int>> hyp = {{3, 4}};
  std::vector<std::vector<int>> ref = {{3, 4, 5, 6}};
  // p1 = 1, p2 = 1, BP = exp(1 - 4/2).
  double want = 100.0 * std::exp(1.0 - 2.0);
  CHECK(corpus_bleu(hyp, ref) == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("bleu: empty reference is rejected") {
  std::vector<std::vector<int>> hyp = {{3}};
  std::vector<std::vector<int>> ref = {{}};
  CHECK_THROWS_AS(corpus_bleu(hyp, ref), std::invalid_argument);
}

TEST_CASE("aggregate: report serialization carries every metric") {
  auto tr = offline_trace(2000.0, 1000.0);
  MetricsReport r;
  r.ideal = compute_latency_metrics(tr);
  r.ca = compute_ca_metrics(tr);
  r.streaming = compute_streaming_degree(tr);
  QualityMetrics q;
  q.unit_bleu = 77.0;
  q.text_bleu = 88.0;
  q.unit_exact_match = 0.5;
  auto agg = aggregate({r, r}, q);
  CHECK(agg.num_samples == 2);
  CHECK(agg.ideal.al == doctest::Approx(2000.0));
  auto js = agg.to_json();
  CHECK(js.find("\"AL\"") != std::string::npos);
  CHECK(js.find("\"AL_CA\"") != std::string::npos);
  CHECK(js.find("unit_bleu") != std::string::npos);
  auto header = AggregateReport::csv_header();
  auto row = agg.csv_row("C=8");
  CHECK(std::count(header.begin(), header.end(), ',') ==
        std::count(row.begin(), row.end(), ','));
}
