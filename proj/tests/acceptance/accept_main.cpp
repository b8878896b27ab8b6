// Acceptance suite: one pass/fail line per criterion, nonzero exit when any
// criterion fails. Heavy end-to-end pieces (corpus generation, two training
// runs, evaluation sweeps) run inside; expect roughly half an hour.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <array>
#include <cstdarg>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "simulstream/evalkit.hpp"
#include "simulstream/ops.hpp"
#include "simulstream/policy.hpp"
#include "simulstream/rng.hpp"
#include "support/brute_ctc.hpp"
#include "support/finite_diff.hpp"
#include "support/naive_latency.hpp"

namespace fs = std::filesystem;
using namespace simulstream;
namespace ts = simulstream::testsupport;

namespace {

int g_failures = 0;

void report(int criterion, bool ok, const std::string& detail) {
  std::printf("[%s] criterion %d: %s\n", ok ? "PASS" : "FAIL", criterion, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

void report_extra(const char* name, bool ok, const std::string& detail) {
  std::printf("[%s] extra: %s (%s)\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

Tensor random_dist(Rng& rng, int64_t t, int64_t v, const std::vector<int>& active_cols) {
  std::vector<double> vals(t * v, 0.0);
  for (int64_t r = 0; r < t; ++r) {
    double z = 0.0;
    for (int c : active_cols) {
      double e = std::exp(rng.next_normal());
      vals[r * v + c] = e;
      z += e;
    }
    for (int c : active_cols) vals[r * v + c] /= z;
  }
  return Tensor::from({t, v}, std::move(vals));
}

Tensor log_of(const Tensor& probs, bool requires_grad = false) {
  std::vector<double> lp(probs.values().begin(), probs.values().end());
  for (double& x : lp) x = x > 0.0 ? std::log(x) : -1e30;
  return Tensor::from(probs.shape(), std::move(lp), requires_grad);
}

// --- criterion 1: forward algorithm vs exhaustive path enumeration ----------

void criterion_1() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  // Alphabet: blank plus 3 tokens (ids 3..5), labels enumerated over the 4
  // active columns. Exhaustive targets with |Y| <= 3.
  const std::vector<int> labels = {ctc::kBlank, 3, 4, 5};
  std::vector<std::vector<int>> targets = {{}};
  for (size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].size() == 3) continue;
    for (int tok : {3, 4, 5}) {
      auto y = targets[i];
      y.push_back(tok);
      targets.push_back(std::move(y));
    }
  }
  std::map<std::vector<int>, int> target_index;
  for (size_t i = 0; i < targets.size(); ++i) target_index[targets[i]] = static_cast<int>(i);

  // For each T, every label path and the index of its collapsed target
  // (-1 when longer than 3 tokens). Computed once; tables only multiply.
  struct PathEntry {
    std::array<int8_t, 6> cols;
    int target = -1;
  };
  std::array<std::vector<PathEntry>, 7> paths_by_t;
  for (int t = 1; t <= 6; ++t) {
    std::vector<int> path(t, 0);
    while (true) {
      PathEntry e;
      std::vector<int> symbols(t);
      for (int i = 0; i < t; ++i) {
        e.cols[i] = static_cast<int8_t>(labels[path[i]]);
        symbols[i] = labels[path[i]];
      }
      auto collapsed = ctc::collapse(symbols);
      auto it = target_index.find(collapsed);
      e.target = it == target_index.end() ? -1 : it->second;
      paths_by_t[t].push_back(e);
      int pos = t - 1;
      while (pos >= 0 && path[pos] == 3) path[pos--] = 0;
      if (pos < 0) break;
      ++path[pos];
    }
  }

  long checked = 0, tables = 0;
  double worst = 0.0;
  bool ok = true;
  for (int trial = 0; trial < 500 && ok; ++trial) {
    int t = rng.next_int(1, 6);
    auto probs = random_dist(rng, t, 6, labels);
    ++tables;
    std::vector<double> mass(targets.size(), 0.0);
    auto pv = probs.values();
    for (const auto& e : paths_by_t[t]) {
      double p = 1.0;
      for (int i = 0; i < t; ++i) p *= pv[i * 6 + e.cols[i]];
      if (e.target >= 0) mass[e.target] += p;
    }
    auto lp = log_of(probs);
    for (size_t yi = 0; yi < targets.size(); ++yi) {
      double got = ctc::ctc_loss(lp, targets[yi]).scalar_value();
      double want = mass[yi] > 0.0 ? -std::log(mass[yi])
                                   : std::numeric_limits<double>::infinity();
      if (std::isinf(want) || std::isinf(got)) {
        if (std::isinf(want) != std::isinf(got)) ok = false;
      } else {
        worst = std::max(worst, std::abs(got - want));
        if (std::abs(got - want) > 1e-9) ok = false;
      }
      ++checked;
    }
  }
  double el = seconds_since(t0);
  ok = ok && el < 30.0;
  report(1, ok,
         fmt("CTC forward equals path enumeration on %ld instances over %ld tables "
             "(worst |diff| %.2e, %.1fs < 30s)",
             checked, tables, worst, el));
}

// --- criterion 2: CTC gradients vs finite differences ------------------------

void criterion_2() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(202);
  const std::vector<int> active = {ctc::kBlank, 3, 4};
  int done = 0;
  double worst = 0.0;
  while (done < 100) {
    int t = rng.next_int(2, 5);
    auto probs = random_dist(rng, t, 5, active);
    int y_len = rng.next_int(1, 2);
    std::vector<int> y;
    for (int i = 0; i < y_len; ++i) y.push_back(rng.next_int(3, 4));
    if (!ctc::ctc_feasible(t, y)) continue;
    std::vector<double> lp0(probs.values().begin(), probs.values().end());
    for (double& x : lp0) x = std::log(x);
    auto lp = Tensor::from({t, 5}, lp0, true);
    auto loss = ctc::ctc_loss(lp, y);
    loss.backward();
    std::vector<double> analytic(lp.grad().begin(), lp.grad().end());
    auto numeric = ts::finite_difference(
        [&](const std::vector<double>& vals) {
          return ctc::ctc_loss(Tensor::from({t, 5}, vals), y).scalar_value();
        },
        lp0);
    worst = std::max(worst, ts::max_rel_err(analytic, numeric));
    ++done;
  }
  double el = seconds_since(t0);
  bool ok = worst <= 1e-5 && el < 60.0;
  report(2, ok,
         fmt("CTC gradients match finite differences on %d instances "
             "(worst rel err %.2e <= 1e-5, %.1fs < 60s)",
             done, worst, el));
}

// --- criterion 3: expected prefix counts -------------------------------------

void criterion_3() {
  Rng rng(303);
  bool ok = true;
  for (int trial = 0; trial < 200; ++trial) {
    int t = rng.next_int(1, 15);
    std::vector<int> path(t);
    for (int& s : path) s = rng.next_int(2, 7);
    std::vector<double> vals(t * 8, 0.0);
    for (int i = 0; i < t; ++i) vals[i * 8 + path[i]] = 1.0;
    auto dist = Tensor::from({t, 8}, std::move(vals));
    auto counts = ctc::expected_prefix_counts(dist);
    for (int j = 0; j < t; ++j) {
      int want = static_cast<int>(
          ctc::collapse(std::span<const int>(path).subspan(0, j + 1)).size());
      if (counts[j] != static_cast<double>(want)) ok = false;
    }
  }
  bool bounds_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    int t = rng.next_int(1, 12);
    int v = rng.next_int(4, 9);
    std::vector<int> active(v);
    for (int i = 0; i < v; ++i) active[i] = i;
    auto dist = random_dist(rng, t, v, active);
    auto counts = ctc::expected_prefix_counts(dist);
    double prev = 0.0;
    for (int j = 0; j < t; ++j) {
      if (counts[j] < -1e-12 || counts[j] > j + 1 + 1e-12 || counts[j] < prev - 1e-12) {
        bounds_ok = false;
      }
      prev = counts[j];
    }
  }
  report(3, ok && bounds_ok,
         fmt("expected counts equal collapse counts on 200 one-hot tables (exact: %s); "
             "bounds and monotonicity hold on 1000 soft tables (%s)",
             ok ? "yes" : "no", bounds_ok ? "yes" : "no"));
}

// --- criterion 4: streaming causality ----------------------------------------

void criterion_4() {
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(404);
  double worst = 0.0;
  bool exact_inf = true;
  NoGradGuard ng;
  for (int trial = 0; trial < 12; ++trial) {
    model::ModelConfig cfg;
    cfg.frame_dim = 10;
    cfg.width = 32;
    cfg.heads = 4;
    cfg.enc_layers = 2;
    cfg.conv_kernel = 7;
    cfg.dec_layers = 2;
    cfg.t2u_enc_layers = 1;
    cfg.unit_dec_layers = 1;
    cfg.ffn_mult = 2;
    cfg.src_vocab = 5;
    cfg.tgt_vocab = 5;
    cfg.unit_vocab = 6;
    cfg.upsample_rate = 3;
    cfg.init_seed = 1000 + trial;
    model::Model m(cfg);

    int t = rng.next_int(6, 40);
    int chunk = rng.next_int(1, 8);
    std::vector<std::vector<double>> frames(t, std::vector<double>(cfg.frame_dim));
    for (auto& row : frames)
      for (double& v : row) v = rng.next_normal();
    std::vector<double> flat;
    for (auto& r : frames) flat.insert(flat.end(), r.begin(), r.end());
    auto frames_tensor = Tensor::from({t, cfg.frame_dim}, flat);

    auto full = m.encode(frames_tensor, chunk);
    auto [asr_full, nar_full] = m.probe_probs(full);

    auto cache = m.make_encoder_cache(chunk);
    int fed = 0;
    while (fed < t) {
      int c = std::min(chunk, t - fed);
      m.encode_chunk(cache, {frames.begin() + fed, frames.begin() + fed + c});
      fed += c;
      for (int64_t i = 0; i < cache.h.size(); ++i) {
        worst = std::max(worst, std::abs(cache.h.value_at(i) - full.value_at(i)));
      }
    }
    auto [asr_inc, nar_inc] = m.probe_probs(cache.h);
    for (int64_t i = 0; i < asr_full.size(); ++i) {
      worst = std::max(worst, std::abs(asr_full.value_at(i) - asr_inc.value_at(i)));
    }
    for (int64_t i = 0; i < nar_full.size(); ++i) {
      worst = std::max(worst, std::abs(nar_full.value_at(i) - nar_inc.value_at(i)));
    }

    // Masked teacher-forced decoding vs incremental steps with a growing H.
    std::vector<int> y, g;
    int y_len = rng.next_int(1, 6);
    for (int i = 0; i < y_len; ++i) y.push_back(rng.next_int(3, 7));
    y.push_back(ctc::kEos);
    int glast = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      glast = std::max(glast + rng.next_int(0, (t - glast) / 2), 1);
      g.push_back(std::min(glast, t));
    }
    auto [logits, d_text] = m.decode_teacher_forced(full, y, g);
    auto state = m.make_decoder_state();
    int prev = ctc::kEos;
    for (size_t i = 0; i < y.size(); ++i) {
      auto h_prefix = ops::slice_rows(full, 0, g[i]);
      auto step = m.decode_step(state, h_prefix, prev);
      for (int64_t c = 0; c < step.hidden.size(); ++c) {
        worst = std::max(worst, std::abs(step.hidden.value_at(c) -
                                         d_text.value_at(i * d_text.dim(1) + c)));
      }
      prev = y[i];
    }

    // Infinite chunk against the unmasked encoder, bit for bit.
    auto inf_masked = m.encode(frames_tensor, t + rng.next_int(0, 5));
    auto unmasked = m.encode(frames_tensor, model::kChunkInfinity);
    for (int64_t i = 0; i < unmasked.size(); ++i) {
      if (inf_masked.value_at(i) != unmasked.value_at(i)) exact_inf = false;
    }
  }
  double el = seconds_since(t0);
  bool ok = worst <= 1e-9 && exact_inf && el < 120.0;
  report(4, ok,
         fmt("incremental encode/probe/decode equals full-sequence prefixes "
             "(worst |diff| %.2e <= 1e-9; C=inf exact: %s; %.1fs < 120s)",
             worst, exact_inf ? "yes" : "no", el));
}

// --- criterion 5: latency formulas -------------------------------------------

policy::EmissionTrace random_trace(Rng& rng) {
  policy::EmissionTrace tr;
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
  double emitted = frames * tr.unit_ms;
  tr.s_ms = rng.next_int(0, 1) == 0 ? emitted : std::max(tr.unit_ms, emitted * (0.5 + rng.next_double()));
  tr.segments.push_back({tr.t_ms.front(), tr.t_ca_ms.front(), frames});
  return tr;
}

void criterion_5() {
  bool ok = true;
  std::string why;
  {
    policy::EmissionTrace tr;
    int frames = 50;
    tr.t_ms.assign(frames, 2000.0);
    tr.t_ca_ms.assign(frames, 2000.0);
    tr.x_ms = 2000.0;
    tr.s_ms = 1000.0;
    tr.unit_ms = 20.0;
    tr.frame_ms = 40.0;
    tr.segments.push_back({2000.0, 2000.0, frames});
    auto m = evalkit::compute_latency_metrics(tr);
    if (std::abs(m.ap - 1.0) > 1e-9 || std::abs(m.al - 2000.0) > 1e-9 ||
        std::abs(m.end_offset) > 1e-9 || std::abs(m.start_offset - 2000.0) > 1e-9) {
      ok = false;
      why = "offline fixture mismatch";
    }
  }
  {
    policy::EmissionTrace tr;
    tr.t_ms = {1, 2, 3, 4};
    tr.t_ca_ms = {1, 2, 3, 4};
    tr.x_ms = 4;
    tr.s_ms = 4;
    tr.unit_ms = 1;
    tr.frame_ms = 1;
    tr.segments.push_back({1, 1, 4});
    auto m = evalkit::compute_latency_metrics(tr);
    if (std::abs(m.al - 1.0) > 1e-12 || std::abs(m.ap - 0.625) > 1e-12 ||
        std::abs(m.dal - 1.0) > 1e-12) {
      ok = false;
      why = "hand-derived 4-frame fixture mismatch";
    }
  }
  Rng rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto tr = random_trace(rng);
    auto m = evalkit::compute_latency_metrics(tr);
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
    worst = std::max({worst, std::abs(m.al - naive_latency::average_lagging(in)),
                      std::abs(m.ap - naive_latency::average_proportion(in)),
                      std::abs(m.dal - naive_latency::differentiable_average_lagging(in)),
                      std::abs(m.laal - naive_latency::length_adaptive_average_lagging(in))});
  }
  if (worst > 1e-9) {
    ok = false;
    why = "naive evaluator disagreement";
  }
  report(5, ok,
         fmt("offline and 4-frame fixtures exact; 1000 random traces agree with the naive "
             "evaluator (worst |diff| %.2e <= 1e-9)%s%s",
             worst, why.empty() ? "" : "; ", why.c_str()));
}

}  // namespace

// --- criteria 6..8 + extras require the trained models -----------------------

int main(int argc, char** argv) {
  std::string cli_path, work_dir;
  for (int i = 1; i + 1 < argc; i += 2) {
    std::string key = argv[i];
    if (key == "--cli") cli_path = argv[i + 1];
    if (key == "--work") work_dir = argv[i + 1];
  }
  if (cli_path.empty() || work_dir.empty()) {
    std::fprintf(stderr, "usage: accept_suite --cli <simulstream binary> --work <dir>\n");
    return 2;
  }
  fs::create_directories(work_dir);

  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();

  // Shared toy setup for the end-to-end criteria: default spec, default model.
  toyspeech::ToyLanguageSpec spec;
  auto corpus = toyspeech::synthesize_corpus(spec, 5000);
  auto test_set = toyspeech::synthesize_corpus(spec, 300, "test");

  model::ModelConfig cfg;
  cfg.frame_dim = spec.frame_dim;
  cfg.src_vocab = spec.source_vocab_size;
  cfg.tgt_vocab = spec.target_vocab_size;
  cfg.unit_vocab = spec.unit_vocab_size;
  cfg.upsample_rate = model::derive_upsample_rate(corpus);
  cfg.init_seed = 1;

  model::TrainOptions topts;
  topts.steps = 3000;
  topts.batch_size = 8;
  topts.seed = 1;

  std::printf("... training the multi-chunk model (%lld steps, batch %d)\n",
              static_cast<long long>(topts.steps), topts.batch_size);
  std::fflush(stdout);
  auto t_train = std::chrono::steady_clock::now();
  model::Model multi(cfg);
  model::train(multi, corpus, topts);
  double train_s = seconds_since(t_train);

  // --- criterion 6: wait-k exactness + adaptive policy sanity ---
  {
    auto wspec = spec;
    wspec.sentence_length_range = {9, 10};
    wspec.token_duration_range = {5, 6};
    auto wcorp = toyspeech::synthesize_corpus(wspec, 25, "waitk");
    bool exact = true;
    int checked = 0;
    for (int k : {1, 3, 5}) {
      for (const auto& s : wcorp.samples) {
        if (static_cast<int>(s.frames.size()) <= 8 * k) continue;  // wait covers the stream
        policy::InferenceOptions io;
        io.chunk_frames = 8;
        auto res = policy::run_waitk_inference(multi, s.frames, k, io);
        ++checked;
        if (res.trace.t_ms.empty() || res.trace.t_ms.front() != k * 320.0) exact = false;
      }
    }
    int policy_ok = 0;
    const int policy_runs = 500;
    auto pcorp = toyspeech::synthesize_corpus(spec, policy_runs, "policy");
    Rng prng(606);
    for (const auto& s : pcorp.samples) {
      policy::InferenceOptions io;
      io.chunk_frames = prng.next_int(2, 12);
      auto res = policy::run_simul_inference(multi, s.frames, io);
      bool mono = true;
      for (size_t i = 1; i < res.trace.g_frames.size(); ++i) {
        if (res.trace.g_frames[i] < res.trace.g_frames[i - 1]) mono = false;
      }
      bool terminated = !res.text_tokens.empty() && res.text_tokens.back() == ctc::kEos &&
                        !res.trace.cap_hit;
      if (mono && terminated) ++policy_ok;
    }
    bool ok = exact && policy_ok == policy_runs && checked >= 30;
    report(6, ok,
           fmt("wait-k first emission at exactly k*320ms on %d runs (k in {1,3,5}): %s; "
               "adaptive policy monotone g and termination: %d/%d",
               checked, exact ? "yes" : "no", policy_ok, policy_runs));
  }

  // --- criterion 7: end-to-end toy reproduction ---
  double multi_c2_bleu = 0.0;
  {
    bool time_ok = train_s <= 1800.0;

    policy::InferenceOptions off;
    off.chunk_frames = model::kChunkInfinity;
    evalkit::QualityMetrics offline_q;
    evalkit::evaluate_corpus(multi, test_set, off, &offline_q, nullptr);

    std::vector<double> bleu_curve;
    for (int c : {2, 4, 8, 16, model::kChunkInfinity}) {
      policy::InferenceOptions io;
      io.chunk_frames = c;
      evalkit::QualityMetrics q;
      evalkit::evaluate_corpus(multi, test_set, io, &q, nullptr);
      bleu_curve.push_back(q.unit_bleu);
    }
    multi_c2_bleu = bleu_curve[0];
    bool trend_ok = true;
    for (size_t i = 1; i < bleu_curve.size(); ++i) {
      if (bleu_curve[i] < bleu_curve[i - 1] - 2.0) trend_ok = false;
    }

    model::Model offline_model(cfg);
    model::TrainOptions oopts = topts;
    oopts.chunk_mode = model::ChunkMode::kOffline;
    std::printf("... training the offline-only model for the collapse check\n");
    std::fflush(stdout);
    model::train(offline_model, corpus, oopts);
    policy::InferenceOptions c2;
    c2.chunk_frames = 2;
    evalkit::QualityMetrics qoff;
    evalkit::evaluate_corpus(offline_model, test_set, c2, &qoff, nullptr);
    bool collapse_ok = qoff.unit_bleu <= multi_c2_bleu - 20.0;

    bool quality_ok = offline_q.unit_exact_match >= 0.80 && offline_q.unit_bleu >= 60.0;
    bool ok = time_ok && quality_ok && trend_ok && collapse_ok;
    report(7, ok,
           fmt("train %.0fs <= 1800s; offline unit EM %.3f >= 0.80, unit BLEU %.2f >= 60; "
               "BLEU over C {2,4,8,16,inf} = {%.2f, %.2f, %.2f, %.2f, %.2f} non-decreasing "
               "within 2; offline-trained at C=2 scores %.2f <= %.2f - 20",
               train_s, offline_q.unit_exact_match, offline_q.unit_bleu, bleu_curve[0],
               bleu_curve[1], bleu_curve[2], bleu_curve[3], bleu_curve[4], qoff.unit_bleu,
               multi_c2_bleu));
  }

  // --- extras: train-dependent spec examples ---
  {
    auto nspec = spec;
    nspec.noise_std = 0.0;
    auto ncorp = toyspeech::synthesize_corpus(nspec, 200, "noise0");
    NoGradGuard ng;
    long frames_total = 0, frames_in_span = 0;
    int asr_token_hits = 0, asr_tokens = 0;
    int first_write_ok = 0, first_write_total = 0;
    for (const auto& s : ncorp.samples) {
      std::vector<double> flat;
      for (const auto& r : s.frames) flat.insert(flat.end(), r.begin(), r.end());
      auto h = multi.encode(
          Tensor::from({(int64_t)s.frames.size(), (int64_t)s.frames[0].size()}, flat),
          model::kChunkInfinity);
      auto [asr_probs, nar_probs] = multi.probe_probs(h);
      // greedy token accuracy
      auto hyp = ctc::greedy_decode(asr_probs);
      for (size_t i = 0; i < std::min(hyp.size(), s.source_tokens.size()); ++i) {
        if (hyp[i] == s.source_tokens[i]) ++asr_token_hits;
      }
      asr_tokens += static_cast<int>(s.source_tokens.size());
      // non-blank label positions inside the true token spans
      auto path = ctc::argmax_path(asr_probs);
      std::vector<int> owner(path.size());
      {
        int tok = 0, left = s.source_spans[0];
        for (size_t f = 0; f < path.size(); ++f) {
          owner[f] = tok;
          if (--left == 0 && tok + 1 < (int)s.source_spans.size()) left = s.source_spans[++tok];
        }
      }
      for (size_t f = 0; f < path.size(); ++f) {
        if (path[f] == ctc::kBlank) continue;
        ++frames_total;
        if (path[f] == s.source_tokens[owner[f]]) ++frames_in_span;
      }
      // no WRITE before the first source token completes
      policy::InferenceOptions io;
      io.chunk_frames = 4;
      auto res = policy::run_simul_inference(multi, s.frames, io);
      if (!res.trace.g_frames.empty()) {
        ++first_write_total;
        if (res.trace.g_frames.front() >= s.source_spans.front()) ++first_write_ok;
      }
    }
    double acc = asr_tokens ? double(asr_token_hits) / asr_tokens : 0.0;
    report_extra("ASR probe token accuracy on held-out noise-0 data",
                 acc >= 0.95, fmt("%.3f >= 0.95", acc));
    double span = frames_total ? double(frames_in_span) / frames_total : 0.0;
    report_extra("non-blank ASR labels inside true token spans", span >= 0.90,
                 fmt("%.3f >= 0.90", span));
    double fw = first_write_total ? double(first_write_ok) / first_write_total : 0.0;
    report_extra("first WRITE at or after the end of source token 1", fw >= 0.95,
                 fmt("%.3f >= 0.95 over %d runs", fw, first_write_total));
  }
  {
    policy::InferenceOptions io8;
    io8.chunk_frames = 8;
    policy::InferenceOptions io16;
    io16.chunk_frames = 16;
    evalkit::QualityMetrics q8, q16;
    auto r8 = evalkit::aggregate(evalkit::evaluate_corpus(multi, test_set, io8, &q8, nullptr), q8);
    auto r16 =
        evalkit::aggregate(evalkit::evaluate_corpus(multi, test_set, io16, &q16, nullptr), q16);
    report_extra("mean AL at C=8 below mean AL at C=16", r8.ideal.al < r16.ideal.al,
                 fmt("%.2f < %.2f", r8.ideal.al, r16.ideal.al));
  }

  // --- criterion 8: CLI determinism ---
  {
    auto run = [&](const std::string& args) {
      std::string cmd = cli_path + " " + args + " >/dev/null 2>&1";
      int rc = std::system(cmd.c_str());
      return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(in), {});
    };
    fs::path w = work_dir;
    bool ok = true;
    ok &= run("gen-data --out " + (w / "data").string() + " --n 120 --seed 7") == 0;
    for (const char* tag : {"r1", "r2"}) {
      ok &= run("train --corpus " + (w / "data/train.jsonl").string() + " --out " +
                (w / tag).string() +
                " --steps 30 --batch-size 4 --seed 7 --width 32 --enc-layers 1 --dec-layers 1"
                " --t2u-layers 1 --unit-layers 1 --ffn-mult 2 --warmup 10") == 0;
      ok &= run("eval --ckpt " + (w / tag / "ckpt.json").string() + " --corpus " +
                (w / "data/test.jsonl").string() + " --out " + (w / tag / "ev").string() +
                " --mode simul --C 4 --seed 7") == 0;
    }
    bool same = ok;
    same &= slurp(w / "r1/ckpt.bin") == slurp(w / "r2/ckpt.bin");
    same &= !slurp(w / "r1/ckpt.bin").empty();
    same &= slurp(w / "r1/ckpt.json") == slurp(w / "r2/ckpt.json");
    same &= slurp(w / "r1/ev/report.csv") == slurp(w / "r2/ev/report.csv");
    same &= slurp(w / "r1/ev/report.json") == slurp(w / "r2/ev/report.json");
    bool traces_same = true;
    for (const auto& entry : fs::directory_iterator(w / "r1/ev/traces")) {
      auto other = w / "r2/ev/traces" / entry.path().filename();
      if (slurp(entry.path()) != slurp(other)) traces_same = false;
    }
    report(8, same && traces_same,
           fmt("two cmd_train/cmd_eval runs with --seed 7: checkpoints, traces and CSVs "
               "byte-identical (%s)",
               same && traces_same ? "yes" : "no"));
  }

  std::printf("%s: %d criterion failure(s)\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              g_failures);
  return g_failures == 0 ? 0 : 1;
}
