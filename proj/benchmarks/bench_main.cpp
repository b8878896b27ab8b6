#include <benchmark/benchmark.h>

#include "simulstream/evalkit.hpp"
#include "simulstream/ops.hpp"
#include "simulstream/policy.hpp"
#include "simulstream/rng.hpp"

using namespace simulstream;

namespace {

model::ModelConfig bench_config() {
  model::ModelConfig cfg;
  cfg.frame_dim = 16;
  cfg.src_vocab = 10;
  cfg.tgt_vocab = 10;
  cfg.unit_vocab = 20;
  cfg.upsample_rate = 10;
  cfg.init_seed = 3;
  return cfg;
}

std::vector<std::vector<double>> bench_frames(int t, int dim) {
  Rng rng(11);
  std::vector<std::vector<double>> x(t, std::vector<double>(dim));
  for (auto& row : x)
    for (double& v : row) v = rng.next_normal();
  return x;
}

Tensor to_tensor(const std::vector<std::vector<double>>& fr) {
  std::vector<double> v;
  for (const auto& r : fr) v.insert(v.end(), r.begin(), r.end());
  return Tensor::from({(int64_t)fr.size(), (int64_t)fr[0].size()}, std::move(v));
}

}  // namespace

static void BM_EncodeForward(benchmark::State& state) {
  auto cfg = bench_config();
  model::Model m(cfg);
  auto frames = to_tensor(bench_frames(40, cfg.frame_dim));
  NoGradGuard ng;
  int chunk = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.encode(frames, chunk));
  }
}
BENCHMARK(BM_EncodeForward)->Arg(2)->Arg(8)->Arg(0);  // 0 = offline

static void BM_EncodeChunkIncremental(benchmark::State& state) {
  auto cfg = bench_config();
  model::Model m(cfg);
  auto frames = bench_frames(40, cfg.frame_dim);
  NoGradGuard ng;
  for (auto _ : state) {
    auto cache = m.make_encoder_cache(8);
    for (int at = 0; at < 40; at += 8) {
      m.encode_chunk(cache, {frames.begin() + at, frames.begin() + at + 8});
    }
    benchmark::DoNotOptimize(cache.h);
  }
}
BENCHMARK(BM_EncodeChunkIncremental);

static void BM_CtcLossForwardBackward(benchmark::State& state) {
  Rng rng(5);
  const int t = 60, v = 23;
  std::vector<double> logits(t * v);
  for (double& x : logits) x = rng.next_normal();
  std::vector<int> target;
  for (int i = 0; i < 10; ++i) target.push_back(3 + static_cast<int>(rng.next_below(20)));
  for (auto _ : state) {
    auto lp = ops::log_softmax(Tensor::from({t, v}, logits, true));
    auto loss = ctc::ctc_loss(lp, target);
    loss.backward();
    benchmark::DoNotOptimize(loss.scalar_value());
  }
}
BENCHMARK(BM_CtcLossForwardBackward);

static void BM_MultitaskLossStep(benchmark::State& state) {
  toyspeech::ToyLanguageSpec spec;
  auto sample = toyspeech::synthesize_sample(spec, "bench", 0);
  auto cfg = bench_config();
  model::Model m(cfg);
  AdamOptimizer opt;
  for (auto _ : state) {
    auto lb = m.multitask_loss(sample, 8);
    zero_gradients(m.parameters());
    lb.total.backward();
    opt.step(m.parameters());
  }
}
BENCHMARK(BM_MultitaskLossStep);

static void BM_SimulInference(benchmark::State& state) {
  toyspeech::ToyLanguageSpec spec;
  auto sample = toyspeech::synthesize_sample(spec, "bench", 1);
  auto cfg = bench_config();
  model::Model m(cfg);
  policy::InferenceOptions opts;
  opts.chunk_frames = static_cast<int>(state.range(0));
  for (auto _ : state) {
    benchmark::DoNotOptimize(policy::run_simul_inference(m, sample.frames, opts));
  }
}
BENCHMARK(BM_SimulInference)->Arg(2)->Arg(8);

static void BM_CorpusBleu(benchmark::State& state) {
  Rng rng(7);
  std::vector<std::vector<int>> hyp(200), ref(200);
  for (int i = 0; i < 200; ++i) {
    int n = rng.next_int(10, 40);
    for (int j = 0; j < n; ++j) {
      int tok = 3 + static_cast<int>(rng.next_below(20));
      hyp[i].push_back(tok);
      ref[i].push_back(rng.next_below(10) == 0 ? 3 + (int)rng.next_below(20) : tok);
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(evalkit::corpus_bleu(hyp, ref));
  }
}
BENCHMARK(BM_CorpusBleu);

static void BM_LatencyMetrics(benchmark::State& state) {
  policy::EmissionTrace tr;
  tr.x_ms = 4000;
  tr.unit_ms = 20;
  tr.frame_ms = 40;
  for (int i = 0; i < 100; ++i) {
    tr.t_ms.push_back(40.0 * (i + 1));
    tr.t_ca_ms.push_back(40.0 * (i + 1) + 5.0);
  }
  tr.s_ms = 100 * 20.0;
  tr.segments.push_back({40, 45, 100});
  for (auto _ : state) {
    benchmark::DoNotOptimize(evalkit::compute_latency_metrics(tr));
    benchmark::DoNotOptimize(evalkit::compute_ca_metrics(tr));
  }
}
BENCHMARK(BM_LatencyMetrics);

BENCHMARK_MAIN();
