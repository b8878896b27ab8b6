// Command-line front end: corpus generation, training, evaluation, curve
// sweeps and alignment inspection, each reproducible from a resolved-config
// snapshot written next to its outputs.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "simulstream/evalkit.hpp"
#include "simulstream/lineio.hpp"
#include "simulstream/policy.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace simulstream;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void write_snapshot(CLI::App* cmd, const fs::path& out_dir, const std::string& name) {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / (name + ".config.toml"));
  out << "# resolved configuration; replay with: simulstream " << name << " --config "
      << (out_dir / (name + ".config.toml")).string() << "\n";
  out << "[" << name << "]\n" << cmd->config_to_str(true, true);
}

int parse_chunk_arg(const std::string& text) {
  if (text == "inf" || text == "INF" || text == "Inf") return model::kChunkInfinity;
  try {
    size_t pos = 0;
    int v = std::stoi(text, &pos);
    if (pos != text.size() || v < 1) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw UsageError("--C expects a positive integer or 'inf', got '" + text + "'");
  }
}

std::vector<int> parse_grid(const std::string& text) {
  std::vector<int> grid;
  std::string item;
  std::stringstream ss(text);
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) grid.push_back(parse_chunk_arg(item));
  }
  if (grid.empty()) throw UsageError("--grid is empty");
  return grid;
}

double mean_of(const std::vector<double>& v) {
  double acc = 0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

// --- gen-data ---------------------------------------------------------------

struct GenArgs {
  std::string out;
  int n = 5000;
  uint64_t seed = 1;
  bool gzip = false;
  toyspeech::ToyLanguageSpec spec;
  int dur_min = 2, dur_max = 6, len_min = 4, len_max = 10;
};

void run_gen_data(const GenArgs& a) {
  if (a.n < 1) throw UsageError("--n must be >= 1");
  toyspeech::ToyLanguageSpec spec = a.spec;
  spec.seed = a.seed;
  spec.token_duration_range = {a.dur_min, a.dur_max};
  spec.sentence_length_range = {a.len_min, a.len_max};
  spec.validate();
  spec.unit_expansion = spec.build_default_expansion();

  fs::create_directories(a.out);
  const std::string ext = a.gzip ? ".jsonl.gz" : ".jsonl";
  const int n_valid = std::max(1, a.n / 10);
  const int n_test = std::max(1, a.n / 10);
  struct Split {
    const char* name;
    int n;
  } splits[] = {{"train", a.n}, {"valid", n_valid}, {"test", n_test}};

  for (const auto& sp : splits) {
    auto corpus = toyspeech::synthesize_corpus(spec, sp.n, sp.name);
    toyspeech::write_corpus(corpus, (fs::path(a.out) / (std::string(sp.name) + ext)).string());
    std::vector<double> x_len, y_len, u_len, ratio;
    for (const auto& s : corpus.samples) {
      x_len.push_back(double(s.frames.size()));
      y_len.push_back(double(s.target_tokens.size()));
      u_len.push_back(double(s.units.size()));
      ratio.push_back(double(s.units.size()) / double(s.target_tokens.size() - 1));
    }
    std::printf("%-5s  n=%-6d  mean|X|=%6.2f  mean|Y|=%5.2f  mean|U|=%6.2f  |U|/|Y'|=%5.2f\n",
                sp.name, sp.n, mean_of(x_len), mean_of(y_len), mean_of(u_len), mean_of(ratio));
    if (std::string(sp.name) == "train") {
      std::printf("suggested upsample rate r = %d (2.5 x mean length ratio)\n",
                  model::derive_upsample_rate(corpus));
    }
  }
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  std::string corpus, out, resume;
  int64_t steps = 2000;
  int batch_size = 8;
  uint64_t seed = 1;
  std::string chunk_mode = "multi";
  int fixed_chunk = 8;
  int r = 0;  // 0: derive from the corpus
  double lr = 1e-3;
  int warmup = 400;
  double clip_norm = 1.0;
  model::ModelConfig dims;
};

void run_train(const TrainArgs& a) {
  auto corpus = toyspeech::read_corpus(a.corpus);
  if (corpus.samples.empty()) throw UsageError("training corpus has no samples");
  fs::create_directories(a.out);

  model::TrainOptions opts;
  opts.steps = a.steps;
  opts.batch_size = a.batch_size;
  opts.seed = a.seed;
  opts.adam.peak_lr = a.lr;
  opts.adam.warmup_steps = a.warmup;
  opts.clip_norm = a.clip_norm;
  opts.fixed_chunk = a.fixed_chunk;
  if (a.chunk_mode == "multi") {
    opts.chunk_mode = model::ChunkMode::kMulti;
  } else if (a.chunk_mode == "fixed") {
    opts.chunk_mode = model::ChunkMode::kFixed;
  } else if (a.chunk_mode == "offline") {
    opts.chunk_mode = model::ChunkMode::kOffline;
  } else {
    throw UsageError("--chunk-mode must be multi, fixed or offline");
  }

  std::optional<model::Model> m;
  std::optional<AdamOptimizer> resume_opt;
  if (!a.resume.empty()) {
    CheckpointExtra extra;
    m.emplace(model::load_model(a.resume, &extra));
    if (extra.has_optimizer) {
      resume_opt.emplace(extra.adam);
      resume_opt->restore(extra.step, extra.adam_m, extra.adam_v);
    }
  } else {
    model::ModelConfig cfg = a.dims;
    cfg.frame_dim = corpus.spec.frame_dim;
    cfg.src_vocab = corpus.spec.source_vocab_size;
    cfg.tgt_vocab = corpus.spec.target_vocab_size;
    cfg.unit_vocab = corpus.spec.unit_vocab_size;
    cfg.upsample_rate = a.r > 0 ? a.r : model::derive_upsample_rate(corpus);
    cfg.init_seed = a.seed;
    m.emplace(cfg);
  }

  std::ofstream log((fs::path(a.out) / "train_log.csv"));
  log << "step,chunk_frames,loss_total,loss_s2ut,loss_ar_s2tt,loss_asr,loss_nar_s2tt,skipped\n";
  opts.on_step = [&](const model::StepLog& s) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.8f,%.8f,%.8f,%.8f,%.8f,%d",
                  static_cast<long long>(s.step), s.chunk_frames, s.loss_total, s.loss_s2ut,
                  s.loss_ar, s.loss_asr, s.loss_nar, s.skipped);
    log << buf << "\n";
    if (s.step % 200 == 0) {
      std::printf("step %6lld  loss %10.4f\n", static_cast<long long>(s.step), s.loss_total);
      std::fflush(stdout);
    }
  };

  AdamOptimizer opt = model::train(*m, corpus, opts, resume_opt ? &*resume_opt : nullptr);
  model::save_model(*m, (fs::path(a.out) / "ckpt.json").string(), opt.step_count(), &opt);
  std::printf("checkpoint written to %s (step %lld)\n",
              (fs::path(a.out) / "ckpt.json").string().c_str(),
              static_cast<long long>(opt.step_count()));
}

// --- eval / curve ------------------------------------------------------------

struct EvalArgs {
  std::string ckpt, corpus, out;
  uint64_t seed = 1;
  std::string mode = "simul";
  std::string chunk = "";
  int k = 0;
  int jobs = 1;
  std::string ca_clock = "cost";
  double frame_ms = 40.0, unit_ms = 20.0, ms_per_mflop = 1.0;
};

policy::InferenceOptions make_infer_opts(const EvalArgs& a) {
  policy::InferenceOptions opts;
  opts.frame_ms = a.frame_ms;
  opts.unit_ms = a.unit_ms;
  opts.ms_per_mflop = a.ms_per_mflop;
  if (a.ca_clock == "cost") {
    opts.clock = policy::CaClock::kCostModel;
  } else if (a.ca_clock == "real") {
    opts.clock = policy::CaClock::kReal;
  } else {
    throw UsageError("--ca-clock must be cost or real");
  }
  return opts;
}

void run_eval(const EvalArgs& a) {
  if (a.mode != "offline" && a.mode != "simul" && a.mode != "waitk") {
    throw UsageError("--mode must be offline, simul or waitk");
  }
  if (a.k != 0 && a.mode != "waitk") throw UsageError("--k is only valid with --mode waitk");
  if (!a.chunk.empty() && a.mode != "simul") {
    throw UsageError("--C is only valid with --mode simul");
  }
  if (a.mode == "waitk" && a.k < 1) throw UsageError("--mode waitk requires --k >= 1");
  if (a.mode == "simul" && a.chunk.empty()) throw UsageError("--mode simul requires --C");

  auto m = model::load_model(a.ckpt);
  auto corpus = toyspeech::read_corpus(a.corpus);
  if (corpus.samples.empty()) throw UsageError("evaluation corpus has no samples");
  fs::create_directories(fs::path(a.out) / "traces");

  policy::InferenceOptions opts = make_infer_opts(a);
  std::string label;
  if (a.mode == "offline") {
    opts.chunk_frames = model::kChunkInfinity;
    label = "offline";
  } else if (a.mode == "simul") {
    opts.chunk_frames = parse_chunk_arg(a.chunk);
    label = "C=" + a.chunk;
  } else {
    opts.chunk_frames = 8;  // wait-k reads 320ms chunks
    label = "waitk_k=" + std::to_string(a.k);
  }

  const size_t n = corpus.samples.size();
  std::vector<policy::EmissionTrace> traces(n);
  std::vector<evalkit::MetricsReport> reports;
  evalkit::QualityMetrics quality;

  if (a.mode == "waitk") {
    std::vector<std::vector<int>> hyp_text(n), hyp_units(n);
    std::vector<evalkit::MetricsReport> kept;
    for (size_t i = 0; i < n; ++i) {
      auto res = policy::run_waitk_inference(m, corpus.samples[i].frames, a.k, opts);
      hyp_text[i] = res.text_tokens;
      hyp_units[i] = res.units;
      if (!res.trace.t_ms.empty()) {
        evalkit::MetricsReport r;
        r.ideal = evalkit::compute_latency_metrics(res.trace);
        r.ca = evalkit::compute_ca_metrics(res.trace);
        r.streaming = evalkit::compute_streaming_degree(res.trace);
        kept.push_back(r);
      }
      traces[i] = std::move(res.trace);
    }
    std::vector<const toyspeech::Sample*> refs;
    for (const auto& s : corpus.samples) refs.push_back(&s);
    quality = evalkit::score_quality(hyp_text, hyp_units, refs);
    reports = std::move(kept);
  } else {
    reports = evalkit::evaluate_corpus(m, corpus, opts, &quality, &traces, a.jobs);
  }

  for (size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.json", i);
    std::ofstream tf(fs::path(a.out) / "traces" / name);
    tf << traces[i].to_json() << "\n";
  }
  auto agg = evalkit::aggregate(reports, quality);
  {
    std::ofstream rj(fs::path(a.out) / "report.json");
    rj << agg.to_json() << "\n";
    std::ofstream rc(fs::path(a.out) / "report.csv");
    rc << evalkit::AggregateReport::csv_header() << "\n" << agg.csv_row(label) << "\n";
  }
  std::printf("%s: AL %.2f  AL_CA %.2f  unit BLEU %.2f  text BLEU %.2f  unit EM %.3f  (n=%d)\n",
              label.c_str(), agg.ideal.al, agg.ca.al, quality.unit_bleu, quality.text_bleu,
              quality.unit_exact_match, agg.num_samples);
}

struct CurveArgs {
  std::string ckpt, corpus, out;
  uint64_t seed = 1;
  std::string grid = "2,4,8,16,inf";
  int jobs = 1;
  std::string ca_clock = "cost";
  double frame_ms = 40.0, unit_ms = 20.0, ms_per_mflop = 1.0;
};

void run_curve(const CurveArgs& a) {
  auto m = model::load_model(a.ckpt);
  auto corpus = toyspeech::read_corpus(a.corpus);
  if (corpus.samples.empty()) throw UsageError("curve corpus has no samples");
  fs::create_directories(a.out);

  EvalArgs ea;
  ea.ca_clock = a.ca_clock;
  ea.frame_ms = a.frame_ms;
  ea.unit_ms = a.unit_ms;
  ea.ms_per_mflop = a.ms_per_mflop;
  auto opts = make_infer_opts(ea);
  auto rows = evalkit::quality_latency_curve(m, corpus, parse_grid(a.grid), opts, a.jobs);

  std::ofstream csv(fs::path(a.out) / "curve.csv");
  csv << evalkit::AggregateReport::csv_header() << "\n";
  json plot;
  plot["series"]["ideal"] = json::array();
  plot["series"]["computation_aware"] = json::array();
  for (const auto& row : rows) {
    std::string label =
        row.chunk_frames == model::kChunkInfinity ? "C=inf" : "C=" + std::to_string(row.chunk_frames);
    csv << row.report.csv_row(label) << "\n";
    plot["series"]["ideal"].push_back({row.report.ideal.al, row.report.quality.unit_bleu});
    plot["series"]["computation_aware"].push_back(
        {row.report.ca.al, row.report.quality.unit_bleu});
  }
  std::ofstream pj(fs::path(a.out) / "curve_plot.json");
  pj << plot.dump(2) << "\n";
  std::printf("curve with %zu rows written to %s\n", rows.size(),
              (fs::path(a.out) / "curve.csv").string().c_str());
}

// --- inspect -----------------------------------------------------------------

struct InspectArgs {
  std::string ckpt, corpus, out;
  int index = 0;
  std::string chunk = "8";
};

void run_inspect(const InspectArgs& a) {
  auto m = model::load_model(a.ckpt);
  auto corpus = toyspeech::read_corpus(a.corpus);
  if (a.index < 0 || a.index >= static_cast<int>(corpus.samples.size())) {
    throw UsageError("--index outside corpus of " + std::to_string(corpus.samples.size()));
  }
  const auto& sample = corpus.samples[a.index];
  int chunk = parse_chunk_arg(a.chunk);

  NoGradGuard ng;
  std::vector<double> flat;
  for (const auto& r : sample.frames) flat.insert(flat.end(), r.begin(), r.end());
  auto frames = Tensor::from({(int64_t)sample.frames.size(), (int64_t)sample.frames[0].size()},
                             std::move(flat));
  auto h = m.encode(frames, chunk);
  auto [asr_probs, nar_probs] = m.probe_probs(h);

  auto non_blank = [](const Tensor& probs) {
    json arr = json::array();
    auto path = ctc::argmax_path(probs);
    for (size_t i = 0; i < path.size(); ++i) {
      if (path[i] != ctc::kBlank) arr.push_back({{"frame", i}, {"token", path[i]}});
    }
    return arr;
  };

  policy::InferenceOptions opts;
  opts.chunk_frames = chunk;
  auto res = policy::run_simul_inference(m, sample.frames, opts);

  json j;
  j["index"] = a.index;
  j["chunk_frames"] = chunk;
  j["frames"] = sample.frames.size();
  json bounds = json::array();
  if (chunk != model::kChunkInfinity) {
    for (size_t b = chunk; b < sample.frames.size(); b += chunk) bounds.push_back(b);
  }
  j["chunk_boundaries"] = bounds;
  j["asr"] = non_blank(asr_probs);
  j["nar_s2tt"] = non_blank(nar_probs);
  j["y"] = res.text_tokens;
  j["g_frames"] = res.trace.g_frames;
  j["ref_a"] = sample.source_tokens;
  j["ref_a_spans"] = sample.source_spans;
  j["ref_y"] = sample.target_tokens;

  if (a.out.empty()) {
    std::cout << j.dump(2) << "\n";
  } else {
    std::ofstream out(a.out);
    out << j.dump(2) << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale simultaneous speech-to-speech translation engine"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.set_config("--config")->configurable(false);

  GenArgs gen;
  auto* cmd_gen = app.add_subcommand("gen-data", "Generate toy train/valid/test corpora")->configurable()->fallthrough();
  cmd_gen->add_option("--out", gen.out, "Output directory")->required();
  cmd_gen->add_option("--n", gen.n, "Training samples (valid/test get n/10)");
  cmd_gen->add_option("--seed", gen.seed, "Root seed");
  cmd_gen->add_flag("--gzip", gen.gzip, "Write gzip-compressed corpora");
  cmd_gen->add_option("--source-vocab", gen.spec.source_vocab_size, "Source content tokens");
  cmd_gen->add_option("--target-vocab", gen.spec.target_vocab_size, "Target content tokens");
  cmd_gen->add_option("--unit-vocab", gen.spec.unit_vocab_size, "Unit vocabulary");
  cmd_gen->add_option("--frame-dim", gen.spec.frame_dim, "Frame feature dimension");
  cmd_gen->add_option("--noise-std", gen.spec.noise_std, "Frame noise (std dev)");
  cmd_gen->add_option("--reorder-window", gen.spec.reorder_window, "Local reorder span");
  cmd_gen->add_option("--dur-min", gen.dur_min, "Min frames per token");
  cmd_gen->add_option("--dur-max", gen.dur_max, "Max frames per token");
  cmd_gen->add_option("--len-min", gen.len_min, "Min tokens per sentence");
  cmd_gen->add_option("--len-max", gen.len_max, "Max tokens per sentence");

  TrainArgs tr;
  auto* cmd_train = app.add_subcommand("train", "Train a model on a toy corpus")->configurable()->fallthrough();
  cmd_train->add_option("--corpus", tr.corpus, "Training corpus file")->required();
  cmd_train->add_option("--out", tr.out, "Output directory")->required();
  cmd_train->add_option("--steps", tr.steps, "Optimizer steps to run");
  cmd_train->add_option("--batch-size", tr.batch_size, "Samples per step");
  cmd_train->add_option("--seed", tr.seed, "Root seed");
  cmd_train->add_option("--chunk-mode", tr.chunk_mode, "multi | fixed | offline");
  cmd_train->add_option("--C", tr.fixed_chunk, "Chunk size for --chunk-mode fixed");
  cmd_train->add_option("--r", tr.r, "Upsample rate (0 = derive from corpus)");
  cmd_train->add_option("--lr", tr.lr, "Peak learning rate");
  cmd_train->add_option("--warmup", tr.warmup, "Warmup steps");
  cmd_train->add_option("--clip-norm", tr.clip_norm, "Gradient norm cap (<=0 off)");
  cmd_train->add_option("--resume", tr.resume, "Checkpoint to resume from");
  cmd_train->add_option("--width", tr.dims.width, "Model width");
  cmd_train->add_option("--enc-layers", tr.dims.enc_layers, "Encoder layers");
  cmd_train->add_option("--dec-layers", tr.dims.dec_layers, "Decoder layers");
  cmd_train->add_option("--t2u-layers", tr.dims.t2u_enc_layers, "T2U encoder layers");
  cmd_train->add_option("--unit-layers", tr.dims.unit_dec_layers, "Unit decoder layers");
  cmd_train->add_option("--heads", tr.dims.heads, "Attention heads");
  cmd_train->add_option("--conv-kernel", tr.dims.conv_kernel, "Depthwise conv kernel");
  cmd_train->add_option("--ffn-mult", tr.dims.ffn_mult, "FFN width multiplier");
  cmd_train->add_option("--w-s2ut", tr.dims.w_s2ut, "S2UT loss weight");
  cmd_train->add_option("--w-ar-s2tt", tr.dims.w_ar_s2tt, "AR-S2TT loss weight");
  cmd_train->add_option("--w-asr", tr.dims.w_asr, "ASR loss weight");
  cmd_train->add_option("--w-nar-s2tt", tr.dims.w_nar_s2tt, "NAR-S2TT loss weight");

  EvalArgs ev;
  auto* cmd_eval = app.add_subcommand("eval", "Evaluate a checkpoint on a corpus")->configurable()->fallthrough();
  cmd_eval->add_option("--ckpt", ev.ckpt, "Checkpoint manifest")->required();
  cmd_eval->add_option("--corpus", ev.corpus, "Evaluation corpus")->required();
  cmd_eval->add_option("--out", ev.out, "Output directory")->required();
  cmd_eval->add_option("--mode", ev.mode, "offline | simul | waitk");
  cmd_eval->add_option("--C", ev.chunk, "Chunk size in frames, or 'inf' (simul mode)");
  cmd_eval->add_option("--k", ev.k, "Wait-k parameter (waitk mode)");
  cmd_eval->add_option("--seed", ev.seed, "Root seed (recorded in the snapshot)");
  cmd_eval->add_option("--jobs", ev.jobs, "Parallel evaluation workers");
  cmd_eval->add_option("--ca-clock", ev.ca_clock, "cost | real wall-clock model");
  cmd_eval->add_option("--frame-ms", ev.frame_ms, "Input frame duration (ms)");
  cmd_eval->add_option("--unit-ms", ev.unit_ms, "Output unit duration (ms)");
  cmd_eval->add_option("--ms-per-mflop", ev.ms_per_mflop, "Cost-model rate");

  CurveArgs cu;
  auto* cmd_curve = app.add_subcommand("curve", "Quality-latency curve over a chunk grid")->configurable()->fallthrough();
  cmd_curve->add_option("--ckpt", cu.ckpt, "Checkpoint manifest")->required();
  cmd_curve->add_option("--corpus", cu.corpus, "Evaluation corpus")->required();
  cmd_curve->add_option("--out", cu.out, "Output directory")->required();
  cmd_curve->add_option("--grid", cu.grid, "Comma-separated chunk sizes, 'inf' allowed");
  cmd_curve->add_option("--seed", cu.seed, "Root seed (recorded in the snapshot)");
  cmd_curve->add_option("--jobs", cu.jobs, "Parallel evaluation workers");
  cmd_curve->add_option("--ca-clock", cu.ca_clock, "cost | real wall-clock model");
  cmd_curve->add_option("--frame-ms", cu.frame_ms, "Input frame duration (ms)");
  cmd_curve->add_option("--unit-ms", cu.unit_ms, "Output unit duration (ms)");
  cmd_curve->add_option("--ms-per-mflop", cu.ms_per_mflop, "Cost-model rate");

  InspectArgs in;
  auto* cmd_inspect = app.add_subcommand("inspect", "Dump CTC alignments for one sample")->configurable()->fallthrough();
  cmd_inspect->add_option("--ckpt", in.ckpt, "Checkpoint manifest")->required();
  cmd_inspect->add_option("--corpus", in.corpus, "Corpus file")->required();
  cmd_inspect->add_option("--index", in.index, "Sample index");
  cmd_inspect->add_option("--C", in.chunk, "Chunk size in frames, or 'inf'");
  cmd_inspect->add_option("--out", in.out, "Output file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (cmd_gen->parsed()) {
      run_gen_data(gen);
      write_snapshot(cmd_gen, gen.out, "gen-data");
    } else if (cmd_train->parsed()) {
      run_train(tr);
      write_snapshot(cmd_train, tr.out, "train");
    } else if (cmd_eval->parsed()) {
      run_eval(ev);
      write_snapshot(cmd_eval, ev.out, "eval");
    } else if (cmd_curve->parsed()) {
      run_curve(cu);
      write_snapshot(cmd_curve, cu.out, "curve");
    } else if (cmd_inspect->parsed()) {
      run_inspect(in);
    }
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
