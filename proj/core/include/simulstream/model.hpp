#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "simulstream/checkpoint.hpp"
#include "simulstream/ctc.hpp"
#include "simulstream/optim.hpp"
#include "simulstream/tensor.hpp"
#include "simulstream/toyspeech.hpp"

namespace simulstream::model {

// Chunk size in frames; kChunkInfinity (= 0) means no chunking, i.e. the
// offline setting.
inline constexpr int kChunkInfinity = 0;

inline int64_t chunk_upper_bound(int64_t i, int64_t t, int chunk_frames) {
  if (chunk_frames <= 0) return t - 1;
  return std::min<int64_t>(((i / chunk_frames) + 1) * chunk_frames - 1, t - 1);
}

struct ModelConfig {
  int frame_dim = 16;
  int width = 64;
  int enc_layers = 2;
  int heads = 4;
  int conv_kernel = 7;
  int dec_layers = 2;
  int t2u_enc_layers = 2;
  int unit_dec_layers = 2;
  int ffn_mult = 4;
  int src_vocab = 10;   // content tokens; embedding tables add the 3 reserved ids
  int tgt_vocab = 10;
  int unit_vocab = 20;
  int upsample_rate = 10;
  double w_s2ut = 1.0;
  double w_ar_s2tt = 8.0;
  double w_asr = 4.0;
  double w_nar_s2tt = 4.0;
  uint64_t init_seed = 1;

  int src_rows() const { return src_vocab + 3; }
  int tgt_rows() const { return tgt_vocab + 3; }
  int unit_rows() const { return unit_vocab + 3; }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Captured attention probability matrices, one per (layer, head) in call
// order; used by mask-correctness tests and the inspection dump.
struct AttnRecorder {
  std::vector<Tensor> weights;
};

struct LossBundle {
  Tensor s2ut, ar_s2tt, asr, nar_s2tt;
  Tensor total;
  bool feasible = true;

  double weighted_total(const ModelConfig& cfg) const;
};

// Incremental encoder state. Chunks must arrive with exactly `chunk_frames`
// frames (any size for the final one); already-emitted positions are never
// recomputed.
struct EncoderLayerCache {
  Tensor k, v;        // projected keys/values of all received positions
  Tensor conv_tail;   // trailing conv-input rows needed by the next chunk
};

struct EncoderCache {
  int chunk_frames = kChunkInfinity;
  int frames = 0;
  std::vector<EncoderLayerCache> layers;
  Tensor h;  // [frames, width] encoder outputs so far
};

struct DecoderLayerCache {
  Tensor k_self, v_self;
  Tensor k_cross, v_cross;
  int h_rows = 0;  // encoder rows already projected into k_cross/v_cross
};

struct DecoderState {
  std::vector<DecoderLayerCache> layers;
  int pos = 0;  // target positions generated so far
};

struct T2uLayerCache {
  Tensor k, v;
};

struct T2uState {
  std::vector<T2uLayerCache> enc_layers;   // over text positions
  std::vector<T2uLayerCache> dec_layers;   // over upsampled positions
  int text_rows = 0;
  ctc::StreamingCollapser collapser;       // carries collapse state across segments
};

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  // --- full-sequence paths (training; graph-attached under grad mode) ---

  // [T, frame_dim] -> [T, width] under the chunk attention/conv masks.
  Tensor encode(const Tensor& frames, int chunk_frames, AttnRecorder* rec = nullptr) const;

  // Positionwise CTC probe logits over H: {asr [T,Va], nar-s2tt [T,Vy]}.
  std::pair<Tensor, Tensor> probe_logits(const Tensor& h) const;

  // Teacher-forced decoder. y must end with <eos>; g_frames[i] is the number
  // of encoder positions target position i may cross-attend to (1-based
  // count, monotone). Returns {logits [L,Vy], d_text [L,width]}.
  std::pair<Tensor, Tensor> decode_teacher_forced(const Tensor& h, const std::vector<int>& y,
                                                  const std::vector<int>& g_frames,
                                                  AttnRecorder* rec = nullptr) const;

  // NAR text-to-unit: causal T2U encoder over the text-position inputs,
  // r-fold upsampling, block-causal unit decoder. Returns [r*L, Vu].
  Tensor t2u_logits(const Tensor& t2u_in) const;

  // T2U input rows: decoder hidden state plus the embedding of the token
  // emitted at that position. The hidden alone leans toward the previous
  // token (it sits on the input-embedding residual stream), which lets the
  // unit CTC settle on a whole-block-lagged alignment.
  Tensor t2u_input(const Tensor& d_text_rows, std::span<const int> tokens) const;

  // Alignment of the training policy: g(i) for each target position from the
  // expected prefix counts of the two probes.
  static std::vector<int> training_alignment(const std::vector<double>& n_asr,
                                             const std::vector<double>& n_nar, int target_len);

  // All four losses on one forward pass at the given chunk size.
  LossBundle multitask_loss(const toyspeech::Sample& sample, int chunk_frames) const;

  // --- incremental paths (inference; call under NoGradGuard) ---

  EncoderCache make_encoder_cache(int chunk_frames) const;
  // Appends one chunk; returns the new H rows [c, width].
  Tensor encode_chunk(EncoderCache& cache, const std::vector<std::vector<double>>& chunk) const;
  // Probe probabilities for given H rows: {asr, nar} [rows, V*].
  std::pair<Tensor, Tensor> probe_probs(const Tensor& h_rows) const;

  DecoderState make_decoder_state() const;
  struct StepResult {
    int token = 0;
    Tensor hidden;  // [1, width] d_text row for this position
  };
  // One greedy AR step conditioned on all rows of h (g = h.rows).
  StepResult decode_step(DecoderState& state, const Tensor& h, int prev_token) const;

  T2uState make_t2u_state() const;
  // Feeds one new text position (hidden row + emitted token); returns the
  // units newly emitted by the r fresh CTC slots (streaming collapse, exact
  // match with the offline pass).
  std::vector<int> t2u_extend(T2uState& state, const Tensor& hidden_row, int token) const;

  // Value-copy of all parameters into the same layout (fresh model).
  void load_parameter_values(const std::vector<Parameter>& source);

 private:
  struct Layers;
  Tensor add_param(const std::string& name, std::vector<int64_t> shape, double init_std);
  Tensor add_ones(const std::string& name, int64_t n);
  Tensor add_zeros(const std::string& name, std::vector<int64_t> shape);

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::unique_ptr<Layers> net_;

 public:
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept = delete;
  Model(const Model&) = delete;
};

// --- training -------------------------------------------------------------

enum class ChunkMode { kMulti, kFixed, kOffline };

struct StepLog {
  int64_t step = 0;
  int chunk_frames = 0;
  double loss_total = 0, loss_s2ut = 0, loss_ar = 0, loss_asr = 0, loss_nar = 0;
  int skipped = 0;  // samples dropped for infeasible CTC this step
};

struct TrainOptions {
  int64_t steps = 2000;
  int batch_size = 8;
  uint64_t seed = 1;
  ChunkMode chunk_mode = ChunkMode::kMulti;
  int fixed_chunk = 8;
  double clip_norm = 1.0;  // global gradient-norm cap; <= 0 disables
  AdamConfig adam;
  std::function<void(const StepLog&)> on_step;
};

// Runs Adam over the multitask loss with per-batch chunk sampling
// C ~ U{1..max |X| in batch} (multi mode). Deterministic in opts.seed.
// Throws on NaN loss, naming the step. Returns the optimizer for resume.
AdamOptimizer train(Model& model, const toyspeech::Corpus& corpus, const TrainOptions& opts,
                    AdamOptimizer* resume_from = nullptr);

// Appendix-D style default: r = round(2.5 * mean(|U| / |Y without eos|)).
int derive_upsample_rate(const toyspeech::Corpus& corpus);

void save_model(const Model& model, const std::string& path, int64_t step,
                const AdamOptimizer* opt);
Model load_model(const std::string& path, CheckpointExtra* extra_out = nullptr);

}  // namespace simulstream::model
