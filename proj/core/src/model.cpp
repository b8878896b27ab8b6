#include "simulstream/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "simulstream/checkpoint.hpp"
#include "simulstream/ops.hpp"
#include "simulstream/rng.hpp"

namespace simulstream::model {

using nlohmann::json;
namespace O = simulstream::ops;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

struct LnParams {
  Tensor gamma, beta;
};
struct AttnParams {
  Tensor wq, wk, wv, wo;
};
struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct EncLayer {
  LnParams ln_ffn1;
  FfnParams ffn1;
  LnParams ln_attn;
  AttnParams attn;
  LnParams ln_conv;
  Tensor conv_kernel;
  Tensor conv_pw_w, conv_pw_b;
  LnParams ln_ffn2;
  FfnParams ffn2;
  LnParams ln_out;
};

struct DecLayer {
  LnParams ln_self;
  AttnParams self_attn;
  LnParams ln_cross;
  AttnParams cross_attn;
  LnParams ln_ffn;
  FfnParams ffn;
};

// Attention + FFN block shared by the T2U encoder and the unit decoder.
struct PlainLayer {
  LnParams ln_attn;
  AttnParams attn;
  LnParams ln_ffn;
  FfnParams ffn;
};

Tensor ln(const Tensor& x, const LnParams& p) { return O::layer_norm(x, p.gamma, p.beta); }

Tensor ffn(const Tensor& x, const FfnParams& p) {
  return O::add_rowvec(O::matmul(O::silu(O::add_rowvec(O::matmul(x, p.w1), p.b1)), p.w2), p.b2);
}

// Multi-head attention over pre-projected keys/values. Queries are projected
// here; `mask` is [Tq,Tk] with 1 = attend, absent = attend to everything.
Tensor mha(const AttnParams& p, int heads, const Tensor& q_in, const Tensor& k_base,
           const Tensor& v_base, const Tensor* mask, AttnRecorder* rec) {
  int64_t width = q_in.dim(1);
  int64_t dh = width / heads;
  Tensor q = O::matmul(q_in, p.wq);
  double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> ctx;
  ctx.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Tensor qh = O::slice_cols(q, h * dh, dh);
    Tensor kh = O::slice_cols(k_base, h * dh, dh);
    Tensor vh = O::slice_cols(v_base, h * dh, dh);
    Tensor scores = O::scale(O::matmul_nt(qh, kh), inv_sqrt);
    if (mask) scores = O::masked_fill(scores, *mask, kNegInf);
    Tensor attn = O::softmax(scores);
    if (rec) rec->weights.push_back(attn.detached());
    ctx.push_back(O::matmul(attn, vh));
  }
  return O::matmul(O::concat_cols(ctx), p.wo);
}

// [rows, cols] mask with 1 where allowed(i, j).
Tensor build_mask(int64_t rows, int64_t cols, const std::function<bool(int64_t, int64_t)>& allow) {
  std::vector<double> v(rows * cols, 0.0);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      if (allow(i, j)) v[i * cols + j] = 1.0;
  return Tensor::from({rows, cols}, std::move(v));
}

Tensor chunk_mask(int64_t t, int chunk_frames) {
  return build_mask(t, t, [t, chunk_frames](int64_t i, int64_t j) {
    return j <= chunk_upper_bound(i, t, chunk_frames);
  });
}

Tensor causal_mask(int64_t t) {
  return build_mask(t, t, [](int64_t i, int64_t j) { return j <= i; });
}

Tensor sinusoidal_rows(int64_t from, int64_t count, int64_t width) {
  std::vector<double> v(count * width, 0.0);
  for (int64_t p = 0; p < count; ++p) {
    double pos = static_cast<double>(from + p);
    for (int64_t i = 0; 2 * i < width; ++i) {
      double angle = pos * std::exp(-std::log(10000.0) * (2.0 * i / static_cast<double>(width)));
      v[p * width + 2 * i] = std::sin(angle);
      if (2 * i + 1 < width) v[p * width + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({count, width}, std::move(v));
}

Tensor frames_to_tensor(const std::vector<std::vector<double>>& frames) {
  if (frames.empty()) throw std::invalid_argument("encode: empty frame sequence");
  int64_t t = static_cast<int64_t>(frames.size());
  int64_t f = static_cast<int64_t>(frames[0].size());
  std::vector<double> v;
  v.reserve(t * f);
  for (const auto& row : frames) {
    if (static_cast<int64_t>(row.size()) != f) {
      throw std::invalid_argument("encode: ragged frame matrix");
    }
    v.insert(v.end(), row.begin(), row.end());
  }
  return Tensor::from({t, f}, std::move(v));
}

// Probabilities from graph-attached log-probs, detached.
Tensor probs_from_logits(const Tensor& logits) {
  NoGradGuard ng;
  return O::softmax(logits.detached());
}

int argmax_lowest(std::span<const double> row) {
  int best = 0;
  for (size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = static_cast<int>(i);
  return best;
}

Tensor append_rows(const Tensor& base, const Tensor& extra) {
  if (!base.defined() || base.size() == 0) return extra;
  return O::concat_rows({base, extra});
}

}  // namespace

void ModelConfig::validate() const {
  if (upsample_rate < 1) throw std::invalid_argument("model config: upsample rate must be >= 1");
  if (conv_kernel % 2 == 0) throw std::invalid_argument("model config: conv kernel must be odd");
  if (width % heads != 0) throw std::invalid_argument("model config: width must divide by heads");
  if (w_s2ut < 0 || w_ar_s2tt < 0 || w_asr < 0 || w_nar_s2tt < 0) {
    throw std::invalid_argument("model config: loss weights must be non-negative");
  }
}

std::string ModelConfig::to_json() const {
  json j;
  j["frame_dim"] = frame_dim;
  j["width"] = width;
  j["enc_layers"] = enc_layers;
  j["heads"] = heads;
  j["conv_kernel"] = conv_kernel;
  j["dec_layers"] = dec_layers;
  j["t2u_enc_layers"] = t2u_enc_layers;
  j["unit_dec_layers"] = unit_dec_layers;
  j["ffn_mult"] = ffn_mult;
  j["src_vocab"] = src_vocab;
  j["tgt_vocab"] = tgt_vocab;
  j["unit_vocab"] = unit_vocab;
  j["upsample_rate"] = upsample_rate;
  j["w_s2ut"] = w_s2ut;
  j["w_ar_s2tt"] = w_ar_s2tt;
  j["w_asr"] = w_asr;
  j["w_nar_s2tt"] = w_nar_s2tt;
  j["init_seed"] = init_seed;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.frame_dim = j.at("frame_dim").get<int>();
  c.width = j.at("width").get<int>();
  c.enc_layers = j.at("enc_layers").get<int>();
  c.heads = j.at("heads").get<int>();
  c.conv_kernel = j.at("conv_kernel").get<int>();
  c.dec_layers = j.at("dec_layers").get<int>();
  c.t2u_enc_layers = j.at("t2u_enc_layers").get<int>();
  c.unit_dec_layers = j.at("unit_dec_layers").get<int>();
  c.ffn_mult = j.at("ffn_mult").get<int>();
  c.src_vocab = j.at("src_vocab").get<int>();
  c.tgt_vocab = j.at("tgt_vocab").get<int>();
  c.unit_vocab = j.at("unit_vocab").get<int>();
  c.upsample_rate = j.at("upsample_rate").get<int>();
  c.w_s2ut = j.at("w_s2ut").get<double>();
  c.w_ar_s2tt = j.at("w_ar_s2tt").get<double>();
  c.w_asr = j.at("w_asr").get<double>();
  c.w_nar_s2tt = j.at("w_nar_s2tt").get<double>();
  c.init_seed = j.at("init_seed").get<uint64_t>();
  c.validate();
  return c;
}

double LossBundle::weighted_total(const ModelConfig& cfg) const {
  return cfg.w_s2ut * s2ut.scalar_value() + cfg.w_ar_s2tt * ar_s2tt.scalar_value() +
         cfg.w_asr * asr.scalar_value() + cfg.w_nar_s2tt * nar_s2tt.scalar_value();
}

struct Model::Layers {
  Tensor in_w, in_b;
  std::vector<EncLayer> enc;
  Tensor asr_w, asr_b, nar_w, nar_b;
  Tensor tgt_embed;
  std::vector<DecLayer> dec;
  LnParams dec_ln_final;
  Tensor out_w, out_b;
  std::vector<PlainLayer> t2u_enc;
  LnParams t2u_ln_final;
  std::vector<PlainLayer> unit_dec;
  LnParams unit_ln_final;
  Tensor unit_w, unit_b;
  Rng init_rng{0};
};

Model::~Model() = default;
Model::Model(Model&&) noexcept = default;

Tensor Model::add_param(const std::string& name, std::vector<int64_t> shape, double init_std) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> v(n);
  for (double& x : v) x = init_std * net_->init_rng.next_normal();
  Tensor t = Tensor::from(std::move(shape), std::move(v), true);
  params_.push_back({name, t});
  return t;
}

Tensor Model::add_ones(const std::string& name, int64_t n) {
  Tensor t = Tensor::full({n}, 1.0, true);
  params_.push_back({name, t});
  return t;
}

Tensor Model::add_zeros(const std::string& name, std::vector<int64_t> shape) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  params_.push_back({name, t});
  return t;
}

Model::Model(ModelConfig cfg) : cfg_(cfg), net_(std::make_unique<Layers>()) {
  cfg_.validate();
  net_->init_rng = Rng::substream(cfg_.init_seed, "model_init");
  const int64_t w = cfg_.width;
  const int64_t f = cfg_.ffn_mult * w;
  const double sw = 1.0 / std::sqrt(static_cast<double>(w));
  const double sf = 1.0 / std::sqrt(static_cast<double>(f));

  auto make_ln = [&](const std::string& name) {
    return LnParams{add_ones(name + ".gamma", w), add_zeros(name + ".beta", {w})};
  };
  auto make_attn = [&](const std::string& name) {
    return AttnParams{add_param(name + ".wq", {w, w}, sw), add_param(name + ".wk", {w, w}, sw),
                      add_param(name + ".wv", {w, w}, sw), add_param(name + ".wo", {w, w}, sw)};
  };
  auto make_ffn = [&](const std::string& name) {
    return FfnParams{add_param(name + ".w1", {w, f}, sw), add_zeros(name + ".b1", {f}),
                     add_param(name + ".w2", {f, w}, sf), add_zeros(name + ".b2", {w})};
  };

  net_->in_w = add_param("enc.in.w", {cfg_.frame_dim, w}, 1.0 / std::sqrt(double(cfg_.frame_dim)));
  net_->in_b = add_zeros("enc.in.b", {w});
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    std::string p = "enc." + std::to_string(l);
    EncLayer layer;
    layer.ln_ffn1 = make_ln(p + ".ln_ffn1");
    layer.ffn1 = make_ffn(p + ".ffn1");
    layer.ln_attn = make_ln(p + ".ln_attn");
    layer.attn = make_attn(p + ".attn");
    layer.ln_conv = make_ln(p + ".ln_conv");
    layer.conv_kernel = add_param(p + ".conv.kernel", {cfg_.conv_kernel, w},
                                  1.0 / std::sqrt(double(cfg_.conv_kernel)));
    layer.conv_pw_w = add_param(p + ".conv.pw.w", {w, w}, sw);
    layer.conv_pw_b = add_zeros(p + ".conv.pw.b", {w});
    layer.ln_ffn2 = make_ln(p + ".ln_ffn2");
    layer.ffn2 = make_ffn(p + ".ffn2");
    layer.ln_out = make_ln(p + ".ln_out");
    net_->enc.push_back(std::move(layer));
  }
  net_->asr_w = add_param("probe.asr.w", {w, cfg_.src_rows()}, sw);
  net_->asr_b = add_zeros("probe.asr.b", {cfg_.src_rows()});
  net_->nar_w = add_param("probe.nar.w", {w, cfg_.tgt_rows()}, sw);
  net_->nar_b = add_zeros("probe.nar.b", {cfg_.tgt_rows()});

  net_->tgt_embed = add_param("dec.embed", {cfg_.tgt_rows(), w}, sw);
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    std::string p = "dec." + std::to_string(l);
    DecLayer layer;
    layer.ln_self = make_ln(p + ".ln_self");
    layer.self_attn = make_attn(p + ".self");
    layer.ln_cross = make_ln(p + ".ln_cross");
    layer.cross_attn = make_attn(p + ".cross");
    layer.ln_ffn = make_ln(p + ".ln_ffn");
    layer.ffn = make_ffn(p + ".ffn");
    net_->dec.push_back(std::move(layer));
  }
  net_->dec_ln_final = make_ln("dec.ln_final");
  net_->out_w = add_param("dec.out.w", {w, cfg_.tgt_rows()}, sw);
  net_->out_b = add_zeros("dec.out.b", {cfg_.tgt_rows()});

  for (int l = 0; l < cfg_.t2u_enc_layers; ++l) {
    std::string p = "t2u." + std::to_string(l);
    PlainLayer layer;
    layer.ln_attn = make_ln(p + ".ln_attn");
    layer.attn = make_attn(p + ".attn");
    layer.ln_ffn = make_ln(p + ".ln_ffn");
    layer.ffn = make_ffn(p + ".ffn");
    net_->t2u_enc.push_back(std::move(layer));
  }
  net_->t2u_ln_final = make_ln("t2u.ln_final");
  for (int l = 0; l < cfg_.unit_dec_layers; ++l) {
    std::string p = "unit." + std::to_string(l);
    PlainLayer layer;
    layer.ln_attn = make_ln(p + ".ln_attn");
    layer.attn = make_attn(p + ".attn");
    layer.ln_ffn = make_ln(p + ".ln_ffn");
    layer.ffn = make_ffn(p + ".ffn");
    net_->unit_dec.push_back(std::move(layer));
  }
  net_->unit_ln_final = make_ln("unit.ln_final");
  net_->unit_w = add_param("unit.out.w", {w, cfg_.unit_rows()}, sw);
  net_->unit_b = add_zeros("unit.out.b", {cfg_.unit_rows()});
}

void Model::load_parameter_values(const std::vector<Parameter>& source) {
  if (source.size() != params_.size()) {
    throw std::invalid_argument("parameter count mismatch: checkpoint has " +
                                std::to_string(source.size()) + ", model expects " +
                                std::to_string(params_.size()));
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    if (source[i].name != params_[i].name ||
        source[i].tensor.shape() != params_[i].tensor.shape()) {
      throw std::invalid_argument("parameter mismatch at '" + params_[i].name + "'");
    }
    auto dst = params_[i].tensor.mutable_values();
    auto src = source[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// --- encoder ---------------------------------------------------------------

namespace {

// One Conformer block over `x`; attention/conv masking via chunk_frames, with
// an optional explicit attention mask overriding the derived one.
Tensor enc_block(const EncLayer& L, int heads, Tensor x, int conv_chunk, const Tensor* attn_mask,
                 AttnRecorder* rec) {
  x = O::add(x, O::scale(ffn(ln(x, L.ln_ffn1), L.ffn1), 0.5));
  Tensor xn = ln(x, L.ln_attn);
  Tensor k = O::matmul(xn, L.attn.wk);
  Tensor v = O::matmul(xn, L.attn.wv);
  x = O::add(x, mha(L.attn, heads, xn, k, v, attn_mask, rec));
  Tensor cn = ln(x, L.ln_conv);
  Tensor cv = O::silu(O::depthwise_conv1d(cn, L.conv_kernel, conv_chunk));
  x = O::add(x, O::add_rowvec(O::matmul(cv, L.conv_pw_w), L.conv_pw_b));
  x = O::add(x, O::scale(ffn(ln(x, L.ln_ffn2), L.ffn2), 0.5));
  return ln(x, L.ln_out);
}

}  // namespace

Tensor Model::encode(const Tensor& frames, int chunk_frames, AttnRecorder* rec) const {
  if (frames.shape().size() != 2 || frames.dim(1) != cfg_.frame_dim) {
    throw std::invalid_argument("encode: frames must be [T," + std::to_string(cfg_.frame_dim) +
                                "], got " + shape_str(frames.shape()));
  }
  int64_t t = frames.dim(0);
  Tensor x = O::add(O::add_rowvec(O::matmul(frames, net_->in_w), net_->in_b),
                    sinusoidal_rows(0, t, cfg_.width));
  std::optional<Tensor> mask;
  if (chunk_frames > 0) mask = chunk_mask(t, chunk_frames);
  for (const auto& layer : net_->enc) {
    x = enc_block(layer, cfg_.heads, x, chunk_frames, mask ? &*mask : nullptr, rec);
  }
  return x;
}

std::pair<Tensor, Tensor> Model::probe_logits(const Tensor& h) const {
  Tensor asr = O::add_rowvec(O::matmul(h, net_->asr_w), net_->asr_b);
  Tensor nar = O::add_rowvec(O::matmul(h, net_->nar_w), net_->nar_b);
  return {asr, nar};
}

EncoderCache Model::make_encoder_cache(int chunk_frames) const {
  if (chunk_frames < 0) throw std::invalid_argument("encoder cache: negative chunk size");
  EncoderCache cache;
  cache.chunk_frames = chunk_frames;
  cache.layers.resize(cfg_.enc_layers);
  return cache;
}

Tensor Model::encode_chunk(EncoderCache& cache, const std::vector<std::vector<double>>& chunk) const {
  const int c = static_cast<int>(chunk.size());
  if (c == 0) throw std::invalid_argument("encode_chunk: empty chunk");
  const int C = cache.chunk_frames;
  if (C == kChunkInfinity) {
    if (cache.frames != 0) {
      throw std::invalid_argument("encode_chunk: infinite chunk size admits a single chunk");
    }
  } else {
    if (cache.frames % C != 0) {
      throw std::invalid_argument("encode_chunk: previous chunk was partial; cache accepts no more");
    }
    if (c > C) {
      throw std::invalid_argument("encode_chunk: got " + std::to_string(c) +
                                  " frames for chunk size " + std::to_string(C));
    }
  }

  NoGradGuard ng;
  const int64_t half = cfg_.conv_kernel / 2;
  Tensor x = O::add(O::add_rowvec(O::matmul(frames_to_tensor(chunk), net_->in_w), net_->in_b),
                    sinusoidal_rows(cache.frames, c, cfg_.width));
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const EncLayer& L = net_->enc[l];
    EncoderLayerCache& lc = cache.layers[l];

    Tensor a = O::add(x, O::scale(ffn(ln(x, L.ln_ffn1), L.ffn1), 0.5));
    Tensor xn = ln(a, L.ln_attn);
    Tensor k_new = O::matmul(xn, L.attn.wk);
    Tensor v_new = O::matmul(xn, L.attn.wv);
    lc.k = append_rows(lc.k, k_new);
    lc.v = append_rows(lc.v, v_new);
    // New positions sit in the newest chunk, whose upper bound covers all
    // received frames, so they attend to everything cached.
    Tensor b = O::add(a, mha(L.attn, cfg_.heads, xn, lc.k, lc.v, nullptr, nullptr));

    Tensor cn = ln(b, L.ln_conv);
    Tensor conv_in = lc.conv_tail.defined() ? O::concat_rows({lc.conv_tail, cn}) : cn;
    int64_t tail_len = conv_in.dim(0) - c;
    Tensor cv_all = O::depthwise_conv1d(conv_in, L.conv_kernel, kChunkInfinity);
    Tensor cv = tail_len > 0 ? O::slice_rows(cv_all, tail_len, c) : cv_all;
    Tensor ccat = O::add(b, O::add_rowvec(O::matmul(O::silu(cv), L.conv_pw_w), L.conv_pw_b));
    int64_t keep = std::min<int64_t>(half, conv_in.dim(0));
    lc.conv_tail = keep > 0 ? O::slice_rows(conv_in, conv_in.dim(0) - keep, keep) : Tensor();

    Tensor d = O::add(ccat, O::scale(ffn(ln(ccat, L.ln_ffn2), L.ffn2), 0.5));
    x = ln(d, L.ln_out);
  }
  cache.h = append_rows(cache.h, x);
  cache.frames += c;
  return x;
}

std::pair<Tensor, Tensor> Model::probe_probs(const Tensor& h_rows) const {
  NoGradGuard ng;
  auto [asr, nar] = probe_logits(h_rows);
  return {O::softmax(asr), O::softmax(nar)};
}

// --- AR decoder ------------------------------------------------------------

std::pair<Tensor, Tensor> Model::decode_teacher_forced(const Tensor& h, const std::vector<int>& y,
                                                       const std::vector<int>& g_frames,
                                                       AttnRecorder* rec) const {
  const int64_t len = static_cast<int64_t>(y.size());
  if (len == 0) throw std::invalid_argument("decoder: empty target");
  if (g_frames.size() != y.size()) {
    throw std::invalid_argument("decoder: alignment size does not match target");
  }
  const int64_t t = h.dim(0);
  for (int g : g_frames) {
    if (g < 1 || g > t) {
      throw std::invalid_argument("decoder: cross-attention mask of " + std::to_string(g) +
                                  " frames outside encoder length " + std::to_string(t));
    }
  }
  std::vector<int> inputs(y.size());
  inputs[0] = ctc::kEos;  // <eos> doubles as the begin-of-sequence symbol
  for (size_t i = 1; i < y.size(); ++i) inputs[i] = y[i - 1];

  Tensor x = O::add(O::scale(O::embedding(net_->tgt_embed, inputs),
                             std::sqrt(static_cast<double>(cfg_.width))),
                    sinusoidal_rows(0, len, cfg_.width));
  Tensor self_mask = causal_mask(len);
  Tensor cross = build_mask(len, t, [&](int64_t i, int64_t j) { return j < g_frames[i]; });
  for (const auto& L : net_->dec) {
    Tensor xn = ln(x, L.ln_self);
    Tensor k = O::matmul(xn, L.self_attn.wk);
    Tensor v = O::matmul(xn, L.self_attn.wv);
    Tensor a = O::add(x, mha(L.self_attn, cfg_.heads, xn, k, v, &self_mask, rec));
    Tensor an = ln(a, L.ln_cross);
    Tensor kx = O::matmul(h, L.cross_attn.wk);
    Tensor vx = O::matmul(h, L.cross_attn.wv);
    Tensor b = O::add(a, mha(L.cross_attn, cfg_.heads, an, kx, vx, &cross, rec));
    x = O::add(b, ffn(ln(b, L.ln_ffn), L.ffn));
  }
  Tensor d_text = ln(x, net_->dec_ln_final);
  Tensor logits = O::add_rowvec(O::matmul(d_text, net_->out_w), net_->out_b);
  return {logits, d_text};
}

DecoderState Model::make_decoder_state() const {
  DecoderState st;
  st.layers.resize(cfg_.dec_layers);
  return st;
}

Model::StepResult Model::decode_step(DecoderState& state, const Tensor& h, int prev_token) const {
  NoGradGuard ng;
  std::vector<int> ids = {prev_token};
  Tensor x = O::add(
      O::scale(O::embedding(net_->tgt_embed, ids), std::sqrt(static_cast<double>(cfg_.width))),
      sinusoidal_rows(state.pos, 1, cfg_.width));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const DecLayer& L = net_->dec[l];
    DecoderLayerCache& lc = state.layers[l];
    Tensor xn = ln(x, L.ln_self);
    lc.k_self = append_rows(lc.k_self, O::matmul(xn, L.self_attn.wk));
    lc.v_self = append_rows(lc.v_self, O::matmul(xn, L.self_attn.wv));
    Tensor a = O::add(x, mha(L.self_attn, cfg_.heads, xn, lc.k_self, lc.v_self, nullptr, nullptr));
    Tensor an = ln(a, L.ln_cross);
    int64_t rows = h.dim(0);
    if (lc.h_rows < rows) {
      Tensor fresh = O::slice_rows(h, lc.h_rows, rows - lc.h_rows);
      lc.k_cross = append_rows(lc.k_cross, O::matmul(fresh, L.cross_attn.wk));
      lc.v_cross = append_rows(lc.v_cross, O::matmul(fresh, L.cross_attn.wv));
      lc.h_rows = static_cast<int>(rows);
    } else if (lc.h_rows > rows) {
      throw std::invalid_argument("decode_step: encoder states shrank");
    }
    Tensor b = O::add(a, mha(L.cross_attn, cfg_.heads, an, lc.k_cross, lc.v_cross, nullptr, nullptr));
    x = O::add(b, ffn(ln(b, L.ln_ffn), L.ffn));
  }
  Tensor d_text = ln(x, net_->dec_ln_final);
  Tensor logits = O::add_rowvec(O::matmul(d_text, net_->out_w), net_->out_b);
  StepResult res;
  res.token = argmax_lowest(logits.values());
  res.hidden = d_text;
  ++state.pos;
  return res;
}

// --- NAR text-to-unit ------------------------------------------------------

namespace {

Tensor plain_block(const PlainLayer& L, int heads, Tensor x, const Tensor* mask,
                   AttnRecorder* rec) {
  Tensor xn = ln(x, L.ln_attn);
  Tensor k = O::matmul(xn, L.attn.wk);
  Tensor v = O::matmul(xn, L.attn.wv);
  Tensor a = O::add(x, mha(L.attn, heads, xn, k, v, mask, rec));
  return O::add(a, ffn(ln(a, L.ln_ffn), L.ffn));
}

}  // namespace

Tensor Model::t2u_input(const Tensor& d_text_rows, std::span<const int> tokens) const {
  if (d_text_rows.dim(0) != static_cast<int64_t>(tokens.size())) {
    throw std::invalid_argument("t2u_input: row/token count mismatch");
  }
  Tensor emb = O::scale(O::embedding(net_->tgt_embed, tokens),
                        std::sqrt(static_cast<double>(cfg_.width)));
  return O::add(d_text_rows, emb);
}

Tensor Model::t2u_logits(const Tensor& t2u_in) const {
  const int64_t len = t2u_in.dim(0);
  const int r = cfg_.upsample_rate;
  Tensor x = t2u_in;
  Tensor causal = causal_mask(len);
  for (const auto& L : net_->t2u_enc) x = plain_block(L, cfg_.heads, x, &causal, nullptr);
  x = ln(x, net_->t2u_ln_final);
  Tensor u = O::add(O::upsample_rows(x, r), sinusoidal_rows(0, len * r, cfg_.width));
  Tensor block = chunk_mask(len * r, r);  // slot i sees slots of text positions <= ceil(i/r)
  for (const auto& L : net_->unit_dec) u = plain_block(L, cfg_.heads, u, &block, nullptr);
  u = ln(u, net_->unit_ln_final);
  return O::add_rowvec(O::matmul(u, net_->unit_w), net_->unit_b);
}

T2uState Model::make_t2u_state() const {
  T2uState st;
  st.enc_layers.resize(cfg_.t2u_enc_layers);
  st.dec_layers.resize(cfg_.unit_dec_layers);
  return st;
}

std::vector<int> Model::t2u_extend(T2uState& state, const Tensor& hidden_row, int token) const {
  NoGradGuard ng;
  const int r = cfg_.upsample_rate;
  std::vector<int> ids = {token};
  Tensor x = t2u_input(hidden_row, ids);
  for (size_t l = 0; l < net_->t2u_enc.size(); ++l) {
    const PlainLayer& L = net_->t2u_enc[l];
    T2uLayerCache& lc = state.enc_layers[l];
    Tensor xn = ln(x, L.ln_attn);
    lc.k = append_rows(lc.k, O::matmul(xn, L.attn.wk));
    lc.v = append_rows(lc.v, O::matmul(xn, L.attn.wv));
    Tensor a = O::add(x, mha(L.attn, cfg_.heads, xn, lc.k, lc.v, nullptr, nullptr));
    x = O::add(a, ffn(ln(a, L.ln_ffn), L.ffn));
  }
  x = ln(x, net_->t2u_ln_final);
  Tensor u = O::add(O::upsample_rows(x, r),
                    sinusoidal_rows(static_cast<int64_t>(state.text_rows) * r, r, cfg_.width));
  for (size_t l = 0; l < net_->unit_dec.size(); ++l) {
    const PlainLayer& L = net_->unit_dec[l];
    T2uLayerCache& lc = state.dec_layers[l];
    Tensor un = ln(u, L.ln_attn);
    lc.k = append_rows(lc.k, O::matmul(un, L.attn.wk));
    lc.v = append_rows(lc.v, O::matmul(un, L.attn.wv));
    Tensor a = O::add(u, mha(L.attn, cfg_.heads, un, lc.k, lc.v, nullptr, nullptr));
    u = O::add(a, ffn(ln(a, L.ln_ffn), L.ffn));
  }
  u = ln(u, net_->unit_ln_final);
  Tensor logits = O::add_rowvec(O::matmul(u, net_->unit_w), net_->unit_b);
  ++state.text_rows;

  std::vector<int> emitted;
  const int64_t vocab = cfg_.unit_rows();
  for (int i = 0; i < r; ++i) {
    int sym = argmax_lowest(logits.values().subspan(i * vocab, vocab));
    int out = state.collapser.push(sym);
    if (out >= 0) emitted.push_back(out);
  }
  return emitted;
}

// --- multitask loss --------------------------------------------------------

std::vector<int> Model::training_alignment(const std::vector<double>& n_asr,
                                           const std::vector<double>& n_nar, int target_len) {
  const int t = static_cast<int>(n_asr.size());
  constexpr double kNewTokenEps = 1e-6;
  std::vector<int> g(target_len, t);
  for (int i = 1; i <= target_len; ++i) {
    for (int j = 1; j <= t; ++j) {
      double inc = n_asr[j - 1] - (j >= 2 ? n_asr[j - 2] : 0.0);
      if (inc > kNewTokenEps && n_nar[j - 1] >= static_cast<double>(i)) {
        g[i - 1] = j;
        break;
      }
    }
  }
  return g;
}

LossBundle Model::multitask_loss(const toyspeech::Sample& sample, int chunk_frames) const {
  Tensor frames = frames_to_tensor(sample.frames);
  Tensor h = encode(frames, chunk_frames);
  auto [asr_logits, nar_logits] = probe_logits(h);

  LossBundle lb;
  lb.asr = ctc::ctc_loss(O::log_softmax(asr_logits), sample.source_tokens);
  lb.nar_s2tt = ctc::ctc_loss(O::log_softmax(nar_logits), sample.target_tokens);

  auto n_asr = ctc::expected_prefix_counts(probs_from_logits(asr_logits));
  auto n_nar = ctc::expected_prefix_counts(probs_from_logits(nar_logits));
  auto g = training_alignment(n_asr, n_nar, static_cast<int>(sample.target_tokens.size()));
  // At inference the decoder only ever sees chunk-aligned prefixes of H
  // (a token is emitted right after a chunk arrives), so realize g on the
  // same grid; the offline draw degenerates to full attention.
  const int t_frames = static_cast<int>(sample.frames.size());
  for (int& gi : g) {
    if (chunk_frames <= 0) {
      gi = t_frames;
    } else {
      gi = std::min(t_frames, ((gi + chunk_frames - 1) / chunk_frames) * chunk_frames);
    }
  }

  auto [ar_logits, d_text] = decode_teacher_forced(h, sample.target_tokens, g);
  lb.ar_s2tt = O::cross_entropy(ar_logits, sample.target_tokens);

  // The T2U stack consumes the content-token positions only (no <eos> block),
  // each combined with its token embedding via t2u_input.
  int64_t content_len = std::max<int64_t>(1, d_text.dim(0) - 1);
  std::span<const int> content_tokens(sample.target_tokens.data(),
                                      static_cast<size_t>(content_len));
  Tensor unit_logits =
      t2u_logits(t2u_input(O::slice_rows(d_text, 0, content_len), content_tokens));
  lb.s2ut = ctc::ctc_loss(O::log_softmax(unit_logits), sample.units);

  lb.feasible = std::isfinite(lb.asr.scalar_value()) && std::isfinite(lb.nar_s2tt.scalar_value()) &&
                std::isfinite(lb.ar_s2tt.scalar_value()) && std::isfinite(lb.s2ut.scalar_value());
  if (lb.feasible) {
    lb.total = O::add(O::add(O::scale(lb.s2ut, cfg_.w_s2ut), O::scale(lb.ar_s2tt, cfg_.w_ar_s2tt)),
                      O::add(O::scale(lb.asr, cfg_.w_asr), O::scale(lb.nar_s2tt, cfg_.w_nar_s2tt)));
  } else {
    lb.total = Tensor::scalar(std::numeric_limits<double>::infinity());
  }
  return lb;
}

// --- training --------------------------------------------------------------

int derive_upsample_rate(const toyspeech::Corpus& corpus) {
  if (corpus.samples.empty()) throw std::invalid_argument("upsample rate: empty corpus");
  double acc = 0.0;
  for (const auto& s : corpus.samples) {
    double y = static_cast<double>(s.target_tokens.size() - 1);
    acc += static_cast<double>(s.units.size()) / std::max(1.0, y);
  }
  double mean_ratio = acc / static_cast<double>(corpus.samples.size());
  return std::max(1, static_cast<int>(std::lround(2.5 * mean_ratio)));
}

AdamOptimizer train(Model& model, const toyspeech::Corpus& corpus, const TrainOptions& opts,
                    AdamOptimizer* resume_from) {
  if (corpus.samples.empty()) throw std::invalid_argument("train: empty corpus");
  AdamOptimizer opt = resume_from ? *resume_from : AdamOptimizer(opts.adam);
  auto& params = model.parameters();
  const int64_t first = opt.step_count() + 1;
  const int64_t last = opt.step_count() + opts.steps;
  for (int64_t step = first; step <= last; ++step) {
    Rng rng = Rng::substream(opts.seed, "train_step", static_cast<uint64_t>(step));
    std::vector<size_t> batch(opts.batch_size);
    int max_x = 1;
    for (auto& idx : batch) {
      idx = static_cast<size_t>(rng.next_below(corpus.samples.size()));
      max_x = std::max(max_x, static_cast<int>(corpus.samples[idx].frames.size()));
    }
    int chunk = kChunkInfinity;
    switch (opts.chunk_mode) {
      case ChunkMode::kMulti:
        chunk = rng.next_int(1, max_x);  // C == |X| degenerates to offline
        break;
      case ChunkMode::kFixed:
        chunk = opts.fixed_chunk;
        break;
      case ChunkMode::kOffline:
        chunk = kChunkInfinity;
        break;
    }

    StepLog log;
    log.step = step;
    log.chunk_frames = chunk;
    Tensor total;
    int used = 0;
    for (size_t idx : batch) {
      LossBundle lb = model.multitask_loss(corpus.samples[idx], chunk);
      if (!lb.feasible) {
        ++log.skipped;
        continue;
      }
      total = used == 0 ? lb.total : O::add(total, lb.total);
      log.loss_s2ut += lb.s2ut.scalar_value();
      log.loss_ar += lb.ar_s2tt.scalar_value();
      log.loss_asr += lb.asr.scalar_value();
      log.loss_nar += lb.nar_s2tt.scalar_value();
      ++used;
    }
    if (used > 0) {
      Tensor mean_loss = O::scale(total, 1.0 / used);
      log.loss_total = mean_loss.scalar_value();
      log.loss_s2ut /= used;
      log.loss_ar /= used;
      log.loss_asr /= used;
      log.loss_nar /= used;
      if (!std::isfinite(log.loss_total)) {
        throw std::runtime_error("training diverged: non-finite loss at step " +
                                 std::to_string(step));
      }
      zero_gradients(params);
      mean_loss.backward();
      clip_grad_norm(params, opts.clip_norm);
      opt.step(params);
    }
    if (opts.on_step) opts.on_step(log);
  }
  return opt;
}

void save_model(const Model& model, const std::string& path, int64_t step,
                const AdamOptimizer* opt) {
  CheckpointExtra extra;
  extra.step = step;
  extra.model_config_json = model.config().to_json();
  if (opt) {
    AdamOptimizer& o = const_cast<AdamOptimizer&>(*opt);
    extra.has_optimizer = !o.first_moments().empty();
    if (extra.has_optimizer) {
      extra.adam_m = o.first_moments();
      extra.adam_v = o.second_moments();
      extra.adam = o.config();
    }
  }
  save_checkpoint(path, model.parameters(), extra);
}

Model load_model(const std::string& path, CheckpointExtra* extra_out) {
  LoadedCheckpoint loaded = load_checkpoint(path);
  if (loaded.extra.model_config_json.empty()) {
    throw std::runtime_error("checkpoint lacks an embedded model config: " + path);
  }
  Model model(ModelConfig::from_json(loaded.extra.model_config_json));
  model.load_parameter_values(loaded.params);
  if (extra_out) *extra_out = std::move(loaded.extra);
  return model;
}

}  // namespace simulstream::model
