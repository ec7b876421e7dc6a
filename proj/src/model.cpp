// SPDX-License-Identifier: Apache-2.0
//
// Transformer encoder-decoder with a fingerprint MLP head and hand-written
// backpropagation. Post-layer-norm blocks, GELU activations, learned
// absolute positions. Samples are processed at their true lengths, so
// padded positions never enter attention, pooling or either loss term.

#include "specnovo/model.hpp"

#include <algorithm>
#include <cmath>

#include "specnovo/errors.hpp"

namespace specnovo {

namespace {

constexpr double kLnEps = 1e-5;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475));
}

double gelu_grad(double x) {
  const double phi = 0.5 * (1.0 + std::erf(x * 0.7071067811865475));
  const double pdf = std::exp(-0.5 * x * x) * 0.3989422804014327;
  return phi + x * pdf;
}

Mat gelu_mat(const Mat& x) {
  return x.unaryExpr([](double v) { return gelu(v); });
}

Mat gelu_grad_mat(const Mat& x) {
  return x.unaryExpr([](double v) { return gelu_grad(v); });
}

}  // namespace

void ModelConfig::validate() const {
  if (d_model < 1 || num_heads < 1 || encoder_layers < 1 ||
      decoder_layers < 1 || ffn_dim < 1 || fingerprint_width < 1 ||
      max_len < 1) {
    throw DomainError("model config: all dimensions must be >= 1");
  }
  if (d_model % num_heads != 0) {
    throw DomainError("model config: d_model must be divisible by num_heads");
  }
  if (input_vocab < 1 || output_vocab < 1) {
    throw DomainError("model config: vocabulary sizes must be set");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw DomainError("model config: dropout must be in [0, 1)");
  }
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.d_model = 64;
  c.num_heads = 4;
  c.encoder_layers = 2;
  c.decoder_layers = 2;
  c.ffn_dim = 128;
  c.fingerprint_width = 256;
  c.dropout = 0.1;
  c.max_len = 1024;
  return c;
}

ModelConfig ModelConfig::paper() {
  ModelConfig c;
  c.d_model = 1024;
  c.num_heads = 8;
  c.encoder_layers = 6;
  c.decoder_layers = 6;
  c.ffn_dim = 2048;
  c.fingerprint_width = 2048;
  c.dropout = 0.1;
  c.max_len = 1024;
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.d_model = 8;
  c.num_heads = 2;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.ffn_dim = 16;
  c.fingerprint_width = 16;
  c.dropout = 0.0;
  c.max_len = 256;
  return c;
}

Mat& ModelParams::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DomainError("unknown parameter: " + name);
  return it->second;
}

const Mat& ModelParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw DomainError("unknown parameter: " + name);
  return it->second;
}

namespace {

enum class InitKind { Xavier, Zero, One, Embedding };

struct TensorSpec {
  std::string name;
  int rows;
  int cols;
  InitKind kind;
};

std::vector<TensorSpec> tensor_specs(const ModelConfig& c) {
  std::vector<TensorSpec> specs;
  const int d = c.d_model;
  specs.push_back({"embed.in", c.input_vocab, d, InitKind::Embedding});
  specs.push_back({"embed.out", c.output_vocab, d, InitKind::Embedding});
  specs.push_back({"pos.enc", c.max_len, d, InitKind::Embedding});
  specs.push_back({"pos.dec", c.max_len, d, InitKind::Embedding});
  auto attn = [&specs, d](const std::string& prefix) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) {
      specs.push_back({prefix + "." + w, d, d, InitKind::Xavier});
    }
    for (const char* b : {"bq", "bk", "bv", "bo"}) {
      specs.push_back({prefix + "." + b, 1, d, InitKind::Zero});
    }
  };
  auto norm = [&specs, d](const std::string& prefix) {
    specs.push_back({prefix + ".g", 1, d, InitKind::One});
    specs.push_back({prefix + ".b", 1, d, InitKind::Zero});
  };
  auto ffn = [&specs, d, &c](const std::string& prefix) {
    specs.push_back({prefix + ".w1", d, c.ffn_dim, InitKind::Xavier});
    specs.push_back({prefix + ".b1", 1, c.ffn_dim, InitKind::Zero});
    specs.push_back({prefix + ".w2", c.ffn_dim, d, InitKind::Xavier});
    specs.push_back({prefix + ".b2", 1, d, InitKind::Zero});
  };
  for (int l = 0; l < c.encoder_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    attn(p + ".attn");
    norm(p + ".ln1");
    ffn(p + ".ffn");
    norm(p + ".ln2");
  }
  for (int l = 0; l < c.decoder_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    attn(p + ".self");
    norm(p + ".ln1");
    attn(p + ".cross");
    norm(p + ".ln2");
    ffn(p + ".ffn");
    norm(p + ".ln3");
  }
  specs.push_back({"fphead.w1", d, d, InitKind::Xavier});
  specs.push_back({"fphead.b1", 1, d, InitKind::Zero});
  specs.push_back({"fphead.w2", d, c.fingerprint_width, InitKind::Xavier});
  specs.push_back({"fphead.b2", 1, c.fingerprint_width, InitKind::Zero});
  specs.push_back({"out.w", d, c.output_vocab, InitKind::Xavier});
  specs.push_back({"out.b", 1, c.output_vocab, InitKind::Zero});
  return specs;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ModelParams params;
  params.config = config;
  std::vector<TensorSpec> specs = tensor_specs(config);
  std::sort(specs.begin(), specs.end(),
            [](const TensorSpec& a, const TensorSpec& b) {
              return a.name < b.name;
            });
  Rng rng(seed);
  for (const TensorSpec& spec : specs) {
    Mat m(spec.rows, spec.cols);
    switch (spec.kind) {
      case InitKind::Zero:
        m.setZero();
        break;
      case InitKind::One:
        m.setOnes();
        break;
      case InitKind::Xavier: {
        const double limit = std::sqrt(6.0 / (spec.rows + spec.cols));
        for (int i = 0; i < m.rows(); ++i) {
          for (int j = 0; j < m.cols(); ++j) {
            m(i, j) = rng.uniform(-limit, limit);
          }
        }
        break;
      }
      case InitKind::Embedding:
        for (int i = 0; i < m.rows(); ++i) {
          for (int j = 0; j < m.cols(); ++j) {
            m(i, j) = 0.02 * rng.normal();
          }
        }
        break;
    }
    params.tensors.emplace(spec.name, std::move(m));
  }
  return params;
}

int Batch::input_len(int row) const {
  int len = 0;
  for (int j = 0; j < input_ids.cols(); ++j) {
    if (input_ids(row, j) != input_pad_id) ++len;
  }
  return len;
}

int Batch::target_len(int row) const {
  int len = 0;
  for (int j = 0; j < target_ids.cols(); ++j) {
    if (target_ids(row, j) != target_pad_id) ++len;
  }
  return len;
}

// ---------------------------------------------------------------------------
// Forward tape
// ---------------------------------------------------------------------------

namespace {

struct AttnTrace {
  Mat x_q, x_kv;          // sublayer inputs
  Mat q, k, v;            // projected
  std::vector<Mat> attn;  // softmax weights per head [Lq, Lk]
  Mat concat;             // heads concatenated [Lq, d]
  Mat dropmask;           // empty when dropout off
};

struct LnTrace {
  Mat normed;  // (x - mean) * rstd
  Eigen::VectorXd rstd;
};

struct FfnTrace {
  Mat input;
  Mat pre;  // input*w1 + b1
  Mat dropmask;
};

struct EncLayerTrace {
  AttnTrace attn;
  LnTrace ln1;
  FfnTrace ffn;
  LnTrace ln2;
};

struct DecLayerTrace {
  AttnTrace self;
  LnTrace ln1;
  AttnTrace cross;
  LnTrace ln2;
  FfnTrace ffn;
  LnTrace ln3;
};

struct SampleTrace {
  std::vector<int> in_ids;
  std::vector<int> dec_in;
  std::vector<int> gold;
  Mat enc_x0;
  std::vector<EncLayerTrace> enc;
  std::vector<Mat> enc_states;  // input of each layer; back() = encoder out
  Mat dec_x0;
  std::vector<DecLayerTrace> dec;
  std::vector<Mat> dec_states;
  Mat fp_pre;  // pooled*w1 + b1
};

}  // namespace

struct Tape {
  std::vector<SampleTrace> samples;
};

namespace {

Mat rows_plus_bias(const Mat& x, const Mat& w, const Mat& b) {
  Mat out = x * w;
  out.rowwise() += b.row(0);
  return out;
}

Mat make_dropmask(int rows, int cols, double p, Rng& rng) {
  Mat mask(rows, cols);
  const double keep = 1.0 - p;
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      mask(i, j) = rng.uniform() < p ? 0.0 : 1.0 / keep;
    }
  }
  return mask;
}

// Multi-head attention; causal masks future key positions. Returns the
// sublayer output before dropout/residual.
Mat attention_fwd(const ModelParams& params, const std::string& prefix,
                  const Mat& x_q, const Mat& x_kv, bool causal,
                  AttnTrace& trace) {
  const int d = params.config.d_model;
  const int heads = params.config.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  trace.x_q = x_q;
  trace.x_kv = x_kv;
  if (x_kv.rows() == 0) {
    trace.attn.clear();
    return Mat::Zero(x_q.rows(), d);
  }
  trace.q = rows_plus_bias(x_q, params.at(prefix + ".wq"), params.at(prefix + ".bq"));
  trace.k = rows_plus_bias(x_kv, params.at(prefix + ".wk"), params.at(prefix + ".bk"));
  trace.v = rows_plus_bias(x_kv, params.at(prefix + ".wv"), params.at(prefix + ".bv"));

  const int lq = static_cast<int>(x_q.rows());
  const int lk = static_cast<int>(x_kv.rows());
  trace.attn.assign(heads, Mat());
  trace.concat.resize(lq, d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = trace.q.middleCols(h * dh, dh);
    const auto kh = trace.k.middleCols(h * dh, dh);
    const auto vh = trace.v.middleCols(h * dh, dh);
    Mat scores = qh * kh.transpose() * scale;
    if (causal) {
      for (int i = 0; i < lq; ++i) {
        for (int j = i + 1; j < lk; ++j) scores(i, j) = -1e30;
      }
    }
    // Row softmax, stable.
    Mat weights(lq, lk);
    for (int i = 0; i < lq; ++i) {
      const double m = scores.row(i).maxCoeff();
      Eigen::RowVectorXd e = (scores.row(i).array() - m).exp();
      weights.row(i) = e / e.sum();
    }
    trace.attn[h] = weights;
    trace.concat.middleCols(h * dh, dh) = weights * vh;
  }
  return rows_plus_bias(trace.concat, params.at(prefix + ".wo"),
                        params.at(prefix + ".bo"));
}

Mat layer_norm_fwd(const ModelParams& params, const std::string& prefix,
                   const Mat& x, LnTrace& trace) {
  const int cols = static_cast<int>(x.cols());
  trace.normed.resize(x.rows(), cols);
  trace.rstd.resize(x.rows());
  Mat out(x.rows(), cols);
  const Mat& g = params.at(prefix + ".g");
  const Mat& b = params.at(prefix + ".b");
  for (int i = 0; i < x.rows(); ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLnEps);
    trace.rstd(i) = rstd;
    trace.normed.row(i) = (x.row(i).array() - mean) * rstd;
    out.row(i) = trace.normed.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
  return out;
}

Mat ffn_fwd(const ModelParams& params, const std::string& prefix, const Mat& x,
            FfnTrace& trace) {
  trace.input = x;
  trace.pre = rows_plus_bias(x, params.at(prefix + ".w1"), params.at(prefix + ".b1"));
  return rows_plus_bias(gelu_mat(trace.pre), params.at(prefix + ".w2"),
                        params.at(prefix + ".b2"));
}

Mat embed_sequence(const ModelParams& params, const std::string& table,
                   const std::string& pos_table, const std::vector<int>& ids) {
  const int d = params.config.d_model;
  const Mat& table_m = params.at(table);
  const Mat& pos_m = params.at(pos_table);
  const double scale = std::sqrt(static_cast<double>(d));
  Mat out(static_cast<int>(ids.size()), d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= table_m.rows()) {
      throw DimensionError("token id " + std::to_string(ids[i]) +
                           " out of range for " + table);
    }
    if (static_cast<int>(i) >= params.config.max_len) {
      throw DimensionError("sequence exceeds max_len");
    }
    out.row(static_cast<int>(i)) =
        table_m.row(ids[i]) * scale + pos_m.row(static_cast<int>(i));
  }
  return out;
}

void apply_dropout(Mat& x, Mat& mask_slot, const ForwardOptions& opts,
                   double p) {
  if (!opts.dropout || p <= 0.0) return;
  mask_slot = make_dropmask(static_cast<int>(x.rows()),
                            static_cast<int>(x.cols()), p, *opts.rng);
  x = x.cwiseProduct(mask_slot);
}

}  // namespace

ForwardResult forward(const ModelParams& params, const Batch& batch,
                      const ForwardOptions& opts) {
  params.config.validate();
  if (opts.dropout && opts.rng == nullptr) {
    throw DomainError("dropout requires an rng");
  }
  const ModelConfig& cfg = params.config;
  const int b = batch.size();
  if (batch.fingerprint_bits.rows() != b ||
      batch.fingerprint_bits.cols() != cfg.fingerprint_width) {
    throw DimensionError("fingerprint bit matrix shape mismatch");
  }

  ForwardResult result;
  result.token_logits.resize(b);
  result.fp_logits.resize(b, cfg.fingerprint_width);
  result.pooled.resize(b, cfg.d_model);
  auto tape = std::make_shared<Tape>();
  tape->samples.resize(b);

  for (int s = 0; s < b; ++s) {
    SampleTrace& tr = tape->samples[s];
    const int in_len = batch.input_len(s);
    const int tgt_len = batch.target_len(s);
    for (int j = 0; j < in_len; ++j) tr.in_ids.push_back(batch.input_ids(s, j));
    for (int j = 0; j + 1 < tgt_len; ++j) tr.dec_in.push_back(batch.target_ids(s, j));
    for (int j = 1; j < tgt_len; ++j) tr.gold.push_back(batch.target_ids(s, j));

    // Encoder.
    Mat x;
    if (in_len > 0) {
      x = embed_sequence(params, "embed.in", "pos.enc", tr.in_ids);
    } else {
      x = Mat::Zero(0, cfg.d_model);
    }
    tr.enc_x0 = x;
    tr.enc.resize(cfg.encoder_layers);
    tr.enc_states.clear();
    for (int l = 0; l < cfg.encoder_layers; ++l) {
      tr.enc_states.push_back(x);
      EncLayerTrace& lt = tr.enc[l];
      const std::string p = "enc." + std::to_string(l);
      if (in_len > 0) {
        Mat attn_out = attention_fwd(params, p + ".attn", x, x, false, lt.attn);
        apply_dropout(attn_out, lt.attn.dropmask, opts, cfg.dropout);
        Mat y1 = layer_norm_fwd(params, p + ".ln1", x + attn_out, lt.ln1);
        Mat ffn_out = ffn_fwd(params, p + ".ffn", y1, lt.ffn);
        apply_dropout(ffn_out, lt.ffn.dropmask, opts, cfg.dropout);
        x = layer_norm_fwd(params, p + ".ln2", y1 + ffn_out, lt.ln2);
      }
    }
    tr.enc_states.push_back(x);

    // Pooled embedding and fingerprint head.
    Eigen::RowVectorXd pooled = Eigen::RowVectorXd::Zero(cfg.d_model);
    if (in_len > 0) pooled = x.colwise().mean();
    result.pooled.row(s) = pooled;
    tr.fp_pre = pooled * params.at("fphead.w1") + params.at("fphead.b1").row(0);
    Eigen::RowVectorXd fp_act =
        tr.fp_pre.row(0).unaryExpr([](double v) { return gelu(v); });
    result.fp_logits.row(s) =
        fp_act * params.at("fphead.w2") + params.at("fphead.b2").row(0);

    // Decoder.
    const int dec_len = static_cast<int>(tr.dec_in.size());
    Mat y;
    if (dec_len > 0) {
      y = embed_sequence(params, "embed.out", "pos.dec", tr.dec_in);
    } else {
      y = Mat::Zero(0, cfg.d_model);
    }
    tr.dec_x0 = y;
    tr.dec.resize(cfg.decoder_layers);
    tr.dec_states.clear();
    const Mat& enc_out = tr.enc_states.back();
    for (int l = 0; l < cfg.decoder_layers; ++l) {
      tr.dec_states.push_back(y);
      DecLayerTrace& lt = tr.dec[l];
      const std::string p = "dec." + std::to_string(l);
      if (dec_len > 0) {
        Mat self_out = attention_fwd(params, p + ".self", y, y, true, lt.self);
        apply_dropout(self_out, lt.self.dropmask, opts, cfg.dropout);
        Mat y1 = layer_norm_fwd(params, p + ".ln1", y + self_out, lt.ln1);
        Mat cross_out =
            attention_fwd(params, p + ".cross", y1, enc_out, false, lt.cross);
        apply_dropout(cross_out, lt.cross.dropmask, opts, cfg.dropout);
        Mat y2 = layer_norm_fwd(params, p + ".ln2", y1 + cross_out, lt.ln2);
        Mat ffn_out = ffn_fwd(params, p + ".ffn", y2, lt.ffn);
        apply_dropout(ffn_out, lt.ffn.dropmask, opts, cfg.dropout);
        y = layer_norm_fwd(params, p + ".ln3", y2 + ffn_out, lt.ln3);
      }
    }
    tr.dec_states.push_back(y);
    result.token_logits[s] =
        dec_len > 0 ? rows_plus_bias(y, params.at("out.w"), params.at("out.b"))
                    : Mat(0, cfg.output_vocab);
  }

  if (opts.keep_tape) result.tape = tape;
  return result;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace {

struct LossDenominators {
  long ce_positions = 0;
  int bce_samples = 0;
};

LossDenominators loss_denominators(const Batch& batch) {
  LossDenominators d;
  for (int s = 0; s < batch.size(); ++s) {
    const int tgt_len = batch.target_len(s);
    if (tgt_len >= 2) d.ce_positions += tgt_len - 1;
    if (batch.input_len(s) > 0) ++d.bce_samples;
  }
  return d;
}

double logsumexp_row(const Eigen::RowVectorXd& row) {
  const double m = row.maxCoeff();
  return m + std::log((row.array() - m).exp().sum());
}

}  // namespace

Losses loss_joint(const ForwardResult& fwd, const Batch& batch, double lambda) {
  if (lambda < 0.0) throw DomainError("lambda must be >= 0");
  for (const Mat& logits : fwd.token_logits) {
    if (!logits.allFinite()) throw NumericsError("non-finite token logits");
  }
  if (!fwd.fp_logits.allFinite()) {
    throw NumericsError("non-finite fingerprint logits");
  }

  const LossDenominators denom = loss_denominators(batch);
  Losses losses;

  double ce_sum = 0.0;
  for (int s = 0; s < batch.size(); ++s) {
    const Mat& logits = fwd.token_logits[s];
    const int tgt_len = batch.target_len(s);
    for (int t = 0; t + 1 < tgt_len; ++t) {
      const int gold = batch.target_ids(s, t + 1);
      ce_sum += logsumexp_row(logits.row(t)) - logits(t, gold);
    }
  }
  if (denom.ce_positions > 0) {
    losses.ce = ce_sum / static_cast<double>(denom.ce_positions);
  }

  double bce_sum = 0.0;
  for (int s = 0; s < batch.size(); ++s) {
    if (batch.input_len(s) == 0) continue;
    for (int j = 0; j < fwd.fp_logits.cols(); ++j) {
      const double z = fwd.fp_logits(s, j);
      const double y = batch.fingerprint_bits(s, j);
      // max(z,0) - z*y + log(1 + exp(-|z|)): stable binary CE on logits.
      bce_sum += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    }
  }
  if (denom.bce_samples > 0) {
    bce_sum /= static_cast<double>(denom.bce_samples) *
               static_cast<double>(fwd.fp_logits.cols());
    losses.bce = bce_sum;
  }
  losses.total = losses.ce + lambda * losses.bce;
  return losses;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace {

struct GradAccum {
  ParamMap grads;

  explicit GradAccum(const ModelParams& params) {
    for (const auto& [name, tensor] : params.tensors) {
      grads.emplace(name, Mat::Zero(tensor.rows(), tensor.cols()));
    }
  }

  Mat& at(const std::string& name) { return grads.find(name)->second; }
};

void layer_norm_bwd(const ModelParams& params, const std::string& prefix,
                    const LnTrace& trace, const Mat& dout, Mat& dx,
                    GradAccum& acc) {
  const Mat& g = params.at(prefix + ".g");
  Mat& gg = acc.at(prefix + ".g");
  Mat& gb = acc.at(prefix + ".b");
  const int cols = static_cast<int>(dout.cols());
  dx.resize(dout.rows(), cols);
  for (int i = 0; i < dout.rows(); ++i) {
    const Eigen::RowVectorXd dn = dout.row(i).cwiseProduct(g.row(0));
    const Eigen::RowVectorXd normed = trace.normed.row(i);
    const double rstd = trace.rstd(i);
    const double mean_dn = dn.mean();
    const double mean_dn_normed = dn.cwiseProduct(normed).mean();
    dx.row(i) =
        (dn.array() - mean_dn - normed.array() * mean_dn_normed) * rstd;
    gg.row(0) += dout.row(i).cwiseProduct(normed);
    gb.row(0) += dout.row(i);
  }
}

void ffn_bwd(const ModelParams& params, const std::string& prefix,
             const FfnTrace& trace, const Mat& dout, Mat& dx,
             GradAccum& acc) {
  const Mat act = gelu_mat(trace.pre);
  acc.at(prefix + ".w2") += act.transpose() * dout;
  acc.at(prefix + ".b2") += dout.colwise().sum();
  Mat dact = dout * params.at(prefix + ".w2").transpose();
  Mat dpre = dact.cwiseProduct(gelu_grad_mat(trace.pre));
  acc.at(prefix + ".w1") += trace.input.transpose() * dpre;
  acc.at(prefix + ".b1") += dpre.colwise().sum();
  dx = dpre * params.at(prefix + ".w1").transpose();
}

// dx_q and dx_kv are accumulated into (callers pass zeroed or existing
// gradients to support the self-attention case where q and kv coincide).
void attention_bwd(const ModelParams& params, const std::string& prefix,
                   const AttnTrace& trace, const Mat& dout, Mat& dx_q,
                   Mat& dx_kv, GradAccum& acc) {
  if (trace.x_kv.rows() == 0) return;  // sublayer was a zero constant
  const int d = params.config.d_model;
  const int heads = params.config.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  acc.at(prefix + ".wo") += trace.concat.transpose() * dout;
  acc.at(prefix + ".bo") += dout.colwise().sum();
  Mat dconcat = dout * params.at(prefix + ".wo").transpose();

  Mat dq(trace.q.rows(), d), dk(trace.k.rows(), d), dv(trace.v.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto qh = trace.q.middleCols(h * dh, dh);
    const auto kh = trace.k.middleCols(h * dh, dh);
    const auto vh = trace.v.middleCols(h * dh, dh);
    const Mat& attn = trace.attn[h];
    const auto dch = dconcat.middleCols(h * dh, dh);

    Mat dattn = dch * vh.transpose();
    dv.middleCols(h * dh, dh) = attn.transpose() * dch;

    // Softmax backward per row; masked cells carry zero weight so their
    // score gradient vanishes automatically.
    Mat dscores(attn.rows(), attn.cols());
    for (int i = 0; i < attn.rows(); ++i) {
      const double dot = dattn.row(i).cwiseProduct(attn.row(i)).sum();
      dscores.row(i) =
          (dattn.row(i).array() - dot) * attn.row(i).array();
    }
    dscores *= scale;
    dq.middleCols(h * dh, dh) = dscores * kh;
    dk.middleCols(h * dh, dh) = dscores.transpose() * qh;
  }

  acc.at(prefix + ".wq") += trace.x_q.transpose() * dq;
  acc.at(prefix + ".bq") += dq.colwise().sum();
  acc.at(prefix + ".wk") += trace.x_kv.transpose() * dk;
  acc.at(prefix + ".bk") += dk.colwise().sum();
  acc.at(prefix + ".wv") += trace.x_kv.transpose() * dv;
  acc.at(prefix + ".bv") += dv.colwise().sum();

  dx_q += dq * params.at(prefix + ".wq").transpose();
  dx_kv += dk * params.at(prefix + ".wk").transpose();
  dx_kv += dv * params.at(prefix + ".wv").transpose();
}

Mat apply_mask_bwd(const Mat& dout, const Mat& mask) {
  if (mask.size() == 0) return dout;
  return dout.cwiseProduct(mask);
}

void scatter_embedding(const std::vector<int>& ids, const Mat& dx,
                       double scale, Mat& dtable, Mat& dpos) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    dtable.row(ids[i]) += dx.row(static_cast<int>(i)) * scale;
    dpos.row(static_cast<int>(i)) += dx.row(static_cast<int>(i));
  }
}

}  // namespace

BackwardResult backward(const ModelParams& params, const Batch& batch,
                        double lambda, const ForwardOptions& opts) {
  ForwardOptions fwd_opts = opts;
  fwd_opts.keep_tape = true;
  ForwardResult fwd = forward(params, batch, fwd_opts);
  BackwardResult result;
  result.losses = loss_joint(fwd, batch, lambda);
  GradAccum acc(params);

  const ModelConfig& cfg = params.config;
  const LossDenominators denom = loss_denominators(batch);
  const double ce_scale =
      denom.ce_positions > 0 ? 1.0 / static_cast<double>(denom.ce_positions)
                             : 0.0;
  const double bce_scale =
      denom.bce_samples > 0
          ? lambda / (static_cast<double>(denom.bce_samples) *
                      static_cast<double>(cfg.fingerprint_width))
          : 0.0;

  for (int s = 0; s < batch.size(); ++s) {
    const SampleTrace& tr = fwd.tape->samples[s];
    const int dec_len = static_cast<int>(tr.dec_in.size());
    const int in_len = static_cast<int>(tr.in_ids.size());
    Mat d_enc_out = Mat::Zero(in_len, cfg.d_model);

    // Token logits -> decoder stack.
    if (dec_len > 0) {
      const Mat& logits = fwd.token_logits[s];
      Mat dlogits(dec_len, cfg.output_vocab);
      for (int t = 0; t < dec_len; ++t) {
        const Eigen::RowVectorXd row = logits.row(t);
        const double lse = logsumexp_row(row);
        Eigen::RowVectorXd p = (row.array() - lse).exp();
        p(tr.gold[t]) -= 1.0;
        dlogits.row(t) = p * ce_scale;
      }
      acc.at("out.w") += tr.dec_states.back().transpose() * dlogits;
      acc.at("out.b") += dlogits.colwise().sum();
      Mat dy = dlogits * params.at("out.w").transpose();

      for (int l = cfg.decoder_layers - 1; l >= 0; --l) {
        const DecLayerTrace& lt = tr.dec[l];
        const std::string p = "dec." + std::to_string(l);
        Mat dr3;
        layer_norm_bwd(params, p + ".ln3", lt.ln3, dy, dr3, acc);
        Mat dffn = apply_mask_bwd(dr3, lt.ffn.dropmask);
        Mat dy2_from_ffn;
        ffn_bwd(params, p + ".ffn", lt.ffn, dffn, dy2_from_ffn, acc);
        Mat dy2 = dr3 + dy2_from_ffn;

        Mat dr2;
        layer_norm_bwd(params, p + ".ln2", lt.ln2, dy2, dr2, acc);
        Mat dcross = apply_mask_bwd(dr2, lt.cross.dropmask);
        Mat dy1 = dr2;
        attention_bwd(params, p + ".cross", lt.cross, dcross, dy1, d_enc_out,
                      acc);

        Mat dr1;
        layer_norm_bwd(params, p + ".ln1", lt.ln1, dy1, dr1, acc);
        Mat dself = apply_mask_bwd(dr1, lt.self.dropmask);
        Mat dy0 = dr1;
        attention_bwd(params, p + ".self", lt.self, dself, dy0, dy0, acc);
        dy = dy0;
      }
      scatter_embedding(tr.dec_in, dy,
                        std::sqrt(static_cast<double>(cfg.d_model)),
                        acc.at("embed.out"), acc.at("pos.dec"));
    }

    // Fingerprint head -> pooled -> encoder output.
    if (in_len > 0) {
      Eigen::RowVectorXd dz(cfg.fingerprint_width);
      for (int j = 0; j < cfg.fingerprint_width; ++j) {
        const double z = fwd.fp_logits(s, j);
        const double y = batch.fingerprint_bits(s, j);
        dz(j) = (1.0 / (1.0 + std::exp(-z)) - y) * bce_scale;
      }
      const Eigen::RowVectorXd fp_act =
          tr.fp_pre.row(0).unaryExpr([](double v) { return gelu(v); });
      acc.at("fphead.w2") += fp_act.transpose() * dz;
      acc.at("fphead.b2") += dz;
      Eigen::RowVectorXd dact = dz * params.at("fphead.w2").transpose();
      Eigen::RowVectorXd dpre = dact.cwiseProduct(
          tr.fp_pre.row(0).unaryExpr([](double v) { return gelu_grad(v); }));
      acc.at("fphead.w1") += fwd.pooled.row(s).transpose() * dpre;
      acc.at("fphead.b1") += dpre;
      Eigen::RowVectorXd dpooled = dpre * params.at("fphead.w1").transpose();
      // Mean pooling: spread evenly over encoder rows.
      for (int i = 0; i < in_len; ++i) {
        d_enc_out.row(i) += dpooled / static_cast<double>(in_len);
      }
    }

    // Encoder stack.
    if (in_len > 0) {
      Mat dx = d_enc_out;
      for (int l = cfg.encoder_layers - 1; l >= 0; --l) {
        const EncLayerTrace& lt = tr.enc[l];
        const std::string p = "enc." + std::to_string(l);
        Mat dr2;
        layer_norm_bwd(params, p + ".ln2", lt.ln2, dx, dr2, acc);
        Mat dffn = apply_mask_bwd(dr2, lt.ffn.dropmask);
        Mat dy1_from_ffn;
        ffn_bwd(params, p + ".ffn", lt.ffn, dffn, dy1_from_ffn, acc);
        Mat dy1 = dr2 + dy1_from_ffn;

        Mat dr1;
        layer_norm_bwd(params, p + ".ln1", lt.ln1, dy1, dr1, acc);
        Mat dattn = apply_mask_bwd(dr1, lt.attn.dropmask);
        Mat dx0 = dr1;
        attention_bwd(params, p + ".attn", lt.attn, dattn, dx0, dx0, acc);
        dx = dx0;
      }
      scatter_embedding(tr.in_ids, dx,
                        std::sqrt(static_cast<double>(cfg.d_model)),
                        acc.at("embed.in"), acc.at("pos.enc"));
    }
  }

  for (auto& [name, grad] : acc.grads) {
    if (!grad.allFinite()) {
      throw NumericsError("non-finite gradient in " + name);
    }
  }
  result.grads = std::move(acc.grads);
  return result;
}

double lr_schedule(Phase phase, int epoch) {
  switch (phase) {
    case Phase::Pretrain: return 1e-4 * std::pow(0.95, epoch);
    case Phase::Finetune: return 5e-5 * std::pow(0.95, epoch);
    case Phase::Ttt: return 5e-5 * std::pow(0.995, epoch);
  }
  return 0.0;
}

std::string phase_to_string(Phase phase) {
  switch (phase) {
    case Phase::Pretrain: return "pretrain";
    case Phase::Finetune: return "finetune";
    case Phase::Ttt: return "ttt";
  }
  return "pretrain";
}

Phase phase_from_string(const std::string& s) {
  if (s == "pretrain") return Phase::Pretrain;
  if (s == "finetune") return Phase::Finetune;
  if (s == "ttt") return Phase::Ttt;
  throw DomainError("unknown phase: " + s);
}

TrainState init_train_state(const ModelConfig& config, std::uint64_t seed,
                            Phase phase) {
  TrainState state;
  state.params = init_params(config, seed);
  for (const auto& [name, tensor] : state.params.tensors) {
    state.moment1.emplace(name, Mat::Zero(tensor.rows(), tensor.cols()));
    state.moment2.emplace(name, Mat::Zero(tensor.rows(), tensor.cols()));
  }
  state.rng_seed = seed;
  state.phase = phase;
  state.lr = lr_schedule(phase, 0);
  return state;
}

Losses train_step(TrainState& state, const Batch& batch, double lambda,
                  std::optional<double> lr_override) {
  ForwardOptions opts;
  Rng dropout_rng = state.dropout_rng();
  if (state.params.config.dropout > 0.0) {
    opts.dropout = true;
    opts.rng = &dropout_rng;
  }
  BackwardResult back = backward(state.params, batch, lambda, opts);

  state.lr = lr_override.value_or(lr_schedule(state.phase, state.epoch));
  const OptimizerConfig& oc = state.optimizer;
  const long t = state.step + 1;
  const double bc1 = 1.0 - std::pow(oc.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(oc.beta2, static_cast<double>(t));
  for (auto& [name, param] : state.params.tensors) {
    const Mat& g = back.grads.find(name)->second;
    Mat& m = state.moment1.find(name)->second;
    Mat& v = state.moment2.find(name)->second;
    m = oc.beta1 * m + (1.0 - oc.beta1) * g;
    v = oc.beta2 * v + (1.0 - oc.beta2) * g.cwiseProduct(g);
    const Mat mhat = m / bc1;
    const Mat vhat = v / bc2;
    Mat update = (mhat.array() / (vhat.array().sqrt() + oc.eps)).matrix();
    if (oc.weight_decay > 0.0) update += oc.weight_decay * param;
    param -= state.lr * update;
  }
  state.step = t;
  return back.losses;
}

EncodedInput encode_input(const ModelParams& params,
                          const std::vector<int>& input_ids) {
  const ModelConfig& cfg = params.config;
  if (input_ids.empty()) throw DomainError("encode_input: empty sequence");
  Mat x = embed_sequence(params, "embed.in", "pos.enc", input_ids);
  for (int l = 0; l < cfg.encoder_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    EncLayerTrace lt;
    Mat attn_out = attention_fwd(params, p + ".attn", x, x, false, lt.attn);
    Mat y1 = layer_norm_fwd(params, p + ".ln1", x + attn_out, lt.ln1);
    Mat ffn_out = ffn_fwd(params, p + ".ffn", y1, lt.ffn);
    x = layer_norm_fwd(params, p + ".ln2", y1 + ffn_out, lt.ln2);
  }
  EncodedInput out;
  out.enc_out = std::move(x);
  out.pooled = out.enc_out.colwise().mean();
  Eigen::RowVectorXd pre =
      out.pooled * params.at("fphead.w1") + params.at("fphead.b1").row(0);
  Eigen::RowVectorXd act = pre.unaryExpr([](double v) { return gelu(v); });
  out.fp_logits = act * params.at("fphead.w2") + params.at("fphead.b2").row(0);
  return out;
}

Mat decode_logits(const ModelParams& params, const Mat& enc_out,
                  const std::vector<int>& dec_in) {
  const ModelConfig& cfg = params.config;
  if (dec_in.empty()) throw DomainError("decode_logits: empty prefix");
  Mat y = embed_sequence(params, "embed.out", "pos.dec", dec_in);
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    DecLayerTrace lt;
    Mat self_out = attention_fwd(params, p + ".self", y, y, true, lt.self);
    Mat y1 = layer_norm_fwd(params, p + ".ln1", y + self_out, lt.ln1);
    Mat cross_out =
        attention_fwd(params, p + ".cross", y1, enc_out, false, lt.cross);
    Mat y2 = layer_norm_fwd(params, p + ".ln2", y1 + cross_out, lt.ln2);
    Mat ffn_out = ffn_fwd(params, p + ".ffn", y2, lt.ffn);
    y = layer_norm_fwd(params, p + ".ln3", y2 + ffn_out, lt.ln3);
  }
  return rows_plus_bias(y, params.at("out.w"), params.at("out.b"));
}

double token_accuracy(const ModelParams& params, const Batch& batch) {
  ForwardResult fwd = forward(params, batch);
  long correct = 0, total = 0;
  for (int s = 0; s < batch.size(); ++s) {
    const Mat& logits = fwd.token_logits[s];
    const int tgt_len = batch.target_len(s);
    for (int t = 0; t + 1 < tgt_len; ++t) {
      int argmax = 0;
      logits.row(t).maxCoeff(&argmax);
      if (argmax == batch.target_ids(s, t + 1)) ++correct;
      ++total;
    }
  }
  return total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                   : 0.0;
}

}  // namespace specnovo
