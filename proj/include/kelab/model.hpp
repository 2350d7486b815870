#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "kelab/common.hpp"
#include "kelab/vocab.hpp"

namespace kelab {

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Activation : int32_t { relu = 0, gelu = 1 };

inline const char* activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "gelu";
}

inline Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  fail(errc::config_error, "unknown activation \"" + name + "\"");
}

struct ModelConfig {
  int n_layers = 2;
  int d_model = 32;
  int d_mlp = 64;
  int n_heads = 2;
  int vocab_size = 64;
  int max_seq_len = 64;
  Activation activation = Activation::gelu;
  int64_t seed = 0;

  int head_dim() const { return d_model / n_heads; }

  void validate() const {
    require(n_layers > 0 && d_model > 0 && d_mlp > 0 && n_heads > 0 &&
                vocab_size > 0 && max_seq_len > 0,
            errc::config_error, "model dimensions must be positive");
    require(d_model % n_heads == 0, errc::config_error,
            "d_model must be divisible by n_heads");
  }

  bool operator==(const ModelConfig&) const = default;
};

// One pre-norm transformer block. Token positions are matrix columns.
template <class Scalar>
struct BlockParamsT {
  VecX<Scalar> ln1_g, ln1_b;
  MatX<Scalar> wq, wk, wv, wo;  // d_model x d_model
  VecX<Scalar> bq, bk, bv, bo;
  VecX<Scalar> ln2_g, ln2_b;  // normalization read by the MLP
  MatX<Scalar> w_fc;          // d_mlp x d_model
  VecX<Scalar> b_fc;
  MatX<Scalar> w_down;  // d_model x d_mlp; the editable down-projection (no bias)
};

// Immutable after construction; weight replacement returns a new state.
template <class Scalar>
struct ModelStateT {
  ModelConfig config;
  uint32_t version = 1;
  MatX<Scalar> tok_emb;  // d_model x vocab_size
  MatX<Scalar> pos_emb;  // d_model x max_seq_len
  std::vector<BlockParamsT<Scalar>> blocks;
  VecX<Scalar> lnf_g, lnf_b;
  MatX<Scalar> unembed;  // vocab_size x d_model
};

using ModelState = ModelStateT<float>;

// Visits every named parameter tensor. The callback receives
// (name, tensor&) where the tensor is either a MatX or a VecX.
template <class Model, class F>
void visit_params(Model& m, F&& f) {
  f("tok_emb", m.tok_emb);
  f("pos_emb", m.pos_emb);
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    auto& b = m.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    f(p + "ln1_g", b.ln1_g);
    f(p + "ln1_b", b.ln1_b);
    f(p + "wq", b.wq);
    f(p + "bq", b.bq);
    f(p + "wk", b.wk);
    f(p + "bk", b.bk);
    f(p + "wv", b.wv);
    f(p + "bv", b.bv);
    f(p + "wo", b.wo);
    f(p + "bo", b.bo);
    f(p + "ln2_g", b.ln2_g);
    f(p + "ln2_b", b.ln2_b);
    f(p + "w_fc", b.w_fc);
    f(p + "b_fc", b.b_fc);
    f(p + "w_down", b.w_down);
  }
  f("lnf_g", m.lnf_g);
  f("lnf_b", m.lnf_b);
  f("unembed", m.unembed);
}

template <class Scalar>
int64_t parameter_count(const ModelStateT<Scalar>& m) {
  int64_t n = 0;
  visit_params(const_cast<ModelStateT<Scalar>&>(m),
               [&](const std::string&, auto& t) { n += t.size(); });
  return n;
}

// Maximum absolute elementwise difference across all parameters.
template <class Scalar>
Scalar parameter_diff(const ModelStateT<Scalar>& a, const ModelStateT<Scalar>& b) {
  require(a.config == b.config, errc::invalid_input,
          "parameter_diff: configs differ");
  Scalar worst = 0;
  std::vector<const void*> seen;
  visit_params(const_cast<ModelStateT<Scalar>&>(a), [&](const std::string& name, auto& ta) {
    visit_params(const_cast<ModelStateT<Scalar>&>(b), [&](const std::string& nb, auto& tb) {
      if (name != nb) return;
      using TA = std::decay_t<decltype(ta)>;
      using TB = std::decay_t<decltype(tb)>;
      if constexpr (std::is_same_v<TA, TB>) {
        worst = std::max(worst, (ta - tb).cwiseAbs().maxCoeff());
      }
    });
  });
  return worst;
}

template <class Scalar>
ModelStateT<Scalar> zeros_like(const ModelStateT<Scalar>& m) {
  ModelStateT<Scalar> z = m;
  visit_params(z, [](const std::string&, auto& t) { t.setZero(); });
  return z;
}

template <class To, class From>
ModelStateT<To> cast_model(const ModelStateT<From>& m) {
  ModelStateT<To> out;
  out.config = m.config;
  out.version = m.version;
  out.tok_emb = m.tok_emb.template cast<To>();
  out.pos_emb = m.pos_emb.template cast<To>();
  out.lnf_g = m.lnf_g.template cast<To>();
  out.lnf_b = m.lnf_b.template cast<To>();
  out.unembed = m.unembed.template cast<To>();
  out.blocks.resize(m.blocks.size());
  for (size_t i = 0; i < m.blocks.size(); ++i) {
    const auto& b = m.blocks[i];
    auto& o = out.blocks[i];
    o.ln1_g = b.ln1_g.template cast<To>();
    o.ln1_b = b.ln1_b.template cast<To>();
    o.wq = b.wq.template cast<To>();
    o.wk = b.wk.template cast<To>();
    o.wv = b.wv.template cast<To>();
    o.wo = b.wo.template cast<To>();
    o.bq = b.bq.template cast<To>();
    o.bk = b.bk.template cast<To>();
    o.bv = b.bv.template cast<To>();
    o.bo = b.bo.template cast<To>();
    o.ln2_g = b.ln2_g.template cast<To>();
    o.ln2_b = b.ln2_b.template cast<To>();
    o.w_fc = b.w_fc.template cast<To>();
    o.b_fc = b.b_fc.template cast<To>();
    o.w_down = b.w_down.template cast<To>();
  }
  return out;
}

// Seeded normal initialization. Down-projections use a depth-scaled std so
// residual magnitudes stay level at init.
template <class Scalar = float>
ModelStateT<Scalar> init_model(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937 rng(static_cast<uint32_t>(cfg.seed));
  std::normal_distribution<double> dist(0.0, 0.02);
  auto fill = [&](auto& t, double std_scale = 1.0) {
    for (Eigen::Index i = 0; i < t.size(); ++i)
      t.data()[i] = static_cast<Scalar>(dist(rng) * std_scale);
  };

  ModelStateT<Scalar> m;
  m.config = cfg;
  m.tok_emb.resize(cfg.d_model, cfg.vocab_size);
  fill(m.tok_emb);
  m.pos_emb.resize(cfg.d_model, cfg.max_seq_len);
  fill(m.pos_emb, 0.5);
  const double down_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  m.blocks.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& b : m.blocks) {
    b.ln1_g = VecX<Scalar>::Ones(cfg.d_model);
    b.ln1_b = VecX<Scalar>::Zero(cfg.d_model);
    b.wq.resize(cfg.d_model, cfg.d_model);
    fill(b.wq);
    b.wk.resize(cfg.d_model, cfg.d_model);
    fill(b.wk);
    b.wv.resize(cfg.d_model, cfg.d_model);
    fill(b.wv);
    b.wo.resize(cfg.d_model, cfg.d_model);
    fill(b.wo, down_scale);
    b.bq = VecX<Scalar>::Zero(cfg.d_model);
    b.bk = VecX<Scalar>::Zero(cfg.d_model);
    b.bv = VecX<Scalar>::Zero(cfg.d_model);
    b.bo = VecX<Scalar>::Zero(cfg.d_model);
    b.ln2_g = VecX<Scalar>::Ones(cfg.d_model);
    b.ln2_b = VecX<Scalar>::Zero(cfg.d_model);
    b.w_fc.resize(cfg.d_mlp, cfg.d_model);
    fill(b.w_fc);
    b.b_fc = VecX<Scalar>::Zero(cfg.d_mlp);
    b.w_down.resize(cfg.d_model, cfg.d_mlp);
    fill(b.w_down, down_scale);
  }
  m.lnf_g = VecX<Scalar>::Ones(cfg.d_model);
  m.lnf_b = VecX<Scalar>::Zero(cfg.d_model);
  m.unembed.resize(cfg.vocab_size, cfg.d_model);
  fill(m.unembed);
  return m;
}

constexpr double kLayerNormEps = 1e-5;

// Column-wise layer norm with scale g and shift b. Optionally reports the
// per-column mean and inverse std (needed by backward passes).
template <class Scalar>
MatX<Scalar> layer_norm(const MatX<Scalar>& x, const VecX<Scalar>& g,
                        const VecX<Scalar>& b, VecX<Scalar>* mu_out = nullptr,
                        VecX<Scalar>* istd_out = nullptr) {
  const Eigen::Index d = x.rows(), t = x.cols();
  MatX<Scalar> y(d, t);
  if (mu_out) mu_out->resize(t);
  if (istd_out) istd_out->resize(t);
  for (Eigen::Index c = 0; c < t; ++c) {
    const Scalar mu = x.col(c).mean();
    const Scalar var = (x.col(c).array() - mu).square().sum() / Scalar(d);
    const Scalar istd = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    y.col(c) = (((x.col(c).array() - mu) * istd) * g.array() + b.array()).matrix();
    if (mu_out) (*mu_out)(c) = mu;
    if (istd_out) (*istd_out)(c) = istd;
  }
  return y;
}

template <class Scalar>
Scalar gelu_scalar(Scalar z) {
  const Scalar c = Scalar(0.7978845608028654);  // sqrt(2/pi)
  return Scalar(0.5) * z * (Scalar(1) + std::tanh(c * (z + Scalar(0.044715) * z * z * z)));
}

template <class Scalar>
Scalar gelu_grad_scalar(Scalar z) {
  const Scalar c = Scalar(0.7978845608028654);
  const Scalar u = c * (z + Scalar(0.044715) * z * z * z);
  const Scalar th = std::tanh(u);
  const Scalar sech2 = Scalar(1) - th * th;
  const Scalar du = c * (Scalar(1) + Scalar(3) * Scalar(0.044715) * z * z);
  return Scalar(0.5) * (Scalar(1) + th) + Scalar(0.5) * z * sech2 * du;
}

template <class Scalar>
MatX<Scalar> apply_activation(Activation act, const MatX<Scalar>& z) {
  if (act == Activation::relu) return z.cwiseMax(Scalar(0));
  return z.unaryExpr([](Scalar v) { return gelu_scalar(v); });
}

template <class Scalar>
MatX<Scalar> activation_grad(Activation act, const MatX<Scalar>& z) {
  if (act == Activation::relu)
    return z.unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); });
  return z.unaryExpr([](Scalar v) { return gelu_grad_scalar(v); });
}

// Per-layer activations captured during a forward pass, one column per token.
// keys holds the post-nonlinearity MLP hidden vectors.
template <class Scalar>
struct LayerActivationsT {
  int layer = -1;
  MatX<Scalar> attn_out;     // a, d_model x T
  MatX<Scalar> residual_in;  // h (block input), d_model x T
  MatX<Scalar> keys;         // k, d_mlp x T
  MatX<Scalar> mlp_out;      // d_model x T
};

using LayerActivations = LayerActivationsT<float>;

template <class Scalar>
struct ForwardResult {
  VecX<Scalar> logits;  // final position, vocab_size
  std::vector<LayerActivationsT<Scalar>> activations;
};

namespace detail {

template <class Scalar>
void check_tokens(const ModelConfig& cfg, const std::vector<TokenId>& tokens) {
  require(!tokens.empty(), errc::invalid_input, "token list is empty");
  require(static_cast<int>(tokens.size()) <= cfg.max_seq_len,
          errc::invalid_input,
          "sequence length " + std::to_string(tokens.size()) +
              " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  for (TokenId t : tokens)
    require(t >= 0 && t < cfg.vocab_size, errc::invalid_input,
            "token id " + std::to_string(t) + " out of range for vocab_size " +
                std::to_string(cfg.vocab_size));
  (void)sizeof(Scalar);
}

// Multi-head causal self-attention on a pre-normed input. attn_out gets the
// post-projection output; if probs != nullptr, the per-head softmax matrices
// (rows = query positions) are stored there.
template <class Scalar>
void self_attention(const BlockParamsT<Scalar>& blk, const ModelConfig& cfg,
                    const MatX<Scalar>& n1, MatX<Scalar>& attn_out,
                    std::vector<MatX<Scalar>>* probs = nullptr,
                    MatX<Scalar>* q_out = nullptr, MatX<Scalar>* k_out = nullptr,
                    MatX<Scalar>* v_out = nullptr, MatX<Scalar>* a0_out = nullptr) {
  const Eigen::Index t = n1.cols();
  const int nh = cfg.n_heads, dh = cfg.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));

  MatX<Scalar> q = (blk.wq * n1).colwise() + blk.bq;
  MatX<Scalar> k = (blk.wk * n1).colwise() + blk.bk;
  MatX<Scalar> v = (blk.wv * n1).colwise() + blk.bv;

  MatX<Scalar> a0(cfg.d_model, t);
  if (probs) probs->assign(static_cast<size_t>(nh), MatX<Scalar>());
  for (int h = 0; h < nh; ++h) {
    auto qh = q.middleRows(h * dh, dh);
    auto kh = k.middleRows(h * dh, dh);
    auto vh = v.middleRows(h * dh, dh);
    MatX<Scalar> scores = (qh.transpose() * kh) * scale;  // T x T, rows = queries
    MatX<Scalar> p = MatX<Scalar>::Zero(t, t);
    for (Eigen::Index i = 0; i < t; ++i) {
      const Scalar mx = scores.row(i).head(i + 1).maxCoeff();
      VecX<Scalar> e = (scores.row(i).head(i + 1).array() - mx).exp();
      p.row(i).head(i + 1) = e.transpose() / e.sum();
    }
    a0.middleRows(h * dh, dh) = vh * p.transpose();
    if (probs) (*probs)[static_cast<size_t>(h)] = std::move(p);
  }
  attn_out = (blk.wo * a0).colwise() + blk.bo;
  if (q_out) *q_out = std::move(q);
  if (k_out) *k_out = std::move(k);
  if (v_out) *v_out = std::move(v);
  if (a0_out) *a0_out = std::move(a0);
}

template <class Scalar>
void check_finite(const MatX<Scalar>& x, int layer, const char* what) {
  if (!x.allFinite())
    fail(errc::numeric, std::string("non-finite ") + what + " at layer " +
                            std::to_string(layer));
}

}  // namespace detail

// Full forward pass. Returns final-position logits and the requested layer
// captures. Pure function of (model, tokens): no internal state.
template <class Scalar>
ForwardResult<Scalar> forward(const ModelStateT<Scalar>& m,
                              const std::vector<TokenId>& tokens,
                              const std::set<int>& capture_layers = {}) {
  const ModelConfig& cfg = m.config;
  detail::check_tokens<Scalar>(cfg, tokens);
  for (int l : capture_layers)
    require(l >= 0 && l < cfg.n_layers, errc::invalid_input,
            "capture layer " + std::to_string(l) + " out of range");

  const Eigen::Index t = static_cast<Eigen::Index>(tokens.size());
  MatX<Scalar> x(cfg.d_model, t);
  for (Eigen::Index i = 0; i < t; ++i)
    x.col(i) = m.tok_emb.col(tokens[static_cast<size_t>(i)]) + m.pos_emb.col(i);

  ForwardResult<Scalar> out;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& blk = m.blocks[static_cast<size_t>(l)];
    MatX<Scalar> n1 = layer_norm<Scalar>(x, blk.ln1_g, blk.ln1_b);
    MatX<Scalar> a;
    detail::self_attention<Scalar>(blk, cfg, n1, a);
    MatX<Scalar> m_in = a + x;
    MatX<Scalar> n2 = layer_norm<Scalar>(m_in, blk.ln2_g, blk.ln2_b);
    MatX<Scalar> keys =
        apply_activation<Scalar>(cfg.activation, (blk.w_fc * n2).colwise() + blk.b_fc);
    MatX<Scalar> mlp_out = blk.w_down * keys;
    detail::check_finite(mlp_out, l, "activation");
    if (capture_layers.count(l)) {
      LayerActivationsT<Scalar> cap;
      cap.layer = l;
      cap.attn_out = a;
      cap.residual_in = x;
      cap.keys = keys;
      cap.mlp_out = mlp_out;
      out.activations.push_back(std::move(cap));
    }
    x = m_in + mlp_out;
  }
  MatX<Scalar> nf = layer_norm<Scalar>(x, m.lnf_g, m.lnf_b);
  out.logits = m.unembed * nf.col(t - 1);
  if (!out.logits.allFinite()) fail(errc::numeric, "non-finite logits");
  return out;
}

template <class Scalar>
VecX<Scalar> softmax(const VecX<Scalar>& logits) {
  VecX<Scalar> p = (logits.array() - logits.maxCoeff()).exp();
  return p / p.sum();
}

struct TopCandidate {
  TokenId token;
  double prob;
};

template <class Scalar>
struct DecodeResultT {
  std::vector<TokenId> generated_tokens;
  std::vector<VecX<Scalar>> step_logits;
  std::vector<std::vector<TopCandidate>> step_topk;
};

using DecodeResult = DecodeResultT<float>;

// Greedy decoding with a banned-token set. Deterministic; at each step the
// highest-probability non-banned token is emitted. Records top-k candidates
// per step for persistence analysis.
template <class Scalar>
DecodeResultT<Scalar> greedy_decode(const ModelStateT<Scalar>& m,
                                    const std::vector<TokenId>& prompt,
                                    int max_tokens,
                                    const std::set<TokenId>& banned = {},
                                    const std::set<TokenId>& stop = {},
                                    int top_k = 10) {
  require(!prompt.empty(), errc::invalid_input, "prompt is empty");
  require(max_tokens >= 1, errc::invalid_input, "max_tokens must be >= 1");
  require(static_cast<int>(banned.size()) < m.config.vocab_size,
          errc::config_error, "banned set covers the entire vocabulary");

  DecodeResultT<Scalar> res;
  std::vector<TokenId> seq = prompt;
  for (int step = 0; step < max_tokens; ++step) {
    if (static_cast<int>(seq.size()) >= m.config.max_seq_len) break;
    VecX<Scalar> logits = forward(m, seq).logits;
    VecX<Scalar> probs = softmax(logits);

    std::vector<int> order(static_cast<size_t>(logits.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::partial_sort(order.begin(),
                      order.begin() + std::min<size_t>(order.size(),
                                                       static_cast<size_t>(top_k)),
                      order.end(), [&](int a, int b) {
                        if (probs(a) != probs(b)) return probs(a) > probs(b);
                        return a < b;  // deterministic tie-break
                      });
    std::vector<TopCandidate> top;
    for (int i = 0; i < std::min<int>(top_k, static_cast<int>(order.size())); ++i)
      top.push_back({order[static_cast<size_t>(i)],
                     static_cast<double>(probs(order[static_cast<size_t>(i)]))});

    TokenId best = -1;
    Scalar best_logit = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      if (banned.count(static_cast<TokenId>(i))) continue;
      if (logits(i) > best_logit) {
        best_logit = logits(i);
        best = static_cast<TokenId>(i);
      }
    }
    res.generated_tokens.push_back(best);
    res.step_logits.push_back(std::move(logits));
    res.step_topk.push_back(std::move(top));
    seq.push_back(best);
    if (stop.count(best)) break;
  }
  return res;
}

// Returns a copy of `base` whose down-projection at `layer` is replaced.
// Everything else is untouched; `base` itself is never modified.
template <class Scalar>
ModelStateT<Scalar> replace_layer_weights(const ModelStateT<Scalar>& base,
                                          int layer,
                                          const MatX<Scalar>& new_down_projection) {
  require(layer >= 0 && layer < base.config.n_layers, errc::invalid_input,
          "layer " + std::to_string(layer) + " out of range");
  require(new_down_projection.rows() == base.config.d_model &&
              new_down_projection.cols() == base.config.d_mlp,
          errc::invalid_input,
          "replacement shape (" + std::to_string(new_down_projection.rows()) +
              "x" + std::to_string(new_down_projection.cols()) +
              ") does not match (d_model x d_mlp)");
  ModelStateT<Scalar> out = base;
  out.blocks[static_cast<size_t>(layer)].w_down = new_down_projection;
  return out;
}

}  // namespace kelab
