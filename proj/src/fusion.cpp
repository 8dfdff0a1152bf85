#include "cap/fusion.hpp"

#include <cmath>

namespace cap {

Paca::Paca(const std::string& name, const FusionConfig& cfg, Rng& rng)
    : mlp1(name + ".mlp1", cfg.m, cfg.m, ParamGroup::kT2I, rng),
      mlp2(name + ".mlp2", cfg.m, 2 * cfg.m, ParamGroup::kT2I, rng),
      mlp3(name + ".mlp3", 2 * cfg.m, cfg.m / cfg.heads, ParamGroup::kT2I, rng),
      wq(name + ".q", cfg.m / cfg.heads, cfg.m / cfg.heads, ParamGroup::kT2I, rng),
      wk(name + ".k", cfg.m / cfg.heads, cfg.m / cfg.heads, ParamGroup::kT2I, rng, false),
      wv(name + ".v", cfg.m / cfg.heads, cfg.m / cfg.heads, ParamGroup::kT2I, rng),
      pe(name + ".pe", ParamGroup::kT2I, cfg.n_vision + cfg.n_text, cfg.m / cfg.heads),
      dropout_p(cfg.dropout),
      heads_(cfg.heads) {
  if (cfg.heads <= 0 || cfg.m % cfg.heads != 0) throw std::invalid_argument("head count must divide m");
  init_uniform_fan_in(pe, pe.value.cols(), rng);
}

Mat Paca::forward(const Mat& f, Rng* rng, Cache* c) const {
  const Eigen::Index n = pe.value.rows(), d = head_dim();
  expect_shape(f, n, d * heads_, "fused tokens");
  if (!f.allFinite()) throw std::domain_error("non-finite fused tokens");
  if (identity) {
    if (c) c->fused = f;
    return f;
  }
  Cache local;
  Cache& k = c ? *c : local;
  k.fused = f;
  k.h1 = mlp1.forward(f);
  k.a1 = dropout(relu(k.h1), dropout_p, rng, &k.m1);
  k.h2 = mlp2.forward(k.a1);
  k.a2 = dropout(k.h2, dropout_p, rng, &k.m2);
  k.b = mlp3.forward(k.a2);

  k.kin = k.b + pe.value;
  k.kb = wk.forward(k.kin);
  k.vb = wv.forward(k.b);

  k.qin.resize(heads_ * n, d);
  for (int h = 0; h < heads_; ++h) k.qin.middleRows(h * n, n) = f.middleCols(h * d, d) + pe.value;
  k.q = wq.forward(k.qin);
  k.probs = softmax_rows((k.q * k.kb.transpose()) / std::sqrt(static_cast<double>(d)));
  Mat z = k.probs * k.vb;

  Mat out = f;
  for (int h = 0; h < heads_; ++h) out.middleCols(h * d, d) += z.middleRows(h * n, n);
  return out;
}

Mat Paca::backward(const Cache& c, const Mat& dy) {
  if (identity) return dy;
  const Eigen::Index n = pe.value.rows(), d = head_dim();
  Mat dz(heads_ * n, d);
  for (int h = 0; h < heads_; ++h) dz.middleRows(h * n, n) = dy.middleCols(h * d, d);

  Mat dprobs = dz * c.vb.transpose();
  Mat dvb = c.probs.transpose() * dz;
  Mat ds = softmax_rows_backward(c.probs, dprobs) / std::sqrt(static_cast<double>(d));
  Mat dq = ds * c.kb;
  Mat dkb = ds.transpose() * c.q;

  Mat dqin = wq.backward(c.qin, dq);
  Mat df = dy;
  for (int h = 0; h < heads_; ++h) {
    df.middleCols(h * d, d) += dqin.middleRows(h * n, n);
    pe.grad += dqin.middleRows(h * n, n);
  }
  Mat dkin = wk.backward(c.kin, dkb);
  pe.grad += dkin;
  Mat db = dkin + wv.backward(c.b, dvb);

  Mat dh2 = dropout_backward(c.m2, mlp3.backward(c.a2, db));
  Mat dh1 = relu_backward(c.h1, dropout_backward(c.m1, mlp2.backward(c.a1, dh2)));
  df += mlp1.backward(c.fused, dh1);
  return df;
}

void Paca::collect(ParamList& out) {
  mlp1.collect(out);
  mlp2.collect(out);
  mlp3.collect(out);
  wq.collect(out);
  wk.collect(out);
  wv.collect(out);
  out.push_back(&pe);
}


T2ISFLayer::T2ISFLayer(const std::string& name, const FusionConfig& cfg, Rng& rng)
    : paca(name, cfg, rng), n_vision(cfg.n_vision), n_text(cfg.n_text) {}

Mat fuse(const FusionPair& p) {
  if (p.text.cols() != p.vision.cols()) throw ShapeError("text and vision widths differ");
  Mat f(p.vision.rows() + p.text.rows(), p.vision.cols());
  f.topRows(p.vision.rows()) = p.vision;
  f.bottomRows(p.text.rows()) = p.text;
  return f;
}

FusionPair split(const Mat& fused, int n_vision) {
  return {fused.bottomRows(fused.rows() - n_vision), fused.topRows(n_vision)};
}

FusionPair T2ISFLayer::forward(const FusionPair& in, Rng* rng, Cache* c) const {
  expect_shape(in.vision, n_vision, paca.pe.value.cols() * paca.heads(), "vision tokens");
  expect_shape(in.text, n_text, paca.pe.value.cols() * paca.heads(), "text tokens");
  Cache local;
  Cache& k = c ? *c : local;
  k.vision_in = in.vision;
  k.paca_out = paca.forward(fuse(in), rng, c ? &k.paca : nullptr);
  FusionPair out = split(k.paca_out, n_vision);
  out.vision.array() *= 1.0 + in.vision.array();
  return out;
}

FusionPair T2ISFLayer::backward(const Cache& c, const FusionPair& dout) {
  Mat dpaca(c.paca_out.rows(), c.paca_out.cols());
  dpaca.topRows(n_vision) = dout.vision.array() * (1.0 + c.vision_in.array());
  dpaca.bottomRows(n_text) = dout.text;
  FusionPair din = split(paca.backward(c.paca, dpaca), n_vision);
  din.vision.array() += dout.vision.array() * c.paca_out.topRows(n_vision).array();
  return din;
}

FusionStack::FusionStack(const FusionConfig& cfg, Rng& rng) {
  if (cfg.layers < 1) throw std::invalid_argument("fusion needs at least one layer");
  for (int l = 0; l < cfg.layers; ++l) layers.emplace_back("fusion" + std::to_string(l), cfg, rng);
}

FusionState FusionStack::forward(const FusionPair& in, Rng* rng, bool keep_cache) const {
  FusionState s;
  s.layer_outputs.push_back(in);
  if (keep_cache) s.caches.resize(layers.size());
  for (std::size_t l = 0; l < layers.size(); ++l)
    s.layer_outputs.push_back(layers[l].forward(s.layer_outputs.back(), rng, keep_cache ? &s.caches[l] : nullptr));
  return s;
}

FusionPair FusionStack::backward(const FusionState& s, const FusionPair& dout) {
  FusionPair d = dout;
  for (std::size_t l = layers.size(); l-- > 0;) d = layers[l].backward(s.caches[l], d);
  return d;
}

void FusionStack::collect(ParamList& out) {
  for (auto& l : layers) l.collect(out);
}

void FusionStack::set_identity(bool on) {
  for (auto& l : layers) l.paca.identity = on;
}

}  // namespace cap
