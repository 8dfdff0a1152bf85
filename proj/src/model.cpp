#include "cap/model.hpp"

#include <set>

namespace cap {

namespace {
Rng init_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return Rng(seq);
}

EncoderConfig encoder_config(const ModelConfig& c) { return {c.m, c.heads, c.n_text, c.conv_channels}; }

FusionConfig fusion_config(const ModelConfig& c) { return {c.m, c.heads, 49, c.n_text, c.dropout, c.t2i_layers}; }

DecoderConfig decoder_config(const ModelConfig& c) { return {c.context, c.decoder_heads, 49, c.n_text, c.smooth_sigma}; }

}  // namespace

// Each module draws its initial weights from its own stream so that resizing
// one module leaves the others unchanged.
CapModel::CapModel(const ModelConfig& c, int vocab_size)
    : config(c),
      encoders([&] {
        Rng r = init_rng(c.seed, 1);
        return Encoders(encoder_config(c), vocab_size, r);
      }()),
      fusion([&] {
        Rng r = init_rng(c.seed, 2);
        return FusionStack(fusion_config(c), r);
      }()),
      gcn([&] {
        Rng r = init_rng(c.seed, 3);
        return GraphConv(c.m, c.context, r);
      }()),
      gru([&] {
        Rng r = init_rng(c.seed, 4);
        return GruCell(c.context, c.hidden, r);
      }()),
      head([&] {
        Rng r = init_rng(c.seed, 5);
        return AccidentHead(c.hidden, c.fc_mid, r);
      }()),
      decoder([&] {
        Rng r = init_rng(c.seed, 6);
        return AttentionDecoder(decoder_config(c), r);
      }()) {
  check_param_partition(parameters());
}

ClipOutput CapModel::forward(const ClipInput& in, Rng* rng, bool with_maps, ClipTrace* trace) const {
  const int n = in.n_frames();
  if (n <= 0) throw std::invalid_argument("clip has no frames");
  ClipTrace local;
  ClipTrace& tr = trace ? *trace : local;
  tr.input = &in;
  tr.folded = encoders.patch.fold();
  tr.text_ids = in.text_ids;
  tr.frames.assign(trace ? static_cast<std::size_t>(n) : 1, FrameTrace{});

  const TokenMatrix text = encoders.encode_text(in.text_ids, &tr.text_block);
  check_tokens(text, config.m, config.n_text);

  ClipOutput out;
  RowVec h = RowVec::Zero(config.hidden);
  for (int t = 0; t < n; ++t) {
    FrameTrace& f = tr.frames[trace ? static_cast<std::size_t>(t) : 0];
    const Mat tokens = encoders.patch.forward_pooled(in.pooled[static_cast<std::size_t>(t)], tr.folded);
    FusionPair layer0{text.data, encoders.block_forward(tokens, &f.vision_block)};
    f.fusion = fusion.forward(layer0, rng, trace != nullptr);
    const Mat fused = fuse(f.fusion.final());
    const Mat s = gcn.forward(fused, build_adjacency(fused), &f.gcn);
    h = gru.forward(scaler.forward(pool_max(s, &f.argmax)), h, &f.gru);
    out.p_hat.push_back(head.forward(h, &f.head));
    f.has_decoder = with_maps;
    if (with_maps) out.maps.push_back(decoder.forward(s, &f.decoder));
  }
  return out;
}

void CapModel::backward(const ClipTrace& tr, std::span<const double> dp, std::span<const Mat> dmaps,
                        std::vector<Mat>* dpooled) {
  const ClipInput& in = *tr.input;
  const int n = in.n_frames();
  if (static_cast<int>(tr.frames.size()) != n || static_cast<int>(dp.size()) != n)
    throw std::invalid_argument("backward needs a full trace and one gradient per frame");
  PatchEmbed::FoldGrad fold;
  fold.reset(PatchEmbed::kPatchDim, config.m);
  Mat dtext = Mat::Zero(config.n_text, config.m);
  if (dpooled) dpooled->assign(static_cast<std::size_t>(n), Mat());

  RowVec dh_carry = RowVec::Zero(config.hidden);
  for (int t = n - 1; t >= 0; --t) {
    const FrameTrace& f = tr.frames[static_cast<std::size_t>(t)];
    RowVec dh = head.backward(f.head, dp[static_cast<std::size_t>(t)]) + dh_carry;
    RowVec dpooled_s;
    gru.backward_accumulate(f.gru, dh, dpooled_s, dh_carry);
    Mat ds = pool_max_backward(f.argmax, f.gcn.tokens.rows(), scaler.backward(dpooled_s));
    if (!dmaps.empty() && f.has_decoder) ds += decoder.backward(f.decoder, dmaps[static_cast<std::size_t>(t)]);
    const Mat dfused = gcn.backward(f.gcn, ds);
    const FusionPair d0 = fusion.backward(f.fusion, split(dfused, 49));
    dtext += d0.text;
    const Mat dtokens = encoders.block_backward(f.vision_block, d0.vision);
    encoders.patch.accumulate(in.pooled[static_cast<std::size_t>(t)], dtokens, fold);
    if (dpooled) (*dpooled)[static_cast<std::size_t>(t)] = encoders.patch.pooled_grad(dtokens, tr.folded);
  }
  encoders.patch.apply_fold_grad(fold);
  encoders.text->backward(tr.text_ids, encoders.block_backward(tr.text_block, dtext));
}

std::vector<RowVec> CapModel::pooled_context(const ClipInput& in) const {
  const TokenMatrix text = encoders.encode_text(in.text_ids, nullptr);
  const PatchEmbed::Folded folded = encoders.patch.fold();
  std::vector<RowVec> out;
  for (const Mat& pooled : in.pooled) {
    FusionPair layer0{text.data, encoders.block_forward(encoders.patch.forward_pooled(pooled, folded), nullptr)};
    const Mat fused = fuse(fusion.forward(layer0, nullptr, false).final());
    out.push_back(pool_max(gcn.forward(fused, build_adjacency(fused))));
  }
  return out;
}

LossBreakdown CapModel::loss(const ClipOutput& out, const ClipInput& in, const ClipSample& clip,
                             const Objective& obj) const {
  const double t_ai = clip.t_ai_local ? *clip.t_ai_local : 0.0;
  const double la = anticipation_loss(out.p_hat, clip.positive(), t_ai, clip.fps);
  double ld = 0;
  if (obj.attention_loss) ld = attention_loss(in.gt_maps, out.maps);
  return total_loss(ld, la, obj.lambda);
}

LossBreakdown CapModel::train_step(const ClipInput& in, const ClipSample& clip, const Objective& obj, Rng* rng,
                                   ClipOutput* output) {
  if (obj.attention_loss && static_cast<int>(in.gt_maps.size()) != in.n_frames())
    throw std::invalid_argument("attention loss needs one ground-truth map per frame");
  ClipTrace trace;
  ClipOutput out = forward(in, rng, obj.attention_loss, &trace);
  LossBreakdown lb = loss(out, in, clip, obj);
  const double t_ai = clip.t_ai_local ? *clip.t_ai_local : 0.0;
  std::vector<double> dp = anticipation_loss_grad(out.p_hat, clip.positive(), t_ai, clip.fps);
  for (double& g : dp) g *= obj.lambda;
  std::vector<Mat> dmaps;
  if (obj.attention_loss)
    for (int t = 0; t < in.n_frames(); ++t)
      dmaps.push_back(kl_attention_grad(in.gt_maps[static_cast<std::size_t>(t)], out.maps[static_cast<std::size_t>(t)]));
  backward(trace, dp, dmaps);
  if (output) *output = std::move(out);
  return lb;
}

ParamList CapModel::parameters() {
  ParamList p;
  encoders.collect(p);
  fusion.collect(p);
  gcn.collect(p);
  gru.collect(p);
  head.collect(p);
  decoder.collect(p);
  return p;
}

void CapModel::zero_grad() {
  for (Param* p : parameters()) p->zero_grad();
}

void check_param_partition(const ParamList& params) {
  std::set<std::string> names;
  std::set<ParamGroup> groups;
  for (const Param* p : params) {
    if (!names.insert(p->name).second) throw std::logic_error("duplicate parameter name " + p->name);
    groups.insert(p->group);
  }
  for (ParamGroup g : {ParamGroup::kSelfAttention, ParamGroup::kT2I, ParamGroup::kGru, ParamGroup::kDecoder})
    if (!groups.count(g)) throw std::logic_error("parameter group " + std::string(to_string(g)) + " is empty");
}

}  // namespace cap
