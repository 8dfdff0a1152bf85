#pragma once

// Full per-clip model: encoders -> fusion stack -> graph context -> recurrent
// accident head, with the attention decoder branching off the context.

#include <span>
#include <vector>

#include "cap/attention_decoder.hpp"
#include "cap/clip_sampler.hpp"
#include "cap/context_head.hpp"
#include "cap/encoders.hpp"
#include "cap/fusion.hpp"
#include "cap/losses.hpp"

namespace cap {

struct ModelConfig {
  Eigen::Index m = 120;
  int heads = 8;
  int n_text = 15;
  Eigen::Index conv_channels = 768;
  int t2i_layers = 3;
  double dropout = 0.1;
  Eigen::Index context = 512;
  Eigen::Index hidden = 256;
  Eigen::Index fc_mid = 64;
  int decoder_heads = 8;
  double smooth_sigma = 1.5;
  std::uint64_t seed = 0;
};

struct ClipInput {
  std::vector<Mat> pooled;   // per frame, 49 x 768 pooled pixel patches
  std::vector<int> text_ids;
  std::vector<Mat> gt_maps;  // per frame, normalized 64 x 64; may be empty
  int n_frames() const { return static_cast<int>(pooled.size()); }
};

struct ClipOutput {
  std::vector<double> p_hat;
  std::vector<Mat> maps;  // empty unless maps were requested
};

struct FrameTrace {
  Encoders::BlockCache vision_block;
  FusionState fusion;
  GraphConv::Cache gcn;
  std::vector<Eigen::Index> argmax;
  GruCell::Cache gru;
  AccidentHead::Cache head;
  AttentionDecoder::Cache decoder;
  bool has_decoder = false;
};

struct ClipTrace {
  PatchEmbed::Folded folded;
  std::vector<int> text_ids;
  Encoders::BlockCache text_block;
  std::vector<FrameTrace> frames;
  const ClipInput* input = nullptr;
};

struct Objective {
  double lambda = 5.0;
  bool attention_loss = true;  // false trains without the decoder branch
};

class CapModel {
 public:
  CapModel(const ModelConfig& config, int vocab_size);

  // Dropout is active iff dropout_rng is non-null.
  ClipOutput forward(const ClipInput& input, Rng* dropout_rng, bool with_maps, ClipTrace* trace = nullptr) const;

  // Accumulates parameter gradients for the given output gradients. dmaps may
  // be empty (no decoder gradient). When dpooled is non-null it receives the
  // gradient with respect to each frame's pooled patches.
  void backward(const ClipTrace& trace, std::span<const double> dp_hat, std::span<const Mat> dmaps,
                std::vector<Mat>* dpooled = nullptr);

  // Forward, loss, backward. Gradients accumulate; nothing is updated.
  LossBreakdown train_step(const ClipInput& input, const ClipSample& clip, const Objective& objective,
                           Rng* dropout_rng, ClipOutput* output = nullptr);
  LossBreakdown loss(const ClipOutput& output, const ClipInput& input, const ClipSample& clip,
                     const Objective& objective) const;

  // Pooled (unscaled) context of every frame, no dropout.
  std::vector<RowVec> pooled_context(const ClipInput& input) const;

  ParamList parameters();
  void zero_grad();

  ModelConfig config;
  Encoders encoders;
  FusionStack fusion;
  GraphConv gcn;
  ContextScaler scaler;
  GruCell gru;
  AccidentHead head;
  AttentionDecoder decoder;
};

// Fails (std::logic_error) if names repeat or any group is empty.
void check_param_partition(const ParamList& params);

}  // namespace cap
