#pragma once

// Vision and text token encoders plus the shared self-attention block.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "cap/common.hpp"
#include "cap/layers.hpp"

namespace cap {

enum class Modality { kVision, kText, kFused };

struct TokenMatrix {
  Mat data;
  Modality modality = Modality::kVision;
};

// Expected token count per modality (49 / n_text / 49 + n_text).
Eigen::Index token_count(Modality modality, Eigen::Index n_text = 15);
void check_tokens(const TokenMatrix& t, Eigen::Index channels, Eigen::Index n_text = 15);

// Lowercased words; every punctuation character is its own token.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocabulary();  // just <pad> and <unk>
  static Vocabulary build(const std::vector<std::string>& sentences);

  int size() const { return static_cast<int>(tokens_.size()); }
  int id(const std::string& token) const;
  const std::string& token(int id) const;

  // Token ids truncated or padded with kPad to exactly n ids.
  std::vector<int> encode(std::string_view text, int n) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  // One token per line, as written by save().
  static Vocabulary parse(std::string_view text);
  std::string serialize() const;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void add(const std::string& token);
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// ids -> (n_tokens x m). Any implementation can be plugged into Encoders.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Mat encode(const std::vector<int>& ids) const = 0;
  virtual void backward(const std::vector<int>& ids, const Mat& dtokens) = 0;
  virtual void collect(ParamList& out) = 0;
  virtual int n_tokens() const = 0;
};

class LookupTextEncoder : public TextEncoder {
 public:
  LookupTextEncoder(int vocab_size, Eigen::Index m, int n_tokens, Rng& rng);

  // Pads/truncates to n_tokens; ids outside the table read the <unk> row.
  std::vector<int> normalize_ids(const std::vector<int>& ids) const;

  Mat encode(const std::vector<int>& ids) const override;
  void backward(const std::vector<int>& ids, const Mat& dtokens) override;
  void collect(ParamList& out) override { out.push_back(&table); }
  int n_tokens() const override { return n_tokens_; }

  Param table;  // vocab x m

 private:
  int n_tokens_;
};

// Input scaling: [0, 1] intensities -> [-1, 1]. All-positive inputs make the
// patch-embedding gradient move every token the same way at once.
Image center_pixels(const Image& image);

// 16x16 stride-16 patch convolution to 768 channels on a 224x224x3 frame
// (14x14 grid), a 1x1 convolution to m channels, and 2x2 average pooling to a
// 7x7 grid, flattened row-major to 49 tokens.
//
// Every stage is linear, so the production path averages each 2x2 group of
// pixel patches first ("pooled patches", 49 x 768) and applies the folded
// weight W1 * W2 once per parameter update.
class PatchEmbed {
 public:
  static constexpr int kImage = 224;
  static constexpr int kPatch = 16;
  static constexpr int kGrid = 14;
  static constexpr int kPooledGrid = 7;
  static constexpr int kPatchDim = kPatch * kPatch * 3;

  PatchEmbed() = default;
  PatchEmbed(Eigen::Index conv_channels, Eigen::Index m, Rng& rng);

  // (196 x 768) pixel patches, patch vector order (py, px, channel).
  static Mat patch_matrix(const Image& image);
  // (49 x 768) mean of the four pixel patches of each pooled cell.
  static Mat pooled_patches(const Image& image);
  // Adjoint of pooled_patches with respect to the image pixels.
  static Image pooled_patches_adjoint(const Mat& dpooled);

  struct Reference {
    Mat grid;    // 196 x conv_channels (14 x 14 x 768)
    Mat mapped;  // 196 x m (14 x 14 x m)
    Mat tokens;  // 49 x m (7 x 7 x m)
  };
  Reference forward_reference(const Image& image) const;

  struct Folded {
    Mat weight;  // 768 x m
    RowVec bias;
  };
  Folded fold() const;
  Mat forward_pooled(const Mat& pooled, const Folded& folded) const;

  // Accumulated sufficient statistics for the folded backward pass.
  struct FoldGrad {
    Mat g;        // sum of pooled^T * dtokens (768 x m)
    RowVec gsum;  // sum of dtokens rows (1 x m)
    void reset(Eigen::Index patch_dim, Eigen::Index m) {
      g = Mat::Zero(patch_dim, m);
      gsum = RowVec::Zero(m);
    }
  };
  void accumulate(const Mat& pooled, const Mat& dtokens, FoldGrad& acc) const;
  void apply_fold_grad(const FoldGrad& acc);
  Mat pooled_grad(const Mat& dtokens, const Folded& folded) const { return dtokens * folded.weight.transpose(); }

  void collect(ParamList& out);

  Linear conv;  // patch_dim -> conv_channels
  Linear down;  // conv_channels -> m
};

struct EncoderConfig {
  Eigen::Index m = 120;
  int heads = 8;
  int n_text = 15;
  Eigen::Index conv_channels = 768;
};

// Patch embedding, text encoder, and one shared self-attention block applied
// as tokens + mhsa(tokens) to both modalities.
class Encoders {
 public:
  Encoders(const EncoderConfig& config, int vocab_size, Rng& rng);

  struct BlockCache {
    MultiHeadSelfAttention::Cache attn;
  };
  Mat block_forward(const Mat& tokens, BlockCache* cache) const;
  Mat block_backward(const BlockCache& cache, const Mat& dy);

  TokenMatrix encode_text(const std::vector<int>& ids, BlockCache* cache) const;

  void collect(ParamList& out);

  EncoderConfig config;
  PatchEmbed patch;
  std::unique_ptr<TextEncoder> text;
  MultiHeadSelfAttention mhsa;
};

}  // namespace cap
