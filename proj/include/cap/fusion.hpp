#pragma once

// Text-to-image shift fusion. The fused token layout is [vision (49); text].

#include <vector>

#include "cap/common.hpp"
#include "cap/layers.hpp"

namespace cap {

struct FusionConfig {
  Eigen::Index m = 120;
  int heads = 8;
  int n_vision = 49;
  int n_text = 15;
  double dropout = 0.1;
  int layers = 3;
};

// Position-aware cross-attention over a (64 x m) fused matrix. The matrix is
// split channel-wise into h heads of width d = m / h. A global summary
// B = mlp(F) (64 x d) provides keys (B + PE) and values B; each head queries
// with its own slice plus PE. Projections are shared across heads. The head
// outputs are concatenated and added to F.
class Paca {
 public:
  Paca() = default;
  Paca(const std::string& name, const FusionConfig& config, Rng& rng);

  struct Cache {
    Mat fused;
    Mat h1, m1, a1, h2, m2, a2, b;  // mlp activations and dropout masks
    Mat kin, kb, vb;        // key input (B + PE), keys, values
    Mat qin, q;             // stacked per-head queries (h*n x d)
    Mat probs;              // stacked attention weights (h*n x n)
  };

  Mat forward(const Mat& fused, Rng* dropout_rng, Cache* cache = nullptr) const;
  Mat backward(const Cache& cache, const Mat& dy);
  void collect(ParamList& out);

  int heads() const { return heads_; }
  Eigen::Index head_dim() const { return pe.value.cols(); }

  Linear mlp1, mlp2, mlp3;  // m -> m -> 2m -> d
  Linear wq, wk, wv;        // d -> d
  Param pe;                 // n x d
  double dropout_p = 0.1;
  bool identity = false;    // test hook: forward returns its input unchanged

 private:
  int heads_ = 8;
};

struct FusionPair {
  Mat text;    // n_text x m
  Mat vision;  // 49 x m
};

class T2ISFLayer {
 public:
  T2ISFLayer() = default;
  T2ISFLayer(const std::string& name, const FusionConfig& config, Rng& rng);

  struct Cache {
    Mat vision_in;
    Mat paca_out;
    Paca::Cache paca;
  };

  FusionPair forward(const FusionPair& in, Rng* dropout_rng, Cache* cache = nullptr) const;
  FusionPair backward(const Cache& cache, const FusionPair& dout);
  void collect(ParamList& out) { paca.collect(out); }

  Paca paca;
  int n_vision = 49;
  int n_text = 15;
};

struct FusionState {
  std::vector<FusionPair> layer_outputs;  // index 0 holds the encoder outputs
  std::vector<T2ISFLayer::Cache> caches;
  const FusionPair& final() const { return layer_outputs.back(); }
};

class FusionStack {
 public:
  FusionStack() = default;
  FusionStack(const FusionConfig& config, Rng& rng);

  FusionState forward(const FusionPair& in, Rng* dropout_rng, bool keep_cache) const;
  FusionPair backward(const FusionState& state, const FusionPair& dout);
  void collect(ParamList& out);
  void set_identity(bool on);

  std::vector<T2ISFLayer> layers;
};

// Fused matrix [vision; text] and its inverse split.
Mat fuse(const FusionPair& p);
FusionPair split(const Mat& fused, int n_vision);

}  // namespace cap
