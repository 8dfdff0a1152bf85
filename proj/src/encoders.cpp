#include "cap/encoders.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cap {

Eigen::Index token_count(Modality modality, Eigen::Index n_text) {
  switch (modality) {
    case Modality::kVision: return 49;
    case Modality::kText: return n_text;
    case Modality::kFused: return 49 + n_text;
  }
  return 0;
}

void check_tokens(const TokenMatrix& t, Eigen::Index channels, Eigen::Index n_text) {
  expect_shape(t.data, token_count(t.modality, n_text), channels, "token matrix");
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

Vocabulary::Vocabulary() {
  add("<pad>");
  add("<unk>");
}

void Vocabulary::add(const std::string& token) {
  if (index_.count(token)) return;
  index_[token] = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& sentences) {
  Vocabulary v;
  for (const auto& s : sentences)
    for (const auto& t : tokenize(s)) v.add(t);
  return v;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) return tokens_[kUnk];
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocabulary::encode(std::string_view text, int n) const {
  std::vector<int> ids;
  for (const auto& t : tokenize(text)) {
    if (static_cast<int>(ids.size()) == n) break;
    ids.push_back(id(t));
  }
  ids.resize(static_cast<std::size_t>(n), kPad);
  return ids;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary v;
  v.tokens_.clear();
  v.index_.clear();
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    v.add(line);
  }
  if (v.size() < 2 || v.tokens_[kPad] != "<pad>" || v.tokens_[kUnk] != "<unk>")
    throw std::runtime_error("vocabulary must start with <pad> and <unk>");
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write vocabulary " + path.string());
  f << serialize();
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read vocabulary " + path.string());
  std::stringstream s;
  s << f.rdbuf();
  return parse(s.str());
}

LookupTextEncoder::LookupTextEncoder(int vocab_size, Eigen::Index m, int n_tokens, Rng& rng)
    : table("text.table", ParamGroup::kSelfAttention, vocab_size, m), n_tokens_(n_tokens) {
  init_uniform_fan_in(table, m, rng);
}

std::vector<int> LookupTextEncoder::normalize_ids(const std::vector<int>& ids) const {
  std::vector<int> out(static_cast<std::size_t>(n_tokens_), Vocabulary::kPad);
  const auto rows = static_cast<int>(table.value.rows());
  for (std::size_t i = 0; i < out.size() && i < ids.size(); ++i)
    out[i] = (ids[i] < 0 || ids[i] >= rows) ? Vocabulary::kUnk : ids[i];
  return out;
}

Mat LookupTextEncoder::encode(const std::vector<int>& ids) const {
  const auto norm = normalize_ids(ids);
  Mat out(n_tokens_, table.value.cols());
  for (int i = 0; i < n_tokens_; ++i) out.row(i) = table.value.row(norm[static_cast<std::size_t>(i)]);
  return out;
}

void LookupTextEncoder::backward(const std::vector<int>& ids, const Mat& dtokens) {
  const auto norm = normalize_ids(ids);
  for (int i = 0; i < n_tokens_; ++i) table.grad.row(norm[static_cast<std::size_t>(i)]) += dtokens.row(i);
}

PatchEmbed::PatchEmbed(Eigen::Index conv_channels, Eigen::Index m, Rng& rng)
    : conv("patch.conv", kPatchDim, conv_channels, ParamGroup::kSelfAttention, rng),
      down("patch.down", conv_channels, m, ParamGroup::kSelfAttention, rng) {}

namespace {
void check_image(const Image& image) {
  if (image.height != PatchEmbed::kImage || image.width != PatchEmbed::kImage || image.channels != 3)
    throw ShapeError("patch embedding expects a 224x224x3 image, got " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + "x" + std::to_string(image.channels));
  for (double v : image.data)
    if (!std::isfinite(v)) throw std::domain_error("non-finite pixel");
}
}  // namespace

Image center_pixels(const Image& image) {
  Image out = image;
  for (double& v : out.data) v = 2.0 * v - 1.0;
  return out;
}

Mat PatchEmbed::patch_matrix(const Image& image) {
  check_image(image);
  Mat out(kGrid * kGrid, kPatchDim);
  for (int gy = 0; gy < kGrid; ++gy)
    for (int gx = 0; gx < kGrid; ++gx) {
      const int row = gy * kGrid + gx;
      int col = 0;
      for (int py = 0; py < kPatch; ++py)
        for (int px = 0; px < kPatch; ++px)
          for (int c = 0; c < 3; ++c) out(row, col++) = image.at(gy * kPatch + py, gx * kPatch + px, c);
    }
  return out;
}

Mat PatchEmbed::pooled_patches(const Image& image) {
  Mat patches = patch_matrix(image);
  Mat out = Mat::Zero(kPooledGrid * kPooledGrid, kPatchDim);
  for (int gy = 0; gy < kGrid; ++gy)
    for (int gx = 0; gx < kGrid; ++gx) out.row((gy / 2) * kPooledGrid + gx / 2) += 0.25 * patches.row(gy * kGrid + gx);
  return out;
}

Image PatchEmbed::pooled_patches_adjoint(const Mat& dpooled) {
  expect_shape(dpooled, kPooledGrid * kPooledGrid, kPatchDim, "pooled patch gradient");
  Image out(kImage, kImage, 3);
  for (int gy = 0; gy < kGrid; ++gy)
    for (int gx = 0; gx < kGrid; ++gx) {
      const int row = (gy / 2) * kPooledGrid + gx / 2;
      int col = 0;
      for (int py = 0; py < kPatch; ++py)
        for (int px = 0; px < kPatch; ++px)
          for (int c = 0; c < 3; ++c) out.at(gy * kPatch + py, gx * kPatch + px, c) = 0.25 * dpooled(row, col++);
    }
  return out;
}

PatchEmbed::Reference PatchEmbed::forward_reference(const Image& image) const {
  Reference r;
  r.grid = conv.forward(patch_matrix(image));
  r.mapped = down.forward(r.grid);
  r.tokens = Mat::Zero(kPooledGrid * kPooledGrid, r.mapped.cols());
  for (int gy = 0; gy < kGrid; ++gy)
    for (int gx = 0; gx < kGrid; ++gx)
      r.tokens.row((gy / 2) * kPooledGrid + gx / 2) += 0.25 * r.mapped.row(gy * kGrid + gx);
  return r;
}

PatchEmbed::Folded PatchEmbed::fold() const {
  Folded f;
  f.weight.noalias() = conv.weight.value * down.weight.value;
  f.bias = conv.bias.value.row(0) * down.weight.value + down.bias.value.row(0);
  return f;
}

Mat PatchEmbed::forward_pooled(const Mat& pooled, const Folded& folded) const {
  expect_shape(pooled, kPooledGrid * kPooledGrid, kPatchDim, "pooled patches");
  Mat y = pooled * folded.weight;
  y.rowwise() += folded.bias;
  return y;
}

void PatchEmbed::accumulate(const Mat& pooled, const Mat& dtokens, FoldGrad& acc) const {
  acc.g.noalias() += pooled.transpose() * dtokens;
  acc.gsum += dtokens.colwise().sum();
}

void PatchEmbed::apply_fold_grad(const FoldGrad& acc) {
  // y = (P W1 + 1 b1) W2 + 1 b2
  conv.weight.grad.noalias() += acc.g * down.weight.value.transpose();
  conv.bias.grad.row(0) += acc.gsum * down.weight.value.transpose();
  down.weight.grad.noalias() += conv.weight.value.transpose() * acc.g;
  down.weight.grad.noalias() += conv.bias.value.row(0).transpose() * acc.gsum;
  down.bias.grad.row(0) += acc.gsum;
}

void PatchEmbed::collect(ParamList& out) {
  conv.collect(out);
  down.collect(out);
}

Encoders::Encoders(const EncoderConfig& cfg, int vocab_size, Rng& rng)
    : config(cfg),
      patch(cfg.conv_channels, cfg.m, rng),
      text(std::make_unique<LookupTextEncoder>(vocab_size, cfg.m, cfg.n_text, rng)),
      mhsa("encoder.mhsa", cfg.m, cfg.heads, ParamGroup::kSelfAttention, rng) {}

Mat Encoders::block_forward(const Mat& tokens, BlockCache* cache) const {
  return tokens + mhsa.forward(tokens, cache ? &cache->attn : nullptr);
}

Mat Encoders::block_backward(const BlockCache& cache, const Mat& dy) { return dy + mhsa.backward(cache.attn, dy); }

TokenMatrix Encoders::encode_text(const std::vector<int>& ids, BlockCache* cache) const {
  return {block_forward(text->encode(ids), cache), Modality::kText};
}

void Encoders::collect(ParamList& out) {
  patch.collect(out);
  text->collect(out);
  mhsa.collect(out);
}

}  // namespace cap
