#include <doctest.h>

#include <numeric>

#include "cap/encoders.hpp"
#include "cap/gradcheck.hpp"
#include "test_util.hpp"

using namespace cap;
using cap::test::random_mat;

namespace {
Image random_image(Rng& rng) {
  Image img(224, 224, 3);
  for (double& v : img.data) v = uniform01(rng);
  return img;
}

void zero_biases(Linear& l) { l.bias.value.setZero(); }
}  // namespace

TEST_SUITE("encoders") {

TEST_CASE("patch embedding stage shapes") {
  Rng rng(1);
  PatchEmbed pe(768, 120, rng);
  const auto r = pe.forward_reference(random_image(rng));
  CHECK(r.grid.rows() == 14 * 14);
  CHECK(r.grid.cols() == 768);
  CHECK(r.mapped.rows() == 14 * 14);
  CHECK(r.mapped.cols() == 120);
  CHECK(r.tokens.rows() == 49);
  CHECK(r.tokens.cols() == 120);
  CHECK(token_count(Modality::kVision) == 49);
  CHECK(token_count(Modality::kText) == 15);
  CHECK(token_count(Modality::kFused) == 64);
}

TEST_CASE("folded patch path equals the staged reference") {
  Rng rng(2);
  PatchEmbed pe(768, 120, rng);
  for (int i = 0; i < 3; ++i) {
    const Image img = random_image(rng);
    const Mat ref = pe.forward_reference(img).tokens;
    const Mat fast = pe.forward_pooled(PatchEmbed::pooled_patches(img), pe.fold());
    CHECK((ref - fast).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("zero image with zero biases gives zero tokens") {
  Rng rng(3);
  PatchEmbed pe(768, 120, rng);
  zero_biases(pe.conv);
  zero_biases(pe.down);
  const Image img(224, 224, 3);
  CHECK(pe.forward_reference(img).tokens.cwiseAbs().maxCoeff() == 0.0);
  CHECK(pe.forward_pooled(PatchEmbed::pooled_patches(img), pe.fold()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("changing one 16x16 patch changes one token row") {
  Rng rng(4);
  PatchEmbed pe(768, 120, rng);
  Image a = random_image(rng);
  Image b = a;
  const int gy = 9, gx = 4;  // patch grid position
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) b.at(gy * 16 + y, gx * 16 + x, 2) += 0.5;
  const Mat d = pe.forward_reference(a).tokens - pe.forward_reference(b).tokens;
  const int changed = (gy / 2) * 7 + gx / 2;
  for (Eigen::Index r = 0; r < 49; ++r) {
    if (r == changed)
      CHECK(d.row(r).cwiseAbs().maxCoeff() > 1e-6);
    else
      CHECK(d.row(r).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("patch embedding rejects bad frames") {
  Rng rng(5);
  PatchEmbed pe(768, 120, rng);
  CHECK_THROWS_AS(pe.forward_reference(Image(223, 224, 3)), ShapeError);
  Image img(224, 224, 3);
  img.at(10, 10, 0) = std::nan("");
  CHECK_THROWS_AS(PatchEmbed::pooled_patches(img), std::domain_error);
}

TEST_CASE("pixel centering maps [0, 1] onto [-1, 1]") {
  Image img(2, 1, 3);
  img.data = {0.0, 0.25, 0.5, 0.75, 1.0, 0.5};
  const Image c = center_pixels(img);
  CHECK(c.height == 2);
  CHECK(c.channels == 3);
  const std::vector<double> want{-1.0, -0.5, 0.0, 0.5, 1.0, 0.0};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(c.data[i] == doctest::Approx(want[i]));
}

TEST_CASE("tokenizer and vocabulary") {
  CHECK(tokenize("A frame of { }") == std::vector<std::string>{"a", "frame", "of", "{", "}"});
  CHECK(tokenize("Stop, now!") == std::vector<std::string>{"stop", ",", "now", "!"});
  const auto v = Vocabulary::build({"a frame of { }", "a car is crossing the road"});
  const auto ids = v.encode("a frame of { }", 15);
  REQUIRE(ids.size() == 15);
  for (int i = 0; i < 5; ++i) CHECK(ids[static_cast<std::size_t>(i)] > Vocabulary::kUnk);
  for (int i = 5; i < 15; ++i) CHECK(ids[static_cast<std::size_t>(i)] == Vocabulary::kPad);
  CHECK(v.encode("zebra", 3) == std::vector<int>{Vocabulary::kUnk, Vocabulary::kPad, Vocabulary::kPad});
  CHECK(v.encode("a a a a", 2).size() == 2);
}

TEST_CASE("vocabulary file round trip") {
  cap::test::TempDir dir("vocab");
  const auto v = Vocabulary::build({"a pedestrian stays on the motorway"});
  v.save(dir.path / "vocab.txt");
  CHECK(Vocabulary::load(dir.path / "vocab.txt") == v);
  CHECK_THROWS(Vocabulary::parse("car\n<pad>\n"));
}

TEST_CASE("text lookup, padding and unknown ids") {
  Rng rng(6);
  LookupTextEncoder enc(30, 120, 15, rng);
  std::vector<int> ids(15);
  std::iota(ids.begin(), ids.end(), 2);
  const Mat m = enc.encode(ids);
  REQUIRE(m.rows() == 15);
  REQUIRE(m.cols() == 120);
  for (int i = 0; i < 15; ++i) CHECK(m.row(i) == enc.table.value.row(ids[static_cast<std::size_t>(i)]));

  const Mat empty = enc.encode({});
  for (int i = 0; i < 15; ++i) CHECK(empty.row(i) == enc.table.value.row(Vocabulary::kPad));

  const Mat unk = enc.encode({999, -3});
  CHECK(unk.row(0) == enc.table.value.row(Vocabulary::kUnk));
  CHECK(unk.row(1) == enc.table.value.row(Vocabulary::kUnk));
}

TEST_CASE("self-attention shapes and errors") {
  Rng rng(7);
  MultiHeadSelfAttention mhsa("t", 120, 8, ParamGroup::kSelfAttention, rng);
  CHECK(mhsa.forward(random_mat(49, 120, rng), nullptr).rows() == 49);
  CHECK(mhsa.forward(random_mat(15, 120, rng), nullptr).rows() == 15);
  CHECK_THROWS_AS(mhsa.forward(random_mat(15, 100, rng), nullptr), ShapeError);
  Mat bad = random_mat(4, 120, rng);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(mhsa.forward(bad, nullptr), std::domain_error);
  CHECK_THROWS_AS(MultiHeadSelfAttention("u", 120, 7, ParamGroup::kSelfAttention, rng), std::invalid_argument);
}

TEST_CASE("single token attention returns the value projection") {
  Rng rng(8);
  MultiHeadSelfAttention mhsa("t", 16, 4, ParamGroup::kSelfAttention, rng);
  mhsa.wo.weight.value = Mat::Identity(16, 16);
  mhsa.wo.bias.value.setZero();
  const Mat x = random_mat(1, 16, rng);
  const Mat v = mhsa.wv.forward(x);
  CHECK((mhsa.forward(x, nullptr) - v).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("self-attention is permutation equivariant") {
  Rng rng(9);
  MultiHeadSelfAttention mhsa("t", 120, 8, ParamGroup::kSelfAttention, rng);
  const Mat x = random_mat(15, 120, rng);
  std::vector<int> perm(15);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  Mat xp(15, 120);
  for (int i = 0; i < 15; ++i) xp.row(i) = x.row(perm[static_cast<std::size_t>(i)]);
  const Mat y = mhsa.forward(x, nullptr), yp = mhsa.forward(xp, nullptr);
  for (int i = 0; i < 15; ++i) CHECK((yp.row(i) - y.row(perm[static_cast<std::size_t>(i)])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("vision and text blocks share one attention parameter set") {
  Rng rng(10);
  Encoders enc(EncoderConfig{}, 30, rng);
  const Mat vis = random_mat(49, 120, rng);
  const std::vector<int> ids{3, 4, 5};
  const Mat v0 = enc.block_forward(vis, nullptr);
  const Mat t0 = enc.encode_text(ids, nullptr).data;
  enc.mhsa.wv.weight.value(0, 0) += 0.5;
  CHECK((enc.block_forward(vis, nullptr) - v0).cwiseAbs().maxCoeff() > 0);
  CHECK((enc.encode_text(ids, nullptr).data - t0).cwiseAbs().maxCoeff() > 0);
  ParamList ps;
  enc.collect(ps);
  int attention_params = 0;
  for (const Param* p : ps) attention_params += p->name.rfind("encoder.mhsa.", 0) == 0;
  CHECK(attention_params == 7);  // q, k (no bias), v, out
  for (const Param* p : ps) CHECK(p->group == ParamGroup::kSelfAttention);
}

TEST_CASE("finite-difference check of the encoder suite") {
  GradcheckOptions o;
  o.seed = 17;
  o.modules = {"encoders"};
  const auto report = run_gradcheck(o);
  MESSAGE(report.to_text());
  CHECK(report.passed());
  CHECK(report.module_max_error("encoders") <= 1e-4);
}

}
