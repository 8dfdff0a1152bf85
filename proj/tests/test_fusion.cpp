#include <doctest.h>

#include "cap/fusion.hpp"
#include "cap/gradcheck.hpp"
#include "test_util.hpp"

using namespace cap;
using cap::test::random_mat;

namespace {
FusionPair random_pair(Rng& rng, double scale = 0.5) { return {random_mat(15, 120, rng, scale), random_mat(49, 120, rng, scale)}; }
double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }
}  // namespace

TEST_SUITE("fusion") {

TEST_CASE("token counts through one to three layers") {
  for (int L = 1; L <= 3; ++L) {
    Rng rng(L);
    FusionConfig cfg;
    cfg.layers = L;
    FusionStack stack(cfg, rng);
    const auto state = stack.forward(random_pair(rng), nullptr, true);
    REQUIRE(state.layer_outputs.size() == static_cast<std::size_t>(L + 1));
    for (const auto& p : state.layer_outputs) {
      CHECK(p.text.rows() == 15);
      CHECK(p.vision.rows() == 49);
      CHECK(p.text.cols() == 120);
      CHECK(p.vision.cols() == 120);
      CHECK(fuse(p).rows() == 64);
    }
  }
}

TEST_CASE("layer zero holds the inputs and the fused layout is vision first") {
  Rng rng(2);
  FusionStack stack(FusionConfig{}, rng);
  const auto in = random_pair(rng);
  const auto state = stack.forward(in, nullptr, false);
  CHECK(state.layer_outputs[0].text == in.text);
  CHECK(state.layer_outputs[0].vision == in.vision);
  const Mat f = fuse(in);
  CHECK(f.topRows(49) == in.vision);
  CHECK(f.bottomRows(15) == in.text);
  const auto back = split(f, 49);
  CHECK(back.vision == in.vision);
  CHECK(back.text == in.text);
}

TEST_CASE("identity PaCa reduces each layer to v * (1 + v)") {
  Rng rng(3);
  FusionStack stack(FusionConfig{}, rng);
  stack.set_identity(true);
  const auto in = random_pair(rng, 0.3);
  const auto state = stack.forward(in, nullptr, false);
  Mat v = in.vision;
  for (std::size_t l = 1; l < state.layer_outputs.size(); ++l) {
    v = v.cwiseProduct((1.0 + v.array()).matrix());
    CHECK(max_abs(state.layer_outputs[l].vision - v) < 1e-12);
    CHECK(state.layer_outputs[l].text == in.text);
  }

  const auto zero = stack.forward({in.text, Mat::Zero(49, 120)}, nullptr, false);
  CHECK(max_abs(zero.final().vision) == 0.0);
}

TEST_CASE("PaCa shapes, probability rows and position sensitivity") {
  Rng rng(4);
  Paca paca("p", FusionConfig{}, rng);
  CHECK(paca.heads() == 8);
  CHECK(paca.head_dim() == 15);
  CHECK(paca.pe.value.rows() == 64);
  const Mat f = random_mat(64, 120, rng, 0.5);
  Paca::Cache c;
  const Mat out = paca.forward(f, nullptr, &c);
  CHECK(out.rows() == 64);
  CHECK(out.cols() == 120);
  CHECK(c.b.rows() == 64);
  CHECK(c.b.cols() == 15);
  REQUIRE(c.probs.rows() == 8 * 64);
  CHECK(c.probs.minCoeff() >= 0.0);
  for (Eigen::Index i = 0; i < c.probs.rows(); ++i) CHECK(std::abs(c.probs.row(i).sum() - 1) < 1e-12);

  Paca zero_pe = paca;
  zero_pe.pe.value.setZero();
  CHECK(max_abs(zero_pe.forward(f, nullptr) - out) > 1e-8);
  Paca moved = paca;
  moved.pe.value(10, 3) += 1e-3;
  CHECK(max_abs(moved.forward(f, nullptr) - out) > 0);
}

TEST_CASE("dropout only when a generator is supplied") {
  Rng rng(5);
  Paca paca("p", FusionConfig{}, rng);
  const Mat f = random_mat(64, 120, rng, 0.5);
  CHECK(paca.forward(f, nullptr) == paca.forward(f, nullptr));
  Rng d1(1), d2(1), d3(2);
  const Mat a = paca.forward(f, &d1), b = paca.forward(f, &d2), c = paca.forward(f, &d3);
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("a one-layer stack is one layer call") {
  Rng rng(6);
  FusionConfig cfg;
  cfg.layers = 1;
  FusionStack stack(cfg, rng);
  const auto in = random_pair(rng);
  const auto state = stack.forward(in, nullptr, false);
  const auto direct = stack.layers[0].forward(in, nullptr);
  CHECK(state.final().vision == direct.vision);
  CHECK(state.final().text == direct.text);
}

TEST_CASE("shape errors") {
  Rng rng(7);
  FusionStack stack(FusionConfig{}, rng);
  CHECK_THROWS_AS(stack.forward({random_mat(14, 120, rng), random_mat(49, 120, rng)}, nullptr, false), ShapeError);
  Paca paca("p", FusionConfig{}, rng);
  Mat f = random_mat(64, 120, rng);
  f(0, 0) = std::nan("");
  CHECK_THROWS_AS(paca.forward(f, nullptr), std::domain_error);
}

TEST_CASE("finite-difference check of the fusion suite") {
  GradcheckOptions o;
  o.seed = 23;
  o.modules = {"fusion"};
  const auto report = run_gradcheck(o);
  MESSAGE(report.to_text());
  CHECK(report.passed());
}

}
