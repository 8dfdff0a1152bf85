#include <doctest.h>

#include <set>

#include "cap/attention_decoder.hpp"
#include "cap/gradcheck.hpp"
#include "test_util.hpp"

using namespace cap;
using cap::test::random_mat;

TEST_SUITE("attention_decoder") {

TEST_CASE("decoder output and stage shapes") {
  Rng rng(1);
  AttentionDecoder dec(DecoderConfig{}, rng);
  AttentionDecoder::Cache c;
  const Mat map = dec.forward(random_mat(64, 512, rng, 0.3), &c);
  CHECK(map.rows() == 64);
  CHECK(map.cols() == 64);
  CHECK(map.minCoeff() >= 0.0);
  CHECK(std::abs(map.sum() - 1) < 1e-9);
  const AttentionDecoder::StageShapes want{{8, 8, 512}, {8, 8, 64}, {32, 32, 64}, {32, 32, 16}, {64, 64, 1}};
  CHECK(c.shapes == want);
  CHECK((c.raw.array() >= 0).all());
}

TEST_CASE("zero context with zero biases decodes to a zero map") {
  Rng rng(2);
  AttentionDecoder dec(DecoderConfig{}, rng);
  ParamList ps;
  dec.collect(ps);
  for (Param* p : ps)
    if (p->name.find(".bias") != std::string::npos || p->name.find("beta") != std::string::npos) p->value.setZero();
  AttentionDecoder::Cache c;
  const Mat map = dec.forward(Mat::Zero(64, 512), &c);
  CHECK(c.raw.cwiseAbs().maxCoeff() == 0.0);
  CHECK((map.array() == 1.0 / 4096).all());
}

TEST_CASE("node grid places every node on its own cell") {
  const auto cells = node_grid_cells();
  REQUIRE(cells.size() == 64);
  CHECK(std::set<int>(cells.begin(), cells.end()).size() == 64);
  for (int k = 0; k < 49; ++k) CHECK(cells[static_cast<std::size_t>(k)] == (k / 7) * 8 + k % 7);
}

TEST_CASE("gaussian kernel follows the formula and sums to one") {
  const Mat k = gaussian_kernel3(1.5);
  const double c = 1, e = std::exp(-1 / 4.5), d = std::exp(-2 / 4.5), z = c + 4 * e + 4 * d;
  CHECK(k(1, 1) == doctest::Approx(c / z).epsilon(1e-14));
  CHECK(k(0, 1) == doctest::Approx(e / z).epsilon(1e-14));
  CHECK(k(0, 0) == doctest::Approx(d / z).epsilon(1e-14));
  CHECK(k.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(k(1, 1) == doctest::Approx(0.14776).epsilon(1e-4));
}

TEST_CASE("smoothing a delta stamps the kernel, constants are preserved") {
  Mat delta = Mat::Zero(64, 64);
  delta(30, 40) = 1;
  const Mat s = gaussian_smooth(delta);
  const Mat k = gaussian_kernel3(1.5);
  CHECK((s.block(29, 39, 3, 3) - k).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(std::abs(s.sum() - 1) < 1e-12);

  const Mat c = Mat::Constant(64, 64, 0.7);
  CHECK((gaussian_smooth(c) - c).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("smoothing preserves mass, including at the border") {
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    Mat m = random_mat(64, 64, rng).cwiseAbs();
    CHECK(std::abs(gaussian_smooth(m).sum() - m.sum()) < 1e-6);
  }
  Mat corner = Mat::Zero(64, 64);
  corner(0, 0) = 1;
  CHECK(std::abs(gaussian_smooth(corner).sum() - 1) < 1e-12);
}

TEST_CASE("smoothing adjoint") {
  Rng rng(4);
  const Mat a = random_mat(64, 64, rng), b = random_mat(64, 64, rng);
  CHECK(std::abs(gaussian_smooth(a).cwiseProduct(b).sum() - a.cwiseProduct(gaussian_smooth_adjoint(b)).sum()) < 1e-9);
}

TEST_CASE("normalize_map") {
  const Mat u = normalize_map(Mat::Constant(64, 64, 3.0));
  CHECK((u.array() == 1.0 / 4096).all());
  const Mat z = normalize_map(Mat::Zero(64, 64));
  CHECK((z.array() == 1.0 / 4096).all());
  Rng rng(5);
  for (int i = 0; i < 20; ++i) CHECK(std::abs(normalize_map(random_mat(64, 64, rng).cwiseAbs()).sum() - 1) < 1e-9);
  Mat neg = Mat::Constant(4, 4, 1);
  neg(2, 2) = -0.1;
  CHECK_THROWS_AS(normalize_map(neg), std::domain_error);
}

TEST_CASE("ground truth downsampling averages areas") {
  Mat gt = Mat::Zero(128, 128);
  gt(0, 0) = 1;
  gt(0, 1) = 3;
  gt(127, 127) = 4;
  const Mat d = downsample_gt(gt, 64, 64);
  CHECK(d.rows() == 64);
  CHECK(d(0, 0) == doctest::Approx(0.5));
  CHECK(d(63, 63) == doctest::Approx(0.5));
  CHECK(d.sum() == doctest::Approx(1.0));
}

TEST_CASE("finite-difference check of the decoder suite") {
  GradcheckOptions o;
  o.seed = 31;
  o.modules = {"attention_decoder"};
  const auto report = run_gradcheck(o);
  MESSAGE(report.to_text());
  CHECK(report.passed());
}

}
