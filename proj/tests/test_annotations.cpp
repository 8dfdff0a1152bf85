#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>

#include "cap/annotations.hpp"
#include "test_util.hpp"

using namespace cap;
using cap::test::make_record;

TEST_SUITE("annotations") {

TEST_CASE("validate accepts an ordered window") {
  CHECK(validate(make_record(50, 100, 150, 200)).empty());
}

TEST_CASE("validate names the broken ordering rule") {
  auto v = validate(make_record(100, 50, 150, 200));
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == "t_ai ≤ t_co");

  v = validate(make_record(50, 100, 250, 200));
  REQUIRE(v.size() == 1);
  CHECK(v[0].rule == "t_ae ≤ n_frames");
}

TEST_CASE("empty text only allowed for non-accident videos") {
  auto r = make_record(10, 20, 30, 40);
  r.reason.clear();
  CHECK(validate(r).size() == 1);
  r.accident = false;
  r.fact = r.effect = r.introspection = "";
  CHECK(validate(r).empty());
}

TEST_CASE("validate never throws on arbitrary values") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    AnnotationRecord r;
    r.video_id = i % 7 ? "x" : "";
    r.n_frames = static_cast<int>(uniform(rng, -50, 300));
    r.fps = uniform(rng, -5, 60);
    r.t_ai = static_cast<int>(uniform(rng, -50, 300));
    r.t_co = static_cast<int>(uniform(rng, -50, 300));
    r.t_ae = static_cast<int>(uniform(rng, -50, 300));
    r.accident_category = static_cast<int>(uniform(rng, -5, 70));
    r.weather = static_cast<Weather>(static_cast<int>(uniform(rng, 0, 6)));
    r.accident = i % 2;
    CHECK_NOTHROW(validate(r));
  }
}

TEST_CASE("frame ratios, hand cases") {
  const auto a = frame_ratios(make_record(50, 100, 150, 200));
  CHECK(a.r_pre == doctest::Approx(0.25));
  CHECK(a.r_ai_co == doctest::Approx(0.25));
  CHECK(a.r_ai_ae == doctest::Approx(0.5));
  CHECK(a.r_co_ae == doctest::Approx(0.25));
  CHECK(a.r_post == doctest::Approx(0.25));

  const auto b = frame_ratios(make_record(0, 0, 200, 200));
  CHECK(b.r_pre == 0.0);
  CHECK(b.r_ai_co == 0.0);
  CHECK(b.r_ai_ae == 1.0);
  CHECK(b.r_co_ae == 1.0);
  CHECK(b.r_post == 0.0);
}

TEST_CASE("frame ratios refuse invalid records") {
  CHECK_THROWS_AS(frame_ratios(make_record(100, 50, 150, 200)), InvalidRecord);
}

TEST_CASE("frame ratio identities on random valid records") {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 400));
    int t[3];
    for (int& x : t) x = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(n) + 1));
    std::sort(t, t + 3);
    const auto f = frame_ratios(make_record(t[0], t[1], t[2], n));
    for (double v : {f.r_pre, f.r_ai_co, f.r_ai_ae, f.r_co_ae, f.r_post}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(std::abs(f.r_pre + f.r_ai_ae + f.r_post - 1) < 1e-9);
    CHECK(std::abs(f.r_ai_co + f.r_co_ae - f.r_ai_ae) < 1e-9);
  }
}

TEST_CASE("ratio histogram counts accident records only") {
  std::vector<AnnotationRecord> rs{make_record(50, 100, 150, 200), make_record(0, 0, 200, 200)};
  rs.push_back(make_record(10, 10, 10, 20));
  rs.back().accident = false;
  const auto h = ratio_histogram(rs, 4);
  for (const auto& bins : h) CHECK(std::accumulate(bins.begin(), bins.end(), 0) == 2);
}

TEST_CASE("enum parsing accepts the fogy alias") {
  CHECK(parse_weather("fogy") == Weather::kFoggy);
  CHECK(parse_weather("foggy") == Weather::kFoggy);
  CHECK(to_string(Weather::kFoggy) == "foggy");
  CHECK_THROWS_AS(parse_weather("hail"), std::invalid_argument);
  CHECK(parse_road_type("t_road") == RoadType::kTRoad);
}

TEST_CASE("json line round trip on random records") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const int n = 10 + static_cast<int>(uniform_index(rng, 300));
    auto r = make_record(static_cast<int>(uniform_index(rng, 5)), 5, 8, n, uniform(rng, 1, 60));
    r.video_id = "vid \"" + std::to_string(i) + "\" ünï";
    r.weather = static_cast<Weather>(uniform_index(rng, 4));
    r.light = static_cast<Light>(uniform_index(rng, 2));
    r.occasion = static_cast<Occasion>(uniform_index(rng, 5));
    r.road_type = static_cast<RoadType>(uniform_index(rng, 5));
    r.accident_category = 1 + static_cast<int>(uniform_index(rng, 58));
    CHECK(from_json_line(to_json_line(r)) == r);
  }
}

TEST_CASE("unknown and missing keys are rejected") {
  auto line = to_json_line(make_record(1, 2, 3, 4));
  auto extra = line.substr(0, line.size() - 1) + ",\"colour\":\"red\"}";
  CHECK_THROWS_AS(from_json_line(extra), std::invalid_argument);
  CHECK_THROWS_AS(from_json_line("{\"video_id\":\"a\"}"), std::invalid_argument);
}

TEST_CASE("corpus save/load") {
  cap::test::TempDir dir("ann");
  const auto path = dir.path / "a.jsonl";

  SUBCASE("three records round-trip") {
    std::vector<AnnotationRecord> rs{make_record(1, 2, 3, 10), make_record(0, 0, 0, 5), make_record(4, 6, 9, 9)};
    rs[1].video_id = "second";
    save_corpus(rs, path);
    CHECK(load_corpus(path) == rs);
  }
  SUBCASE("one malformed line among ten is named") {
    std::ofstream f(path);
    for (int i = 0; i < 10; ++i) f << (i == 6 ? std::string("{not json") : to_json_line(make_record(1, 2, 3, 10))) << '\n';
    f.close();
    try {
      load_corpus(path);
      FAIL("expected CorpusError");
    } catch (const CorpusError& e) {
      CHECK(e.line() == 7);
    }
  }
  SUBCASE("empty file") {
    std::ofstream(path).close();
    CHECK(load_corpus(path).empty());
  }
}

}
