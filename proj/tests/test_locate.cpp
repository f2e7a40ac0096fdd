#include <doctest.h>

#include <cmath>
#include <random>

#include "anatomap/geometry.hpp"
#include "anatomap/locate.hpp"
#include "anatomap/train.hpp"

using namespace anatomap;

namespace {

nn::NetworkConfig small_net() {
  nn::NetworkConfig c;
  c.patch_side = 16;
  return c;
}

Volume noise_volume(Shape3 s, std::uint64_t seed) {
  Grid3 g(s);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : g.data()) v = u(rng);
  return Volume(g, Spacing(3, 3, 3), IntensityDomain::Normalized);
}

std::vector<float> center_vector(const nn::Tensor& f, Voxel c) {
  std::vector<float> v;
  const Shape3 s{f.dim(1), f.dim(2), f.dim(3)};
  for (int k = 0; k < f.dim(0); ++k) v.push_back(f[std::size_t(k) * s.count() + s.offset(c)]);
  return v;
}

OrganTruth box_organ(Shape3 shape, Voxel lo, Voxel hi) {
  OrganTruth o;
  o.name = "box";
  o.mask = Mask(shape);
  for (int z = lo.z; z <= hi.z; ++z)
    for (int y = lo.y; y <= hi.y; ++y)
      for (int x = lo.x; x <= hi.x; ++x) o.mask.set({z, y, x});
  o.extremes = mask_extremes(o.mask);
  return o;
}

}  // namespace

TEST_CASE("average_features: two orthogonal unit vectors give the 45 degree unit vector") {
  const auto v = average_features({{1.0f, 0.0f}, {0.0f, 1.0f}});
  CHECK(v[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
  CHECK(v[1] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-6));
  const auto one = average_features({{0.6f, 0.8f, 0.0f}});
  CHECK(one[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(one[1] == doctest::Approx(0.8).epsilon(1e-6));
  CHECK_THROWS_AS(average_features({}), Error);
  CHECK_THROWS_AS(average_features({{1.0f}, {1.0f, 0.0f}}), Error);
}

TEST_CASE("support model with k=1 equals the support's own embedding; duplicates change nothing") {
  const auto w = nn::NetworkWeights::initialize(small_net(), 4);
  const Volume v = noise_volume({32, 32, 32}, 1);
  const Voxel at{10, 20, 12};
  const auto out = embed_at(v, at, w);
  const LandmarkModel one = build_landmark_model("a", {{&v, at}}, w);
  CHECK(one.k == 1);
  CHECK(one.p == out.p);
  for (int i = 0; i < 3; ++i) {
    const auto ref = center_vector(out.features[std::size_t(i)], {8 >> i, 8 >> i, 8 >> i});
    REQUIRE(ref.size() == one.f[std::size_t(i)].size());
    for (std::size_t j = 0; j < ref.size(); ++j) CHECK(one.f[std::size_t(i)][j] == doctest::Approx(ref[j]).epsilon(1e-6));
  }
  const LandmarkModel two = build_landmark_model("a", {{&v, at}, {&v, at}}, w);
  CHECK(two.k == 2);
  for (int a = 0; a < 3; ++a) CHECK(two.p[a] == doctest::Approx(one.p[a]).epsilon(1e-12));
  for (int i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < one.f[std::size_t(i)].size(); ++j)
      CHECK(two.f[std::size_t(i)][j] == doctest::Approx(one.f[std::size_t(i)][j]).epsilon(1e-6));

  try {
    build_landmark_model("a", {{&v, Voxel{32, 0, 0}}}, w);
    FAIL("expected LandmarkOutOfBounds");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::LandmarkOutOfBounds);
  }
}

TEST_CASE("coarse_localize: zero step at the match, single-step loop bound, steps bounded by r") {
  const auto w = nn::NetworkWeights::initialize(small_net(), 6);
  const Volume v = noise_volume({40, 40, 40}, 2);
  const Vec3 r{120, 120, 120};
  const Voxel start{20, 20, 20};
  const auto out = embed_at(v, start, w);

  LandmarkModel m;
  m.name = "m";
  m.p = out.p;
  const AgentState still = coarse_localize(v, m, w, r, start);
  CHECK(still.position == start);
  CHECK(still.steps_mm.empty());
  CHECK(still.converged);

  m.p = out.p + Vec3{0.1, -0.2, 0.05};
  const AgentState one = coarse_localize(v, m, w, r, start, 1);
  const Offset d = predict_offset(out.p, m.p, r);
  const Voxel expect = Shape3{40, 40, 40}.clamp(
      start + Voxel{round_half_down(d.z / 3), round_half_down(d.y / 3), round_half_down(d.x / 3)});
  CHECK(one.position == expect);
  REQUIRE(one.steps_mm.size() == 1);
  CHECK(one.steps_mm[0] == d);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int t = 0; t < 5; ++t) {
    m.p = {u(rng), u(rng), u(rng)};
    const AgentState a = coarse_localize(v, m, w, r, start, 4);
    CHECK(a.steps_mm.size() <= 4);
    CHECK(Shape3{40, 40, 40}.contains(a.position));
    for (const auto& s : a.steps_mm)
      for (int k = 0; k < 3; ++k) CHECK(std::abs(s[k]) < r[k]);
  }
}

TEST_CASE("mss_refine: featureless ties go to the lexicographic minimum; result stays in the patch") {
  auto zero = nn::NetworkWeights::initialize(small_net(), 1);
  for (auto& t : zero.params)
    for (auto& x : t.values()) x = 0.0f;
  const Volume v = noise_volume({32, 32, 32}, 5);
  LandmarkModel m;
  m.name = "m";
  m.f = {std::vector<float>(8, 0.0f), std::vector<float>(16, 0.0f), std::vector<float>(32, 0.0f)};
  m.f[0][0] = m.f[1][0] = m.f[2][0] = 1.0f;
  // patch centre index is (8,8,8): corner of the patch at coarse - 8
  CHECK(mss_refine(v, {16, 16, 16}, m, zero) == Voxel{8, 8, 8});
  CHECK(mss_refine(v, {16, 16, 16}, m, zero) == mss_refine(v, {16, 16, 16}, m, zero));
  CHECK(mss_refine(v, {3, 30, 16}, m, zero) == Voxel{0, 22, 8});

  const auto w = nn::NetworkWeights::initialize(small_net(), 2);
  const LandmarkModel lm = build_landmark_model("x", {{&v, Voxel{12, 14, 18}}}, w);
  std::mt19937_64 rng(9);
  for (int t = 0; t < 10; ++t) {
    const Voxel c{int(rng() % 32), int(rng() % 32), int(rng() % 32)};
    const Voxel p = mss_refine(v, c, lm, w);
    CHECK(Shape3{32, 32, 32}.contains(p));
    for (int a = 0; a < 3; ++a) {
      CHECK(p[a] - c[a] >= -8);
      CHECK(p[a] - c[a] <= 7);
    }
  }
}

TEST_CASE("localize_organ_points cardinality for WPL and SPL") {
  const auto w = nn::NetworkWeights::initialize(small_net(), 3);
  const Shape3 shape{32, 32, 32};
  const Volume v = noise_volume(shape, 7);
  // z extent 10 voxels at 3 mm: a 30 mm span
  const OrganTruth organ = box_organ(shape, {8, 10, 9}, {17, 20, 22});
  CHECK(z_span_mm(organ.mask, v.spacing()) == 30.0);

  const int m15 = cohort_segment_count({&organ.mask}, v.spacing(), 15.0);
  CHECK(m15 == 2);
  CHECK(cohort_segment_count({&organ.mask}, v.spacing(), 30.0) == 1);
  CHECK(cohort_segment_count({&organ.mask}, v.spacing(), 45.0) == 1);

  SupportCase sc{&v, organ_landmarks(organ, LocalizationMode::Wpl, 1)};
  for (const auto& [k, p] : organ_landmarks(organ, LocalizationMode::Spl, m15)) sc.landmarks[k] = p;
  const SupportModel model = build_support_model({sc}, w);
  CHECK(model.k == 1);
  CHECK(organ_segment_count(model, "box") == 2);

  LocateOptions opt;
  opt.max_steps = 2;
  const auto wpl = localize_organ_points(v, model, "box", LocalizationMode::Wpl, w, {96, 96, 96}, opt);
  CHECK(wpl.size() == 6);
  CHECK(wpl[0].name == "box/z_min");
  CHECK(wpl[5].name == "box/y_max");
  const auto spl = localize_organ_points(v, model, "box", LocalizationMode::Spl, w, {96, 96, 96}, opt);
  CHECK(spl.size() == 12);
  CHECK(spl[0].name == "box/seg0/z_min");
  CHECK(spl[11].name == "box/seg1/y_max");
  for (const auto& e : spl) CHECK(shape.contains(e.point));

  SupportCase wide{&v, organ_landmarks(organ, LocalizationMode::Spl, cohort_segment_count({&organ.mask}, v.spacing(), 40.0))};
  const SupportModel m1 = build_support_model({wide}, w);
  CHECK(localize_organ_points(v, m1, "box", LocalizationMode::Spl, w, {96, 96, 96}, opt).size() == 6);

  try {
    localize_organ_points(v, m1, "box", LocalizationMode::Wpl, w, {96, 96, 96}, opt);
    FAIL("expected GroupingError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GroupingError);
  }
}

TEST_CASE("localization is deterministic; random start is seeded") {
  const auto w = nn::NetworkWeights::initialize(small_net(), 8);
  const Volume v = noise_volume({32, 32, 32}, 8);
  const OrganTruth organ = box_organ({32, 32, 32}, {5, 6, 7}, {12, 14, 20});
  const SupportModel model = build_support_model({{&v, organ_landmarks(organ, LocalizationMode::Wpl, 1)}}, w);
  LocateOptions opt;
  const auto a = localize_all(v, model, w, {96, 96, 96}, opt);
  const auto b = localize_all(v, model, w, {96, 96, 96}, opt);
  REQUIRE(a.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].point == b[i].point);
  opt.random_start = true;
  opt.seed = 4;
  opt.refine = false;
  opt.max_steps = 0;
  const auto c = localize_all(v, model, w, {96, 96, 96}, opt);
  const auto d = localize_all(v, model, w, {96, 96, 96}, opt);
  for (std::size_t i = 0; i < c.size(); ++i) {
    CHECK(c[i].point == d[i].point);
    CHECK(c[i].point == c[i].coarse);
  }
}

TEST_CASE("support descriptor JSON round trip and schema errors") {
  std::vector<SupportEntry> es{{"a.json", {{"liver/z_min", Voxel{1, 2, 3}}}},
                               {"b.json", {{"liver/z_min", Voxel{4, 5, 6}}}}};
  const auto j = support_descriptor_json(es);
  CHECK(j.dump() == R"([{"volume":"a.json","landmarks":{"liver/z_min":[1,2,3]}},{"volume":"b.json","landmarks":{"liver/z_min":[4,5,6]}}])");
  const auto r = parse_support_descriptor(nlohmann::json::parse(j.dump()));
  REQUIRE(r.size() == 2);
  CHECK(r[1].volume == "b.json");
  CHECK(r[1].landmarks.at("liver/z_min") == Voxel{4, 5, 6});
  CHECK_THROWS_AS(parse_support_descriptor(nlohmann::json::array()), Error);
  CHECK_THROWS_AS(parse_support_descriptor(nlohmann::json::parse(R"([{"volume": 3, "landmarks": {}}])")), Error);
  CHECK(localization_mode_from_string("spl") == LocalizationMode::Spl);
  CHECK_THROWS_AS(localization_mode_from_string("xyz"), Error);
}
