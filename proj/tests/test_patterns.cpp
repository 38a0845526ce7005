#include <doctest.h>

#include <set>
#include <string>
#include <vector>

#include "cubecast/attention.hpp"
#include "cubecast/flops.hpp"
#include "cubecast/patterns.hpp"
#include "cubecast/rng.hpp"
#include "support.hpp"

using namespace cubecast;

namespace {

CuboidSpec mk(std::array<int64_t, 3> size, Strategy strat = Strategy::local,
              std::array<int64_t, 3> shift = {0, 0, 0}) {
  CuboidSpec s;
  s.size = size;
  s.strategy = strat;
  s.shift = shift;
  return s;
}

}  // namespace

TEST_CASE("axial expands to three single-axis stages") {
  const PatternConfig cfg = build_pattern("axial", {10, 32, 32});
  REQUIRE(cfg.stages.size() == 3);
  CHECK(cfg.stages[0] == mk({10, 1, 1}));
  CHECK(cfg.stages[1] == mk({1, 32, 1}));
  CHECK(cfg.stages[2] == mk({1, 1, 32}));
  CHECK(cfg.globals == 0);
}

TEST_CASE("divided space-time expands to time then full-space stages") {
  const PatternConfig cfg = build_pattern("divided_space_time", {10, 32, 32});
  REQUIRE(cfg.stages.size() == 2);
  CHECK(cfg.stages[0] == mk({10, 1, 1}));
  CHECK(cfg.stages[1] == mk({1, 32, 32}));
}

TEST_CASE("video swin gets a half-window shift on the second stage") {
  const PatternConfig cfg = build_pattern("video_swin", {10, 32, 32}, {.p = 2, .m = 8});
  REQUIRE(cfg.stages.size() == 2);
  CHECK(cfg.stages[0] == mk({2, 8, 8}));
  CHECK(cfg.stages[1] == mk({2, 8, 8}, Strategy::local, {1, 4, 4}));

  const PatternConfig named = build_pattern("video_swin_2x8", {10, 32, 32});
  CHECK(named.stages == cfg.stages);
  const PatternConfig big = build_pattern("video_swin_10x8", {10, 32, 32});
  CHECK(big.stages[1] == mk({10, 8, 8}, Strategy::local, {5, 4, 4}));
}

TEST_CASE("spatial local dilate runs local, local, dilated") {
  const PatternConfig cfg = build_pattern("spatial_local_dilate_2", {10, 32, 32});
  REQUIRE(cfg.stages.size() == 3);
  CHECK(cfg.stages[0] == mk({10, 1, 1}));
  CHECK(cfg.stages[1] == mk({1, 2, 2}));
  CHECK(cfg.stages[2] == mk({1, 2, 2}, Strategy::dilated));

  // Alias used by some write-ups for the same family.
  const PatternConfig alias = build_pattern("spatial_local_global_2", {10, 32, 32});
  CHECK(alias.stages == cfg.stages);
}

TEST_CASE("axial space dilate alternates dilated and local per axis") {
  const PatternConfig cfg = build_pattern("axial_space_dilate_2", {10, 32, 32});
  REQUIRE(cfg.stages.size() == 5);
  CHECK(cfg.stages[0] == mk({10, 1, 1}));
  CHECK(cfg.stages[1] == mk({1, 16, 1}, Strategy::dilated));
  CHECK(cfg.stages[2] == mk({1, 16, 1}));
  CHECK(cfg.stages[3] == mk({1, 1, 16}, Strategy::dilated));
  CHECK(cfg.stages[4] == mk({1, 1, 16}));
  const std::vector<Strategy> want = {Strategy::local, Strategy::dilated, Strategy::local,
                                      Strategy::dilated, Strategy::local};
  for (size_t i = 0; i < want.size(); ++i) CHECK(cfg.stages[i].strategy == want[i]);
}

TEST_CASE("template parameter errors name the offending extent") {
  CHECK_THROWS_WITH_AS(build_pattern("axial_space_dilate_3", {10, 32, 32}),
                       doctest::Contains("does not divide extent H=32"), std::runtime_error);
  CHECK_THROWS_WITH_AS(build_pattern("axial_space_dilate", {10, 32, 30}, {.m = 4}),
                       doctest::Contains("W=30"), std::runtime_error);
  CHECK_THROWS(build_pattern("video_swin", {10, 32, 32}));
  CHECK_THROWS(build_pattern("spatial_local_dilate", {10, 32, 32}));
  CHECK_THROWS(build_pattern("no_such_family", {10, 32, 32}));
  CHECK_THROWS(build_pattern("axialx", {10, 32, 32}));
  CHECK_THROWS(build_pattern("video_swin_2y8", {10, 32, 32}));
  CHECK_THROWS(build_pattern("axial", {0, 32, 32}));
}

TEST_CASE("stage text format round-trips") {
  const PatternConfig cfg = build_pattern("axial", {10, 32, 32});
  CHECK(format_stages(cfg.stages) ==
        "(10,1,1)/local/(0,0,0)->(1,32,1)/local/(0,0,0)->(1,1,32)/local/(0,0,0)");

  Rng rng(99);
  for (int it = 0; it < 50; ++it) {
    std::vector<CuboidSpec> stages;
    const int ns = 1 + static_cast<int>(rng.next() % 4);
    for (int i = 0; i < ns; ++i) {
      CuboidSpec s;
      for (int a = 0; a < 3; ++a) {
        s.size[a] = 1 + static_cast<int64_t>(rng.next() % 6);
        s.shift[a] = static_cast<int64_t>(rng.next() % 4);
      }
      s.strategy = rng.next() % 2 ? Strategy::dilated : Strategy::local;
      stages.push_back(s);
    }
    CHECK(parse_stages(format_stages(stages)) == stages);
  }
}

TEST_CASE("stage text tolerates whitespace and rejects malformed input") {
  const auto st = parse_stages(" (2, 4,4) / dilated / (1,0, 2) ");
  REQUIRE(st.size() == 1);
  CHECK(st[0] == mk({2, 4, 4}, Strategy::dilated, {1, 0, 2}));

  const auto two = parse_stages("(1,2,3)/local/(0,0,0) -> (3,2,1)/dilated/(1,1,1)");
  REQUIRE(two.size() == 2);
  CHECK(two[1] == mk({3, 2, 1}, Strategy::dilated, {1, 1, 1}));

  CHECK_THROWS(parse_stages(""));
  CHECK_THROWS(parse_stages("(1,2)/local/(0,0,0)"));
  CHECK_THROWS(parse_stages("(1,2,3)/sideways/(0,0,0)"));
  CHECK_THROWS(parse_stages("(1,2,3)/local"));
  CHECK_THROWS(parse_stages("(1,2,3)/local/(0,0,0)->"));
}

TEST_CASE("generic pattern names carry their stage text") {
  const PatternConfig cfg =
      build_pattern("generic:(3,2,2)/local/(0,0,0)->(1,4,4)/dilated/(0,2,2)", {6, 8, 8});
  REQUIRE(cfg.stages.size() == 2);
  CHECK(cfg.stages[0] == mk({3, 2, 2}));
  CHECK(cfg.stages[1] == mk({1, 4, 4}, Strategy::dilated, {0, 2, 2}));
  CHECK_THROWS(build_pattern("generic", {6, 8, 8}));
}

TEST_CASE("pattern JSON round-trips") {
  PatternConfig cfg = build_pattern("video_swin_2x8", {10, 32, 32}, {}, 8);
  const std::string doc = pattern_to_json(cfg);
  const PatternConfig back = pattern_from_json(doc);
  CHECK(back == cfg);

  const PatternConfig noshift = pattern_from_json(
      R"({"name":"x","globals":0,"stages":[{"size":[2,3,4],"strategy":"dilated"}]})");
  CHECK(noshift.stages[0] == mk({2, 3, 4}, Strategy::dilated));

  CHECK_THROWS(pattern_from_json("{"));
  CHECK_THROWS(pattern_from_json(R"({"name":"x","stages":[]})"));
  CHECK_THROWS(pattern_from_json(
      R"({"name":"x","stages":[{"size":[2,3],"strategy":"local"}]})"));
  CHECK_THROWS(pattern_from_json(
      R"({"name":"x","stages":[{"size":[2,3,4],"strategy":"spiral"}]})"));
}

TEST_CASE("validate reports padded extents and clamping") {
  const auto axial = validate_pattern(build_pattern("axial", {10, 32, 32}), {10, 32, 32});
  REQUIRE(axial.size() == 3);
  for (const auto& ss : axial) {
    CHECK(ss.padded == Dims3{10, 32, 32});
    CHECK_FALSE(ss.clamped);
  }

  const auto swin = validate_pattern(build_pattern("video_swin_2x8", {13, 384, 384}),
                                     {13, 384, 384});
  CHECK(swin[0].padded == Dims3{14, 384, 384});
  CHECK(swin[1].padded == Dims3{14, 384, 384});

  PatternConfig gen;
  gen.name = "generic";
  gen.stages = {mk({3, 2, 2})};
  CHECK(validate_pattern(gen, {5, 3, 3})[0].padded == Dims3{6, 4, 4});

  PatternConfig big;
  big.name = "generic";
  big.stages = {mk({16, 1, 1})};
  const auto v = validate_pattern(big, {10, 4, 4});
  CHECK(v[0].clamped);
  CHECK(v[0].padded == Dims3{10, 4, 4});
}

TEST_CASE("pointwise cuboids collapse to one score per token pair") {
  PatternConfig cfg;
  cfg.name = "generic";
  cfg.stages = {mk({1, 1, 1})};
  const int64_t t = 3, h = 4, w = 5, c = 8, n = t * h * w;
  for (int64_t p : {int64_t{0}, int64_t{5}}) {
    const CostReport rep = cost_model(cfg, {t, h, w}, c, p, 2);
    REQUIRE(rep.stages.size() == 1);
    // Scores and the value contraction each cost ncub*L*(L+P)*C, so the
    // degenerate 1x1x1 case is N*(1+P)*C per side.
    CHECK(rep.stages[0].attend_macs == 2 * n * (1 + p) * c);
    CHECK(rep.stages[0].attend_macs / 2 == n * (1 + p) * c);
  }
}

TEST_CASE("axial beats the dense baseline on score terms") {
  const int64_t c = 64, n = 10 * 32 * 32;
  const CostReport rep = cost_model(build_pattern("axial", {10, 32, 32}), {10, 32, 32}, c, 0, 4);
  int64_t attend = 0;
  for (const auto& s : rep.stages) attend += s.attend_macs;
  CHECK(attend == 2 * c * n * (10 + 32 + 32));
  CHECK(rep.dense_attend_macs == 2 * c * n * n);
  CHECK(attend < rep.dense_attend_macs);
  CHECK(rep.total_macs < rep.dense_total_macs);
}

TEST_CASE("eight global vectors add under five percent on axial") {
  const PatternConfig cfg = build_pattern("axial", {10, 32, 32});
  const CostReport base = cost_model(cfg, {10, 32, 32}, 64, 0, 4);
  const CostReport glob = cost_model(cfg, {10, 32, 32}, 64, 8, 4);
  const double ratio = static_cast<double>(glob.total_macs - base.total_macs) /
                       static_cast<double>(base.total_macs);
  CHECK(ratio > 0.0);
  CHECK(ratio < 0.05);
  const double fratio = static_cast<double>(glob.total_flops() - base.total_flops()) /
                        static_cast<double>(base.total_flops());
  CHECK(fratio < 0.05);
}

TEST_CASE("attend cost is monotone in cuboid size at divisor sizes") {
  const Dims3 dims{6, 4, 4};
  const std::vector<std::vector<int64_t>> divs = {{1, 2, 3, 6}, {1, 2, 4}, {1, 2, 4}};
  auto attend = [&](std::array<int64_t, 3> size) {
    PatternConfig cfg;
    cfg.name = "generic";
    cfg.stages = {mk(size)};
    return cost_model(cfg, dims, 8, 0, 2).stages[0].attend_macs;
  };
  for (int axis = 0; axis < 3; ++axis) {
    for (int64_t a : divs[0])
      for (int64_t b : divs[1])
        for (int64_t c : divs[2]) {
          std::array<int64_t, 3> size{a, b, c};
          for (int64_t larger : divs[axis]) {
            if (larger <= size[axis]) continue;
            std::array<int64_t, 3> bigger = size;
            bigger[axis] = larger;
            CHECK(attend(bigger) >= attend(size));
          }
        }
  }
}

TEST_CASE("search space enumerates every family with and without globals") {
  const auto space = enumerate_search_space();
  CHECK(space.size() == 14);
  std::set<std::string> names;
  int with_globals = 0;
  for (const auto& e : space) {
    names.insert(e.name);
    if (e.globals > 0) {
      CHECK(e.globals == 8);
      ++with_globals;
    }
    CHECK_NOTHROW(validate_pattern(e, {10, 16, 16}));
    // Names round-trip: rebuilding from the stored name reproduces the entry.
    CHECK(build_pattern(e.name, {10, 32, 32}, {}, e.globals) == e);
  }
  CHECK(names.size() == 7);
  CHECK(with_globals == 7);
  // Paired entries differ only in the global count.
  for (size_t i = 0; i + 1 < space.size(); i += 2) {
    CHECK(space[i].name == space[i + 1].name);
    CHECK(space[i].stages == space[i + 1].stages);
    CHECK(space[i].globals == 0);
    CHECK(space[i + 1].globals == 8);
  }
}

namespace {

// Runs one attention block over the pattern and returns the measured counters.
flops::Counters measure_block(const PatternConfig& cfg, const Dims3& dims, int64_t c, int heads,
                              int64_t pglobal, int64_t* param_count = nullptr) {
  Rng rng(4242);
  ParamStore<double> ps;
  const auto bp = make_self_block<double>(ps, "b", c, heads, cfg.stages, pglobal, rng);
  if (param_count) *param_count = ps.param_count();
  Tape<double> tape;
  Binder<double> bind(&tape);
  XG<double> in;
  in.x = make_leaf(tape, testsup::rand_tensor({dims[0], dims[1], dims[2], c}, rng, -0.5, 0.5));
  if (pglobal > 0) in.g = make_leaf(tape, testsup::rand_tensor({pglobal, c}, rng, -0.5, 0.5));
  flops::Scoped scoped;
  const XG<double> out = self_block_forward(bind, bp, in);
  (void)out;
  return scoped.snapshot();
}

}  // namespace

TEST_CASE("cost model matches instrumented kernels exactly across the sweep") {
  for (const auto& cfg : enumerate_search_space({4, 8, 8})) {
    CAPTURE(cfg.name);
    CAPTURE(cfg.globals);
    const CostReport rep = cost_model(cfg, {4, 8, 8}, 16, cfg.globals, 4);
    int64_t params = 0;
    const flops::Counters got = measure_block(cfg, {4, 8, 8}, 16, 4, cfg.globals, &params);
    CHECK(got.macs == static_cast<uint64_t>(rep.total_macs));
    CHECK(got.softmax_flops == static_cast<uint64_t>(rep.softmax_flops));
    CHECK(params == rep.param_count);
  }
}

TEST_CASE("cost model stays exact under padding, shifts and clamping") {
  const std::vector<std::string> texts = {
      "generic:(3,3,3)/local/(1,1,1)->(2,5,4)/dilated/(0,2,1)",
      "generic:(4,2,5)/dilated/(2,0,3)",
      "generic:(8,8,8)/local/(0,0,0)",  // clamps to the extent
      "generic:(1,7,1)/local/(0,3,0)->(5,1,6)/dilated/(1,1,1)->(2,2,2)/local/(0,0,0)",
  };
  const Dims3 dims{5, 7, 6};
  for (const auto& name : texts) {
    const PatternConfig cfg = build_pattern(name, dims);
    for (int64_t p : {int64_t{0}, int64_t{3}}) {
      CAPTURE(name);
      CAPTURE(p);
      const CostReport rep = cost_model(cfg, dims, 8, p, 2);
      const flops::Counters got = measure_block(cfg, dims, 8, 2, p);
      CHECK(got.macs == static_cast<uint64_t>(rep.total_macs));
      CHECK(got.softmax_flops == static_cast<uint64_t>(rep.softmax_flops));
    }
  }
}

TEST_CASE("dense baseline equals the cost of the single full cuboid pattern") {
  const Dims3 dims{4, 6, 6};
  const PatternConfig dense = build_pattern("generic:(4,6,6)/local/(0,0,0)", dims);
  for (int64_t p : {int64_t{0}, int64_t{4}}) {
    const CostReport dense_rep = cost_model(dense, dims, 8, p, 2);
    const CostReport any = cost_model(build_pattern("axial", dims), dims, 8, p, 2);
    CHECK(any.dense_total_macs == dense_rep.total_macs);
    CHECK(any.dense_attend_macs == dense_rep.stages[0].attend_macs);
    const flops::Counters got = measure_block(dense, dims, 8, 2, p);
    CHECK(got.macs == static_cast<uint64_t>(any.dense_total_macs));
  }
}

TEST_CASE("cost totals are sums of stages and memory is four bytes per element") {
  const CostReport rep =
      cost_model(build_pattern("axial_space_dilate_2", {8, 8, 8}), {8, 8, 8}, 16, 8, 4);
  int64_t macs = 0, smax = 0, elems = 0;
  for (const auto& s : rep.stages) {
    macs += s.macs();
    smax += s.softmax_flops;
    elems += s.attn_map_elems;
  }
  CHECK(rep.total_macs == macs);
  CHECK(rep.softmax_flops == smax);
  CHECK(rep.attn_map_elems == elems);
  CHECK(rep.attn_map_bytes == 4 * elems);
  CHECK(rep.attention_macs + rep.ffn_macs == rep.total_macs);
  CHECK_THROWS(cost_model(build_pattern("axial", {8, 8, 8}), {8, 8, 8}, 10, 0, 4));
}
