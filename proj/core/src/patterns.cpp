#include "cubecast/patterns.hpp"

#include <cctype>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace cubecast {

namespace {

std::string triple_str(const std::array<int64_t, 3>& v) {
  std::ostringstream os;
  os << '(' << v[0] << ',' << v[1] << ',' << v[2] << ')';
  return os.str();
}

std::array<int64_t, 3> parse_triple(const std::string& s, size_t& pos) {
  auto fail = [&] { throw std::runtime_error("bad stage text near '" + s.substr(pos) + "'"); };
  auto skip_ws = [&] {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
  };
  std::array<int64_t, 3> out{};
  skip_ws();
  if (pos >= s.size() || s[pos] != '(') fail();
  ++pos;
  for (int i = 0; i < 3; ++i) {
    skip_ws();
    size_t used = 0;
    try {
      out[i] = std::stoll(s.substr(pos), &used);
    } catch (const std::exception&) {
      fail();
    }
    pos += used;
    skip_ws();
    const char want = i < 2 ? ',' : ')';
    if (pos >= s.size() || s[pos] != want) fail();
    ++pos;
  }
  return out;
}

// Enforces that m divides the named extent, for the families that tile by it.
void require_divides(const std::string& family, int64_t m, char axis, int64_t extent) {
  if (m <= 0) throw std::runtime_error(family + ": window size m must be positive");
  if (extent % m != 0) {
    std::ostringstream os;
    os << family << ": m=" << m << " does not divide extent " << axis << "=" << extent;
    throw std::runtime_error(os.str());
  }
}

struct ParsedName {
  std::string family;
  PatternParams params;
  bool has_params = false;
  std::string generic_text;
};

// Splits "video_swin_2x8" / "axial_space_dilate_4" / "generic:(…)" style names
// into family plus encoded parameters.
ParsedName parse_name(const std::string& name) {
  ParsedName out;
  if (name.rfind("generic", 0) == 0) {
    out.family = "generic";
    const size_t colon = name.find(':');
    if (colon != std::string::npos) out.generic_text = name.substr(colon + 1);
    return out;
  }
  const std::vector<std::string> families = {
      "axial_space_dilate", "spatial_local_dilate", "spatial_local_global",
      "video_swin",         "divided_space_time",   "axial",
  };
  for (const auto& fam : families) {
    if (name.rfind(fam, 0) != 0) continue;
    std::string rest = name.substr(fam.size());
    out.family = fam == "spatial_local_global" ? "spatial_local_dilate" : fam;
    if (rest.empty()) return out;
    if (rest[0] != '_') continue;  // e.g. "axial_space_dilate" seen from "axial"
    rest = rest.substr(1);
    try {
      if (fam == "video_swin") {
        const size_t x = rest.find('x');
        if (x == std::string::npos) throw std::runtime_error("no x");
        size_t used = 0;
        out.params.p = std::stoll(rest.substr(0, x), &used);
        if (used != x) throw std::runtime_error("junk");
        out.params.m = std::stoll(rest.substr(x + 1), &used);
        if (used != rest.size() - x - 1) throw std::runtime_error("junk");
      } else {
        size_t used = 0;
        out.params.m = std::stoll(rest, &used);
        if (used != rest.size()) throw std::runtime_error("junk");
      }
      out.has_params = true;
      return out;
    } catch (const std::exception&) {
      throw std::runtime_error("cannot parse pattern parameters from name '" + name + "'");
    }
  }
  throw std::runtime_error("unknown pattern family '" + name + "'");
}

CuboidSpec stage(std::array<int64_t, 3> size, Strategy strat = Strategy::local,
                 std::array<int64_t, 3> shift = {0, 0, 0}) {
  CuboidSpec s;
  s.size = size;
  s.strategy = strat;
  s.shift = shift;
  return s;
}

}  // namespace

bool operator==(const PatternConfig& a, const PatternConfig& b) {
  return a.name == b.name && a.stages == b.stages && a.globals == b.globals;
}

std::string format_stages(const std::vector<CuboidSpec>& stages) {
  std::ostringstream os;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (i) os << "->";
    os << triple_str(stages[i].size) << '/' << strategy_str(stages[i].strategy) << '/'
       << triple_str(stages[i].shift);
  }
  return os.str();
}

std::vector<CuboidSpec> parse_stages(const std::string& text) {
  std::vector<CuboidSpec> out;
  size_t pos = 0;
  auto expect = [&](const std::string& tok) {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (text.compare(pos, tok.size(), tok) != 0)
      throw std::runtime_error("bad stage text: expected '" + tok + "' near '" + text.substr(pos) +
                               "'");
    pos += tok.size();
  };
  while (true) {
    CuboidSpec s;
    s.size = parse_triple(text, pos);
    expect("/");
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    const size_t slash = text.find('/', pos);
    if (slash == std::string::npos) throw std::runtime_error("bad stage text: missing strategy");
    std::string strat = text.substr(pos, slash - pos);
    while (!strat.empty() && std::isspace(static_cast<unsigned char>(strat.back())))
      strat.pop_back();
    s.strategy = strategy_from(strat);
    pos = slash + 1;
    s.shift = parse_triple(text, pos);
    out.push_back(s);
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos == text.size()) break;
    expect("->");
  }
  if (out.empty()) throw std::runtime_error("empty stage list");
  return out;
}

std::string pattern_to_json(const PatternConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  j["globals"] = cfg.globals;
  j["stages"] = nlohmann::json::array();
  for (const auto& s : cfg.stages) {
    nlohmann::json js;
    js["size"] = {s.size[0], s.size[1], s.size[2]};
    js["strategy"] = strategy_str(s.strategy);
    js["shift"] = {s.shift[0], s.shift[1], s.shift[2]};
    j["stages"].push_back(js);
  }
  return j.dump(2);
}

PatternConfig pattern_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("pattern JSON parse error: ") + e.what());
  }
  PatternConfig cfg;
  cfg.name = j.at("name").get<std::string>();
  cfg.globals = j.value("globals", int64_t{0});
  for (const auto& js : j.at("stages")) {
    CuboidSpec s;
    const auto size = js.at("size").get<std::vector<int64_t>>();
    if (size.size() != 3) throw std::runtime_error("pattern JSON: size must have 3 entries");
    s.size = {size[0], size[1], size[2]};
    s.strategy = strategy_from(js.at("strategy").get<std::string>());
    if (js.contains("shift")) {
      const auto shift = js.at("shift").get<std::vector<int64_t>>();
      if (shift.size() != 3) throw std::runtime_error("pattern JSON: shift must have 3 entries");
      s.shift = {shift[0], shift[1], shift[2]};
    }
    cfg.stages.push_back(s);
  }
  if (cfg.stages.empty()) throw std::runtime_error("pattern JSON: empty stage list");
  return cfg;
}

PatternConfig build_pattern(const std::string& name, const Dims3& dims,
                            const PatternParams& params, int64_t globals) {
  const int64_t t = dims[0], h = dims[1], w = dims[2];
  if (t <= 0 || h <= 0 || w <= 0)
    throw std::runtime_error("build_pattern: extents must be positive, got " + triple_str(dims));
  ParsedName pn = parse_name(name);
  PatternParams pp = pn.has_params ? pn.params : params;

  PatternConfig cfg;
  cfg.name = name;
  cfg.globals = globals;
  if (pn.family == "axial") {
    cfg.stages = {stage({t, 1, 1}), stage({1, h, 1}), stage({1, 1, w})};
  } else if (pn.family == "divided_space_time") {
    cfg.stages = {stage({t, 1, 1}), stage({1, h, w})};
  } else if (pn.family == "video_swin") {
    if (pp.p <= 0 || pp.m <= 0)
      throw std::runtime_error("video_swin needs window sizes p and m (e.g. video_swin_2x8)");
    cfg.stages = {stage({pp.p, pp.m, pp.m}),
                  stage({pp.p, pp.m, pp.m}, Strategy::local, {pp.p / 2, pp.m / 2, pp.m / 2})};
  } else if (pn.family == "spatial_local_dilate") {
    if (pp.m <= 0)
      throw std::runtime_error(
          "spatial_local_dilate needs a window size m (e.g. spatial_local_dilate_2)");
    cfg.stages = {stage({t, 1, 1}), stage({1, pp.m, pp.m}),
                  stage({1, pp.m, pp.m}, Strategy::dilated)};
  } else if (pn.family == "axial_space_dilate") {
    if (pp.m <= 0)
      throw std::runtime_error(
          "axial_space_dilate needs a divisor m (e.g. axial_space_dilate_2)");
    require_divides("axial_space_dilate", pp.m, 'H', h);
    require_divides("axial_space_dilate", pp.m, 'W', w);
    cfg.stages = {stage({t, 1, 1}),
                  stage({1, h / pp.m, 1}, Strategy::dilated),
                  stage({1, h / pp.m, 1}),
                  stage({1, 1, w / pp.m}, Strategy::dilated),
                  stage({1, 1, w / pp.m})};
  } else {  // generic
    std::string text = pn.generic_text;
    if (text.empty())
      throw std::runtime_error("generic pattern needs stages: generic:(bT,bH,bW)/strategy/(…)");
    cfg.stages = parse_stages(text);
  }
  return cfg;
}

std::vector<StageShape> validate_pattern(const PatternConfig& cfg, const Dims3& dims) {
  if (cfg.stages.empty()) throw std::runtime_error("pattern has no stages");
  std::vector<StageShape> out;
  for (const auto& sp : cfg.stages) {
    const CuboidSpec cl = clamp_spec(sp, dims);
    StageShape ss;
    ss.clamped = !(cl.size == sp.size);
    for (int a = 0; a < 3; ++a) {
      const int64_t nc = (dims[a] + cl.size[a] - 1) / cl.size[a];
      ss.padded[a] = nc * cl.size[a];
    }
    out.push_back(ss);
  }
  return out;
}

int64_t block_param_count(int64_t nstages, int64_t channels, int64_t globals) {
  const int64_t c = channels;
  const int64_t per_set = 12 * c * c + 13 * c;  // LN + 4 projections with bias + FFN
  return nstages * per_set + (globals > 0 ? per_set : 0);
}

CostReport cost_model(const PatternConfig& cfg, const Dims3& dims, int64_t channels,
                      int64_t globals, int64_t heads) {
  const int64_t c = channels, p = globals, hd = heads;
  const int64_t n = dims[0] * dims[1] * dims[2];
  if (c % hd != 0) throw std::runtime_error("head count must divide channels");

  auto stage_cost = [&](const CuboidSpec& raw) {
    StageCost sc;
    sc.spec = clamp_spec(raw, dims);
    int64_t ncub = 1;
    for (int a = 0; a < 3; ++a) {
      const int64_t nc = (dims[a] + sc.spec.size[a] - 1) / sc.spec.size[a];
      sc.padded[a] = nc * sc.spec.size[a];
      ncub *= nc;
    }
    sc.ncub = ncub;
    sc.cublen = sc.spec.size[0] * sc.spec.size[1] * sc.spec.size[2];
    const int64_t l = sc.cublen;
    sc.proj_macs = 4 * n * c * c + 2 * p * c * c;
    sc.attend_macs = 2 * ncub * l * (l + p) * c;
    sc.ffn_macs = 8 * n * c * c;
    int64_t smax = hd * ncub * l * (l + p);
    sc.attn_map_elems = smax;
    if (p > 0) {
      sc.gproj_macs = 4 * p * c * c;
      sc.gattend_macs = 2 * p * (p + n) * c;
      sc.gffn_macs = 8 * p * c * c;
      smax += hd * p * (p + n);
      sc.attn_map_elems += hd * p * (p + n);
    }
    sc.softmax_flops = 5 * smax;
    return sc;
  };

  CostReport rep;
  for (const auto& sp : cfg.stages) {
    StageCost sc = stage_cost(sp);
    rep.attention_macs += sc.proj_macs + sc.attend_macs + sc.gproj_macs + sc.gattend_macs;
    rep.ffn_macs += sc.ffn_macs + sc.gffn_macs;
    rep.total_macs += sc.macs();
    rep.softmax_flops += sc.softmax_flops;
    rep.attn_map_elems += sc.attn_map_elems;
    rep.stages.push_back(std::move(sc));
  }
  rep.param_count = block_param_count(static_cast<int64_t>(cfg.stages.size()), c, p);
  rep.attn_map_bytes = 4 * rep.attn_map_elems;
  const StageCost dense = stage_cost(stage(dims));
  rep.dense_attend_macs = dense.attend_macs;
  rep.dense_total_macs = dense.macs();
  return rep;
}

std::vector<PatternConfig> enumerate_search_space(const Dims3& dims) {
  const std::vector<std::string> names = {
      "axial",
      "divided_space_time",
      "video_swin_2x8",
      "spatial_local_dilate_2",
      "spatial_local_dilate_4",
      "axial_space_dilate_2",
      "axial_space_dilate_4",
  };
  std::vector<PatternConfig> out;
  for (const auto& nm : names)
    for (int64_t p : {int64_t{0}, int64_t{8}}) out.push_back(build_pattern(nm, dims, {}, p));
  return out;
}

}  // namespace cubecast
