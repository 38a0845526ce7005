#include "cubecast/nbody.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace cubecast {

void validate_physics(const PhysicsConfig& cfg) {
  auto fail = [](const std::string& msg) { throw std::runtime_error("physics config: " + msg); };
  if (cfg.n_bodies < 1) fail("needs at least one body");
  if (cfg.softening <= 0) fail("softening must be positive");
  if (cfg.dt <= 0 || cfg.substeps < 1) fail("timestep and substeps must be positive");
  if (std::abs(cfg.dt * static_cast<double>(cfg.substeps) - 1.0) > 1e-9)
    fail("dt * substeps must equal one frame interval");
  if (cfg.g < 0) fail("gravitational constant cannot be negative");
}

std::string physics_to_json(const PhysicsConfig& cfg) {
  nlohmann::json j;
  j["n_bodies"] = cfg.n_bodies;
  j["g"] = cfg.g;
  j["softening"] = cfg.softening;
  j["dt"] = cfg.dt;
  j["substeps"] = cfg.substeps;
  j["boundary"] = cfg.boundary == Boundary::reflect ? "reflect" : "none";
  return j.dump();
}

PhysicsConfig physics_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string("physics config parse error: ") + e.what());
  }
  PhysicsConfig cfg;
  cfg.n_bodies = j.value("n_bodies", cfg.n_bodies);
  cfg.g = j.value("g", cfg.g);
  cfg.softening = j.value("softening", cfg.softening);
  cfg.dt = j.value("dt", cfg.dt);
  cfg.substeps = j.value("substeps", cfg.substeps);
  const std::string b = j.value("boundary", std::string("reflect"));
  if (b == "reflect")
    cfg.boundary = Boundary::reflect;
  else if (b == "none")
    cfg.boundary = Boundary::none;
  else
    throw std::runtime_error("physics config: unknown boundary mode '" + b + "'");
  validate_physics(cfg);
  return cfg;
}

namespace {

// a_i = sum_j G m_j (r_j - r_i) / (|r_j - r_i|^2 + eps^2)^(3/2)
void accelerations(const std::vector<Body>& b, double g, double eps, std::vector<double>& ax,
                   std::vector<double>& ay) {
  const size_t n = b.size();
  ax.assign(n, 0.0);
  ay.assign(n, 0.0);
  if (g == 0.0) return;
  for (size_t i = 0; i < n; ++i)
    for (size_t j = i + 1; j < n; ++j) {
      const double dx = b[j].x - b[i].x, dy = b[j].y - b[i].y;
      const double inv = 1.0 / std::pow(dx * dx + dy * dy + eps * eps, 1.5);
      const double fx = g * dx * inv, fy = g * dy * inv;
      ax[i] += b[j].mass * fx;
      ay[i] += b[j].mass * fy;
      ax[j] -= b[i].mass * fx;
      ay[j] -= b[i].mass * fy;
    }
}

void reflect_axis(double& p, double& v, double lim) {
  // fold the coordinate back into [0, lim], flipping velocity each fold
  while (p < 0.0 || p > lim) {
    if (p < 0.0) p = -p;
    if (p > lim) p = 2.0 * lim - p;
    v = -v;
  }
}

}  // namespace

std::vector<std::vector<Body>> simulate_nbody(std::vector<Body> init, const PhysicsConfig& cfg,
                                              int64_t frames, double xmax, double ymax) {
  validate_physics(cfg);
  if (init.empty()) throw std::runtime_error("simulate_nbody: empty initial state");
  if (cfg.boundary == Boundary::reflect && (xmax <= 0 || ymax <= 0))
    throw std::runtime_error("simulate_nbody: reflective walls need positive extents");

  std::vector<std::vector<Body>> traj;
  traj.reserve(static_cast<size_t>(frames) + 1);
  traj.push_back(init);

  std::vector<Body> cur = std::move(init);
  std::vector<double> ax, ay, ax2, ay2;
  accelerations(cur, cfg.g, cfg.softening, ax, ay);
  for (int64_t f = 0; f < frames; ++f) {
    for (int64_t s = 0; s < cfg.substeps; ++s) {
      const double dt = cfg.dt, half = 0.5 * dt;
      for (size_t i = 0; i < cur.size(); ++i) {
        cur[i].vx += half * ax[i];
        cur[i].vy += half * ay[i];
        cur[i].x += dt * cur[i].vx;
        cur[i].y += dt * cur[i].vy;
      }
      accelerations(cur, cfg.g, cfg.softening, ax2, ay2);
      for (size_t i = 0; i < cur.size(); ++i) {
        cur[i].vx += half * ax2[i];
        cur[i].vy += half * ay2[i];
      }
      if (cfg.boundary == Boundary::reflect) {
        bool bounced = false;
        for (auto& b : cur) {
          const double px = b.x, py = b.y;
          reflect_axis(b.x, b.vx, xmax);
          reflect_axis(b.y, b.vy, ymax);
          bounced = bounced || b.x != px || b.y != py;
        }
        if (bounced) {
          accelerations(cur, cfg.g, cfg.softening, ax2, ay2);
        }
      }
      ax.swap(ax2);
      ay.swap(ay2);
    }
    traj.push_back(cur);
  }
  return traj;
}

double nbody_energy(const std::vector<Body>& bodies, double g, double softening) {
  double e = 0;
  for (const auto& b : bodies) e += 0.5 * b.mass * (b.vx * b.vx + b.vy * b.vy);
  for (size_t i = 0; i < bodies.size(); ++i)
    for (size_t j = i + 1; j < bodies.size(); ++j) {
      const double dx = bodies[j].x - bodies[i].x, dy = bodies[j].y - bodies[i].y;
      e -= g * bodies[i].mass * bodies[j].mass /
           std::sqrt(dx * dx + dy * dy + softening * softening);
    }
  return e;
}

std::array<double, 2> nbody_momentum(const std::vector<Body>& bodies) {
  std::array<double, 2> p = {0, 0};
  for (const auto& b : bodies) {
    p[0] += b.mass * b.vx;
    p[1] += b.mass * b.vy;
  }
  return p;
}

std::vector<Body> sample_bodies(Rng& rng, int64_t n, double span, double sep_min) {
  if (n < 1 || span <= 0) throw std::runtime_error("sample_bodies: need n >= 1 and span > 0");
  std::vector<Body> out;
  double sep = sep_min;
  for (int64_t attempt = 1;; ++attempt) {
    out.clear();
    for (int64_t i = 0; i < n; ++i) {
      Body b;
      b.x = rng.uniform(0.0, span);
      b.y = rng.uniform(0.0, span);
      out.push_back(b);
    }
    bool ok = true;
    for (int64_t i = 0; ok && i < n; ++i)
      for (int64_t j = i + 1; ok && j < n; ++j) {
        const double dx = out[i].x - out[j].x, dy = out[i].y - out[j].y;
        ok = dx * dx + dy * dy >= sep * sep;
      }
    if (ok) break;
    if (attempt % 200 == 0) sep *= 0.9;
  }
  for (auto& b : out) {
    b.mass = rng.uniform(1.0, 2.0);
    const double speed = rng.uniform(1.0, 3.0);
    const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    b.vx = speed * std::cos(angle);
    b.vy = speed * std::sin(angle);
  }
  return out;
}

}  // namespace cubecast
