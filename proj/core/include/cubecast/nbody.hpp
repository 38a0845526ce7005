#pragma once
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cubecast/rng.hpp"

namespace cubecast {

// One moving digit: mass, top-left position and velocity in frame pixels
// (per frame interval), and which glyph it renders as.
struct Body {
  double mass = 1.0;
  double x = 0, y = 0;
  double vx = 0, vy = 0;
  int glyph = 0;
};

enum class Boundary { reflect, none };

struct PhysicsConfig {
  int64_t n_bodies = 3;
  double g = 120.0;        // calibrated so 20-frame runs are measurably chaotic
  double softening = 2.0;  // px; pairwise force uses (r^2 + softening^2)^(3/2)
  double dt = 0.02;        // frame fraction per integrator substep
  int64_t substeps = 50;   // dt * substeps == 1 frame interval
  Boundary boundary = Boundary::reflect;
};

void validate_physics(const PhysicsConfig& cfg);
std::string physics_to_json(const PhysicsConfig& cfg);
PhysicsConfig physics_from_json(const std::string& text);

// Velocity-Verlet integration of softened pairwise gravity over whole frame
// intervals; the returned trajectory holds frames+1 entries starting at the
// initial state. Reflective walls clamp positions to [0,xmax]x[0,ymax] and
// flip the touching velocity component; gravity stays active through bounces.
std::vector<std::vector<Body>> simulate_nbody(std::vector<Body> init, const PhysicsConfig& cfg,
                                              int64_t frames, double xmax, double ymax);

// Total kinetic + softened potential energy, and total momentum. Both are
// conserved (energy approximately, momentum exactly) when walls are off.
double nbody_energy(const std::vector<Body>& bodies, double g, double softening);
std::array<double, 2> nbody_momentum(const std::vector<Body>& bodies);

// Seeded initial conditions: masses uniform in [1,2], speeds uniform in
// [1,3] px/frame at a uniform angle, positions uniform in [0,span]^2
// rejection-sampled for at least sep_min pairwise separation (the threshold
// relaxes by 10% every 200 failed draws so sampling always terminates).
std::vector<Body> sample_bodies(Rng& rng, int64_t n, double span, double sep_min);

}  // namespace cubecast
