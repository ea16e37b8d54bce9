#pragma once

#include "core/config.hpp"
#include "core/util.hpp"

namespace mixedflow {

enum class VehicleClass : int { Human = 0, Automated = 1 };

// Desired time headway for a follower/leader class pair.
double desiredHeadway(const Config::Idm& p, VehicleClass follower, VehicleClass leader);

// Car-following acceleration. `gap` is bumper-to-bumper and must be positive;
// a non-positive gap means the vehicles overlap and throws CollisionError.
// The result is clamped to [-b_emergency, a_max].
double idmAcceleration(const Config::Idm& p, double speed, double maxSpeed, double gap,
                       double leaderSpeed, double headway);

// Free-road acceleration (no leader).
double idmFreeAcceleration(const Config::Idm& p, double speed, double maxSpeed);

// Steady-state bumper-to-bumper spacing at speed u (< maxSpeed).
double idmEquilibriumSpacing(const Config::Idm& p, double speed, double maxSpeed, double headway);

} // namespace mixedflow
