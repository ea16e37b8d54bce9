#pragma once

#include <map>
#include <optional>
#include <vector>

#include "core/config.hpp"
#include "core/idm.hpp"
#include "core/util.hpp"

namespace mixedflow {

enum class Action : int { ChangeLeft = 0, ChangeRight = 1, KeepLane = 2 };

struct Vehicle {
    int id;
    VehicleClass cls;
    int lane;        // 0 = rightmost
    double pos;      // front-bumper arc position in [0, ringLength)
    double speed;    // m/s
    double maxSpeed; // per-vehicle free speed
    double length;
    long laneChangeCount = 0;
    double lastChangeTime = -1e9;
    bool changedThisTick = false;
};

struct Neighbor {
    int index = -1; // into vehicles(); -1 = none in lane
    double gap = 0; // bumper-to-bumper, >= 0 along travel direction
    bool valid() const { return index >= 0; }
};

struct Sensed {
    int index;
    double relPos; // signed shortest arc distance, + = ahead
    int laneDelta;
    double speed;
    int lane;
    VehicleClass cls;
};

struct StepStats {
    long executedChanges[2] = {0, 0};   // by class
    long suppressedChanges[2] = {0, 0}; // wanted to move, safety said no
};

// Ring-road multi-lane traffic. Per tick: lane-change intents (rule-based for
// humans, injected for automated vehicles) are validated and applied in
// ascending id order against the current configuration, then car-following
// accelerations are computed in the post-change lanes, then positions advance
// ballistically. Overlap at any point raises CollisionError.
class Simulator {
  public:
    // Random placement; throws ConfigError when the demand cannot fit.
    Simulator(const Config& cfg, uint64_t seed);
    // Explicit state, mainly for tests; validates ordering and gaps.
    Simulator(const Config& cfg, std::vector<Vehicle> vehicles);

    // avActions: vehicle id -> action for automated vehicles this tick.
    // Missing ids keep lane. Returns per-tick stats.
    StepStats step(const std::map<int, Action>& avActions);

    // What the rule-based policy would do for this vehicle right now.
    Action rulePolicy(int index) const;

    // Leader/follower in an arbitrary lane as seen from vehicle `index`.
    std::pair<Neighbor, Neighbor> neighborsInLane(int index, int lane) const;

    // Everything within `radius` meters of arc distance, nearest first.
    std::vector<Sensed> sense(int index, double radius) const;

    const std::vector<Vehicle>& vehicles() const { return vehicles_; }
    double time() const { return time_; }
    double ringLength() const { return ring_; }
    int nLanes() const { return lanes_; }
    int countOf(VehicleClass cls) const;
    const std::vector<int>& automatedIds() const { return avIds_; }

    // signed shortest arc distance from a to b (positive = b ahead of a)
    double arcDelta(double a, double b) const;

  private:
    const Config cfg_;
    double ring_;
    int lanes_;
    double dt_;
    double time_ = 0.0;
    std::vector<Vehicle> vehicles_;
    std::vector<int> avIds_;

    void validateInitial();
    bool tryLaneChange(int index, int targetLane, bool ruleBased, StepStats& stats);
    bool changeIsSafe(int index, int targetLane) const;
    double accelerationFor(int index) const;
    void advance(StepStats& stats);
    [[noreturn]] void reportCollision(int follower, int leader, double gap) const;
};

// Uniform-slack placement: every gap gets the standstill clearance plus a
// random share of the leftover road, so the minimum-gap invariant holds by
// construction.
std::vector<Vehicle> loadVehicles(const Config& cfg, uint64_t seed);

} // namespace mixedflow
