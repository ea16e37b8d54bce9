#include "core/sim.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mixedflow {

std::vector<Vehicle> loadVehicles(const Config& cfg, uint64_t seed) {
    const int perLane = cfg.vehiclesPerLane();
    const int lanes = cfg.scenario.nLanes;
    const int total = perLane * lanes;
    const double ring = cfg.scenario.ringLengthM;
    const double len = cfg.idm.vehicleLengthM;
    const double s0 = cfg.idm.s0;

    std::vector<Vehicle> out;
    if (total == 0) return out;

    const double slack = ring - perLane * (len + s0);
    if (slack < 0) {
        std::ostringstream ss;
        ss << "scenario infeasible: " << perLane << " vehicles of " << (len + s0)
           << " m (incl. clearance) do not fit on a " << ring << " m lane";
        throw ConfigError(ss.str());
    }

    Rng rng(mixSeed(seed, kStreamLoad, 0));

    const int nAv = cfg.avCount();
    std::vector<VehicleClass> classes(total, VehicleClass::Human);
    std::fill(classes.begin(), classes.begin() + nAv, VehicleClass::Automated);
    rng.shuffle(classes);

    out.reserve(total);
    for (int lane = 0; lane < lanes; ++lane) {
        // split the slack into perLane pieces via sorted uniform cuts
        std::vector<double> cuts(perLane - 1);
        for (double& c : cuts) c = rng.uniform(0.0, slack);
        std::sort(cuts.begin(), cuts.end());
        std::vector<double> gaps(perLane);
        double prev = 0.0;
        for (int i = 0; i < perLane - 1; ++i) {
            gaps[i] = cuts[i] - prev;
            prev = cuts[i];
        }
        gaps[perLane - 1] = slack - prev;

        double pos = rng.uniform(0.0, ring);
        for (int k = 0; k < perLane; ++k) {
            Vehicle v{};
            v.id = lane * perLane + k;
            v.cls = classes[v.id];
            v.lane = lane;
            v.pos = std::fmod(pos, ring);
            v.speed = 0.0;
            const auto& range = v.cls == VehicleClass::Human ? cfg.idm.hvSpeedRange
                                                             : cfg.idm.avSpeedRange;
            v.maxSpeed = rng.uniform(range[0], range[1]);
            v.length = len;
            out.push_back(v);
            pos += len + s0 + gaps[k];
        }
    }
    return out;
}

Simulator::Simulator(const Config& cfg, uint64_t seed)
    : cfg_(cfg), ring_(cfg.scenario.ringLengthM), lanes_(cfg.scenario.nLanes),
      dt_(cfg.scenario.dtS), vehicles_(loadVehicles(cfg, seed)) {
    validateInitial();
}

Simulator::Simulator(const Config& cfg, std::vector<Vehicle> vehicles)
    : cfg_(cfg), ring_(cfg.scenario.ringLengthM), lanes_(cfg.scenario.nLanes),
      dt_(cfg.scenario.dtS), vehicles_(std::move(vehicles)) {
    validateInitial();
}

void Simulator::validateInitial() {
    for (size_t i = 0; i < vehicles_.size(); ++i) {
        const Vehicle& v = vehicles_[i];
        if (v.id != static_cast<int>(i))
            throw ConfigError("vehicle ids must equal their index");
        if (v.lane < 0 || v.lane >= lanes_) throw ConfigError("vehicle lane out of range");
        if (v.pos < 0 || v.pos >= ring_) throw ConfigError("vehicle position outside ring");
        if (v.speed < 0 || v.speed > v.maxSpeed) throw ConfigError("vehicle speed out of range");
        if (v.length <= 0 || v.length >= ring_) throw ConfigError("bad vehicle length");
        if (v.cls == VehicleClass::Automated) avIds_.push_back(v.id);
    }
    for (int lane = 0; lane < lanes_; ++lane) {
        std::vector<int> order;
        for (size_t i = 0; i < vehicles_.size(); ++i)
            if (vehicles_[i].lane == lane) order.push_back(static_cast<int>(i));
        if (order.size() < 2) continue;
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return vehicles_[a].pos < vehicles_[b].pos; });
        for (size_t k = 0; k < order.size(); ++k) {
            const Vehicle& f = vehicles_[order[k]];
            const Vehicle& l = vehicles_[order[(k + 1) % order.size()]];
            double forward = std::fmod(l.pos - f.pos + ring_, ring_);
            if (k + 1 == order.size()) forward = l.pos - f.pos + ring_; // wrap pair
            if (forward - l.length <= 0)
                throw ConfigError("initial state has overlapping vehicles");
        }
    }
}

int Simulator::countOf(VehicleClass cls) const {
    int n = 0;
    for (const auto& v : vehicles_)
        if (v.cls == cls) ++n;
    return n;
}

double Simulator::arcDelta(double a, double b) const {
    double d = std::fmod(b - a + ring_, ring_);
    if (d > ring_ / 2) d -= ring_;
    return d;
}

std::pair<Neighbor, Neighbor> Simulator::neighborsInLane(int index, int lane) const {
    if (index < 0 || index >= static_cast<int>(vehicles_.size()))
        throw DomainError("neighborsInLane: bad vehicle index");
    if (lane < 0 || lane >= lanes_) throw DomainError("neighborsInLane: bad lane");
    const Vehicle& v = vehicles_[index];
    int leadIdx = -1, follIdx = -1;
    double leadDist = 0, follDist = 0;
    bool anyOther = false;
    for (size_t j = 0; j < vehicles_.size(); ++j) {
        if (static_cast<int>(j) == index) continue;
        const Vehicle& o = vehicles_[j];
        if (o.lane != lane) continue;
        anyOther = true;
        double fwd = std::fmod(o.pos - v.pos + ring_, ring_);
        if (fwd == 0) fwd = ring_; // same arc position: treat as a full lap ahead
        double bwd = ring_ - fwd;
        if (leadIdx < 0 || fwd < leadDist) {
            leadIdx = static_cast<int>(j);
            leadDist = fwd;
        }
        if (follIdx < 0 || bwd < follDist) {
            follIdx = static_cast<int>(j);
            follDist = bwd;
        }
    }
    if (!anyOther) {
        if (vehicles_[index].lane == lane) {
            // alone in its own lane: it follows its own tail around the ring
            Neighbor self{index, ring_ - v.length};
            return {self, Neighbor{index, ring_ - v.length}};
        }
        return {Neighbor{}, Neighbor{}};
    }
    Neighbor lead{leadIdx, leadDist - vehicles_[leadIdx].length};
    Neighbor foll{follIdx, follDist - v.length};
    return {lead, foll};
}

std::vector<Sensed> Simulator::sense(int index, double radius) const {
    if (index < 0 || index >= static_cast<int>(vehicles_.size()))
        throw DomainError("sense: bad vehicle index");
    const Vehicle& v = vehicles_[index];
    std::vector<Sensed> out;
    for (size_t j = 0; j < vehicles_.size(); ++j) {
        if (static_cast<int>(j) == index) continue;
        const Vehicle& o = vehicles_[j];
        double d = arcDelta(v.pos, o.pos);
        if (std::fabs(d) > radius) continue;
        out.push_back(Sensed{static_cast<int>(j), d, o.lane - v.lane, o.speed, o.lane, o.cls});
    }
    std::sort(out.begin(), out.end(), [&](const Sensed& a, const Sensed& b) {
        double da = std::fabs(a.relPos), db = std::fabs(b.relPos);
        if (da != db) return da < db;
        return vehicles_[a.index].id < vehicles_[b.index].id;
    });
    return out;
}

double Simulator::accelerationFor(int index) const {
    const Vehicle& v = vehicles_[index];
    auto [lead, foll] = neighborsInLane(index, v.lane);
    (void)foll;
    if (!lead.valid()) return idmFreeAcceleration(cfg_.idm, v.speed, v.maxSpeed);
    const Vehicle& l = vehicles_[lead.index];
    return idmAcceleration(cfg_.idm, v.speed, v.maxSpeed, lead.gap, l.speed,
                           desiredHeadway(cfg_.idm, v.cls, l.cls));
}

bool Simulator::changeIsSafe(int index, int targetLane) const {
    const Vehicle& v = vehicles_[index];
    const double s0 = cfg_.idm.s0;
    auto [lead, foll] = neighborsInLane(index, targetLane);
    if (lead.valid() && lead.gap <= s0) return false;
    if (foll.valid() && foll.gap <= s0) return false;
    if (lead.valid()) {
        const Vehicle& l = vehicles_[lead.index];
        double aSelf = idmAcceleration(cfg_.idm, v.speed, v.maxSpeed, lead.gap, l.speed,
                                       desiredHeadway(cfg_.idm, v.cls, l.cls));
        if (aSelf < -cfg_.idm.bComf) return false;
    }
    if (foll.valid()) {
        const Vehicle& f = vehicles_[foll.index];
        double aFoll = idmAcceleration(cfg_.idm, f.speed, f.maxSpeed, foll.gap, v.speed,
                                       desiredHeadway(cfg_.idm, f.cls, v.cls));
        if (aFoll < -cfg_.idm.bComf) return false;
    }
    return true;
}

Action Simulator::rulePolicy(int index) const {
    const Vehicle& v = vehicles_[index];
    if (time_ - v.lastChangeTime < cfg_.laneChange.cooldownS) return Action::KeepLane;

    double aNow = accelerationFor(index);
    double bestGain = cfg_.laneChange.incentiveThreshold;
    int bestLane = -1;

    for (int target : {v.lane + 1, v.lane - 1}) {
        if (target < 0 || target >= lanes_) continue;
        if (!changeIsSafe(index, target)) continue;
        auto [lead, foll] = neighborsInLane(index, target);

        double aSelf;
        if (lead.valid()) {
            const Vehicle& l = vehicles_[lead.index];
            aSelf = idmAcceleration(cfg_.idm, v.speed, v.maxSpeed, lead.gap, l.speed,
                                    desiredHeadway(cfg_.idm, v.cls, l.cls));
        } else {
            aSelf = idmFreeAcceleration(cfg_.idm, v.speed, v.maxSpeed);
        }

        double follLoss = 0.0;
        if (foll.valid()) {
            const Vehicle& f = vehicles_[foll.index];
            double before;
            if (lead.valid()) {
                const Vehicle& l = vehicles_[lead.index];
                double gapBefore = std::fmod(l.pos - f.pos + ring_, ring_) - l.length;
                if (lead.index == foll.index) gapBefore = ring_ - f.length; // alone in lane
                before = idmAcceleration(cfg_.idm, f.speed, f.maxSpeed, gapBefore, l.speed,
                                         desiredHeadway(cfg_.idm, f.cls, l.cls));
            } else {
                before = idmFreeAcceleration(cfg_.idm, f.speed, f.maxSpeed);
            }
            double after = idmAcceleration(cfg_.idm, f.speed, f.maxSpeed, foll.gap, v.speed,
                                           desiredHeadway(cfg_.idm, f.cls, v.cls));
            follLoss = before - after;
        }

        double incentive = (aSelf - aNow) - cfg_.laneChange.politeness * follLoss;
        if (incentive > bestGain) {
            bestGain = incentive;
            bestLane = target;
        }
    }

    if (bestLane < 0) return Action::KeepLane;
    return bestLane > v.lane ? Action::ChangeLeft : Action::ChangeRight;
}

bool Simulator::tryLaneChange(int index, int targetLane, bool /*ruleBased*/, StepStats& stats) {
    Vehicle& v = vehicles_[index];
    int cls = static_cast<int>(v.cls);
    if (targetLane < 0 || targetLane >= lanes_ || targetLane == v.lane) {
        ++stats.suppressedChanges[cls];
        return false;
    }
    if (!changeIsSafe(index, targetLane)) {
        ++stats.suppressedChanges[cls];
        return false;
    }
    v.lane = targetLane;
    ++v.laneChangeCount;
    v.lastChangeTime = time_;
    v.changedThisTick = true;
    ++stats.executedChanges[cls];
    return true;
}

StepStats Simulator::step(const std::map<int, Action>& avActions) {
    StepStats stats;
    for (auto& v : vehicles_) v.changedThisTick = false;

    for (const auto& [id, action] : avActions) {
        if (id < 0 || id >= static_cast<int>(vehicles_.size()))
            throw DomainError("injected action for unknown vehicle id");
        if (vehicles_[id].cls != VehicleClass::Automated)
            throw DomainError("injected action for a non-automated vehicle");
        (void)action;
    }

    // phase 1: lane changes, ascending id, each validated against current state
    for (size_t i = 0; i < vehicles_.size(); ++i) {
        Vehicle& v = vehicles_[i];
        int target = v.lane;
        bool ruleBased;
        if (v.cls == VehicleClass::Automated) {
            auto it = avActions.find(v.id);
            Action a = it == avActions.end() ? Action::KeepLane : it->second;
            ruleBased = false;
            if (a == Action::ChangeLeft)
                target = v.lane + 1;
            else if (a == Action::ChangeRight)
                target = v.lane - 1;
        } else {
            Action a = rulePolicy(static_cast<int>(i));
            ruleBased = true;
            if (a == Action::ChangeLeft)
                target = v.lane + 1;
            else if (a == Action::ChangeRight)
                target = v.lane - 1;
        }
        if (target != v.lane) tryLaneChange(static_cast<int>(i), target, ruleBased, stats);
    }

    // phase 2: accelerations in the post-change configuration
    std::vector<double> accel(vehicles_.size());
    for (size_t i = 0; i < vehicles_.size(); ++i) accel[i] = accelerationFor(static_cast<int>(i));

    // phase 3: ballistic advance with pass-through detection
    std::vector<double> newSpeed(vehicles_.size()), disp(vehicles_.size());
    for (size_t i = 0; i < vehicles_.size(); ++i) {
        const Vehicle& v = vehicles_[i];
        newSpeed[i] = std::clamp(v.speed + accel[i] * dt_, 0.0, v.maxSpeed);
        disp[i] = newSpeed[i] * dt_;
    }

    for (int lane = 0; lane < lanes_; ++lane) {
        std::vector<int> order;
        for (size_t i = 0; i < vehicles_.size(); ++i)
            if (vehicles_[i].lane == lane) order.push_back(static_cast<int>(i));
        if (order.size() < 2) continue;
        std::sort(order.begin(), order.end(),
                  [&](int a, int b) { return vehicles_[a].pos < vehicles_[b].pos; });
        for (size_t k = 0; k < order.size(); ++k) {
            int fi = order[k];
            int li = order[(k + 1) % order.size()];
            const Vehicle& f = vehicles_[fi];
            const Vehicle& l = vehicles_[li];
            double forward = l.pos - f.pos;
            if (k + 1 == order.size()) forward += ring_;
            double gapOld = forward - l.length;
            double gapNew = gapOld + disp[li] - disp[fi];
            if (gapOld <= 0 || gapNew <= 0) reportCollision(fi, li, std::min(gapOld, gapNew));
        }
    }

    for (size_t i = 0; i < vehicles_.size(); ++i) {
        Vehicle& v = vehicles_[i];
        v.speed = newSpeed[i];
        v.pos = std::fmod(v.pos + disp[i], ring_);
    }
    time_ += dt_;
    return stats;
}

void Simulator::reportCollision(int follower, int leader, double gap) const {
    const Vehicle& f = vehicles_[follower];
    const Vehicle& l = vehicles_[leader];
    std::ostringstream ss;
    ss << "collision at t=" << time_ << "s: vehicle " << f.id << " (lane " << f.lane << ", pos "
       << f.pos << ", speed " << f.speed << ") into vehicle " << l.id << " (pos " << l.pos
       << ", speed " << l.speed << "), gap " << gap;
    throw CollisionError(ss.str(), f.id, l.id, time_);
}

} // namespace mixedflow
