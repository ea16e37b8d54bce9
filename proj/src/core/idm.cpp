#include "core/idm.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mixedflow {

double desiredHeadway(const Config::Idm& p, VehicleClass follower, VehicleClass leader) {
    if (follower == VehicleClass::Human)
        return leader == VehicleClass::Human ? p.headwayHH : p.headwayHA;
    return leader == VehicleClass::Human ? p.headwayAH : p.headwayAA;
}

double idmAcceleration(const Config::Idm& p, double speed, double maxSpeed, double gap,
                       double leaderSpeed, double headway) {
    if (!(gap > 0.0)) {
        std::ostringstream ss;
        ss << "non-positive gap " << gap << " m at speed " << speed << " m/s";
        throw CollisionError(ss.str());
    }
    double approach = speed - leaderSpeed;
    double sStar = p.s0 + speed * headway + speed * approach / (2.0 * std::sqrt(p.aMax * p.bComf));
    double ratio = sStar / gap;
    double a = p.aMax * (1.0 - std::pow(speed / maxSpeed, p.delta) - ratio * ratio);
    return std::clamp(a, -p.bEmergency, p.aMax);
}

double idmFreeAcceleration(const Config::Idm& p, double speed, double maxSpeed) {
    double a = p.aMax * (1.0 - std::pow(speed / maxSpeed, p.delta));
    return std::clamp(a, -p.bEmergency, p.aMax);
}

double idmEquilibriumSpacing(const Config::Idm& p, double speed, double maxSpeed, double headway) {
    if (speed < 0) throw DomainError("equilibrium spacing needs speed >= 0");
    if (speed >= maxSpeed)
        throw DomainError("no finite equilibrium spacing at or above the free-flow speed");
    double free = 1.0 - std::pow(speed / maxSpeed, p.delta);
    return (p.s0 + speed * headway) / std::sqrt(free);
}

} // namespace mixedflow
