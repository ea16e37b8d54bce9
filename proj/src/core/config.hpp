#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/util.hpp"

namespace mixedflow {

// Full run configuration. Defaults describe the full-scale setup; the "desk"
// preset shrinks it to something a laptop finishes in minutes.
struct Config {
    struct Scenario {
        double densityVpmLane = 40.0;  // vehicles per mile per lane
        double avPenetration = 0.5;    // fraction of fleet that is automated
        double ringLengthM = 1000.0;
        int nLanes = 3;
        double dtS = 0.5;
        double loadingTimeS = 100.0;
        double sensingRadiusM = 100.0;
    } scenario;

    struct Idm {
        double aMax = 2.6;          // m/s^2
        double bComf = 4.5;         // comfortable braking, m/s^2
        double bEmergency = 9.0;    // physical braking cap, m/s^2
        double s0 = 1.0;            // standstill clearance, m
        double delta = 4.0;         // free-flow exponent
        double headwayHH = 1.5;     // desired time headway by follower/leader class, s
        double headwayHA = 1.5;
        double headwayAA = 1.0;
        double headwayAH = 1.25;
        std::array<double, 2> hvSpeedRange = {17.5, 25.0}; // max-speed draw, m/s
        std::array<double, 2> avSpeedRange = {21.0, 30.0};
        double vehicleLengthM = 5.0;
    } idm;

    struct LaneChange {
        double politeness = 0.3;
        double incentiveThreshold = 0.1; // m/s^2
        double cooldownS = 3.0;          // rule-based drivers only
    } laneChange;

    struct Reward {
        double wSpeed = 1.0;
        double wLaneChange = 1.0;
        double collisionPenalty = 100.0;
    } reward;

    struct Dqn {
        std::vector<int> hidden = {256, 128, 64};
        int stateSize = 200;
        int maxNeighbors = 28;
        double gamma = 0.99;
        int batchSize = 64;
        int bufferCapacity = 100000;
        int targetSyncSteps = 1000;
        double decisionIntervalS = 1.0;
        int trainEveryDecisions = 2; // gradient step every k-th decision round
        double lr0 = 1e-3;
        double lrDecay = 0.99;
        double epsStart = 1.0;
        double epsEnd = 0.01;
        double epsDecayEpisodes = 300.0;
    } dqn;

    struct Training {
        int episodes = 2000;
        int warmupEpisodes = 30;
        double episodeLengthS = 1200.0; // includes loading time
        int smoothWindow = 20;
    } training;

    struct Evaluation {
        int nEpisodes = 10;
        double episodeLengthS = 1200.0;
        int logEvery = 1; // trajectory decimation in ticks
    } evaluation;

    struct Game {
        double a1 = 1.0; // road-share scaling, class 1 (human)
        double a2 = 1.0;
        double b1 = 0.8; // class 2 (automated)
        double b2 = 1.0;
        double w1 = 0.5; // per-class weights in the lambda loss
        double w2 = 0.5;
        double lambda = 0.6484; // surplus split when not estimated
        double hvNominalUmax = 21.25; // midpoint of the draw range
        double avNominalUmax = 25.5;
    } game;

    struct Metrics {
        double edieDxM = 250.0;
        double edieDtS = 8.0;
        double neSpeedStd = 0.2;
        double neSpacingStd = 0.35;
        double neWindowS = 20.0;
        std::vector<double> paretoTaus = {0.0, 0.01, 0.04};
        double paretoWindowS = 600.0; // trailing window for settled speeds
        double platoonHeadwayS = 1.0;
        double platoonBufferM = 1.0;
        int spatialCellsPerLane = 10; // 0 = derive from spatialCellM instead
        double spatialCellM = 10.0;
        double spatialA1 = 0.5; // weight on platoon benefit in M_t
        double spatialA2 = 1.0; // weight on Hellinger distance in M_t
    } metrics;

    struct Matrix {
        std::vector<double> densities = {25.0, 40.0, 55.0, 70.0};
        std::vector<double> penetrations = {0.25, 0.5, 0.75};
    } matrix;

    std::string preset = "full";

    // --- plumbing ---
    static Config fromJsonText(const std::string& text);
    static Config fromFile(const std::string& path);
    std::string toJsonText() const;

    // dotted-path single-value override, e.g. "scenario.density_vpm_lane=55"
    void setPath(const std::string& key, const std::string& value);
    void applyPreset(const std::string& name);
    void validate() const;

    // --- derived quantities ---
    double densityVehPerM() const;    // per lane, SI
    int vehiclesPerLane() const;
    int totalVehicles() const;
    int avCount() const;
    double hvNominalDensityVpkm() const; // class densities at nominal split, veh/km (all lanes pooled per lane)
    double avNominalDensityVpkm() const;

    std::string scenarioSlug() const; // e.g. d40_p50
    uint64_t scenarioHash() const;    // fingerprint of everything affecting dynamics

    std::vector<Config> enumerateMatrix() const;
};

} // namespace mixedflow
