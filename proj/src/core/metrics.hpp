#pragma once

#include <optional>
#include <span>
#include <vector>

#include "core/edie.hpp"
#include "core/sim.hpp"

namespace mixedflow {

// --- settling (network equilibrium) detection --------------------------------

struct SettleCriteria {
    double speedStdMax = 0.2;
    double spacingStdMax = 0.35;
    double windowS = 20.0;
};

// Both series are standardized by shifting to mean 1 (x - mean(x) + 1), which
// keeps the rule invariant under constant offsets; a window qualifies when the
// rolling standard deviations of both standardized series drop below the
// thresholds. Returns the end time of the earliest qualifying window.
// Series are sampled every `sampleDt` starting at `tStart`. Throws DomainError
// when the series cannot hold one full window.
std::optional<double> detectSettling(const std::vector<double>& meanSpeed,
                                     const std::vector<double>& meanSpacing, double tStart,
                                     double sampleDt, const SettleCriteria& crit);

// --- Pareto check -------------------------------------------------------------

struct ParetoVerdict {
    double tau;
    bool class1Pass;
    bool class2Pass;
    bool scenarioPass;
};

// u >= baseline - tau, per class; the scenario passes when both do.
ParetoVerdict paretoCheck(double u1, double u2, double base1, double base2, double tau);

// --- platoons -----------------------------------------------------------------

struct PlatoonPolicy {
    double headwayS = 1.0;
    double bufferM = 1.0;
};

// Maximal runs (per lane, wrap-aware) of consecutive automated vehicles whose
// bumper gap is at most follower_speed*headway + buffer; runs of size >= 2.
// Returns platoons as vectors of vehicle ids, follower first.
std::vector<std::vector<int>> findPlatoons(const std::vector<Vehicle>& vehicles,
                                           double ringLength, int nLanes,
                                           const PlatoonPolicy& policy);

struct PlatoonSummary {
    long avTotal;
    long avInPlatoons;
    long platoonCount;
    double benefit; // (avInPlatoons - platoonCount) / avTotal; 0 when no AVs
};

PlatoonSummary platoonBenefit(const std::vector<Vehicle>& vehicles, double ringLength,
                              int nLanes, const PlatoonPolicy& policy);

// --- Hellinger distance ---------------------------------------------------------

// Discrete distributions of equal support size; each must sum to 1 within
// 1e-9 and contain no negative mass. Result lies in [0, 1].
double hellinger(std::span<const double> p, std::span<const double> q);

// Row-major lanes x cells grid; reduces to the 1-D case when lanes == 1.
double hellinger2d(const std::vector<std::vector<double>>& p,
                   const std::vector<std::vector<double>>& q);

// Spatial occupancy of one class over lane x arc-cell bins, as proportions.
// hasVehicles=false (all-zero) when the class is absent.
struct SpatialDistribution {
    std::vector<std::vector<double>> cells; // [lane][cell]
    bool hasVehicles;
};

SpatialDistribution spatialDistribution(const std::vector<Vehicle>& vehicles, VehicleClass cls,
                                        double ringLength, int nLanes, int cellsPerLane);

// --- misc ---------------------------------------------------------------------

// Lane changes per vehicle of the class over [tExclusiveFrom, end of log].
double laneChangeFrequency(const TrajectoryLog& log, int classId, double tExclusiveFrom);

struct FlowPoint {
    double rhoTotal; // veh/km per lane
    double qTotal;   // veh/h per lane
};

// One point per (region, window): class densities/flows summed.
std::vector<FlowPoint> fundamentalDiagramPoints(const std::vector<EdieRecord>& records);

// --- small statistics ----------------------------------------------------------

struct Regression {
    double slope;
    double intercept;
    double r;      // Pearson correlation
    double pValue; // two-sided, t distribution with n-2 df
    long n;
};

// Throws DomainError for n < 3 or degenerate variance.
Regression olsFit(std::span<const double> x, std::span<const double> y);

double mean(std::span<const double> v);
double populationStd(std::span<const double> v);

// Regularized incomplete beta I_x(a, b), used for the t-distribution tail.
double incompleteBeta(double a, double b, double x);

} // namespace mixedflow
