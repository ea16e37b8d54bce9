#pragma once

#include <map>
#include <utility>
#include <vector>

#include "core/config.hpp"
#include "core/idm.hpp"

namespace mixedflow {

// Equilibrium speed-density relation for one vehicle class, derived from the
// car-following model with that class's own-class headway and a nominal free
// speed. Densities are per lane, veh/km.
struct ClassNominal {
    double maxSpeed;
    double headway;
    double s0;
    double delta;
    double vehicleLength;

    double jamDensity() const; // veh/km at standstill
    // density sustaining steady speed u (u in [0, maxSpeed)); closed form
    double densityAtSpeed(double u) const;
    // inverse of the above by bisection; rho=0 -> maxSpeed, rho>jam -> error
    double speedAtDensity(double rho) const;
};

// class 1 = human-driven, class 2 = automated
std::pair<ClassNominal, ClassNominal> nominalClasses(const Config& cfg);

struct ScalingParams {
    double a1 = 1.0, a2 = 1.0; // class-1 pipe scalings
    double b1 = 0.8, b2 = 1.0; // class-2 pipe scalings
};
ScalingParams scalingsFrom(const Config& cfg);

enum class Regime { OnePipe, TwoPipe };

struct EquilibriumSolution {
    Regime regime;
    double uStar;   // mixed one-pipe speed
    double p1Min;   // minimum road share demanded by class 1
    double p2Min;
    double surplus; // 1 - p1Min - p2Min (negative -> one-pipe regime)
    double lambda;  // surplus share granted to class 1
    double p1, p2;  // allocated shares (two-pipe regime; min shares otherwise)
    double u1, u2;  // class payoffs: pipe speeds, or uStar when mixed
};

// Mixed-traffic speed from the one-pipe balance equation. Monotonicity of the
// residual is checked, not assumed. Throws DomainError when no root lies in
// (0, min free speed), e.g. at super-jam densities.
double solveOnePipeSpeed(double rho1, double rho2, const ClassNominal& n1,
                         const ClassNominal& n2, const ScalingParams& sc);

std::pair<double, double> minRoadShares(double rho1, double rho2, double uStar,
                                        const ClassNominal& n1, const ClassNominal& n2);

// p1 = p1Min + lambda * surplus, p2 takes the rest of the road exactly.
std::pair<double, double> allocateSurplus(double p1Min, double p2Min, double lambda);

// Segregated-pipe class speeds given shares of the road.
std::pair<double, double> twoPipeSpeeds(double rho1, double rho2, double p1, double p2,
                                        const ClassNominal& n1, const ClassNominal& n2);

EquilibriumSolution solveEquilibrium(double rho1, double rho2, double lambda,
                                     const ClassNominal& n1, const ClassNominal& n2,
                                     const ScalingParams& sc);

// --- empirical speed grid + lambda estimation -------------------------------

// One measurement: per-lane class densities (veh/km) with class mean speeds.
struct SpeedSample {
    double rho1 = 0, rho2 = 0;
    double u1 = 0, u2 = 0;
    bool has1 = false, has2 = false;
};

struct GridCell {
    double sumU1 = 0, sumU2 = 0;
    long n1 = 0, n2 = 0;
    bool has1() const { return n1 > 0; }
    bool has2() const { return n2 > 0; }
    double meanU1() const { return sumU1 / n1; }
    double meanU2() const { return sumU2 / n2; }
};

// Cells keyed by integer-rounded (rho1, rho2); bins where either class rounds
// to zero are dropped (the grid covers genuinely mixed conditions).
using SpeedGrid = std::map<std::pair<int, int>, GridCell>;

SpeedGrid buildSpeedGrid(const std::vector<SpeedSample>& samples);

struct LambdaEstimate {
    double lambda;
    double loss;
    double mae1, mae2;  // per-class mean absolute speed error at the optimum
    double maeWeighted;
    long cellsUsed;
    long cellsSkipped;                          // no equilibrium at that density
    std::vector<std::pair<double, double>> lossCurve; // coarse grid (lambda, loss)
};

// Fits the surplus split by minimizing the squared weighted speed error over
// grid cells. Coarse scan at 0.02 plus local refinement to 1e-4. Throws
// DomainError when the loss does not depend on lambda (no two-pipe cell).
LambdaEstimate estimateLambda(const SpeedGrid& grid, const ClassNominal& n1,
                              const ClassNominal& n2, const ScalingParams& sc, double w1,
                              double w2);

// Model prediction for one cell at a given lambda (used by reporting).
std::pair<double, double> predictedSpeeds(double rho1, double rho2, double lambda,
                                          const ClassNominal& n1, const ClassNominal& n2,
                                          const ScalingParams& sc);

} // namespace mixedflow
