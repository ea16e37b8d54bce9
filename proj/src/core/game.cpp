#include "core/game.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mixedflow {

namespace {
constexpr double kBracketPad = 1e-6;
constexpr double kSurplusEps = 1e-12;
} // namespace

double ClassNominal::jamDensity() const { return 1000.0 / (s0 + vehicleLength); }

double ClassNominal::densityAtSpeed(double u) const {
    if (u < 0 || u >= maxSpeed) throw DomainError("densityAtSpeed: speed outside [0, maxSpeed)");
    double free = 1.0 - std::pow(u / maxSpeed, delta);
    double spacing = (s0 + u * headway) / std::sqrt(free);
    return 1000.0 / (spacing + vehicleLength);
}

double ClassNominal::speedAtDensity(double rho) const {
    if (rho < 0) throw DomainError("speedAtDensity: negative density");
    if (rho > jamDensity() + 1e-9) {
        std::ostringstream ss;
        ss << "density " << rho << " veh/km exceeds jam density " << jamDensity();
        throw DomainError(ss.str());
    }
    if (rho <= 0) return maxSpeed;
    if (rho >= jamDensity()) return 0.0;
    // densityAtSpeed is strictly decreasing on [0, maxSpeed)
    double lo = 0.0, hi = maxSpeed;
    for (int i = 0; i < 200 && hi - lo > 1e-14 * maxSpeed; ++i) {
        double mid = 0.5 * (lo + hi);
        double d = (mid >= maxSpeed) ? 0.0 : densityAtSpeed(mid);
        if (d > rho)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::pair<ClassNominal, ClassNominal> nominalClasses(const Config& cfg) {
    ClassNominal hv{cfg.game.hvNominalUmax, cfg.idm.headwayHH, cfg.idm.s0, cfg.idm.delta,
                    cfg.idm.vehicleLengthM};
    ClassNominal av{cfg.game.avNominalUmax, cfg.idm.headwayAA, cfg.idm.s0, cfg.idm.delta,
                    cfg.idm.vehicleLengthM};
    return {hv, av};
}

ScalingParams scalingsFrom(const Config& cfg) {
    return ScalingParams{cfg.game.a1, cfg.game.a2, cfg.game.b1, cfg.game.b2};
}

double solveOnePipeSpeed(double rho1, double rho2, const ClassNominal& n1,
                         const ClassNominal& n2, const ScalingParams& sc) {
    if (rho1 < 0 || rho2 < 0) throw DomainError("one-pipe solve: negative density");
    double total = rho1 + rho2;
    if (total <= 0) throw DomainError("one-pipe solve: empty road");
    // Single-class corners reduce algebraically.
    if (rho2 == 0) return n1.speedAtDensity(rho1 / sc.a1);
    if (rho1 == 0) return n2.speedAtDensity(rho2 / sc.b2);

    double demand1 = rho1 / sc.a1 + rho2 / sc.a2;
    double demand2 = rho1 / sc.b1 + rho2 / sc.b2;
    auto residual = [&](double u) {
        return (rho1 / n1.densityAtSpeed(u) * demand1 + rho2 / n2.densityAtSpeed(u) * demand2) /
                   total -
               1.0;
    };

    double lo = kBracketPad;
    double hi = std::min(n1.maxSpeed, n2.maxSpeed) - kBracketPad;
    if (hi <= lo) throw DomainError("one-pipe solve: degenerate speed bracket");

    // The residual should increase with speed; verify instead of trusting it.
    double prev = residual(lo);
    for (int k = 1; k <= 8; ++k) {
        double u = lo + (hi - lo) * k / 8.0;
        double r = residual(u);
        if (r < prev - 1e-9) throw InvariantError("one-pipe residual is not monotone");
        prev = r;
    }

    double fLo = residual(lo);
    double fHi = residual(hi);
    if (fLo > 0.0) {
        std::ostringstream ss;
        ss << "no equilibrium: demand exceeds capacity at rho1=" << rho1 << ", rho2=" << rho2;
        throw DomainError(ss.str());
    }
    if (fHi < 0.0) throw DomainError("no equilibrium: residual stays negative in bracket");

    for (int i = 0; i < 200 && hi - lo > 1e-14 * std::max(1.0, hi); ++i) {
        double mid = 0.5 * (lo + hi);
        if (residual(mid) < 0.0)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

std::pair<double, double> minRoadShares(double rho1, double rho2, double uStar,
                                        const ClassNominal& n1, const ClassNominal& n2) {
    double p1 = rho1 > 0 ? rho1 / n1.densityAtSpeed(uStar) : 0.0;
    double p2 = rho2 > 0 ? rho2 / n2.densityAtSpeed(uStar) : 0.0;
    return {p1, p2};
}

std::pair<double, double> allocateSurplus(double p1Min, double p2Min, double lambda) {
    if (lambda < 0 || lambda > 1) throw DomainError("lambda must lie in [0,1]");
    double s = 1.0 - p1Min - p2Min;
    if (s < 0) throw DomainError("allocateSurplus called with negative surplus");
    double p1 = p1Min + lambda * s;
    return {p1, 1.0 - p1};
}

std::pair<double, double> twoPipeSpeeds(double rho1, double rho2, double p1, double p2,
                                        const ClassNominal& n1, const ClassNominal& n2) {
    auto pipeSpeed = [](double rho, double p, const ClassNominal& n) {
        if (rho <= 0) return n.maxSpeed;
        if (p <= 0) throw DomainError("two-pipe speed: occupied pipe has zero share");
        return n.speedAtDensity(rho / p);
    };
    return {pipeSpeed(rho1, p1, n1), pipeSpeed(rho2, p2, n2)};
}

EquilibriumSolution solveEquilibrium(double rho1, double rho2, double lambda,
                                     const ClassNominal& n1, const ClassNominal& n2,
                                     const ScalingParams& sc) {
    EquilibriumSolution out{};
    out.lambda = lambda;
    out.uStar = solveOnePipeSpeed(rho1, rho2, n1, n2, sc);
    auto [p1Min, p2Min] = minRoadShares(rho1, rho2, out.uStar, n1, n2);
    out.p1Min = p1Min;
    out.p2Min = p2Min;
    out.surplus = 1.0 - p1Min - p2Min;
    if (out.surplus >= 0.0) {
        out.regime = Regime::TwoPipe;
        auto [p1, p2] = allocateSurplus(p1Min, p2Min, lambda);
        out.p1 = p1;
        out.p2 = p2;
        auto [u1, u2] = twoPipeSpeeds(rho1, rho2, p1, p2, n1, n2);
        out.u1 = u1;
        out.u2 = u2;
    } else {
        out.regime = Regime::OnePipe;
        out.p1 = p1Min;
        out.p2 = p2Min;
        out.u1 = out.uStar;
        out.u2 = out.uStar;
    }
    return out;
}

SpeedGrid buildSpeedGrid(const std::vector<SpeedSample>& samples) {
    SpeedGrid grid;
    for (const auto& s : samples) {
        int b1 = static_cast<int>(std::llround(s.rho1));
        int b2 = static_cast<int>(std::llround(s.rho2));
        if (b1 < 1 || b2 < 1) continue;
        GridCell& cell = grid[{b1, b2}];
        if (s.has1) {
            cell.sumU1 += s.u1;
            ++cell.n1;
        }
        if (s.has2) {
            cell.sumU2 += s.u2;
            ++cell.n2;
        }
    }
    // drop cells that ended up with no usable speed at all
    for (auto it = grid.begin(); it != grid.end();) {
        if (!it->second.has1() && !it->second.has2())
            it = grid.erase(it);
        else
            ++it;
    }
    return grid;
}

namespace {

struct CellModel {
    int rho1, rho2;
    double uStar, p1Min, p2Min, surplus;
    const GridCell* data;
};

void predictFromModel(const CellModel& c, double lambda, const ClassNominal& n1,
                      const ClassNominal& n2, double& u1, double& u2) {
    if (c.surplus >= 0.0) {
        double p1 = c.p1Min + lambda * c.surplus;
        double p2 = 1.0 - p1;
        auto [a, b] = twoPipeSpeeds(c.rho1, c.rho2, p1, p2, n1, n2);
        u1 = a;
        u2 = b;
    } else {
        u1 = c.uStar;
        u2 = c.uStar;
    }
}

} // namespace

std::pair<double, double> predictedSpeeds(double rho1, double rho2, double lambda,
                                          const ClassNominal& n1, const ClassNominal& n2,
                                          const ScalingParams& sc) {
    EquilibriumSolution eq = solveEquilibrium(rho1, rho2, lambda, n1, n2, sc);
    return {eq.u1, eq.u2};
}

LambdaEstimate estimateLambda(const SpeedGrid& grid, const ClassNominal& n1,
                              const ClassNominal& n2, const ScalingParams& sc, double w1,
                              double w2) {
    if (grid.empty()) throw DomainError("lambda estimation: empty speed grid");

    std::vector<CellModel> cells;
    long skipped = 0;
    bool identifiable = false;
    for (const auto& [key, cell] : grid) {
        CellModel c{};
        c.rho1 = key.first;
        c.rho2 = key.second;
        c.data = &cell;
        try {
            c.uStar = solveOnePipeSpeed(c.rho1, c.rho2, n1, n2, sc);
        } catch (const DomainError&) {
            ++skipped;
            continue;
        }
        auto [p1Min, p2Min] = minRoadShares(c.rho1, c.rho2, c.uStar, n1, n2);
        c.p1Min = p1Min;
        c.p2Min = p2Min;
        c.surplus = 1.0 - p1Min - p2Min;
        if (c.surplus > kSurplusEps) identifiable = true;
        cells.push_back(c);
    }
    if (cells.empty()) throw DomainError("lambda estimation: no cell has an equilibrium");
    if (!identifiable)
        throw DomainError("lambda estimation: loss does not depend on lambda (no two-pipe cell)");

    auto loss = [&](double lambda) {
        double total = 0.0;
        for (const auto& c : cells) {
            double u1, u2;
            predictFromModel(c, lambda, n1, n2, u1, u2);
            double err = 0.0;
            if (c.data->has1()) err += w1 * std::fabs(c.data->meanU1() - u1);
            if (c.data->has2()) err += w2 * std::fabs(c.data->meanU2() - u2);
            total += err * err;
        }
        return total;
    };

    LambdaEstimate out{};
    double best = 0.0, bestLoss = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= 50; ++k) {
        double lam = k * 0.02;
        double l = loss(lam);
        out.lossCurve.emplace_back(lam, l);
        if (l < bestLoss) {
            bestLoss = l;
            best = lam;
        }
    }
    double lo = std::max(0.0, best - 0.02);
    double hi = std::min(1.0, best + 0.02);
    for (double lam = lo; lam <= hi + 1e-12; lam += 1e-4) {
        double l = loss(lam);
        if (l < bestLoss - 1e-15) {
            bestLoss = l;
            best = lam;
        }
    }

    out.lambda = best;
    out.loss = bestLoss;
    out.cellsUsed = static_cast<long>(cells.size());
    out.cellsSkipped = skipped;
    double sum1 = 0, sum2 = 0, sumW = 0;
    long m1 = 0, m2 = 0, mW = 0;
    for (const auto& c : cells) {
        double u1, u2;
        predictFromModel(c, best, n1, n2, u1, u2);
        double werr = 0.0;
        if (c.data->has1()) {
            sum1 += std::fabs(c.data->meanU1() - u1);
            ++m1;
            werr += w1 * std::fabs(c.data->meanU1() - u1);
        }
        if (c.data->has2()) {
            sum2 += std::fabs(c.data->meanU2() - u2);
            ++m2;
            werr += w2 * std::fabs(c.data->meanU2() - u2);
        }
        sumW += werr;
        ++mW;
    }
    out.mae1 = m1 ? sum1 / m1 : 0.0;
    out.mae2 = m2 ? sum2 / m2 : 0.0;
    out.maeWeighted = mW ? sumW / mW : 0.0;
    return out;
}

} // namespace mixedflow
