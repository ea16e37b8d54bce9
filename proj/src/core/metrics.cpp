#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mixedflow {

double mean(std::span<const double> v) {
    if (v.empty()) throw DomainError("mean of empty series");
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

double populationStd(std::span<const double> v) {
    double m = mean(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size()));
}

std::optional<double> detectSettling(const std::vector<double>& meanSpeed,
                                     const std::vector<double>& meanSpacing, double tStart,
                                     double sampleDt, const SettleCriteria& crit) {
    if (meanSpeed.size() != meanSpacing.size())
        throw DomainError("settling detection: series lengths differ");
    if (sampleDt <= 0) throw DomainError("settling detection: bad sample interval");
    size_t window = static_cast<size_t>(std::floor(crit.windowS / sampleDt + 1e-9)) + 1;
    if (window < 2) throw DomainError("settling detection: window shorter than sampling");
    if (meanSpeed.size() < window)
        throw DomainError("settling detection: series shorter than the hold window");

    auto standardize = [](const std::vector<double>& v) {
        double m = mean(v);
        std::vector<double> out(v.size());
        for (size_t i = 0; i < v.size(); ++i) out[i] = v[i] - m + 1.0;
        return out;
    };
    std::vector<double> su = standardize(meanSpeed);
    std::vector<double> ss = standardize(meanSpacing);

    for (size_t end = window - 1; end < su.size(); ++end) {
        std::span<const double> wu(su.data() + end + 1 - window, window);
        std::span<const double> ws(ss.data() + end + 1 - window, window);
        if (populationStd(wu) < crit.speedStdMax && populationStd(ws) < crit.spacingStdMax)
            return tStart + static_cast<double>(end) * sampleDt;
    }
    return std::nullopt;
}

ParetoVerdict paretoCheck(double u1, double u2, double base1, double base2, double tau) {
    ParetoVerdict v{};
    v.tau = tau;
    v.class1Pass = u1 >= base1 - tau;
    v.class2Pass = u2 >= base2 - tau;
    v.scenarioPass = v.class1Pass && v.class2Pass;
    return v;
}

std::vector<std::vector<int>> findPlatoons(const std::vector<Vehicle>& vehicles,
                                           double ringLength, int nLanes,
                                           const PlatoonPolicy& policy) {
    std::vector<std::vector<int>> platoons;
    for (int lane = 0; lane < nLanes; ++lane) {
        std::vector<const Vehicle*> inLane;
        for (const auto& v : vehicles)
            if (v.lane == lane) inLane.push_back(&v);
        size_t m = inLane.size();
        if (m < 2) continue;
        std::sort(inLane.begin(), inLane.end(),
                  [](const Vehicle* a, const Vehicle* b) { return a->pos < b->pos; });

        // edge k: follower k is platooned with leader k+1 (mod m)
        std::vector<bool> edge(m, false);
        for (size_t k = 0; k < m; ++k) {
            const Vehicle* f = inLane[k];
            const Vehicle* l = inLane[(k + 1) % m];
            if (f->cls != VehicleClass::Automated || l->cls != VehicleClass::Automated) continue;
            double forward = l->pos - f->pos;
            if (k + 1 == m) forward += ringLength;
            double gap = forward - l->length;
            edge[k] = gap <= f->speed * policy.headwayS + policy.bufferM;
        }

        bool allLinked = std::all_of(edge.begin(), edge.end(), [](bool b) { return b; });
        if (allLinked) {
            std::vector<int> ids;
            for (const Vehicle* v : inLane) ids.push_back(v->id);
            platoons.push_back(std::move(ids));
            continue;
        }
        for (size_t s = 0; s < m; ++s) {
            if (!edge[s] || edge[(s + m - 1) % m]) continue; // not a run start
            std::vector<int> ids{inLane[s]->id};
            size_t k = s;
            while (edge[k]) {
                k = (k + 1) % m;
                ids.push_back(inLane[k]->id);
            }
            platoons.push_back(std::move(ids));
        }
    }
    return platoons;
}

PlatoonSummary platoonBenefit(const std::vector<Vehicle>& vehicles, double ringLength,
                              int nLanes, const PlatoonPolicy& policy) {
    PlatoonSummary out{};
    for (const auto& v : vehicles)
        if (v.cls == VehicleClass::Automated) ++out.avTotal;
    auto platoons = findPlatoons(vehicles, ringLength, nLanes, policy);
    out.platoonCount = static_cast<long>(platoons.size());
    for (const auto& p : platoons) out.avInPlatoons += static_cast<long>(p.size());
    out.benefit = out.avTotal > 0
                      ? static_cast<double>(out.avInPlatoons - out.platoonCount) / out.avTotal
                      : 0.0;
    return out;
}

double hellinger(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw DomainError("hellinger: support sizes differ");
    if (p.empty()) throw DomainError("hellinger: empty distributions");
    double sp = 0, sq = 0;
    for (double x : p) {
        if (x < 0) throw DomainError("hellinger: negative mass");
        sp += x;
    }
    for (double x : q) {
        if (x < 0) throw DomainError("hellinger: negative mass");
        sq += x;
    }
    if (std::fabs(sp - 1.0) > 1e-9 || std::fabs(sq - 1.0) > 1e-9)
        throw DomainError("hellinger: distributions must sum to 1");
    double acc = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        double d = std::sqrt(p[i]) - std::sqrt(q[i]);
        acc += d * d;
    }
    return std::clamp(std::sqrt(0.5 * acc), 0.0, 1.0);
}

double hellinger2d(const std::vector<std::vector<double>>& p,
                   const std::vector<std::vector<double>>& q) {
    if (p.size() != q.size()) throw DomainError("hellinger2d: row counts differ");
    std::vector<double> fp, fq;
    for (size_t r = 0; r < p.size(); ++r) {
        if (p[r].size() != q[r].size()) throw DomainError("hellinger2d: row lengths differ");
        fp.insert(fp.end(), p[r].begin(), p[r].end());
        fq.insert(fq.end(), q[r].begin(), q[r].end());
    }
    return hellinger(fp, fq);
}

SpatialDistribution spatialDistribution(const std::vector<Vehicle>& vehicles, VehicleClass cls,
                                        double ringLength, int nLanes, int cellsPerLane) {
    if (cellsPerLane < 1 || nLanes < 1 || ringLength <= 0)
        throw DomainError("spatialDistribution: bad grid shape");
    SpatialDistribution out;
    out.cells.assign(nLanes, std::vector<double>(cellsPerLane, 0.0));
    long total = 0;
    for (const auto& v : vehicles) {
        if (v.cls != cls) continue;
        int cell = static_cast<int>(v.pos / ringLength * cellsPerLane);
        cell = std::clamp(cell, 0, cellsPerLane - 1);
        out.cells[v.lane][cell] += 1.0;
        ++total;
    }
    out.hasVehicles = total > 0;
    if (total > 0)
        for (auto& row : out.cells)
            for (double& c : row) c /= static_cast<double>(total);
    return out;
}

double laneChangeFrequency(const TrajectoryLog& log, int classId, double tExclusiveFrom) {
    std::set<int> members;
    long changes = 0;
    for (const auto& r : log.rows) {
        if (r.classId != classId) continue;
        members.insert(r.vehId);
        if (r.laneChanged && r.t > tExclusiveFrom) ++changes;
    }
    if (members.empty()) return 0.0;
    return static_cast<double>(changes) / static_cast<double>(members.size());
}

std::vector<FlowPoint> fundamentalDiagramPoints(const std::vector<EdieRecord>& records) {
    std::vector<FlowPoint> out;
    for (size_t i = 0; i + 2 < records.size(); i += 3) {
        const EdieRecord& h = records[i];
        const EdieRecord& a = records[i + 1];
        if (h.classId != 1 || a.classId != 2 || records[i + 2].classId != 0)
            throw DomainError("edie records are not grouped as class triplets");
        out.push_back(FlowPoint{h.rhoVpkm + a.rhoVpkm, h.qVph + a.qVph});
    }
    return out;
}

namespace {

double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14;
    constexpr double kTiny = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw DomainError("incomplete beta continued fraction did not converge");
}

} // namespace

double incompleteBeta(double a, double b, double x) {
    if (a <= 0 || b <= 0) throw DomainError("incompleteBeta: parameters must be positive");
    if (x < 0 || x > 1) throw DomainError("incompleteBeta: x outside [0,1]");
    if (x == 0) return 0.0;
    if (x == 1) return 1.0;
    double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                         a * std::log(x) + b * std::log(1.0 - x));
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
    return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

Regression olsFit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) throw DomainError("olsFit: length mismatch");
    long n = static_cast<long>(x.size());
    if (n < 3) throw DomainError("olsFit: need at least 3 points");
    double mx = mean(x), my = mean(y);
    double sxx = 0, syy = 0, sxy = 0;
    for (long i = 0; i < n; ++i) {
        double dx = x[i] - mx, dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx <= 0) throw DomainError("olsFit: x has no variance");
    Regression out{};
    out.n = n;
    out.slope = sxy / sxx;
    out.intercept = my - out.slope * mx;
    if (syy <= 0) {
        out.r = 0.0;
        out.pValue = 1.0;
        return out;
    }
    out.r = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    double df = static_cast<double>(n - 2);
    double oneMinusR2 = 1.0 - out.r * out.r;
    if (oneMinusR2 <= 0) {
        out.pValue = 0.0;
        return out;
    }
    double t2 = out.r * out.r * df / oneMinusR2;
    out.pValue = incompleteBeta(df / 2.0, 0.5, df / (df + t2));
    return out;
}

} // namespace mixedflow
