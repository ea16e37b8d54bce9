#include "core/edie.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace mixedflow {

void TrajectoryLog::append(const Simulator& sim) {
    for (const auto& v : sim.vehicles()) {
        rows.push_back(TrajectorySample{sim.time(), v.id,
                                        v.cls == VehicleClass::Human ? 1 : 2, v.lane, v.pos,
                                        v.speed, v.changedThisTick ? 1 : 0});
    }
}

std::string TrajectoryLog::toCsv() const {
    std::ostringstream ss;
    ss << csvHeader() << "\n";
    for (const auto& r : rows) {
        ss << formatDouble(r.t) << ',' << r.vehId << ',' << r.classId << ',' << r.lane << ','
           << formatDouble(r.pos) << ',' << formatDouble(r.speed) << ',' << r.laneChanged
           << "\n";
    }
    return ss.str();
}

TrajectoryLog TrajectoryLog::fromCsv(const std::string& text, double ringLength, int nLanes,
                                     double dt, double loadingTime) {
    TrajectoryLog log;
    log.ringLength = ringLength;
    log.nLanes = nLanes;
    log.dt = dt;
    log.loadingTime = loadingTime;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("trajectory CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != csvHeader()) throw IoError("trajectory CSV has unexpected header: " + line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = splitCsvLine(line);
        if (f.size() != 7) throw IoError("trajectory CSV row has wrong arity");
        log.rows.push_back(TrajectorySample{parseDouble(f[0]), static_cast<int>(parseLong(f[1])),
                                            static_cast<int>(parseLong(f[2])),
                                            static_cast<int>(parseLong(f[3])), parseDouble(f[4]),
                                            parseDouble(f[5]),
                                            static_cast<int>(parseLong(f[6]))});
    }
    return log;
}

namespace {

struct Piece {
    double ta, xa, tb, xb; // linear motion, xa<=xb within [0, ring]
};

// Accumulate one linear piece's contribution to the region.
void addPiece(const Piece& p, const EdieRegion& r, double& dist, double& time) {
    double tlo = std::max(p.ta, r.t0);
    double thi = std::min(p.tb, r.t0 + r.dtw);
    if (thi <= tlo) return;
    double span = p.tb - p.ta;
    double v = span > 0 ? (p.xb - p.xa) / span : 0.0;
    if (v <= 0) {
        // stationary: half-open cell membership
        if (p.xa >= r.x0 && p.xa < r.x0 + r.dx) time += thi - tlo;
        return;
    }
    double tEnter = p.ta + (r.x0 - p.xa) / v;
    double tExit = p.ta + (r.x0 + r.dx - p.xa) / v;
    double slo = std::max(tlo, tEnter);
    double shi = std::min(thi, tExit);
    if (shi <= slo) return;
    time += shi - slo;
    dist += v * (shi - slo);
}

} // namespace

void edieTotals(const TrajectoryLog& log, const EdieRegion& region, double dist[2],
                double time[2]) {
    dist[0] = dist[1] = time[0] = time[1] = 0.0;
    const double L = log.ringLength;
    if (L <= 0) throw DomainError("edieTotals: trajectory log lacks ring geometry");

    // rows are (t, vehId)-ordered; walk per-vehicle chains via previous-row map
    std::map<int, const TrajectorySample*> prev;
    for (const auto& row : log.rows) {
        auto it = prev.find(row.vehId);
        if (it != prev.end()) {
            const TrajectorySample& a = *it->second;
            const TrajectorySample& b = row;
            double span = b.t - a.t;
            if (span < 0) throw DomainError("trajectory rows are not time-ordered");
            if (span > 0) {
                double disp = std::fmod(b.pos - a.pos + L, L);
                int cls = b.classId == 2 ? 1 : 0;
                double xEnd = a.pos + disp;
                if (xEnd <= L) {
                    addPiece(Piece{a.t, a.pos, b.t, xEnd}, region, dist[cls], time[cls]);
                } else {
                    double v = disp / span;
                    double tc = a.t + (L - a.pos) / v;
                    addPiece(Piece{a.t, a.pos, tc, L}, region, dist[cls], time[cls]);
                    addPiece(Piece{tc, 0.0, b.t, xEnd - L}, region, dist[cls], time[cls]);
                }
            }
        }
        prev[row.vehId] = &row;
    }
}

std::vector<EdieRecord> tileRing(const TrajectoryLog& log, double dx, double dtw, double tFrom,
                                 double tTo) {
    if (dx <= 0 || dtw <= 0) throw DomainError("tileRing: region dimensions must be positive");
    const double L = log.ringLength;
    const int lanes = log.nLanes;
    if (L <= 0 || lanes <= 0) throw DomainError("tileRing: trajectory log lacks geometry");

    std::vector<EdieRecord> out;
    int nx = static_cast<int>(std::ceil(L / dx - 1e-9));
    for (double t0 = tFrom; t0 + dtw <= tTo + 1e-9; t0 += dtw) {
        for (int i = 0; i < nx; ++i) {
            double x0 = i * dx;
            double width = std::min(dx, L - x0);
            EdieRegion region{x0, width, t0, dtw};
            double dist[2], time[2];
            edieTotals(log, region, dist, time);
            double area = width * dtw * lanes; // m*s, pooled over lanes
            auto emit = [&](int classId, double d, double t) {
                EdieRecord rec{};
                rec.regionId = i;
                rec.t0 = t0;
                rec.classId = classId;
                rec.qVph = d / area * 3600.0;
                rec.rhoVpkm = t / area * 1000.0;
                rec.uMps = t > 0 ? d / t : std::numeric_limits<double>::quiet_NaN();
                out.push_back(rec);
            };
            emit(1, dist[0], time[0]);
            emit(2, dist[1], time[1]);
            emit(0, dist[0] + dist[1], time[0] + time[1]);
        }
    }
    return out;
}

std::string edieCsv(const std::vector<EdieRecord>& records) {
    std::ostringstream ss;
    ss << "region_id,t,class,q_vph,rho_vpkm,u_mps\n";
    for (const auto& r : records) {
        ss << r.regionId << ',' << formatDouble(r.t0) << ','
           << (r.classId == 0 ? std::string("all") : std::to_string(r.classId)) << ','
           << formatDouble(r.qVph) << ',' << formatDouble(r.rhoVpkm) << ','
           << formatDouble(r.uMps) << "\n";
    }
    return ss.str();
}

std::vector<EdieRecord> edieFromCsv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw IoError("edie CSV is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "region_id,t,class,q_vph,rho_vpkm,u_mps")
        throw IoError("edie CSV has unexpected header: " + line);
    std::vector<EdieRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = splitCsvLine(line);
        if (f.size() != 6) throw IoError("edie CSV row has wrong arity");
        EdieRecord r{};
        r.regionId = static_cast<int>(parseLong(f[0]));
        r.t0 = parseDouble(f[1]);
        r.classId = f[2] == "all" ? 0 : static_cast<int>(parseLong(f[2]));
        r.qVph = parseDouble(f[3]);
        r.rhoVpkm = parseDouble(f[4]);
        r.uMps = parseDouble(f[5]);
        out.push_back(r);
    }
    return out;
}

std::vector<SpeedSample> speedSamplesFromRecords(const std::vector<EdieRecord>& records) {
    std::vector<SpeedSample> out;
    // records arrive in (class 1, class 2, all) triplets per region-window
    for (size_t i = 0; i + 2 < records.size(); i += 3) {
        const EdieRecord& h = records[i];
        const EdieRecord& a = records[i + 1];
        const EdieRecord& all = records[i + 2];
        if (h.classId != 1 || a.classId != 2 || all.classId != 0 || h.regionId != a.regionId ||
            h.t0 != a.t0)
            throw DomainError("edie records are not grouped as class triplets");
        SpeedSample s;
        s.rho1 = h.rhoVpkm;
        s.rho2 = a.rhoVpkm;
        s.has1 = h.rhoVpkm > 0 && std::isfinite(h.uMps);
        s.has2 = a.rhoVpkm > 0 && std::isfinite(a.uMps);
        s.u1 = s.has1 ? h.uMps : 0.0;
        s.u2 = s.has2 ? a.uMps : 0.0;
        out.push_back(s);
    }
    if (records.size() % 3 != 0) throw DomainError("edie records are not grouped as class triplets");
    return out;
}

} // namespace mixedflow
