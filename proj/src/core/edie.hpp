#pragma once

#include <string>
#include <vector>

#include "core/game.hpp"
#include "core/sim.hpp"

namespace mixedflow {

struct TrajectorySample {
    double t;
    int vehId;
    int classId; // 1 = human, 2 = automated
    int lane;
    double pos;
    double speed;
    int laneChanged; // 1 on the row where a new lane first appears
};

struct TrajectoryLog {
    double ringLength = 0;
    int nLanes = 0;
    double dt = 0;
    double loadingTime = 0;
    std::vector<TrajectorySample> rows; // ordered by (t, vehId)

    void append(const Simulator& sim);
    static const char* csvHeader() { return "t,veh_id,class,lane,pos_m,speed_mps,lane_changed"; }
    std::string toCsv() const;
    // Geometry fields must be supplied by the caller; the CSV holds only rows.
    static TrajectoryLog fromCsv(const std::string& text, double ringLength, int nLanes,
                                 double dt, double loadingTime);
};

// Space-time region spanning all lanes: [x0, x0+dx) x [t0, t0+dtw).
struct EdieRegion {
    double x0, dx, t0, dtw;
};

// Generalized flow/density/speed over a region, per lane.
struct EdieRecord {
    int regionId;
    double t0;
    int classId; // 1, 2, or 0 = all classes
    double qVph;
    double rhoVpkm;
    double uMps; // NaN when the region saw no travel time for this class
};

// Distance and time actually traveled inside the region, split by class
// (index 0 = human, 1 = automated). Exact for piecewise-linear trajectories.
void edieTotals(const TrajectoryLog& log, const EdieRegion& region, double dist[2],
                double time[2]);

// Tile the ring into dx-wide subsections and [tFrom, tTo) into dtw-long
// windows (complete windows only) and measure each tile. Rows come out
// grouped: class 1, class 2, then all, per (window, region).
std::vector<EdieRecord> tileRing(const TrajectoryLog& log, double dx, double dtw, double tFrom,
                                 double tTo);

std::string edieCsv(const std::vector<EdieRecord>& records);
std::vector<EdieRecord> edieFromCsv(const std::string& text);

// Collapse record triplets into per-region class density/speed samples for
// the bargaining-model fit.
std::vector<SpeedSample> speedSamplesFromRecords(const std::vector<EdieRecord>& records);

} // namespace mixedflow
