#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "core/config.hpp"
#include "core/edie.hpp"
#include "core/game.hpp"
#include "core/metrics.hpp"
#include "core/qnet.hpp"
#include "core/training.hpp"

namespace mixedflow {

// --- single-episode evaluation ------------------------------------------------

struct SpatialRow {
    double t;
    double benefit;   // platoon benefit B
    double hellinger; // NaN when either class is absent
    double metric;    // a1*B + a2*H
};

struct EpisodeArtifacts {
    TrajectoryLog log;
    std::vector<EdieRecord> edie;
    std::vector<SpatialRow> spatial;
    std::optional<double> tSettle;
    double settledSpeed[2]; // class means over the trailing window
    double lcFreq[2];
};

// net == nullptr runs the rule-based baseline for automated vehicles.
EpisodeArtifacts runEpisode(const Config& cfg, const QNetwork* net, uint64_t envSeed);

// Rule-based run of `ticks` steps; returns an order-sensitive digest of every
// vehicle state visited. Equal digests mean bit-identical trajectories.
// Throws CollisionError if any overlap occurs.
uint64_t simulationDigest(const Config& cfg, uint64_t seed, long ticks);

// --- run drivers (write directories of artifacts) ------------------------------

// out layout: <root>/<slug>/{train,eval,baseline}/..., <root>/compare/...,
// <root>/regression/...
std::string cellDir(const std::string& root, const Config& cfg);

void runTrain(const Config& cfg, uint64_t seed, const std::string& outRoot,
              const std::string& resumeFrom, std::ostream* log);
void runEvaluate(const Config& cfg, uint64_t seed, const std::string& outRoot,
                 const std::string& checkpointPath, std::ostream* log);
void runBaseline(const Config& cfg, uint64_t seed, const std::string& outRoot,
                 std::ostream* log);

// lambdaOverride < 0 estimates lambda from the pooled evaluation measurements.
void runCompare(const Config& cfg, const std::string& runsRoot, const std::string& outRoot,
                double lambdaOverride, std::ostream* log);
void runEstimateLambda(const Config& cfg, const std::string& runsRoot,
                       const std::string& outRoot, std::ostream* log);
void runLambdaRegression(const Config& cfg, const std::string& runsRoot,
                         const std::string& outRoot, std::ostream* log);

// lambda < 0 falls back to the configured surplus split.
std::string equilibriumJson(const Config& cfg, double rho1, double rho2, double lambda);

struct MatrixReport {
    int cellsTotal = 0;
    int cellsFailed = 0;
    std::vector<std::string> failures; // "slug stage: message"
    bool compareRan = false;
    bool regressionRan = false;
};

// mode: "train", "evaluate", "baseline", or "all". Cells run in a pool of
// `threads` workers (clamped to >= 1); per-cell seeds derive from the slug, so
// results do not depend on scheduling.
MatrixReport runMatrix(const Config& cfg, uint64_t seed, const std::string& mode,
                       const std::string& outRoot, int threads, std::ostream* log);

int threadsFromEnv(); // MIXEDFLOW_THREADS, default 1

std::string spatialCsv(const std::vector<SpatialRow>& rows);
std::vector<SpatialRow> spatialFromCsv(const std::string& text);

} // namespace mixedflow
