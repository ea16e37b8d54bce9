#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mixedflow {

// Error taxonomy. Everything thrown by the library derives from Error so the
// C boundary can map exceptions onto status codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, bad CLI input, infeasible scenario, checkpoint mismatch.
struct ConfigError : Error {
    using Error::Error;
};

// Filesystem trouble: unreadable/missing files, malformed artifacts.
struct IoError : Error {
    using Error::Error;
};

// A numeric routine was handed inputs outside its domain (no equilibrium in
// bracket, unnormalized distribution, insufficient data, ...).
struct DomainError : Error {
    using Error::Error;
};

// An internal invariant failed at runtime; state is suspect.
struct InvariantError : Error {
    using Error::Error;
};

// Vehicle overlap detected by the simulator. Carries the pair when known;
// the follower is the vehicle held responsible.
struct CollisionError : InvariantError {
    int followerId = -1;
    int leaderId = -1;
    double atTime = 0.0;
    using InvariantError::InvariantError;
    CollisionError(const std::string& msg, int follower, int leader, double t)
        : InvariantError(msg), followerId(follower), leaderId(leader), atTime(t) {}
};

// --- deterministic RNG -----------------------------------------------------
//
// mt19937_64 has a fully pinned-down algorithm, but the std distribution
// adapters do not, so all draw shaping is done here by hand. Streams are
// derived from (master seed, stream tag, index) via splitmix64 so runs are
// reproducible across platforms and independent of call interleaving.

uint64_t splitmix64(uint64_t x);
uint64_t mixSeed(uint64_t master, uint64_t stream, uint64_t index);

// Stream tags for seed derivation.
enum : uint64_t {
    kStreamLoad = 0x4c4f4144,     // vehicle placement
    kStreamAgent = 0x4147454e,    // exploration + replay sampling
    kStreamNet = 0x4e455457,      // weight init
    kStreamTrainEnv = 0x54524e45, // per-episode training envs
    kStreamEvalEnv = 0x45564c45,  // per-episode evaluation envs
};

class Rng {
  public:
    explicit Rng(uint64_t seed);

    uint64_t nextU64();
    // uniform in [0,1)
    double uniform();
    // uniform in [lo,hi)
    double uniform(double lo, double hi);
    // uniform integer in [0,n), n >= 1
    uint64_t below(uint64_t n);
    // standard normal, Box-Muller with cached spare
    double normal();
    double normal(double mean, double stddev);

    template <typename T> void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
    bool hasSpare_ = false;
    double spare_ = 0.0;
};

// --- small formatting / IO helpers ------------------------------------------

// Shortest round-trippable decimal form of a double ("%.17g" trimmed).
std::string formatDouble(double v);
// Fixed-decimal form, for CSV columns where layout stability matters.
std::string formatFixed(double v, int decimals);

std::string readTextFile(const std::string& path);
// Writes via temp file + rename so readers never see a torn file.
void writeTextFile(const std::string& path, const std::string& content);
void ensureDir(const std::string& path);

std::vector<std::string> splitCsvLine(const std::string& line);
double parseDouble(const std::string& s);
long parseLong(const std::string& s);

// FNV-1a over bytes, used for scenario fingerprints.
uint64_t fnv1a64(const void* data, size_t n);

std::string hex64(uint64_t v);

} // namespace mixedflow
