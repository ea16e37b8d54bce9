#include "core/qnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace mixedflow {

QNetwork QNetwork::heInit(const std::vector<int>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw ConfigError("network needs at least two layers");
    for (int s : sizes)
        if (s < 1) throw ConfigError("network layer sizes must be positive");
    QNetwork net;
    net.sizes = sizes;
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
        int in = sizes[l], out = sizes[l + 1];
        double stddev = std::sqrt(2.0 / in);
        std::vector<double> wl(static_cast<size_t>(out) * in);
        for (double& x : wl) x = rng.normal(0.0, stddev);
        net.w.push_back(std::move(wl));
        net.b.emplace_back(out, 0.0);
    }
    return net;
}

QNetwork QNetwork::zeros(const std::vector<int>& sizes) {
    Rng rng(0);
    QNetwork net = heInit(sizes, rng);
    for (auto& wl : net.w) std::fill(wl.begin(), wl.end(), 0.0);
    return net;
}

long QNetwork::paramCount() const {
    long n = 0;
    for (size_t l = 0; l < w.size(); ++l) n += static_cast<long>(w[l].size() + b[l].size());
    return n;
}

uint64_t QNetwork::paramFingerprint() const {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mixIn = [&h](const std::vector<double>& v) {
        uint64_t g = fnv1a64(v.data(), v.size() * sizeof(double));
        h = splitmix64(h ^ g);
    };
    for (const auto& wl : w) mixIn(wl);
    for (const auto& bl : b) mixIn(bl);
    return h;
}

namespace {

// activations[0] = input, activations[l+1] = layer l output (post-ReLU for
// hidden layers, raw for the last)
void forwardPass(const QNetwork& net, std::span<const double> input,
                 std::vector<std::vector<double>>& activations) {
    activations.clear();
    activations.emplace_back(input.begin(), input.end());
    for (size_t l = 0; l < net.w.size(); ++l) {
        int in = net.sizes[l], out = net.sizes[l + 1];
        const std::vector<double>& x = activations.back();
        std::vector<double> y(out);
        const double* wl = net.w[l].data();
        for (int j = 0; j < out; ++j) {
            double acc = net.b[l][j];
            const double* row = wl + static_cast<size_t>(j) * in;
            for (int i = 0; i < in; ++i) acc += row[i] * x[i];
            y[j] = acc;
        }
        if (l + 1 < net.w.size())
            for (double& v : y) v = v > 0 ? v : 0.0;
        activations.push_back(std::move(y));
    }
}

std::vector<double> toDouble(std::span<const float> v) {
    return std::vector<double>(v.begin(), v.end());
}

} // namespace

std::vector<double> QNetwork::forward(std::span<const double> input) const {
    if (static_cast<int>(input.size()) != inputSize())
        throw DomainError("forward: input size mismatch");
    std::vector<std::vector<double>> acts;
    forwardPass(*this, input, acts);
    return acts.back();
}

std::vector<double> QNetwork::forward(std::span<const float> input) const {
    return forward(std::span<const double>(toDouble(input)));
}

Gradients Gradients::zerosLike(const QNetwork& net) {
    Gradients g;
    for (size_t l = 0; l < net.w.size(); ++l) {
        g.w.emplace_back(net.w[l].size(), 0.0);
        g.b.emplace_back(net.b[l].size(), 0.0);
    }
    return g;
}

AdamState AdamState::zerosLike(const QNetwork& net) {
    AdamState a;
    for (size_t l = 0; l < net.w.size(); ++l) {
        a.mW.emplace_back(net.w[l].size(), 0.0);
        a.vW.emplace_back(net.w[l].size(), 0.0);
        a.mB.emplace_back(net.b[l].size(), 0.0);
        a.vB.emplace_back(net.b[l].size(), 0.0);
    }
    return a;
}

namespace {

double targetValue(const QNetwork& target, const Transition& tr, double gamma) {
    if (tr.done) return tr.reward;
    std::vector<double> q = target.forward(std::span<const float>(tr.s2));
    double best = -std::numeric_limits<double>::infinity();
    for (size_t a = 0; a < q.size(); ++a)
        if (tr.legal2 == 0 || (a < 8 && (tr.legal2 >> a) & 1)) best = std::max(best, q[a]);
    if (!std::isfinite(best)) best = *std::max_element(q.begin(), q.end());
    return tr.reward + gamma * best;
}

} // namespace

double dqnLoss(const QNetwork& online, const QNetwork& target,
               std::span<const Transition* const> batch, double gamma) {
    if (batch.empty()) throw DomainError("dqnLoss: empty batch");
    double loss = 0;
    for (const Transition* tr : batch) {
        double y = targetValue(target, *tr, gamma);
        std::vector<double> q = online.forward(std::span<const float>(tr->s));
        double diff = q.at(tr->action) - y;
        loss += diff * diff;
    }
    return loss / static_cast<double>(batch.size());
}

Gradients dqnGradients(const QNetwork& online, const QNetwork& target,
                       std::span<const Transition* const> batch, double gamma,
                       double* lossOut) {
    if (batch.empty()) throw DomainError("dqnGradients: empty batch");
    Gradients g = Gradients::zerosLike(online);
    double loss = 0;
    const double invB = 1.0 / static_cast<double>(batch.size());
    std::vector<std::vector<double>> acts;

    for (const Transition* tr : batch) {
        double y = targetValue(target, *tr, gamma);
        std::vector<double> input = toDouble(tr->s);
        forwardPass(online, input, acts);
        const std::vector<double>& out = acts.back();
        if (tr->action < 0 || tr->action >= static_cast<int>(out.size()))
            throw DomainError("dqnGradients: action index out of range");
        double diff = out[tr->action] - y;
        loss += diff * diff * invB;

        // delta at the output layer: MSE derivative on the taken action only
        std::vector<double> delta(out.size(), 0.0);
        delta[tr->action] = 2.0 * diff * invB;

        for (int l = static_cast<int>(online.w.size()) - 1; l >= 0; --l) {
            int in = online.sizes[l], outN = online.sizes[l + 1];
            const std::vector<double>& x = acts[l];
            double* gw = g.w[l].data();
            for (int j = 0; j < outN; ++j) {
                double dj = delta[j];
                if (dj == 0.0) continue;
                g.b[l][j] += dj;
                double* row = gw + static_cast<size_t>(j) * in;
                for (int i = 0; i < in; ++i) row[i] += dj * x[i];
            }
            if (l == 0) break;
            std::vector<double> prevDelta(in, 0.0);
            const double* wl = online.w[l].data();
            for (int j = 0; j < outN; ++j) {
                double dj = delta[j];
                if (dj == 0.0) continue;
                const double* row = wl + static_cast<size_t>(j) * in;
                for (int i = 0; i < in; ++i) prevDelta[i] += dj * row[i];
            }
            // ReLU gate of the hidden layer below
            for (int i = 0; i < in; ++i)
                if (x[i] <= 0.0) prevDelta[i] = 0.0;
            delta = std::move(prevDelta);
        }
    }
    if (lossOut) *lossOut = loss;
    return g;
}

void adamStep(QNetwork& net, const Gradients& g, AdamState& adam, double lr) {
    ++adam.t;
    double c1 = 1.0 - std::pow(adam.beta1, static_cast<double>(adam.t));
    double c2 = 1.0 - std::pow(adam.beta2, static_cast<double>(adam.t));
    auto update = [&](std::vector<double>& p, const std::vector<double>& grad,
                      std::vector<double>& m, std::vector<double>& v) {
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = adam.beta1 * m[i] + (1.0 - adam.beta1) * grad[i];
            v[i] = adam.beta2 * v[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
            double mhat = m[i] / c1;
            double vhat = v[i] / c2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + adam.eps);
        }
    };
    for (size_t l = 0; l < net.w.size(); ++l) {
        update(net.w[l], g.w[l], adam.mW[l], adam.vW[l]);
        update(net.b[l], g.b[l], adam.mB[l], adam.vB[l]);
    }
}

double dqnTrainStep(QNetwork& online, const QNetwork& target,
                    std::span<const Transition* const> batch, double gamma, AdamState& adam,
                    double lr) {
    double loss = 0;
    Gradients g = dqnGradients(online, target, batch, gamma, &loss);
    if (!std::isfinite(loss)) throw InvariantError("training loss is not finite");
    adamStep(online, g, adam, lr);
    return loss;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'M', 'F', 'Q', 'N'};
constexpr uint32_t kVersion = 1;

void putU32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void putU64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void putF64(std::string& buf, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    putU64(buf, bits);
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("checkpoint truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() {
        uint64_t bits = u64();
        double d;
        std::memcpy(&d, &bits, sizeof d);
        return d;
    }
};

} // namespace

void saveCheckpoint(const std::string& path, const QNetwork& net, uint64_t scenarioHash,
                    uint32_t episodesTrained) {
    std::string buf;
    buf.append(kMagic, 4);
    putU32(buf, kVersion);
    putU64(buf, scenarioHash);
    putU32(buf, episodesTrained);
    putU32(buf, static_cast<uint32_t>(net.sizes.size()));
    for (int s : net.sizes) putU32(buf, static_cast<uint32_t>(s));
    for (size_t l = 0; l < net.w.size(); ++l) {
        for (double d : net.w[l]) putF64(buf, d);
        for (double d : net.b[l]) putF64(buf, d);
    }
    putU64(buf, fnv1a64(buf.data(), buf.size()));
    writeTextFile(path, buf);
}

Checkpoint loadCheckpoint(const std::string& path) {
    std::string buf = readTextFile(path);
    if (buf.size() < 12 + 8 || std::memcmp(buf.data(), kMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path);
    uint64_t stored;
    {
        Reader tail(buf);
        tail.pos = buf.size() - 8;
        stored = tail.u64();
    }
    if (fnv1a64(buf.data(), buf.size() - 8) != stored)
        throw IoError("checkpoint checksum mismatch: " + path);

    Reader r(buf);
    r.pos = 4;
    uint32_t version = r.u32();
    if (version != kVersion) throw IoError("unsupported checkpoint version");
    Checkpoint cp{};
    cp.scenarioHash = r.u64();
    cp.episodesTrained = r.u32();
    uint32_t nSizes = r.u32();
    if (nSizes < 2 || nSizes > 64) throw IoError("checkpoint has implausible layer count");
    std::vector<int> sizes(nSizes);
    for (auto& s : sizes) {
        uint32_t v = r.u32();
        if (v < 1 || v > 1000000) throw IoError("checkpoint has implausible layer size");
        s = static_cast<int>(v);
    }
    cp.net.sizes = sizes;
    for (size_t l = 0; l + 1 < sizes.size(); ++l) {
        size_t nw = static_cast<size_t>(sizes[l]) * sizes[l + 1];
        std::vector<double> wl(nw);
        for (double& d : wl) d = r.f64();
        std::vector<double> bl(sizes[l + 1]);
        for (double& d : bl) d = r.f64();
        cp.net.w.push_back(std::move(wl));
        cp.net.b.push_back(std::move(bl));
    }
    if (r.pos != buf.size() - 8) throw IoError("checkpoint has trailing bytes");
    return cp;
}

} // namespace mixedflow
