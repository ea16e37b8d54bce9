#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <set>
#include <vector>

#include "core/agent.hpp"
#include "core/config.hpp"
#include "core/sim.hpp"
#include "core/util.hpp"

using namespace mixedflow;

namespace {

Vehicle makeVehicle(int id, VehicleClass cls, int lane, double pos, double speed,
                    double maxSpeed) {
    Vehicle v{};
    v.id = id;
    v.cls = cls;
    v.lane = lane;
    v.pos = pos;
    v.speed = speed;
    v.maxSpeed = maxSpeed;
    v.length = 5.0;
    return v;
}

} // namespace

TEST_CASE("exploration schedule") {
    Config cfg;
    CHECK(epsilonAt(cfg.dqn, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(epsilonAt(cfg.dqn, 300) ==
          doctest::Approx(0.01 + 0.99 * std::exp(-1.0)).epsilon(1e-12));
    CHECK(epsilonAt(cfg.dqn, 300) == doctest::Approx(0.3742).epsilon(1e-3));

    double prev = epsilonAt(cfg.dqn, 0);
    for (int e = 25; e <= 3000; e += 25) {
        double eps = epsilonAt(cfg.dqn, e);
        CHECK(eps <= prev);
        CHECK(eps >= cfg.dqn.epsEnd);
        CHECK(eps <= cfg.dqn.epsStart);
        prev = eps;
    }
    CHECK_THROWS_AS(epsilonAt(cfg.dqn, -1), DomainError);
}

TEST_CASE("observation layout") {
    Config cfg;
    cfg.scenario.ringLengthM = 1000.0;
    cfg.scenario.nLanes = 3;
    std::vector<Vehicle> vs{
        makeVehicle(0, VehicleClass::Automated, 1, 500.0, 15.0, 25.0),
        makeVehicle(1, VehicleClass::Human, 2, 510.0, 20.0, 25.0),     // +10 m
        makeVehicle(2, VehicleClass::Automated, 0, 480.0, 10.0, 25.0), // -20 m
        makeVehicle(3, VehicleClass::Human, 1, 700.0, 5.0, 25.0)};     // out of range
    Simulator sim(cfg, vs);

    auto obs = encodeObservation(sim, 0, cfg);
    REQUIRE(static_cast<int>(obs.size()) == cfg.dqn.stateSize);

    CHECK(obs[0] == 0.0f);
    CHECK(obs[1] == doctest::Approx(0.5));  // lane 1 of {0,1,2}
    CHECK(obs[2] == doctest::Approx(15.0 / 30.0));
    CHECK(obs[3] == doctest::Approx(0.5));

    // nearest neighbor first
    CHECK(obs[4] == doctest::Approx(10.0 / 100.0));
    CHECK(obs[5] == doctest::Approx(0.5)); // one lane to the left
    CHECK(obs[6] == doctest::Approx(20.0 / 30.0));
    CHECK(obs[7] == doctest::Approx(1.0));
    CHECK(obs[8] == 1.0f); // human

    CHECK(obs[9] == doctest::Approx(-20.0 / 100.0));
    CHECK(obs[10] == doctest::Approx(-0.5));
    CHECK(obs[11] == doctest::Approx(10.0 / 30.0));
    CHECK(obs[12] == doctest::Approx(0.0));
    CHECK(obs[13] == 2.0f); // automated

    for (size_t i = 14; i < obs.size(); ++i) CHECK(obs[i] == 0.0f);

    CHECK_THROWS_AS(encodeObservation(sim, 9, cfg), DomainError);
}

TEST_CASE("observations are translation invariant") {
    Config cfg;
    cfg.scenario.ringLengthM = 1000.0;
    cfg.scenario.nLanes = 3;
    auto build = [&](double shift) {
        std::vector<Vehicle> vs{
            makeVehicle(0, VehicleClass::Automated, 1, std::fmod(500.0 + shift, 1000.0), 15.0, 25.0),
            makeVehicle(1, VehicleClass::Human, 2, std::fmod(510.0 + shift, 1000.0), 20.0, 25.0),
            makeVehicle(2, VehicleClass::Automated, 0, std::fmod(480.0 + shift, 1000.0), 10.0, 25.0)};
        Simulator sim(cfg, vs);
        return encodeObservation(sim, 0, cfg);
    };
    auto a = build(0.0);
    for (double shift : {123.4, 499.0, 987.6}) {
        auto b = build(shift);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); ++i)
            CHECK(std::fabs(a[i] - b[i]) < 1e-6);
    }
}

TEST_CASE("legal actions at the road edges") {
    auto rightmost = legalActions(0, 3);
    CHECK(rightmost[static_cast<int>(Action::ChangeLeft)]);
    CHECK_FALSE(rightmost[static_cast<int>(Action::ChangeRight)]);
    CHECK(rightmost[static_cast<int>(Action::KeepLane)]);

    auto leftmost = legalActions(2, 3);
    CHECK_FALSE(leftmost[static_cast<int>(Action::ChangeLeft)]);
    CHECK(leftmost[static_cast<int>(Action::ChangeRight)]);

    auto middle = legalActions(1, 3);
    CHECK(middle[0]);
    CHECK(middle[1]);
    CHECK(middle[2]);

    auto only = legalActions(0, 1);
    CHECK_FALSE(only[0]);
    CHECK_FALSE(only[1]);
    CHECK(only[2]);
}

TEST_CASE("greedy tie-breaking prefers staying put") {
    std::array<bool, 3> all{true, true, true};
    CHECK(greedyAction({1.0, 1.0, 1.0}, all) == Action::KeepLane);
    CHECK(greedyAction({2.0, 1.0, 1.0}, all) == Action::ChangeLeft);
    CHECK(greedyAction({1.0, 2.0, 1.0}, all) == Action::ChangeRight);
    CHECK(greedyAction({0.5, 0.5, 1.0}, all) == Action::KeepLane);
    CHECK(greedyAction({2.0, 2.0, 1.0}, all) == Action::ChangeLeft); // equal off-lane values

    std::array<bool, 3> noRight{true, false, true};
    CHECK(greedyAction({5.0, 9.0, 2.0}, noRight) == Action::ChangeLeft);

    CHECK_THROWS_AS(greedyAction({1.0, 2.0}, all), DomainError);
}

TEST_CASE("epsilon-greedy selection") {
    QNetwork net = QNetwork::zeros({4, 3});
    std::vector<float> obs{0.1f, 0.2f, 0.3f, 0.4f};
    Rng rng(99);

    // zero epsilon: pure greedy; all-zero outputs tie toward KeepLane
    for (int i = 0; i < 20; ++i)
        CHECK(selectAction(net, obs, {true, true, true}, 0.0, rng) == Action::KeepLane);

    // full exploration: roughly uniform over the legal set
    std::array<int, 3> counts{};
    for (int i = 0; i < 6000; ++i)
        counts[static_cast<int>(selectAction(net, obs, {true, true, true}, 1.0, rng))]++;
    for (int c : counts) {
        CHECK(c > 6000 / 3 - 400);
        CHECK(c < 6000 / 3 + 400);
    }

    // illegal actions are never explored
    for (int i = 0; i < 500; ++i)
        CHECK(selectAction(net, obs, {false, false, true}, 1.0, rng) == Action::KeepLane);

    // same seed, same choices
    Rng r1(7), r2(7);
    for (int i = 0; i < 200; ++i)
        CHECK(selectAction(net, obs, {true, true, true}, 0.5, r1) ==
              selectAction(net, obs, {true, true, true}, 0.5, r2));
}

TEST_CASE("replay buffer overwrites the oldest entries") {
    ReplayBuffer buf(3);
    CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
    for (int k = 0; k < 5; ++k) {
        Transition tr;
        tr.s = {float(k)};
        tr.action = 2;
        tr.reward = float(k);
        tr.s2 = {float(k)};
        tr.done = false;
        buf.push(std::move(tr));
    }
    CHECK(buf.size() == 3);
    CHECK(buf.pushed() == 5);

    Rng rng(1);
    auto all = buf.sample(3, rng);
    std::set<int> rewards;
    std::set<const Transition*> ptrs;
    for (const Transition* t : all) {
        rewards.insert(static_cast<int>(t->reward));
        ptrs.insert(t);
    }
    CHECK(ptrs.size() == 3); // without replacement
    CHECK(rewards == std::set<int>{2, 3, 4}); // 0 and 1 were overwritten

    CHECK_THROWS_AS(buf.sample(4, rng), DomainError);
    CHECK_THROWS_AS(buf.sample(0, rng), DomainError);

    // sampling is reproducible per seed
    Rng ra(5), rb(5);
    auto sa = buf.sample(2, ra);
    auto sb = buf.sample(2, rb);
    CHECK(sa[0] == sb[0]);
    CHECK(sa[1] == sb[1]);
}
