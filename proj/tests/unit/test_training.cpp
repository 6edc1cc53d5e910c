#include "doctest.h"

#include "nst/errors.hpp"
#include "nst/training.hpp"

#include <cmath>
#include <filesystem>

using namespace nst;

namespace {

// tests/oracles/adam_oracle.py
constexpr double kAdamOneStep = -0.09999999900000002;
constexpr double kAdamThreeSteps = 0.9950279419673822;
// tests/oracles/naive_baseline.py
constexpr double kNaiveLastValueMse = 0.046875;

ModelConfig tiny_config(AttentionMode mode = AttentionMode::both) {
    ModelConfig c;
    c.input_len = 8;
    c.pred_len = 4;
    c.channels = 2;
    c.d_model = 16;
    c.n_heads = 2;
    c.ffn_width = 32;
    c.projector_hidden = 8;
    c.mode = mode;
    c.seed = 5;
    return c;
}

Dataset linear_trend(std::size_t rows) {
    Dataset d;
    d.name = "trend";
    d.columns = {"a", "b"};
    d.rows = rows;
    for (std::size_t t = 0; t < rows; ++t) {
        d.values.push_back(0.5 + 0.1 * static_cast<double>(t));
        d.values.push_back(3.0 - 0.05 * static_cast<double>(t));
    }
    return d;
}

Dataset noisy(std::size_t rows, std::uint64_t seed) {
    SyntheticSpec s;
    s.kind = SyntheticKind::trend_seasonal;
    s.length = rows;
    s.channels = 2;
    s.seed = seed;
    s.period = 8.0;
    return generate_synthetic(s);
}

void set_grad(Tensor& t, std::vector<double> g) {
    // Accumulate g through a tiny graph: d/dt sum(t * g) = g.
    sum(mul(t, Tensor::from(t.shape(), std::move(g)))).backward();
}

} // namespace

TEST_CASE("one Adam step on a scalar matches the hand evaluation") {
    ParameterSet p;
    auto w = p.add("w", {1}, {0.0});
    set_grad(w, {1.0});
    auto state = OptimState::create(p, {0.1});
    adam_step(p, state);
    CHECK(w.values()[0] == doctest::Approx(kAdamOneStep).epsilon(1e-15));
    CHECK(state.step == 1);
}

TEST_CASE("three Adam steps match the hand evaluation") {
    ParameterSet p;
    auto w = p.add("w", {1}, {1.0});
    auto state = OptimState::create(p, {0.01});
    for (double g : {1.0, -2.0, 0.5}) {
        p.zero_grad();
        set_grad(w, {g});
        adam_step(p, state);
    }
    CHECK(w.values()[0] == doctest::Approx(kAdamThreeSteps).epsilon(1e-15));
}

TEST_CASE("zero gradients and zero learning rate leave parameters unchanged") {
    ParameterSet p;
    auto w = p.add("w", {3}, {1.0, -2.0, 3.0});
    auto state = OptimState::create(p, {0.1});
    adam_step(p, state);
    CHECK(std::vector<double>(w.values().begin(), w.values().end()) == std::vector<double>{1.0, -2.0, 3.0});
    CHECK(state.step == 1);

    auto frozen = OptimState::create(p, {0.0});
    set_grad(w, {0.3, -0.7, 2.0});
    adam_step(p, frozen);
    CHECK(std::vector<double>(w.values().begin(), w.values().end()) == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("identical parameters with identical gradients stay identical") {
    ParameterSet p;
    auto a = p.add("a", {2}, {0.4, 0.4});
    auto state = OptimState::create(p, {0.05});
    for (int i = 0; i < 20; ++i) {
        p.zero_grad();
        set_grad(a, {std::sin(i), std::sin(i)});
        adam_step(p, state);
        CHECK(a.values()[0] == a.values()[1]);
    }
}

TEST_CASE("non-finite gradients abort with the parameter path") {
    ParameterSet p;
    p.add("encoder.weight", {1}, {0.0});
    auto b = p.add("decoder.bias", {1}, {0.0});
    set_grad(b, {NAN});
    auto state = OptimState::create(p);
    try {
        adam_step(p, state);
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("decoder.bias") != std::string::npos);
    }
    CHECK(state.step == 0);
}

TEST_CASE("gradients reach the projector unless attention is vanilla") {
    const auto data = noisy(200, 1);
    const std::vector<std::size_t> starts{0, 10, 20, 30};
    const auto x = gather_inputs(data, starts, 8);
    const auto y = gather_targets(data, starts, 8, 4);
    for (auto mode : {AttentionMode::both, AttentionMode::tau_only, AttentionMode::delta_only, AttentionMode::vanilla}) {
        Model m(tiny_config(mode));
        m.parameters().zero_grad();
        mse_loss(m.forward(x, true).y_hat, y).backward();
        double norm = 0.0;
        for (const auto& [path, t] : m.parameters()) {
            if (path.rfind("projector.", 0) == 0) {
                for (double g : t.grad()) {
                    norm += g * g;
                }
            }
        }
        CAPTURE(to_string(mode));
        if (mode == AttentionMode::vanilla) {
            CHECK(norm == 0.0);
        } else {
            CHECK(norm > 0.0);
        }
    }
}

TEST_CASE("training on a noiseless trend beats the last-value predictor") {
    const auto data = linear_trend(80);
    auto cfg = tiny_config();
    cfg.dropout = 0.0;
    Model m(cfg);
    TrainConfig tc;
    tc.epochs = 50;
    tc.patience = 50;
    tc.lr = 3e-3;
    tc.batch_size = 8;
    const auto r = train(m, data, SplitSpec{}, tc);
    CHECK(r.history.size() == 50);
    CHECK(r.history.back().train_loss < kNaiveLastValueMse);
    // Normalised trend windows are all alike, so the fit carries to the test split.
    const auto e = evaluate(m, data, SplitSpec{});
    CHECK(e.overall.mse < kNaiveLastValueMse);
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto data = noisy(300, 2);
    TrainConfig tc;
    tc.epochs = 2;
    tc.lr = 1e-3;
    auto run = [&] {
        Model m(tiny_config());
        return train(m, data, SplitSpec{}, tc);
    };
    const auto a = run();
    const auto b = run();
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].train_loss == b.history[i].train_loss);
        CHECK(a.history[i].val_mse == b.history[i].val_mse);
    }
}

TEST_CASE("early stopping counts non-improving epochs") {
    const auto data = noisy(300, 3);
    for (std::size_t patience : {0u, 2u}) {
        Model m(tiny_config());
        TrainConfig tc;
        tc.epochs = 10;
        tc.patience = patience;
        tc.lr = 0.0; // validation never improves after epoch 1
        const auto r = train(m, data, SplitSpec{}, tc);
        CHECK(r.history.size() == 2 + (patience == 0 ? 0 : patience - 1));
        CHECK(r.best_epoch == 1);
        CHECK(r.stopped_early);
    }
}

TEST_CASE("best parameters are restored and checkpointed") {
    const auto data = noisy(300, 4);
    Model m(tiny_config());
    TrainConfig tc;
    tc.epochs = 3;
    tc.lr = 1e-3;
    const auto path = std::filesystem::temp_directory_path() / "nst_train_ckpt.txt";
    std::filesystem::remove(path);
    const auto r = train(m, data, SplitSpec{}, tc, path);
    CHECK(std::filesystem::exists(path));
    auto loaded = load_checkpoint(path);
    const auto a = evaluate(m, data, SplitSpec{}, {Split::val});
    const auto b = evaluate(loaded, data, SplitSpec{}, {Split::val});
    CHECK(a.overall.mse == b.overall.mse);
    CHECK(a.overall.mse == doctest::Approx(r.best_val_mse).epsilon(1e-12));
    std::filesystem::remove(path);
}

TEST_CASE("evaluation is repeatable and checks the channel count") {
    const auto data = noisy(400, 5);
    Model m(tiny_config());
    const auto a = evaluate(m, data, SplitSpec{});
    const auto b = evaluate(m, data, SplitSpec{});
    CHECK(a.overall.mse == b.overall.mse);
    CHECK(a.windows == 71); // test rows 326..399 plus 8 rows of context
    REQUIRE(a.relative.has_value());
    CHECK(a.relative->aggregate == b.relative->aggregate);
    CHECK(a.horizon.size() == 4);

    SyntheticSpec s;
    s.length = 400;
    s.channels = 3;
    CHECK_THROWS_AS(evaluate(m, generate_synthetic(s), SplitSpec{}), ConfigError);
}

TEST_CASE("original-space loss of the best constant scales with the square") {
    const auto data = noisy(300, 6);
    const auto starts = window_starts(data.rows, SplitSpec{}, Split::train, 8, 4);
    auto best_constant_loss = [&](double a) {
        auto y = gather_targets(data, starts, 8, 4);
        y = mul_scalar(y, a);
        const double m = mean(y).item();
        return mse_loss(y, Tensor::full(y.shape(), m)).item();
    };
    for (double a : {0.5, 3.0}) {
        CHECK(best_constant_loss(a) == doctest::Approx(a * a * best_constant_loss(1.0)).epsilon(1e-12));
    }
}

TEST_CASE("normalized-space loss trains as well") {
    const auto data = noisy(300, 7);
    Model m(tiny_config());
    TrainConfig tc;
    tc.epochs = 2;
    tc.lr = 1e-3;
    tc.loss = LossSpace::normalized;
    const auto r = train(m, data, SplitSpec{}, tc);
    CHECK(std::isfinite(r.history.back().train_loss));
    CHECK(parse_loss_space("normalized") == LossSpace::normalized);
    CHECK_THROWS_AS(parse_loss_space("l1"), ConfigError);
    tc.batch_size = 0;
    CHECK_THROWS_AS(tc.validate(), ConfigError);
}
