// Acceptance runner: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include "../support/gradcheck.hpp"
#include "../support/primitive_cases.hpp"

#include "nst/metrics.hpp"
#include "nst/model.hpp"
#include "nst/oracle.hpp"
#include "nst/stationarization.hpp"
#include "nst/training.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

using namespace nst;
using nst::testing::random_leaf;

namespace {

struct Outcome {
    bool passed = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        m = std::max(m, std::abs(a.values()[i] - b.values()[i]));
    }
    return m;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

oracle::InstanceRanges oracle_ranges() {
    oracle::InstanceRanges r;
    r.max_len = 16;
    r.max_channels = 4;
    r.max_width = 8;
    r.max_scale = 100.0;
    return r;
}

constexpr std::size_t kOracleInstances = 1000;
constexpr std::uint64_t kOracleSeed = 20240601;

Outcome attention_identity() {
    const auto t0 = Clock::now();
    const auto s = oracle::verify_instances(kOracleInstances, kOracleSeed, 1e-6, oracle_ranges());
    const double secs = seconds_since(t0);
    const bool ok = s.passed() && s.instances.size() == kOracleInstances && secs < 30.0;
    return {ok, fmt::format("{} instances, {} failures, worst deviation {:.3e} (instance {}), {:.2f} s",
                            s.instances.size(), s.failures, s.worst_deviation, s.worst_index, secs)};
}

Outcome expansion_identity() {
    const auto s = oracle::verify_instances(kOracleInstances, kOracleSeed, 1e-6, oracle_ranges());
    double worst_expansion = 0.0;
    double worst_drop = 0.0;
    for (const auto& r : s.instances) {
        worst_expansion = std::max(worst_expansion, r.expansion);
        worst_drop = std::max(worst_drop, r.row_constant_drop);
    }
    const bool ok = worst_expansion < 1e-9 && worst_drop < 1e-10;
    return {ok, fmt::format("expansion {:.3e} (< 1e-9), constant drop {:.3e} (< 1e-10)", worst_expansion, worst_drop)};
}

Outcome gradients() {
    const auto t0 = Clock::now();
    double worst_primitive = 0.0;
    std::string worst_name;
    std::size_t primitives = 0;
    for (const auto& c : nst::testing::primitive_cases(1)) {
        const auto r = nst::testing::gradcheck(c.f, c.inputs);
        ++primitives;
        if (r.max_rel_error >= worst_primitive) {
            worst_primitive = r.max_rel_error;
            worst_name = c.name;
        }
    }

    ModelConfig cfg;
    cfg.input_len = 8;
    cfg.pred_len = 4;
    cfg.channels = 2;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.ffn_width = 64;
    cfg.projector_hidden = 8;
    cfg.dropout = 0.0;
    cfg.seed = 17;
    Model m(cfg);
    std::mt19937_64 rng(23);
    // Non-zero projector outputs so every factor path carries gradient.
    for (auto& [path, t] : m.parameters()) {
        if (path.find(".output.") != std::string::npos && path.rfind("projector.", 0) == 0) {
            for (auto& w : t.mutable_values()) {
                w = std::uniform_real_distribution<double>(-0.2, 0.2)(rng);
            }
        }
    }
    const auto x = random_leaf({2, 8, 2}, rng, -3.0, 3.0);
    const auto y = random_leaf({2, 4, 2}, rng, -3.0, 3.0);
    std::vector<Tensor> params;
    for (auto& [path, t] : m.parameters()) {
        params.push_back(t);
    }
    const auto e2e = nst::testing::gradcheck(
        [&](const std::vector<Tensor>&) { return mse_loss(m.forward(x, false).y_hat, y); }, params, 1e-5, 3);
    const double secs = seconds_since(t0);
    const bool ok = worst_primitive < 1e-4 && e2e.max_rel_error < 1e-3 && secs < 120.0;
    return {ok, fmt::format("{} primitives, worst {:.3e} ({}); model {:.3e} over {} sampled entries; {:.2f} s",
                            primitives, worst_primitive, worst_name, e2e.max_rel_error, e2e.checked, secs)};
}

Outcome stationarization() {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> g(0.0, 1.0);
    std::uniform_real_distribution<double> log_scale(-2.0, 2.0);
    std::uniform_real_distribution<double> offset(-1000.0, 1000.0);
    double round_trip = 0.0;
    double mean_dev = 0.0;
    double std_dev = 0.0;
    double affine = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t s = 4 + static_cast<std::size_t>(trial % 60);
        const std::size_t c = 1 + static_cast<std::size_t>(trial % 5);
        std::vector<double> v(s * c);
        std::vector<double> a(c);
        std::vector<double> b(c);
        for (std::size_t j = 0; j < c; ++j) {
            a[j] = std::pow(10.0, log_scale(rng));
            b[j] = offset(rng);
        }
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                v[i * c + j] = b[j] + a[j] * g(rng);
            }
        }
        const auto x = Tensor::from({s, c}, v);
        const auto n = normalize(x);
        const auto back = denormalize(n.x, n.stats, DenormMode::inverse);
        round_trip = std::max(round_trip, max_abs_diff(back, x));
        const auto nv = n.x.values();
        for (std::size_t j = 0; j < c; ++j) {
            double mu = 0.0;
            for (std::size_t i = 0; i < s; ++i) {
                mu += nv[i * c + j];
            }
            mu /= static_cast<double>(s);
            double var = 0.0;
            for (std::size_t i = 0; i < s; ++i) {
                var += (nv[i * c + j] - mu) * (nv[i * c + j] - mu);
            }
            mean_dev = std::max(mean_dev, std::abs(mu));
            std_dev = std::max(std_dev, std::abs(std::sqrt(var / static_cast<double>(s)) - 1.0));
        }
        std::vector<double> w(v.size());
        for (std::size_t i = 0; i < s; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                w[i * c + j] = 3.5 * v[i * c + j] - 42.0 * static_cast<double>(j + 1);
            }
        }
        affine = std::max(affine, max_abs_diff(normalize(Tensor::from({s, c}, w)).x, n.x));
    }
    const bool ok = round_trip < 1e-10 && mean_dev < 1e-9 && std_dev < 1e-6 && affine < 1e-9;
    return {ok, fmt::format("round trip {:.3e}, mean {:.3e}, std {:.3e}, affine {:.3e}", round_trip, mean_dev,
                            std_dev, affine)};
}

Outcome degeneracy() {
    ModelConfig cfg;
    cfg.input_len = 16;
    cfg.pred_len = 8;
    cfg.channels = 3;
    cfg.d_model = 32;
    cfg.n_heads = 4;
    cfg.ffn_width = 64;
    cfg.projector_hidden = 16;
    cfg.seed = 31;
    Model both(cfg);
    cfg.mode = AttentionMode::vanilla;
    Model plain(cfg);
    std::mt19937_64 rng(37);
    for (auto& [path, t] : both.parameters()) {
        if (path.rfind("projector.", 0) == 0 && path.find(".output.") == std::string::npos) {
            for (auto& w : t.mutable_values()) {
                w = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);
            }
        }
    }
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_leaf({4, 16, 3}, rng, -100.0, 100.0);
        worst = std::max(worst, max_abs_diff(both.forward(x).y_hat, plain.forward(x).y_hat));
    }
    return {worst < 1e-10, fmt::format("max |both - stationarization-only| = {:.3e} over 20 batches", worst)};
}

// Independent closed form for the default layout (C=7, d=512, ffn 2048,
// N=2, M=1, S=96, projector hidden 128).
constexpr std::size_t kDefaultBaseCount = 10519559;
constexpr std::size_t kDefaultProjectorCount = 16929;

Outcome parameter_overhead() {
    Model m(ModelConfig{});
    const auto counts = count_parameters(m.parameters());
    const double ratio = static_cast<double>(counts.projector) / static_cast<double>(counts.base);
    const bool ok = counts.base == kDefaultBaseCount && counts.projector == kDefaultProjectorCount &&
                    counts.base + counts.projector == m.parameters().count() && ratio < 0.01;
    return {ok, fmt::format("base {} (expected {}), projector {} (expected {}), overhead {:.4f}%", counts.base,
                            kDefaultBaseCount, counts.projector, kDefaultProjectorCount, 100.0 * ratio)};
}

struct ExperimentSettings {
    std::size_t seeds = 3;
    std::size_t epochs = 12;
    std::size_t train_stride = 4;
    double lr = 1e-3;
};

struct Variant {
    const char* name;
    AttentionMode mode;
    bool stationarize;
};

Outcome directional(const ExperimentSettings& settings) {
    const auto t0 = Clock::now();
    SyntheticSpec spec;
    spec.kind = SyntheticKind::trend_seasonal;
    spec.length = 4000;
    spec.channels = 3;
    spec.seed = 7;
    const Dataset data = generate_synthetic(spec);

    const std::vector<Variant> variants = {{"vanilla", AttentionMode::vanilla, false},
                                           {"stationarization-only", AttentionMode::vanilla, true},
                                           {"both", AttentionMode::both, true}};
    std::map<std::string, std::vector<double>> mse;
    std::map<std::string, std::vector<double>> rs_gap;
    for (std::size_t s = 0; s < settings.seeds; ++s) {
        for (const auto& v : variants) {
            ModelConfig mc;
            mc.input_len = 48;
            mc.pred_len = 24;
            mc.channels = 3;
            mc.d_model = 64;
            mc.n_heads = 4;
            mc.ffn_width = 256;
            mc.projector_hidden = 64;
            mc.mode = v.mode;
            mc.stationarize = v.stationarize;
            mc.seed = 100 + s;
            Model m(mc);
            TrainConfig tc;
            tc.epochs = settings.epochs;
            tc.lr = settings.lr;
            tc.train_stride = settings.train_stride;
            tc.seed = 100 + s;
            train(m, data, SplitSpec{}, tc);
            const EvalReport r = evaluate(m, data, SplitSpec{});
            mse[v.name].push_back(r.overall.mse);
            rs_gap[v.name].push_back(std::abs(r.relative.value().aggregate - 100.0));
            fmt::print("  seed {} {:<22} mse {:.4f} relative stationarity {:.2f}%\n", s, v.name, r.overall.mse,
                       r.relative->aggregate);
        }
    }
    const double m_van = median(mse["vanilla"]);
    const double m_stat = median(mse["stationarization-only"]);
    const double m_both = median(mse["both"]);
    const double g_stat = median(rs_gap["stationarization-only"]);
    const double g_both = median(rs_gap["both"]);
    const double secs = seconds_since(t0);
    const bool ok = m_both <= m_stat && m_stat <= m_van && g_both <= g_stat && secs <= 900.0;
    return {ok, fmt::format("median mse both {:.4f} <= stat-only {:.4f} <= vanilla {:.4f}; "
                            "median |rs - 100| both {:.2f} <= stat-only {:.2f}; {:.0f} s",
                            m_both, m_stat, m_van, g_both, g_stat, secs)};
}

// Monte Carlo thresholds from tests/oracles/adf_oracle.py (500 seeds, T = 2000).
constexpr double kRandomWalkP95 = -0.077510;
constexpr double kWhiteNoiseP5 = -9.798702;

std::vector<double> gaussian_series(std::uint64_t seed, std::size_t n, bool walk) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> y(n);
    double acc = 0.0;
    for (auto& v : y) {
        acc = walk ? acc + g(rng) : g(rng);
        v = acc;
    }
    return y;
}

Outcome adf_sanity() {
    int wn_ok = 0;
    int rw_ok = 0;
    double scale_dev = 0.0;
    for (std::uint64_t seed = 900000; seed < 900100; ++seed) {
        const auto wn = gaussian_series(seed, 2000, false);
        const auto rw = gaussian_series(seed + 1000000, 2000, true);
        const double s_wn = adf_statistic(wn).statistic;
        const double s_rw = adf_statistic(rw).statistic;
        wn_ok += s_wn < kRandomWalkP95;
        rw_ok += s_rw > kWhiteNoiseP5;
        for (double k : {1e-3, 7.5, 1e4}) {
            std::vector<double> scaled(rw);
            for (auto& v : scaled) {
                v = k * v + 3.0;
            }
            scale_dev = std::max(scale_dev, std::abs(adf_statistic(scaled).statistic - s_rw));
        }
    }
    const bool ok = wn_ok >= 95 && rw_ok >= 95 && scale_dev < 1e-6;
    return {ok, fmt::format("white noise below rw p95: {}/100, random walk above wn p5: {}/100, scale drift {:.3e}",
                            wn_ok, rw_ok, scale_dev)};
}

Outcome determinism() {
    SyntheticSpec spec;
    spec.length = 600;
    spec.channels = 2;
    spec.seed = 11;
    auto run = [&] {
        const Dataset data = generate_synthetic(spec);
        ModelConfig mc;
        mc.input_len = 16;
        mc.pred_len = 8;
        mc.channels = 2;
        mc.d_model = 16;
        mc.n_heads = 2;
        mc.ffn_width = 32;
        mc.projector_hidden = 16;
        mc.seed = 3;
        Model m(mc);
        TrainConfig tc;
        tc.epochs = 2;
        tc.lr = 1e-3;
        tc.train_stride = 4;
        tc.seed = 9;
        const auto tr = train(m, data, SplitSpec{}, tc);
        const auto ev = evaluate(m, data, SplitSpec{});
        std::vector<double> out;
        for (const auto& rec : tr.history) {
            out.insert(out.end(), {rec.train_loss, rec.val_mse, rec.val_mae});
        }
        out.insert(out.end(), {ev.overall.mse, ev.overall.mae, ev.relative.value().aggregate});
        const auto v = oracle::verify_instances(50, 5, 1e-6, oracle_ranges());
        out.push_back(v.worst_deviation);
        out.insert(out.end(), data.values.begin(), data.values.end());
        return out;
    };
    const auto a = run();
    const auto b = run();
    const bool same = a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    return {same, fmt::format("{} metric values compared bitwise across two identical runs", a.size())};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria runner"};
    std::vector<int> only;
    ExperimentSettings exp;
    app.add_option("--criterion", only, "Run only these criteria (1-9)")->check(CLI::Range(1, 9));
    app.add_option("--experiment-seeds", exp.seeds, "Seeds for the forecasting experiment");
    app.add_option("--experiment-epochs", exp.epochs, "Epochs per forecasting run");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"attention reconstruction identity", attention_identity},
        {"score expansion and constant drop", expansion_identity},
        {"gradient correctness", gradients},
        {"stationarization contracts", stationarization},
        {"zeroed projector degeneracy", degeneracy},
        {"parameter overhead", parameter_overhead},
        {"directional forecasting experiment", [&] { return directional(exp); }},
        {"ADF sanity", adf_sanity},
        {"determinism", determinism},
    };
    const std::set<int> selected(only.begin(), only.end());
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.contains(id)) {
            continue;
        }
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, fmt::format("threw: {}", e.what())};
        }
        failed += o.passed ? 0 : 1;
        fmt::print("{} criterion {}: {}: {}\n", o.passed ? "PASS" : "FAIL", id, criteria[i].first, o.detail);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
