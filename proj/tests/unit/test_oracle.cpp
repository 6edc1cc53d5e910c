#include "doctest.h"

#include "nst/errors.hpp"
#include "nst/oracle.hpp"

using namespace nst;
using namespace nst::oracle;

TEST_CASE("single-layer identity holds on random instances") {
    const auto summary = verify_instances(200, 42, 1e-6);
    CHECK(summary.passed());
    CHECK(summary.worst_deviation < 1e-6);
    for (const auto& r : summary.instances) {
        CHECK(r.expansion < 1e-9);
        CHECK(r.row_constant_drop < 1e-10);
    }
}

TEST_CASE("impossibly tight tolerance fails and reports the worst instance") {
    const auto summary = verify_instances(50, 42, 1e-18);
    CHECK_FALSE(summary.passed());
    CHECK(summary.worst_deviation > 1e-18);
    CHECK(summary.instances[summary.worst_index].deviation == summary.worst_deviation);
}

TEST_CASE("zero instances pass trivially") {
    const auto summary = verify_instances(0, 1, 1e-6);
    CHECK(summary.passed());
    CHECK(summary.instances.empty());
}

TEST_CASE("identical time points give uniform attention") {
    std::mt19937_64 rng(1);
    const auto stack = LinearStack::random(2, 3, 1, rng);
    Matrix x(4, 2);
    x << 1, 2, 1, 2, 1, 2, 1, 2;
    const Matrix a = raw_attention_map(stack, x);
    CHECK((a.array() - 0.25).abs().maxCoeff() < 1e-15);
}

TEST_CASE("shared variance projection equalises column variances") {
    Matrix x(5, 2);
    x << 1, 10, 2, 30, 4, 20, 8, 50, 16, 40;
    const Matrix p = shared_variance_project(x);
    const Eigen::RowVectorXd mu = p.colwise().mean();
    const Eigen::RowVectorXd var = (p.rowwise() - mu).array().square().colwise().mean();
    CHECK(std::abs(var(0) - 1.0) < 1e-12);
    CHECK(std::abs(var(1) - 1.0) < 1e-12);
    CHECK(std::abs(mu(0) - x.col(0).mean()) < 1e-12);
    Matrix constant = Matrix::Constant(4, 1, 3.0);
    CHECK_THROWS_AS(shared_variance_project(constant), PreconditionError);
}

TEST_CASE("unequal variances violate the precondition") {
    std::mt19937_64 rng(2);
    const auto stack = LinearStack::random(2, 3, 1, rng);
    Matrix x(4, 2);
    x << 1, 0, 2, 0, 3, 10, 4, 10;
    CHECK_THROWS_AS(reconstructed_attention_map(stack, x), PreconditionError);
}

TEST_CASE("multilayer stack: exact per-layer factors recover every layer") {
    std::mt19937_64 rng(3);
    for (bool residual : {false, true}) {
        for (int trial = 0; trial < 20; ++trial) {
            auto inst = random_instance(rng, {}, 3);
            inst.stack.residual = residual;
            const auto report = multilayer_identity_check(inst.stack, inst.x, 1e-6);
            CHECK(report.passed);
            CHECK(report.layers.size() == 3);
            CHECK(report.layers[0].shared == report.layers[0].exact);
        }
    }
}

TEST_CASE("first-layer factors reused at depth are only an approximation") {
    std::mt19937_64 rng(4);
    InstanceRanges ranges;
    ranges.min_len = 8;
    ranges.max_scale = 1.0;
    ranges.min_scale = 0.5;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto inst = random_instance(rng, ranges, 2);
        const auto report = multilayer_identity_check(inst.stack, inst.x, 1e-6);
        worst = std::max(worst, report.layers[1].shared);
    }
    CHECK(worst > 1e-3);
}

TEST_CASE("a nonlinear embedding breaks the identity") {
    std::mt19937_64 rng(5);
    InstanceRanges ranges;
    ranges.min_len = 8;
    ranges.min_scale = 1.0;
    ranges.max_scale = 3.0;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        auto inst = random_instance(rng, ranges);
        inst.stack.embedding_activation = Activation::tanh;
        worst = std::max(worst, (raw_attention_map(inst.stack, inst.x) -
                                 reconstructed_attention_map(inst.stack, inst.x)).cwiseAbs().maxCoeff());
    }
    CHECK(worst > 1e-3);
}

TEST_CASE("instances respect the sampling ranges") {
    std::mt19937_64 rng(6);
    for (int i = 0; i < 100; ++i) {
        const auto inst = random_instance(rng);
        CHECK(inst.x.rows() >= 2);
        CHECK(inst.x.rows() <= 16);
        CHECK(inst.x.cols() <= 4);
        CHECK(inst.stack.width() <= 8);
        CHECK(inst.scale >= 0.1);
        CHECK(inst.scale <= 100.0);
    }
}
