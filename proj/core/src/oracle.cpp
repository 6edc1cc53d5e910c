#include "nst/oracle.hpp"

#include "nst/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

namespace nst::oracle {

namespace {

Matrix random_gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = dist(rng);
        }
    }
    return m;
}

Matrix embed(const LinearStack& stack, const Matrix& x) {
    Matrix e = x * stack.embedding;
    if (stack.embedding_activation == Activation::tanh) {
        e = e.array().tanh().matrix();
    }
    return e;
}

RowVector column_means(const Matrix& x) {
    return x.colwise().mean();
}

/// Common population standard deviation of all columns.
double shared_sigma(const Matrix& x, double tolerance) {
    const RowVector mu = column_means(x);
    const Matrix centered = x.rowwise() - mu;
    const RowVector var = centered.array().square().colwise().mean().matrix();
    const double lo = var.minCoeff();
    const double hi = var.maxCoeff();
    if (!(lo > 0.0)) {
        throw PreconditionError("input has a constant column; sigma is zero");
    }
    if ((hi - lo) > tolerance * hi) {
        throw PreconditionError(fmt::format("variables do not share one variance (min {}, max {})", lo, hi));
    }
    return std::sqrt(var.mean());
}

double max_abs(const Matrix& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

/// Softmax((tau Q'K'^T + 1 delta^T) / sqrt(d)) for one layer.
Matrix destat_map(const Matrix& q_norm, const Matrix& k_norm, double tau, const Vector& delta) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(q_norm.cols()));
    Matrix scores = tau * (q_norm * k_norm.transpose());
    scores.rowwise() += delta.transpose();
    return softmax_rows(scores * scale);
}

} // namespace

LinearStack LinearStack::random(std::size_t channels, std::size_t width, std::size_t n_layers,
                                std::mt19937_64& rng, bool residual) {
    LinearStack s;
    const auto c = static_cast<Eigen::Index>(channels);
    const auto d = static_cast<Eigen::Index>(width);
    s.embedding = random_gaussian(c, d, 1.0 / std::sqrt(static_cast<double>(channels)), rng);
    for (std::size_t l = 0; l < n_layers; ++l) {
        const double sd = 1.0 / std::sqrt(static_cast<double>(width));
        s.layers.push_back({random_gaussian(d, d, sd, rng), random_gaussian(d, d, sd, rng),
                            random_gaussian(d, d, sd, rng)});
    }
    s.residual = residual;
    return s;
}

Matrix softmax_rows(const Matrix& scores) {
    Matrix out(scores.rows(), scores.cols());
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        const double mx = scores.row(i).maxCoeff();
        const RowVector e = (scores.row(i).array() - mx).exp().matrix();
        out.row(i) = e / e.sum();
    }
    return out;
}

Matrix shared_variance_project(const Matrix& x) {
    const RowVector mu = column_means(x);
    Matrix out = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const Vector centered = x.col(c).array() - mu(c);
        const double sd = std::sqrt(centered.squaredNorm() / static_cast<double>(x.rows()));
        if (!(sd > 0.0)) {
            throw PreconditionError(fmt::format("column {} is constant; cannot rescale to unit variance", c));
        }
        out.col(c) = (centered / sd).array() + mu(c);
    }
    return out;
}

Matrix raw_attention_map(const LinearStack& stack, const Matrix& x) {
    if (stack.layers.empty()) {
        throw PreconditionError("linear stack has no attention layer");
    }
    const Matrix e = embed(stack, x);
    const Matrix q = e * stack.layers[0].query;
    const Matrix k = e * stack.layers[0].key;
    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    return softmax_rows((q * k.transpose()) * scale);
}

ExactFactors exact_factors(const LinearStack& stack, const Matrix& x, double variance_tolerance) {
    const double sigma = shared_sigma(x, variance_tolerance);
    const Matrix e = embed(stack, x);
    const Matrix q = e * stack.layers.at(0).query;
    const Matrix k = e * stack.layers.at(0).key;
    const RowVector mu_q = column_means(q);
    return {sigma * sigma, k * mu_q.transpose()};
}

Matrix reconstructed_attention_map(const LinearStack& stack, const Matrix& x, double variance_tolerance) {
    const ExactFactors f = exact_factors(stack, x, variance_tolerance);
    const double sigma = std::sqrt(f.tau);
    const Matrix x_norm = (x.rowwise() - column_means(x)) / sigma;
    const Matrix e = embed(stack, x_norm);
    return destat_map(e * stack.layers[0].query, e * stack.layers[0].key, f.tau, f.delta);
}

OracleReport multilayer_identity_check(const LinearStack& stack, const Matrix& x, double tolerance) {
    const double sigma = shared_sigma(x, 1e-9);
    const double tau = sigma * sigma;
    const RowVector mu_x = column_means(x);
    const Matrix x_norm = (x.rowwise() - mu_x) / sigma;

    // Under linearity each normalised activation equals (raw - 1 c^T) / sigma
    // for a row offset c that is propagated analytically from mu_x.
    Matrix raw = embed(stack, x);
    Matrix exact_path = embed(stack, x_norm);
    Matrix shared_path = exact_path;
    RowVector offset = mu_x * stack.embedding;
    Vector shared_delta;

    OracleReport report;
    report.tolerance = tolerance;
    report.passed = true;
    const double scale = 1.0 / std::sqrt(static_cast<double>(stack.width()));
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        const auto& layer = stack.layers[l];
        const Matrix q = raw * layer.query;
        const Matrix k = raw * layer.key;
        const Matrix v = raw * layer.value;
        const Matrix a_raw = softmax_rows((q * k.transpose()) * scale);

        const RowVector offset_q = offset * layer.query;
        const Vector delta = k * offset_q.transpose();
        if (l == 0) {
            shared_delta = delta;
        }
        const Matrix a_exact = destat_map(exact_path * layer.query, exact_path * layer.key, tau, delta);
        const Matrix a_shared = destat_map(shared_path * layer.query, shared_path * layer.key, tau, shared_delta);

        LayerDeviation dev{l, max_abs(a_raw - a_exact), max_abs(a_raw - a_shared)};
        report.passed = report.passed && dev.exact <= tolerance;
        report.layers.push_back(dev);

        Matrix next_raw = a_raw * v;
        Matrix next_exact = a_exact * (exact_path * layer.value);
        Matrix next_shared = a_shared * (shared_path * layer.value);
        RowVector next_offset = offset * layer.value;
        if (stack.residual) {
            next_raw += raw;
            next_exact += exact_path;
            next_shared += shared_path;
            next_offset += offset;
        }
        raw = std::move(next_raw);
        exact_path = std::move(next_exact);
        shared_path = std::move(next_shared);
        offset = std::move(next_offset);
    }
    return report;
}

ExpansionCheck expansion_identity(const LinearStack& stack, const Matrix& x) {
    const double sigma = shared_sigma(x, 1e-9);
    const double tau = sigma * sigma;
    const Matrix x_norm = (x.rowwise() - column_means(x)) / sigma;
    const auto& layer = stack.layers.at(0);
    const Matrix e = embed(stack, x);
    const Matrix en = embed(stack, x_norm);
    const Matrix q = e * layer.query;
    const Matrix k = e * layer.key;
    const Matrix qn = en * layer.query;
    const Matrix kn = en * layer.key;
    const RowVector mu_q = column_means(q);
    const RowVector mu_k = column_means(k);
    const auto s = q.rows();
    const Vector ones = Vector::Ones(s);

    const Matrix key_shift = ones * (k * mu_q.transpose()).transpose(); // 1 mu_Q^T K^T
    const Matrix row_shift = (q * mu_k.transpose()) * ones.transpose(); // Q mu_K 1^T
    const double cross = mu_q.dot(mu_k);
    const Matrix constant = Matrix::Constant(s, s, cross);

    const Matrix lhs = qn * kn.transpose();
    const Matrix rhs = (q * k.transpose() - key_shift - row_shift + constant) / tau;

    const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
    const Matrix full = softmax_rows((tau * lhs + key_shift + row_shift - constant) * scale);
    const Matrix dropped = softmax_rows((tau * lhs + key_shift) * scale);
    return {max_abs(lhs - rhs), max_abs(full - dropped)};
}

Instance random_instance(std::mt19937_64& rng, const InstanceRanges& ranges, std::size_t n_layers) {
    std::uniform_int_distribution<std::size_t> len_dist(ranges.min_len, ranges.max_len);
    std::uniform_int_distribution<std::size_t> ch_dist(1, ranges.max_channels);
    std::uniform_int_distribution<std::size_t> width_dist(1, ranges.max_width);
    std::uniform_real_distribution<double> entry(-ranges.entry_bound, ranges.entry_bound);
    std::uniform_real_distribution<double> log_scale(std::log10(ranges.min_scale), std::log10(ranges.max_scale));

    Instance inst;
    const std::size_t s = len_dist(rng);
    const std::size_t c = ch_dist(rng);
    const std::size_t d = width_dist(rng);
    Matrix base(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(c));
    for (;;) {
        for (Eigen::Index i = 0; i < base.rows(); ++i) {
            for (Eigen::Index j = 0; j < base.cols(); ++j) {
                base(i, j) = entry(rng);
            }
        }
        const RowVector mu = column_means(base);
        const RowVector var = (base.rowwise() - mu).array().square().colwise().mean().matrix();
        if (var.minCoeff() > 1e-6) {
            break;
        }
    }
    inst.scale = std::pow(10.0, log_scale(rng));
    // Unit shared variance, then a common scale and per-variable offsets.
    const Matrix unit = shared_variance_project(base);
    const RowVector unit_mu = column_means(unit);
    RowVector offset(static_cast<Eigen::Index>(c));
    for (Eigen::Index j = 0; j < offset.size(); ++j) {
        offset(j) = entry(rng) * inst.scale;
    }
    inst.x = ((unit.rowwise() - unit_mu) * inst.scale).rowwise() + offset;
    inst.stack = LinearStack::random(c, d, n_layers, rng);
    return inst;
}

VerifySummary verify_instances(std::size_t count, std::uint64_t seed, double tolerance, const InstanceRanges& ranges) {
    std::mt19937_64 rng(seed);
    VerifySummary summary;
    summary.tolerance = tolerance;
    summary.instances.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Instance inst = random_instance(rng, ranges);
        InstanceResult r;
        r.index = i;
        r.length = static_cast<std::size_t>(inst.x.rows());
        r.channels = static_cast<std::size_t>(inst.x.cols());
        r.width = inst.stack.width();
        r.scale = inst.scale;
        // Tolerance on the shared-variance precondition is loose enough for
        // the rounding left by the projection at large offsets.
        r.deviation = max_abs(raw_attention_map(inst.stack, inst.x) -
                              reconstructed_attention_map(inst.stack, inst.x, 1e-9));
        const ExpansionCheck e = expansion_identity(inst.stack, inst.x);
        r.expansion = e.expansion;
        r.row_constant_drop = e.row_constant_drop;
        r.passed = r.deviation <= tolerance;
        if (!r.passed) {
            ++summary.failures;
        }
        if (i == 0 || r.deviation > summary.worst_deviation) {
            summary.worst_deviation = r.deviation;
            summary.worst_index = i;
        }
        summary.instances.push_back(r);
    }
    return summary;
}

} // namespace nst::oracle
