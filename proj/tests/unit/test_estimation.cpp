#include <catch_amalgamated.hpp>

#include <cmath>

#include "isac/estimation.hpp"

using namespace isac;
using Catch::Approx;

namespace {

double rel_frobenius(const CMatrix& a, const CMatrix& b) { return (a - b).norm() / b.norm(); }

struct SmallProblem {
    int m_bs = 3;
    int m_ue = 2;
    HermitianMatrix c;
    std::vector<double> zeta;
    PilotLink link;

    int n() const { return m_bs * m_ue; }
};

SmallProblem small_problem(int p, int nu_p, Rng& rng) {
    SmallProblem s;
    const std::vector<double> clusters = {0.2, -0.7};
    const HermitianMatrix bs = local_scattering_covariance(clusters, 0.3, s.m_bs);
    s.c = HermitianMatrix(kronecker(CMatrix::Identity(s.m_ue, s.m_ue), bs.matrix()));
    const std::vector<double> all = {1.0, 0.95, 0.85, 0.7, 0.5, 0.3};
    s.zeta.assign(all.begin(), all.begin() + p + 1);
    s.link.pilot_precoder = complex_normal(s.m_ue, s.m_ue, rng) + 2.0 * CMatrix::Identity(s.m_ue, s.m_ue);
    s.link.nu_p = nu_p;
    s.link.alpha = 0.3;
    s.link.tau_p = 4;
    s.link.noise_var = 0.5;
    return s;
}

// Literal stacked-form MMSE: D = I_{p_tot} (x) 1_{nu_p} (x) (W P)^T (x) I,
// M = T(zeta) (x) C, E = zeta^T (x) C.
struct LiteralMmse {
    CMatrix filter;
    CMatrix xi_hat;
};

LiteralMmse literal_mmse(const SmallProblem& s) {
    const int n = s.n();
    const int p_tot = static_cast<int>(s.zeta.size());
    const CMatrix g0 = kronecker(s.link.pilot_precoder.transpose(), CMatrix::Identity(s.m_bs, s.m_bs));
    const CMatrix d_block = kronecker(CMatrix::Ones(s.link.nu_p, 1), g0);
    const CMatrix d = kronecker(CMatrix::Identity(p_tot, p_tot), d_block);
    const CMatrix t = toeplitz_hermitian(std::span<const double>(s.zeta)).matrix();
    const CMatrix m = kronecker(t, s.c.matrix());
    CMatrix zrow(1, p_tot);
    for (int r = 0; r < p_tot; ++r) zrow(0, r) = s.zeta[static_cast<std::size_t>(r)];
    const CMatrix e = kronecker(zrow, s.c.matrix());
    const double a2t = s.link.alpha * s.link.alpha * s.link.tau_p;
    CMatrix a_bar = a2t * d * m * d.adjoint();
    a_bar.diagonal().array() += s.link.noise_var;
    const CMatrix a_inv = a_bar.inverse();
    LiteralMmse out;
    out.filter = s.link.alpha * std::sqrt(double(s.link.tau_p)) * e * d.adjoint() * a_inv;
    out.xi_hat = a2t * e * d.adjoint() * a_inv * d * e.adjoint();
    (void)n;
    return out;
}

// One stacked observation of the small problem plus the true h_b.
std::pair<CVector, CVector> draw_observation(const SmallProblem& s, const TrajectorySampler& sampler, Rng& rng) {
    const int n = s.n();
    const int p_tot = static_cast<int>(s.zeta.size());
    const CMatrix traj = sampler.draw(rng);
    const CMatrix g0 = s.link.alpha * std::sqrt(double(s.link.tau_p)) *
                       kronecker(s.link.pilot_precoder.transpose(), CMatrix::Identity(s.m_bs, s.m_bs));
    CVector y(static_cast<Index>(n) * s.link.nu_p * p_tot);
    const double sd = std::sqrt(s.link.noise_var);
    for (int r = 0; r < p_tot; ++r) {
        for (int q = 0; q < s.link.nu_p; ++q) {
            y.segment((static_cast<Index>(r) * s.link.nu_p + q) * n, n) =
                g0 * traj.col(r) + sd * complex_normal(n, 1, rng);
        }
    }
    return {y, traj.col(0)};
}

} // namespace

// -------------------------------------------------------------------------
// Pilots
// -------------------------------------------------------------------------

TEST_CASE("pilots are mutually orthogonal", "[estimation]") {
    const PilotBook one = generate_pilots(1, 1, 1);
    CHECK(std::abs(one[0](0, 0) - cd(1.0, 0.0)) < 1e-15);

    const PilotBook book = generate_pilots(5, 2, 10);
    REQUIRE(book.num_ues() == 5);
    for (int k = 0; k < 5; ++k) {
        CHECK(book[k].rows() == 2);
        CHECK(book[k].cols() == 10);
        for (int l = 0; l < 5; ++l) {
            const CMatrix g = book[k] * book[l].adjoint();
            const CMatrix expect = k == l ? CMatrix(10.0 * CMatrix::Identity(2, 2)) : CMatrix(CMatrix::Zero(2, 2));
            CHECK((g - expect).norm() < 1e-12);
        }
    }
    CHECK_THROWS_AS(generate_pilots(5, 2, 9), ConfigError);
}

TEST_CASE("despreading", "[estimation]") {
    const PilotBook book = generate_pilots(2, 2, 4);
    CHECK((despread(book[0], book[0]) - 2.0 * CMatrix::Identity(2, 2)).norm() < 1e-12);
    CHECK(despread(book[1], book[0]).norm() < 1e-12);

    // noiseless single-UE observation despreads to alpha sqrt(tau_p) H W
    Rng rng(51);
    const CMatrix h = complex_normal(3, 2, rng);
    const CMatrix w = complex_normal(2, 2, rng);
    const CMatrix y = 0.7 * h * w * book[1];
    CHECK((despread(y, book[1]) - 0.7 * 2.0 * h * w).norm() < 1e-12);

    // white noise stays white with unchanged variance
    CMatrix acc = CMatrix::Zero(2, 2);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const CMatrix n = complex_normal(1, 4, rng);
        const CMatrix z = despread(n, book[0]);
        acc += z.adjoint() * z;
    }
    CHECK(rel_frobenius(acc / draws, CMatrix::Identity(2, 2)) < 0.05);
    CHECK_THROWS_AS(despread(CMatrix::Zero(3, 5), book[0]), ContractError);
}

// -------------------------------------------------------------------------
// MMSE estimator
// -------------------------------------------------------------------------

TEST_CASE("scalar two-block MMSE example", "[estimation]") {
    const HermitianMatrix c = HermitianMatrix::identity(1);
    const std::vector<double> zeta = {1.0, 0.9};
    PilotLink link;
    link.pilot_precoder = CMatrix::Identity(1, 1);
    link.nu_p = 1;
    link.alpha = 1.0;
    link.tau_p = 1;
    link.noise_var = 1.0;
    const MmseChannelEstimator est(c, zeta, link);
    // A = [[2, .9], [.9, 2]], filter = [1, .9] A^{-1}
    RMatrix a(2, 2);
    a << 2.0, 0.9, 0.9, 2.0;
    const RVector v = (RVector(2) << 1.0, 0.9).finished();
    const RVector f = a.inverse() * v;
    CHECK(std::abs(est.filter()(0, 0) - f(0)) < 1e-12);
    CHECK(std::abs(est.filter()(0, 1) - f(1)) < 1e-12);
    const double mse = 1.0 - v.dot(a.inverse() * v);
    CHECK(est.xi_tilde().matrix()(0, 0).real() == Approx(mse).epsilon(1e-12));
    CHECK(mse == Approx(0.37304075).epsilon(1e-7));
}

TEST_CASE("single-shot estimator is the textbook MMSE", "[estimation]") {
    Rng rng(52);
    SmallProblem s = small_problem(0, 1, rng);
    s.link.pilot_precoder = CMatrix::Identity(2, 2);
    const double g = s.link.alpha * std::sqrt(double(s.link.tau_p));
    const MmseChannelEstimator est(s.c, s.zeta, s.link);
    CMatrix inner = g * g * s.c.matrix();
    inner.diagonal().array() += s.link.noise_var;
    const CMatrix expect = g * s.c.matrix() * inner.inverse();
    CHECK((est.filter() - expect).norm() < 1e-10 * expect.norm());
}

TEST_CASE("sufficient-statistic filter equals the literal stacked formula", "[estimation]") {
    Rng rng(53);
    for (int p : {0, 1, 2}) {
        for (int nu : {1, 3}) {
            const SmallProblem s = small_problem(p, nu, rng);
            const MmseChannelEstimator est(s.c, s.zeta, s.link);
            const LiteralMmse lit = literal_mmse(s);
            CHECK((est.filter() - lit.filter).norm() < 1e-9 * lit.filter.norm());
            CHECK((est.xi_hat().matrix() - lit.xi_hat).norm() < 1e-9 * lit.xi_hat.norm());
            const CVector y = complex_normal(est.observation_dim(), 1, rng);
            CHECK((est.apply(y) - lit.filter * y).norm() < 1e-9 * (lit.filter * y).norm());
        }
    }
}

TEST_CASE("estimate and error covariances split C", "[estimation]") {
    Rng rng(54);
    const SmallProblem s = small_problem(2, 2, rng);
    const MmseChannelEstimator est(s.c, s.zeta, s.link);
    CHECK((est.xi_hat().matrix() + est.xi_tilde().matrix() - s.c.matrix()).norm() < 1e-9);
    CHECK(est.xi_hat().is_positive_semidefinite(1e-9));
    CHECK(est.xi_tilde().is_positive_semidefinite(1e-9));
    const ChannelEstimate e = mmse_estimate(CVector::Zero(est.observation_dim()), s.c, s.zeta, s.link);
    CHECK(e.h_hat.norm() == 0.0);
    CHECK_THROWS_AS(est.apply(CVector::Zero(3)), ContractError);
}

TEST_CASE("noiseless single-shot estimate recovers the channel", "[estimation]") {
    Rng rng(55);
    SmallProblem s = small_problem(0, 1, rng);
    s.link.noise_var = 1e-12;
    const MmseChannelEstimator est(s.c, s.zeta, s.link);
    CHECK(est.xi_tilde().trace() < 1e-6 * s.c.trace());
}

TEST_CASE("estimate covariance and orthogonality by Monte-Carlo", "[estimation]") {
    Rng rng(56);
    const SmallProblem s = small_problem(2, 2, rng);
    const MmseChannelEstimator est(s.c, s.zeta, s.link);
    const TrajectorySampler sampler(s.c, s.zeta, static_cast<int>(s.zeta.size()));
    const int n = s.n();
    CMatrix cov_hat = CMatrix::Zero(n, n);
    CMatrix cross = CMatrix::Zero(n, n);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const auto [y, h] = draw_observation(s, sampler, rng);
        const CVector hh = est.apply(y);
        cov_hat += hh * hh.adjoint();
        cross += hh * (h - hh).adjoint();
    }
    cov_hat /= draws;
    cross /= draws;
    CHECK(rel_frobenius(cov_hat, est.xi_hat().matrix()) < 0.05);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double scale = std::sqrt(est.xi_hat().matrix()(i, i).real() * est.xi_tilde().matrix()(j, j).real());
            CHECK(std::abs(cross(i, j)) < 0.05 * scale);
        }
    }
}

TEST_CASE("MSE is non-increasing in the estimator depth and in nu_p", "[estimation]") {
    Rng rng(57);
    const SmallProblem base = small_problem(5, 1, rng);
    double prev = std::numeric_limits<double>::infinity();
    for (int p : {0, 1, 2, 5}) {
        SmallProblem s = base;
        s.zeta.resize(static_cast<std::size_t>(p) + 1);
        const double mse = MmseChannelEstimator(s.c, s.zeta, s.link).xi_tilde().trace();
        CHECK(mse <= prev + 1e-9);
        prev = mse;
    }
    prev = std::numeric_limits<double>::infinity();
    for (int nu : {1, 2, 3, 5}) {
        SmallProblem s = base;
        s.link.nu_p = nu;
        const double mse = MmseChannelEstimator(s.c, s.zeta, s.link).xi_tilde().trace();
        CHECK(mse <= prev + 1e-9);
        prev = mse;
    }
}

TEST_CASE("uncorrelated blocks collapse to the block-fading estimator", "[estimation]") {
    Rng rng(58);
    SmallProblem deep = small_problem(3, 2, rng);
    deep.zeta = {1.0, 0.0, 0.0, 0.0};
    SmallProblem shallow = deep;
    shallow.zeta = {1.0};
    const MmseChannelEstimator a(deep.c, deep.zeta, deep.link);
    const MmseChannelEstimator b(shallow.c, shallow.zeta, shallow.link);
    const Index cur = b.observation_dim();
    CHECK((a.filter().leftCols(cur) - b.filter()).norm() < 1e-12 * b.filter().norm());
    CHECK(a.filter().rightCols(a.observation_dim() - cur).norm() < 1e-12 * b.filter().norm());
    CHECK((a.xi_tilde().matrix() - b.xi_tilde().matrix()).norm() < 1e-12 * b.xi_tilde().matrix().norm());
}

// -------------------------------------------------------------------------
// Error contractions, combining, precoding
// -------------------------------------------------------------------------

TEST_CASE("error contractions match Monte-Carlo", "[estimation]") {
    Rng rng(59);
    const int m_bs = 3, m_ue = 2;
    const CMatrix root = complex_normal(m_bs * m_ue, m_bs * m_ue, rng);
    const HermitianMatrix xi(CMatrix(root * root.adjoint()));
    const CMatrix wb = complex_normal(m_ue, m_ue, rng);
    const CMatrix w = wb * wb.adjoint();
    const CMatrix s = psd_sqrt(xi);
    CMatrix acc_w = CMatrix::Zero(m_bs, m_bs), acc = acc_w;
    const int draws = 10000;
    for (int d = 0; d < draws; ++d) {
        const CVector e = s * complex_normal(m_bs * m_ue, 1, rng);
        const CMatrix h = reshape_channel(e, m_ue);
        acc_w += h * w * h.adjoint();
        acc += h * h.adjoint();
    }
    CHECK(rel_frobenius(acc_w / draws, error_weighted_outer(xi, w)) < 0.05);
    CHECK(rel_frobenius(acc / draws, error_outer(xi, m_ue)) < 0.05);
    CHECK((error_outer(xi, m_ue) - error_weighted_outer(xi, CMatrix::Identity(m_ue, m_ue))).norm() < 1e-12);
}

TEST_CASE("combiner and precoder limits", "[estimation]") {
    Rng rng(60);
    const int m_bs = 4;
    const CVector h = complex_normal(m_bs, 1, rng);
    const HermitianMatrix zero(CMatrix(CMatrix::Zero(m_bs, m_bs)));
    const CMatrix w_bar = CMatrix::Constant(1, 1, 0.8);
    const double alpha = 0.5, noise = 0.1;
    std::vector<UeChannelState> one = {{h, zero, w_bar, alpha}};

    CMatrix inner = noise * CMatrix::Identity(m_bs, m_bs) + alpha * alpha * h * (w_bar * w_bar.adjoint()) * h.adjoint();
    const CMatrix expect = inner.inverse() * h * w_bar;
    CHECK((mmse_combiner(one, 0, noise) - expect).norm() < 1e-10 * expect.norm());

    const CMatrix f = mmse_precoder(one, 1e-3);
    CHECK(f.col(0).norm() == Approx(1.0));
    CHECK(std::abs(std::abs(f.col(0).dot(h.normalized())) - 1.0) < 1e-9);

    // combiner direction is invariant to a common power scaling
    const HermitianMatrix zero2(CMatrix(CMatrix::Zero(2 * m_bs, 2 * m_bs)));
    std::vector<UeChannelState> two = {{complex_normal(m_bs, 2, rng), zero2, CMatrix::Identity(2, 2), 0.3},
                                       {complex_normal(m_bs, 2, rng), zero2, CMatrix::Identity(2, 2), 0.6}};
    two[0].xi_tilde = HermitianMatrix(CMatrix(0.1 * CMatrix::Identity(2 * m_bs, 2 * m_bs)));
    std::vector<UeChannelState> scaled = two;
    for (auto& u : scaled) u.alpha *= 10.0;
    const CMatrix t1 = mmse_combiner(two, 0, noise);
    const CMatrix t2 = mmse_combiner(scaled, 0, 100.0 * noise);
    CHECK((t1 / t1.norm() - t2 / t2.norm()).norm() < 1e-10);

    const CMatrix fk = mmse_precoder(two, noise);
    for (Index c = 0; c < fk.cols(); ++c) CHECK(fk.col(c).norm() == Approx(1.0));
    two[1].xi_tilde = zero;
    CHECK_THROWS_AS(mmse_combiner(two, 0, noise), ContractError);
}

// -------------------------------------------------------------------------
// Spectral efficiency
// -------------------------------------------------------------------------

namespace {

ScenarioConfig se_scenario() {
    ScenarioConfig cfg = default_scenario();
    cfg.m_bs_tx = 8;
    cfg.tau_c = 30;
    cfg.tau_dl = 15;
    cfg.n_symbols = 30;
    cfg.n_prb_ue = 2;
    return cfg;
}

} // namespace

TEST_CASE("pre-log factors", "[estimation]") {
    const ScenarioConfig cfg = default_scenario();
    CHECK(pre_log(cfg, true) == Approx(1.0 / 3.0));
    CHECK(pre_log(cfg, false) == Approx(0.5));
}

TEST_CASE("spectral efficiency properties", "[estimation]") {
    const ScenarioConfig cfg = se_scenario();
    const SpectralEfficiencyResult imperfect = spectral_efficiency(cfg, 30, 7);
    const SpectralEfficiencyResult perfect = spectral_efficiency(cfg, 30, 7, true);
    REQUIRE(imperfect.sum_se.size() == 30);
    double mean_imperfect = 0.0, mean_perfect = 0.0;
    for (std::size_t r = 0; r < 30; ++r) {
        CHECK(imperfect.sum_se[r] >= 0.0);
        mean_imperfect += imperfect.sum_se[r] / 30.0;
        mean_perfect += perfect.sum_se[r] / 30.0;
    }
    // per realization the bound may go either way; on average CSI helps
    CHECK(mean_perfect >= mean_imperfect);
    for (const auto& row : imperfect.mean_se) {
        for (double x : row) CHECK(x >= 0.0);
    }

    ScenarioConfig noisy = cfg;
    noisy.noise_var *= 2.0;
    const SpectralEfficiencyResult worse = spectral_efficiency(noisy, 30, 7);
    double a = 0.0, b = 0.0;
    for (std::size_t r = 0; r < 30; ++r) {
        a += imperfect.sum_se[r];
        b += worse.sum_se[r];
    }
    CHECK(b <= a);

    ScenarioConfig silent = cfg;
    silent.p_ue = 0.0;
    for (double x : spectral_efficiency(silent, 5, 7).sum_se) CHECK(x == 0.0);

    // same seed, same samples
    CHECK(spectral_efficiency(cfg, 5, 9).sum_se == spectral_efficiency(cfg, 5, 9).sum_se);
}

TEST_CASE("pilot phase draws are consistent with the estimator", "[estimation]") {
    const ScenarioConfig cfg = se_scenario();
    const PilotPhase phase(cfg, 2);
    Rng rng(61);
    const PilotPhase::Draw d = phase.draw(rng);
    REQUIRE(d.h.size() == static_cast<std::size_t>(cfg.num_ues()));
    REQUIRE(d.h[0].size() == 2);
    CHECK(d.h[0][0].rows() == cfg.m_bs_tx);
    CHECK(d.h[0][0].cols() == cfg.m_ue);
    const std::vector<UeChannelState> st = phase.states(d, 1);
    CHECK((st[0].h_hat - d.h_hat[0][1]).norm() == 0.0);
    const std::vector<UeChannelState> perfect = phase.states(d, 1, true);
    CHECK((perfect[0].h_hat - d.h[0][1]).norm() == 0.0);
    CHECK(perfect[0].xi_tilde.trace() == 0.0);
}
