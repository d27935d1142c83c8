#include <catch_amalgamated.hpp>

#include <cmath>

#include "isac/arrays.hpp"
#include "isac/numerics.hpp"

using namespace isac;
using Catch::Approx;

namespace {

// J0(x) = (1/pi) int_0^pi cos(x sin t) dt; the trapezoid rule is spectrally
// accurate on this periodic integrand.
double j0_trapezoid(double x) {
    const int n = 400;
    double s = 0.0;
    for (int k = 0; k < n; ++k) {
        s += std::cos(x * std::sin(kPi * k / n));
    }
    return s / n;
}

CMatrix random_hermitian_pd(int n, Rng& rng) {
    const CMatrix a = complex_normal(n, n, rng);
    return a * a.adjoint() + CMatrix::Identity(n, n) * 0.1;
}

} // namespace

TEST_CASE("bessel_j0 matches a quadrature oracle", "[numerics]") {
    for (double x : {0.0, 0.06534, 0.5, 1.0, 2.404825557695773, 5.0, 12.3, 40.0, -3.7}) {
        CHECK(bessel_j0(x) == Approx(j0_trapezoid(x)).margin(1e-12));
    }
    CHECK(bessel_j0(0.0) == 1.0);
    CHECK(std::abs(bessel_j0(2.404825557695773)) < 1e-12);
    CHECK_THROWS_AS(bessel_j0(std::nan("")), DomainError);
}

TEST_CASE("gauss_hermite integrates polynomials exactly", "[numerics]") {
    const auto [x, w] = gauss_hermite(20);
    // int x^{2m} exp(-x^2) = Gamma(m + 1/2)
    for (int m = 0; m < 10; ++m) {
        double s = 0.0;
        for (Index i = 0; i < x.size(); ++i) s += w(i) * std::pow(x(i), 2 * m);
        CHECK(s == Approx(std::tgamma(m + 0.5)).epsilon(1e-10));
    }
}

TEST_CASE("kronecker product block structure", "[numerics]") {
    Rng rng(3);
    const CMatrix a = complex_normal(2, 3, rng);
    const CMatrix b = complex_normal(4, 2, rng);
    const CMatrix k = kronecker(a, b);
    REQUIRE(k.rows() == 8);
    REQUIRE(k.cols() == 6);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 3; ++j) {
            CHECK((k.block(i * 4, j * 2, 4, 2) - a(i, j) * b).norm() < 1e-14);
        }
    }
    // mixed-product property
    const CMatrix c = complex_normal(3, 2, rng);
    const CMatrix d = complex_normal(2, 5, rng);
    CHECK((kronecker(a, b) * kronecker(c, d) - kronecker(a * c, b * d)).norm() < 1e-12);
}

TEST_CASE("toeplitz_hermitian fills lags and conjugates below the diagonal", "[numerics]") {
    const std::vector<cd> row = {2.0, cd(0.5, 0.25), cd(0.0, -0.1)};
    const HermitianMatrix t = toeplitz_hermitian(std::span<const cd>(row));
    CHECK(t.matrix()(0, 2) == row[2]);
    CHECK(t.matrix()(2, 0) == std::conj(row[2]));
    CHECK(t.matrix()(1, 2) == row[1]);
    const std::vector<cd> bad = {cd(1.0, 1.0)};
    CHECK_THROWS_AS(toeplitz_hermitian(std::span<const cd>(bad)), DomainError);
}

TEST_CASE("whitener produces W R W^H = I", "[numerics]") {
    Rng rng(5);
    for (int n : {1, 3, 8}) {
        const HermitianMatrix r(random_hermitian_pd(n, rng));
        const CMatrix w = whitener(r);
        CHECK((w * r.matrix() * w.adjoint() - CMatrix::Identity(n, n)).norm() < 1e-10);
    }
    const HermitianMatrix singular(CMatrix(CMatrix::Ones(3, 3)));
    CHECK_THROWS_AS(whitener(singular), SingularityError);
}

TEST_CASE("psd_sqrt and psd_cholesky factor rank-deficient matrices", "[numerics]") {
    Rng rng(7);
    const CMatrix v = complex_normal(6, 2, rng);
    const HermitianMatrix r(CMatrix(v * v.adjoint()));
    const CMatrix s = psd_sqrt(r);
    CHECK((s * s.adjoint() - r.matrix()).norm() < 1e-10 * r.matrix().norm());
    const CMatrix l = psd_cholesky(r);
    CHECK((l * l.adjoint() - r.matrix()).norm() < 1e-9 * r.matrix().norm());
    CHECK(l.triangularView<Eigen::StrictlyUpper>().toDenseMatrix().norm() == 0.0);

    // leading blocks of the factor factor the leading blocks
    const HermitianMatrix pd(random_hermitian_pd(5, rng));
    const CMatrix lf = psd_cholesky(pd);
    for (int k = 1; k <= 5; ++k) {
        const CMatrix lk = lf.topLeftCorner(k, k);
        CHECK((lk * lk.adjoint() - pd.matrix().topLeftCorner(k, k)).norm() < 1e-10 * pd.matrix().norm());
    }

    CMatrix neg = CMatrix::Identity(2, 2);
    neg(1, 1) = -1.0;
    CHECK_THROWS_AS(psd_sqrt(HermitianMatrix(neg)), DomainError);
    CHECK_THROWS_AS(psd_cholesky(HermitianMatrix(neg)), DomainError);
}

TEST_CASE("pinv_symmetric satisfies the Moore-Penrose identities", "[numerics]") {
    Rng rng(11);
    RMatrix b = RMatrix::Random(5, 3);
    const RMatrix a = b * b.transpose();
    const RMatrix p = pinv_symmetric(a);
    CHECK((a * p * a - a).norm() < 1e-10 * a.norm());
    CHECK((p * a * p - p).norm() < 1e-10 * p.norm());
    CHECK((a * p - (a * p).transpose()).norm() < 1e-10);
}

TEST_CASE("HermitianMatrix rejects non-Hermitian input", "[numerics]") {
    CMatrix m = CMatrix::Identity(2, 2);
    m(0, 1) = 1.0;
    CHECK_THROWS_AS(HermitianMatrix(m), DomainError);
    CHECK_THROWS_AS(HermitianMatrix(CMatrix(2, 3)), ContractError);
}

TEST_CASE("complex_normal has unit variance and independent parts", "[numerics]") {
    Rng rng(13);
    const CMatrix z = complex_normal(1, 200000, rng);
    const double power = z.squaredNorm() / z.size();
    CHECK(power == Approx(1.0).epsilon(0.01));
    const cd pseudo = (z.array() * z.array()).mean();
    CHECK(std::abs(pseudo) < 0.01);
}

TEST_CASE("mix_seed gives distinct reproducible substreams", "[numerics]") {
    CHECK(mix_seed(1, 0) == mix_seed(1, 0));
    CHECK(mix_seed(1, 0) != mix_seed(1, 1));
    CHECK(mix_seed(1, 0) != mix_seed(2, 0));
}

TEST_CASE("finite_difference_jacobian of a linear map is exact", "[numerics]") {
    Rng rng(17);
    const CMatrix a = complex_normal(4, 3, rng);
    const auto f = [&](const RVector& x) -> CVector { return a * x.cast<cd>(); };
    const CMatrix j = finite_difference_jacobian(f, RVector::Random(3), 1e-3);
    CHECK((j - a).norm() < 1e-10);
    CHECK_THROWS_AS(finite_difference_jacobian(f, RVector::Zero(3), 0.0), DomainError);
}

TEST_CASE("steering vectors", "[numerics]") {
    CHECK((steering(5, 0.0) - CVector::Ones(5)).norm() < 1e-15);
    const CVector a = steering(2, kPi / 6);
    CHECK(std::abs(a(0) - cd(1.0, 0.0)) < 1e-12);
    CHECK(std::abs(a(1) - cd(0.0, 1.0)) < 1e-12);
    for (double ang : {-1.2, 0.3, 1.5}) {
        CHECK(steering(9, ang).squaredNorm() == Approx(9.0));
        const double h = 1e-6;
        const CVector fd = (steering(9, ang + h) - steering(9, ang - h)) / (2 * h);
        CHECK((fd - steering_derivative(9, ang)).norm() < 1e-7);
    }
}

TEST_CASE("local scattering covariance limits", "[numerics]") {
    const std::vector<double> broadside = {0.0};
    const HermitianMatrix r = local_scattering_covariance(broadside, 0.0, 2);
    CHECK((r.matrix() - CMatrix::Ones(2, 2)).norm() < 1e-14);

    const std::vector<double> c30 = {kPi / 6};
    const HermitianMatrix s = local_scattering_covariance(c30, kPi / 18, 4);
    CHECK(s.trace() == Approx(4.0));
    CHECK(s.is_positive_semidefinite());
    for (int m = 0; m < 4; ++m) {
        for (int n = 0; n < 4; ++n) {
            if (m != n) CHECK(std::abs(s.matrix()(m, n)) < 1.0);
        }
    }

    // independent oracle: midpoint rule on the Gaussian angle density over +-8 sigma
    const double sigma = kPi / 18;
    CMatrix oracle = CMatrix::Zero(4, 4);
    const int n = 20000;
    const double h = 16.0 * sigma / n;
    for (int q = 0; q < n; ++q) {
        const double phi = kPi / 6 - 8.0 * sigma + (q + 0.5) * h;
        const double w = std::exp(-0.5 * std::pow((phi - kPi / 6) / sigma, 2)) / (std::sqrt(2 * kPi) * sigma) * h;
        const CVector a = steering(4, phi);
        oracle += w * a * a.adjoint();
    }
    oracle *= 4.0 / oracle.trace().real();
    CHECK((s.matrix() - oracle).norm() < 1e-9);

    // small spread approaches the rank-one outer product
    const HermitianMatrix tiny = local_scattering_covariance(c30, 1e-6, 6);
    const CVector a = steering(6, kPi / 6);
    CHECK((tiny.matrix() - a * a.adjoint()).norm() < 1e-4);
}
