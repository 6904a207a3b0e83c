#include <gtest/gtest.h>

#include "bwdln/matcore.hpp"
#include "oracles.hpp"

using namespace bwdln;

TEST(SpectralDecompose, DiagonalInputSortsDescending) {
  Matrix s(2, 2);
  s << 2, 0, 0, 5;
  const SymEig e = spectral_decompose(s);
  EXPECT_DOUBLE_EQ(e.eigvals(0), 5.0);
  EXPECT_DOUBLE_EQ(e.eigvals(1), 2.0);
  Matrix perm(2, 2);
  perm << 0, 1, 1, 0;
  EXPECT_LT((e.eigvecs - perm).norm(), 1e-15);
}

TEST(SpectralDecompose, IdentityHasUnitSpectrum) {
  const SymEig e = spectral_decompose(Matrix::Identity(4, 4));
  for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(e.eigvals(i), 1.0);
}

TEST(SpectralDecompose, RandomReconstructionAndOrthogonality) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix g = oracle::gaussian(6, 6, rng);
    const Matrix s = g + g.transpose();
    const SymEig e = spectral_decompose(s);
    EXPECT_LE((e.reconstruct() - s).norm(), 1e-12 * std::max(1.0, s.norm()));
    EXPECT_LE((e.eigvecs.transpose() * e.eigvecs - Matrix::Identity(6, 6)).norm(), 1e-12);
    for (int i = 0; i + 1 < 6; ++i) EXPECT_GE(e.eigvals(i), e.eigvals(i + 1));
  }
}

TEST(SpectralDecompose, DeterministicAndSignConvention) {
  std::mt19937_64 rng(2);
  const Matrix s = oracle::random_pd(5, rng);
  const SymEig a = spectral_decompose(s);
  const SymEig b = spectral_decompose(s);
  EXPECT_TRUE((a.eigvecs.array() == b.eigvecs.array()).all());
  EXPECT_TRUE((a.eigvals.array() == b.eigvals.array()).all());
  for (int j = 0; j < 5; ++j) {
    for (int i = 0; i < 5; ++i) {
      if (std::abs(a.eigvecs(i, j)) > 1e-10) {
        EXPECT_GT(a.eigvecs(i, j), 0);
        break;
      }
    }
  }
}

TEST(SpectralDecompose, RejectsNonFiniteAndAsymmetric) {
  Matrix s = Matrix::Identity(2, 2);
  s(0, 1) = std::nan("");
  EXPECT_THROW(spectral_decompose(s), InputError);
  Matrix t(2, 2);
  t << 1, 2, 0, 1;
  EXPECT_THROW(spectral_decompose(t), InputError);
}

TEST(SqrtmPsd, DiagonalAndIdentity) {
  Matrix d = Eigen::Vector2d(4, 9).asDiagonal();
  Matrix expected = Eigen::Vector2d(2, 3).asDiagonal();
  EXPECT_LT((sqrtm_psd(PsdMatrix(d)).mat() - expected).norm(), 1e-15);
  EXPECT_LT((sqrtm_psd(PsdMatrix(Matrix::Identity(3, 3))).mat() - Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(SqrtmPsd, WitnessMatrixSquaresBack) {
  Matrix a(2, 2);
  a << 2, 6, 6, 20;
  const Matrix r = sqrtm_psd(PsdMatrix(a)).mat();
  EXPECT_LE((r * r - a).norm() / a.norm(), 1e-10);
  EXPECT_LE((r - oracle::sqrtm_db(a)).norm(), 1e-12);
}

TEST(SqrtmPsd, PropertyRandomSquares) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 8;
    const Matrix s = oracle::random_pd(n, rng, 1e-3);
    const Matrix r = sqrtm_psd(PsdMatrix(s)).mat();
    EXPECT_LE((r * r - s).norm() / s.norm(), 1e-10);
    EXPECT_LE((r - r.transpose()).norm(), 1e-14 * r.norm());
  }
}

TEST(SqrtmPsd, ClampsRoundOffAndRejectsNegative) {
  Matrix s = Eigen::Vector2d(1, -1e-14).asDiagonal();
  const PsdMatrix p(s);
  EXPECT_EQ(p.lambda_min(), 0.0);
  Matrix bad = Eigen::Vector2d(1, -1e-6).asDiagonal();
  EXPECT_THROW(PsdMatrix{bad}, NotPsdError);
}

TEST(InvsqrtmPd, DiagonalIdentityAndProduct) {
  Matrix d = Eigen::Vector2d(4, 9).asDiagonal();
  Matrix expected = Eigen::Vector2d(0.5, 1.0 / 3).asDiagonal();
  EXPECT_LT((invsqrtm_pd(PsdMatrix(d), 1e-12) - expected).norm(), 1e-15);
  EXPECT_LT((invsqrtm_pd(PsdMatrix(Matrix::Identity(2, 2)), 1e-12) - Matrix::Identity(2, 2)).norm(), 1e-15);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const PsdMatrix s(oracle::random_pd(5, rng));
    const Matrix prod = invsqrtm_pd(s, 1e-12) * sqrtm_psd(s).mat();
    EXPECT_LE((prod - Matrix::Identity(5, 5)).norm(), 1e-10);
  }
}

TEST(InvsqrtmPd, SingularBelowFloor) {
  Matrix d = Eigen::Vector2d(1, 1e-14).asDiagonal();
  EXPECT_THROW(invsqrtm_pd(PsdMatrix(d), 1e-12), SingularityError);
}

TEST(ThinSvd, IdentityAndRankOne) {
  const ThinSvd i3 = thin_svd(Matrix::Identity(3, 3));
  ASSERT_EQ(i3.rank(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(i3.singvals(i), 1.0, 1e-15);
  Vector u(3), v(4);
  u << 1, 2, 2;
  v << 1, -1, 1, -1;
  u.normalize();
  v.normalize();
  const ThinSvd r1 = thin_svd(u * v.transpose());
  ASSERT_EQ(r1.rank(), 1);
  EXPECT_NEAR(r1.singvals(0), 1.0, 1e-14);
}

TEST(ThinSvd, RandomReconstructionAndOrthonormality) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = oracle::gaussian(4, 6, rng);
    const ThinSvd s = thin_svd(a);
    ASSERT_EQ(s.rank(), 4);
    EXPECT_LE((s.reconstruct() - a).norm(), 1e-12 * a.norm());
    EXPECT_LE((s.left.transpose() * s.left - Matrix::Identity(4, 4)).norm(), 1e-12);
    EXPECT_LE((s.right.transpose() * s.right - Matrix::Identity(4, 4)).norm(), 1e-12);
    for (int j = 0; j < 4; ++j) {
      Eigen::Index imax;
      s.left.col(j).cwiseAbs().maxCoeff(&imax);
      EXPECT_GT(s.left(imax, j), 0);
    }
  }
}

TEST(ThinSvd, NumericalRankOfLowRankProduct) {
  std::mt19937_64 rng(6);
  const Matrix a = oracle::gaussian(6, 2, rng) * oracle::gaussian(2, 5, rng);
  EXPECT_EQ(thin_svd(a).rank(), 2);
}

TEST(PolarOrthogonal, Examples) {
  std::mt19937_64 rng(7);
  const Matrix q = oracle::random_orthogonal_gs(4, rng);
  EXPECT_LE((polar_orthogonal(q) - q).norm(), 1e-12);
  Matrix d = Eigen::Vector2d(2, 3).asDiagonal();
  EXPECT_LE((polar_orthogonal(d) - Matrix::Identity(2, 2)).norm(), 1e-14);
  const double th = 0.7;
  Matrix rot(2, 2);
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
  // A = P U with P = rot diag(2,3) rot^T symmetric PD, U = rot.
  const Matrix a = rot * d;
  const Matrix u = polar_orthogonal(a);
  const Matrix p = a * u.transpose();
  EXPECT_LE((p - p.transpose()).norm(), 1e-12);
  EXPECT_GT(spectral_decompose(0.5 * (p + p.transpose())).eigvals.minCoeff(), 0);
}

TEST(PolarOrthogonal, PropertyOrthogonalWithPsdFactor) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + trial % 6;
    const Matrix a = oracle::gaussian(n, n, rng);
    const Matrix u = polar_orthogonal(a);
    EXPECT_LE((u.transpose() * u - Matrix::Identity(n, n)).norm(), 1e-12);
    const Matrix p = a * u.transpose();
    EXPECT_LE((p - p.transpose()).norm(), 1e-11 * std::max(1.0, a.norm()));
    EXPECT_GE(spectral_decompose(0.5 * (p + p.transpose())).eigvals.minCoeff(), -1e-12);
  }
}

TEST(RandomOrthogonal, SmallAndDeterministic) {
  const Matrix q1 = random_orthogonal(1, 3);
  EXPECT_DOUBLE_EQ(std::abs(q1(0, 0)), 1.0);
  const Matrix a = random_orthogonal(7, 11);
  const Matrix b = random_orthogonal(7, 11);
  EXPECT_TRUE((a.array() == b.array()).all());
  EXPECT_LE((a.transpose() * a - Matrix::Identity(7, 7)).norm(), 1e-12);
  EXPECT_FALSE((a.array() == random_orthogonal(7, 12).array()).all());
}

TEST(RandomOrthogonal, HaarMeanOfCornerEntry) {
  double sum = 0;
  const int samples = 1000;
  for (int s = 0; s < samples; ++s) sum += random_orthogonal(20, 1000 + s)(0, 0);
  EXPECT_LE(std::abs(sum / samples), 3.0 / std::sqrt(1000.0));
}

TEST(Kron, TrivialCases) {
  EXPECT_EQ(commutation(1, 1), Matrix::Identity(1, 1));
  EXPECT_EQ(kron(Matrix::Identity(2, 2), Matrix::Identity(3, 3)), Matrix::Identity(6, 6));
  EXPECT_THROW(unvec(Vector::Zero(5), 2, 3), InputError);
  EXPECT_THROW(times_commutation(Matrix::Zero(2, 5), 2, 3), InputError);
}

TEST(Kron, VecIdentityProperty) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> dim(1, 8);
    const int p = dim(rng), q = dim(rng), r = dim(rng), s = dim(rng);
    const Matrix a = oracle::gaussian(p, q, rng);
    const Matrix b = oracle::gaussian(q, r, rng);
    const Matrix c = oracle::gaussian(r, s, rng);
    const Vector lhs = vec(a * b * c);
    const Vector rhs = kron(c.transpose(), a) * vec(b);
    EXPECT_LE((lhs - rhs).norm(), 1e-12 * std::max(1.0, lhs.norm()));
  }
}

TEST(Kron, CommutationProperty) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<int> dim(1, 8);
    const int p = dim(rng), q = dim(rng);
    const Matrix x = oracle::gaussian(p, q, rng);
    const Matrix k = commutation(p, q);
    Matrix xt = x.transpose();
    EXPECT_EQ(k * vec(x), vec(xt));
    const Matrix m = oracle::gaussian(3, p * q, rng);
    EXPECT_EQ(times_commutation(m, p, q), m * k);
    const Matrix m2 = oracle::gaussian(p * q, 2, rng);
    EXPECT_EQ(commutation_times(p, q, m2), k * m2);
  }
}
