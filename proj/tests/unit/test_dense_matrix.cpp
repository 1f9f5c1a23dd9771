#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "macd/dense_matrix.hpp"
#include "macd/errors.hpp"

using macd::DenseMatrix;

TEST(DenseMatrix, ShapeAndRowMajorLayout) {
  const DenseMatrix m = DenseMatrix::from_rows({{1, 2, 3}, {4, 5, 6}});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_EQ(m(1, 0), 4.0);
  EXPECT_EQ(m[2], 3.0);
  EXPECT_EQ(m.col(1), (std::vector<double>{2, 5}));
}

TEST(DenseMatrix, ValueCountMustMatchShape) {
  EXPECT_THROW(DenseMatrix(2, 2, std::vector<double>{1, 2, 3}), macd::InputError);
  EXPECT_THROW(DenseMatrix::from_rows({{1, 2}, {3}}), macd::InputError);
}

TEST(DenseMatrix, TransposeAndSetCol) {
  DenseMatrix m = DenseMatrix::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const DenseMatrix t = m.transposed();
  EXPECT_EQ(t, DenseMatrix::from_rows({{1, 3, 5}, {2, 4, 6}}));
  const std::vector<double> c{9, 8, 7};
  m.set_col(0, c);
  EXPECT_EQ(m.col(0), c);
}

TEST(DenseMatrix, MatmulMatchesHandProduct) {
  const DenseMatrix a = DenseMatrix::from_rows({{1, 2}, {3, 4}});
  const DenseMatrix b = DenseMatrix::from_rows({{5, 6}, {7, 8}});
  EXPECT_EQ(matmul(a, b), DenseMatrix::from_rows({{19, 22}, {43, 50}}));
  EXPECT_EQ(matmul(DenseMatrix::identity(2), a), a);
  EXPECT_THROW(matmul(a, DenseMatrix(3, 1)), macd::InputError);
}

TEST(DenseMatrix, MatmulPropagatesNaN) {
  DenseMatrix a(1, 2, 0.0);
  DenseMatrix b(2, 1, 0.0);
  b[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_TRUE(std::isnan(matmul(a, b)[0]));
}

TEST(DenseMatrix, FiniteCheck) {
  DenseMatrix m(2, 2, 1.0);
  EXPECT_TRUE(m.all_finite());
  m(1, 1) = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(m.all_finite());
}
