#include "gtn/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <sstream>

#include "gtn/rng.hpp"
#include "gtn/tensor_io.hpp"

using namespace gtn;

namespace {

// Independent reference: plain triple loop, ascending inner index, used to
// pin down the summation order of the production matmul.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < k; ++l) acc += a.at(i, l) * b.at(l, j);
      c.at(i, j) = acc;
    }
  }
  return c;
}

}  // namespace

TEST(Tensor, ConstructionAndShapeInvariant) {
  Tensor t({2, 3});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 3}, {1.0, 2.0}), ShapeError);
  // row-major linear index
  t.at(1, 2) = 7.0;
  EXPECT_EQ(t[5], 7.0);
}

TEST(Tensor, MatmulIdentityPassesThrough) {
  Rng rng(1);
  Tensor v = rand_uniform(rng, {3, 1}, -2.0, 2.0);
  Tensor out = matmul(Tensor::identity(3), v);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out[i], v[i]);

  Tensor a = rand_uniform(rng, {4, 4}, -1.0, 1.0);
  Tensor b = matmul(Tensor::identity(4), a);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], a[i]);
}

TEST(Tensor, MatmulHandArithmetic) {
  Tensor a({2, 2}, {1, 2, 3, 4});
  Tensor b({2, 1}, {1, 1});
  Tensor c = matmul(a, b);
  EXPECT_EQ(c.at(0, 0), 3.0);
  EXPECT_EQ(c.at(1, 0), 7.0);
}

TEST(Tensor, MatmulMatchesNaiveTripleLoopExactly) {
  Rng rng(42);
  Tensor a = rand_uniform(rng, {7, 5}, -1.0, 1.0);
  Tensor b = rand_uniform(rng, {5, 3}, -1.0, 1.0);
  Tensor fast = matmul(a, b);
  Tensor ref = naive_matmul(a, b);
  for (std::size_t i = 0; i < fast.size(); ++i) {
    EXPECT_EQ(fast[i], ref[i]) << "entry " << i;  // 0 ulps
  }
}

TEST(Tensor, MatmulShapeMismatchReportsBothShapes) {
  Tensor a({2, 3});
  Tensor b({4, 2});
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x2]"), std::string::npos);
  }
}

TEST(Tensor, ElementwiseExamples) {
  EXPECT_EQ(sigmoid(Tensor({1}, {0.0}))[0], 0.5);
  EXPECT_EQ(relu(Tensor({1}, {-2.5}))[0], 0.0);
  Tensor p = mul(Tensor({3}, {1, 2, 3}), Tensor({3}, {0, 1, 2}));
  EXPECT_EQ(p[0], 0.0);
  EXPECT_EQ(p[1], 2.0);
  EXPECT_EQ(p[2], 6.0);
  EXPECT_THROW(add(Tensor({2}), Tensor({3})), ShapeError);
}

TEST(Tensor, HadamardWithOnesIsIdentity) {
  Rng rng(7);
  Tensor a = rand_uniform(rng, {4, 5}, -10.0, 10.0);
  Tensor b = mul(a, Tensor::ones({4, 5}));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Tensor, NonFiniteResultsAreErrors) {
  Tensor big = Tensor::full({2}, std::numeric_limits<double>::max());
  EXPECT_THROW(add(big, big), NumericError);
  Tensor inf_in({1}, {1e308});
  EXPECT_THROW(mul(inf_in, Tensor({1}, {1e308})), NumericError);
}

TEST(Tensor, ReductionsAndTranspose) {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(sum(a), 21.0);
  EXPECT_EQ(mean(a), 3.5);
  Tensor cs = col_sum(a);
  EXPECT_EQ(cs[0], 5.0);
  EXPECT_EQ(cs[2], 9.0);
  Tensor rs = row_sum(a);
  EXPECT_EQ(rs[0], 6.0);
  EXPECT_EQ(rs[1], 15.0);
  Tensor at = transpose(a);
  EXPECT_EQ(at.at(2, 1), 6.0);
  auto am = argmax_rows(a);
  EXPECT_EQ(am[0], 2u);
}

TEST(Tensor, GatherRows) {
  Tensor a({3, 2}, {1, 2, 3, 4, 5, 6});
  Tensor g = gather_rows(a, {2, 0});
  EXPECT_EQ(g.at(0, 0), 5.0);
  EXPECT_EQ(g.at(1, 1), 2.0);
  EXPECT_THROW(gather_rows(a, {3}), ValueError);
}

TEST(TensorIo, BinaryRoundTripIsBitExact) {
  Rng rng(3);
  Tensor t = rand_normal(rng, {2, 3, 4}, 0.0, 1.0);
  const auto path = std::filesystem::temp_directory_path() / "gtn_test_tensor.bin";
  save_tensor(t, path);
  Tensor back = load_tensor(path);
  ASSERT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back[i], t[i]);
  std::filesystem::remove(path);
}

TEST(TensorIo, RejectsBadMagicAndTruncation) {
  Rng rng(4);
  Tensor t = rand_uniform(rng, {4, 4}, 0.0, 1.0);
  std::string bytes = tensor_to_bytes(t);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(tensor_from_bytes(bad), IoError);
  EXPECT_THROW(tensor_from_bytes(bytes.substr(0, bytes.size() - 3)), IoError);
}

TEST(TensorIo, CsvHasShapeHeaderAndRowMajorPayload) {
  Tensor t({2, 2}, {1.5, 2.0, -3.25, 4.0});
  std::ostringstream os;
  write_tensor_csv(t, os);
  EXPECT_EQ(os.str(), "shape,2,2\n1.5,2\n-3.25,4\n");
}
