#include "omdl/tensor.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"

using namespace omdl;

namespace {

// 2x2x2 tensor with value 4(i-1) + 2(j-1) + k at 1-based (i, j, k).
DenseTensor counting_tensor_222() {
  DenseTensor t({2, 2, 2});
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 2; ++j)
      for (Index k = 0; k < 2; ++k) t.at({i, j, k}) = static_cast<double>(4 * i + 2 * j + k + 1);
  return t;
}

}  // namespace

TEST_CASE("DenseTensor shape validation") {
  CHECK_THROWS_AS(DenseTensor({}), std::invalid_argument);
  CHECK_THROWS_AS(DenseTensor({3, 0}), std::invalid_argument);
  CHECK_THROWS_AS(DenseTensor({1, 2, 3, 4, 5, 6, 7, 8, 9}), std::invalid_argument);
  CHECK_THROWS_AS(DenseTensor({2, 2}, Eigen::VectorXd::Zero(5)), std::invalid_argument);
  DenseTensor ok({3, 4});
  CHECK(ok.numel() == 12);
  CHECK_THROWS_AS(ok.at({3, 0}), std::invalid_argument);
}

TEST_CASE("unfold matches the documented layout") {
  const DenseTensor t = counting_tensor_222();
  const Matrix m1 = unfold(t, 0);
  REQUIRE(m1.rows() == 2);
  REQUIRE(m1.cols() == 4);
  for (Index c = 0; c < 4; ++c) {
    CHECK(m1(0, c) == doctest::Approx(static_cast<double>(c + 1)));
    CHECK(m1(1, c) == doctest::Approx(static_cast<double>(c + 5)));
  }
}

TEST_CASE("unfold of a matrix at mode 0 is the matrix itself") {
  std::mt19937_64 rng(1);
  const Matrix m = oracle::random_matrix(3, 5, rng);
  DenseTensor t({3, 5});
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 5; ++j) t.at({i, j}) = m(i, j);
  CHECK((unfold(t, 0) - m).norm() == doctest::Approx(0.0));
}

TEST_CASE("refold inverts unfold") {
  std::mt19937_64 rng(2);
  const DenseTensor t = oracle::random_tensor({3, 4, 5}, rng);
  for (Index n = 0; n < 3; ++n) {
    const DenseTensor back = refold(unfold(t, n), n, t.shape());
    CHECK((back.data() - t.data()).norm() == doctest::Approx(0.0));
  }
  CHECK_THROWS_AS(unfold(t, 3), std::invalid_argument);
  CHECK_THROWS_AS(unfold(t, -1), std::invalid_argument);
}

TEST_CASE("unfold agrees with tuple enumeration on random tensors") {
  std::mt19937_64 rng(3);
  for (const auto& shape : {std::vector<Index>{4}, {3, 4}, {2, 3, 4}, {2, 3, 2, 3}}) {
    const DenseTensor t = oracle::random_tensor(shape, rng);
    for (Index n = 0; n < t.order(); ++n) {
      CHECK((unfold(t, n) - oracle::naive_unfold(t, n)).norm() < 1e-14);
    }
  }
}

TEST_CASE("mode_n_product identity and zero cases") {
  std::mt19937_64 rng(4);
  const DenseTensor t = oracle::random_tensor({2, 3, 4}, rng);
  for (Index n = 0; n < 3; ++n) {
    const DenseTensor same = mode_n_product(t, Matrix::Identity(t.extent(n), t.extent(n)), n);
    CHECK((same.data() - t.data()).norm() == doctest::Approx(0.0));
  }
  DenseTensor zeros({2, 3, 4});
  const DenseTensor out = mode_n_product(zeros, oracle::random_matrix(5, 3, rng), 1);
  CHECK(out.extent(1) == 5);
  CHECK(out.data().norm() == 0.0);
}

TEST_CASE("mode_n_product equals the nested-loop oracle") {
  std::mt19937_64 rng(5);
  const DenseTensor t = counting_tensor_222();
  const Matrix m = oracle::random_matrix(3, 2, rng);
  for (Index n = 0; n < 3; ++n) {
    const DenseTensor got = mode_n_product(t, m, n);
    const DenseTensor want = oracle::naive_mode_product(t, m, n);
    CHECK(got.shape() == want.shape());
    CHECK((got.data() - want.data()).norm() < 1e-13);
  }
  const DenseTensor r = oracle::random_tensor({3, 2, 4, 2}, rng);
  const Matrix m2 = oracle::random_matrix(5, 4, rng);
  const DenseTensor got = mode_n_product(r, m2, 2);
  const DenseTensor want = oracle::naive_mode_product(r, m2, 2);
  CHECK((got.data() - want.data()).norm() < 1e-12);
}

TEST_CASE("mode_n_product rejects mismatched extents naming the mode") {
  const DenseTensor t = counting_tensor_222();
  try {
    mode_n_product(t, Matrix::Zero(3, 5), 1);
    FAIL("expected invalid_argument");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("mode 1") != std::string::npos);
  }
}

TEST_CASE("contract_all_but_n on the counting tensor") {
  const DenseTensor t = counting_tensor_222();
  const Matrix got = contract_all_but_n(t, t, 0);
  CHECK(got(0, 0) == doctest::Approx(30.0));
  CHECK(got(0, 1) == doctest::Approx(70.0));
  CHECK(got(1, 0) == doctest::Approx(70.0));
  CHECK(got(1, 1) == doctest::Approx(174.0));
}

TEST_CASE("contract_all_but_n equals unfold product and the loop oracle") {
  std::mt19937_64 rng(6);
  for (const auto& shape : {std::vector<Index>{5}, {3, 4}, {2, 3, 4}, {2, 2, 3, 2}}) {
    const DenseTensor a = oracle::random_tensor(shape, rng);
    std::vector<Index> bshape = shape;
    bshape[0] += 1;  // mode-0 extents may differ
    const DenseTensor b = oracle::random_tensor(bshape, rng);
    const Matrix got = contract_all_but_n(a, b, 0);
    const Matrix via_unfold = unfold(a, 0) * unfold(b, 0).transpose();
    const Matrix naive = oracle::naive_contract_all_but_n(a, b, 0);
    const double scale = std::max(1.0, naive.norm());
    CHECK((got - via_unfold).norm() / scale < 1e-12);
    CHECK((got - naive).norm() / scale < 1e-12);
  }
}

TEST_CASE("contract_all_but_n zero and Gram structure") {
  std::mt19937_64 rng(7);
  DenseTensor zeros({2, 3, 4});
  const DenseTensor b = oracle::random_tensor({2, 3, 4}, rng);
  CHECK(contract_all_but_n(zeros, b, 1).norm() == 0.0);

  const DenseTensor a = oracle::random_tensor({3, 4, 5}, rng);
  for (Index n = 0; n < 3; ++n) {
    const Matrix gram = contract_all_but_n(a, a, n);
    CHECK((gram - gram.transpose()).norm() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    const double floor = -1e-10 * a.data().squaredNorm();
    CHECK(eig.eigenvalues().minCoeff() >= floor);
  }

  DenseTensor mismatched({2, 9, 4});
  CHECK_THROWS_AS(contract_all_but_n(a, mismatched, 0), std::invalid_argument);
}

TEST_CASE("tucker_reconstruct trivial cases and order invariance") {
  std::mt19937_64 rng(8);
  DenseTensor zero_core({2, 3, 2});
  DictionarySet dicts{oracle::random_matrix(4, 2, rng), oracle::random_matrix(5, 3, rng),
                      oracle::random_matrix(3, 2, rng)};
  CHECK(tucker_reconstruct(zero_core, dicts).data().norm() == 0.0);

  const DenseTensor core = oracle::random_tensor({2, 3, 2}, rng);
  DictionarySet eye{Matrix::Identity(2, 2), Matrix::Identity(3, 3), Matrix::Identity(2, 2)};
  CHECK((tucker_reconstruct(core, eye).data() - core.data()).norm() == doctest::Approx(0.0));

  // apply modes in a different order
  DenseTensor alt = core;
  for (Index n : {2, 0, 1}) alt = mode_n_product(alt, dicts[static_cast<size_t>(n)], n);
  const DenseTensor fwd = tucker_reconstruct(core, dicts);
  CHECK((fwd.data() - alt.data()).norm() < 1e-12 * std::max(1.0, fwd.data().norm()));

  DictionarySet bad = dicts;
  bad[1] = oracle::random_matrix(5, 4, rng);
  CHECK_THROWS_AS(tucker_reconstruct(core, bad), std::invalid_argument);
}

TEST_CASE("tucker_reconstruct is multilinear in each dictionary") {
  std::mt19937_64 rng(9);
  const DenseTensor core = oracle::random_tensor({2, 2, 3}, rng);
  DictionarySet dicts{oracle::random_matrix(3, 2, rng), oracle::random_matrix(4, 2, rng),
                      oracle::random_matrix(2, 3, rng)};
  const DenseTensor base = tucker_reconstruct(core, dicts);
  for (size_t n = 0; n < dicts.size(); ++n) {
    DictionarySet scaled = dicts;
    scaled[n] *= 2.5;
    const DenseTensor out = tucker_reconstruct(core, scaled);
    CHECK((out.data() - 2.5 * base.data()).norm() < 1e-12 * std::max(1.0, base.data().norm()));
  }
}

TEST_CASE("partial_reconstruct_excluding") {
  std::mt19937_64 rng(10);
  SUBCASE("order-1 core is returned unchanged") {
    const DenseTensor core = oracle::random_tensor({4}, rng);
    DictionarySet dicts{oracle::random_matrix(2, 4, rng)};
    const DenseTensor out = partial_reconstruct_excluding(core, dicts, 0);
    CHECK((out.data() - core.data()).norm() == doctest::Approx(0.0));
  }
  SUBCASE("identity dictionaries on the other modes") {
    const DenseTensor core = oracle::random_tensor({2, 3, 2}, rng);
    DictionarySet dicts{Matrix::Identity(2, 2), oracle::random_matrix(5, 3, rng),
                        Matrix::Identity(2, 2)};
    const DenseTensor out = partial_reconstruct_excluding(core, dicts, 1);
    CHECK((out.data() - core.data()).norm() == doctest::Approx(0.0));
  }
  SUBCASE("consistency with the full reconstruction") {
    const DenseTensor core = oracle::random_tensor({2, 3, 4}, rng);
    DictionarySet dicts{oracle::random_matrix(3, 2, rng), oracle::random_matrix(2, 3, rng),
                        oracle::random_matrix(5, 4, rng)};
    const DenseTensor full = tucker_reconstruct(core, dicts);
    for (Index n = 0; n < 3; ++n) {
      const DenseTensor part = partial_reconstruct_excluding(core, dicts, n);
      const DenseTensor lifted = mode_n_product(part, dicts[static_cast<size_t>(n)], n);
      CHECK((lifted.data() - full.data()).norm() <
            1e-12 * std::max(1.0, full.data().norm()));
    }
  }
}

TEST_CASE("frobenius_inner") {
  std::mt19937_64 rng(11);
  const Matrix a = oracle::random_matrix(4, 3, rng);
  CHECK(frobenius_inner(a, Matrix::Zero(4, 3)) == doctest::Approx(0.0));
  CHECK(frobenius_inner(Matrix::Identity(2, 2), Matrix::Identity(2, 2)) == doctest::Approx(2.0));

  const Matrix b = oracle::random_matrix(4, 3, rng);
  CHECK(frobenius_inner(a, b) == doctest::Approx((a * b.transpose()).trace()).epsilon(1e-12));
  CHECK(frobenius_inner(a, a) == doctest::Approx(a.squaredNorm()).epsilon(1e-12));
  CHECK_THROWS_AS(frobenius_inner(a, Matrix::Zero(3, 4)), std::invalid_argument);

  const DenseTensor ta = oracle::random_tensor({2, 3, 2}, rng);
  const DenseTensor tb = oracle::random_tensor({2, 3, 2}, rng);
  CHECK(frobenius_inner(ta, tb) == doctest::Approx(ta.data().dot(tb.data())));
  const DenseTensor tc = oracle::random_tensor({2, 3, 3}, rng);
  CHECK_THROWS_AS(frobenius_inner(ta, tc), std::invalid_argument);
}

TEST_CASE("mode-product order invariance over all permutations, 3-way") {
  std::mt19937_64 rng(12);
  const DenseTensor core = oracle::random_tensor({3, 2, 4}, rng);
  DictionarySet dicts{oracle::random_matrix(2, 3, rng), oracle::random_matrix(4, 2, rng),
                      oracle::random_matrix(3, 4, rng)};
  const DenseTensor ref = tucker_reconstruct(core, dicts);
  std::vector<Index> perm{0, 1, 2};
  std::sort(perm.begin(), perm.end());
  do {
    DenseTensor t = core;
    for (Index n : perm) t = mode_n_product(t, dicts[static_cast<size_t>(n)], n);
    CHECK((t.data() - ref.data()).norm() < 1e-12 * std::max(1.0, ref.data().norm()));
  } while (std::next_permutation(perm.begin(), perm.end()));
}
