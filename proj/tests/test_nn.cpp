#include <doctest.h>

#include <array>
#include <cmath>

#include "ssmic/nn.hpp"
#include "vss_oracle.hpp"

using namespace ssmic;
using namespace ssmic::nn;

using namespace vss_oracle;

TEST_SUITE("nn") {
  TEST_CASE("rms norm") {
    const Tensor c = rms_norm(Tensor::full({2, 4}, 3.0), Tensor::full({4}, 1.0), 0.0);
    for (double v : c.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(bit_equal(rms_norm(Tensor::zeros({3, 5}), Tensor::full({5}, 2.0), 1e-6), Tensor::zeros({3, 5})));
    Rng rng(20);
    const Tensor x = random_normal({6, 5}, rng), g = random_normal({5}, rng);
    CHECK(max_abs_diff(rms_norm(x, g, 1e-6), Tensor({6, 5}, oracle::rms_norm(x.to_vector(), 6, 5, g, 1e-6))) <= 1e-12);
    CHECK_THROWS_AS(rms_norm(x, Tensor::zeros({4}), 1e-6), Error);
  }

  TEST_CASE("patch merge rearrangement and shapes") {
    const Tensor f({2, 2, 1}, {1, 2, 3, 4});
    PatchMergeParams p{std::nullopt, Tensor({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}), Tensor::zeros({4})};
    const Tensor m = patch_merge(f, p);
    CHECK(m.shape() == Shape{1, 1, 4});
    CHECK(m.to_vector() == std::vector<double>{1, 2, 3, 4});
    PatchExpandParams e{p.weight, Tensor::zeros({4})};
    CHECK(bit_equal(patch_expand(m, e), f));

    Rng rng(21);
    PatchMergeParams big{Tensor::full({12}, 1.0), random_normal({12, 8}, rng), Tensor::zeros({8})};
    CHECK(patch_merge(random_normal({256, 256, 3}, rng), big).shape() == Shape{128, 128, 8});
    PatchExpandParams ex{random_normal({8, 12}, rng), Tensor::zeros({12})};
    CHECK(patch_expand(random_normal({16, 16, 8}, rng), ex).shape() == Shape{32, 32, 3});
    CHECK_THROWS_AS(patch_merge(random_normal({3, 4, 3}, rng), big), Error);
  }

  TEST_CASE("patch expand inverts patch merge") {
    Rng rng(22);
    const std::size_t c = 3;
    const Tensor f = random_normal({6, 8, c}, rng);
    // Random well-conditioned W and its inverse from Gauss-Jordan.
    const std::size_t n = 4 * c;
    std::vector<std::vector<double>> a(n, std::vector<double>(2 * n, 0.0));
    std::vector<double> w(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) a[i][j] = w[i * n + j] = (i == j ? 2.0 : 0.0) + rng.uniform(-0.3, 0.3);
      a[i][n + i] = 1.0;
    }
    for (std::size_t col = 0; col < n; ++col) {
      std::size_t piv = col;
      for (std::size_t r = col; r < n; ++r)
        if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
      std::swap(a[col], a[piv]);
      const double d = a[col][col];
      for (double& v : a[col]) v /= d;
      for (std::size_t r = 0; r < n; ++r)
        if (r != col) {
          const double m = a[r][col];
          for (std::size_t k = 0; k < 2 * n; ++k) a[r][k] -= m * a[col][k];
        }
    }
    std::vector<double> inv(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) inv[i * n + j] = a[i][n + j];
    PatchMergeParams pm{std::nullopt, Tensor({n, n}, w), Tensor::zeros({n})};
    PatchExpandParams pe{Tensor({n, n}, inv), Tensor::zeros({n})};
    CHECK(max_abs_diff(patch_expand(patch_merge(f, pm), pe), f) <= 1e-10);
  }

  TEST_CASE("patch merge is equivariant to 2x2 block shifts") {
    Rng rng(23);
    const Tensor f = random_normal({8, 8, 2}, rng);
    PatchMergeParams p{random_uniform({8}, rng, 0.5, 1.5), random_normal({8, 5}, rng), random_normal({5}, rng)};
    // Circular shift by one block (two pixels) down and right.
    std::vector<double> sv(f.size());
    for (std::size_t i = 0; i < 8; ++i)
      for (std::size_t j = 0; j < 8; ++j)
        for (std::size_t c = 0; c < 2; ++c) sv[(((i + 2) % 8) * 8 + (j + 2) % 8) * 2 + c] = f.at({i, j, c});
    const Tensor a = patch_merge(f, p), b = patch_merge(Tensor(f.shape(), sv), p);
    for (std::size_t i = 0; i < 4; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t c = 0; c < 5; ++c) CHECK(b.at({(i + 1) % 4, (j + 1) % 4, c}) == a.at({i, j, c}));
  }

  TEST_CASE("cross scan enumerates the four paths") {
    const Tensor f({2, 2, 1}, {1, 2, 3, 4});
    const auto s = cross_scan(f);
    CHECK(s[0].to_vector() == std::vector<double>{1, 2, 3, 4});
    CHECK(s[1].to_vector() == std::vector<double>{1, 3, 2, 4});
    CHECK(s[2].to_vector() == std::vector<double>{4, 3, 2, 1});
    CHECK(s[3].to_vector() == std::vector<double>{4, 2, 3, 1});
    const auto one = cross_scan(Tensor({1, 1, 1}, {7}));
    for (const auto& q : one) CHECK(q.to_vector() == std::vector<double>{7});
  }

  TEST_CASE("cross scan paths are permutations") {
    Rng rng(24);
    for (std::size_t h = 1; h <= 5; ++h)
      for (std::size_t w = 1; w <= 5; ++w) {
        for (int q = 0; q < 4; ++q) {
          std::vector<bool> seen(h * w, false);
          for (std::size_t s = 0; s < h * w; ++s) {
            const std::size_t c = scan_cell(kScanPaths[q], s, h, w);
            CHECK(c == cell(q, s, h, w));
            seen[c] = true;
          }
          CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
        }
        const Tensor f = random_normal({h, w, 2}, rng);
        CHECK(bit_equal(cross_merge(cross_scan(f), h, w), scale(f, 4.0)));
      }
  }

  TEST_CASE("cross merge linearity and locality") {
    Rng rng(25);
    const Tensor f = random_normal({3, 4, 2}, rng);
    auto s = cross_scan(f);
    s[2] = Tensor::zeros(s[2].shape());
    CHECK(max_abs_diff(cross_merge(s, 3, 4), scale(f, 3.0)) <= 1e-15);

    std::vector<double> v = f.to_vector();
    v[(1 * 4 + 2) * 2 + 1] += 0.25;
    const Tensor diff = sub(cross_merge(cross_scan(Tensor(f.shape(), v)), 3, 4), cross_merge(cross_scan(f), 3, 4));
    for (std::size_t i = 0; i < diff.size(); ++i)
      CHECK(diff[i] == doctest::Approx(i == (1 * 4 + 2) * 2 + 1 ? 1.0 : 0.0).epsilon(1e-12));
    CHECK_THROWS_AS(cross_merge(cross_scan(f), 4, 4), Error);
  }

  TEST_CASE("ss2d identity configuration") {
    Rng rng(26);
    const std::size_t d = 3, n = 2;
    Ss2dParams p;
    for (auto& q : p.paths) {
      q = random_path(rng, d, n);
      q.c_weight = Tensor::zeros({d, n});
      q.d_skip = Tensor::full({d}, 1.0);
    }
    const Tensor f = random_normal({4, 3, d}, rng);
    CHECK(bit_equal(ss2d(f, p), scale(f, 4.0)));
  }

  TEST_CASE("ss2d on a single cell and against the oracle") {
    Rng rng(27);
    const std::size_t d = 3, n = 2;
    Ss2dParams p;
    for (auto& q : p.paths) q = random_path(rng, d, n);
    const Tensor one = random_normal({1, 1, d}, rng);
    Tensor sum = Tensor::zeros({1, d});
    for (const auto& q : p.paths) sum = add(sum, s6_path(one.reshape({1, d}), q, p.mode));
    CHECK(max_abs_diff(ss2d(one, p).reshape({1, d}), sum) <= 1e-15);
    for (auto mode : {ssm::ScanDiscretization::kSimplified, ssm::ScanDiscretization::kZoh}) {
      p.mode = mode;
      const Tensor f = random_normal({3, 5, d}, rng);
      const Tensor y = ss2d(f, p);
      CHECK(y.shape() == f.shape());
      CHECK(max_abs_diff(y, oracle_ss2d(f, p)) <= 1e-12);
    }
  }

  TEST_CASE("vss block matches a straight-line transcription") {
    Rng rng(28);
    const VssBlockParams p = random_block(rng, 2, 4, 2, 4);
    const Tensor f = random_normal({3, 3, 2}, rng);
    CHECK(max_abs_diff(vss_block(f, p), oracle_vss(f, p)) <= 1e-12);
    const VssBlockParams q = random_block(rng, 3, 6, 3, 2);
    const Tensor g = random_normal({4, 5, 3}, rng);
    CHECK(vss_block(g, q).shape() == g.shape());
    CHECK(max_abs_diff(vss_block(g, q), oracle_vss(g, q)) <= 1e-12);
  }

  TEST_CASE("vss block dead branches pass through") {
    Rng rng(29);
    VssBlockParams p = random_block(rng, 3, 6, 2, 4);
    p.mlp2_weight = Tensor::zeros(p.mlp2_weight.shape());
    p.mlp2_bias = Tensor::zeros(p.mlp2_bias.shape());
    p.mlp3_fc2_weight = Tensor::zeros(p.mlp3_fc2_weight.shape());
    p.mlp3_fc2_bias = Tensor::zeros(p.mlp3_fc2_bias.shape());
    const Tensor f = random_normal({4, 4, 3}, rng);
    CHECK(bit_equal(vss_block(f, p), f));
  }

  TEST_CASE("vss block has a global receptive field") {
    Rng rng(30);
    const VssBlockParams p = random_block(rng, 2, 4, 2, 2);
    const Tensor f = random_normal({5, 5, 2}, rng);
    const Tensor base = vss_block(f, p);
    for (std::size_t cellno = 0; cellno < 25; ++cellno) {
      std::vector<double> v = f.to_vector();
      v[cellno * 2] += 0.5;
      const Tensor out = vss_block(Tensor(f.shape(), v), p);
      std::size_t changed = 0;
      for (std::size_t k = 0; k < 25; ++k)
        if (out[k * 2] != base[k * 2] || out[k * 2 + 1] != base[k * 2 + 1]) ++changed;
      CHECK(changed == 25);
    }
  }
}
