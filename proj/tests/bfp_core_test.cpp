#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "bfpkit/bfp.hpp"
#include "test_oracles.hpp"

using namespace bfpkit;
using bfp::BfpBlock;
using bfp::BfpTensor;

namespace {

std::vector<double> random_values(std::mt19937_64& rng, int n, double scale) {
    std::normal_distribution<double> dist(0.0, scale);
    std::vector<double> v(static_cast<std::size_t>(n));
    for (double& x : v) x = dist(rng);
    return v;
}

}  // namespace

TEST_CASE("decompose_float splits sign, mantissa and exponent") {
    auto d = bfp::decompose_float(1.0);
    CHECK(d.sign == 1);
    CHECK(d.mantissa == 1.0);
    CHECK(d.exponent == 0);

    d = bfp::decompose_float(-0.75);
    CHECK(d.sign == -1);
    CHECK(d.mantissa == 1.5);
    CHECK(d.exponent == -1);

    d = bfp::decompose_float(6.0);
    CHECK(d.sign == 1);
    CHECK(d.mantissa == 1.5);
    CHECK(d.exponent == 2);

    CHECK_THROWS_AS(bfp::decompose_float(0.0), std::invalid_argument);
    CHECK_THROWS_AS(bfp::decompose_float(std::nan("")), std::invalid_argument);
    CHECK_THROWS_AS(bfp::decompose_float(INFINITY), std::invalid_argument);
}

TEST_CASE("decompose_float recomposes exactly") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> dist(0.0, 10.0);
    for (int i = 0; i < 2000; ++i) {
        const double x = dist(rng);
        if (x == 0.0) continue;
        const auto d = bfp::decompose_float(x);
        CHECK(d.mantissa >= 1.0);
        CHECK(d.mantissa < 2.0);
        CHECK(d.sign * std::ldexp(d.mantissa, d.exponent) == x);
    }
}

TEST_CASE("shared_exponent basics") {
    CHECK(bfp::shared_exponent(std::vector<double>{1.0}) == 0);
    CHECK(bfp::shared_exponent(std::vector<double>{0.75, -0.5, 0.25}) == -1);
    CHECK(bfp::shared_exponent(std::vector<double>{0.0, 0.0, 0.0}) ==
          bfp::kZeroBlockExponent);
    CHECK_THROWS_AS(bfp::shared_exponent(std::vector<double>{}), std::invalid_argument);
}

TEST_CASE("shared_exponent equals decomposition exponent of the largest element") {
    std::mt19937_64 rng(42);
    for (int trial = 0; trial < 600; ++trial) {
        auto vals = random_values(rng, 1 + static_cast<int>(rng() % 32), 2.0);
        // Mix in exact powers of two, where a log-based route goes wrong.
        if (trial % 3 == 0)
            vals[rng() % vals.size()] = std::ldexp(1.0, static_cast<int>(rng() % 16) - 8);
        double max_abs = 0.0;
        for (double v : vals) max_abs = std::max(max_abs, std::fabs(v));
        if (max_abs == 0.0) continue;
        CHECK(bfp::shared_exponent(vals) == bfp::decompose_float(max_abs).exponent);
        CHECK(bfp::shared_exponent(vals) == oracle::ref_exponent(vals));
    }
}

TEST_CASE("quantize_block spec examples") {
    SUBCASE("w4 with a zero setting error") {
        const std::vector<double> vals{1.5, 0.25, -0.125, 0.0};
        auto [block, stats] = bfp::quantize_block(vals, MantissaWidth::w4);
        CHECK(block.exponent == 0);
        CHECK(block.mantissas == std::vector<std::int32_t>{6, 1, 0, 0});
        CHECK(stats.zse_count == 1);
        CHECK(stats.total_elements == 4);
    }
    SUBCASE("w16 unit value") {
        auto [block, stats] = bfp::quantize_block(std::vector<double>{1.0}, MantissaWidth::w16);
        CHECK(block.exponent == 0);
        CHECK(block.mantissas == std::vector<std::int32_t>{16384});
        CHECK(stats.zse_count == 0);
    }
    SUBCASE("all-zero block") {
        auto [block, stats] =
            bfp::quantize_block(std::vector<double>{0.0, 0.0, 0.0}, MantissaWidth::w8);
        CHECK(block.all_zero());
        CHECK(block.mantissas == std::vector<std::int32_t>{0, 0, 0});
        CHECK(stats.zse_count == 0);
    }
    SUBCASE("non-finite input rejected") {
        CHECK_THROWS_AS(bfp::quantize_block(std::vector<double>{1.0, INFINITY},
                                            MantissaWidth::w8),
                        std::invalid_argument);
    }
}

TEST_CASE("dequantize_block spec examples") {
    BfpBlock b;
    b.width = MantissaWidth::w4;
    b.exponent = 0;
    b.mantissas = {6, 1, 0, 0};
    b.logical_len = 4;
    CHECK(bfp::dequantize_block(b) == std::vector<double>{1.5, 0.25, 0.0, 0.0});

    b.exponent = 1;
    b.mantissas = {4};
    b.logical_len = 1;
    CHECK(bfp::dequantize_block(b) == std::vector<double>{2.0});

    BfpBlock zero;
    zero.width = MantissaWidth::w8;
    zero.mantissas = {0, 0};
    zero.logical_len = 2;
    CHECK(bfp::dequantize_block(zero) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("quantize matches the scalar reference oracle bit for bit") {
    std::mt19937_64 rng(7);
    for (MantissaWidth w :
         {MantissaWidth::w4, MantissaWidth::w8, MantissaWidth::w16}) {
        for (int trial = 0; trial < 2000; ++trial) {
            const int n = 1 + static_cast<int>(rng() % 24);
            const double scale = std::ldexp(1.0, static_cast<int>(rng() % 20) - 10);
            auto vals = random_values(rng, n, scale);
            auto [block, stats] = bfp::quantize_block(vals, w);
            const auto ref = oracle::ref_quantize(vals, bits(w));
            const bool lib_zero = block.all_zero();
            const bool ref_zero = ref.exponent == oracle::kZeroExp;
            REQUIRE(lib_zero == ref_zero);
            if (!lib_zero) CHECK(block.exponent == ref.exponent);
            CHECK(block.mantissas == ref.mantissas);
            CHECK(stats.zse_count == ref.zse);
            CHECK(bfp::dequantize_block(block) == oracle::ref_dequantize(ref, bits(w)));
        }
    }
}

TEST_CASE("round-trip error stays inside the half-step bound") {
    std::mt19937_64 rng(19);
    for (MantissaWidth w :
         {MantissaWidth::w4, MantissaWidth::w8, MantissaWidth::w16}) {
        for (int trial = 0; trial < 500; ++trial) {
            auto vals = random_values(rng, 16, 1.0);
            auto [block, stats] = bfp::quantize_block(vals, w);
            if (block.all_zero()) continue;
            const auto decoded = bfp::dequantize_block(block);
            const double half_step = std::ldexp(1.0, block.scale_exponent() - 1);
            for (std::size_t i = 0; i < vals.size(); ++i) {
                const bool clamped = std::abs(block.mantissas[i]) == max_mantissa(w);
                if (clamped) continue;
                CHECK(std::fabs(decoded[i] - vals[i]) <= half_step);
            }
        }
    }
}

TEST_CASE("total quantization error is monotone in precision") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 300; ++trial) {
        auto vals = random_values(rng, 32, 1.0);
        double err[3] = {0, 0, 0};
        int k = 0;
        for (MantissaWidth w :
             {MantissaWidth::w16, MantissaWidth::w8, MantissaWidth::w4}) {
            auto [block, stats] = bfp::quantize_block(vals, w);
            const auto dec = bfp::dequantize_block(block);
            for (std::size_t i = 0; i < vals.size(); ++i)
                err[k] += std::fabs(dec[i] - vals[i]);
            ++k;
        }
        CHECK(err[0] <= err[1]);
        CHECK(err[1] <= err[2]);
    }
}

TEST_CASE("exact multiples of the step quantize losslessly and dot exactly") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> mant(-100, 100);
    for (int trial = 0; trial < 300; ++trial) {
        const int n = 8;
        std::vector<double> a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = std::ldexp(static_cast<double>(mant(rng)), -4);
            b[static_cast<std::size_t>(i)] = std::ldexp(static_cast<double>(mant(rng)), -6);
        }
        auto [qa, sa] = bfp::quantize_block(a, MantissaWidth::w8);
        auto [qb, sb] = bfp::quantize_block(b, MantissaWidth::w8);
        CHECK(bfp::dequantize_block(qa) == a);
        CHECK(bfp::dequantize_block(qb) == b);
        double exact = 0.0;
        for (int i = 0; i < n; ++i)
            exact += a[static_cast<std::size_t>(i)] * b[static_cast<std::size_t>(i)];
        CHECK(bfp::block_dot(qa, qb) == exact);
    }
}

TEST_CASE("block_dot spec examples") {
    auto [a, sa] = bfp::quantize_block(std::vector<double>{1.0, 0.5}, MantissaWidth::w4);
    auto [b, sb] = bfp::quantize_block(std::vector<double>{2.0, 1.0}, MantissaWidth::w4);
    CHECK(bfp::block_dot(a, b) == 2.5);

    auto [z, sz] = bfp::quantize_block(std::vector<double>{0.0, 0.0}, MantissaWidth::w8);
    CHECK(bfp::block_dot(a, z) == 0.0);

    auto [p, sp] = bfp::quantize_block(std::vector<double>{1.0, -1.0}, MantissaWidth::w8);
    auto [q, sq] = bfp::quantize_block(std::vector<double>{1.0, 1.0}, MantissaWidth::w8);
    CHECK(bfp::block_dot(p, q) == 0.0);

    BfpBlock short_block;
    short_block.width = MantissaWidth::w8;
    short_block.exponent = 0;
    short_block.mantissas = {64};
    short_block.logical_len = 1;
    CHECK_THROWS_AS(bfp::block_dot(a, short_block), std::invalid_argument);
}

TEST_CASE("block_dot accepts mixed widths") {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 200; ++trial) {
        auto vals_a = random_values(rng, 12, 1.0);
        auto vals_b = random_values(rng, 12, 1.0);
        auto [a4, s1] = bfp::quantize_block(vals_a, MantissaWidth::w4);
        auto [b16, s2] = bfp::quantize_block(vals_b, MantissaWidth::w16);
        const auto da = bfp::dequantize_block(a4);
        const auto db = bfp::dequantize_block(b16);
        double expect = 0.0;
        for (std::size_t i = 0; i < da.size(); ++i) expect += da[i] * db[i];
        CHECK(bfp::block_dot(a4, b16) == doctest::Approx(expect).epsilon(1e-15));
    }
}

TEST_CASE("widening a lossless encoding leaves block_dot unchanged") {
    std::mt19937_64 rng(41);
    std::uniform_int_distribution<int> mant(-7, 7);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> a(8), b(8);
        for (auto& v : a) v = std::ldexp(static_cast<double>(mant(rng)), -2);
        for (auto& v : b) v = std::ldexp(static_cast<double>(mant(rng)), -1);
        auto [a4, s1] = bfp::quantize_block(a, MantissaWidth::w4);
        REQUIRE(bfp::dequantize_block(a4) == a);  // lossless at w4 by construction
        auto [a8, s2] = bfp::quantize_block(a, MantissaWidth::w8);
        auto [a16, s3] = bfp::quantize_block(a, MantissaWidth::w16);
        auto [b8, s4] = bfp::quantize_block(b, MantissaWidth::w8);
        const double d0 = bfp::block_dot(a4, b8);
        CHECK(bfp::block_dot(a8, b8) == d0);
        CHECK(bfp::block_dot(a16, b8) == d0);
    }
}

TEST_CASE("zse counts match a brute-force recount") {
    std::mt19937_64 rng(47);
    for (MantissaWidth w :
         {MantissaWidth::w4, MantissaWidth::w8, MantissaWidth::w16}) {
        for (int trial = 0; trial < 400; ++trial) {
            // Heavy-tailed values provoke zero settings at narrow widths.
            std::vector<double> vals(24);
            std::normal_distribution<double> dist(0.0, 1.0);
            for (auto& v : vals) {
                const double u = dist(rng);
                v = u * std::ldexp(1.0, static_cast<int>(rng() % 14) - 12);
                if (rng() % 5 == 0) v = 0.0;
            }
            auto [block, stats] = bfp::quantize_block(vals, w);
            const auto dec = bfp::dequantize_block(block);
            std::int64_t brute = 0;
            for (std::size_t i = 0; i < vals.size(); ++i)
                if (vals[i] != 0.0 && dec[i] == 0.0) ++brute;
            CHECK(stats.zse_count == brute);
        }
    }
}

TEST_CASE("block_tensor uses the standard blocking rules") {
    Tensor conv3_act({1, 24, 9, 9});
    for (std::size_t i = 0; i < conv3_act.data.size(); ++i)
        conv3_act.data[i] = 0.01 * static_cast<double>(i % 97) - 0.4;

    auto t = bfp::block_tensor(conv3_act, LayerKind::Conv3, MantissaWidth::w8);
    CHECK(t.block_shape == BlockShape{3, 3, 12});
    CHECK(t.cgroups == 2);
    CHECK(t.ytiles == 3);
    CHECK(t.xtiles == 3);

    Tensor fc_act({2, 500, 1, 1});
    auto t2 = bfp::block_tensor(fc_act, LayerKind::Conv1x1_or_FC, MantissaWidth::w4);
    CHECK(t2.block_shape == BlockShape{1, 1, 216});
    CHECK(t2.cgroups == 3);

    Tensor conv7_act({1, 2, 14, 14});
    auto t3 = bfp::block_tensor(conv7_act, LayerKind::Conv7, MantissaWidth::w16);
    CHECK(t3.block_shape == BlockShape{7, 7, 1});

    // Padding is excluded from logical lengths and ZSE denominators.
    std::int64_t logical = 0;
    for (const auto& b : t.blocks) logical += b.logical_len;
    CHECK(logical == conv3_act.numel());
    CHECK(t.zse.total_elements == conv3_act.numel());
}

TEST_CASE("block_tensor round-trips through dequantize_tensor") {
    std::mt19937_64 rng(53);
    Tensor x = oracle::random_exact_tensor({2, 7, 5, 5}, rng);
    for (LayerKind kind : {LayerKind::Conv1x1_or_FC, LayerKind::Conv3, LayerKind::Conv5}) {
        auto t = bfp::block_tensor(x, kind, MantissaWidth::w16);
        Tensor back = bfp::dequantize_tensor(t);
        CHECK(back.shape == x.shape);
        CHECK(back.data == x.data);  // exact representables survive
    }
}

TEST_CASE("serialization golden bytes") {
    Tensor x({1, 2, 1, 1}, {1.0, 0.5});
    auto t = bfp::block_tensor(x, BlockShape{1, 1, 2}, MantissaWidth::w4);
    const auto bytes = bfp::serialize(t);

    // Hand-assembled expectation: magic "BFPT", version 1, width 4,
    // rank 4, dims 1,2,1,1, block 1x1x2, one block, zse 2/0,
    // then exponent 0, logical length 2, mantissas 4, 2.
    const std::vector<std::uint8_t> expected = {
        0x42, 0x46, 0x50, 0x54, 0x01, 0x00, 0x00, 0x00, 0x04, 0x00, 0x00, 0x00,
        0x04, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00,
        0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00,
        0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00,
        0x02, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
        0x02, 0x00, 0x00, 0x00, 0x04, 0x00, 0x02, 0x00,
    };
    CHECK(bytes == expected);

    auto t2 = bfp::deserialize(bytes);
    CHECK(t2.shape == t.shape);
    CHECK(t2.width == t.width);
    CHECK(t2.block_shape == t.block_shape);
    CHECK(bfp::dequantize_tensor(t2).data == x.data);
}

TEST_CASE("serialize/deserialize round-trip on random tensors") {
    std::mt19937_64 rng(59);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = oracle::random_tensor({1 + static_cast<int>(rng() % 3),
                                          1 + static_cast<int>(rng() % 20), 6, 6},
                                         rng);
        const auto w = std::array{MantissaWidth::w4, MantissaWidth::w8,
                                  MantissaWidth::w16}[trial % 3];
        auto t = bfp::block_tensor(x, LayerKind::Conv3, w);
        auto t2 = bfp::deserialize(bfp::serialize(t));
        CHECK(t2.blocks.size() == t.blocks.size());
        for (std::size_t i = 0; i < t.blocks.size(); ++i) {
            CHECK(t2.blocks[i].exponent == t.blocks[i].exponent);
            CHECK(t2.blocks[i].mantissas == t.blocks[i].mantissas);
            CHECK(t2.blocks[i].logical_len == t.blocks[i].logical_len);
        }
        CHECK(bfp::dequantize_tensor(t2).data == bfp::dequantize_tensor(t).data);
    }
    CHECK_THROWS_AS(bfp::deserialize(std::vector<std::uint8_t>{1, 2, 3}),
                    std::invalid_argument);
}
