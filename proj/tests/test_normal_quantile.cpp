#include <gtest/gtest.h>

#include "illiquid/normal_quantile.hpp"

using namespace illiquid;

TEST(NormalQuantile, KnownQuantiles) {
    EXPECT_EQ(normal_quantile(0.5), 0.0);
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-12);
    EXPECT_NEAR(normal_quantile(0.02), -2.053748910631823, 1e-12);
    EXPECT_NEAR(normal_quantile(0.001), -3.090232306167813, 1e-12);
    EXPECT_NEAR(normal_quantile(0.3), -0.5244005127080409, 1e-12);
    EXPECT_NEAR(normal_quantile(1e-10), -6.361340902404056, 1e-9);
}

TEST(NormalQuantile, InvertsTheCdf) {
    for (double p = 1e-6; p < 1.0; p += 0.0137) EXPECT_NEAR(normal_cdf(normal_quantile(p)), p, 1e-14);
}

TEST(NormalQuantile, IsAntisymmetricAndMonotone) {
    double prev = -INFINITY;
    for (double p = 0.001; p < 0.999; p += 0.001) {
        EXPECT_NEAR(normal_quantile(p), -normal_quantile(1.0 - p), 1e-9);
        const double q = normal_quantile(p);
        EXPECT_GT(q, prev);
        prev = q;
    }
}

TEST(NormalQuantile, EdgesAndDomain) {
    EXPECT_EQ(normal_quantile(0.0), -INFINITY);
    EXPECT_EQ(normal_quantile(1.0), INFINITY);
    EXPECT_THROW(normal_quantile(-0.1), ArgumentError);
    EXPECT_THROW(normal_quantile(1.5), ArgumentError);
    EXPECT_LT(normal_quantile(0.4999999), 0.0);
}
