#include <gtest/gtest.h>

#include "gen.hpp"
#include "macarons/rational.hpp"

using macarons::Rational;

TEST(Rational, NormalisesSignAndGcd) {
  Rational r(6, -4);
  EXPECT_EQ(r.num(), -3);
  EXPECT_EQ(r.den(), 2);
  EXPECT_EQ(Rational(0, 7), Rational(0));
}

TEST(Rational, ParsesFractionsIntegersAndDecimalsExactly) {
  EXPECT_EQ(Rational::parse("5/7"), Rational(5, 7));
  EXPECT_EQ(Rational::parse("-12"), Rational(-12));
  EXPECT_EQ(Rational::parse("15.015"), Rational(15015, 1000));
  EXPECT_EQ(Rational::parse("1.25e2"), Rational(125));
  EXPECT_EQ(Rational::parse("2.5e-1"), Rational(1, 4));
  EXPECT_THROW(Rational::parse("1/0"), macarons::Error);
  EXPECT_THROW(Rational::parse("abc"), macarons::Error);
  EXPECT_THROW(Rational::parse(""), macarons::Error);
}

TEST(Rational, FromDoubleUsesShortestDecimal) {
  EXPECT_EQ(Rational::from_double(33.3), Rational(333, 10));
  EXPECT_EQ(Rational::from_double(12.5), Rational(25, 2));
  EXPECT_EQ(Rational(500) / Rational::from_double(33.3), Rational(5000, 333));
}

TEST(Rational, ArithmeticMatchesCrossMultiplication) {
  gen::Rng rng(11);
  for (int i = 0; i < 2000; ++i) {
    Rational a = rng.rational(1000, 1000);
    Rational b = rng.rational(1000, 1000);
    if (rng.coin()) a = -a;
    // (a+b)*den(a)*den(b) == num(a)*den(b) + num(b)*den(a), checked in integers.
    Rational s = a + b;
    EXPECT_EQ(static_cast<__int128>(s.num()) * a.den() * b.den(),
              (static_cast<__int128>(a.num()) * b.den() + static_cast<__int128>(b.num()) * a.den()) * s.den());
    EXPECT_EQ((a * b) / b, a);
    EXPECT_EQ(a - a, Rational(0));
    EXPECT_EQ(a < b, a.to_double() < b.to_double());
  }
}

TEST(Rational, OverflowIsReportedNotWrapped) {
  Rational big(INT64_MAX / 2);
  EXPECT_THROW(big * big, macarons::Error);
  EXPECT_THROW(Rational(1) / Rational(0), macarons::Error);
}

TEST(Rational, FloorHandlesNegatives) {
  EXPECT_EQ(macarons::floor_int(Rational(7, 2)), 3);
  EXPECT_EQ(macarons::floor_int(Rational(-7, 2)), -4);
  EXPECT_EQ(macarons::floor_int(Rational(-4)), -4);
}
