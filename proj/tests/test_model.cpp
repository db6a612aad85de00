#include "catch_amalgamated.hpp"

#include "cfl/model.hpp"

using namespace cfl;

TEST_CASE("vector arithmetic basics", "[model]") {
    ModelVector a(2);
    a[0] = 1.0;
    a[1] = 2.0;
    ModelVector b(2);
    b[0] = 0.5;
    b[1] = 0.5;
    auto d = subtract(a, b);
    REQUIRE(d[0] == 0.5);
    REQUIRE(d[1] == 1.5);
    auto s = scale(ModelVector{std::vector<double>{4.0, -8.0}}, 0.25);
    REQUIRE(s[0] == 1.0);
    REQUIRE(s[1] == -2.0);
    REQUIRE_THROWS_AS(add(a, ModelVector(3)), DimensionMismatch);
}

TEST_CASE("fixed lanes quantize and cancel exactly", "[model]") {
    ModelVector x(3);
    x[0] = 0.125;
    x[1] = -3.5;
    x[2] = 1000.0;
    FixedVector q = quantize(x);
    ModelVector back = unweigh_fixed(q, 1);
    for (std::size_t i = 0; i < 3; ++i) REQUIRE(back[i] == x[i]);

    // wrapping add/sub cancels bit-exactly
    FixedVector acc = q;
    FixedVector noise(3);
    noise.lanes = {0xFFFFFFFFFFFFFFFFull, 0x8000000000000000ull, 12345};
    add_in_place(acc, noise);
    subtract_in_place(acc, noise);
    REQUIRE(acc == q);
}

TEST_CASE("weighted quantization folds the dataset size", "[model]") {
    ModelVector x(1);
    x[0] = 0.25;
    FixedVector w = quantize_weighted(x, 600);
    ModelVector back = unweigh_fixed(w, 600);
    REQUIRE(back[0] == 0.25);
}

TEST_CASE("serialization round trips and is mode-tagged", "[model]") {
    ModelVector x(4);
    x[0] = 1.5;
    x[1] = -0.125;
    x[2] = 0.0;
    x[3] = 1e300;
    REQUIRE(deserialize_model(serialize(x)) == x);

    FixedVector q = quantize(x);
    q.lanes[3] = 0xDEADBEEFull;
    REQUIRE(deserialize_fixed(serialize(q)) == q);

    REQUIRE_THROWS_AS(deserialize_model(serialize(q)), ConfigError);
    Bytes truncated = serialize(x);
    truncated.resize(truncated.size() - 1);
    REQUIRE_THROWS_AS(deserialize_model(truncated), ConfigError);
}
