#include <cstring>
#include <fstream>

#include "doctest.h"
#include "starseg/dataset.hpp"
#include "test_util.hpp"

using namespace starseg;

TEST_SUITE_BEGIN("dataset");

TEST_CASE("distance kernels on small fixed vectors") {
    // squared L2 and negated inner product, checked by hand
    const uint8_t a8[] = {1, 2, 3, 4};
    const uint8_t b8[] = {4, 2, 0, 255};
    CHECK(l2_sq(a8, b8, 4) == float(9 + 0 + 9 + 251 * 251));
    CHECK(neg_ip(a8, b8, 4) == float(-(4 + 4 + 0 + 4 * 255)));

    const float af[] = {1.5f, -2.0f, 0.0f};
    const float bf[] = {0.5f, 1.0f, 2.0f};
    CHECK(l2_sq(af, bf, 3) == doctest::Approx(1.0f + 9.0f + 4.0f));
    CHECK(neg_ip(af, bf, 3) == doctest::Approx(-(0.75f - 2.0f + 0.0f)));
}

TEST_CASE("uint8 accumulation stays exact at full range") {
    // 256 dims of max difference: 256 * 255^2 fits the 32-bit accumulator
    std::vector<uint8_t> zeros(256, 0), full(256, 255);
    CHECK(l2_sq(zeros.data(), full.data(), 256) == 256.0f * 255.0f * 255.0f);
}

TEST_CASE("smaller means more similar for both metrics") {
    VectorDataset data(3, 2, ElemType::kFloat32, Metric::kIP);
    float rows[3][2] = {{1.0f, 0.0f}, {10.0f, 0.0f}, {-1.0f, 0.0f}};
    for (size_t i = 0; i < 3; ++i) std::memcpy(data.raw_mut(i), rows[i], sizeof(rows[i]));
    float q[2] = {1.0f, 0.0f};
    // higher inner product => smaller (more negative) distance
    CHECK(distance_to(data, 1, q) < distance_to(data, 0, q));
    CHECK(distance_to(data, 0, q) < distance_to(data, 2, q));
}

TEST_CASE("brute force knn orders by distance then id") {
    VectorDataset data(4, 1, ElemType::kFloat32, Metric::kL2);
    float vals[4] = {5.0f, 1.0f, 5.0f, 0.0f};
    for (size_t i = 0; i < 4; ++i) std::memcpy(data.raw_mut(i), &vals[i], sizeof(float));
    float q = 5.0f;
    auto top = brute_force_knn(data, &q, 4);
    REQUIRE(top.size() == 4);
    CHECK(top[0].id == 0);  // tie with id 2, lower id first
    CHECK(top[1].id == 2);
    CHECK(top[2].id == 1);
    CHECK(top[3].id == 3);
    CHECK(top[0].dist == 0.0f);

    CHECK_THROWS_AS(brute_force_knn(data, &q, 0), std::invalid_argument);
    CHECK_THROWS_AS(brute_force_knn(data, &q, 5), std::invalid_argument);
}

TEST_CASE("brute force range is inclusive and validates the radius") {
    VectorDataset data(5, 1, ElemType::kFloat32, Metric::kL2);
    float vals[5] = {0.0f, 1.0f, 2.0f, 3.0f, 10.0f};
    for (size_t i = 0; i < 5; ++i) std::memcpy(data.raw_mut(i), &vals[i], sizeof(float));
    float q = 0.0f;
    auto hits = brute_force_range(data, &q, 4.0f);  // squared distances: 0,1,4,9,100
    REQUIRE(hits.size() == 3);
    CHECK(hits[0].id == 0);
    CHECK(hits[1].id == 1);
    CHECK(hits[2].id == 2);  // distance exactly 4 is included

    CHECK_THROWS_AS(brute_force_range(data, &q, -1.0f), std::invalid_argument);
}

TEST_CASE("fvecs round trip preserves bytes") {
    testutil::TempDir tmp("fvecs");
    VectorDataset data = testutil::make_uniform_f32(37, 9, 11);
    save_vectors(tmp.file("d.fvecs"), data);
    VectorDataset back = load_vectors(tmp.file("d.fvecs"), ElemType::kFloat32);
    REQUIRE(back.size() == data.size());
    REQUIRE(back.dim() == data.dim());
    CHECK(std::memcmp(back.raw(0), data.raw(0), data.size() * data.record_bytes()) == 0);
}

TEST_CASE("bvecs round trip preserves bytes") {
    testutil::TempDir tmp("bvecs");
    VectorDataset data = testutil::make_clustered_u8(53, 16, 5);
    save_vectors(tmp.file("d.bvecs"), data);
    VectorDataset back = load_vectors(tmp.file("d.bvecs"), ElemType::kUint8);
    REQUIRE(back.size() == 53);
    REQUIRE(back.dim() == 16);
    CHECK(std::memcmp(back.raw(0), data.raw(0), data.size() * data.record_bytes()) == 0);
}

TEST_CASE("loader rejects malformed files") {
    testutil::TempDir tmp("badfiles");

    SUBCASE("trailing bytes") {
        VectorDataset data = testutil::make_uniform_f32(3, 4, 1);
        save_vectors(tmp.file("t.fvecs"), data);
        std::ofstream app(tmp.file("t.fvecs"), std::ios::binary | std::ios::app);
        char junk[3] = {1, 2, 3};
        app.write(junk, sizeof(junk));
        app.close();
        CHECK_THROWS_AS(load_vectors(tmp.file("t.fvecs"), ElemType::kFloat32),
                        std::runtime_error);
    }

    SUBCASE("inconsistent dimension") {
        std::ofstream out(tmp.file("i.fvecs"), std::ios::binary);
        int32_t d4 = 4, d2 = 2;
        float pay[4] = {0, 0, 0, 0};
        out.write(reinterpret_cast<char*>(&d4), 4);
        out.write(reinterpret_cast<char*>(pay), 16);
        out.write(reinterpret_cast<char*>(&d2), 4);
        out.write(reinterpret_cast<char*>(pay), 16);  // same record size, wrong header
        out.close();
        CHECK_THROWS_AS(load_vectors(tmp.file("i.fvecs"), ElemType::kFloat32),
                        std::runtime_error);
    }

    SUBCASE("empty file") {
        std::ofstream(tmp.file("e.fvecs"), std::ios::binary).close();
        CHECK_THROWS_AS(load_vectors(tmp.file("e.fvecs"), ElemType::kFloat32),
                        std::runtime_error);
    }
}

TEST_CASE("sampling is deterministic, injective, and ratio-sized") {
    VectorDataset data = testutil::make_uniform_f32(200, 3, 9);
    SampledSubset s1 = sample_subset(data, 0.25, 77);
    SampledSubset s2 = sample_subset(data, 0.25, 77);
    SampledSubset s3 = sample_subset(data, 0.25, 78);
    REQUIRE(s1.ids.size() == 50);
    CHECK(s1.ids == s2.ids);
    CHECK(s1.ids != s3.ids);
    for (size_t i = 1; i < s1.ids.size(); ++i) CHECK(s1.ids[i - 1] < s1.ids[i]);  // injective
    for (size_t i = 0; i < s1.ids.size(); ++i)
        CHECK(std::memcmp(s1.data.raw(i), data.raw(s1.ids[i]), data.record_bytes()) == 0);

    CHECK(sample_subset(data, 0.001, 7).ids.size() == 1);  // floor said 0, clamp to 1
    CHECK_THROWS_AS(sample_subset(data, 0.0, 7), std::invalid_argument);
    CHECK_THROWS_AS(sample_subset(data, 1.5, 7), std::invalid_argument);
}

TEST_CASE("ground truth files round trip") {
    testutil::TempDir tmp("gt");
    GroundTruth gt;
    gt.ids = {{3, 1, 4}, {}, {9}};
    gt.dists = {{0.5f, 1.0f, 2.0f}, {}, {7.0f}};
    save_ground_truth(tmp.file("g.ivecs"), tmp.file("g.fvecs"), gt);
    GroundTruth back = load_ground_truth(tmp.file("g.ivecs"), tmp.file("g.fvecs"));
    CHECK(back.ids == gt.ids);
    CHECK(back.dists == gt.dists);
}

TEST_CASE("oracle agreement between knn and range") {
    VectorDataset data = testutil::make_clustered_u8(500, 24, 3);
    std::vector<float> q = data.decode(420);
    auto top = brute_force_knn(data, q.data(), 10);
    auto hits = brute_force_range(data, q.data(), top.back().dist);
    // every knn member within the radius must appear in the range result
    REQUIRE(hits.size() >= 10);
    for (size_t i = 0; i < 10; ++i) {
        CHECK(hits[i].id == top[i].id);
        CHECK(hits[i].dist == top[i].dist);
    }
}

TEST_SUITE_END();
