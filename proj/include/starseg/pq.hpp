// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "starseg/dataset.hpp"
#include "starseg/types.hpp"

namespace starseg {

constexpr uint32_t kPqCentroids = 256;  // one code byte per subspace

/* Product quantizer: the dimension splits into m contiguous subspaces (the
 * first dim % m of them one dimension wider) and each holds 256 centroids. */
struct PQCodebook {
    uint32_t m = 0;
    uint32_t dim = 0;
    Metric metric = Metric::kL2;
    std::vector<uint32_t> sub_dim;     // m entries
    std::vector<uint32_t> sub_offset;  // m + 1 entries, prefix sums
    std::vector<float> centroids;      // per subspace: 256 * sub_dim floats

    const float* centroid(uint32_t s, uint32_t c) const;
    size_t bytes() const { return centroids.size() * sizeof(float); }
};

struct PQCodes {
    uint32_t m = 0;
    uint64_t n = 0;
    std::vector<uint8_t> codes;  // n * m

    const uint8_t* of(vertex_id v) const { return codes.data() + static_cast<uint64_t>(v) * m; }
};

/* Largest m with n * m <= budget_bytes, clamped to dim. Throws when even one
 * byte per vector does not fit. */
uint32_t choose_m(uint64_t n, uint32_t dim, uint64_t budget_bytes);

std::vector<uint32_t> subspace_split(uint32_t dim, uint32_t m);

/* Per-subspace k-means (12 Lloyd iterations by default). Initialization
 * samples centroids from the training rows under the given seed; a cluster
 * that empties is reseeded to the point farthest from its assigned centroid.
 * Deterministic for a fixed seed. */
PQCodebook train_pq(const VectorDataset& train, uint32_t m, uint64_t seed, uint32_t iterations = 12);

// Nearest centroid per subspace, ties toward the lower index.
PQCodes encode_all(const PQCodebook& book, const VectorDataset& data);
void encode_one(const PQCodebook& book, const float* vec, uint8_t* out);

// Reconstruction of a coded vector (centroid concatenation).
std::vector<float> decode_code(const PQCodebook& book, const uint8_t* code);

/* Asymmetric distance table for one query: per (subspace, centroid) the
 * metric contribution, so an approximate distance is m table lookups. */
struct DistanceTable {
    uint32_t m = 0;
    std::vector<float> entries;  // m * 256

    float at(uint32_t s, uint32_t c) const { return entries[s * kPqCentroids + c]; }
};

DistanceTable build_distance_table(const PQCodebook& book, const float* query);

inline float approx_distance(const DistanceTable& table, const uint8_t* code) {
    float acc = 0.0f;
    for (uint32_t s = 0; s < table.m; ++s) acc += table.entries[s * kPqCentroids + code[s]];
    return acc;
}

/* Quantizer file: u32 m, m u32 subspace dims, u8 metric, u32 dim, u64 n,
 * centroids (float32, subspace-major), then n * m code bytes. */
void save_pq(const std::string& path, const PQCodebook& book, const PQCodes& codes);
void load_pq(const std::string& path, PQCodebook& book, PQCodes& codes);

}  // namespace starseg
