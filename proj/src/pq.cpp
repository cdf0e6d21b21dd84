// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include "starseg/pq.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

namespace starseg {

const float* PQCodebook::centroid(uint32_t s, uint32_t c) const {
    size_t base = 0;
    for (uint32_t i = 0; i < s; ++i) base += static_cast<size_t>(kPqCentroids) * sub_dim[i];
    return centroids.data() + base + static_cast<size_t>(c) * sub_dim[s];
}

uint32_t choose_m(uint64_t n, uint32_t dim, uint64_t budget_bytes) {
    if (n == 0) throw std::invalid_argument("choose_m needs a non-empty collection");
    uint64_t per_vector = budget_bytes / n;
    if (per_vector == 0)
        throw std::invalid_argument("code budget is below one byte per vector");
    return static_cast<uint32_t>(std::min<uint64_t>(per_vector, dim));
}

std::vector<uint32_t> subspace_split(uint32_t dim, uint32_t m) {
    if (m == 0 || m > dim) throw std::invalid_argument("subspace count must be in [1, dim]");
    std::vector<uint32_t> dims(m, dim / m);
    for (uint32_t i = 0; i < dim % m; ++i) ++dims[i];
    return dims;
}

namespace {

float sub_l2(const float* a, const float* b, uint32_t d) {
    float acc = 0.0f;
    for (uint32_t i = 0; i < d; ++i) {
        float diff = a[i] - b[i];
        acc += diff * diff;
    }
    return acc;
}

/* k-means over one subspace slice. rows is n x d, row-major. Clustering
 * always minimizes L2; the search metric only changes the distance table. */
std::vector<float> kmeans_256(const std::vector<float>& rows, uint64_t n, uint32_t d,
                              uint32_t iterations, std::mt19937_64& rng) {
    const uint32_t k = kPqCentroids;
    std::vector<float> centroids(static_cast<size_t>(k) * d);

    // seed centroids from distinct sampled rows, cycling when n < k
    std::vector<uint64_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0ull);
    for (uint32_t c = 0; c < k; ++c) {
        uint64_t pick;
        if (c < n) {
            std::uniform_int_distribution<uint64_t> dist(c, n - 1);
            uint64_t j = dist(rng);
            std::swap(pool[c], pool[j]);
            pick = pool[c];
        } else {
            pick = c % n;
        }
        std::memcpy(&centroids[static_cast<size_t>(c) * d], &rows[pick * d], d * sizeof(float));
    }

    std::vector<uint32_t> assign(n, 0);
    std::vector<float> assign_dist(n, 0.0f);
    std::vector<uint64_t> count(k, 0);
    std::vector<double> sum(static_cast<size_t>(k) * d, 0.0);

    for (uint32_t it = 0; it < iterations; ++it) {
        for (uint64_t i = 0; i < n; ++i) {
            const float* row = &rows[i * d];
            uint32_t best = 0;
            float best_d = sub_l2(row, &centroids[0], d);
            for (uint32_t c = 1; c < k; ++c) {
                float dd = sub_l2(row, &centroids[static_cast<size_t>(c) * d], d);
                if (dd < best_d) {  // strict: ties keep the lower index
                    best_d = dd;
                    best = c;
                }
            }
            assign[i] = best;
            assign_dist[i] = best_d;
        }

        std::fill(count.begin(), count.end(), 0);
        std::fill(sum.begin(), sum.end(), 0.0);
        for (uint64_t i = 0; i < n; ++i) {
            uint32_t c = assign[i];
            ++count[c];
            const float* row = &rows[i * d];
            double* acc = &sum[static_cast<size_t>(c) * d];
            for (uint32_t j = 0; j < d; ++j) acc[j] += row[j];
        }
        for (uint32_t c = 0; c < k; ++c) {
            if (count[c] == 0) {
                // reseed to the point farthest from its own centroid
                uint64_t far_i = 0;
                float far_d = -1.0f;
                for (uint64_t i = 0; i < n; ++i) {
                    if (assign_dist[i] > far_d) {
                        far_d = assign_dist[i];
                        far_i = i;
                    }
                }
                std::memcpy(&centroids[static_cast<size_t>(c) * d], &rows[far_i * d],
                            d * sizeof(float));
                assign_dist[far_i] = 0.0f;  // keep later empties from reusing it
                continue;
            }
            float* dst = &centroids[static_cast<size_t>(c) * d];
            const double* acc = &sum[static_cast<size_t>(c) * d];
            for (uint32_t j = 0; j < d; ++j)
                dst[j] = static_cast<float>(acc[j] / static_cast<double>(count[c]));
        }
    }
    return centroids;
}

}  // namespace

PQCodebook train_pq(const VectorDataset& train, uint32_t m, uint64_t seed, uint32_t iterations) {
    if (train.size() == 0) throw std::invalid_argument("empty training set");
    PQCodebook book;
    book.m = m;
    book.dim = static_cast<uint32_t>(train.dim());
    book.metric = train.metric();
    book.sub_dim = subspace_split(book.dim, m);
    book.sub_offset.assign(m + 1, 0);
    for (uint32_t s = 0; s < m; ++s) book.sub_offset[s + 1] = book.sub_offset[s] + book.sub_dim[s];

    uint64_t n = train.size();
    std::vector<float> full(train.dim());
    std::mt19937_64 rng(seed);
    for (uint32_t s = 0; s < m; ++s) {
        uint32_t d = book.sub_dim[s];
        uint32_t off = book.sub_offset[s];
        std::vector<float> rows(n * d);
        for (uint64_t i = 0; i < n; ++i) {
            train.decode(i, full.data());
            std::memcpy(&rows[i * d], full.data() + off, d * sizeof(float));
        }
        std::vector<float> cents = kmeans_256(rows, n, d, iterations, rng);
        book.centroids.insert(book.centroids.end(), cents.begin(), cents.end());
    }
    return book;
}

void encode_one(const PQCodebook& book, const float* vec, uint8_t* out) {
    size_t base = 0;
    for (uint32_t s = 0; s < book.m; ++s) {
        uint32_t d = book.sub_dim[s];
        const float* sub = vec + book.sub_offset[s];
        uint32_t best = 0;
        float best_d = sub_l2(sub, &book.centroids[base], d);
        for (uint32_t c = 1; c < kPqCentroids; ++c) {
            float dd = sub_l2(sub, &book.centroids[base + static_cast<size_t>(c) * d], d);
            if (dd < best_d) {
                best_d = dd;
                best = c;
            }
        }
        out[s] = static_cast<uint8_t>(best);
        base += static_cast<size_t>(kPqCentroids) * d;
    }
}

PQCodes encode_all(const PQCodebook& book, const VectorDataset& data) {
    if (data.dim() != book.dim) throw std::invalid_argument("codebook dimension mismatch");
    PQCodes codes;
    codes.m = book.m;
    codes.n = data.size();
    codes.codes.resize(codes.n * book.m);
    std::vector<float> full(data.dim());
    for (uint64_t i = 0; i < codes.n; ++i) {
        data.decode(i, full.data());
        encode_one(book, full.data(), &codes.codes[i * book.m]);
    }
    return codes;
}

std::vector<float> decode_code(const PQCodebook& book, const uint8_t* code) {
    std::vector<float> out(book.dim);
    for (uint32_t s = 0; s < book.m; ++s) {
        const float* c = book.centroid(s, code[s]);
        std::memcpy(out.data() + book.sub_offset[s], c, book.sub_dim[s] * sizeof(float));
    }
    return out;
}

DistanceTable build_distance_table(const PQCodebook& book, const float* query) {
    DistanceTable table;
    table.m = book.m;
    table.entries.resize(static_cast<size_t>(book.m) * kPqCentroids);
    size_t base = 0;
    for (uint32_t s = 0; s < book.m; ++s) {
        uint32_t d = book.sub_dim[s];
        const float* q = query + book.sub_offset[s];
        for (uint32_t c = 0; c < kPqCentroids; ++c) {
            const float* cent = &book.centroids[base + static_cast<size_t>(c) * d];
            float val;
            if (book.metric == Metric::kL2) {
                val = sub_l2(q, cent, d);
            } else {
                float acc = 0.0f;
                for (uint32_t j = 0; j < d; ++j) acc += q[j] * cent[j];
                val = -acc;
            }
            table.entries[static_cast<size_t>(s) * kPqCentroids + c] = val;
        }
        base += static_cast<size_t>(kPqCentroids) * d;
    }
    return table;
}

void save_pq(const std::string& path, const PQCodebook& book, const PQCodes& codes) {
    if (codes.m != book.m) throw std::invalid_argument("codebook / code width mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create " + path);
    out.write(reinterpret_cast<const char*>(&book.m), sizeof(uint32_t));
    out.write(reinterpret_cast<const char*>(book.sub_dim.data()),
              static_cast<std::streamsize>(book.m * sizeof(uint32_t)));
    uint8_t metric = static_cast<uint8_t>(book.metric);
    out.write(reinterpret_cast<const char*>(&metric), sizeof(metric));
    out.write(reinterpret_cast<const char*>(&book.dim), sizeof(uint32_t));
    out.write(reinterpret_cast<const char*>(&codes.n), sizeof(uint64_t));
    out.write(reinterpret_cast<const char*>(book.centroids.data()),
              static_cast<std::streamsize>(book.centroids.size() * sizeof(float)));
    out.write(reinterpret_cast<const char*>(codes.codes.data()),
              static_cast<std::streamsize>(codes.codes.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

void load_pq(const std::string& path, PQCodebook& book, PQCodes& codes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    in.read(reinterpret_cast<char*>(&book.m), sizeof(uint32_t));
    if (!in || book.m == 0) throw std::runtime_error(path + ": bad subspace count");
    book.sub_dim.resize(book.m);
    in.read(reinterpret_cast<char*>(book.sub_dim.data()),
            static_cast<std::streamsize>(book.m * sizeof(uint32_t)));
    uint8_t metric = 0;
    in.read(reinterpret_cast<char*>(&metric), sizeof(metric));
    book.metric = metric_from_code(metric);
    in.read(reinterpret_cast<char*>(&book.dim), sizeof(uint32_t));
    in.read(reinterpret_cast<char*>(&codes.n), sizeof(uint64_t));
    if (!in) throw std::runtime_error(path + ": truncated header");
    book.sub_offset.assign(book.m + 1, 0);
    size_t cent_floats = 0;
    for (uint32_t s = 0; s < book.m; ++s) {
        book.sub_offset[s + 1] = book.sub_offset[s] + book.sub_dim[s];
        cent_floats += static_cast<size_t>(kPqCentroids) * book.sub_dim[s];
    }
    if (book.sub_offset[book.m] != book.dim)
        throw std::runtime_error(path + ": subspace dims do not sum to dim");
    book.centroids.resize(cent_floats);
    in.read(reinterpret_cast<char*>(book.centroids.data()),
            static_cast<std::streamsize>(cent_floats * sizeof(float)));
    codes.m = book.m;
    codes.codes.resize(codes.n * book.m);
    in.read(reinterpret_cast<char*>(codes.codes.data()),
            static_cast<std::streamsize>(codes.codes.size()));
    if (!in) throw std::runtime_error(path + ": truncated payload");
}

}  // namespace starseg
