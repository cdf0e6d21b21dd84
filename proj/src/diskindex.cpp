// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include "starseg/diskindex.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>

namespace starseg {

namespace {

constexpr size_t kHeaderPayload = 52;  // serialized header bytes before padding

void put_bytes(std::byte* dst, const void* src, size_t len, size_t& off) {
    std::memcpy(dst + off, src, len);
    off += len;
}

template <typename T>
void put_pod(std::byte* dst, T v, size_t& off) {
    put_bytes(dst, &v, sizeof(T), off);
}

template <typename T>
T get_pod(const std::byte* src, size_t& off) {
    T v{};
    std::memcpy(&v, src + off, sizeof(T));
    off += sizeof(T);
    return v;
}

void encode_header(const DiskIndexHeader& h, std::byte* block) {
    size_t off = 0;
    put_bytes(block, kSegmentMagic, sizeof(kSegmentMagic), off);
    put_pod(block, kSegmentVersion, off);
    put_pod(block, h.n, off);
    put_pod(block, h.dim, off);
    put_pod(block, h.max_degree, off);
    put_pod(block, h.slots_per_block, off);
    put_pod(block, h.num_blocks, off);
    put_pod(block, h.block_bytes, off);
    put_pod(block, static_cast<uint8_t>(h.elem), off);
    put_pod(block, static_cast<uint8_t>(h.metric), off);
    put_pod(block, static_cast<uint16_t>(0), off);
    put_pod(block, h.entry, off);
}

DiskIndexHeader decode_header(const std::byte* block, const std::string& path) {
    if (std::memcmp(block, kSegmentMagic, sizeof(kSegmentMagic)) != 0)
        throw std::runtime_error(path + ": bad magic");
    size_t off = sizeof(kSegmentMagic);
    uint32_t version = get_pod<uint32_t>(block, off);
    if (version != kSegmentVersion)
        throw std::runtime_error(path + ": unsupported version " + std::to_string(version));
    DiskIndexHeader h;
    h.n = get_pod<uint32_t>(block, off);
    h.dim = get_pod<uint32_t>(block, off);
    h.max_degree = get_pod<uint32_t>(block, off);
    h.slots_per_block = get_pod<uint32_t>(block, off);
    h.num_blocks = get_pod<uint64_t>(block, off);
    h.block_bytes = get_pod<uint64_t>(block, off);
    h.elem = elem_type_from_code(get_pod<uint8_t>(block, off));
    h.metric = metric_from_code(get_pod<uint8_t>(block, off));
    get_pod<uint16_t>(block, off);
    h.entry = get_pod<vertex_id>(block, off);
    return h;
}

}  // namespace

LayoutGeometry DiskIndexHeader::geometry() const {
    LayoutGeometry g;
    g.block_bytes = block_bytes;
    g.record_bytes = record_bytes();
    g.slots_per_block = slots_per_block;
    g.num_blocks = num_blocks;
    g.num_vertices = n;
    return g;
}

uint64_t pack_location(uint32_t block, uint32_t slot) {
    if (slot >= 256) throw std::invalid_argument("slot does not fit the packed location format");
    return static_cast<uint64_t>(block) * 256 + slot;
}

std::pair<uint32_t, uint32_t> unpack_location(uint64_t packed) {
    return {static_cast<uint32_t>(packed / 256), static_cast<uint32_t>(packed % 256)};
}

void write_index(const std::string& idx_path, const std::string& map_path,
                 const VectorDataset& data, const NeighborGraph& graph,
                 const BlockLayout& layout) {
    const LayoutGeometry& g = layout.geom;
    if (data.size() != g.num_vertices || graph.size() != g.num_vertices)
        throw std::invalid_argument("layout does not match the dataset/graph");
    if (g.slots_per_block > 256)
        throw std::invalid_argument("slots_per_block above 256 cannot be packed into the map");
    if (data.size() > UINT32_MAX) throw std::invalid_argument("vertex ids are 32-bit");

    DiskIndexHeader h;
    h.n = static_cast<uint32_t>(data.size());
    h.dim = static_cast<uint32_t>(data.dim());
    h.max_degree = graph.max_degree;
    h.slots_per_block = g.slots_per_block;
    h.num_blocks = g.num_blocks;
    h.block_bytes = g.block_bytes;
    h.elem = data.elem();
    h.metric = data.metric();
    h.entry = graph.entry;
    if (h.record_bytes() != g.record_bytes)
        throw std::invalid_argument("geometry record size disagrees with dataset/graph");

    std::ofstream out(idx_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot create " + idx_path);

    std::vector<std::byte> block(g.block_bytes);
    encode_header(h, block.data());
    out.write(reinterpret_cast<const char*>(block.data()),
              static_cast<std::streamsize>(block.size()));

    size_t vec_bytes = data.record_bytes();
    for (uint64_t b = 0; b < g.num_blocks; ++b) {
        std::fill(block.begin(), block.end(), std::byte{0});
        const auto& occ = layout.blocks[b];
        for (uint32_t s = 0; s < occ.size(); ++s) {
            vertex_id v = occ[s];
            std::byte* rec = block.data() + static_cast<uint64_t>(s) * g.record_bytes;
            size_t off = 0;
            put_bytes(rec, data.raw(v), vec_bytes, off);
            const auto& adj = graph.adjacency[v];
            put_pod(rec, static_cast<uint32_t>(adj.size()), off);
            put_bytes(rec, adj.data(), adj.size() * sizeof(vertex_id), off);
        }
        out.write(reinterpret_cast<const char*>(block.data()),
                  static_cast<std::streamsize>(block.size()));
    }
    if (!out) throw std::runtime_error("write failed: " + idx_path);
    out.close();

    std::ofstream mp(map_path, std::ios::binary);
    if (!mp) throw std::runtime_error("cannot create " + map_path);
    for (uint64_t v = 0; v < g.num_vertices; ++v) {
        uint64_t packed = pack_location(layout.block_of[v], layout.slot_of[v]);
        mp.write(reinterpret_cast<const char*>(&packed), sizeof(packed));
    }
    if (!mp) throw std::runtime_error("write failed: " + map_path);
}

namespace {

std::vector<uint64_t> load_map_file(const std::string& map_path, uint64_t expect_n) {
    std::ifstream mp(map_path, std::ios::binary);
    if (!mp) throw std::runtime_error("cannot open " + map_path);
    mp.seekg(0, std::ios::end);
    uint64_t bytes = static_cast<uint64_t>(mp.tellg());
    mp.seekg(0, std::ios::beg);
    if (bytes != expect_n * sizeof(uint64_t))
        throw std::runtime_error(map_path + ": size does not match vertex count");
    std::vector<uint64_t> map(expect_n);
    mp.read(reinterpret_cast<char*>(map.data()), static_cast<std::streamsize>(bytes));
    if (!mp) throw std::runtime_error(map_path + ": truncated");
    return map;
}

}  // namespace

VerifyReport verify_index(const std::string& idx_path, const std::string& map_path) {
    VerifyReport rep;
    auto fail = [&](const std::string& msg) {
        rep.ok = false;
        rep.first_violation = msg;
        return rep;
    };

    std::ifstream in(idx_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + idx_path);
    in.seekg(0, std::ios::end);
    uint64_t file_bytes = static_cast<uint64_t>(in.tellg());
    in.seekg(0, std::ios::beg);

    if (file_bytes < kHeaderPayload) return fail("file smaller than the header");
    std::vector<std::byte> head(kHeaderPayload);
    in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
    DiskIndexHeader h;
    try {
        h = decode_header(head.data(), idx_path);
    } catch (const std::exception& e) {
        return fail(e.what());
    }

    if (h.n == 0) return fail("header: zero vertices");
    if (h.block_bytes < h.record_bytes()) return fail("header: record larger than block");
    uint64_t want_eps = h.block_bytes / h.record_bytes();
    if (h.slots_per_block != want_eps) return fail("header: slots_per_block mismatch");
    uint64_t want_rho = (h.n + want_eps - 1) / want_eps;
    if (h.num_blocks != want_rho) return fail("header: num_blocks mismatch");
    if (file_bytes != (h.num_blocks + 1) * h.block_bytes)
        return fail("file size != (num_blocks + 1) * block_bytes");

    std::vector<uint64_t> map;
    try {
        map = load_map_file(map_path, h.n);
    } catch (const std::exception& e) {
        return fail(e.what());
    }

    std::vector<std::vector<vertex_id>> occupants(h.num_blocks);
    std::vector<std::vector<bool>> used(h.num_blocks);
    for (auto& u : used) u.assign(h.slots_per_block, false);
    for (uint64_t v = 0; v < h.n; ++v) {
        auto [b, s] = unpack_location(map[v]);
        if (b >= h.num_blocks) return fail("map: block out of range for vertex " + std::to_string(v));
        if (s >= h.slots_per_block)
            return fail("map: slot out of range for vertex " + std::to_string(v));
        if (used[b][s]) return fail("map: duplicate (block, slot) at vertex " + std::to_string(v));
        used[b][s] = true;
        occupants[b].resize(std::max<size_t>(occupants[b].size(), s + 1), UINT32_MAX);
        occupants[b][s] = static_cast<vertex_id>(v);
    }

    std::vector<std::byte> block(h.block_bytes);
    uint64_t rec_bytes = h.record_bytes();
    for (uint64_t b = 0; b < h.num_blocks; ++b) {
        in.seekg(static_cast<std::streamoff>((b + 1) * h.block_bytes));
        in.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size()));
        if (!in) return fail("truncated data block " + std::to_string(b));
        for (uint32_t s = 0; s < h.slots_per_block; ++s) {
            const std::byte* rec = block.data() + s * rec_bytes;
            bool occupied = s < occupants[b].size() && occupants[b][s] != UINT32_MAX;
            if (!occupied) {
                bool all_zero = std::all_of(rec, rec + rec_bytes,
                                            [](std::byte x) { return x == std::byte{0}; });
                if (!all_zero)
                    return fail("unoccupied slot not zero-filled at block " + std::to_string(b) +
                                " slot " + std::to_string(s));
                continue;
            }
            size_t off = h.vector_bytes();
            uint32_t degree = get_pod<uint32_t>(rec, off);
            if (degree > h.max_degree)
                return fail("record degree above cap at vertex " +
                            std::to_string(occupants[b][s]));
            for (uint32_t j = 0; j < h.max_degree; ++j) {
                uint32_t nid = get_pod<uint32_t>(rec, off);
                if (j < degree && nid >= h.n)
                    return fail("neighbor id out of range at vertex " +
                                std::to_string(occupants[b][s]));
                if (j >= degree && nid != 0)
                    return fail("neighbor slot tail not zero at vertex " +
                                std::to_string(occupants[b][s]));
            }
        }
    }
    return rep;
}

DiskIndexReader::DiskIndexReader(const std::string& idx_path, const std::string& map_path,
                                 bool try_direct) {
#ifdef O_DIRECT
    if (try_direct) {
        fd_ = ::open(idx_path.c_str(), O_RDONLY | O_DIRECT);
        direct_io_ = fd_ >= 0;
    }
#else
    (void)try_direct;
#endif
    if (fd_ < 0) {
        fd_ = ::open(idx_path.c_str(), O_RDONLY);
        direct_io_ = false;
    }
    if (fd_ < 0) throw std::runtime_error("cannot open " + idx_path);

    // header block: start with a buffered sniff of the fixed-size prefix
    {
        std::ifstream in(idx_path, std::ios::binary);
        std::vector<std::byte> head(kHeaderPayload);
        in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
        if (!in) throw std::runtime_error(idx_path + ": cannot read header");
        header_ = decode_header(head.data(), idx_path);
    }
    if (direct_io_ && (header_.block_bytes % 4096 != 0)) {
        // direct reads need sector-aligned sizes; reopen buffered
        ::close(fd_);
        fd_ = ::open(idx_path.c_str(), O_RDONLY);
        if (fd_ < 0) throw std::runtime_error("cannot reopen " + idx_path);
        direct_io_ = false;
    }

    map_ = load_map_file(map_path, header_.n);

    slot_vertex_.resize(header_.n);
    std::vector<uint64_t> counts(header_.num_blocks + 1, 0);
    for (uint64_t v = 0; v < header_.n; ++v) {
        auto [b, s] = unpack_location(map_[v]);
        if (b >= header_.num_blocks || s >= header_.slots_per_block)
            throw std::runtime_error(map_path + ": location out of range");
        ++counts[b + 1];
    }
    block_start_.assign(header_.num_blocks + 1, 0);
    for (uint64_t b = 0; b < header_.num_blocks; ++b)
        block_start_[b + 1] = block_start_[b] + counts[b + 1];
    std::vector<uint64_t> cursor(block_start_.begin(), block_start_.end() - 1);
    for (uint64_t v = 0; v < header_.n; ++v) {
        auto [b, s] = unpack_location(map_[v]);
        slot_vertex_[cursor[b]++] = {s, static_cast<vertex_id>(v)};
    }
    for (uint64_t b = 0; b < header_.num_blocks; ++b)
        std::sort(slot_vertex_.begin() + block_start_[b], slot_vertex_.begin() + block_start_[b + 1]);

    // a probe read catches filesystems that accept O_DIRECT at open only
    if (direct_io_) {
        try {
            BlockData probe;
            read_block(0, probe);
            io_count_.fetch_sub(1, std::memory_order_relaxed);  // probe is not a query read
        } catch (const std::exception&) {
            ::close(fd_);
            fd_ = ::open(idx_path.c_str(), O_RDONLY);
            if (fd_ < 0) throw std::runtime_error("cannot reopen " + idx_path);
            direct_io_ = false;
            io_count_.store(0, std::memory_order_relaxed);
        }
    }
}

DiskIndexReader::~DiskIndexReader() {
    if (fd_ >= 0) ::close(fd_);
}

std::pair<uint32_t, uint32_t> DiskIndexReader::locate(vertex_id v) const {
    if (v >= header_.n) throw std::out_of_range("vertex id out of range");
    return unpack_location(map_[v]);
}

void DiskIndexReader::read_block(uint32_t block_id, BlockData& out) const {
    if (block_id >= header_.num_blocks) throw std::out_of_range("block id out of range");
    uint64_t bytes = header_.block_bytes;
    if (out.capacity_ < bytes) {
        void* p = nullptr;
        if (bytes % 4096 == 0) {
            p = std::aligned_alloc(4096, bytes);
        } else {
            p = std::malloc(bytes);
        }
        if (!p) throw std::bad_alloc();
        out.bytes_ = {static_cast<std::byte*>(p), ::free};
        out.capacity_ = bytes;
    }
    uint64_t offset = (static_cast<uint64_t>(block_id) + 1) * bytes;
    // one aligned read per call, counted exactly once
    ssize_t got = ::pread(fd_, out.bytes_.get(), bytes, static_cast<off_t>(offset));
    if (got != static_cast<ssize_t>(bytes))
        throw std::runtime_error("block read failed (errno " + std::to_string(errno) + ")");
    io_count_.fetch_add(1, std::memory_order_relaxed);

    out.block_id = block_id;
    out.record_bytes_ = header_.record_bytes();
    out.vector_bytes_ = header_.vector_bytes();
    out.records.clear();
    for (uint64_t i = block_start_[block_id]; i < block_start_[block_id + 1]; ++i) {
        auto [slot, v] = slot_vertex_[i];
        uint32_t degree = 0;
        std::memcpy(&degree, out.bytes_.get() + slot * out.record_bytes_ + out.vector_bytes_,
                    sizeof(degree));
        out.records.push_back({v, slot, degree});
    }
}

BlockData DiskIndexReader::read_block(uint32_t block_id) const {
    BlockData out;
    read_block(block_id, out);
    return out;
}

}  // namespace starseg
