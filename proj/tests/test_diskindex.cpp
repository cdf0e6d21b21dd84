#include <cstring>
#include <fstream>

#include "doctest.h"
#include "starseg/diskindex.hpp"
#include "test_util.hpp"

using namespace starseg;
using namespace testutil;

TEST_SUITE_BEGIN("diskindex");

namespace {

struct Fixture {
    VectorDataset data;
    NeighborGraph graph;
    BlockLayout layout;
    TempDir dir;
    std::string idx, map;

    explicit Fixture(size_t n = 120, size_t dim = 8, uint64_t eta = 256)
        : data(make_clustered_u8(n, dim, /*seed=*/41)), dir("diskindex") {
        BuildParams bp;
        bp.max_degree = 8;
        bp.build_list = 16;
        graph = build_vamana(data, bp);
        layout = shuffle_bnp(graph, layout_geometry(n, dim, ElemType::kUint8, 8, eta)).layout;
        idx = dir.file("seg.idx");
        map = dir.file("seg.map");
        write_index(idx, map, data, graph, layout);
    }
};

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

uint32_t read_u32(const std::vector<char>& bytes, size_t off) {
    uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
}

uint64_t read_u64(const std::vector<char>& bytes, size_t off) {
    uint64_t v;
    std::memcpy(&v, bytes.data() + off, 8);
    return v;
}

}  // namespace

TEST_CASE("packed locations round trip and reject wide slots") {
    CHECK(pack_location(0, 0) == 0);
    CHECK(pack_location(3, 7) == 3 * 256 + 7);
    auto [b, s] = unpack_location(pack_location(123456, 255));
    CHECK(b == 123456);
    CHECK(s == 255);
    CHECK_THROWS_AS(pack_location(1, 256), std::invalid_argument);
}

TEST_CASE("segment header is written byte-exactly") {
    Fixture f;
    std::vector<char> bytes = slurp(f.idx);

    // fixed field order: magic, version, n, dim, max_degree, slots_per_block,
    // num_blocks, block_bytes, elem, metric, pad, entry
    CHECK(std::memcmp(bytes.data(), "STARSEG1", 8) == 0);
    CHECK(read_u32(bytes, 8) == 1);
    CHECK(read_u32(bytes, 12) == 120);
    CHECK(read_u32(bytes, 16) == 8);
    CHECK(read_u32(bytes, 20) == 8);
    CHECK(read_u32(bytes, 24) == f.layout.geom.slots_per_block);
    CHECK(read_u64(bytes, 28) == f.layout.geom.num_blocks);
    CHECK(read_u64(bytes, 36) == 256);
    CHECK(bytes[44] == char(0));  // uint8 element code
    CHECK(bytes[45] == char(0));  // L2 metric code
    CHECK(read_u32(bytes, 48) == f.graph.entry);

    // header block padding is zero and the file is exactly (rho + 1) blocks
    for (size_t i = 52; i < 256; ++i) CHECK(bytes[i] == char(0));
    CHECK(bytes.size() == (f.layout.geom.num_blocks + 1) * 256);

    // map sidecar is one packed u64 per vertex, in id order
    std::vector<char> mbytes = slurp(f.map);
    REQUIRE(mbytes.size() == 120 * 8);
    for (vertex_id v = 0; v < 120; ++v)
        CHECK(read_u64(mbytes, v * 8) == pack_location(f.layout.block_of[v], f.layout.slot_of[v]));
}

TEST_CASE("every record reads back byte-identical") {
    Fixture f;
    DiskIndexReader reader(f.idx, f.map);
    const DiskIndexHeader& h = reader.header();
    CHECK(h.n == 120);
    CHECK(h.record_bytes() == 8 + 4 + 32);
    CHECK(reader.location_map().size() == 120);

    for (vertex_id v = 0; v < 120; ++v) {
        auto [b, s] = reader.locate(v);
        CHECK(b == f.layout.block_of[v]);
        CHECK(s == f.layout.slot_of[v]);

        BlockData block = reader.read_block(b);
        const BlockData::Record* rec = nullptr;
        for (const auto& r : block.records)
            if (r.id == v) rec = &r;
        REQUIRE(rec != nullptr);
        CHECK(rec->slot == s);
        CHECK(rec->degree == f.graph.adjacency[v].size());
        CHECK(std::memcmp(block.vector_of(*rec), f.data.raw(v), f.data.record_bytes()) == 0);
        const uint32_t* nbrs = block.neighbors_of(*rec);
        for (size_t i = 0; i < f.graph.adjacency[v].size(); ++i)
            CHECK(nbrs[i] == f.graph.adjacency[v][i]);
    }

    // records come back in slot order and only for occupied slots
    for (uint32_t b = 0; b < f.layout.geom.num_blocks; ++b) {
        BlockData block = reader.read_block(b);
        CHECK(block.block_id == b);
        CHECK(block.records.size() == f.layout.blocks[b].size());
        for (size_t i = 1; i < block.records.size(); ++i)
            CHECK(block.records[i - 1].slot < block.records[i].slot);
    }

    CHECK_THROWS_AS(reader.locate(120), std::out_of_range);
    CHECK_THROWS_AS(reader.read_block(static_cast<uint32_t>(f.layout.geom.num_blocks)),
                    std::out_of_range);
}

TEST_CASE("io counter counts exactly one read per block request") {
    Fixture f;
    DiskIndexReader reader(f.idx, f.map);
    CHECK(reader.io_count() == 0);  // constructor probes don't count
    BlockData block;
    reader.read_block(0, block);
    reader.read_block(1, block);
    reader.read_block(0, block);  // repeat still hits the disk
    CHECK(reader.io_count() == 3);
}

TEST_CASE("4 KB segments open with direct reads where the filesystem allows") {
    Fixture f(300, 16, 4096);
    DiskIndexReader direct(f.idx, f.map, /*try_direct=*/true);
    DiskIndexReader buffered(f.idx, f.map, /*try_direct=*/false);
    CHECK_FALSE(buffered.direct_io());

    // both modes decode identical records
    for (uint32_t b = 0; b < f.layout.geom.num_blocks; ++b) {
        BlockData x = direct.read_block(b);
        BlockData y = buffered.read_block(b);
        REQUIRE(x.records.size() == y.records.size());
        for (size_t i = 0; i < x.records.size(); ++i) {
            CHECK(x.records[i].id == y.records[i].id);
            CHECK(std::memcmp(x.vector_of(x.records[i]), y.vector_of(y.records[i]),
                              f.data.record_bytes()) == 0);
        }
    }

    // an unaligned block size can never use direct io, but must still work
    Fixture odd(50, 8, 96);
    DiskIndexReader r(odd.idx, odd.map, /*try_direct=*/true);
    CHECK_FALSE(r.direct_io());
    CHECK(r.read_block(0).records.size() == odd.layout.blocks[0].size());
}

TEST_CASE("writer rejects inconsistent inputs") {
    Fixture f;
    BlockLayout small = sequential_layout(layout_geometry(50, 8, ElemType::kUint8, 8, 256));
    CHECK_THROWS_AS(write_index(f.idx + ".x", f.map + ".x", f.data, f.graph, small),
                    std::invalid_argument);

    // more than 256 slots per block cannot be packed into the map format
    VectorDataset tiny = make_clustered_u8(40, 1, /*seed=*/5);
    NeighborGraph g;
    g.max_degree = 1;
    g.adjacency.assign(40, {});
    BlockLayout wide = sequential_layout(layout_geometry(40, 1, ElemType::kUint8, 1, 4096));
    REQUIRE(wide.geom.slots_per_block > 256);
    CHECK_THROWS_AS(write_index(f.idx + ".y", f.map + ".y", tiny, g, wide),
                    std::invalid_argument);
}

TEST_CASE("structural verification accepts a sound segment") {
    Fixture f;
    VerifyReport rep = verify_index(f.idx, f.map);
    CHECK(rep.ok);
    CHECK(rep.first_violation.empty());
}

TEST_CASE("structural verification pinpoints corruption") {
    Fixture f;
    std::vector<char> good = slurp(f.idx);
    std::vector<char> good_map = slurp(f.map);

    SUBCASE("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        dump(f.idx, bytes);
        VerifyReport rep = verify_index(f.idx, f.map);
        CHECK_FALSE(rep.ok);
        CHECK(rep.first_violation.find("magic") != std::string::npos);
    }
    SUBCASE("truncated file") {
        auto bytes = good;
        bytes.resize(bytes.size() - 256);
        dump(f.idx, bytes);
        VerifyReport rep = verify_index(f.idx, f.map);
        CHECK_FALSE(rep.ok);
        CHECK(rep.first_violation.find("file size") != std::string::npos);
    }
    SUBCASE("neighbor id out of range") {
        auto bytes = good;
        // first occupied slot of block 0: corrupt its first neighbor id
        vertex_id v = f.layout.blocks[0][0];
        size_t off = 256 + f.data.record_bytes() + 4;  // block 0, slot 0, after vector+count
        uint32_t bogus = 1'000'000;
        std::memcpy(bytes.data() + off, &bogus, 4);
        (void)v;
        dump(f.idx, bytes);
        VerifyReport rep = verify_index(f.idx, f.map);
        CHECK_FALSE(rep.ok);
        CHECK(rep.first_violation.find("neighbor id") != std::string::npos);
    }
    SUBCASE("dirty padding in an unoccupied slot") {
        Fixture gap(118, 8, 256);  // 118 = 23 full blocks + 3 occupants
        auto bytes = slurp(gap.idx);
        uint32_t last_block = static_cast<uint32_t>(gap.layout.geom.num_blocks) - 1;
        size_t occupants = gap.layout.blocks[last_block].size();
        REQUIRE(occupants < gap.layout.geom.slots_per_block);
        size_t off = (1 + last_block) * 256 + occupants * gap.layout.geom.record_bytes + 1;
        bytes[off] = char(0xEE);
        dump(gap.idx, bytes);
        VerifyReport rep = verify_index(gap.idx, gap.map);
        CHECK_FALSE(rep.ok);
        CHECK(rep.first_violation.find("zero") != std::string::npos);
    }
    SUBCASE("map entries colliding on one slot") {
        auto bytes = good_map;
        std::memcpy(bytes.data() + 8, bytes.data(), 8);  // vertex 1 duplicates vertex 0
        dump(f.map, bytes);
        VerifyReport rep = verify_index(f.idx, f.map);
        CHECK_FALSE(rep.ok);
        CHECK(rep.first_violation.find("duplicate") != std::string::npos);
    }
}

TEST_CASE("round trip through shuffled layouts preserves all content") {
    // the disk image is layout-dependent, but its decoded content is not
    VectorDataset data = make_clustered_u8(150, 8, /*seed=*/77);
    BuildParams bp;
    bp.max_degree = 8;
    bp.build_list = 16;
    NeighborGraph graph = build_vamana(data, bp);
    LayoutGeometry geom = layout_geometry(150, 8, ElemType::kUint8, 8, 256);

    ShuffleParams sp;
    sp.beta = 2;
    ShuffleResult bnp = shuffle_bnp(graph, geom);
    ShuffleResult bnf = shuffle_bnf(graph, bnp.layout, sp);
    ShuffleResult bns = shuffle_bns(graph, bnp.layout, sp);

    TempDir dir("diskround");
    int tag = 0;
    for (const BlockLayout* lay : {&bnp.layout, &bnf.layout, &bns.layout}) {
        std::string idx = dir.file("seg" + std::to_string(tag) + ".idx");
        std::string map = dir.file("seg" + std::to_string(tag) + ".map");
        ++tag;
        write_index(idx, map, data, graph, *lay);
        CHECK(verify_index(idx, map).ok);

        DiskIndexReader reader(idx, map);
        for (vertex_id v = 0; v < 150; ++v) {
            auto [b, s] = reader.locate(v);
            BlockData block = reader.read_block(b);
            bool found = false;
            for (const auto& r : block.records) {
                if (r.slot != s) continue;
                found = true;
                CHECK(r.id == v);
                CHECK(std::memcmp(block.vector_of(r), data.raw(v), data.record_bytes()) == 0);
                CHECK(r.degree == graph.adjacency[v].size());
                const uint32_t* nbrs = block.neighbors_of(r);
                for (size_t i = 0; i < graph.adjacency[v].size(); ++i)
                    CHECK(nbrs[i] == graph.adjacency[v][i]);
            }
            CHECK(found);
        }
    }
}

TEST_SUITE_END();
