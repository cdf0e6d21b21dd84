// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file except in compliance
// with the License. You may obtain a copy of the License at
//
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under the License.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "starseg/bench.hpp"
#include "starseg/dataset.hpp"
#include "starseg/diskindex.hpp"
#include "starseg/engine.hpp"
#include "starseg/graph.hpp"
#include "starseg/layout.hpp"
#include "starseg/pq.hpp"

namespace {

using namespace starseg;
using nlohmann::ordered_json;
using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
    return std::chrono::duration<double>(clock_type::now() - t0).count();
}

ElemType elem_from(const std::string& path, const std::string& override_flag) {
    if (override_flag == "u8") return ElemType::kUint8;
    if (override_flag == "f32") return ElemType::kFloat32;
    std::string ext = std::filesystem::path(path).extension().string();
    if (ext == ".bvecs") return ElemType::kUint8;
    if (ext == ".fvecs") return ElemType::kFloat32;
    throw std::runtime_error("cannot infer element type of " + path +
                             " (use --elem u8|f32 or a .bvecs/.fvecs extension)");
}

Metric metric_from(const std::string& flag) {
    if (flag == "l2") return Metric::kL2;
    if (flag == "ip") return Metric::kIP;
    throw std::runtime_error("unknown metric " + flag);
}

// Ground-truth ids live at `out`; distances in an .fvecs sidecar next to it.
std::string dists_path_for(const std::string& out) {
    std::filesystem::path p(out);
    if (p.has_extension() && p.extension() != ".fvecs") {
        p.replace_extension(".fvecs");
        return p.string();
    }
    return out + ".dists.fvecs";
}

// Rebuild the row-major dataset from the segment's own blocks.
VectorDataset dataset_from_index(const DiskIndexReader& reader) {
    const DiskIndexHeader& h = reader.header();
    VectorDataset data(h.n, h.dim, h.elem, h.metric);
    for (uint64_t b = 0; b < h.num_blocks; ++b) {
        BlockData bd = reader.read_block(static_cast<uint32_t>(b));
        for (const BlockData::Record& rec : bd.records)
            std::memcpy(data.raw_mut(rec.id), bd.vector_of(rec), data.record_bytes());
    }
    return data;
}

BlockLayout layout_from_index(const DiskIndexReader& reader) {
    const DiskIndexHeader& h = reader.header();
    BlockLayout layout;
    layout.geom = h.geometry();
    layout.block_of.resize(h.n);
    layout.slot_of.resize(h.n);
    layout.blocks.resize(h.num_blocks);
    for (vertex_id v = 0; v < h.n; ++v) {
        auto [b, s] = reader.locate(v);
        layout.block_of[v] = b;
        layout.slot_of[v] = s;
        layout.blocks[b].resize(std::max<size_t>(layout.blocks[b].size(), s + 1));
        layout.blocks[b][s] = v;
    }
    validate_layout(layout);
    return layout;
}

ordered_json shuffle_summary(const ShuffleResult& res, const LayoutGeometry& geom,
                             const ShuffleParams& sp) {
    ordered_json j;
    j["algorithm"] = res.algorithm;
    j["beta"] = sp.beta;
    j["tau"] = sp.tau;
    j["or_trace"] = res.or_trace;
    j["epsilon"] = geom.slots_per_block;
    j["rho"] = geom.num_blocks;
    j["seconds"] = res.seconds;
    return j;
}

int cmd_gt(const std::string& data_path, const std::string& queries_path, const std::string& mode,
           uint32_t k, float radius, const std::string& out, const std::string& elem_flag,
           const std::string& metric_flag) {
    Metric metric = metric_from(metric_flag);
    VectorDataset data = load_vectors(data_path, elem_from(data_path, elem_flag), metric);
    QuerySet queries = load_vectors(queries_path, elem_from(queries_path, elem_flag), metric);
    if (queries.dim() != data.dim()) throw std::runtime_error("query dimension mismatch");

    GroundTruth gt;
    std::vector<float> q(data.dim());
    for (size_t qi = 0; qi < queries.size(); ++qi) {
        queries.decode(qi, q.data());
        std::vector<Neighbor> found = mode == "knn" ? brute_force_knn(data, q.data(), k)
                                                    : brute_force_range(data, q.data(), radius);
        gt.ids.emplace_back();
        gt.dists.emplace_back();
        for (const Neighbor& nb : found) {
            gt.ids.back().push_back(nb.id);
            gt.dists.back().push_back(nb.dist);
        }
    }
    std::string dists = dists_path_for(out);
    save_ground_truth(out, dists, gt);

    ordered_json j;
    j["ids"] = out;
    j["dists"] = dists;
    j["queries"] = gt.num_queries();
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_build(const std::string& data_path, uint32_t max_degree, uint32_t build_list, float alpha,
              uint64_t seed, const std::string& prefix, const std::string& elem_flag,
              const std::string& metric_flag) {
    VectorDataset data =
        load_vectors(data_path, elem_from(data_path, elem_flag), metric_from(metric_flag));
    BuildParams bp;
    bp.max_degree = max_degree;
    bp.build_list = build_list;
    bp.alpha = alpha;
    bp.seed = seed;

    auto t0 = clock_type::now();
    NeighborGraph graph = build_vamana(data, bp);
    double secs = seconds_since(t0);
    save_graph(prefix + ".graph", graph);

    ordered_json j;
    j["graph"] = prefix + ".graph";
    j["n"] = graph.size();
    j["avg_degree"] = avg_out_degree(graph);
    j["entry"] = graph.entry;
    j["seconds"] = secs;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_pack(const std::string& data_path, const std::string& graph_path,
             const std::string& layout_mode, const std::string& layout_file, uint64_t block_bytes,
             const std::string& prefix, const std::string& elem_flag,
             const std::string& metric_flag) {
    VectorDataset data =
        load_vectors(data_path, elem_from(data_path, elem_flag), metric_from(metric_flag));
    NeighborGraph graph = load_graph(graph_path);
    if (graph.size() != data.size()) throw std::runtime_error("graph/data size mismatch");
    LayoutGeometry geom =
        layout_geometry(data.size(), data.dim(), data.elem(), graph.max_degree, block_bytes);

    BlockLayout layout;
    if (layout_mode == "seq") {
        layout = sequential_layout(geom);
    } else {
        std::string path = layout_file.empty() ? prefix + ".layout" : layout_file;
        layout = load_layout(path);
        if (layout.geom.num_vertices != geom.num_vertices ||
            layout.geom.block_bytes != geom.block_bytes ||
            layout.geom.slots_per_block != geom.slots_per_block ||
            layout.geom.num_blocks != geom.num_blocks)
            throw std::runtime_error(path + ": layout geometry disagrees with data/graph");
        layout.geom = geom;  // restores record_bytes, absent from the cache file
    }

    write_index(prefix + ".idx", prefix + ".map", data, graph, layout);

    ordered_json j;
    j["idx"] = prefix + ".idx";
    j["map"] = prefix + ".map";
    j["epsilon"] = geom.slots_per_block;
    j["rho"] = geom.num_blocks;
    j["bytes"] = (geom.num_blocks + 1) * geom.block_bytes;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_shuffle(const std::string& prefix, const std::string& algo, uint32_t beta, double tau,
                const std::string& init) {
    DiskIndexReader reader(prefix + ".idx", prefix + ".map");
    NeighborGraph graph = load_graph(prefix + ".graph");
    if (graph.size() != reader.header().n)
        throw std::runtime_error(prefix + ".graph does not match the segment");
    VectorDataset data = dataset_from_index(reader);
    LayoutGeometry geom = reader.header().geometry();

    ShuffleParams sp;
    sp.beta = beta;
    sp.tau = tau;

    ShuffleResult res;
    if (algo == "bnp") {
        res = shuffle_bnp(graph, geom);
    } else if (algo == "bnf") {
        if (!init.empty() && init != "bnp")
            throw std::runtime_error("bnf starts from a bnp layout (--init bnp)");
        res = shuffle_bnf(graph, shuffle_bnp(graph, geom).layout, sp);
    } else {
        // default: refine whatever placement the segment currently holds;
        // --init re-derives a fresh starting layout instead
        BlockLayout start;
        if (init.empty()) {
            start = layout_from_index(reader);
        } else if (init == "bnp") {
            start = shuffle_bnp(graph, geom).layout;
        } else {
            start = shuffle_bnf(graph, shuffle_bnp(graph, geom).layout, ShuffleParams{}).layout;
        }
        res = shuffle_bns(graph, start, sp);
    }

    save_layout(prefix + ".layout", res.layout);
    ordered_json j = shuffle_summary(res, geom, sp);
    std::ofstream side(prefix + ".layout.json", std::ios::trunc);
    side << j.dump(2) << "\n";

    // re-pack the segment in place so searches see the new placement
    write_index(prefix + ".idx", prefix + ".map", data, graph, res.layout);
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_nav(const std::string& data_path, double mu, uint32_t max_degree, uint32_t build_list,
            float alpha, uint64_t seed, const std::string& prefix, const std::string& elem_flag,
            const std::string& metric_flag) {
    VectorDataset data =
        load_vectors(data_path, elem_from(data_path, elem_flag), metric_from(metric_flag));
    BuildParams bp;
    bp.max_degree = max_degree;
    bp.build_list = build_list;
    bp.alpha = alpha;
    bp.seed = seed;

    auto t0 = clock_type::now();
    NavigationGraph nav = build_navigation(data, mu, bp);
    double secs = seconds_since(t0);
    save_navigation(prefix + ".nav", nav);

    ordered_json j;
    j["nav"] = prefix + ".nav";
    j["sampled"] = nav.ids.size();
    j["seconds"] = secs;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_pq(const std::string& data_path, uint64_t budget_bytes, uint64_t seed,
           const std::string& prefix, const std::string& elem_flag,
           const std::string& metric_flag) {
    VectorDataset data =
        load_vectors(data_path, elem_from(data_path, elem_flag), metric_from(metric_flag));
    uint32_t m = choose_m(data.size(), data.dim(), budget_bytes);

    auto t0 = clock_type::now();
    PQCodebook book = train_pq(data, m, seed);
    PQCodes codes = encode_all(book, data);
    double secs = seconds_since(t0);
    save_pq(prefix + ".pq", book, codes);

    ordered_json j;
    j["pq"] = prefix + ".pq";
    j["m"] = m;
    j["code_bytes"] = codes.codes.size();
    j["seconds"] = secs;
    std::cout << j.dump() << "\n";
    return 0;
}

int cmd_search(const std::string& prefix, const std::string& queries_path, const std::string& mode,
               uint32_t k, float radius, uint32_t gamma, double sigma, double phi,
               uint32_t entries, uint32_t nav_list, uint32_t beam, uint32_t initial_capacity,
               uint32_t max_doublings, uint32_t threads, const std::string& pipeline,
               uint32_t repetitions, uint64_t order_seed, const std::string& stats_out,
               const std::string& gt_path, const std::string& elem_flag) {
    DiskIndexReader reader(prefix + ".idx", prefix + ".map");
    QuerySet queries = load_vectors(queries_path, elem_from(queries_path, elem_flag),
                                    reader.header().metric);
    if (queries.dim() != reader.header().dim)
        throw std::runtime_error("query dimension does not match the segment");

    PQCodebook book;
    PQCodes codes;
    load_pq(prefix + ".pq", book, codes);

    NavigationGraph nav;
    bool has_nav = std::filesystem::exists(prefix + ".nav");
    if (has_nav) nav = load_navigation(prefix + ".nav");

    BlockSearcher searcher(reader, book, codes, has_nav ? &nav : nullptr);

    SearchParams p;
    p.k = k;
    p.candidate_capacity = std::max(gamma, k);
    p.sigma = sigma;
    p.entry_count = entries;
    p.nav_list_size = nav_list;
    p.beam_width = beam;
    p.pipeline = pipeline == "on";
    p.radius = radius;
    p.phi = phi;
    p.initial_capacity = initial_capacity;
    p.max_doublings = max_doublings;

    BenchOptions opt;
    opt.threads = threads;
    opt.repetitions = repetitions;
    opt.seed = order_seed;
    opt.range_mode = mode == "range";

    BenchReport rep = run_benchmark(searcher, queries, p, opt);

    for (size_t qi = 0; qi < rep.results.size(); ++qi)
        for (size_t rank = 0; rank < rep.results[qi].size(); ++rank)
            std::printf("%zu %zu %u %.9g\n", qi, rank, rep.results[qi][rank].id,
                        static_cast<double>(rep.results[qi][rank].dist));

    double metric_value = std::nan("");
    if (!gt_path.empty()) {
        GroundTruth gt = load_ground_truth(gt_path, dists_path_for(gt_path));
        metric_value = opt.range_mode ? eval_ap(rep.results, gt, radius).ap
                                      : eval_recall(rep.results, gt, k);
    }
    std::string stats = stats_json(rep, opt.range_mode ? "ap" : "recall", metric_value);
    if (stats_out.empty()) {
        std::cout << stats << "\n";
    } else {
        std::ofstream out(stats_out, std::ios::trunc);
        if (!out) throw std::runtime_error("cannot create " + stats_out);
        out << stats << "\n";
    }
    return 0;
}

int cmd_layout_stats(const std::string& prefix, const std::string& graph_path, bool as_json) {
    DiskIndexReader reader(prefix + ".idx", prefix + ".map");
    NeighborGraph graph = load_graph(graph_path);
    if (graph.size() != reader.header().n)
        throw std::runtime_error(graph_path + " does not match the segment");
    BlockLayout layout = layout_from_index(reader);
    double current = or_graph(graph, layout);
    LayoutGeometry geom = reader.header().geometry();

    ordered_json j;
    j["algorithm"] = "unknown";
    j["beta"] = 0;
    j["tau"] = 0.0;
    j["or_trace"] = std::vector<double>{current};
    j["epsilon"] = geom.slots_per_block;
    j["rho"] = geom.num_blocks;
    j["seconds"] = 0.0;

    std::string side_path = prefix + ".layout.json";
    if (std::filesystem::exists(side_path)) {
        std::ifstream side(side_path);
        ordered_json recorded = ordered_json::parse(side, nullptr, false);
        if (!recorded.is_discarded() && recorded.contains("or_trace") &&
            !recorded["or_trace"].empty() &&
            std::abs(recorded["or_trace"].back().get<double>() - current) < 1e-9)
            j = recorded;  // the segment still carries that shuffle's placement
    }

    if (as_json) {
        std::cout << j.dump(2) << "\n";
    } else {
        std::cout << "algorithm " << j["algorithm"].get<std::string>() << "\n"
                  << "beta " << j["beta"] << "\n"
                  << "tau " << j["tau"] << "\n"
                  << "epsilon " << j["epsilon"] << "\n"
                  << "rho " << j["rho"] << "\n"
                  << "seconds " << j["seconds"] << "\n";
        std::cout << "or_trace";
        for (const auto& v : j["or_trace"]) std::cout << " " << v.get<double>();
        std::cout << "\n";
    }
    return 0;
}

int cmd_verify(const std::string& prefix) {
    VerifyReport rep = verify_index(prefix + ".idx", prefix + ".map");
    ordered_json j;
    j["ok"] = rep.ok;
    if (!rep.ok) j["violation"] = rep.first_violation;
    std::cout << j.dump() << "\n";
    return rep.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-segment disk-resident graph index for vector search"};
    app.require_subcommand(1);

    // gt
    auto* gt = app.add_subcommand("gt", "exhaustive ground truth for a query set");
    std::string gt_data, gt_queries, gt_mode = "knn", gt_out, gt_elem, gt_metric = "l2";
    uint32_t gt_k = 0;
    float gt_r = -1.0f;
    gt->add_option("--data", gt_data)->required();
    gt->add_option("--queries", gt_queries)->required();
    gt->add_option("--mode", gt_mode)->check(CLI::IsMember({"knn", "range"}));
    gt->add_option("--k", gt_k);
    gt->add_option("--r", gt_r);
    gt->add_option("--out", gt_out)->required();
    gt->add_option("--elem", gt_elem)->check(CLI::IsMember({"u8", "f32"}));
    gt->add_option("--metric", gt_metric)->check(CLI::IsMember({"l2", "ip"}));

    // build
    auto* build = app.add_subcommand("build", "construct the pruned proximity graph");
    std::string b_data, b_out, b_elem, b_metric = "l2";
    uint32_t b_degree = 48, b_list = 128;
    float b_alpha = 1.2f;
    uint64_t b_seed = 42;
    build->add_option("--data", b_data)->required();
    build->add_option("--max-degree", b_degree);
    build->add_option("--build-list", b_list);
    build->add_option("--alpha", b_alpha);
    build->add_option("--seed", b_seed);
    build->add_option("--out", b_out)->required();
    build->add_option("--elem", b_elem)->check(CLI::IsMember({"u8", "f32"}));
    build->add_option("--metric", b_metric)->check(CLI::IsMember({"l2", "ip"}));

    // shuffle
    auto* shuffle = app.add_subcommand("shuffle", "re-place vertices into blocks and re-pack");
    std::string s_prefix, s_algo, s_init;
    uint32_t s_beta = 8;
    double s_tau = 0.01;
    shuffle->add_option("--index", s_prefix)->required();
    shuffle->add_option("--algo", s_algo)->required()->check(CLI::IsMember({"bnp", "bnf", "bns"}));
    shuffle->add_option("--beta", s_beta);
    shuffle->add_option("--tau", s_tau);
    shuffle->add_option("--init", s_init)->check(CLI::IsMember({"bnp", "bnf"}));

    // pack
    auto* pack = app.add_subcommand("pack", "serialize data+graph+layout into a segment");
    std::string p_data, p_graph, p_layout = "seq", p_layout_file, p_out, p_elem, p_metric = "l2";
    uint64_t p_block = 4096;
    pack->add_option("--data", p_data)->required();
    pack->add_option("--graph", p_graph)->required();
    pack->add_option("--layout", p_layout)->check(CLI::IsMember({"seq", "file"}));
    pack->add_option("--layout-file", p_layout_file);
    pack->add_option("--block-size", p_block);
    pack->add_option("--out", p_out)->required();
    pack->add_option("--elem", p_elem)->check(CLI::IsMember({"u8", "f32"}));
    pack->add_option("--metric", p_metric)->check(CLI::IsMember({"l2", "ip"}));

    // nav
    auto* nav = app.add_subcommand("nav", "in-memory navigation graph over a sample");
    std::string n_data, n_out, n_elem, n_metric = "l2";
    double n_mu = 0.1;
    uint32_t n_degree = 48, n_list = 128;
    float n_alpha = 1.2f;
    uint64_t n_seed = 42;
    nav->add_option("--data", n_data)->required();
    nav->add_option("--mu", n_mu);
    nav->add_option("--max-degree", n_degree);
    nav->add_option("--build-list", n_list);
    nav->add_option("--alpha", n_alpha);
    nav->add_option("--seed", n_seed);
    nav->add_option("--out", n_out)->required();
    nav->add_option("--elem", n_elem)->check(CLI::IsMember({"u8", "f32"}));
    nav->add_option("--metric", n_metric)->check(CLI::IsMember({"l2", "ip"}));

    // pq
    auto* pq = app.add_subcommand("pq", "train the product quantizer and encode all vectors");
    std::string q_data, q_out, q_elem, q_metric = "l2";
    uint64_t q_budget = 0, q_seed = 42;
    pq->add_option("--data", q_data)->required();
    pq->add_option("--budget-bytes", q_budget)->required();
    pq->add_option("--seed", q_seed);
    pq->add_option("--out", q_out)->required();
    pq->add_option("--elem", q_elem)->check(CLI::IsMember({"u8", "f32"}));
    pq->add_option("--metric", q_metric)->check(CLI::IsMember({"l2", "ip"}));

    // search
    auto* search = app.add_subcommand("search", "run queries against a packed segment");
    std::string se_prefix, se_queries, se_mode = "knn", se_pipeline = "on", se_stats, se_gt,
                se_elem;
    uint32_t se_k = 10, se_gamma = 128, se_entries = 8, se_nav_list = 32, se_beam = 1;
    uint32_t se_cap0 = 100, se_doubl = 10, se_threads = 1, se_reps = 3;
    float se_r = -1.0f;
    double se_sigma = 0.3, se_phi = 0.5;
    uint64_t se_seed = 123;
    search->add_option("--index", se_prefix)->required();
    search->add_option("--queries", se_queries)->required();
    search->add_option("--mode", se_mode)->check(CLI::IsMember({"knn", "range"}));
    search->add_option("--k", se_k);
    search->add_option("--r", se_r);
    search->add_option("--gamma", se_gamma);
    search->add_option("--sigma", se_sigma);
    search->add_option("--phi", se_phi);
    search->add_option("--entries", se_entries);
    search->add_option("--nav-list", se_nav_list);
    search->add_option("--beam", se_beam);
    search->add_option("--initial-capacity", se_cap0);
    search->add_option("--max-doublings", se_doubl);
    search->add_option("--threads", se_threads);
    search->add_option("--pipeline", se_pipeline)->check(CLI::IsMember({"on", "off"}));
    search->add_option("--reps", se_reps);
    search->add_option("--order-seed", se_seed);
    search->add_option("--stats-out", se_stats);
    search->add_option("--gt", se_gt);
    search->add_option("--elem", se_elem)->check(CLI::IsMember({"u8", "f32"}));

    // layout-stats
    auto* ls = app.add_subcommand("layout-stats", "block placement quality of a segment");
    std::string ls_prefix, ls_graph;
    bool ls_json = false;
    ls->add_option("--index", ls_prefix)->required();
    ls->add_option("--graph", ls_graph)->required();
    ls->add_flag("--json", ls_json);

    // verify
    auto* verify = app.add_subcommand("verify", "structural check of a segment and its map");
    std::string v_prefix;
    verify->add_option("--index", v_prefix)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gt->parsed()) {
            if (gt_mode == "knn" && gt_k == 0) throw std::runtime_error("knn mode requires --k");
            if (gt_mode == "range" && gt_r < 0.0f)
                throw std::runtime_error("range mode requires a non-negative --r");
            return cmd_gt(gt_data, gt_queries, gt_mode, gt_k, gt_r, gt_out, gt_elem, gt_metric);
        }
        if (build->parsed())
            return cmd_build(b_data, b_degree, b_list, b_alpha, b_seed, b_out, b_elem, b_metric);
        if (shuffle->parsed()) {
            return cmd_shuffle(s_prefix, s_algo, s_beta, s_tau, s_init);
        }
        if (pack->parsed())
            return cmd_pack(p_data, p_graph, p_layout, p_layout_file, p_block, p_out, p_elem,
                            p_metric);
        if (nav->parsed())
            return cmd_nav(n_data, n_mu, n_degree, n_list, n_alpha, n_seed, n_out, n_elem,
                           n_metric);
        if (pq->parsed()) return cmd_pq(q_data, q_budget, q_seed, q_out, q_elem, q_metric);
        if (search->parsed()) {
            if (se_mode == "range" && se_r < 0.0f)
                throw std::runtime_error("range mode requires a non-negative --r");
            return cmd_search(se_prefix, se_queries, se_mode, se_k, se_r, se_gamma, se_sigma,
                              se_phi, se_entries, se_nav_list, se_beam, se_cap0, se_doubl,
                              se_threads, se_pipeline, se_reps, se_seed, se_stats, se_gt, se_elem);
        }
        if (ls->parsed()) return cmd_layout_stats(ls_prefix, ls_graph, ls_json);
        if (verify->parsed()) return cmd_verify(v_prefix);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
