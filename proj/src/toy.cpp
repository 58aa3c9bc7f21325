// SPDX-License-Identifier: Apache-2.0
#include "tyler/toy.hpp"

#include <fstream>
#include <string>

#include "tyler/error.hpp"
#include "tyler/rng.hpp"

namespace tyler {

namespace fs = std::filesystem;

namespace {

struct NamedTriple {
    std::string head, rel, tail;
};

struct RingGraph {
    std::vector<NamedTriple> r1;
    std::vector<NamedTriple> r2;
    std::vector<std::pair<std::string, std::string>> types;  // entity, latent type
};

RingGraph build_rings(const std::vector<std::size_t>& rings, const std::string& prefix) {
    RingGraph g;
    std::size_t offset = 0;
    for (std::size_t n : rings) {
        if (n < 4 || n % 2 != 0) throw DomainError("toy rings need an even length >= 4");
        auto name = [&](std::size_t i) { return prefix + std::to_string(offset + i % n); };
        for (std::size_t i = 0; i < n; ++i) {
            g.r1.push_back({name(i), "r1", name(i + 1)});
            g.r2.push_back({name(i), "r2", name(i + 2)});
            g.types.emplace_back(name(i), i % 2 == 0 ? "typeA" : "typeB");
        }
        offset += n;
    }
    return g;
}

void write_triples(const fs::path& file, const std::vector<NamedTriple>& triples) {
    std::ofstream out(file);
    if (!out) throw NotFoundError("cannot write " + file.string());
    for (const auto& t : triples) out << t.head << '\t' << t.rel << '\t' << t.tail << '\n';
}

void write_side_files(const fs::path& dir, const RingGraph& g) {
    std::ofstream labels(dir / "labels.tsv");
    std::ofstream links(dir / "type_links.tsv");
    if (!labels || !links) throw NotFoundError("cannot write side files in " + dir.string());
    for (const auto& [entity, type] : g.types) {
        labels << entity << '\t' << type << '\n';
        links << entity << '\t' << type << '\n';
    }
}

/// Shuffles the r2 triples and carves `counts` held-out slices off the front;
/// the remainder joins every r1 triple in the graph part.
std::vector<std::vector<NamedTriple>> hold_out(RingGraph g, std::initializer_list<std::size_t> counts,
                                               Rng& rng) {
    std::size_t total = 0;
    for (auto c : counts) total += c;
    if (total >= g.r2.size()) throw DomainError("toy hold-out exceeds the available r2 triples");
    rng.shuffle(g.r2);
    std::vector<std::vector<NamedTriple>> parts;
    std::size_t at = 0;
    for (auto c : counts) {
        parts.emplace_back(g.r2.begin() + static_cast<std::ptrdiff_t>(at),
                           g.r2.begin() + static_cast<std::ptrdiff_t>(at + c));
        at += c;
    }
    std::vector<NamedTriple> graph = g.r1;
    graph.insert(graph.end(), g.r2.begin() + static_cast<std::ptrdiff_t>(at), g.r2.end());
    rng.shuffle(graph);
    parts.insert(parts.begin(), std::move(graph));
    return parts;
}

}  // namespace

void write_toy_dataset(const fs::path& dir, const ToyOptions& options) {
    Rng rng(derive_seed({options.seed, 0x746f79ULL}));
    const fs::path ind = dir.string() + "_ind";
    fs::create_directories(dir);
    fs::create_directories(ind);

    RingGraph train = build_rings(options.train_rings, "e");
    auto parts = hold_out(train, {options.valid, options.test}, rng);
    write_triples(dir / "train.txt", parts[0]);
    write_triples(dir / "valid.txt", parts[1]);
    write_triples(dir / "test.txt", parts[2]);
    write_side_files(dir, train);

    RingGraph inductive = build_rings(options.inductive_rings, "i");
    auto ind_parts = hold_out(inductive, {options.inductive_test}, rng);
    write_triples(ind / "train.txt", ind_parts[0]);
    write_triples(ind / "test.txt", ind_parts[1]);
    write_side_files(ind, inductive);
}

EmbeddingStore toy_store(std::uint32_t dim) {
    StoreManifest manifest;
    manifest.model = "hash-fallback";
    manifest.prompts = default_prompts();
    manifest.dim = dim;
    return EmbeddingStore(std::move(manifest), {});
}

}  // namespace tyler
