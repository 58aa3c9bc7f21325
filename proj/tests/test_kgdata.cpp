// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "tyler/error.hpp"
#include "tyler/kgdata.hpp"

using namespace tyler;
namespace fs = std::filesystem;

namespace {

std::vector<Triple> parse(const std::string& text, Vocabularies& vocab) {
    std::istringstream in(text);
    return parse_triples(in, "inline", vocab);
}

}  // namespace

TEST(Parse, ThreeLineFile) {
    Vocabularies v;
    auto triples = parse("a\tr1\tb\nb\tr1\tc\na\tr2\tc\n", v);
    KnowledgeGraph g(triples, v.entities.size());
    EXPECT_EQ(g.entity_count(), 3u);
    EXPECT_EQ(g.relation_count(), 2u);
    ASSERT_EQ(g.triples().size(), 3u);
    // line order kept, first-seen interning
    EXPECT_EQ(g.triples()[0], (Triple{0, 0, 1}));
    EXPECT_EQ(g.triples()[2], (Triple{0, 1, 2}));
}

TEST(Parse, EmptyInputGivesEmptyGraph) {
    Vocabularies v;
    KnowledgeGraph g(parse("", v), 0);
    EXPECT_EQ(g.entity_count(), 0u);
    EXPECT_EQ(g.triples().size(), 0u);
}

TEST(Parse, WrongFieldCountReportsLine) {
    Vocabularies v;
    try {
        parse("a\tr\tb\na\tr\n", v);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
    }
}

TEST(Parse, CarriageReturnsAndBlankLines) {
    Vocabularies v;
    auto t = parse("a\tr\tb\r\n\n c\tr\td\n", v);
    EXPECT_EQ(t.size(), 2u);
    EXPECT_EQ(v.entities.name(1), "b");
    EXPECT_EQ(v.entities.name(2), " c");
}

TEST(LoadSplit, MissingFileIsNotFound) {
    Vocabularies v;
    EXPECT_THROW(load_split("/nonexistent-dir", "train", v), NotFoundError);
}

TEST(Graph, AdjacencyMirrorsTriples) {
    Vocabularies v;
    auto triples = parse("a\tr\tb\nb\tr\tc\na\ts\tc\nc\tr\tc\na\tr\tb\n", v);
    KnowledgeGraph g(triples, v.entities.size());
    std::size_t out_total = 0, in_total = 0;
    for (EntityId e = 0; e < 3; ++e) {
        out_total += g.out(e).size();
        in_total += g.in(e).size();
    }
    EXPECT_EQ(out_total, triples.size());
    EXPECT_EQ(in_total, triples.size());
    for (const auto& t : triples) {
        auto out = g.out(t.head);
        auto in = g.in(t.tail);
        EXPECT_TRUE(std::any_of(out.begin(), out.end(),
                                [&](auto n) { return n.rel == t.rel && n.node == t.tail; }));
        EXPECT_TRUE(std::any_of(in.begin(), in.end(),
                                [&](auto n) { return n.rel == t.rel && n.node == t.head; }));
        EXPECT_TRUE(g.has_triple(t));
    }
    EXPECT_TRUE(g.out(99).empty());
}

TEST(Graph, SaveLoadRoundTrip) {
    test_util::TempDir dir;
    Vocabularies v;
    auto triples = parse("x\tp\ty\ny\tq\tz\nz\tp\tx\n", v);
    KnowledgeGraph g(triples, v.entities.size());
    save_split(dir.path() / "train.txt", g, v);
    Vocabularies v2;
    auto g2 = load_split(dir.path(), "train", v2);
    EXPECT_EQ(g2.triples(), g.triples());
    EXPECT_EQ(v2.entities.names(), v.entities.names());
    EXPECT_EQ(v2.relations.names(), v.relations.names());
}

TEST(Density, SelfLoop) {
    KnowledgeGraph g({{0, 0, 0}}, 1);
    EXPECT_DOUBLE_EQ(density(g), 2.0);
}

TEST(Density, EmptyGraphIsDomainError) {
    EXPECT_THROW(density(KnowledgeGraph{}), DomainError);
}

TEST(Density, ExactRatio) {
    // 2|T|/|E| with small integers is exact in binary floating point.
    auto g = test_util::synthetic_graph(4245, 1594, 180);
    EXPECT_EQ(density(g), 2.0 * 4245 / 1594);
}

TEST(Inductive, IdenticalGraphsOverlapEverywhere) {
    Vocabularies v;
    auto triples = parse("a\tr\tb\nb\tr\tc\n", v);
    KnowledgeGraph g(triples, v.entities.size());
    auto rep = validate_inductive(g, g);
    EXPECT_EQ(rep.entity_overlap.size(), 3u);
    EXPECT_TRUE(rep.unknown_relations.empty());
    EXPECT_FALSE(rep.valid());
}

TEST(Inductive, DisjointGraphsSharingRelation) {
    Vocabularies v;
    auto a = parse("a\tr1\tb\n", v);
    auto b = parse("c\tr1\td\n", v);
    KnowledgeGraph ga(a, v.entities.size()), gb(b, v.entities.size());
    EXPECT_TRUE(validate_inductive(ga, gb).valid());
}

TEST(Inductive, UnknownRelationReported) {
    Vocabularies v;
    auto a = parse("a\tr1\tb\n", v);
    auto b = parse("c\tr2\td\n", v);
    auto rep = validate_inductive(KnowledgeGraph(a, 4), KnowledgeGraph(b, 4));
    ASSERT_EQ(rep.unknown_relations.size(), 1u);
    EXPECT_EQ(v.relations.name(rep.unknown_relations[0]), "r2");
}

namespace {

std::vector<OntologyTriple> onto(std::size_t n) {
    std::vector<OntologyTriple> t;
    for (std::size_t i = 0; i < n; ++i)
        t.push_back({static_cast<TypeId>(i), 0, static_cast<TypeId>(i + 1)});
    return t;
}

}  // namespace

TEST(SplitOntology, TenTriples) {
    auto parts = split_ontology(onto(10), {0.8, 0.1, 0.1}, 7);
    EXPECT_EQ(parts[0].size(), 8u);
    EXPECT_EQ(parts[1].size(), 1u);
    EXPECT_EQ(parts[2].size(), 1u);
}

TEST(SplitOntology, FloorArithmetic) {
    for (std::size_t n : {0u, 1u, 9u, 10u, 11u, 99u, 1060u}) {
        auto parts = split_ontology(onto(n), {0.8, 0.1, 0.1}, 3);
        // floor(n/10) computed in integers
        EXPECT_EQ(parts[1].size(), n / 10) << n;
        EXPECT_EQ(parts[2].size(), n / 10) << n;
        EXPECT_EQ(parts[0].size(), n - 2 * (n / 10)) << n;
    }
    auto parts = split_ontology(onto(1060), {0.8, 0.1, 0.1}, 3);
    EXPECT_EQ(parts[0].size(), 848u);
    EXPECT_EQ(parts[1].size(), 106u);
}

TEST(SplitOntology, DeterministicExactPartition) {
    auto a = split_ontology(onto(57), {0.8, 0.1, 0.1}, 11);
    auto b = split_ontology(onto(57), {0.8, 0.1, 0.1}, 11);
    EXPECT_EQ(a, b);
    std::vector<TypeId> heads;
    for (const auto& part : a)
        for (const auto& t : part) heads.push_back(t.head);
    std::sort(heads.begin(), heads.end());
    for (TypeId i = 0; i < 57; ++i) EXPECT_EQ(heads[i], i);
    auto c = split_ontology(onto(57), {0.8, 0.1, 0.1}, 12);
    EXPECT_NE(a, c);
}

TEST(SplitOntology, BadRatios) {
    EXPECT_THROW(split_ontology(onto(5), {0.8, 0.1, 0.2}, 1), DomainError);
}

TEST(TypeIndex, MedianSplit) {
    // a:0, b:1, c:2, d:5 -> median of {2,5} is 3.5
    auto idx = build_type_index({{}, {0}, {0, 1}, {0, 1, 2, 3, 4}});
    EXPECT_EQ(idx.group(0), TypeGroup::Untyped);
    EXPECT_EQ(idx.group(1), TypeGroup::Single);
    EXPECT_EQ(idx.group(2), TypeGroup::MultiLower);
    EXPECT_EQ(idx.group(3), TypeGroup::MultiUpper);
    EXPECT_DOUBLE_EQ(idx.multi_median, 3.5);
}

TEST(TypeIndex, TiesAtMedianGoLow) {
    auto idx = build_type_index({{0, 1}, {0, 1}, {0, 1, 2, 3}});
    EXPECT_DOUBLE_EQ(idx.multi_median, 2.0);
    EXPECT_EQ(idx.group(0), TypeGroup::MultiLower);
    EXPECT_EQ(idx.group(1), TypeGroup::MultiLower);
    EXPECT_EQ(idx.group(2), TypeGroup::MultiUpper);
}

TEST(TypeIndex, AllSingle) {
    auto idx = build_type_index({{3}, {1}, {2}});
    for (EntityId e = 0; e < 3; ++e) EXPECT_EQ(idx.group(e), TypeGroup::Single);
}

TEST(Bundle, InductiveLayoutAndSideFiles) {
    test_util::TempDir root;
    const auto dir = root.path() / "kg";
    test_util::write_text(dir / "train.txt", "a\tr1\tb\nb\tr1\tc\n");
    test_util::write_text(dir / "valid.txt", "a\tr1\tc\n");
    test_util::write_text(dir / "test.txt", "");
    test_util::write_text(dir / "labels.tsv", "a\tAlpha\nzz\tUnknown\n");
    test_util::write_text(dir / "type_links.tsv", "a\tperson\na\tagent\nb\tplace\n");
    const auto ind = root.path() / "kg_ind";
    test_util::write_text(ind / "train.txt", "x\tr1\ty\n");
    test_util::write_text(ind / "test.txt", "y\tr1\tx\n");

    auto b = load_bundle(dir);
    EXPECT_EQ(b.train.triples().size(), 2u);
    EXPECT_EQ(b.valid.triples().size(), 1u);
    EXPECT_EQ(b.inference.triples().size(), 1u);
    EXPECT_EQ(b.test.triples().size(), 1u);
    auto a = *b.vocab.entities.find("a");
    auto c = *b.vocab.entities.find("c");
    EXPECT_EQ(b.label(a), "Alpha");
    EXPECT_EQ(b.label(c), "c");  // raw id fallback
    EXPECT_EQ(b.type_links[a].size(), 2u);
    EXPECT_EQ(b.warnings.size(), 1u);  // zz is not an entity
    EXPECT_TRUE(validate_inductive(b.train, b.inference).valid());
}

TEST(Bundle, MissingInductiveGraphIsDataError) {
    test_util::TempDir root;
    test_util::write_text(root.path() / "kg" / "train.txt", "a\tr\tb\n");
    EXPECT_THROW(load_bundle(root.path() / "kg"), DataError);
    BundleOptions loo;
    loo.leave_one_out = true;
    test_util::write_text(root.path() / "kg" / "test.txt", "a\tr\tb\nb\tr\tc\n");
    auto b = load_bundle(root.path() / "kg", loo);
    EXPECT_EQ(b.inference.triples(), b.test.triples());
}
