// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace tyler {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;
using TypeId = std::uint32_t;

struct Triple {
    EntityId head = 0;
    RelationId rel = 0;
    EntityId tail = 0;

    friend bool operator==(const Triple&, const Triple&) = default;
    friend auto operator<=>(const Triple&, const Triple&) = default;
};

struct TripleHash {
    std::size_t operator()(const Triple& t) const noexcept;
};

using TripleSet = std::unordered_set<Triple, TripleHash>;

/// String <-> dense id table. Ids are assigned in first-seen order and never
/// reassigned.
class Vocabulary {
public:
    std::uint32_t intern(std::string_view name);
    std::optional<std::uint32_t> find(std::string_view name) const;
    const std::string& name(std::uint32_t id) const { return names_.at(id); }
    std::size_t size() const noexcept { return names_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

struct Neighbor {
    RelationId rel;
    EntityId node;
};

/// Relation-typed directed multigraph over globally interned entity ids.
/// Adjacency is indexed by id; ids beyond the build-time capacity simply have
/// no neighbors. Immutable once built.
class KnowledgeGraph {
public:
    KnowledgeGraph() = default;
    KnowledgeGraph(std::vector<Triple> triples, std::size_t entity_capacity);

    const std::vector<Triple>& triples() const noexcept { return triples_; }
    std::span<const Neighbor> out(EntityId e) const;
    std::span<const Neighbor> in(EntityId e) const;

    /// True iff the entity occurs in at least one triple.
    bool contains(EntityId e) const;
    bool has_triple(const Triple& t) const { return triple_set_.contains(t); }

    /// Distinct entities / relations that occur in the triples.
    std::size_t entity_count() const noexcept { return entities_.size(); }
    std::size_t relation_count() const noexcept { return relations_.size(); }
    const std::vector<EntityId>& entities() const noexcept { return entities_; }
    const std::vector<RelationId>& relations() const noexcept { return relations_; }
    std::size_t capacity() const noexcept { return out_.size(); }

private:
    std::vector<Triple> triples_;
    std::vector<std::vector<Neighbor>> out_;
    std::vector<std::vector<Neighbor>> in_;
    std::vector<EntityId> entities_;
    std::vector<RelationId> relations_;
    TripleSet triple_set_;
};

struct Vocabularies {
    Vocabulary entities;
    Vocabulary relations;
    Vocabulary types;
    Vocabulary meta_relations;
};

struct OntologyTriple {
    TypeId head = 0;
    RelationId meta = 0;
    TypeId tail = 0;

    friend bool operator==(const OntologyTriple&, const OntologyTriple&) = default;
};

/// Reads `<dir>/<split>.txt` (head TAB relation TAB tail per line), interning
/// new names into `vocab`.
KnowledgeGraph load_split(const std::filesystem::path& dir, std::string_view split,
                          Vocabularies& vocab);

/// Parses already-open TSV text; `source` only labels error messages.
std::vector<Triple> parse_triples(std::istream& in, const std::string& source,
                                  Vocabularies& vocab);

void save_split(const std::filesystem::path& file, const KnowledgeGraph& graph,
                const Vocabularies& vocab);

/// 2|T| / |E|.
double density(const KnowledgeGraph& graph);

struct InductiveReport {
    std::vector<EntityId> entity_overlap;
    std::vector<RelationId> unknown_relations;

    bool valid() const noexcept { return entity_overlap.empty() && unknown_relations.empty(); }
};

InductiveReport validate_inductive(const KnowledgeGraph& train, const KnowledgeGraph& test);

/// Seeded hold-out split. Valid/test sizes are floor(n * ratio); the remainder
/// goes to train.
std::array<std::vector<OntologyTriple>, 3> split_ontology(std::vector<OntologyTriple> triples,
                                                          std::array<double, 3> ratios,
                                                          std::uint64_t seed);

enum class TypeGroup : std::uint8_t { Untyped = 0, Single = 1, MultiLower = 2, MultiUpper = 3 };

std::string_view to_string(TypeGroup g);

struct TypeAnnotationIndex {
    std::vector<std::size_t> counts;  // per entity id
    std::vector<TypeGroup> groups;    // per entity id
    double multi_median = 0.0;        // median count among entities with > 1 type

    TypeGroup group(EntityId e) const {
        return e < groups.size() ? groups[e] : TypeGroup::Untyped;
    }
};

/// `type_links[e]` is the (deduplicated) type set of entity e.
TypeAnnotationIndex build_type_index(const std::vector<std::vector<TypeId>>& type_links);

struct BundleOptions {
    /// GraIL `_ind` directory holding the inductive inference graph
    /// (train.txt) and its test triples. Defaults to `<dir>_ind` if present.
    std::optional<std::filesystem::path> inductive_dir;
    /// Use the test triples themselves as inference graph, masking the
    /// target of each task.
    bool leave_one_out = false;
};

struct DatasetBundle {
    Vocabularies vocab;
    KnowledgeGraph train;
    KnowledgeGraph valid;
    KnowledgeGraph test;
    KnowledgeGraph inference;
    bool leave_one_out = false;

    std::unordered_map<EntityId, std::string> labels;
    std::vector<std::vector<TypeId>> type_links;  // per entity id
    std::vector<OntologyTriple> ontology;
    std::vector<std::string> warnings;

    /// Textual label, or the raw entity identifier when none is known.
    const std::string& label(EntityId e) const;
    std::size_t missing_label_count() const;
};

DatasetBundle load_bundle(const std::filesystem::path& dir, const BundleOptions& options = {});

}  // namespace tyler
