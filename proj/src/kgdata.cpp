// SPDX-License-Identifier: Apache-2.0
#include "tyler/kgdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tyler/error.hpp"
#include "tyler/rng.hpp"

namespace tyler {

namespace fs = std::filesystem;

std::size_t TripleHash::operator()(const Triple& t) const noexcept {
    std::uint64_t h = mix64((static_cast<std::uint64_t>(t.head) << 32) | t.tail);
    return static_cast<std::size_t>(mix64(h ^ t.rel));
}

std::uint32_t Vocabulary::intern(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it != index_.end()) return it->second;
    auto id = static_cast<std::uint32_t>(names_.size());
    names_.emplace_back(name);
    index_.emplace(names_.back(), id);
    return id;
}

std::optional<std::uint32_t> Vocabulary::find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

KnowledgeGraph::KnowledgeGraph(std::vector<Triple> triples, std::size_t entity_capacity)
    : triples_(std::move(triples)), out_(entity_capacity), in_(entity_capacity) {
    std::vector<bool> seen_entity(entity_capacity, false);
    std::unordered_set<RelationId> seen_rel;
    triple_set_.reserve(triples_.size());
    for (const auto& t : triples_) {
        if (t.head >= entity_capacity || t.tail >= entity_capacity)
            throw LookupError("triple references entity beyond graph capacity");
        out_[t.head].push_back({t.rel, t.tail});
        in_[t.tail].push_back({t.rel, t.head});
        seen_entity[t.head] = true;
        seen_entity[t.tail] = true;
        seen_rel.insert(t.rel);
        triple_set_.insert(t);
    }
    for (std::size_t e = 0; e < entity_capacity; ++e)
        if (seen_entity[e]) entities_.push_back(static_cast<EntityId>(e));
    relations_.assign(seen_rel.begin(), seen_rel.end());
    std::sort(relations_.begin(), relations_.end());
}

std::span<const Neighbor> KnowledgeGraph::out(EntityId e) const {
    if (e >= out_.size()) return {};
    return out_[e];
}

std::span<const Neighbor> KnowledgeGraph::in(EntityId e) const {
    if (e >= in_.size()) return {};
    return in_[e];
}

bool KnowledgeGraph::contains(EntityId e) const {
    return e < out_.size() && (!out_[e].empty() || !in_[e].empty());
}

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find('\t', start);
        if (pos == std::string_view::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

std::string_view chomp(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
    return s;
}

bool blank(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

std::ifstream open_or_throw(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw NotFoundError("cannot open " + file.string());
    return in;
}

// Reads `<file>` as TSV rows with exactly `arity` fields, skipping blank lines.
template <typename Fn>
void for_each_row(const fs::path& file, std::size_t arity, Fn&& fn) {
    auto in = open_or_throw(file);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto view = chomp(line);
        if (blank(view)) continue;
        auto fields = split_tabs(view);
        if (fields.size() != arity)
            throw ParseError(file.string(), lineno,
                             "expected " + std::to_string(arity) + " tab-separated fields, got " +
                                 std::to_string(fields.size()));
        fn(fields, lineno);
    }
}

}  // namespace

std::vector<Triple> parse_triples(std::istream& in, const std::string& source,
                                  Vocabularies& vocab) {
    std::vector<Triple> triples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto view = chomp(line);
        if (blank(view)) continue;
        auto f = split_tabs(view);
        if (f.size() != 3)
            throw ParseError(source, lineno,
                             "expected 3 tab-separated fields, got " + std::to_string(f.size()));
        // interning order within a line: head, relation, tail
        EntityId h = vocab.entities.intern(f[0]);
        RelationId r = vocab.relations.intern(f[1]);
        EntityId t = vocab.entities.intern(f[2]);
        triples.push_back({h, r, t});
    }
    return triples;
}

namespace {

std::vector<Triple> read_triples(const fs::path& file, Vocabularies& vocab) {
    auto in = open_or_throw(file);
    return parse_triples(in, file.string(), vocab);
}

}  // namespace

KnowledgeGraph load_split(const fs::path& dir, std::string_view split, Vocabularies& vocab) {
    auto triples = read_triples(dir / (std::string(split) + ".txt"), vocab);
    return KnowledgeGraph(std::move(triples), vocab.entities.size());
}

void save_split(const fs::path& file, const KnowledgeGraph& graph, const Vocabularies& vocab) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw NotFoundError("cannot write " + file.string());
    for (const auto& t : graph.triples())
        out << vocab.entities.name(t.head) << '\t' << vocab.relations.name(t.rel) << '\t'
            << vocab.entities.name(t.tail) << '\n';
}

double density(const KnowledgeGraph& graph) {
    if (graph.entity_count() == 0) throw DomainError("density of a graph with no entities");
    return 2.0 * static_cast<double>(graph.triples().size()) /
           static_cast<double>(graph.entity_count());
}

InductiveReport validate_inductive(const KnowledgeGraph& train, const KnowledgeGraph& test) {
    InductiveReport report;
    for (EntityId e : test.entities())
        if (train.contains(e)) report.entity_overlap.push_back(e);
    const auto& train_rels = train.relations();
    for (RelationId r : test.relations())
        if (!std::binary_search(train_rels.begin(), train_rels.end(), r))
            report.unknown_relations.push_back(r);
    return report;
}

std::array<std::vector<OntologyTriple>, 3> split_ontology(std::vector<OntologyTriple> triples,
                                                          std::array<double, 3> ratios,
                                                          std::uint64_t seed) {
    double sum = ratios[0] + ratios[1] + ratios[2];
    if (std::abs(sum - 1.0) > 1e-9 || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
        throw DomainError("ontology split ratios must be non-negative and sum to 1");

    Rng rng(seed);
    rng.shuffle(triples);

    const auto n = static_cast<double>(triples.size());
    // the small slack keeps e.g. 30 * 0.1 from flooring to 2
    auto part = [&](double ratio) {
        return static_cast<std::size_t>(std::floor(n * ratio + 1e-9));
    };
    std::size_t n_valid = part(ratios[1]);
    std::size_t n_test = part(ratios[2]);
    std::size_t n_train = triples.size() - n_valid - n_test;

    std::array<std::vector<OntologyTriple>, 3> out;
    auto first = triples.begin();
    out[0].assign(first, first + n_train);
    out[1].assign(first + n_train, first + n_train + n_valid);
    out[2].assign(first + n_train + n_valid, triples.end());
    return out;
}

std::string_view to_string(TypeGroup g) {
    switch (g) {
        case TypeGroup::Untyped: return "0";
        case TypeGroup::Single: return "1";
        case TypeGroup::MultiLower: return ">1 (1st)";
        case TypeGroup::MultiUpper: return ">1 (2nd)";
    }
    return "?";
}

TypeAnnotationIndex build_type_index(const std::vector<std::vector<TypeId>>& type_links) {
    TypeAnnotationIndex index;
    index.counts.reserve(type_links.size());
    std::vector<std::size_t> multi;
    for (const auto& types : type_links) {
        index.counts.push_back(types.size());
        if (types.size() > 1) multi.push_back(types.size());
    }
    if (!multi.empty()) {
        std::sort(multi.begin(), multi.end());
        std::size_t m = multi.size();
        index.multi_median = (m % 2 == 1)
                                 ? static_cast<double>(multi[m / 2])
                                 : 0.5 * static_cast<double>(multi[m / 2 - 1] + multi[m / 2]);
    }
    index.groups.reserve(index.counts.size());
    for (std::size_t c : index.counts) {
        if (c == 0)
            index.groups.push_back(TypeGroup::Untyped);
        else if (c == 1)
            index.groups.push_back(TypeGroup::Single);
        else if (static_cast<double>(c) <= index.multi_median)
            index.groups.push_back(TypeGroup::MultiLower);
        else
            index.groups.push_back(TypeGroup::MultiUpper);
    }
    return index;
}

const std::string& DatasetBundle::label(EntityId e) const {
    auto it = labels.find(e);
    if (it != labels.end()) return it->second;
    return vocab.entities.name(e);
}

std::size_t DatasetBundle::missing_label_count() const {
    std::size_t missing = 0;
    for (std::size_t e = 0; e < vocab.entities.size(); ++e)
        if (!labels.contains(static_cast<EntityId>(e))) ++missing;
    return missing;
}

namespace {

void load_side_files(const fs::path& dir, DatasetBundle& b) {
    if (fs::exists(dir / "labels.tsv")) {
        for_each_row(dir / "labels.tsv", 2, [&](const auto& f, std::size_t lineno) {
            auto id = b.vocab.entities.find(f[0]);
            if (!id) {
                b.warnings.push_back((dir / "labels.tsv").string() + ":" + std::to_string(lineno) +
                                     ": label for unknown entity " + std::string(f[0]));
                return;
            }
            b.labels.emplace(*id, std::string(f[1]));
        });
    }
    if (fs::exists(dir / "type_links.tsv")) {
        for_each_row(dir / "type_links.tsv", 2, [&](const auto& f, std::size_t lineno) {
            auto id = b.vocab.entities.find(f[0]);
            if (!id) {
                b.warnings.push_back((dir / "type_links.tsv").string() + ":" +
                                     std::to_string(lineno) + ": type link for unknown entity " +
                                     std::string(f[0]));
                return;
            }
            TypeId ty = b.vocab.types.intern(f[1]);
            auto& types = b.type_links[*id];
            if (std::find(types.begin(), types.end(), ty) == types.end()) types.push_back(ty);
        });
    }
    if (fs::exists(dir / "onto.txt")) {
        for_each_row(dir / "onto.txt", 3, [&](const auto& f, std::size_t) {
            OntologyTriple o{b.vocab.types.intern(f[0]), b.vocab.meta_relations.intern(f[1]),
                             b.vocab.types.intern(f[2])};
            if (std::find(b.ontology.begin(), b.ontology.end(), o) == b.ontology.end())
                b.ontology.push_back(o);
        });
    }
}

}  // namespace

DatasetBundle load_bundle(const fs::path& dir, const BundleOptions& options) {
    if (!fs::is_directory(dir)) throw NotFoundError("dataset directory not found: " + dir.string());

    DatasetBundle b;
    b.leave_one_out = options.leave_one_out;

    std::optional<fs::path> ind_dir = options.inductive_dir;
    if (!ind_dir) {
        fs::path sibling = dir.string() + "_ind";
        if (fs::is_directory(sibling)) ind_dir = sibling;
    }
    if (ind_dir && !fs::is_directory(*ind_dir))
        throw NotFoundError("inductive directory not found: " + ind_dir->string());

    auto train = read_triples(dir / "train.txt", b.vocab);
    auto valid = fs::exists(dir / "valid.txt") ? read_triples(dir / "valid.txt", b.vocab)
                                               : std::vector<Triple>{};
    auto test = fs::exists(dir / "test.txt") ? read_triples(dir / "test.txt", b.vocab)
                                             : std::vector<Triple>{};
    std::vector<Triple> inference;
    if (ind_dir) {
        inference = read_triples(*ind_dir / "train.txt", b.vocab);
        test = read_triples(*ind_dir / "test.txt", b.vocab);
    }
    if (b.leave_one_out) {
        inference = test;
    } else if (!ind_dir) {
        throw DataError("no inductive inference graph for " + dir.string() +
                        " (expected a sibling _ind directory, or use leave-one-out mode)");
    }

    const std::size_t cap = b.vocab.entities.size();
    b.train = KnowledgeGraph(std::move(train), cap);
    b.valid = KnowledgeGraph(std::move(valid), cap);
    b.test = KnowledgeGraph(std::move(test), cap);
    b.inference = KnowledgeGraph(std::move(inference), cap);

    b.type_links.assign(cap, {});
    load_side_files(dir, b);
    if (ind_dir) load_side_files(*ind_dir, b);
    return b;
}

}  // namespace tyler
