// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <vector>

#include "tyler/semantic.hpp"

namespace tyler {

/// Rule-governed synthetic KG. Entities sit on directed rings of even length
/// and alternate between two latent types. r1 links each entity to its ring
/// successor; r2(X, Z) holds exactly when r1(X, Y) and r1(Y, Z).
struct ToyOptions {
    std::vector<std::size_t> train_rings{10, 10, 10};
    std::vector<std::size_t> inductive_rings{8, 10, 12};
    std::size_t valid = 4;           // r2 triples held out of the training graph
    std::size_t test = 0;            // unused when the inductive split supplies the test set
    std::size_t inductive_test = 4;  // r2 triples held out of the inference graph
    std::uint64_t seed = 7;
};

/// Writes train/valid/test.txt, labels.tsv and type_links.tsv to `dir`, and
/// the inductive graph (disjoint entity names) to `<dir>_ind`. Labels are the
/// latent type names, so hash-fallback embeddings depend on type only.
void write_toy_dataset(const std::filesystem::path& dir, const ToyOptions& options = {});

/// An empty store with the default prompts; every lookup falls back.
EmbeddingStore toy_store(std::uint32_t dim = 16);

}  // namespace tyler
