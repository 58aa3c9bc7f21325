// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <vector>

#include "tyler/kgdata.hpp"

namespace tyler {

inline constexpr int kUnreachable = -1;

/// Edge of an enclosing subgraph in local node indices.
struct LocalEdge {
    std::uint32_t head;
    RelationId rel;
    std::uint32_t tail;

    friend bool operator==(const LocalEdge&, const LocalEdge&) = default;
};

/// Pruned intersection of the k-hop neighborhoods of a target pair, with the
/// double-radius label of every node. Node 0 is the head anchor u and node 1
/// the tail anchor v (a single node when u == v); the remaining nodes follow in
/// increasing entity id.
struct EnclosingSubgraph {
    Triple target;
    int k = 0;
    std::vector<EntityId> nodes;
    std::vector<int> dist_u;
    std::vector<int> dist_v;
    std::vector<LocalEdge> edges;

    std::size_t size() const noexcept { return nodes.size(); }
    std::uint32_t head_index() const noexcept { return 0; }
    std::uint32_t tail_index() const noexcept { return nodes.size() > 1 ? 1 : 0; }
};

/// All entities within k undirected hops of `node`, seed included, sorted.
std::vector<EntityId> khop_neighbors(const KnowledgeGraph& graph, EntityId node, int k);

/// Undirected BFS distances from `anchor` inside the subgraph induced by
/// `candidates`, with `blocked` deleted. Entry i belongs to candidates[i];
/// distances above k come back as kUnreachable.
std::vector<int> restricted_distances(const KnowledgeGraph& graph,
                                      std::span<const EntityId> candidates, EntityId anchor,
                                      EntityId blocked, int k);

/// Enclosing subgraph of `target` with hop budget k. Every copy of the target
/// triple is removed from the graph before any traversal; `mask` names one more
/// triple to hide (leave-one-out inference, negatives of a held-out positive).
EnclosingSubgraph extract_enclosing(const KnowledgeGraph& graph, const Triple& target, int k,
                                    std::optional<Triple> mask = std::nullopt);

/// one-hot(d_u) ++ one-hot(d_v), length 2k+2.
std::vector<double> positional_embedding(int d_u, int d_v, int k);

}  // namespace tyler
