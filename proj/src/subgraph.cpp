// SPDX-License-Identifier: Apache-2.0
#include "tyler/subgraph.hpp"

#include <algorithm>
#include <deque>
#include <unordered_map>

#include "tyler/error.hpp"

namespace tyler {

namespace {

// Triples hidden from every traversal of one extraction.
struct EdgeMask {
    std::optional<Triple> a;
    std::optional<Triple> b;

    bool hides_out(EntityId from, const Neighbor& n) const {
        Triple t{from, n.rel, n.node};
        return (a && *a == t) || (b && *b == t);
    }
    bool hides_in(EntityId to, const Neighbor& n) const {
        Triple t{n.node, n.rel, to};
        return (a && *a == t) || (b && *b == t);
    }
};

template <typename Fn>
void for_each_undirected(const KnowledgeGraph& g, EntityId x, const EdgeMask& mask, Fn&& fn) {
    for (const auto& n : g.out(x))
        if (!mask.hides_out(x, n)) fn(n.node);
    for (const auto& n : g.in(x))
        if (!mask.hides_in(x, n)) fn(n.node);
}

std::vector<EntityId> khop(const KnowledgeGraph& g, EntityId seed, int k, const EdgeMask& mask) {
    std::unordered_map<EntityId, int> dist{{seed, 0}};
    std::deque<EntityId> queue{seed};
    while (!queue.empty()) {
        EntityId x = queue.front();
        queue.pop_front();
        int d = dist[x];
        if (d == k) continue;
        for_each_undirected(g, x, mask, [&](EntityId y) {
            if (dist.emplace(y, d + 1).second) queue.push_back(y);
        });
    }
    std::vector<EntityId> out;
    out.reserve(dist.size());
    for (const auto& [e, _] : dist) out.push_back(e);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> bfs_within(const KnowledgeGraph& g, std::span<const EntityId> nodes,
                            const std::unordered_map<EntityId, std::uint32_t>& local,
                            EntityId anchor, EntityId blocked, int k, const EdgeMask& mask) {
    std::vector<int> dist(nodes.size(), kUnreachable);
    auto it = local.find(anchor);
    if (it == local.end() || anchor == blocked) return dist;
    dist[it->second] = 0;
    std::deque<std::uint32_t> queue{it->second};
    while (!queue.empty()) {
        std::uint32_t x = queue.front();
        queue.pop_front();
        int d = dist[x];
        if (d == k) continue;
        for_each_undirected(g, nodes[x], mask, [&](EntityId y) {
            if (y == blocked) return;
            auto jt = local.find(y);
            if (jt == local.end() || dist[jt->second] != kUnreachable) return;
            dist[jt->second] = d + 1;
            queue.push_back(jt->second);
        });
    }
    return dist;
}

std::unordered_map<EntityId, std::uint32_t> index_of(std::span<const EntityId> nodes) {
    std::unordered_map<EntityId, std::uint32_t> local;
    local.reserve(nodes.size());
    for (std::uint32_t i = 0; i < nodes.size(); ++i) local.emplace(nodes[i], i);
    return local;
}

void require_node(const KnowledgeGraph& g, EntityId e) {
    if (e >= g.capacity() || !g.contains(e))
        throw LookupError("entity " + std::to_string(e) + " is not in the graph");
}

}  // namespace

std::vector<EntityId> khop_neighbors(const KnowledgeGraph& graph, EntityId node, int k) {
    if (k < 1) throw DomainError("hop budget must be at least 1");
    require_node(graph, node);
    return khop(graph, node, k, {});
}

std::vector<int> restricted_distances(const KnowledgeGraph& graph,
                                      std::span<const EntityId> candidates, EntityId anchor,
                                      EntityId blocked, int k) {
    if (anchor == blocked) throw DomainError("anchor and blocked node must differ");
    return bfs_within(graph, candidates, index_of(candidates), anchor, blocked, k, {});
}

EnclosingSubgraph extract_enclosing(const KnowledgeGraph& graph, const Triple& target, int k,
                                    std::optional<Triple> mask) {
    if (k < 1) throw DomainError("hop budget must be at least 1");
    require_node(graph, target.head);
    require_node(graph, target.tail);

    const EntityId u = target.head;
    const EntityId v = target.tail;
    const EdgeMask hidden{target, mask};

    EnclosingSubgraph sg;
    sg.target = target;
    sg.k = k;

    if (u == v) {
        sg.nodes = {u};
        sg.dist_u = {0};
        sg.dist_v = {1};
        for (const auto& n : graph.out(u))
            if (n.node == u && !hidden.hides_out(u, n)) sg.edges.push_back({0, n.rel, 0});
        return sg;
    }

    // Candidate set: anchors first, then the k-hop intersection in id order.
    std::vector<EntityId> nodes{u, v};
    {
        auto nu = khop(graph, u, k, hidden);
        auto nv = khop(graph, v, k, hidden);
        std::vector<EntityId> common;
        std::set_intersection(nu.begin(), nu.end(), nv.begin(), nv.end(),
                              std::back_inserter(common));
        for (EntityId e : common)
            if (e != u && e != v) nodes.push_back(e);
    }

    std::vector<int> du, dv;
    while (true) {
        auto local = index_of(nodes);
        du = bfs_within(graph, nodes, local, u, v, k, hidden);
        dv = bfs_within(graph, nodes, local, v, u, k, hidden);

        std::vector<bool> keep(nodes.size(), false);
        keep[0] = keep[1] = true;
        for (std::size_t i = 2; i < nodes.size(); ++i)
            keep[i] = du[i] != kUnreachable && dv[i] != kUnreachable;

        // isolated-node pruning, repeated since each removal can isolate another
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t i = 2; i < nodes.size(); ++i) {
                if (!keep[i]) continue;
                bool linked = false;
                for_each_undirected(graph, nodes[i], hidden, [&](EntityId y) {
                    if (linked || y == nodes[i]) return;
                    auto jt = local.find(y);
                    if (jt != local.end() && keep[jt->second]) linked = true;
                });
                if (!linked) {
                    keep[i] = false;
                    changed = true;
                }
            }
        }

        if (std::all_of(keep.begin(), keep.end(), [](bool b) { return b; })) break;
        std::vector<EntityId> next;
        for (std::size_t i = 0; i < nodes.size(); ++i)
            if (keep[i]) next.push_back(nodes[i]);
        nodes = std::move(next);
    }

    sg.nodes = std::move(nodes);
    sg.dist_u = std::move(du);
    sg.dist_v = std::move(dv);
    sg.dist_u[0] = 0;
    sg.dist_v[0] = 1;
    sg.dist_u[1] = 1;
    sg.dist_v[1] = 0;

    auto local = index_of(sg.nodes);
    for (std::uint32_t i = 0; i < sg.nodes.size(); ++i) {
        for (const auto& n : graph.out(sg.nodes[i])) {
            if (hidden.hides_out(sg.nodes[i], n)) continue;
            auto jt = local.find(n.node);
            if (jt != local.end()) sg.edges.push_back({i, n.rel, jt->second});
        }
    }
    return sg;
}

std::vector<double> positional_embedding(int d_u, int d_v, int k) {
    if (k < 1) throw DomainError("hop budget must be at least 1");
    if (d_u < 0 || d_u > k || d_v < 0 || d_v > k)
        throw DomainError("node distance outside [0, k]");
    std::vector<double> h(static_cast<std::size_t>(2 * k + 2), 0.0);
    h[static_cast<std::size_t>(d_u)] = 1.0;
    h[static_cast<std::size_t>(k + 1 + d_v)] = 1.0;
    return h;
}

}  // namespace tyler
