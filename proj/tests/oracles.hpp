// SPDX-License-Identifier: Apache-2.0
// Reference implementations used only by the tests. They work from raw
// triple lists and dense matrices, sharing no code with the library paths
// they check.
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <tuple>
#include <vector>

#include "tyler/gnn.hpp"
#include "tyler/kgdata.hpp"

namespace oracle {

using tyler::EntityId;
using tyler::Triple;

inline constexpr int kInf = std::numeric_limits<int>::max() / 4;

/// Undirected 0/1 adjacency over n nodes, hidden triples dropped, self loops
/// ignored.
inline std::vector<std::vector<int>> adjacency(std::size_t n, const std::vector<Triple>& triples,
                                               const std::vector<Triple>& hidden) {
    std::vector<std::vector<int>> a(n, std::vector<int>(n, 0));
    for (const auto& t : triples) {
        if (std::find(hidden.begin(), hidden.end(), t) != hidden.end()) continue;
        if (t.head == t.tail) continue;
        a[t.head][t.tail] = a[t.tail][t.head] = 1;
    }
    return a;
}

/// Nodes reachable from `seed` in <= k steps: the nonzero entries of row
/// `seed` of (I + A)^k.
inline std::set<EntityId> reach(const std::vector<std::vector<int>>& a, EntityId seed, int k) {
    const std::size_t n = a.size();
    std::vector<int> row(n, 0);
    row[seed] = 1;
    for (int step = 0; step < k; ++step) {
        std::vector<int> next = row;
        for (std::size_t i = 0; i < n; ++i)
            if (row[i])
                for (std::size_t j = 0; j < n; ++j)
                    if (a[i][j]) next[j] = 1;
        row = std::move(next);
    }
    std::set<EntityId> out;
    for (std::size_t i = 0; i < n; ++i)
        if (row[i]) out.insert(static_cast<EntityId>(i));
    return out;
}

/// All-pairs shortest paths (Floyd-Warshall) over the subgraph induced by
/// `allowed`.
inline std::vector<std::vector<int>> shortest_paths(const std::vector<std::vector<int>>& a,
                                                    const std::vector<bool>& allowed) {
    const std::size_t n = a.size();
    std::vector<std::vector<int>> d(n, std::vector<int>(n, kInf));
    for (std::size_t i = 0; i < n; ++i) {
        if (!allowed[i]) continue;
        d[i][i] = 0;
        for (std::size_t j = 0; j < n; ++j)
            if (allowed[j] && a[i][j]) d[i][j] = 1;
    }
    for (std::size_t m = 0; m < n; ++m)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j)
                if (d[i][m] + d[m][j] < d[i][j]) d[i][j] = d[i][m] + d[m][j];
    return d;
}

struct Subgraph {
    std::vector<EntityId> nodes;  // u, v, then ascending id
    std::vector<int> du, dv;      // -1 = unreachable
    std::multiset<std::tuple<EntityId, std::uint32_t, EntityId>> edges;  // entity ids
};

/// Two-step definition: intersect the k-hop neighborhoods, then repeatedly
/// drop nodes beyond distance k from either anchor (paths avoiding the other
/// anchor) or without a neighbor in the remaining set.
inline Subgraph enclosing(std::size_t n, const std::vector<Triple>& triples, const Triple& target,
                          int k, std::optional<Triple> mask = std::nullopt) {
    std::vector<Triple> hidden{target};
    if (mask) hidden.push_back(*mask);
    const EntityId u = target.head, v = target.tail;
    const auto a = adjacency(n, triples, hidden);

    Subgraph out;
    if (u == v) {
        out.nodes = {u};
        out.du = {0};
        out.dv = {1};
        for (const auto& t : triples)
            if (t.head == u && t.tail == u &&
                std::find(hidden.begin(), hidden.end(), t) == hidden.end())
                out.edges.insert({t.head, t.rel, t.tail});
        return out;
    }

    auto nu = reach(a, u, k), nv = reach(a, v, k);
    std::vector<bool> in(n, false);
    for (auto x : nu)
        if (nv.contains(x)) in[x] = true;
    in[u] = in[v] = true;

    std::vector<std::vector<int>> du, dv;
    while (true) {
        auto without_v = in, without_u = in;
        without_v[v] = false;
        without_u[u] = false;
        du = shortest_paths(a, without_v);
        dv = shortest_paths(a, without_u);
        std::vector<bool> keep = in;
        for (std::size_t i = 0; i < n; ++i) {
            if (!in[i] || i == u || i == v) continue;
            if (du[u][i] > k || dv[v][i] > k) keep[i] = false;
        }
        bool changed = true;
        while (changed) {
            changed = false;
            for (std::size_t i = 0; i < n; ++i) {
                if (!keep[i] || i == u || i == v) continue;
                bool linked = false;
                for (std::size_t j = 0; j < n; ++j)
                    if (j != i && keep[j] && a[i][j]) linked = true;
                if (!linked) {
                    keep[i] = false;
                    changed = true;
                }
            }
        }
        if (keep == in) break;
        in = keep;
    }

    out.nodes = {u, v};
    for (std::size_t i = 0; i < n; ++i)
        if (in[i] && i != u && i != v) out.nodes.push_back(static_cast<EntityId>(i));
    for (auto x : out.nodes) {
        const int a_u = du[u][x], a_v = dv[v][x];
        out.du.push_back(a_u > k ? -1 : a_u);
        out.dv.push_back(a_v > k ? -1 : a_v);
    }
    out.du[0] = 0, out.dv[0] = 1, out.du[1] = 1, out.dv[1] = 0;
    for (const auto& t : triples) {
        if (std::find(hidden.begin(), hidden.end(), t) != hidden.end()) continue;
        if (in[t.head] && in[t.tail]) out.edges.insert({t.head, t.rel, t.tail});
    }
    return out;
}

/// Pessimistic rank by listing every candidate ordering position: the
/// positive sits after every candidate that is not strictly worse.
inline std::size_t enumerate_rank(double pos, const std::vector<double>& neg) {
    std::vector<std::pair<double, int>> all;
    for (double s : neg) all.push_back({s, 0});
    all.push_back({pos, 1});
    // Sort descending by score; among ties the positive goes last.
    std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        return x.second < y.second;
    });
    for (std::size_t i = 0; i < all.size(); ++i)
        if (all[i].second == 1) return i + 1;
    return 0;
}

/// Tiny model used by the gradient checks: every dimension is small enough
/// for per-scalar finite differences.
inline tyler::ModelConfig tiny_config(std::uint64_t seed, bool semantic) {
    tyler::ModelConfig c;
    c.hops = 1;  // 4 positional features
    c.layers = 2;
    c.hidden_dim = 4;
    c.bases = 2;
    c.attention_dim = 4;
    c.relation_count = 3;
    c.semantic_enabled = semantic;
    c.semantic.plm_dim = 4;
    c.semantic.prompt_count = 6;
    c.semantic.proj_dim = 4;
    c.semantic.out_dim = 4;
    c.seed = seed;
    return c;
}

/// Central difference of f with respect to every scalar of every parameter.
template <typename F>
std::vector<tyler::ad::Matrix> numeric_gradient(tyler::ad::ParameterSet& params, F&& f,
                                                double eps) {
    std::vector<tyler::ad::Matrix> g;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& m = params.value(p);
        tyler::ad::Matrix gp = tyler::ad::Matrix::Zero(m.rows(), m.cols());
        for (Eigen::Index i = 0; i < m.size(); ++i) {
            const double saved = m.data()[i];
            m.data()[i] = saved + eps;
            const double up = f();
            m.data()[i] = saved - eps;
            const double down = f();
            m.data()[i] = saved;
            gp.data()[i] = (up - down) / (2 * eps);
        }
        g.push_back(std::move(gp));
    }
    return g;
}

/// |a - n| / max(|a|, |n|, floor).
inline double relative_error(double a, double n, double floor = 1e-6) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

}  // namespace oracle
