#include <algorithm>
#include <numeric>
#include <set>

#include "mabd/kkt_solvers.hpp"

namespace mabd {

namespace {

struct UnionFind {
    std::vector<int> parent;
    explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    int find(int x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(int a, int b) {
        a = find(a);
        b = find(b);
        if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
};

using JointList = std::vector<std::pair<int, int>>;

// Joint adjacency (shared simulated body) forms a simple path; returns the order.
bool joint_path(int num_bodies, const JointList& joints, const std::vector<int>& active, std::vector<int>* order) {
    const int K = static_cast<int>(active.size());
    if (K == 0) {
        if (order) order->clear();
        return true;
    }
    std::vector<std::vector<int>> per_body(num_bodies);
    for (int idx = 0; idx < K; ++idx) {
        const auto& jb = joints[active[idx]];
        per_body[jb.first].push_back(idx);
        if (jb.second >= 0) per_body[jb.second].push_back(idx);
    }
    std::set<std::pair<int, int>> edges;
    for (const auto& list : per_body) {
        if (list.size() > 2) return false;
        if (list.size() == 2) edges.insert({std::min(list[0], list[1]), std::max(list[0], list[1])});
    }
    if (static_cast<int>(edges.size()) != K - 1) return false;
    std::vector<std::vector<int>> adj(K);
    for (const auto& e : edges) {
        adj[e.first].push_back(e.second);
        adj[e.second].push_back(e.first);
    }
    int start = -1;
    for (int i = 0; i < K; ++i) {
        if (adj[i].size() > 2) return false;
        if (adj[i].size() <= 1 && start < 0) start = i;
    }
    if (start < 0) return false;
    std::vector<int> path;
    std::vector<char> seen(K, 0);
    int prev = -1;
    int cur = start;
    while (cur >= 0) {
        path.push_back(cur);
        seen[cur] = 1;
        int next = -1;
        for (int n : adj[cur]) {
            if (n != prev && !seen[n]) next = n;
        }
        prev = cur;
        cur = next;
    }
    if (static_cast<int>(path.size()) != K) return false;
    if (order) {
        order->clear();
        for (int idx : path) order->push_back(active[idx]);
    }
    return true;
}

// Tree: body graph acyclic and all world joints on one body.
bool is_tree(int num_bodies, const JointList& joints, const std::vector<int>& active_bodies,
             const std::vector<int>& active_joints, int* root) {
    UnionFind uf(num_bodies);
    std::set<int> world_bodies;
    std::vector<int> degree(num_bodies, 0);
    for (int k : active_joints) {
        const auto& jb = joints[k];
        if (jb.second < 0) {
            world_bodies.insert(jb.first);
            continue;
        }
        if (uf.find(jb.first) == uf.find(jb.second)) return false;
        uf.unite(jb.first, jb.second);
        ++degree[jb.first];
        ++degree[jb.second];
    }
    if (world_bodies.size() > 1) return false;
    if (root) {
        if (!world_bodies.empty()) {
            *root = *world_bodies.begin();
        } else {
            int best = active_bodies.front();
            for (int b : active_bodies) {
                if (degree[b] > degree[best]) best = b;
            }
            *root = best;
        }
    }
    return true;
}

// Splits the remaining bodies into components and checks each is a chain or a tree.
int count_bad_components(int num_bodies, const JointList& joints, const std::vector<char>& removed) {
    UnionFind uf(num_bodies);
    std::vector<int> alive_joints;
    for (int k = 0; k < static_cast<int>(joints.size()); ++k) {
        const auto& jb = joints[k];
        if (removed[jb.first] || (jb.second >= 0 && removed[jb.second])) continue;
        alive_joints.push_back(k);
        if (jb.second >= 0) uf.unite(jb.first, jb.second);
    }
    std::vector<std::vector<int>> comp_bodies(num_bodies), comp_joints(num_bodies);
    for (int b = 0; b < num_bodies; ++b) {
        if (!removed[b]) comp_bodies[uf.find(b)].push_back(b);
    }
    for (int k : alive_joints) comp_joints[uf.find(joints[k].first)].push_back(k);
    int bad = 0;
    for (int c = 0; c < num_bodies; ++c) {
        if (comp_bodies[c].empty()) continue;
        if (joint_path(num_bodies, joints, comp_joints[c], nullptr)) continue;
        if (is_tree(num_bodies, joints, comp_bodies[c], comp_joints[c], nullptr)) continue;
        ++bad;
    }
    return bad;
}

// Cycle rank of the body graph (world joints ignored) restricted to live bodies.
int body_cycle_rank(int num_bodies, const JointList& joints, const std::vector<char>& removed) {
    UnionFind uf(num_bodies);
    int edges = 0;
    int vertices = 0;
    for (int b = 0; b < num_bodies; ++b) vertices += removed[b] ? 0 : 1;
    for (const auto& jb : joints) {
        if (jb.second < 0 || removed[jb.first] || removed[jb.second]) continue;
        ++edges;
        uf.unite(jb.first, jb.second);
    }
    int components = 0;
    for (int b = 0; b < num_bodies; ++b) {
        if (!removed[b] && uf.find(b) == b) ++components;
    }
    return edges - vertices + components;
}

}  // namespace

const char* topology_name(TopologyKind kind) {
    switch (kind) {
        case TopologyKind::Chain: return "Chain";
        case TopologyKind::Tree: return "Tree";
        case TopologyKind::Loop: return "Loop";
        case TopologyKind::Graph: return "Graph";
    }
    return "Unknown";
}

TopologyInfo classify_connected(int num_bodies, const JointList& joints, int max_breakers) {
    if (num_bodies <= 0) throw Error(ErrorCode::EmptyScene, "island has no bodies");
    for (const auto& jb : joints) {
        if (jb.first < 0 || jb.first >= num_bodies || jb.second >= num_bodies || jb.first == jb.second) {
            throw Error(ErrorCode::WrongBodies, "joint endpoint out of range");
        }
    }
    TopologyInfo info;
    std::vector<int> all_joints(joints.size());
    std::iota(all_joints.begin(), all_joints.end(), 0);
    std::vector<int> all_bodies(num_bodies);
    std::iota(all_bodies.begin(), all_bodies.end(), 0);

    if (joint_path(num_bodies, joints, all_joints, &info.chain_order)) {
        info.kind = TopologyKind::Chain;
        int root = 0;
        if (is_tree(num_bodies, joints, all_bodies, all_joints, &root)) info.root = root;
        return info;
    }
    info.chain_order.clear();
    int root = -1;
    if (is_tree(num_bodies, joints, all_bodies, all_joints, &root)) {
        info.kind = TopologyKind::Tree;
        info.root = root;
        return info;
    }

    std::vector<char> removed(num_bodies, 0);
    std::vector<int> degree(num_bodies, 0);
    for (const auto& jb : joints) {
        if (jb.second < 0) continue;
        ++degree[jb.first];
        ++degree[jb.second];
    }
    // Each removal lowers the cycle rank by at most degree - 1.
    std::vector<int> sorted_deg = degree;
    std::sort(sorted_deg.rbegin(), sorted_deg.rend());
    int reducible = 0;
    for (int i = 0; i < std::min<int>(max_breakers, num_bodies); ++i) reducible += std::max(0, sorted_deg[i] - 1);
    if (body_cycle_rank(num_bodies, joints, removed) > reducible) {
        info.kind = TopologyKind::Graph;
        return info;
    }

    std::vector<int> breakers;
    while (static_cast<int>(breakers.size()) < max_breakers) {
        int best = -1;
        std::pair<int, int> best_score{0, 0};
        for (int b = 0; b < num_bodies; ++b) {
            if (removed[b] || degree[b] < 2) continue;
            removed[b] = 1;
            const std::pair<int, int> score{body_cycle_rank(num_bodies, joints, removed),
                                            count_bad_components(num_bodies, joints, removed)};
            removed[b] = 0;
            if (best < 0 || score < best_score) {
                best = b;
                best_score = score;
            }
        }
        if (best < 0) break;
        removed[best] = 1;
        breakers.push_back(best);
        if (best_score.first == 0 && best_score.second == 0) {
            info.kind = TopologyKind::Loop;
            info.breakers = breakers;
            return info;
        }
    }
    info.kind = TopologyKind::Graph;
    return info;
}

std::vector<Island> classify_topology(int num_bodies, const JointList& joints, int max_breakers) {
    if (num_bodies <= 0) throw Error(ErrorCode::EmptyScene, "scene has no bodies");
    UnionFind uf(num_bodies);
    for (const auto& jb : joints) {
        if (jb.first < 0 || jb.first >= num_bodies || jb.second >= num_bodies) {
            throw Error(ErrorCode::WrongBodies, "joint endpoint out of range");
        }
        if (jb.second >= 0) uf.unite(jb.first, jb.second);
    }
    std::vector<int> island_of(num_bodies, -1);
    std::vector<Island> islands;
    for (int b = 0; b < num_bodies; ++b) {
        const int r = uf.find(b);
        if (island_of[r] < 0) {
            island_of[r] = static_cast<int>(islands.size());
            islands.emplace_back();
        }
        island_of[b] = island_of[r];
        islands[island_of[b]].bodies.push_back(b);
    }
    for (int k = 0; k < static_cast<int>(joints.size()); ++k) islands[island_of[joints[k].first]].joints.push_back(k);

    for (auto& island : islands) {
        std::vector<int> local(num_bodies, -1);
        for (int i = 0; i < static_cast<int>(island.bodies.size()); ++i) local[island.bodies[i]] = i;
        JointList local_joints;
        for (int k : island.joints) {
            const auto& jb = joints[k];
            local_joints.emplace_back(local[jb.first], jb.second < 0 ? -1 : local[jb.second]);
        }
        island.topology = classify_connected(static_cast<int>(island.bodies.size()), local_joints, max_breakers);
    }
    return islands;
}

}  // namespace mabd
