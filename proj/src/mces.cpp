// SPDX-License-Identifier: Apache-2.0
//
// Branch-and-bound maximum common edge subgraph. Nodes of the smaller
// graph are assigned one by one to element-compatible nodes of the other
// graph (or to nothing); the optimistic completion bound is the smaller
// of the undecided edge weights on either side.

#include "specnovo/mces.hpp"

#include <algorithm>

#include "specnovo/errors.hpp"

namespace specnovo {

namespace {

struct Search {
  const MolGraph* g1;
  const MolGraph* g2;
  std::vector<std::vector<std::pair<int, BondOrder>>> adj1, adj2;
  std::vector<int> order;              // g1 nodes, connected-first
  std::vector<int> map12;              // g1 node -> g2 node or -1
  std::vector<bool> used2;
  double best = 0.0;
  double need = -1.0;  // bound-mode cutoff on the common weight
  double total1 = 0.0;

  double matched_weight = 0.0;

  void run() { expand(0, 0.0); }

  // remaining1 = total weight of g1 edges with at least one endpoint not
  // yet decided; used as the optimistic completion bound.
  void expand(std::size_t depth, double decided1) {
    if (depth == order.size()) {
      best = std::max(best, matched_weight);
      return;
    }
    const double optimistic = matched_weight + (total1 - decided1);
    if (optimistic <= std::max(best, need)) return;

    const int u = order[depth];
    // Edges from u to already-decided nodes become decided now.
    double newly_decided = 0.0;
    for (const auto& [v, ord] : adj1[u]) {
      if (map12[v] != -2) newly_decided += bond_weight(ord);
    }

    for (int w = 0; w < g2->num_atoms(); ++w) {
      if (used2[w]) continue;
      if (g2->atoms[w].element != g1->atoms[u].element) continue;
      double gained = 0.0;
      for (const auto& [v, ord] : adj1[u]) {
        const int mapped = map12[v];
        if (mapped < 0) continue;
        for (const auto& [w2, ord2] : adj2[w]) {
          if (w2 == mapped && ord2 == ord) {
            gained += bond_weight(ord);
            break;
          }
        }
      }
      map12[u] = w;
      used2[w] = true;
      matched_weight += gained;
      expand(depth + 1, decided1 + newly_decided);
      matched_weight -= gained;
      used2[w] = false;
      map12[u] = -2;
    }

    // u left unmapped.
    map12[u] = -1;
    expand(depth + 1, decided1 + newly_decided);
    map12[u] = -2;
  }
};

double total_weight(const MolGraph& g) {
  double w = 0.0;
  for (const Bond& b : g.bonds) w += bond_weight(b.order);
  return w;
}

// Order nodes so each one (after the first of a component) touches an
// earlier node; descending incident weight breaks ties. Tight maps early
// make the pruning bound bite.
std::vector<int> connected_order(
    const MolGraph& g,
    const std::vector<std::vector<std::pair<int, BondOrder>>>& adj) {
  const int n = g.num_atoms();
  std::vector<double> incident(n, 0.0);
  for (const Bond& b : g.bonds) {
    incident[b.a] += bond_weight(b.order);
    incident[b.b] += bond_weight(b.order);
  }
  std::vector<int> order;
  std::vector<bool> placed(n, false);
  while (static_cast<int>(order.size()) < n) {
    int pick = -1;
    bool pick_connected = false;
    for (int i = 0; i < n; ++i) {
      if (placed[i]) continue;
      bool connected = false;
      for (const auto& [j, ord] : adj[i]) {
        if (placed[j]) {
          connected = true;
          break;
        }
      }
      if (pick < 0 || (connected && !pick_connected) ||
          (connected == pick_connected && incident[i] > incident[pick])) {
        pick = i;
        pick_connected = connected;
      }
    }
    placed[pick] = true;
    order.push_back(pick);
  }
  return order;
}

}  // namespace

double mces_distance(const MolGraph& g1, const MolGraph& g2,
                     std::optional<double> bound, int exact_atom_limit) {
  if (bound && *bound < 0.0) throw DomainError("mces bound must be >= 0");
  const int max_atoms = std::max(g1.num_atoms(), g2.num_atoms());
  if (!bound && max_atoms > exact_atom_limit) {
    throw SizeError("graph with " + std::to_string(max_atoms) +
                    " heavy atoms exceeds the exact MCES limit of " +
                    std::to_string(exact_atom_limit) + "; pass a bound");
  }

  const double w1 = total_weight(g1);
  const double w2 = total_weight(g2);

  // Map the graph with fewer atoms for a smaller search tree.
  const bool swap = g1.num_atoms() > g2.num_atoms();
  const MolGraph& a = swap ? g2 : g1;
  const MolGraph& b = swap ? g1 : g2;

  Search search;
  search.g1 = &a;
  search.g2 = &b;
  search.adj1.resize(a.num_atoms());
  for (const Bond& e : a.bonds) {
    search.adj1[e.a].push_back({e.b, e.order});
    search.adj1[e.b].push_back({e.a, e.order});
  }
  search.adj2.resize(b.num_atoms());
  for (const Bond& e : b.bonds) {
    search.adj2[e.a].push_back({e.b, e.order});
    search.adj2[e.b].push_back({e.a, e.order});
  }
  search.order = connected_order(a, search.adj1);
  search.map12.assign(a.num_atoms(), -2);  // -2 = undecided, -1 = unmapped
  search.used2.assign(b.num_atoms(), false);
  search.total1 = total_weight(a);

  if (bound) {
    // d < bound requires common weight strictly above (w1+w2-bound)/2.
    search.need = (w1 + w2 - *bound) / 2.0;
  }

  search.run();

  const double d = w1 + w2 - 2.0 * search.best;
  if (bound && search.best <= search.need) return *bound;
  return d;
}

}  // namespace specnovo
