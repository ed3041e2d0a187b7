#!/usr/bin/env python3
# Carve technique subgraphs around correlated flagged nodes with a
# hop-limited search, then score them against ground truth.

from provrec import EntityType, Event, build_graph
from provrec.sampling import lambda_dfs, sample_subgraphs, sampling_metrics, select_seed
from provrec.sampling import TechniqueSubgraph

# Hand-built topology: flagged nodes v0..v3 connected through benign
# intermediates, plus a distant flagged node v9 four benign hops away.
edges = [
    ("v0", "i1"), ("i1", "v1"),                    # v1 two hops from v0
    ("v1", "i2"), ("i2", "i3"), ("i3", "v2"),      # v2 three hops from v1
    ("v2", "v3"),                                   # v3 adjacent
    ("v3", "f1"), ("f1", "f2"), ("f2", "f3"), ("f3", "v9"),  # v9 too far
    ("v0", "stub"),                                 # dead end, never kept
]
events = [
    Event(a, EntityType.PROCESS, "launch", b, EntityType.PROCESS, t)
    for t, (a, b) in enumerate(edges)
]
graph = build_graph(events)
flagged = ["v0", "v1", "v2", "v3", "v9"]

# The search runs undirected, keeps only paths that reach another flagged
# node within the hop budget, and restarts from every flagged node it finds.
seed = select_seed(flagged, graph)
print("seed (best connected flagged node):", seed)
for lam in (1, 2, 3, 4):
    visited = lambda_dfs(graph, seed, flagged, lam)
    print(f"  lambda={lam}: visited {sorted(visited)}")

# At lambda=3 the cluster v0..v3 plus its intermediates forms one subgraph;
# v9 stays out (no flagged node within three hops of it after the cluster
# is consumed), and the dead-end stub is never retained.
subgraphs = sample_subgraphs(graph, flagged, lam=3, min_nois=3)
for s in subgraphs:
    print(f"subgraph: seed={s.seed} nodes={sorted(s.node_ids)} flagged={sorted(s.nois)}")

# Overlap metrics against a ground-truth subgraph.
truth = TechniqueSubgraph(
    graph.induced(["v0", "i1", "v1", "i2", "i3", "v2", "v3"]),
    ["v0", "v1", "v2", "v3"],
    "v0",
)
m = sampling_metrics(subgraphs, [truth])
print(f"precision={m.precision:.2f} coverage={m.coverage:.2f} "
      f"tpr={m.tpr:.2f} far={m.far:.2f}")
