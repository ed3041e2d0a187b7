#!/usr/bin/env python3
# Build a typed provenance graph from audit-event triads and look around it.

import numpy as np

from provrec import EntityType, Event, build_graph, edge_type_of, init_features

# Every audited system call is (subject process, operation, object entity).
# Four entity types and 21 operations define the edge vocabulary:
print("launch is edge type", edge_type_of("process", "launch", "process"))
print("file read is edge type", edge_type_of("process", "read", "file"))
print("socket reconnect is edge type", edge_type_of("process", "reconnect", "socket"))

# A tiny intrusion-flavored scene: a browser fetches a document, a viewer
# opens it and spawns a shell that drops a script and phones home.
events = [
    Event("chrome", EntityType.PROCESS, "connect", "203.0.113.9:443", EntityType.SOCKET, 1),
    Event("chrome", EntityType.PROCESS, "write", "x.pdf", EntityType.FILE, 2),
    Event("acrobat", EntityType.PROCESS, "read", "x.pdf", EntityType.FILE, 3),
    Event("acrobat", EntityType.PROCESS, "launch", "powershell", EntityType.PROCESS, 4),
    Event("powershell", EntityType.PROCESS, "launch", "unknown", EntityType.PROCESS, 5),
    Event("powershell", EntityType.PROCESS, "write", "payload.ps1", EntityType.FILE, 6),
    Event("powershell", EntityType.PROCESS, "connect", "198.51.100.7:80", EntityType.SOCKET, 7),
]

graph = build_graph(events)
print(f"\n{graph.n_nodes} entities, {graph.n_edges} events")
for nid in graph.node_ids():
    din, dout = graph.degree(nid)
    print(f"  {nid:<18} {graph.entity_type(nid).value:<9} in={din} out={dout}")

# Each node gets a 42-dim behavior vector: incoming counts per edge type
# (columns 0..20) then outgoing counts (21..41).
features = init_features(graph)
row = features[graph.node_index()["powershell"]]
print("\npowershell count vector (nonzero positions):")
print({int(j): int(v) for j, v in enumerate(row) if v})
assert row.sum() == sum(graph.degree("powershell"))

# Graphs persist as versioned JSON and round-trip exactly.
import tempfile, pathlib

with tempfile.TemporaryDirectory() as tmp:
    path = pathlib.Path(tmp) / "graph.json"
    graph.save(path)
    from provrec import ProvenanceGraph

    again = ProvenanceGraph.load(path)
    assert again.to_dict() == graph.to_dict()
print("\nround trip: identical")
