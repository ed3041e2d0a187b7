"""Shared builders for small provenance graphs used across the suite."""

import pytest

from provrec.graph import EntityType, Event, build_graph
from provrec.numerics import Rng


def ev(subject, operation, obj, obj_type, ts=0):
    return Event(subject, EntityType.PROCESS, operation, obj, obj_type, ts)


def make_graph(triples):
    """Build a graph from (subject, operation, object, object_type) tuples."""
    events = [
        ev(s, op, o, t, ts=i) for i, (s, op, o, t) in enumerate(triples)
    ]
    return build_graph(events)


def launch_chain(ids):
    """p0 -> p1 -> ... as launch edges."""
    return make_graph(
        [
            (ids[i], "launch", ids[i + 1], EntityType.PROCESS)
            for i in range(len(ids) - 1)
        ]
    )


def random_process_graph(rng, n_nodes, n_edges):
    """Random launch-only graph (self loops avoided); returns the graph."""
    events = []
    for t in range(n_edges):
        a = int(rng.integers(n_nodes))
        b = int(rng.integers(n_nodes))
        if a == b:
            b = (a + 1) % n_nodes
        events.append(ev(f"p{a}", "launch", f"p{b}", EntityType.PROCESS, ts=t))
    return build_graph(events)


@pytest.fixture
def rng():
    return Rng(1234)


@pytest.fixture
def figure_snippet():
    """Small campaign snapshot: browser downloads a document whose reader
    spawns a shell that writes a script and phones home."""
    return make_graph(
        [
            ("chrome", "connect", "203.0.113.9:443", EntityType.SOCKET),
            ("chrome", "write", "x.pdf", EntityType.FILE),
            ("acrobat", "read", "x.pdf", EntityType.FILE),
            ("acrobat", "launch", "powershell", EntityType.PROCESS),
            ("powershell", "launch", "unknown", EntityType.PROCESS),
            ("powershell", "write", "payload.ps1", EntityType.FILE),
            ("powershell", "connect", "198.51.100.7:80", EntityType.SOCKET),
        ]
    )
