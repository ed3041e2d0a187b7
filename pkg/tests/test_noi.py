"""Isolation forest scoring and anomalous-node reporting."""

import math

import numpy as np
import pytest

from provrec import features as ft
from provrec.graph import EntityType
from provrec.noi import (
    IsolationForest,
    IsoNode,
    NoiReport,
    anomaly_score,
    anomaly_scores,
    average_path_length,
    detect_nois,
    fit_forest,
)
from provrec.numerics import Rng

from conftest import make_graph


def test_two_identical_points_score_equal():
    pts = np.array([[1.0, 2.0], [1.0, 2.0]])
    forest = fit_forest(pts, num_trees=10, subsample_size=2, seed=0)
    s = anomaly_scores(forest, pts)
    assert s[0] == s[1]
    assert 0 < s[0] < 1


def test_same_seed_identical_forest():
    gen = Rng(12)
    pts = gen.normal(0, 1, size=(40, 3))
    f1 = fit_forest(pts, num_trees=20, subsample_size=16, seed=9)
    f2 = fit_forest(pts, num_trees=20, subsample_size=16, seed=9)
    assert f1.to_dict() == f2.to_dict()
    f3 = fit_forest(pts, num_trees=20, subsample_size=16, seed=10)
    assert f3.to_dict() != f1.to_dict()


def test_planted_outliers_top_the_ranking():
    hits = 0
    for seed in range(5):
        gen = Rng(100 + seed)
        inliers = gen.normal(0, 1, size=(500, 4))
        outliers = gen.normal(10, 1, size=(5, 4))  # 10 sigma away
        pts = np.vstack([inliers, outliers])
        forest = fit_forest(pts, num_trees=100, subsample_size=256, seed=seed)
        scores = anomaly_scores(forest, pts)
        top5 = set(np.argsort(-scores)[:5].tolist())
        if top5 == {500, 501, 502, 503, 504}:
            hits += 1
    assert hits >= 4


def test_score_half_at_normaliser_fixed_point():
    # a single leaf tree: every point's path length is exactly c(n)
    tree = IsoNode(size=4)
    forest = IsolationForest([tree], 1, 4, dim=1, seed=0)
    assert anomaly_score(forest, [0.0]) == 0.5


def test_hand_built_tree_matches_manual_path_lengths():
    #      (dim 0 < 5)
    #      /        \
    #   leaf(1)   (dim 0 < 8)
    #             /        \
    #          leaf(2)    leaf(1)
    tree = IsoNode(
        size=4, dim=0, threshold=5.0,
        left=IsoNode(size=1),
        right=IsoNode(
            size=2, dim=0, threshold=8.0,
            left=IsoNode(size=2),
            right=IsoNode(size=1),
        ),
    )
    forest = IsolationForest([tree], 1, 4, dim=1, seed=0)
    c4 = average_path_length(4)
    # point 2.0 -> left leaf at depth 1, size 1: h = 1
    assert anomaly_score(forest, [2.0]) == 2.0 ** (-1.0 / c4)
    # point 6.0 -> depth 2 leaf of size 2: h = 2 + c(2)
    h = 2 + average_path_length(2)
    assert anomaly_score(forest, [6.0]) == 2.0 ** (-h / c4)
    # shallower isolation scores strictly higher
    assert anomaly_score(forest, [2.0]) > anomaly_score(forest, [6.0])


def test_average_path_length_values():
    assert average_path_length(1) == 0.0
    assert average_path_length(0) == 0.0
    # c(2) = 2*(ln(1) + gamma) - 2*1/2
    assert abs(average_path_length(2) - (2 * 0.5772156649015329 - 1.0)) < 1e-12


def test_scores_strictly_inside_unit_interval():
    gen = Rng(3)
    pts = gen.normal(0, 1, size=(64, 2))
    forest = fit_forest(pts, num_trees=50, subsample_size=32, seed=1)
    s = anomaly_scores(forest, pts)
    assert (s > 0).all() and (s < 1).all()


def test_subsample_capped_at_population():
    pts = Rng(4).normal(0, 1, size=(10, 2))
    forest = fit_forest(pts, num_trees=5, subsample_size=256, seed=0)
    assert forest.subsample_size == 10


def test_tree_depth_bounded_by_log2_subsample():
    pts = Rng(5).normal(0, 1, size=(300, 3))
    forest = fit_forest(pts, num_trees=30, subsample_size=64, seed=2)
    limit = math.ceil(math.log2(64))

    def depth(node):
        if node.is_leaf:
            return 0
        return 1 + max(depth(node.left), depth(node.right))

    assert max(depth(t) for t in forest.trees) <= limit


def test_input_validation():
    with pytest.raises(ValueError):
        fit_forest(np.ones((1, 2)))
    with pytest.raises(ValueError):
        fit_forest(np.ones((5, 2)), subsample_size=1)
    forest = fit_forest(np.eye(3), num_trees=3, subsample_size=3, seed=0)
    with pytest.raises(ValueError, match="width"):
        anomaly_score(forest, [1.0, 2.0])


# -- detect_nois --------------------------------------------------------------


def _graph_with_processes(n_benign, extra_triples=()):
    triples = [(f"w{i}", "read", f"f{i % 3}", EntityType.FILE) for i in range(n_benign)]
    triples += list(extra_triples)
    return make_graph(triples)


def test_identical_processes_yield_no_flags():
    g = _graph_with_processes(20)
    emb = ft.scale_features(ft.init_features(g))
    report = detect_nois(g, emb, seed=3)
    assert report.flagged == []


def test_threshold_one_flags_nothing():
    g = _graph_with_processes(
        10, [("loud", "connect", f"s{i}", EntityType.SOCKET) for i in range(9)]
    )
    emb = ft.scale_features(ft.init_features(g))
    report = detect_nois(g, emb, score_threshold=1.0, seed=3)
    assert report.flagged == []


def test_planted_behavior_is_flagged_with_precision():
    loud = [(f"mal{j}", "connect", f"s{i}", EntityType.SOCKET)
            for j in range(3) for i in range(10)]
    loud += [(f"mal{j}", "read", f"cred{i}", EntityType.FILE)
             for j in range(3) for i in range(5)]
    g = _graph_with_processes(60, loud)
    emb = ft.scale_features(ft.init_features(g))
    report = detect_nois(g, emb, seed=3)
    flagged = set(report.flagged)
    assert flagged
    precision = len(flagged & {"mal0", "mal1", "mal2"}) / len(flagged)
    assert precision >= 0.8


def test_only_process_nodes_reported():
    g = _graph_with_processes(10)
    emb = ft.scale_features(ft.init_features(g))
    report = detect_nois(g, emb, seed=0)
    proc_ids = {
        nid for nid, n in g.nodes.items() if n.entity_type == EntityType.PROCESS
    }
    assert set(report.scores) == proc_ids


def test_no_process_nodes_errors():
    g = make_graph([("p", "read", "f", EntityType.FILE)]).induced(["f"])
    with pytest.raises(ValueError, match="process"):
        detect_nois(g, np.zeros((1, 4)), seed=0)


def test_contamination_mode_flags_top_fraction():
    g = _graph_with_processes(
        18, [("loud", "connect", f"s{i}", EntityType.SOCKET) for i in range(12)]
    )
    emb = ft.scale_features(ft.init_features(g))
    report = detect_nois(g, emb, contamination=0.1, seed=3)
    assert len(report.flagged) == math.ceil(0.1 * 19)
    assert report.flagged[0] == "loud"


def test_report_round_trip_sorted_descending():
    g = _graph_with_processes(
        8, [("loud", "connect", f"s{i}", EntityType.SOCKET) for i in range(9)]
    )
    emb = ft.scale_features(ft.init_features(g))
    report = detect_nois(g, emb, seed=1)
    payload = report.to_dict()
    scores = [row["score"] for row in payload["nois"]]
    assert scores == sorted(scores, reverse=True)
    back = NoiReport.from_dict(payload)
    assert back.scores == report.scores
    assert back.flagged == sorted(report.flagged, key=lambda n: -report.scores[n])
