#!/usr/bin/env python3
# Learn node behavior embeddings self-supervised, then flag outlier processes.

import numpy as np

from provrec import ScenarioSpec, detect_nois, generate_scenario
from provrec.features import EncoderConfig, extract_embeddings, init_features, train_encoder, type_accuracy

# One synthetic graph: a credential-theft motif buried in benign background.
spec = ScenarioSpec(samples_per_class=1, background=100, seed=7)
dataset = generate_scenario(spec)
sample = dataset.samples[0]
print(f"{sample.technique} ({sample.tactic}):",
      f"{sample.graph.n_nodes} nodes, truth has {len(sample.truth.nois)} marked processes")

# The encoder trains on node-TYPE classification: no attack labels anywhere.
# What it learns along the way is a behavior embedding per node.
e0 = init_features(sample.graph)
encoder = train_encoder(sample.graph, e0, EncoderConfig(epochs=250, hidden=32, seed=1))
print(f"type accuracy after training: {type_accuracy(encoder, sample.graph, e0):.3f}")
print(f"loss: {encoder.loss_curve[0]:.4f} -> {encoder.loss_curve[-1]:.4f}")

embeddings = extract_embeddings(encoder, sample.graph, e0)

# An isolation forest over the process rows turns embeddings into anomaly
# scores in (0, 1); scores above 0.6 become nodes of interest.
report = detect_nois(sample.graph, embeddings, seed=1)
truth = sample.truth.noi_set()
print(f"\nflagged {len(report.flagged)} processes at threshold {report.threshold}")
print("top of the ranking (* = ground-truth malicious):")
for node_id, score in report.ranked()[:10]:
    marker = "*" if node_id in truth else " "
    print(f"  {marker} {score:.3f}  {node_id}")

flagged = set(report.flagged)
if flagged:
    precision = len(flagged & truth) / len(flagged)
    recall = len(flagged & truth) / len(truth)
    print(f"\nprecision={precision:.2f} recall={recall:.2f}")
