# Construct a benchmark: hold out edges, sample grounded (user, requirement)
# instances per query shape, and write train/valid/test JSON-lines files.
#
# Train files use only the five basic shapes; the four zero-shot shapes
# (ip, pi, 2u, up) appear in the test file only. Every valid/test record is
# guaranteed at least one joint answer that train-graph traversal cannot
# reach, then the whole emitted set is re-verified against the oracle.

import os
import tempfile

from lqrec import DatasetConfig, build_dataset, serialize_query, split_edges
from lqrec.dataset import verify_dataset, write_dataset
from lqrec.query import ALL_SHAPES, BASIC_SHAPES
from lqrec.synth import clustered_world

kg = clustered_world(seed=3)
split = split_edges(kg, 0.05, seed=3)
print(f"{len(split.train.triples)} train edges, {len(split.held_out)} held out")

cfg = DatasetConfig(
    counts={
        "train": {s: 30 for s in BASIC_SHAPES},
        "valid": {s: 5 for s in BASIC_SHAPES},
        "test": {s: 10 for s in ALL_SHAPES},
    },
    seed=11,
    answer_cap=100,
)
datasets, report = build_dataset(split, cfg)
print(report.to_text())

out_dir = os.path.join(tempfile.gettempdir(), "lqrec_demo_benchmark")
write_dataset(datasets, report, split.full, out_dir)
violations = verify_dataset(split, out_dir)
print(f"wrote {out_dir}; verification violations: {len(violations)}")

example = datasets["test"][0]
names = kg.entity_vocab.name_of
print("\nan emitted test instance:")
print(f"  user:  {names(example.user)}")
print(f"  shape: {example.shape.value}")
print(f"  query: {serialize_query(example.requirement, kg)}")
print(f"  easy joint answers: {sorted(names(i) for i in example.answers['joint'])}")
print(f"  hard joint answers: {sorted(names(i) for i in example.hard['joint'])}")
