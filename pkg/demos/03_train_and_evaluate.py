# Train the multi-task query-embedding model on a synthetic benchmark and
# report per-shape ranking quality on hard (held-out-edge) answers.
#
# This is a scaled-down run: a few minutes on one core. The per-shape table
# mirrors the usual layout: basic shapes, then zero-shot shapes, then the
# unweighted average.

from lqrec import DatasetConfig, ModelParams, TrainConfig, build_dataset, split_edges
from lqrec.evaluation import evaluate
from lqrec.query import ALL_SHAPES, BASIC_SHAPES
from lqrec.synth import clustered_world
from lqrec.training import train

kg = clustered_world(n_clusters=4, attrs_per_cluster=6, items_per_cluster=30,
                     n_users=48, tags_per_item=4, likes_per_user=10, seed=19)
split = split_edges(kg, 0.05, seed=19)
datasets, _ = build_dataset(
    split,
    DatasetConfig(
        counts={
            "train": {s: 40 for s in BASIC_SHAPES},
            "valid": {s: 6 for s in BASIC_SHAPES},
            "test": {s: 10 for s in ALL_SHAPES},
        },
        seed=4,
    ),
)
print({name: len(insts) for name, insts in datasets.items()})

config = TrainConfig(d=32, k=3, gamma=5.0, lr=1e-2, epochs=150, batch_size=64,
                     n_neg=16, seed=1, eval_every=25, eval_k=20, patience=None)
params = ModelParams.init(split.train, d=config.d, k=config.k,
                          gamma=config.gamma, seed=config.seed, variant="mtl")

untrained = evaluate(datasets["test"], params, split.train, ks=(10, 20))
print("\nuntrained baseline:")
print(untrained.to_text())

result = train(datasets["train"], params, split.train, config,
               valid_instances=datasets["valid"])
print(f"trained {result.epochs_run} epochs; "
      f"best val hit@20 {result.best_metric:.3f} at epoch {result.best_epoch}")

trained = evaluate(datasets["test"], params, split.train, ks=(10, 20))
print("\ntrained model:")
print(trained.to_text())
