import pytest

from lqrec.kg import graph_from_names, split_edges
from lqrec.synth import clustered_world


TINY_ROWS = [
    ("a", "r1", "x"),
    ("a", "r1", "y"),
    ("b", "r2", "x"),
    ("b", "r2", "z"),
    ("c", "r1", "b"),
    ("c", "r2", "a"),
    ("u1", "likes", "x"),
    ("u1", "likes", "z"),
    ("u2", "likes", "y"),
]


@pytest.fixture
def tiny_kg():
    return graph_from_names(
        TINY_ROWS, ["x", "y", "z"], ["u1", "u2"], "likes"
    )


@pytest.fixture(scope="session")
def world():
    return clustered_world(
        n_clusters=3,
        attrs_per_cluster=5,
        items_per_cluster=15,
        n_users=24,
        tags_per_item=3,
        likes_per_user=6,
        seed=101,
    )


@pytest.fixture(scope="session")
def world_split(world):
    return split_edges(world, 0.05, seed=202)
