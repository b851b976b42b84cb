"""Benchmark construction: sample grounded (user, requirement) instances per
query shape and emit train/valid/test JSON-lines files.

Requirements are instantiated backward from a seed item, walking in-edges so
the seed is guaranteed to satisfy the query. Train instances are grounded on
the train graph only. Valid/test instances are grounded on the full graph and
kept only when at least one joint answer is unreachable by train-graph
traversal, so test targets always require inferring a held-out edge.
"""

from __future__ import annotations

import json
import os
import random
from dataclasses import dataclass, field

from . import oracle
from .kg import KgSplit, KnowledgeGraph
from .query import (
    ALL_SHAPES,
    And,
    Anchor,
    BASIC_SHAPES,
    Or,
    Project,
    QueryNode,
    QueryShape,
    canonicalize,
    parse_query,
    serialize_query,
    shape_from_name,
)

TASK_JOINT = "joint"
TASK_REQ = "req"
TASK_PREF = "pref"
TASKS = (TASK_JOINT, TASK_REQ, TASK_PREF)

SPLIT_NAMES = ("train", "valid", "test")

DATASET_FILES = {name: f"{name}.jsonl" for name in SPLIT_NAMES}
STATS_FILE = "stats.txt"


class SamplingError(RuntimeError):
    """A sampling attempt dead-ended; callers retry within their budget."""


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    """Per-split, per-shape instance counts plus sampling knobs.

    ``answer_cap`` drops over-broad requirements (huge answer sets carry no
    ranking signal); ``max_retries`` bounds resampling per requested instance.
    """

    counts: dict[str, dict[QueryShape, int]]
    seed: int
    max_retries: int = 200
    answer_cap: int = 100

    def __post_init__(self):
        for split_name, by_shape in self.counts.items():
            if split_name not in SPLIT_NAMES:
                raise ConfigError(f"unknown split {split_name!r}")
            allowed = ALL_SHAPES if split_name == "test" else BASIC_SHAPES
            for shape, count in by_shape.items():
                if count < 0:
                    raise ConfigError(f"negative count for {split_name}/{shape.value}")
                if count > 0 and shape not in allowed:
                    raise ConfigError(
                        f"shape {shape.value} not allowed in split {split_name!r}; "
                        "the zero-shot shapes are reserved for testing"
                    )

    @classmethod
    def from_file(cls, path: str) -> "DatasetConfig":
        """Key=value file: `seed=7`, `max_retries=...`, `answer_cap=...`, and
        one `SPLIT.SHAPE=count` line per requested cell, e.g. `test.ip=50`."""
        counts: dict[str, dict[QueryShape, int]] = {}
        seed = None
        max_retries = 200
        answer_cap = 100
        with open(path, "r", encoding="utf-8") as f:
            for lineno, raw in enumerate(f, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value")
                key, value = (s.strip() for s in line.split("=", 1))
                if key == "seed":
                    seed = int(value)
                elif key == "max_retries":
                    max_retries = int(value)
                elif key == "answer_cap":
                    answer_cap = int(value)
                elif "." in key:
                    split_name, shape_name = key.split(".", 1)
                    counts.setdefault(split_name, {})[
                        shape_from_name(shape_name)
                    ] = int(value)
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if seed is None:
            raise ConfigError(f"{path}: missing required key 'seed'")
        return cls(counts=counts, seed=seed, max_retries=max_retries,
                   answer_cap=answer_cap)


@dataclass(frozen=True)
class RecInstance:
    """A grounded (user, requirement) pair with its three answer sets.

    ``answers`` maps task name to the set reachable on the instance's defining
    graph (the train graph for train instances, otherwise the train-reachable
    "easy" subset). ``hard`` holds the answers that additionally need held-out
    edges; it is absent on train instances.
    """

    user: int
    requirement: QueryNode
    shape: QueryShape
    answers: dict[str, frozenset[int]]
    hard: dict[str, frozenset[int]] | None = None


def _pick_in_edge(kg: KnowledgeGraph, node: int, rng: random.Random):
    pairs = kg.in_edges(node)
    if not pairs:
        raise SamplingError(f"entity {node} has no in-edges")
    return pairs[rng.randrange(len(pairs))]


def _pick_distinct_in_edges(kg: KnowledgeGraph, node: int, n: int, rng: random.Random):
    pairs = kg.in_edges(node)
    if len(pairs) < n:
        raise SamplingError(f"entity {node} has fewer than {n} in-edges")
    return rng.sample(pairs, n)


def _items_with_in_edges(kg: KnowledgeGraph) -> list[int]:
    return [i for i in kg.sorted_items() if kg.in_edges(i)]


def sample_requirement(
    kg: KnowledgeGraph, shape: QueryShape, rng: random.Random
) -> QueryNode:
    """Instantiate the shape template backward from a random seed item.

    The returned query is canonical and its answer set provably contains the
    seed item. Dead ends (nodes without the needed in-edges) raise
    :class:`SamplingError`; callers resample.
    """
    seeds = _items_with_in_edges(kg)
    if not seeds:
        raise SamplingError("no item has in-edges")
    seed_item = seeds[rng.randrange(len(seeds))]

    def chain(target: int, hops: int) -> QueryNode:
        rel, head = _pick_in_edge(kg, target, rng)
        if hops == 1:
            return Project(rel, Anchor(head))
        return Project(rel, chain(head, hops - 1))

    if shape == QueryShape.ONE_P:
        node: QueryNode = chain(seed_item, 1)
    elif shape == QueryShape.TWO_P:
        node = chain(seed_item, 2)
    elif shape == QueryShape.THREE_P:
        node = chain(seed_item, 3)
    elif shape in (QueryShape.TWO_I, QueryShape.THREE_I):
        n = 2 if shape == QueryShape.TWO_I else 3
        pairs = _pick_distinct_in_edges(kg, seed_item, n, rng)
        node = And(tuple(Project(r, Anchor(h)) for r, h in pairs))
    elif shape == QueryShape.IP:
        rel, mid = _pick_in_edge(kg, seed_item, rng)
        pairs = _pick_distinct_in_edges(kg, mid, 2, rng)
        node = Project(rel, And(tuple(Project(r, Anchor(h)) for r, h in pairs)))
    elif shape == QueryShape.PI:
        (rel_a, mid), (rel_c, anchor_c) = _pick_distinct_in_edges(
            kg, seed_item, 2, rng
        )
        rel_b, anchor_b = _pick_in_edge(kg, mid, rng)
        node = And(
            (
                Project(rel_a, Project(rel_b, Anchor(anchor_b))),
                Project(rel_c, Anchor(anchor_c)),
            )
        )
    elif shape == QueryShape.TWO_U:
        rel_a, head_a = _pick_in_edge(kg, seed_item, rng)
        other = seeds[rng.randrange(len(seeds))]
        rel_b, head_b = _pick_in_edge(kg, other, rng)
        node = Or((Project(rel_a, Anchor(head_a)), Project(rel_b, Anchor(head_b))))
    elif shape == QueryShape.UP:
        rel, mid = _pick_in_edge(kg, seed_item, rng)
        rel_a, head_a = _pick_in_edge(kg, mid, rng)
        candidates = [e for e in sorted(kg.in_adj) if e != mid]
        if not candidates:
            raise SamplingError("no second union branch available")
        other = candidates[rng.randrange(len(candidates))]
        rel_b, head_b = _pick_in_edge(kg, other, rng)
        node = Project(
            rel, Or((Project(rel_a, Anchor(head_a)), Project(rel_b, Anchor(head_b))))
        )
    else:
        raise ValueError(f"cannot sample shape {shape}")
    return canonicalize(node, kg)


def sample_instance(
    split: KgSplit,
    shape: QueryShape,
    split_name: str,
    rng: random.Random,
    cfg: DatasetConfig,
) -> RecInstance:
    """Sample one grounded instance for the given benchmark split.

    The paired user is uniform among users whose joint answer set is nonempty
    (first qualifying user in a shuffled scan). Valid/test instances must
    have at least one hard joint answer or they are resampled.
    """
    kg = split.train if split_name == "train" else split.full
    users = sorted(kg.users)
    for _ in range(cfg.max_retries):
        try:
            q = sample_requirement(kg, shape, rng)
        except SamplingError:
            continue
        a_req = oracle.answer_requirement(kg, q)
        if not a_req or len(a_req) > cfg.answer_cap:
            continue
        scan = rng.sample(users, len(users))
        chosen = None
        for u in scan:
            a_pref = oracle.answer_preference(kg, u)
            a_joint = a_req & a_pref
            if a_joint:
                chosen = (u, a_pref, a_joint)
                break
        if chosen is None:
            continue
        u, a_pref, a_joint = chosen
        if split_name == "train":
            return RecInstance(
                user=u,
                requirement=q,
                shape=shape,
                answers={TASK_JOINT: a_joint, TASK_REQ: a_req, TASK_PREF: a_pref},
            )
        req_easy = oracle.answer_requirement(split.train, q)
        pref_easy = oracle.answer_preference(split.train, u)
        joint_easy = req_easy & pref_easy
        hard = {
            TASK_JOINT: a_joint - joint_easy,
            TASK_REQ: a_req - req_easy,
            TASK_PREF: a_pref - pref_easy,
        }
        if not hard[TASK_JOINT]:
            continue
        return RecInstance(
            user=u,
            requirement=q,
            shape=shape,
            answers={TASK_JOINT: joint_easy, TASK_REQ: req_easy, TASK_PREF: pref_easy},
            hard=hard,
        )
    raise SamplingError(
        f"retry budget exhausted sampling a {shape.value} instance for {split_name}"
    )


@dataclass
class BuildReport:
    requested: dict[str, dict[QueryShape, int]]
    emitted: dict[str, dict[QueryShape, int]]
    mean_req_answers: dict[str, dict[QueryShape, float]]
    mean_hard: dict[str, dict[QueryShape, float]]
    shortfalls: list[tuple[str, QueryShape, int, int]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [
            f"{'split':<7}{'shape':<7}{'requested':>10}{'emitted':>9}"
            f"{'mean|req|':>11}{'mean hard':>11}"
        ]
        for split_name in SPLIT_NAMES:
            for shape in ALL_SHAPES:
                req = self.requested.get(split_name, {}).get(shape, 0)
                if req == 0:
                    continue
                emitted = self.emitted[split_name].get(shape, 0)
                mean_a = self.mean_req_answers[split_name].get(shape, 0.0)
                mean_h = self.mean_hard[split_name].get(shape)
                hard_txt = f"{mean_h:11.2f}" if mean_h is not None else f"{'-':>11}"
                lines.append(
                    f"{split_name:<7}{shape.value:<7}{req:>10}{emitted:>9}"
                    f"{mean_a:11.2f}{hard_txt}"
                )
        if self.shortfalls:
            lines.append("shortfalls:")
            for split_name, shape, req, emitted in self.shortfalls:
                lines.append(
                    f"  {split_name}/{shape.value}: requested {req}, emitted {emitted}"
                )
        return "\n".join(lines) + "\n"


def instance_to_record(inst: RecInstance, kg: KnowledgeGraph) -> dict:
    ev = kg.entity_vocab

    def names(ids: frozenset[int]) -> list[str]:
        return sorted(ev.name_of(i) for i in ids)

    record = {
        "user": ev.name_of(inst.user),
        "query": serialize_query(inst.requirement, kg),
        "shape": inst.shape.value,
        "answers": {task: names(inst.answers[task]) for task in TASKS},
    }
    if inst.hard is not None:
        record["hard"] = {task: names(inst.hard[task]) for task in TASKS}
    return record


def record_to_instance(record: dict, kg: KnowledgeGraph) -> RecInstance:
    ev = kg.entity_vocab

    def ids(names: list[str]) -> frozenset[int]:
        return frozenset(ev.id_of(n) for n in names)

    hard = record.get("hard")
    return RecInstance(
        user=ev.id_of(record["user"]),
        requirement=parse_query(record["query"], kg),
        shape=shape_from_name(record["shape"]),
        answers={task: ids(record["answers"][task]) for task in TASKS},
        hard={task: ids(hard[task]) for task in TASKS} if hard is not None else None,
    )


def build_dataset(
    split: KgSplit, cfg: DatasetConfig
) -> tuple[dict[str, list[RecInstance]], BuildReport]:
    """Sample all requested instances, deterministically under ``cfg.seed``.

    Each (split, shape) cell draws from its own derived RNG stream, so cells
    are independent of each other and of request order. Cells that exhaust
    their retry budget are reported as shortfalls rather than raising.
    """
    datasets: dict[str, list[RecInstance]] = {name: [] for name in SPLIT_NAMES}
    report = BuildReport(requested=cfg.counts, emitted={}, mean_req_answers={},
                         mean_hard={})
    for split_name in SPLIT_NAMES:
        by_shape = cfg.counts.get(split_name, {})
        report.emitted[split_name] = {}
        report.mean_req_answers[split_name] = {}
        report.mean_hard[split_name] = {}
        for shape in ALL_SHAPES:
            want = by_shape.get(shape, 0)
            if want == 0:
                continue
            rng = random.Random(f"{cfg.seed}:{split_name}:{shape.value}")
            got: list[RecInstance] = []
            while len(got) < want:
                try:
                    got.append(sample_instance(split, shape, split_name, rng, cfg))
                except SamplingError:
                    break
            datasets[split_name].extend(got)
            report.emitted[split_name][shape] = len(got)
            if got:
                sizes = [
                    len(i.answers[TASK_REQ])
                    + (len(i.hard[TASK_REQ]) if i.hard else 0)
                    for i in got
                ]
                report.mean_req_answers[split_name][shape] = sum(sizes) / len(got)
                if split_name != "train":
                    hard_counts = [len(i.hard[TASK_JOINT]) for i in got]
                    report.mean_hard[split_name][shape] = sum(hard_counts) / len(got)
            if len(got) < want:
                report.shortfalls.append((split_name, shape, want, len(got)))
    return datasets, report


def write_dataset(
    datasets: dict[str, list[RecInstance]],
    report: BuildReport,
    kg: KnowledgeGraph,
    out_dir: str,
) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for split_name, instances in datasets.items():
        path = os.path.join(out_dir, DATASET_FILES[split_name])
        with open(path, "w", encoding="utf-8") as f:
            for inst in instances:
                f.write(
                    json.dumps(
                        instance_to_record(inst, kg),
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                    + "\n"
                )
    with open(os.path.join(out_dir, STATS_FILE), "w", encoding="utf-8") as f:
        f.write(report.to_text())


def verify_dataset(split: KgSplit, out_dir: str) -> list[str]:
    """Re-derive every emitted record with the oracle and report violations.

    Checks, per record: the stored answer sets equal a fresh traversal on the
    record's defining graph, the joint set is the requirement/preference
    intersection, hard answers are exactly the full-minus-train difference
    (and nonempty for valid/test), the declared shape matches the query, and
    no zero-shot shape appears in the train file.
    """
    from .query import classify_shape

    violations = []
    for split_name in SPLIT_NAMES:
        path = os.path.join(out_dir, DATASET_FILES[split_name])
        if not os.path.exists(path):
            continue
        kg = split.train if split_name == "train" else split.full
        for lineno, record in enumerate(read_records(path), start=1):
            where = f"{split_name}:{lineno}"
            inst = record_to_instance(record, kg)
            if classify_shape(inst.requirement) != inst.shape:
                violations.append(f"{where}: shape mismatch")
            if split_name == "train" and inst.shape not in BASIC_SHAPES:
                violations.append(f"{where}: zero-shot shape in train file")
            a_req = oracle.answer_requirement(kg, inst.requirement)
            a_pref = oracle.answer_preference(kg, inst.user)
            a_joint = a_req & a_pref
            if split_name == "train":
                expect = {TASK_JOINT: a_joint, TASK_REQ: a_req, TASK_PREF: a_pref}
                if inst.answers != expect:
                    violations.append(f"{where}: answer sets disagree with oracle")
                if inst.hard is not None:
                    violations.append(f"{where}: train record carries hard answers")
                continue
            req_easy = oracle.answer_requirement(split.train, inst.requirement)
            pref_easy = oracle.answer_preference(split.train, inst.user)
            joint_easy = req_easy & pref_easy
            expect_easy = {
                TASK_JOINT: joint_easy, TASK_REQ: req_easy, TASK_PREF: pref_easy
            }
            expect_hard = {
                TASK_JOINT: a_joint - joint_easy,
                TASK_REQ: a_req - req_easy,
                TASK_PREF: a_pref - pref_easy,
            }
            if inst.answers != expect_easy:
                violations.append(f"{where}: easy answer sets disagree with oracle")
            if inst.hard != expect_hard:
                violations.append(f"{where}: hard answer sets disagree with oracle")
            if not inst.hard or not inst.hard[TASK_JOINT]:
                violations.append(f"{where}: no hard joint answer")
    return violations


def read_records(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def load_instances(path: str, kg: KnowledgeGraph) -> list[RecInstance]:
    return [record_to_instance(r, kg) for r in read_records(path)]
