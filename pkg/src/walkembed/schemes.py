"""Walk schemes: enumeration, random walks, and exact destination laws.

A walk scheme starts at a relation and takes a fixed sequence of steps,
each traversing one foreign key either forward (from referencing fact to
the referenced fact) or backward (from a fact to the facts referencing
it).  A walk instantiates the scheme from a concrete start fact, picking
uniformly among the candidate facts at every step.  Length zero is
allowed: the walk is just the start fact.

A targeted scheme pairs a scheme with an attribute of its end relation;
sampling one yields the attribute value at the walk's destination.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SchemaError, UsageError
from .relational import Database, DatabaseSchema, ForeignKey, Value

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class WalkStep:
    fk: ForeignKey
    direction: str

    def __post_init__(self) -> None:
        if self.direction not in (FORWARD, BACKWARD):
            raise SchemaError(f"unknown step direction {self.direction!r}")

    @property
    def source_relation(self) -> str:
        return self.fk.src if self.direction == FORWARD else self.fk.dst

    @property
    def target_relation(self) -> str:
        return self.fk.dst if self.direction == FORWARD else self.fk.src


@dataclass(frozen=True)
class WalkScheme:
    start_relation: str
    steps: tuple[WalkStep, ...] = ()

    def __post_init__(self) -> None:
        here = self.start_relation
        for step in self.steps:
            if step.source_relation != here:
                raise SchemaError(
                    f"step over {step.fk.name} ({step.direction}) does not chain from {here!r}"
                )
            here = step.target_relation

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def end_relation(self) -> str:
        return self.steps[-1].target_relation if self.steps else self.start_relation


@dataclass(frozen=True)
class TargetedWalkScheme:
    scheme: WalkScheme
    target_attr: str


def scheme_text(scheme: WalkScheme) -> str:
    """Canonical rendering: R0[A0]--[B1]R1[A1]--...--[B_l]R_l.

    For each hop, the bracket on the left holds the attributes used on the
    side being left, the bracket on the right those on the side entered.
    """
    parts = [scheme.start_relation]
    for step in scheme.steps:
        if step.direction == FORWARD:
            left, right = step.fk.src_attrs, step.fk.dst_attrs
        else:
            left, right = step.fk.dst_attrs, step.fk.src_attrs
        parts.append(f"[{','.join(left)}]--[{','.join(right)}]{step.target_relation}")
    return "".join(parts)


def targeted_text(tws: TargetedWalkScheme) -> str:
    return f"{scheme_text(tws.scheme)} :: {tws.target_attr}"


# -- enumeration -------------------------------------------------------------


def _steps_from(schema: DatabaseSchema, relation: str) -> list[WalkStep]:
    steps = []
    for fk in schema.foreign_keys:
        if fk.src == relation:
            steps.append(WalkStep(fk, FORWARD))
        if fk.dst == relation:
            steps.append(WalkStep(fk, BACKWARD))
    steps.sort(key=lambda s: (s.fk.name, s.direction))
    return steps


def enumerate_walk_schemes(schema: DatabaseSchema, start: str, max_length: int) -> list[WalkScheme]:
    """All schemes from ``start`` up to ``max_length`` steps, canonical order.

    Canonical order is by length, then lexicographic by the sequence of
    (foreign-key name, direction) pairs.  Immediate backtracking is not
    pruned; a step and its reverse may follow each other.
    """
    if max_length < 0:
        raise UsageError("max_length must be non-negative")
    schema.relation(start)
    out: list[WalkScheme] = []
    frontier = [WalkScheme(start)]
    out.extend(frontier)
    for _ in range(max_length):
        nxt = []
        for scheme in frontier:
            for step in _steps_from(schema, scheme.end_relation):
                nxt.append(WalkScheme(start, scheme.steps + (step,)))
        out.extend(nxt)
        frontier = nxt
    return out


def enumerate_targeted_schemes(
    schema: DatabaseSchema, start: str, max_length: int
) -> list[TargetedWalkScheme]:
    """Targeted schemes in canonical order: scheme order, then attribute order."""
    out = []
    for scheme in enumerate_walk_schemes(schema, start, max_length):
        for attr in schema.relation(scheme.end_relation).attr_names:
            out.append(TargetedWalkScheme(scheme, attr))
    return out


# -- single walks ------------------------------------------------------------


def _fk_pos(db: Database, fk: ForeignKey) -> int:
    try:
        return db.schema.foreign_keys.index(fk)
    except ValueError:
        raise SchemaError(f"foreign key {fk.name} is not part of the schema") from None


def step_candidates(db: Database, fact_id: int, step: WalkStep) -> tuple[int, ...]:
    pos = _fk_pos(db, step.fk)
    if step.direction == FORWARD:
        dst = db.forward_ref(pos, fact_id)
        return () if dst is None else (dst,)
    return db.back_refs(pos, fact_id)


def sample_walk(
    db: Database, fact_id: int, scheme: WalkScheme, rng: np.random.Generator
) -> tuple[int, ...] | None:
    """One random walk as a fact-id sequence, or None on a dead end."""
    fact = db.fact(fact_id)
    if fact.relation != scheme.start_relation:
        raise UsageError(
            f"fact {fact_id} is in {fact.relation!r}, scheme starts at {scheme.start_relation!r}"
        )
    path = [fact_id]
    here = fact_id
    for step in scheme.steps:
        candidates = step_candidates(db, here, step)
        if not candidates:
            return None
        here = candidates[int(rng.integers(len(candidates)))] if len(candidates) > 1 else candidates[0]
        path.append(here)
    return tuple(path)


def exact_dest_distribution(db: Database, fact_id: int, scheme: WalkScheme) -> dict[int, float]:
    """Exact law of the walk destination, conditioned on completing.

    Mass flowing into a dead end is discarded and the rest renormalised;
    the result is empty when no walk completes.
    """
    fact = db.fact(fact_id)
    if fact.relation != scheme.start_relation:
        raise UsageError(
            f"fact {fact_id} is in {fact.relation!r}, scheme starts at {scheme.start_relation!r}"
        )
    dist = {fact_id: 1.0}
    for step in scheme.steps:
        nxt: dict[int, float] = {}
        for fid, p in dist.items():
            candidates = step_candidates(db, fid, step)
            if not candidates:
                continue
            share = p / len(candidates)
            for c in candidates:
                nxt[c] = nxt.get(c, 0.0) + share
        dist = nxt
        if not dist:
            return {}
    total = sum(dist.values())
    if total <= 0.0:
        return {}
    return {fid: p / total for fid, p in dist.items()}


def exact_value_distribution(
    db: Database, fact_id: int, tws: TargetedWalkScheme
) -> dict[Value, float]:
    """Destination-attribute law with nulls dropped and the rest renormalised."""
    dest = exact_dest_distribution(db, fact_id, tws.scheme)
    out: dict[Value, float] = {}
    for fid, p in dest.items():
        v = db.attr_value(fid, tws.target_attr)
        if v is None:
            continue
        out[v] = out.get(v, 0.0) + p
    total = sum(out.values())
    if total <= 0.0:
        return {}
    return {v: p / total for v, p in out.items()}


def dest_attr_sample(
    db: Database,
    fact_id: int,
    tws: TargetedWalkScheme,
    rng: np.random.Generator,
    retry_cap: int = 20,
) -> tuple[int, Value] | None:
    """Sample (destination fact id, its target value), retrying over dead
    ends and null destinations up to ``retry_cap`` attempts."""
    attr = tws.target_attr
    for _ in range(max(1, retry_cap)):
        path = sample_walk(db, fact_id, tws.scheme, rng)
        if path is None:
            continue
        value = db.attr_value(path[-1], attr)
        if value is None:
            continue
        return path[-1], value
    return None


# -- vectorised walking ------------------------------------------------------
#
# Per (foreign key, direction) the step is encoded as arrays indexed by fact
# id: forward as a dense map to the referenced id (-1 when non-referencing),
# backward in CSR form (offsets into a flat candidate list).  Tables are
# built once per database and cached on it; databases are immutable, so the
# cache can never go stale.


class _StepTable:
    __slots__ = ("kind", "fwd", "offsets", "flat")

    def __init__(self, kind: str, fwd=None, offsets=None, flat=None) -> None:
        self.kind = kind
        self.fwd = fwd
        self.offsets = offsets
        self.flat = flat


def _step_table(db: Database, step: WalkStep) -> _StepTable:
    key = (step.fk, step.direction)
    table = db._step_tables.get(key)
    if table is not None:
        return table
    pos = _fk_pos(db, step.fk)
    n = db.n_facts
    if step.direction == FORWARD:
        fwd = np.full(n, -1, dtype=np.int64)
        for src, dst in db._forward[pos].items():
            fwd[src] = dst
        table = _StepTable(FORWARD, fwd=fwd)
    else:
        counts = np.zeros(n + 1, dtype=np.int64)
        for dst, srcs in db._backward[pos].items():
            counts[dst + 1] = len(srcs)
        offsets = np.cumsum(counts)
        flat = np.empty(int(offsets[-1]), dtype=np.int64)
        for dst, srcs in db._backward[pos].items():
            flat[offsets[dst] : offsets[dst] + len(srcs)] = srcs
        table = _StepTable(BACKWARD, offsets=offsets, flat=flat)
    db._step_tables[key] = table
    return table


def sample_dest_batch(
    db: Database, fact_ids: np.ndarray, scheme: WalkScheme, rng: np.random.Generator
) -> np.ndarray:
    """Walk destinations for many starts at once; -1 marks a dead end.

    Distributionally identical to calling sample_walk per start.
    """
    here = np.asarray(fact_ids, dtype=np.int64).copy()
    alive = here >= 0
    for step in scheme.steps:
        if not alive.any():
            break
        table = _step_table(db, step)
        idx = np.flatnonzero(alive)
        cur = here[idx]
        if table.kind == FORWARD:
            nxt = table.fwd[cur]
        else:
            lo = table.offsets[cur]
            hi = table.offsets[cur + 1]
            width = hi - lo
            nxt = np.full(len(cur), -1, dtype=np.int64)
            has = width > 0
            if has.any():
                picks = lo[has] + (rng.random(int(has.sum())) * width[has]).astype(np.int64)
                nxt[has] = table.flat[picks]
        here[idx] = nxt
        alive = here >= 0
    here[~alive] = -1
    return here


def sample_target_values_batch(
    db: Database,
    fact_ids: np.ndarray,
    tws: TargetedWalkScheme,
    rng: np.random.Generator,
    retry_cap: int = 20,
) -> tuple[np.ndarray, list[Value]]:
    """Batched dest_attr_sample: (dest ids with -1 for failures, values list).

    Each start retries dead ends and null destinations up to ``retry_cap``
    attempts, matching the scalar sampler.
    """
    start = np.asarray(fact_ids, dtype=np.int64)
    rel = db.schema.relation(tws.scheme.end_relation)
    attr_pos = rel.attr_index(tws.target_attr)
    dests = np.full(len(start), -1, dtype=np.int64)
    values: list[Value] = [None] * len(start)
    pending = np.arange(len(start))
    for _ in range(max(1, retry_cap)):
        if len(pending) == 0:
            break
        got = sample_dest_batch(db, start[pending], tws.scheme, rng)
        still = []
        for row, dest in zip(pending, got):
            if dest < 0:
                still.append(row)
                continue
            v = db.fact(int(dest)).values[attr_pos]
            if v is None:
                still.append(row)
                continue
            dests[row] = dest
            values[row] = v
        pending = np.asarray(still, dtype=np.int64)
    return dests, values


def sample_walks_batch(
    db: Database,
    fact_ids: np.ndarray,
    scheme: WalkScheme,
    rng: np.random.Generator,
) -> np.ndarray:
    """Full paths for many starts, shape (n, length+1); dead rows hold -1."""
    here = np.asarray(fact_ids, dtype=np.int64).copy()
    paths = np.full((len(here), scheme.length + 1), -1, dtype=np.int64)
    paths[:, 0] = here
    alive = here >= 0
    for col, step in enumerate(scheme.steps, start=1):
        if not alive.any():
            break
        table = _step_table(db, step)
        idx = np.flatnonzero(alive)
        cur = here[idx]
        if table.kind == FORWARD:
            nxt = table.fwd[cur]
        else:
            lo = table.offsets[cur]
            hi = table.offsets[cur + 1]
            width = hi - lo
            nxt = np.full(len(cur), -1, dtype=np.int64)
            has = width > 0
            if has.any():
                picks = lo[has] + (rng.random(int(has.sum())) * width[has]).astype(np.int64)
                nxt[has] = table.flat[picks]
        here[idx] = nxt
        paths[idx, col] = nxt
        alive = here >= 0
    paths[~alive, :] = -1
    return paths


def has_complete_walk(db: Database, fact_id: int, scheme: WalkScheme) -> bool:
    """Whether at least one walk of the scheme completes from ``fact_id``."""
    frontier = {fact_id}
    for step in scheme.steps:
        nxt: set[int] = set()
        for fid in frontier:
            nxt.update(step_candidates(db, fid, step))
        frontier = nxt
        if not frontier:
            return False
    return True
