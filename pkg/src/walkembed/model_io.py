"""Model and embedding serialisation.

Models are stored as versioned JSON: phi rows are keyed by the start
relation's key tuple (not by fact id, which is load-order dependent), and
each scheme carries its structural encoding so it can be rebound to a
schema on load.  Loaders fail loudly on a format-version mismatch.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .errors import IntegrityError, UsageError
from .relational import Database, Value
from .schemes import TargetedWalkScheme, WalkScheme, WalkStep, scheme_text
from .trainer import EmbeddingModel

MODEL_FORMAT_VERSION = 1


def _scheme_doc(tws: TargetedWalkScheme) -> dict:
    return {
        "text": scheme_text(tws.scheme),
        "target": tws.target_attr,
        "start": tws.scheme.start_relation,
        "steps": [
            {
                "src": st.fk.src,
                "src_attrs": list(st.fk.src_attrs),
                "dst": st.fk.dst,
                "dst_attrs": list(st.fk.dst_attrs),
                "direction": st.direction,
            }
            for st in tws.scheme.steps
        ],
    }


def _scheme_from_doc(doc: dict, db: Database) -> TargetedWalkScheme:
    steps = []
    for st in doc["steps"]:
        match = None
        for fk in db.schema.foreign_keys:
            if (
                fk.src == st["src"]
                and fk.dst == st["dst"]
                and list(fk.src_attrs) == st["src_attrs"]
                and list(fk.dst_attrs) == st["dst_attrs"]
            ):
                match = fk
                break
        if match is None:
            raise IntegrityError(
                f"model references a foreign key absent from the schema: "
                f"{st['src']}{st['src_attrs']} -> {st['dst']}{st['dst_attrs']}"
            )
        steps.append(WalkStep(match, st["direction"]))
    return TargetedWalkScheme(WalkScheme(doc["start"], tuple(steps)), doc["target"])


def save_model(model: EmbeddingModel, db: Database, path: str | Path) -> None:
    schemes = list(model.psi.keys())
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "k": model.k,
        "start_relation": model.start_relation,
        "schemes": [_scheme_doc(t) for t in schemes],
        "active": [i for i, t in enumerate(schemes) if t in set(model.active_schemes)],
        "psi": [model.psi[t].tolist() for t in schemes],
        "phi": [
            {"key": list(db.key_of(fid)), "vec": vec.tolist()}
            for fid, vec in sorted(model.phi.items())
        ],
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    tmp.replace(path)


def load_model(path: str | Path, db: Database) -> EmbeddingModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise UsageError(
            f"model format version {version!r} not supported (expected {MODEL_FORMAT_VERSION})"
        )
    start = doc["start_relation"]
    schemes = [_scheme_from_doc(d, db) for d in doc["schemes"]]
    psi = {t: np.asarray(m, dtype=np.float64) for t, m in zip(schemes, doc["psi"])}
    active = [schemes[i] for i in doc["active"]]
    phi: dict[int, np.ndarray] = {}
    for row in doc["phi"]:
        key = tuple(row["key"])
        fid = db.fact_by_key(start, key)
        if fid is None:
            raise IntegrityError(f"model embedding for unknown {start!r} key {key!r}")
        phi[fid] = np.asarray(row["vec"], dtype=np.float64)
    return EmbeddingModel(int(doc["k"]), start, phi, psi, active)


def export_embeddings_csv(
    model: EmbeddingModel, db: Database, path: str | Path, fact_ids: list[int] | None = None
) -> None:
    """Write embeddings as CSV: the start relation's key columns followed by
    e0..e{k-1}.  ``fact_ids`` restricts the export (e.g. to new facts)."""
    rel = db.schema.relation(model.start_relation)
    ids = sorted(model.phi.keys()) if fact_ids is None else list(fact_ids)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(rel.key) + [f"e{i}" for i in range(model.k)])
        for fid in ids:
            if fid not in model.phi:
                raise UsageError(f"no embedding for fact {fid}")
            key: tuple[Value, ...] = db.key_of(fid)
            writer.writerow(["" if v is None else v for v in key] + list(model.phi[fid]))
