"""Embedding extension for newly inserted facts.

A new start-relation fact gets its vector by solving a regularised linear
least-squares problem against the frozen trained model: for partner facts
f' with known embeddings, the row psi(s,A) phi(f') paired with a target
estimate of the expected kernel distance between the new fact and f'
constrains phi(new) so that the bilinear form reproduces the similarity.
Existing phi rows and every psi matrix are never touched.

Partners are drawn only from facts embedded before the batch arrived and
each new fact uses its own derived random stream, so the result does not
depend on the order of the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, UsageError
from .kernels import KernelMap, kd_exact, kernel_eval, kernel_for
from .relational import Database
from .schemes import TargetedWalkScheme, sample_target_values_batch
from .seeding import derive_rng
from .trainer import EmbeddingModel


@dataclass(frozen=True)
class ExtensionConfig:
    partners_per_scheme: int = 10
    samples_per_partner: int = 5
    ridge: float = 1e-6
    exhaustive_partners: bool = False
    exact_targets: bool = False

    def __post_init__(self) -> None:
        if self.partners_per_scheme <= 0 or self.samples_per_partner <= 0:
            raise UsageError("partners_per_scheme and samples_per_partner must be positive")
        if self.ridge < 0:
            raise UsageError("ridge must be non-negative")


def solve_ridge(rows: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    """Solve (A^T A + ridge I) x = A^T b.

    With ridge 0 the normal matrix may be singular; that raises with advice
    rather than returning garbage.
    """
    gram = rows.T @ rows
    if ridge > 0:
        gram = gram + ridge * np.eye(rows.shape[1])
    rhs = rows.T @ targets
    try:
        if ridge <= 0 and np.linalg.matrix_rank(gram) < gram.shape[0]:
            raise np.linalg.LinAlgError("singular normal matrix")
        x = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        raise NumericError(
            "normal matrix is singular; use a positive ridge coefficient"
        ) from None
    if not np.all(np.isfinite(x)):
        raise NumericError("extension solve produced non-finite values")
    return x


def _targets_for_partner(
    db: Database,
    new_fact: int,
    partner: int,
    tws: TargetedWalkScheme,
    kernels: KernelMap,
    cfg: ExtensionConfig,
    rng: np.random.Generator,
    retry_cap: int,
) -> float | None:
    spec = kernel_for(kernels, tws)
    if cfg.exact_targets:
        try:
            return kd_exact(db, new_fact, partner, tws, spec)
        except NumericError:
            return None
    starts_new = np.full(cfg.samples_per_partner, new_fact, dtype=np.int64)
    starts_old = np.full(cfg.samples_per_partner, partner, dtype=np.int64)
    _, vals_new = sample_target_values_batch(db, starts_new, tws, rng, retry_cap)
    _, vals_old = sample_target_values_batch(db, starts_old, tws, rng, retry_cap)
    kept = [
        kernel_eval(spec, a, b)
        for a, b in zip(vals_new, vals_old)
        if a is not None and b is not None
    ]
    if not kept:
        return None
    return float(np.mean(kept))


def extend_embedding(
    db: Database,
    model: EmbeddingModel,
    new_fact_ids: list[int],
    cfg: ExtensionConfig,
    kernels: KernelMap,
    seed: int = 0,
    retry_cap: int = 20,
) -> EmbeddingModel:
    """Solve embeddings for ``new_fact_ids`` against the frozen model.

    ``db`` must already contain the new facts (walks run on it).  Partners
    come exclusively from the model's existing embeddings, never from the
    batch, and each new fact derives its own random stream from ``seed``
    and its key, so any batch order yields the same vectors.
    """
    existing = sorted(model.phi.keys())
    if not existing:
        raise UsageError("model has no existing embeddings to extend from")
    new_set = set(new_fact_ids)
    partners_pool = [f for f in existing if f not in new_set]
    if not partners_pool:
        raise UsageError("no pre-existing partner facts available")

    phi = dict(model.phi)
    for new_fact in new_fact_ids:
        fact = db.fact(new_fact)
        if fact.relation != model.start_relation:
            raise UsageError(
                f"fact {new_fact} is in {fact.relation!r}, model embeds {model.start_relation!r}"
            )
        rng = derive_rng(seed, "extend", str(db.key_of(new_fact)))
        rows: list[np.ndarray] = []
        targets: list[float] = []
        for tws in model.active_schemes:
            if cfg.exhaustive_partners:
                partners = list(partners_pool)
            else:
                take = min(cfg.partners_per_scheme, len(partners_pool))
                partners = [
                    partners_pool[int(i)]
                    for i in rng.choice(len(partners_pool), size=take, replace=False)
                ]
            psi = model.psi[tws]
            for partner in partners:
                target = _targets_for_partner(
                    db, new_fact, partner, tws, kernels, cfg, rng, retry_cap
                )
                if target is None:
                    continue
                rows.append(psi @ phi[partner])
                targets.append(target)
        if not rows:
            raise NumericError(
                f"no complete walks for any scheme from new fact {new_fact}; "
                f"cannot build an extension system"
            )
        phi[new_fact] = solve_ridge(
            np.asarray(rows, dtype=np.float64),
            np.asarray(targets, dtype=np.float64),
            cfg.ridge,
        )
    return EmbeddingModel(model.k, model.start_relation, phi, model.psi, model.active_schemes)
