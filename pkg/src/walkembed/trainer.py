"""Bilinear embedding trainer.

Each start-relation fact f gets a vector phi(f); each targeted walk scheme
(s, A) gets a symmetric matrix psi(s, A).  Training drives the bilinear
form phi(f)^T psi(s,A) phi(f') toward the expected kernel distance of the
pair under the scheme, using single-sample SGD: the regression target for
one update is the kernel applied to one sampled destination value from
each side, an unbiased estimate of the expected kernel distance.

Epoch procedure (fixed, so runs are reproducible from the seed alone):
for every scheme in active order, every start fact contributes
``n_samples`` draws, each pairing it with a uniform partner fact distinct
from it; destination values are sampled per side with dead ends and null
destinations retried up to ``retry_cap`` attempts; pairs still incomplete
are skipped and counted.  All surviving samples of the epoch are then
applied in one seeded shuffled order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError, UsageError
from .kernels import KernelMap, default_kernels, kernel_eval, kernel_for
from .relational import Database
from .schemes import TargetedWalkScheme, sample_target_values_batch, targeted_text
from .seeding import derive_rng


@dataclass(frozen=True)
class TrainConfig:
    k: int = 32
    n_samples: int = 5
    epochs: int = 10
    learning_rate: float = 0.05
    seed: int = 0
    retry_cap: int = 20

    def __post_init__(self) -> None:
        if self.k <= 0 or self.n_samples <= 0 or self.epochs < 0:
            raise UsageError("k and n_samples must be positive, epochs non-negative")
        if self.learning_rate <= 0:
            raise UsageError("learning_rate must be positive")


@dataclass
class EmbeddingModel:
    k: int
    start_relation: str
    phi: dict[int, np.ndarray]
    psi: dict[TargetedWalkScheme, np.ndarray]
    active_schemes: list[TargetedWalkScheme]


@dataclass(frozen=True)
class TrainingSample:
    fact: int
    partner: int
    tws: TargetedWalkScheme
    dest_fact: int
    dest_partner: int


@dataclass
class EpochStats:
    epoch_index: int
    epoch_mean_loss: dict[TargetedWalkScheme, float]
    cumulative_mean_loss: dict[TargetedWalkScheme, float]
    samples_used: int
    samples_skipped: int
    wall_time: float
    active_schemes: tuple[TargetedWalkScheme, ...]


def init_model(
    db: Database,
    start_relation: str,
    schemes: list[TargetedWalkScheme],
    cfg: TrainConfig,
) -> EmbeddingModel:
    """Fresh model: phi entries i.i.d. uniform on (-1/sqrt(k), 1/sqrt(k)),
    psi the identity.  Deterministic under cfg.seed."""
    if not schemes:
        raise UsageError("scheme list is empty")
    for tws in schemes:
        if tws.scheme.start_relation != start_relation:
            raise UsageError(
                f"scheme {targeted_text(tws)} does not start at {start_relation!r}"
            )
    rng = derive_rng(cfg.seed, "init")
    bound = 1.0 / np.sqrt(cfg.k)
    phi = {
        fid: rng.uniform(-bound, bound, size=cfg.k)
        for fid in db.relation_fact_ids(start_relation)
    }
    psi = {tws: np.eye(cfg.k) for tws in schemes}
    return EmbeddingModel(cfg.k, start_relation, phi, psi, list(schemes))


def bilinear(model: EmbeddingModel, fact: int, partner: int, tws: TargetedWalkScheme) -> float:
    return float(model.phi[fact] @ model.psi[tws] @ model.phi[partner])


def loss_and_grads(
    phi_f: np.ndarray, phi_p: np.ndarray, psi: np.ndarray, kappa: float
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Per-sample loss 0.5 * (phi_f^T psi phi_p - kappa)^2 and its gradients
    with respect to phi_f, phi_p, and the (unconstrained) psi matrix."""
    residual = float(phi_f @ psi @ phi_p) - kappa
    loss = 0.5 * residual * residual
    grad_f = residual * (psi @ phi_p)
    grad_p = residual * (psi.T @ phi_f)
    grad_psi = residual * np.outer(phi_f, phi_p)
    return loss, grad_f, grad_p, grad_psi


def sgd_step(
    model: EmbeddingModel, sample: TrainingSample, kappa: float, learning_rate: float
) -> float:
    """One update; all gradients use pre-update values, and the psi update
    is symmetrised so psi stays exactly symmetric.  Returns the pre-update
    loss."""
    phi_f = model.phi[sample.fact]
    phi_p = model.phi[sample.partner]
    psi = model.psi[sample.tws]
    loss, grad_f, grad_p, grad_psi = loss_and_grads(phi_f, phi_p, psi, kappa)
    if not np.isfinite(loss):
        raise NumericError(
            f"non-finite loss on scheme {targeted_text(sample.tws)} "
            f"(facts {sample.fact},{sample.partner}, kappa={kappa})"
        )
    phi_f -= learning_rate * grad_f
    phi_p -= learning_rate * grad_p
    psi -= learning_rate * 0.5 * (grad_psi + grad_psi.T)
    return loss


@dataclass
class _LossLedger:
    """Running per-scheme loss sums across epochs, for cumulative means."""

    total: dict[TargetedWalkScheme, float] = field(default_factory=dict)
    count: dict[TargetedWalkScheme, int] = field(default_factory=dict)

    def add(self, tws: TargetedWalkScheme, loss_sum: float, n: int) -> None:
        self.total[tws] = self.total.get(tws, 0.0) + loss_sum
        self.count[tws] = self.count.get(tws, 0) + n

    def means(self) -> dict[TargetedWalkScheme, float]:
        return {t: self.total[t] / self.count[t] for t in self.total if self.count[t] > 0}


def _draw_partners(
    start_ids: np.ndarray, n_samples: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(facts repeated n_samples times, uniform partners distinct from each)."""
    m = len(start_ids)
    fact_pos = np.repeat(np.arange(m), n_samples)
    offsets = rng.integers(0, m - 1, size=len(fact_pos))
    partner_pos = (fact_pos + 1 + offsets) % m
    return start_ids[fact_pos], start_ids[partner_pos]


def train_epoch(
    db: Database,
    model: EmbeddingModel,
    cfg: TrainConfig,
    kernels: KernelMap,
    epoch_index: int,
    ledger: _LossLedger,
) -> EpochStats:
    """Run one epoch in place and report its statistics.

    Skipped samples (either side failed to produce a non-null destination
    within the retry cap) never reach the optimiser and are excluded from
    loss means.
    """
    t0 = time.perf_counter()
    start_ids = np.asarray(db.relation_fact_ids(model.start_relation), dtype=np.int64)
    if len(start_ids) < 2:
        raise UsageError("start relation needs at least two facts for partner sampling")
    rng = derive_rng(cfg.seed, "epoch", epoch_index)

    active = list(model.active_schemes)
    samples: list[TrainingSample] = []
    kappas: list[float] = []
    skipped = 0
    for tws in active:
        spec = kernel_for(kernels, tws)
        facts, partners = _draw_partners(start_ids, cfg.n_samples, rng)
        dest_f, vals_f = sample_target_values_batch(db, facts, tws, rng, cfg.retry_cap)
        dest_p, vals_p = sample_target_values_batch(db, partners, tws, rng, cfg.retry_cap)
        for i in range(len(facts)):
            if vals_f[i] is None or vals_p[i] is None:
                skipped += 1
                continue
            samples.append(
                TrainingSample(int(facts[i]), int(partners[i]), tws, int(dest_f[i]), int(dest_p[i]))
            )
            kappas.append(kernel_eval(spec, vals_f[i], vals_p[i]))

    order = rng.permutation(len(samples))
    loss_sum: dict[TargetedWalkScheme, float] = {}
    loss_n: dict[TargetedWalkScheme, int] = {}
    for j in order:
        sample = samples[j]
        loss = sgd_step(model, sample, kappas[j], cfg.learning_rate)
        loss_sum[sample.tws] = loss_sum.get(sample.tws, 0.0) + loss
        loss_n[sample.tws] = loss_n.get(sample.tws, 0) + 1

    for tws, s in loss_sum.items():
        ledger.add(tws, s, loss_n[tws])

    for fid, vec in model.phi.items():
        if not np.all(np.isfinite(vec)):
            raise NumericError(f"non-finite embedding for fact {fid} after epoch {epoch_index}")
    for tws, mat in model.psi.items():
        if not np.all(np.isfinite(mat)):
            raise NumericError(
                f"non-finite scheme matrix for {targeted_text(tws)} after epoch {epoch_index}"
            )

    return EpochStats(
        epoch_index=epoch_index,
        epoch_mean_loss={t: loss_sum[t] / loss_n[t] for t in loss_sum},
        cumulative_mean_loss=ledger.means(),
        samples_used=len(samples),
        samples_skipped=skipped,
        wall_time=time.perf_counter() - t0,
        active_schemes=tuple(active),
    )


EpochCallback = Callable[[int, "EmbeddingModel", "EpochStats"], None]


def train(
    db: Database,
    start_relation: str,
    schemes: list[TargetedWalkScheme],
    cfg: TrainConfig,
    kernels: KernelMap | None = None,
    callbacks: list[EpochCallback] | None = None,
) -> tuple[EmbeddingModel, list[EpochStats]]:
    """Initialise a model and train for cfg.epochs epochs.

    Callbacks run after every epoch with (epoch_index, model, stats); a
    callback may shrink ``model.active_schemes`` to stop sampling a scheme
    from the next epoch on (its psi stays in the model, frozen).
    """
    if kernels is None:
        kernels = default_kernels(db)
    model = init_model(db, start_relation, schemes, cfg)
    ledger = _LossLedger()
    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        stats = train_epoch(db, model, cfg, kernels, epoch, ledger)
        history.append(stats)
        for cb in callbacks or ():
            cb(epoch, model, stats)
    return model, history
