"""Ridge-solved embeddings for freshly inserted facts.

The clone check is the core oracle: a model whose bilinear responses equal
the exact kernel distances must give an inserted duplicate row a vector
that behaves like its twin's, up to the ridge shrinkage lam/(n + lam).
"""

import numpy as np
import pytest

from walkembed.errors import NumericError, UsageError
from walkembed.extension import ExtensionConfig, extend_embedding, solve_ridge
from walkembed.kernels import default_kernels
from walkembed.relational import Fact, insert_facts
from walkembed.schemes import enumerate_targeted_schemes, targeted_text
from walkembed.model_io import save_model
from walkembed.synth import two_cluster_database
from walkembed.trainer import EmbeddingModel, TrainConfig, bilinear, train


def _cluster_indicator_model():
    """Hand-built model on the two-cluster data: phi is the one-hot group
    indicator and psi the identity for the group-value scheme, so the
    bilinear response equals the exact kernel distance for every pair."""
    db = two_cluster_database(6)
    items = list(db.relation_fact_ids("item"))
    rel = db.schema.relation("item")
    (tws,) = [
        t
        for t in enumerate_targeted_schemes(db.schema, "item", 1)
        if targeted_text(t) == "item[g]--[gid]grp :: gval"
    ]
    first_group = db.fact(items[0]).value(rel, "g")
    phi = {}
    for f in items:
        vec = np.zeros(2)
        vec[0 if db.fact(f).value(rel, "g") == first_group else 1] = 1.0
        phi[f] = vec
    model = EmbeddingModel(2, "item", phi, {tws: np.eye(2)}, [tws])
    return db, model, tws, items


# -- solve_ridge -----------------------------------------------------------------------


def test_solve_ridge_recovers_exact_solution():
    rng = np.random.default_rng(0)
    rows = rng.normal(size=(20, 6))
    x0 = rng.normal(size=6)
    x = solve_ridge(rows, rows @ x0, ridge=0.0)
    assert np.max(np.abs(x - x0)) < 1e-8


def test_solve_ridge_huge_coefficient_shrinks_to_zero():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(20, 6))
    x = solve_ridge(rows, rows @ rng.normal(size=6), ridge=1e6)
    assert np.max(np.abs(x)) < 1e-3


def test_solve_ridge_zero_on_singular_system_errors():
    rows = np.tile(np.array([1.0, 0.0]), (5, 1))  # rank 1 in 2 dims
    with pytest.raises(NumericError, match="positive ridge"):
        solve_ridge(rows, np.ones(5), ridge=0.0)


def test_solve_ridge_non_finite_result_errors():
    rows = np.eye(3)
    with pytest.raises(NumericError):
        solve_ridge(rows, np.array([1.0, np.nan, 0.0]), ridge=1e-6)


def test_extension_config_validation():
    with pytest.raises(UsageError):
        ExtensionConfig(partners_per_scheme=0)
    with pytest.raises(UsageError):
        ExtensionConfig(samples_per_partner=0)
    with pytest.raises(UsageError):
        ExtensionConfig(ridge=-1.0)
    ExtensionConfig(ridge=0.0)  # zero is allowed; the solve may still reject it


# -- clone behaviour against a response-exact model ------------------------------------------


def test_clone_gets_twin_like_responses():
    db, model, tws, items = _cluster_indicator_model()
    rel = db.schema.relation("item")
    twin = items[0]
    clone = Fact("item", ("clone", db.fact(twin).value(rel, "g")))
    db2 = insert_facts(db, [clone])
    new_id = db2.n_facts - 1
    cfg = ExtensionConfig(exhaustive_partners=True, exact_targets=True)
    ext = extend_embedding(db2, model, [new_id], cfg, default_kernels(db))
    worst = max(
        abs(bilinear(ext, new_id, p, tws) - bilinear(ext, twin, p, tws)) for p in items
    )
    # ridge shrinkage on a 6-partner cluster: lam / (6 + lam)
    assert worst < 1e-6
    assert worst == pytest.approx(1e-6 / (6 + 1e-6), rel=1e-3)


def test_clone_vector_recovers_twin_at_tiny_ridge():
    db, model, tws, items = _cluster_indicator_model()
    rel = db.schema.relation("item")
    twin = items[0]
    clone = Fact("item", ("clone", db.fact(twin).value(rel, "g")))
    db2 = insert_facts(db, [clone])
    new_id = db2.n_facts - 1
    cfg = ExtensionConfig(exhaustive_partners=True, exact_targets=True, ridge=1e-12)
    ext = extend_embedding(db2, model, [new_id], cfg, default_kernels(db))
    assert np.max(np.abs(ext.phi[new_id] - model.phi[twin])) < 1e-8


def test_huge_ridge_drives_new_vector_to_zero():
    db, model, tws, items = _cluster_indicator_model()
    rel = db.schema.relation("item")
    clone = Fact("item", ("clone", db.fact(items[0]).value(rel, "g")))
    db2 = insert_facts(db, [clone])
    new_id = db2.n_facts - 1
    cfg = ExtensionConfig(exhaustive_partners=True, exact_targets=True, ridge=1e6)
    ext = extend_embedding(db2, model, [new_id], cfg, default_kernels(db))
    assert np.max(np.abs(ext.phi[new_id])) < 1e-4


# -- freezing ----------------------------------------------------------------------


def test_existing_model_is_untouched(tmp_path):
    db, model, tws, items = _cluster_indicator_model()
    rel = db.schema.relation("item")
    before = tmp_path / "before.json"
    after = tmp_path / "after.json"
    save_model(model, db, before)
    clone = Fact("item", ("clone", db.fact(items[0]).value(rel, "g")))
    db2 = insert_facts(db, [clone])
    cfg = ExtensionConfig(exhaustive_partners=True, exact_targets=True)
    ext = extend_embedding(db2, model, [db2.n_facts - 1], cfg, default_kernels(db))
    save_model(model, db, after)
    assert before.read_bytes() == after.read_bytes()
    # the extended model shares psi and keeps every old phi row bit-identical
    assert ext.psi is model.psi
    for f in items:
        assert np.array_equal(ext.phi[f], model.phi[f])
    assert set(ext.phi) == set(model.phi) | {db2.n_facts - 1}


# -- batch handling ---------------------------------------------------------------


def _trained_cluster_model(seed=0):
    db = two_cluster_database(6)
    schemes = enumerate_targeted_schemes(db.schema, "item", 1)
    cfg = TrainConfig(k=4, n_samples=4, epochs=3, learning_rate=0.1, seed=seed)
    model, _ = train(db, "item", schemes, cfg)
    return db, model


def test_batch_order_does_not_change_vectors():
    db, model = _trained_cluster_model()
    rel = db.schema.relation("item")
    items = list(db.relation_fact_ids("item"))
    g0 = db.fact(items[0]).value(rel, "g")
    g1 = next(
        db.fact(f).value(rel, "g")
        for f in items
        if db.fact(f).value(rel, "g") != g0
    )
    db2 = insert_facts(db, [Fact("item", ("n1", g0)), Fact("item", ("n2", g1))])
    a, b = db2.n_facts - 2, db2.n_facts - 1
    cfg = ExtensionConfig()  # sampled targets exercise the per-fact streams
    fwd = extend_embedding(db2, model, [a, b], cfg, default_kernels(db), seed=7)
    rev = extend_embedding(db2, model, [b, a], cfg, default_kernels(db), seed=7)
    assert np.array_equal(fwd.phi[a], rev.phi[a])
    assert np.array_equal(fwd.phi[b], rev.phi[b])


def test_partners_never_come_from_the_batch():
    db, model, tws, items = _cluster_indicator_model()
    # pretend every embedded fact is itself part of the batch
    with pytest.raises(UsageError, match="partner"):
        extend_embedding(db, model, list(model.phi), ExtensionConfig(), default_kernels(db))


def test_empty_model_rejected():
    db, model, tws, items = _cluster_indicator_model()
    empty = EmbeddingModel(model.k, "item", {}, model.psi, model.active_schemes)
    with pytest.raises(UsageError):
        extend_embedding(db, empty, [items[0]], ExtensionConfig(), default_kernels(db))


def test_wrong_relation_fact_rejected():
    db, model, tws, items = _cluster_indicator_model()
    grp_fact = next(iter(db.relation_fact_ids("grp")))
    with pytest.raises(UsageError, match="relation|embeds"):
        extend_embedding(
            db, model, [grp_fact], ExtensionConfig(), default_kernels(db)
        )


def test_new_fact_with_no_complete_walk_errors(chain_db):
    schemes = enumerate_targeted_schemes(chain_db.schema, "R", 1)
    (back,) = [t for t in schemes if targeted_text(t) == "R[rid]--[ref]S :: sval"]
    phi = {f: np.ones(2) for f in chain_db.relation_fact_ids("R")}
    model = EmbeddingModel(2, "R", phi, {back: np.eye(2)}, [back])
    db2 = insert_facts(chain_db, [Fact("R", ("r3",))])  # nothing references r3
    new_id = db2.n_facts - 1
    with pytest.raises(NumericError, match="complete walk"):
        extend_embedding(
            db2,
            model,
            [new_id],
            ExtensionConfig(exact_targets=True),
            default_kernels(chain_db),
        )
    with pytest.raises(NumericError, match="complete walk"):
        extend_embedding(
            db2, model, [new_id], ExtensionConfig(), default_kernels(chain_db)
        )


def test_empty_batch_is_identity():
    db, model, tws, items = _cluster_indicator_model()
    ext = extend_embedding(db, model, [], ExtensionConfig(), default_kernels(db))
    assert set(ext.phi) == set(model.phi)
    for f in model.phi:
        assert np.array_equal(ext.phi[f], model.phi[f])
