import json

import numpy as np
import pytest
from oracles import brute_rank

from wamo.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from wamo.data import generate_synthetic_corpus, split_corpus
from wamo.metrics import KS, RetrievalReport, median_rank, recall_at_k, retrieval_ranks, target_rank
from wamo.model import ModelConfig, init_params
from wamo.objectives import LossConfig
from wamo.optim import AdamState, adam_step, cosine_lr
from wamo.train import (NumericalAbort, TrainConfig, _check_finite, batch_losses, evaluate_retrieval,
                        gradient_audit, log_lines, make_batch, normalized_motions, tiny_setup, train)
from wamo.model import as_tensors
from wamo import autograd as ag

# --- optimizer ---------------------------------------------------------------


def test_adam_zero_gradient():
    p = {"w": np.array([1.5, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState.zeros_like(p), 0.1)
    assert p["w"].tolist() == [1.5, -2.0]


def test_adam_first_step_hand_oracle():
    lr = 1e-3
    p = {"w": np.array([0.0])}
    state = AdamState.zeros_like(p)
    adam_step(p, {"w": np.array([1.0])}, state, lr)
    # m_hat = 0.1 / 0.1 = 1, v_hat = 0.001 / 0.001 = 1
    assert p["w"][0] == pytest.approx(-lr / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_shape_mismatch():
    p = {"w": np.zeros(2)}
    with pytest.raises(ValueError):
        adam_step(p, {"w": np.zeros(3)}, AdamState.zeros_like(p), 0.1)


def test_adam_deterministic(rng):
    g = [{"w": rng.standard_normal(4)} for _ in range(5)]

    def run():
        p = {"w": np.ones(4)}
        s = AdamState.zeros_like(p)
        for gi in g:
            adam_step(p, gi, s, 0.01)
        return p["w"].tobytes()

    assert run() == run()


def test_cosine_lr():
    assert cosine_lr(0, 100, 0.3) == 0.3
    assert cosine_lr(100, 100, 0.3) == pytest.approx(0.0, abs=1e-17)
    assert cosine_lr(50, 100, 0.3) == pytest.approx(0.15, rel=1e-15)
    for bad in (-1, 101):
        with pytest.raises(ValueError):
            cosine_lr(bad, 100, 0.3)


# --- metrics -------------------------------------------------------------------


def test_recall_and_median_examples():
    ranks = [1, 3, 12]
    assert recall_at_k(ranks, 1) == pytest.approx(100 / 3)
    assert recall_at_k(ranks, 3) == pytest.approx(200 / 3)
    assert recall_at_k(ranks, 10) == pytest.approx(200 / 3)
    assert median_rank(ranks) == 3
    assert median_rank([2, 4]) == 3.0
    assert median_rank([28, 29]) == 28.5


def test_published_rsum():
    t2m = dict(zip(KS, (14.02, 17.58, 25.51, 32.06, 42.10)))
    m2t = dict(zip(KS, (16.57, 15.51, 22.74, 29.40, 41.73)))
    assert abs(RetrievalReport(t2m, m2t, 1.0, 1.0).rsum - 257.22) <= 1e-9


def test_identity_similarity_is_perfect():
    rep = RetrievalReport.from_ranks(*retrieval_ranks(np.eye(12), np.arange(12)))
    assert rep.rsum == 1000 and rep.medr_t2m == 1 and rep.medr_m2t == 1


def test_tie_break_by_index():
    scores = np.array([0.5, 0.9, 0.5, 0.5])
    assert [target_rank(scores, t) for t in range(4)] == [2, 1, 3, 4]
    r = np.random.default_rng(3)
    for _ in range(50):
        s = r.integers(0, 4, 10).astype(float)
        t = int(r.integers(10))
        assert target_rank(s, t) == brute_rank(list(s), t)


def test_multi_caption_protocol():
    # motion 0 owns captions 0 and 1; motion 1 owns caption 2
    sim = np.array([[0.1, 0.9],
                    [0.8, 0.2],
                    [0.3, 0.7]])
    t2m, best, first = retrieval_ranks(sim, np.array([0, 0, 1]))
    assert t2m == [2, 1, 1]
    assert best == [1, 2]   # caption 1 ranks first for motion 0
    assert first == [3, 2]  # but its first caption is third
    rep = RetrievalReport.from_ranks(t2m, best, first)
    assert rep.r_at_k_m2t[1] == 50.0 and rep.medr_m2t == 2.5


def test_permutation_invariance_without_ties(rng):
    sim = rng.standard_normal((9, 9))
    base = RetrievalReport.from_ranks(*retrieval_ranks(sim, np.arange(9)))
    perm = rng.permutation(9)
    moved = RetrievalReport.from_ranks(*retrieval_ranks(sim[perm][:, perm], np.arange(9)))
    assert base == moved


def test_report_invariants(rng):
    rep = RetrievalReport.from_ranks(*retrieval_ranks(rng.standard_normal((20, 20)), np.arange(20)))
    for d in (rep.r_at_k_t2m, rep.r_at_k_m2t):
        vals = [d[k] for k in KS]
        assert vals == sorted(vals) and 0 <= vals[0] and vals[-1] <= 100
    assert 0 <= rep.rsum <= 1000
    assert list(rep.to_json())[:2] == ["t2m_R@1", "t2m_R@2"]


# --- training ----------------------------------------------------------------

SMALL = dict(latent_dim=16, levels=2, n_groups=4, batch_size=4, epochs=1, n_blocks=1)


@pytest.fixture(scope="module")
def tiny_corpus():
    return split_corpus(generate_synthetic_corpus(0, 10, 4, T=16, J=3, levels=2), (0.8, 0.2, 0.0))


def _fixed_batch_loss(params, mcfg, corpus, cfg):
    motions = normalized_motions(corpus, np.float32)
    b = make_batch(motions, corpus.captions, list(range(len(corpus))), mcfg.n_groups, 0.25,
                   np.random.default_rng(9))
    with ag.no_grad():
        return float(batch_losses(as_tensors(params), mcfg, cfg.loss_config(), b)["total"].data)


def test_one_epoch_lowers_loss():
    corpus = split_corpus(generate_synthetic_corpus(0, 8, 4, T=16, J=3, levels=2), (1.0, 0.0, 0.0))["train"]
    cfg = TrainConfig(learning_rate=3e-3, **SMALL)
    mcfg = cfg.model_config(16, 3)
    init = init_params(mcfg, np.random.default_rng(cfg.seed), np.float32)
    before = _fixed_batch_loss(init, mcfg, corpus, cfg)
    res = train(corpus, None, cfg)
    assert len(res.log) == 1 and res.log[0]["steps"] == 2
    assert _fixed_batch_loss(res.params, mcfg, corpus, cfg) < before


def test_zero_learning_rate_keeps_params(tiny_corpus):
    cfg = TrainConfig(learning_rate=0.0, **dict(SMALL, epochs=2))
    mcfg = cfg.model_config(16, 3)
    init = init_params(mcfg, np.random.default_rng(cfg.seed), np.float32)
    res = train(tiny_corpus["train"], None, cfg)
    assert all(np.array_equal(init[k], res.params[k]) for k in init)


def test_training_is_deterministic(tiny_corpus):
    cfg = TrainConfig(learning_rate=1e-3, **dict(SMALL, epochs=2))
    a = train(tiny_corpus["train"], tiny_corpus["val"], cfg)
    b = train(tiny_corpus["train"], tiny_corpus["val"], cfg)
    assert log_lines(a.log) == log_lines(b.log)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    rec = json.loads(log_lines(a.log).splitlines()[-1])
    assert {"epoch", "lr", "loss_total", "loss_nce", "loss_rec", "loss_dmsp", "val"} <= set(rec)


def test_non_finite_gradient_names_group():
    with pytest.raises(NumericalAbort, match="'attention'.*band0.blk0.attn.q.w"):
        _check_finite({"total": 1.0}, {"band0.blk0.attn.q.w": np.array([np.nan]), "cls.w": np.zeros(1)})
    with pytest.raises(NumericalAbort, match="non-finite loss"):
        _check_finite({"total": float("nan")}, {})


def test_nan_input_aborts(tiny_corpus):
    from dataclasses import replace
    bad = replace(tiny_corpus["train"], normalization=None)
    bad.motions[0, 3, 1, 2] = np.nan
    with pytest.raises(Exception):
        train(bad, None, TrainConfig(**SMALL))


def test_evaluate_empty_gallery(tiny_corpus):
    cfg = TrainConfig(**SMALL)
    mcfg = cfg.model_config(16, 3)
    with pytest.raises(ValueError):
        evaluate_retrieval(init_params(mcfg, np.random.default_rng(0)), mcfg, tiny_corpus["test"])


# --- audit -------------------------------------------------------------------


@pytest.fixture(scope="module")
def audit_setup():
    return tiny_setup(0)


def test_audit_passes_on_tiny_config(audit_setup):
    params, mcfg, batch = audit_setup
    report = gradient_audit(params, mcfg, LossConfig(), batch)
    assert set(report) == {"filters", "convs", "mlps", "attention", "pooling", "decoders", "text", "classifier"}
    for g, a in report.items():
        assert a.n_checked >= 32 or g == "filters", g
        assert a.passed, (g, a.max_rel_error)


def test_audit_flags_corrupted_group(audit_setup):
    params, mcfg, batch = audit_setup

    def corrupt(grads):
        grads = dict(grads)
        g = grads["filters.h0"].copy()
        g[0] += 0.1
        grads["filters.h0"] = g
        return grads

    report = gradient_audit(params, mcfg, LossConfig(), batch, grad_hook=corrupt)
    assert not report["filters"].passed
    assert report["classifier"].passed


def test_audit_empty_group_passes(audit_setup):
    params, mcfg, batch = audit_setup
    from dataclasses import replace
    fixed = replace(mcfg, filter_mode="fixed")
    params = {k: v for k, v in params.items() if not k.startswith("filters.")}
    report = gradient_audit(params, fixed, LossConfig(), batch, n_coords=4)
    assert report["filters"].n_checked == 0 and report["filters"].passed


# --- checkpoint --------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(frames=16, joints=3, latent_dim=8, levels=2, n_groups=4)
    params = init_params(cfg, np.random.default_rng(1))
    save_checkpoint(tmp_path / "ck", params, cfg, {"epoch": 3})
    back, cfg2, meta = load_checkpoint(tmp_path / "ck")
    assert cfg2 == cfg and meta["epoch"] == 3
    assert all(back[k].tobytes() == params[k].tobytes() for k in params)
    blob = next(p for p in (tmp_path / "ck").iterdir() if p.suffix == ".bin")
    blob.write_bytes(blob.read_bytes()[:-8])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "ck")
