"""Training loop, finite-difference gradient audit and retrieval evaluation."""
import json
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autograd as ag
from .data import group_labels, normalize, shuffle_sequence
from .metrics import RetrievalReport, retrieval_ranks
from .model import (PARAM_GROUPS, ModelConfig, as_tensors, classify_frames, encode_motion,
                    encode_text, group_of, init_params)
from .objectives import LossConfig, cosine_matrix, dmsp_loss, info_nce, reconstruction_loss, total_loss
from .optim import AdamState, adam_step, cosine_lr

DTYPES = {"float32": np.float32, "float64": np.float64}


class NumericalAbort(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    latent_dim: int = 256
    levels: int = 3
    temperature: float = 0.07
    n_groups: int = 16
    shuffle_ratio: float = 0.25
    weights: tuple = (1.0, 1.0, 1.0)
    smooth_l1_beta: float = 1.0
    family: str = "haar"
    filter_mode: str = "learnable"
    k_low: int = 9
    k_high: int = 3
    n_blocks: int = 2
    n_heads: int = 4
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.shuffle_ratio <= 1.0:
            raise ValueError("shuffle_ratio must lie in [0, 1]")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    def model_config(self, frames, joints):
        return ModelConfig(frames=frames, joints=joints, latent_dim=self.latent_dim, levels=self.levels,
                           n_groups=self.n_groups, k_low=self.k_low, k_high=self.k_high,
                           n_blocks=self.n_blocks, n_heads=self.n_heads, family=self.family,
                           filter_mode=self.filter_mode).validate()

    def loss_config(self):
        return LossConfig(self.temperature, self.smooth_l1_beta, self.weights)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


# --- batches ----------------------------------------------------------------

@dataclass
class Batch:
    motions: np.ndarray        # (B, T, J, 3), normalized
    tokens: list               # B token tuples
    shuffled: np.ndarray       # (B, T, J, 3)
    labels_ordered: np.ndarray   # (B, T)
    labels_shuffled: np.ndarray  # (B, T)


def normalized_motions(corpus, dtype):
    m = corpus.motions if corpus.normalization is None else normalize(corpus.motions, corpus.normalization)
    return np.asarray(m, dtype=dtype)


def make_batch(motions, captions, indices, n_groups, shuffle_ratio, rng):
    """Pick one caption per motion and build the disordered copies."""
    ms = motions[indices]
    tokens = []
    for i in indices:
        caps = captions[i]
        tokens.append(caps[int(rng.integers(len(caps)))].tokens if len(caps) > 1 else caps[0].tokens)
    shuffled, g_o, g_s = [], [], []
    for m in ms:
        sm, rec = shuffle_sequence(m, n_groups, shuffle_ratio, rng)
        shuffled.append(sm)
        g_o.append(rec.original_labels)
        g_s.append(rec.shuffled_labels)
    return Batch(ms, tokens, np.stack(shuffled), np.stack(g_o), np.stack(g_s))


def batch_losses(P, mcfg, lcfg, batch):
    """All three objectives and their weighted total, as tensors."""
    feats = encode_motion(P, mcfg, batch.motions)
    text = encode_text(P, mcfg, batch.tokens)
    l_nce = info_nce(text, feats.pooled, lcfg.temperature)
    l_rec, _, _ = reconstruction_loss(P, mcfg, feats, batch.motions, lcfg.smooth_l1_beta)
    shuffled = encode_motion(P, mcfg, batch.shuffled)
    l_dmsp = dmsp_loss(classify_frames(P, feats.inter), batch.labels_ordered,
                       classify_frames(P, shuffled.inter), batch.labels_shuffled)
    return {"nce": l_nce, "rec": l_rec, "dmsp": l_dmsp,
            "total": total_loss(l_nce, l_rec, l_dmsp, lcfg.weights)}


def loss_and_grads(params, mcfg, lcfg, batch):
    P = as_tensors(params, requires_grad=True)
    losses = batch_losses(P, mcfg, lcfg, batch)
    losses["total"].backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in P.items()}
    return {k: float(v.data) for k, v in losses.items()}, grads


def _check_finite(losses, grads):
    bad = [k for k, v in losses.items() if not math.isfinite(v)]
    for name in sorted(grads):
        if not np.all(np.isfinite(grads[name])):
            raise NumericalAbort(f"non-finite gradient in group {group_of(name)!r} (parameter {name}); losses={losses}")
    if bad:
        raise NumericalAbort(f"non-finite loss {bad}: {losses}")


# --- evaluation -------------------------------------------------------------

def embed_corpus(params, mcfg, corpus, chunk=64):
    """Motion embeddings (N, D), caption embeddings (Q, D), caption owners (Q,)."""
    P = as_tensors(params)
    motions = normalized_motions(corpus, next(iter(params.values())).dtype)
    tokens = [c.tokens for caps in corpus.captions for c in caps]
    owner = np.array([i for i, caps in enumerate(corpus.captions) for _ in caps], dtype=int)
    with ag.no_grad():
        m = [encode_motion(P, mcfg, motions[i:i + chunk]).pooled.data for i in range(0, len(corpus), chunk)]
        t = [encode_text(P, mcfg, tokens[i:i + chunk]).data for i in range(0, len(tokens), chunk)]
    return np.concatenate(m), np.concatenate(t), owner


def evaluate_retrieval(params, mcfg, corpus):
    if len(corpus) == 0:
        raise ValueError("cannot evaluate retrieval on an empty gallery")
    m, t, owner = embed_corpus(params, mcfg, corpus)
    with ag.no_grad():
        sim = cosine_matrix(t.astype(np.float64), m.astype(np.float64)).data
    return RetrievalReport.from_ranks(*retrieval_ranks(sim, owner))


def dmsp_accuracy(params, mcfg, corpus, shuffle_ratio, rng, chunk=64):
    """Per-frame group-label accuracy on ordered and on shuffled sequences."""
    P = as_tensors(params)
    motions = normalized_motions(corpus, next(iter(params.values())).dtype)
    hits_o = hits_s = total = 0
    with ag.no_grad():
        for i in range(0, len(corpus), chunk):
            idx = list(range(i, min(i + chunk, len(corpus))))
            b = make_batch(motions, corpus.captions, idx, mcfg.n_groups, shuffle_ratio, rng)
            p_o = classify_frames(P, encode_motion(P, mcfg, b.motions).inter).data
            p_s = classify_frames(P, encode_motion(P, mcfg, b.shuffled).inter).data
            hits_o += int(np.sum(p_o.argmax(-1) == b.labels_ordered))
            hits_s += int(np.sum(p_s.argmax(-1) == b.labels_shuffled))
            total += b.labels_ordered.size
    return hits_o / total, hits_s / total


def chance_report(corpus, cfg, seeds=(0, 1, 2, 3, 4)):
    """Mean t2m R@1 and Rsum of randomly initialized models."""
    mcfg = cfg.model_config(corpus.frames, corpus.joints)
    r1, rsum = [], []
    for s in seeds:
        params = init_params(mcfg, np.random.default_rng(s), DTYPES[cfg.dtype])
        rep = evaluate_retrieval(params, mcfg, corpus)
        r1.append(rep.r_at_k_t2m[1])
        rsum.append(rep.rsum)
    return {"t2m_R@1": float(np.mean(r1)), "t2m_R@1_std": float(np.std(r1)),
            "rsum": float(np.mean(rsum)), "seeds": list(seeds)}


# --- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    params: dict
    best_params: dict
    model_config: ModelConfig
    log: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    best_epoch: int = 0
    best_report: RetrievalReport = None


def _round(x):
    return float(f"{x:.10g}")


def train(train_corpus, val_corpus, cfg, params=None, on_epoch=None):
    """Run the full objective with Adam and a cosine schedule; deterministic per ``cfg.seed``."""
    if len(train_corpus) < 2:
        raise ValueError("need at least two training pairs")
    dtype = DTYPES[cfg.dtype]
    mcfg = cfg.model_config(train_corpus.frames, train_corpus.joints)
    lcfg = cfg.loss_config()
    group_labels(mcfg.frames, mcfg.n_groups)
    rng = np.random.default_rng(cfg.seed)
    if params is None:
        params = init_params(mcfg, rng, dtype)
    else:
        params = {k: np.array(v, dtype=dtype) for k, v in params.items()}
    motions = normalized_motions(train_corpus, dtype)
    n = len(train_corpus)
    n_batches = max(1, n // cfg.batch_size) if n % cfg.batch_size < 2 else n // cfg.batch_size + 1
    total_steps = n_batches * cfg.epochs
    state = AdamState.zeros_like(params)
    result = TrainResult(params, {k: v.copy() for k, v in params.items()}, mcfg)
    best_rsum = -1.0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        sums = {"nce": 0.0, "rec": 0.0, "dmsp": 0.0, "total": 0.0}
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            if len(idx) < 2:
                continue
            batch = make_batch(motions, train_corpus.captions, idx, mcfg.n_groups, cfg.shuffle_ratio, rng)
            losses, grads = loss_and_grads(params, mcfg, lcfg, batch)
            _check_finite(losses, grads)
            lr = cosine_lr(step, total_steps, cfg.learning_rate)
            adam_step(params, grads, state, lr)
            step += 1
            result.step_losses.append(losses["total"])
            for k in sums:
                sums[k] += losses[k]
        record = {"epoch": epoch, "steps": step, "lr": _round(cosine_lr(step, total_steps, cfg.learning_rate))}
        for k, v in sums.items():
            record[f"loss_{k}"] = _round(v / n_batches)
        if val_corpus is not None and len(val_corpus):
            report = evaluate_retrieval(params, mcfg, val_corpus)
            record["val"] = {k: _round(v) for k, v in report.to_json().items()}
            if report.rsum > best_rsum:
                best_rsum = report.rsum
                result.best_epoch = epoch
                result.best_report = report
                result.best_params = {k: v.copy() for k, v in params.items()}
        else:
            result.best_epoch = epoch
            result.best_params = {k: v.copy() for k, v in params.items()}
        result.log.append(record)
        if on_epoch is not None:
            on_epoch(record)
    return result


def log_lines(log):
    return "".join(json.dumps(r, sort_keys=False) + "\n" for r in log)


# --- gradient audit -----------------------------------------------------------

@dataclass
class GroupAudit:
    group: str
    n_checked: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self):
        return self.n_checked == 0 or self.max_rel_error <= self.tolerance


def tiny_setup(seed=0, levels=2, n_groups=4):
    """The small 64-bit configuration the audit runs on: T=8, J=2, D=8, B=2."""
    from .data import generate_synthetic_corpus

    mcfg = ModelConfig(frames=8, joints=2, latent_dim=8, levels=levels, n_groups=n_groups).validate()
    corpus = generate_synthetic_corpus(seed, n_pairs=2, n_classes=2, T=8, J=2, levels=levels)
    rng = np.random.default_rng(seed)
    params = init_params(mcfg, rng, np.float64)
    for name, p in params.items():
        # non-trivial norms and biases so every path carries gradient
        if name.endswith(".b") or name.endswith(".g"):
            p += 0.1 * rng.standard_normal(p.shape)
    motions = corpus.motions.astype(np.float64)
    motions = (motions - motions.mean(axis=(0, 1))) / (motions.std(axis=(0, 1)) + 1e-3)
    batch = make_batch(motions, corpus.captions, [0, 1], n_groups, 0.5, rng)
    return params, mcfg, batch


def gradient_audit(params, mcfg, lcfg, batch, tolerance=1e-6, n_coords=32, step=1e-5, seed=0, grad_hook=None):
    """Compare reverse-mode gradients with central differences, per parameter group.

    For each group up to ``n_coords`` coordinates are sampled (all of them when
    the group is smaller), preferring those with a non-zero analytic gradient.
    The error of a group is ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``
    over its sampled coordinates.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    _, grads = loss_and_grads(params, mcfg, lcfg, batch)
    if grad_hook is not None:
        grads = grad_hook(grads)
    rng = np.random.default_rng(seed)

    def loss_at():
        with ag.no_grad():
            return float(batch_losses(as_tensors(params), mcfg, lcfg, batch)["total"].data)

    report = {}
    for group in PARAM_GROUPS:
        names = sorted(n for n in params if group_of(n) == group)
        coords = [(n, i) for n in names for i in range(params[n].size)]
        if len(coords) > n_coords:
            live = [c for c in coords if grads[c[0]].flat[c[1]] != 0]
            dead = [c for c in coords if grads[c[0]].flat[c[1]] == 0]
            pick_live = rng.permutation(len(live))[:min(len(live), n_coords)]
            chosen = [live[i] for i in pick_live]
            if len(chosen) < n_coords:
                chosen += [dead[i] for i in rng.permutation(len(dead))[:n_coords - len(chosen)]]
            coords = chosen
        ana, num = [], []
        for name, i in coords:
            flat = params[name].reshape(-1)
            orig = flat[i]
            flat[i] = orig + step
            up = loss_at()
            flat[i] = orig - step
            down = loss_at()
            flat[i] = orig
            num.append((up - down) / (2 * step))
            ana.append(grads[name].flat[i])
        ana, num = np.array(ana), np.array(num)
        scale = max(np.max(np.abs(ana), initial=0.0), np.max(np.abs(num), initial=0.0))
        err = float(np.max(np.abs(ana - num)) / scale) if scale > 0 else 0.0
        report[group] = GroupAudit(group, len(coords), err, tolerance)
    return report


def audit_json(report):
    return {g: {"n_checked": a.n_checked, "max_rel_error": a.max_rel_error, "tolerance": a.tolerance,
                "passed": a.passed} for g, a in report.items()}
