"""Multi-frequency motion encoder, toy text encoder, decoders and the order classifier.

Parameters live in a flat ``dict[str, ndarray]``. Forward functions take the
same mapping with :class:`~wamo.autograd.Tensor` values (see :func:`as_tensors`)
and work on batches: motions are ``(B, T, J, 3)``.

Band index 0 is the approximation ``a_S``; band ``s`` (1..S) is detail ``d_s``.
"""
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .wavelets import make_filter_bank, swt_forward

VOCAB_BUCKETS = 4096

PARAM_GROUPS = ("filters", "convs", "mlps", "attention", "pooling", "decoders", "text", "classifier")


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    frames: int = 64
    joints: int = 8
    latent_dim: int = 256
    levels: int = 3
    n_groups: int = 16
    k_low: int = 9
    k_high: int = 3
    n_blocks: int = 2
    n_heads: int = 4
    ff_mult: int = 4
    vocab: int = VOCAB_BUCKETS
    family: str = "haar"
    filter_mode: str = "learnable"

    @property
    def channels(self):
        return self.joints * 3

    @property
    def n_bands(self):
        return self.levels + 1

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if min(self.frames, self.joints, self.latent_dim, self.levels, self.n_groups,
               self.n_blocks, self.n_heads, self.vocab) < 1:
            raise ShapeError("model sizes must be positive")
        if self.frames % (2 ** self.levels):
            raise ShapeError(f"frames={self.frames} is not a multiple of 2**levels={2 ** self.levels}")
        if self.latent_dim % self.n_heads:
            raise ShapeError(f"latent_dim={self.latent_dim} not divisible by n_heads={self.n_heads}")
        if self.n_groups > self.frames:
            raise ShapeError(f"n_groups={self.n_groups} exceeds frames={self.frames}")
        if self.k_low < 1 or self.k_high < 1 or self.k_low % 2 == 0 or self.k_high % 2 == 0:
            raise ShapeError("convolution kernels must be odd and positive")
        return self


def group_of(name):
    head = name.split(".")[0]
    if head == "filters":
        return "filters"
    if head in ("pool",):
        return "pooling"
    if head == "cls":
        return "classifier"
    if head == "text":
        return "text"
    if head == "dec":
        return "decoders"
    if head == "fuse":
        return "mlps"
    parts = name.split(".")
    if parts[1] == "conv":
        return "convs"
    if parts[1] == "proj":
        return "mlps"
    return "attention"


def band_kernel(cfg, band):
    return cfg.k_low if band == 0 else cfg.k_high


# --- initialization ---------------------------------------------------------

def _linear(p, name, fan_in, fan_out, rng, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    p[f"{name}.w"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype)
    p[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)


def _mlp(p, name, d_in, d_hidden, d_out, rng, dtype):
    _linear(p, f"{name}.l1", d_in, d_hidden, rng, dtype)
    _linear(p, f"{name}.l2", d_hidden, d_out, rng, dtype)


def _stack_params(p, name, cfg, rng, dtype):
    D = cfg.latent_dim
    p[f"{name}.pos"] = (0.02 * rng.standard_normal((cfg.frames, D))).astype(dtype)
    for i in range(cfg.n_blocks):
        blk = f"{name}.blk{i}"
        for ln in ("ln1", "ln2"):
            p[f"{blk}.{ln}.g"] = np.ones(D, dtype=dtype)
            p[f"{blk}.{ln}.b"] = np.zeros(D, dtype=dtype)
        for proj in ("q", "k", "v", "o"):
            _linear(p, f"{blk}.attn.{proj}", D, D, rng, dtype)
        _mlp(p, f"{blk}.ff", D, cfg.ff_mult * D, D, rng, dtype)
    p[f"{name}.lnf.g"] = np.ones(D, dtype=dtype)
    p[f"{name}.lnf.b"] = np.zeros(D, dtype=dtype)


def init_params(cfg, rng, dtype=np.float32):
    """Fresh parameters: fan-in scaled uniform weights, zero biases, N(0, 0.02) positions."""
    cfg.validate()
    D, C = cfg.latent_dim, cfg.channels
    p = {}
    if cfg.filter_mode == "learnable":
        bank = make_filter_bank(cfg.family, "fixed")
        p["filters.h0"] = bank.analysis_low.astype(dtype)
        p["filters.g0"] = bank.analysis_high.astype(dtype)
        p["filters.h1"] = bank.synthesis_low.astype(dtype)
        p["filters.g1"] = bank.synthesis_high.astype(dtype)
    for b in range(cfg.n_bands):
        k = band_kernel(cfg, b)
        bound = 1.0 / np.sqrt(k * C)
        p[f"band{b}.conv.w"] = rng.uniform(-bound, bound, (k, C, C)).astype(dtype)
        p[f"band{b}.conv.b"] = np.zeros(C, dtype=dtype)
        _mlp(p, f"band{b}.proj", C, D, D, rng, dtype)
        _stack_params(p, f"band{b}", cfg, rng, dtype)
    _mlp(p, "fuse", cfg.n_bands * D, D, D, rng, dtype)
    _stack_params(p, "inter", cfg, rng, dtype)
    _linear(p, "pool.W", D, D, rng, dtype)
    p["pool.v"] = rng.uniform(-1 / np.sqrt(D), 1 / np.sqrt(D), (D, 1)).astype(dtype)
    _linear(p, "cls", D, cfg.n_groups, rng, dtype)
    p["text.embed"] = rng.standard_normal((cfg.vocab, D)).astype(dtype)
    _mlp(p, "text.mlp", D, D, D, rng, dtype)
    _mlp(p, "dec.low", D, D, C, rng, dtype)
    for s in range(1, cfg.levels + 1):
        _mlp(p, f"dec.high{s}", D, D, C, rng, dtype)
    _mlp(p, "dec.inter", D, D, C, rng, dtype)
    return p


def as_tensors(params, requires_grad=False):
    return {k: Tensor(v, requires_grad) for k, v in params.items()}


def filter_bank(P, cfg, dtype=np.float64):
    """The bank used by the forward pass: trainable tensors or fixed constants."""
    if cfg.filter_mode == "learnable":
        return make_filter_bank(cfg.family, "learnable").replace(
            analysis_low=P["filters.h0"], analysis_high=P["filters.g0"],
            synthesis_low=P["filters.h1"], synthesis_high=P["filters.g1"])
    bank = make_filter_bank(cfg.family, "fixed")
    return bank.replace(**{n: f.astype(dtype) for n, f in zip(
        ("analysis_low", "analysis_high", "synthesis_low", "synthesis_high"), bank.filters())})


# --- building blocks --------------------------------------------------------

def linear(P, name, x):
    return x @ P[f"{name}.w"] + P[f"{name}.b"]


def mlp(P, name, x):
    return linear(P, f"{name}.l2", ag.gelu(linear(P, f"{name}.l1", x)))


def attention(P, name, x, n_heads):
    B, T, D = x.shape
    dh = D // n_heads

    def heads(t):
        return t.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    q = heads(linear(P, f"{name}.q", x))
    k = heads(linear(P, f"{name}.k", x))
    v = heads(linear(P, f"{name}.v", x))
    w = ag.softmax((q @ k.transpose(0, 1, 3, 2)) * (1.0 / float(np.sqrt(dh))), axis=-1)
    out = (w @ v).transpose(0, 2, 1, 3).reshape(B, T, D)
    return linear(P, f"{name}.o", out)


def transformer_stack(P, name, x, cfg):
    """Learned positions, pre-norm residual blocks, final layer norm."""
    h = x + P[f"{name}.pos"]
    for i in range(cfg.n_blocks):
        blk = f"{name}.blk{i}"
        h = h + attention(P, f"{blk}.attn", ag.layer_norm(h, P[f"{blk}.ln1.g"], P[f"{blk}.ln1.b"]), cfg.n_heads)
        h = h + mlp(P, f"{blk}.ff", ag.layer_norm(h, P[f"{blk}.ln2.g"], P[f"{blk}.ln2.b"]))
    return ag.layer_norm(h, P[f"{name}.lnf.g"], P[f"{name}.lnf.b"])


def temporal_conv(P, name, x, ksize):
    """Length-preserving circular convolution over time; x is (B, T, C)."""
    B, T, C = x.shape
    w = P[f"{name}.w"]
    if w.shape != (ksize, C, w.shape[2]):
        raise ShapeError(f"{name}.w has shape {w.shape}, expected ({ksize}, {C}, C_out)")
    cols = ag.circular_unfold(x, ksize).reshape(B, T, ksize * C)
    return cols @ w.reshape(ksize * C, w.shape[2]) + P[f"{name}.b"]


# --- spec-level operations --------------------------------------------------

def _flat_motion(x, cfg):
    x = ag.as_tensor(x)
    if x.ndim != 4 or x.shape[1:] != (cfg.frames, cfg.joints, 3):
        raise ShapeError(f"motion batch must be (B, {cfg.frames}, {cfg.joints}, 3), got {x.shape}")
    return x.reshape(x.shape[0], cfg.frames, cfg.channels)


def decompose_bands(x_flat, bank, levels):
    """(B, T, C) -> [a_S, d_1, ..., d_S] as tensors."""
    pyr = swt_forward(ag.as_tensor(x_flat), bank, levels)
    return [pyr.approx, *pyr.details]


def twd_decompose(motion, bank, levels):
    """Split a motion ``(T, J, 3)`` (or a batch) into ``M_low`` and ``M_high``.

    ``M_low`` has the motion's shape; ``M_high`` stacks the ``levels`` detail
    bands on a new axis just before time: ``(S, T, J, 3)`` or ``(B, S, T, J, 3)``.
    """
    m = np.asarray(motion.data if isinstance(motion, Tensor) else motion)
    single = m.ndim == 3
    mb = m[None] if single else m
    B, T, J, _ = mb.shape
    pyr = swt_forward(mb.reshape(B, T, J * 3), bank, levels)
    unwrap = (lambda t: t.data) if isinstance(pyr.approx, Tensor) else (lambda t: t)
    low = unwrap(pyr.approx).reshape(B, T, J, 3)
    high = np.stack([unwrap(d).reshape(B, T, J, 3) for d in pyr.details], axis=1)
    return (low[0], high[0]) if single else (low, high)


def conv_features(P, cfg, bands):
    """Pre-attention features per band: circular conv then per-frame MLP to D."""
    out = []
    for b, xb in enumerate(bands):
        h = temporal_conv(P, f"band{b}.conv", xb, band_kernel(cfg, b))
        out.append(mlp(P, f"band{b}.proj", h))
    return out


def encode_intra(P, cfg, bands):
    """bands: [a_S, d_1..d_S] each (B, T, C) -> list of (B, T, D), low band first."""
    if len(bands) != cfg.n_bands:
        raise ShapeError(f"expected {cfg.n_bands} bands, got {len(bands)}")
    feats = conv_features(P, cfg, bands)
    return [transformer_stack(P, f"band{b}", f, cfg) for b, f in enumerate(feats)]


def fuse_bands(P, cfg, intra):
    multi = ag.concat(intra, axis=-1)
    if multi.shape[-1] != cfg.n_bands * cfg.latent_dim:
        raise ShapeError(f"fused width {multi.shape[-1]} != (S+1)*D = {cfg.n_bands * cfg.latent_dim}")
    return mlp(P, "fuse", multi)


def encode_inter(P, cfg, intra):
    """Concatenate [low, high_1..high_S] on features, fuse to D, inter-frequency stack."""
    return transformer_stack(P, "inter", fuse_bands(P, cfg, intra), cfg)


def pool_motion(P, feats):
    """Additive attention pooling over time; returns (pooled (B, D), weights (B, T))."""
    B, T, D = feats.shape
    scores = (ag.tanh(linear(P, "pool.W", feats)) @ P["pool.v"]).reshape(B, T)
    alpha = ag.softmax(scores, axis=-1)
    pooled = (alpha.reshape(B, 1, T) @ feats).reshape(B, D)
    return pooled, alpha


def classify_frames(P, feats):
    """Per-frame softmax over temporal group labels: (B, T, D) -> (B, T, n_groups)."""
    return ag.softmax(linear(P, "cls", feats), axis=-1)


def token_bucket(token, vocab=VOCAB_BUCKETS):
    """CRC-32 of the UTF-8 token, modulo the bucket count."""
    return zlib.crc32(token.encode("utf-8")) % vocab


def bag_matrix(token_lists, vocab, dtype):
    """Row ``i`` holds the mean-pooling weights of caption ``i`` over buckets."""
    bag = np.zeros((len(token_lists), vocab), dtype=dtype)
    for i, toks in enumerate(token_lists):
        if not toks:
            raise ShapeError(f"caption {i} has no tokens")
        for tok in toks:
            bag[i, token_bucket(tok, vocab)] += 1.0
        bag[i] /= len(toks)
    return bag


def encode_text(P, cfg, token_lists):
    """Mean of hashed-token embeddings, then a two-layer MLP: -> (B, D)."""
    dtype = P["text.embed"].dtype
    pooled = ag.as_tensor(bag_matrix(token_lists, cfg.vocab, dtype)) @ P["text.embed"]
    return mlp(P, "text.mlp", pooled)


@dataclass
class FrequencyFeatures:
    intra_low: object    # (B, T, D)
    intra_high: list     # S x (B, T, D)
    inter: object        # (B, T, D)
    pooled: object       # (B, D)


def encode_motion(P, cfg, motions):
    """Full motion pathway; motions (B, T, J, 3) -> FrequencyFeatures."""
    x = _flat_motion(motions, cfg)
    bands = decompose_bands(x, filter_bank(P, cfg, x.dtype), cfg.levels)
    intra = encode_intra(P, cfg, bands)
    inter = encode_inter(P, cfg, intra)
    pooled, _ = pool_motion(P, inter)
    return FrequencyFeatures(intra[0], intra[1:], inter, pooled)


def decode_bands(P, cfg, feats):
    """Per-band decoders to (B, T, C): returns (low, [high_1..high_S], inter)."""
    low = mlp(P, "dec.low", feats.intra_low)
    highs = [mlp(P, f"dec.high{s + 1}", h) for s, h in enumerate(feats.intra_high)]
    inter = mlp(P, "dec.inter", feats.inter)
    return low, highs, inter
