"""Motion/text data model, synthetic corpus, on-disk format and DMSP shuffling."""
import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FORMAT_VERSION = "wamo-corpus/1"
MANIFEST = "manifest.json"
BLOB = "data.bin"
STD_FLOOR = 1e-8


class DataError(ValueError):
    pass


class FormatError(DataError):
    pass


def tokenize(text):
    """Lowercase, split on whitespace and punctuation, no stemming."""
    return tuple(re.findall(r"[a-z0-9]+", text.lower()))


@dataclass(frozen=True)
class TextDescription:
    text: str
    class_id: int = -1

    @property
    def tokens(self):
        return tokenize(self.text)

    def __post_init__(self):
        if not self.tokens:
            raise DataError(f"caption {self.text!r} has no tokens")


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise DataError("normalization statistics must be finite")
        if self.mean.shape != self.std.shape:
            raise DataError("mean/std shape mismatch")

    @classmethod
    def from_motions(cls, motions):
        m = np.asarray(motions, dtype=np.float64)
        flat = m.reshape(-1, m.shape[-2] * m.shape[-1])
        std = flat.std(axis=0)
        return cls(flat.mean(axis=0), np.where(std > STD_FLOOR, std, 1.0))

    def to_json(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["std"], dtype=np.float64))


@dataclass
class Corpus:
    """Motions ``(N, T, J, 3)`` float32, one or more captions each."""

    motions: np.ndarray
    captions: list
    split: str = "train"
    seed: int = 0
    normalization: NormStats = None
    class_names: list = field(default_factory=list)

    def __post_init__(self):
        self.motions = np.asarray(self.motions, dtype=np.float32)
        if self.motions.ndim != 4 or self.motions.shape[-1] != 3:
            raise DataError(f"motions must be (N, T, J, 3), got {self.motions.shape}")
        if len(self.captions) != self.motions.shape[0]:
            raise DataError(f"{self.motions.shape[0]} motions but {len(self.captions)} caption lists")
        if any(len(c) == 0 for c in self.captions):
            raise DataError("every motion needs at least one caption")

    def __len__(self):
        return self.motions.shape[0]

    @property
    def frames(self):
        return self.motions.shape[1]

    @property
    def joints(self):
        return self.motions.shape[2]

    @property
    def class_ids(self):
        return [caps[0].class_id for caps in self.captions]

    def subset(self, indices, split=None):
        idx = list(indices)
        return replace(
            self,
            motions=self.motions[idx] if idx else self.motions[:0],
            captions=[self.captions[i] for i in idx],
            split=split or self.split,
        )


# --- normalization ----------------------------------------------------------

def normalize(motion, stats):
    m = np.asarray(motion)
    shape = m.shape
    flat = m.reshape(shape[:-2] + (shape[-2] * shape[-1],))
    std = np.where(stats.std > STD_FLOOR, stats.std, 1.0)
    return ((flat - stats.mean) / std).reshape(shape).astype(m.dtype)


def denormalize(motion, stats):
    m = np.asarray(motion)
    shape = m.shape
    flat = m.reshape(shape[:-2] + (shape[-2] * shape[-1],))
    std = np.where(stats.std > STD_FLOOR, stats.std, 1.0)
    return (flat * std + stats.mean).reshape(shape).astype(m.dtype)


def pad_circular(motion, multiple):
    """Repeat leading frames so the length becomes a multiple of ``multiple``."""
    T = motion.shape[0]
    target = -(-T // multiple) * multiple
    if target == T:
        return motion
    idx = np.arange(target) % T
    return motion[idx]


# --- synthetic corpus -------------------------------------------------------

# (x lateral, y up, z forward), metres
_REST = np.array([
    [0.00, 0.95, 0.0],   # pelvis
    [0.00, 1.65, 0.0],   # head
    [-0.25, 0.85, 0.0],  # left hand
    [0.25, 0.85, 0.0],   # right hand
    [-0.10, 0.05, 0.0],  # left foot
    [0.10, 0.05, 0.0],   # right foot
    [-0.10, 0.50, 0.0],  # left knee
    [0.10, 0.50, 0.0],   # right knee
])
PELVIS, HEAD, LHAND, RHAND, LFOOT, RFOOT, LKNEE, RKNEE = range(8)

_SUBJECTS = ("a person", "someone")
_SPEED = {0: ("slowly", "leisurely"), 1: ("quickly", "briskly")}
_SIDE = {0: ("left",), 1: ("right",)}
_AMP = {0: ("gently", "slightly"), 1: ("vigorously", "energetically")}
_AMP_SCALE = {0: 0.6, 1: 1.4}


def rest_pose(J):
    if J <= len(_REST):
        return _REST[:J].copy()
    extra = np.array([[0.0, 0.95 + 0.7 * (i + 1) / (J - 7), 0.05] for i in range(J - 8)])
    return np.concatenate([_REST, extra])


def _add(pose, joint, delta):
    pose[:, joint % pose.shape[1]] += delta


def _gait(pose, t, cycles, amp, phase):
    swing = np.sin(2 * np.pi * cycles * t + phase)
    lift = np.maximum(0.0, swing)
    _add(pose, LFOOT, np.stack([0 * t, 0.06 * amp * lift, 0.2 * amp * swing], -1))
    _add(pose, RFOOT, np.stack([0 * t, 0.06 * amp * np.maximum(0.0, -swing), -0.2 * amp * swing], -1))
    _add(pose, LKNEE, np.stack([0 * t, 0.03 * amp * lift, 0.1 * amp * swing], -1))
    _add(pose, RKNEE, np.stack([0 * t, 0.03 * amp * np.maximum(0.0, -swing), -0.1 * amp * swing], -1))
    _add(pose, LHAND, np.stack([0 * t, 0 * t, -0.1 * amp * swing], -1))
    _add(pose, RHAND, np.stack([0 * t, 0 * t, 0.1 * amp * swing], -1))


def _wave(pose, t, hand, amp, phase, window):
    env = np.where(window, 1.0, 0.0)
    osc = np.sin(2 * np.pi * 12.0 * t + phase)
    _add(pose, hand, np.stack([0.15 * amp * osc * env, 0.6 * env, 0.1 * env], -1))


def _walk(pose, t, p):
    cycles = (2.0 if p["attr"] == 0 else 4.0) * p["fjit"]
    _gait(pose, t, cycles, p["amp"], p["phase"])
    pose[:, :, 2] += (0.8 if p["attr"] == 0 else 1.6) * p["amp"] * t[:, None]


def _sidestep(pose, t, p):
    sign = -1.0 if p["attr"] == 0 else 1.0
    cyc = 3.0 * p["fjit"]
    step = np.sin(2 * np.pi * cyc * t + p["phase"])
    pose[:, :, 0] += sign * 0.6 * p["amp"] * t[:, None]
    _add(pose, LFOOT, np.stack([0.12 * p["amp"] * step, 0.05 * np.abs(step), 0 * t], -1))
    _add(pose, RFOOT, np.stack([-0.12 * p["amp"] * step, 0.05 * np.abs(step), 0 * t], -1))


def _wave_only(pose, t, p):
    hand = LHAND if p["attr"] == 0 else RHAND
    window = (np.abs(((t * 2.0) % 1.0) - 0.5) < 0.3)
    _wave(pose, t * p["fjit"], hand, p["amp"], p["phase"], window)


def _clap(pose, t, p):
    cycles = (6.0 if p["attr"] == 0 else 12.0) * p["fjit"]
    osc = 0.5 * (1 + np.sin(2 * np.pi * cycles * t + p["phase"]))
    _add(pose, LHAND, np.stack([0.2 * p["amp"] * osc, 0.35 + 0 * t, 0.25 + 0 * t], -1))
    _add(pose, RHAND, np.stack([-0.2 * p["amp"] * osc, 0.35 + 0 * t, 0.25 + 0 * t], -1))


def _jump(pose, t, p):
    n = 2.0 if p["attr"] == 0 else 3.0
    hop = 0.3 * p["amp"] * np.abs(np.sin(np.pi * n * t + 0.2 * p["phase"]))
    pose[:, :, 1] += hop[:, None]


def _squat(pose, t, p):
    cycles = (1.0 if p["attr"] == 0 else 2.0) * p["fjit"]
    dip = 0.3 * p["amp"] * 0.5 * (1 - np.cos(2 * np.pi * cycles * t + 0.3 * p["phase"]))
    for j in (PELVIS, HEAD, LHAND, RHAND):
        _add(pose, j, np.stack([0 * t, -dip, 0 * t], -1))
    for j in (LKNEE, RKNEE):
        _add(pose, j, np.stack([0 * t, -0.5 * dip, 0.5 * dip], -1))


def _march_wave_end(pose, t, p):
    # base has an even cycle count so it repeats every half sequence
    _gait(pose, t, 4.0, p["amp"], p["phase"])
    hand = LHAND if p["attr"] == 0 else RHAND
    T = t.shape[0]
    window = np.arange(T) >= T // 2
    _wave(pose, t, hand, p["amp"], p["phase"], window)


def _march_wave_start(pose, t, p):
    T = t.shape[0]
    tmp = np.zeros_like(pose)
    _march_wave_end(tmp, t, p)
    pose += np.roll(tmp, -(T // 2), axis=0)


TEMPLATES = {
    "walk": (_walk, ("walks forward", "strolls ahead"), "speed"),
    "sidestep": (_sidestep, ("steps sideways to the", "shuffles sideways to the"), "side"),
    "wave": (_wave_only, ("waves the", "waves with the"), "side_hand"),
    "clap": (_clap, ("claps", "claps both hands"), "speed"),
    "jump": (_jump, ("jumps", "hops up"), "count"),
    "squat": (_squat, ("squats", "crouches down"), "speed"),
    "march_then_wave": (_march_wave_end, ("marches in place and at the end waves the",
                                          "marches on the spot and finally waves the"), "side_hand"),
    "wave_then_march": (_march_wave_start, ("first waves the", "at the start waves the"), "side_hand_march"),
}
CLASS_NAMES = tuple(TEMPLATES)
COMPOSITE_CLASSES = ("march_then_wave", "wave_then_march")


def _attr_phrase(kind, attr, rng):
    if kind == "speed":
        return rng.choice(_SPEED[attr])
    if kind == "side":
        return _SIDE[attr][0]
    if kind == "side_hand":
        return f"{_SIDE[attr][0]} hand"
    if kind == "side_hand_march":
        return f"{_SIDE[attr][0]} hand then marches in place"
    if kind == "count":
        return rng.choice(("twice", "two times") if attr == 0 else ("three times", "thrice"))
    raise KeyError(kind)


def render_template(name, params, T, J):
    """Noise-free motion ``(T, J, 3)`` for a template and its parameters."""
    fn = TEMPLATES[name][0]
    t = np.arange(T) / T
    pose = np.repeat(rest_pose(J)[None], T, axis=0)
    fn(pose, t, params)
    return pose


def caption_for(name, attr, amp_level, rng):
    _, verbs, kind = TEMPLATES[name]
    subject = rng.choice(_SUBJECTS)
    verb = rng.choice(verbs)
    return f"{subject} {verb} {_attr_phrase(kind, attr, rng)} {rng.choice(_AMP[amp_level])}"


def generate_synthetic_corpus(seed, n_pairs, n_classes=8, T=64, J=8, levels=3,
                              captions_per_motion=1, noise=0.005, classes=None):
    """Deterministic templated motion/caption pairs.

    Pair ``i`` belongs to class ``i % n_classes``. Each sample draws a binary
    template attribute (speed, side or count) and a binary amplitude level,
    both of which show up in its captions, plus continuous amplitude,
    frequency and phase jitter. Sequences whose length is not a multiple of
    ``2**levels`` are padded by circular repetition. ``classes`` picks
    template names explicitly and overrides ``n_classes``.
    """
    if classes is not None:
        unknown = [c for c in classes if c not in TEMPLATES]
        if unknown or not classes:
            raise DataError(f"unknown template classes {unknown or classes!r}")
        n_classes = len(classes)
    if n_pairs < 1 or n_classes < 1 or T < 1 or J < 1 or captions_per_motion < 1:
        raise DataError("n_pairs, n_classes, T, J and captions_per_motion must be positive")
    if n_classes > n_pairs:
        raise DataError(f"n_classes={n_classes} exceeds n_pairs={n_pairs}")
    if n_classes > len(TEMPLATES):
        raise DataError(f"at most {len(TEMPLATES)} classes available, asked for {n_classes}")
    rng = np.random.default_rng(seed)
    names = tuple(classes) if classes is not None else CLASS_NAMES[:n_classes]
    motions = []
    captions = []
    for i in range(n_pairs):
        cid = i % n_classes
        attr = int(rng.integers(2))
        amp_level = int(rng.integers(2))
        params = {
            "attr": attr,
            "amp": _AMP_SCALE[amp_level] * rng.uniform(0.9, 1.1),
            "fjit": rng.uniform(0.95, 1.05),
            "phase": rng.uniform(0.0, 2 * np.pi),
        }
        m = render_template(names[cid], params, T, J)
        m = m + noise * rng.standard_normal(m.shape)
        motions.append(pad_circular(m, 2 ** levels))
        captions.append([TextDescription(caption_for(names[cid], attr, amp_level, rng), cid)
                         for _ in range(captions_per_motion)])
    return Corpus(np.stack(motions).astype(np.float32), captions, split="train", seed=seed,
                  class_names=list(names))


def split_corpus(corpus, fractions=(0.8, 0.1, 0.1)):
    """Split by pair index; normalization stats come from the train part only."""
    n = len(corpus)
    n_train = int(fractions[0] * n)
    n_val = int((fractions[0] + fractions[1]) * n) - n_train
    bounds = {"train": range(0, n_train), "val": range(n_train, n_train + n_val),
              "test": range(n_train + n_val, n)}
    train = corpus.subset(bounds["train"], "train")
    stats = NormStats.from_motions(train.motions) if len(train) else None
    return {name: replace(corpus.subset(idx, name), normalization=stats) for name, idx in bounds.items()}


# --- on-disk format ---------------------------------------------------------

def save_corpus(corpus, path):
    """Write ``manifest.json`` + ``data.bin`` (little-endian float32, pair/frame/joint/xyz)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = np.ascontiguousarray(corpus.motions, dtype="<f4").tobytes()
    manifest = {
        "format": FORMAT_VERSION,
        "split": corpus.split,
        "seed": int(corpus.seed),
        "n_pairs": len(corpus),
        "frames": corpus.frames,
        "joints": corpus.joints,
        "shape": list(corpus.motions.shape),
        "dtype": "float32",
        "byte_order": "little",
        "layout": "pair,frame,joint,xyz",
        "blob": BLOB,
        "blob_bytes": len(blob),
        "class_names": list(corpus.class_names),
        "captions": [[{"text": c.text, "class_id": c.class_id} for c in caps] for caps in corpus.captions],
        "normalization": corpus.normalization.to_json() if corpus.normalization is not None else None,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    (path / BLOB).write_bytes(blob)
    return path


def load_corpus(path):
    path = Path(path)
    manifest = json.loads((path / MANIFEST).read_text())
    version = manifest.get("format")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported corpus format {version!r}, expected {FORMAT_VERSION!r}")
    shape = tuple(int(s) for s in manifest["shape"])
    if len(shape) != 4 or shape[3] != 3:
        raise FormatError(f"bad motion shape {shape}")
    expected = int(np.prod(shape)) * 4
    raw = (path / manifest.get("blob", BLOB)).read_bytes()
    if len(raw) != expected:
        raise FormatError(f"blob size mismatch: expected {expected} bytes for shape {shape}, got {len(raw)}")
    motions = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    if not np.all(np.isfinite(motions)):
        raise FormatError("corpus blob contains non-finite values")
    captions = [[TextDescription(c["text"], int(c["class_id"])) for c in caps] for caps in manifest["captions"]]
    norm = manifest.get("normalization")
    return Corpus(
        motions,
        captions,
        split=manifest.get("split", "train"),
        seed=int(manifest.get("seed", 0)),
        normalization=NormStats.from_json(norm) if norm is not None else None,
        class_names=list(manifest.get("class_names", [])),
    )


# --- disordered sequence construction ---------------------------------------

@dataclass(frozen=True)
class ShuffleRecord:
    permutation: np.ndarray   # shuffled[i] = original[permutation[i]]
    original_labels: np.ndarray
    shuffled_labels: np.ndarray
    selected: np.ndarray

    def inverse(self):
        inv = np.empty_like(self.permutation)
        inv[self.permutation] = np.arange(self.permutation.shape[0])
        return inv


def group_labels(T, n_groups):
    """``g[i] = i // (T // n_groups)``; the last group absorbs any remainder."""
    if n_groups < 1 or n_groups > T:
        raise DataError(f"group count {n_groups} must lie in [1, T={T}]")
    size = T // n_groups
    return np.minimum(np.arange(T) // size, n_groups - 1)


def sample_permutation(T, ratio, rng):
    if not 0.0 <= ratio <= 1.0:
        raise DataError(f"shuffle ratio {ratio} outside [0, 1]")
    n_sel = int(np.floor(ratio * T))
    perm = np.arange(T)
    selected = np.sort(rng.choice(T, size=n_sel, replace=False)) if n_sel else np.zeros(0, dtype=int)
    perm[selected] = rng.permutation(selected)
    return perm, selected


def shuffle_sequence(motion, n_groups, ratio, rng):
    """Permute ``floor(ratio * T)`` randomly chosen frames among themselves."""
    motion = np.asarray(motion)
    T = motion.shape[0]
    perm, selected = sample_permutation(T, ratio, rng)
    return apply_permutation(motion, perm, n_groups, selected)


def apply_permutation(motion, permutation, n_groups, selected=None):
    """Reorder frames by ``permutation`` and carry group labels along."""
    motion = np.asarray(motion)
    perm = np.asarray(permutation, dtype=np.int64)
    T = motion.shape[0]
    if perm.shape != (T,) or not np.array_equal(np.sort(perm), np.arange(T)):
        raise DataError("permutation must be a bijection on the frame indices")
    g_o = group_labels(T, n_groups)
    if selected is None:
        selected = np.flatnonzero(perm != np.arange(T))
    return motion[perm], ShuffleRecord(perm, g_o, g_o[perm], np.asarray(selected))
