"""The three modality encoders: volume, report, and radiograph.

Volume and report encoders are handcrafted features followed by a trainable
linear head; the radiograph encoder is a patch-averaging MLP trained from
scratch. All heads run through the tensor module so their parameters receive
exact gradients, and every encoder emits unit-norm rows.

Report tokenization is negation-aware: "no <label>" collapses into a single
``no_<label>`` token so a finding's presence and its explicit absence occupy
different count-vector coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .phantom import LabelSpace, Volume
from .rng import SplitMix64, derive_seed

HIST_BINS = 16
HIST_RANGE = (-1024.0, 3000.0)
POOL_GRID = 4  # 4x4x4 block means
_STRIP = ".,;:!?"


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def index(self, token: str) -> int | None:
        return self._lookup.get(token)

    def __post_init__(self):
        object.__setattr__(self, "_lookup", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)


def build_vocab(label_space: LabelSpace) -> Vocab:
    """Tokens of the report templates: label names, their negated bigram
    forms, and the template filler words."""
    tokens = list(label_space.names)
    tokens += [f"no_{name}" for name in label_space.names]
    tokens += ["is", "present", "no"]
    return Vocab(tuple(tokens))


def tokenize(text: str, label_names) -> list[str]:
    """Lowercase whitespace tokenization with negation bigram folding."""
    names = set(label_names)
    raw = [w.strip(_STRIP) for w in text.lower().split()]
    raw = [w for w in raw if w]
    out: list[str] = []
    i = 0
    while i < len(raw):
        if raw[i] == "no" and i + 1 < len(raw) and raw[i + 1] in names:
            out.append(f"no_{raw[i + 1]}")
            i += 2
        else:
            out.append(raw[i])
            i += 1
    return out


def report_counts(text: str, vocab: Vocab, label_names) -> np.ndarray:
    counts = np.zeros(len(vocab), dtype=np.float64)
    for token in tokenize(text, label_names):
        idx = vocab.index(token)
        if idx is not None:
            counts[idx] += 1.0
    return counts


def _block_edges(n: int) -> np.ndarray:
    # pad by edge replication up to a multiple of the pooling grid
    padded = ((n + POOL_GRID - 1) // POOL_GRID) * POOL_GRID
    return np.linspace(0, padded, POOL_GRID + 1).astype(np.int64)


def volume_features(volume: Volume) -> np.ndarray:
    """64 block-mean HUs over a 4x4x4 grid plus a 16-bin global HU histogram
    normalized to sum 1 (80 features total)."""
    vox = volume.voxels
    nz, ny, nx = vox.shape
    if min(nz, ny, nx) < 1:
        raise ValueError(f"degenerate volume shape {vox.shape}")
    pads = [(-len_ % POOL_GRID) for len_ in (nz, ny, nx)]
    if any(pads):
        vox = np.pad(vox, [(0, p) for p in pads], mode="edge")
    bz, by, bx = (s // POOL_GRID for s in vox.shape)
    blocks = vox.reshape(POOL_GRID, bz, POOL_GRID, by, POOL_GRID, bx)
    means = blocks.mean(axis=(1, 3, 5)).reshape(-1)
    hist, _ = np.histogram(volume.voxels, bins=HIST_BINS, range=HIST_RANGE)
    hist = hist.astype(np.float64) / volume.voxels.size
    return np.concatenate([means, hist])


def image_patches(pixels: np.ndarray, patch_size: int) -> np.ndarray:
    """Non-overlapping patches as rows of a (patches, patch_size^2) matrix;
    edges are padded by replication when the image size does not divide."""
    img = np.asarray(pixels, dtype=np.float64)
    h, w = img.shape
    ph = (-h) % patch_size
    pw = (-w) % patch_size
    if ph or pw:
        img = np.pad(img, ((0, ph), (0, pw)), mode="edge")
    gh, gw = img.shape[0] // patch_size, img.shape[1] // patch_size
    tiles = img.reshape(gh, patch_size, gw, patch_size).transpose(0, 2, 1, 3)
    return tiles.reshape(gh * gw, patch_size * patch_size)


# ---------------------------------------------------------------------------
# parameters


class EncoderParams:
    """Named parameter tensors for one encoder."""

    def __init__(self, tensors: dict[str, T.Tensor], trainable: bool = True):
        self.tensors = tensors
        self.set_trainable(trainable)

    @property
    def trainable(self) -> bool:
        return self._trainable

    def set_trainable(self, flag: bool) -> None:
        self._trainable = bool(flag)
        for t in self.tensors.values():
            t.requires_grad = self._trainable

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    @classmethod
    def from_arrays(cls, named: dict[str, np.ndarray], trainable: bool = False) -> "EncoderParams":
        return cls({name: T.Tensor(arr, name=name) for name, arr in named.items()}, trainable)


def _init_linear(rng: SplitMix64, fan_in: int, fan_out: int, prefix: str) -> dict[str, T.Tensor]:
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform_array((fan_in, fan_out), -bound, bound)
    b = rng.uniform_array((fan_out,), -bound, bound)
    return {f"{prefix}.W": T.Tensor(w, name=f"{prefix}.W"),
            f"{prefix}.b": T.Tensor(b, name=f"{prefix}.b")}


def init_report_encoder(vocab_size: int, dim: int, seed: int) -> EncoderParams:
    rng = SplitMix64(derive_seed(seed, "report-encoder"))
    return EncoderParams(_init_linear(rng, vocab_size, dim, "report"))


def init_volume_encoder(dim: int, seed: int, feature_size: int = POOL_GRID**3 + HIST_BINS) -> EncoderParams:
    rng = SplitMix64(derive_seed(seed, "volume-encoder"))
    return EncoderParams(_init_linear(rng, feature_size, dim, "volume"))


def init_student_encoder(patch_dim: int, patch_embed: int, hidden: int, dim: int,
                         seed: int) -> EncoderParams:
    rng = SplitMix64(derive_seed(seed, "student-encoder"))
    tensors = {}
    tensors.update(_init_linear(rng, patch_dim, patch_embed, "patch"))
    tensors.update(_init_linear(rng, patch_embed, hidden, "mlp1"))
    tensors.update(_init_linear(rng, hidden, dim, "mlp2"))
    return EncoderParams(tensors)


# ---------------------------------------------------------------------------
# differentiable heads (feature matrix in, unit-norm embedding rows out)


def linear_head(features, params: EncoderParams, prefix: str) -> T.Tensor:
    x = T.as_tensor(features)
    z = T.add(T.matmul(x, params.tensors[f"{prefix}.W"]), params.tensors[f"{prefix}.b"])
    return T.l2_normalize_rows(z)


def report_head(counts, params: EncoderParams) -> T.Tensor:
    return linear_head(counts, params, "report")


def volume_head(features, params: EncoderParams) -> T.Tensor:
    return linear_head(features, params, "volume")


def student_head(patch_rows, patches_per_item: int, params: EncoderParams) -> T.Tensor:
    """Patch rows (n*p, patch_dim) -> unit-norm item embeddings (n, dim)."""
    x = T.as_tensor(patch_rows)
    if x.shape[0] % patches_per_item != 0:
        raise ValueError(
            f"{x.shape[0]} patch rows not divisible by {patches_per_item} patches per item")
    per_patch = T.add(T.matmul(x, params.tensors["patch.W"]), params.tensors["patch.b"])
    pooled = T.mean_pool(per_patch, patches_per_item)
    h = T.relu(T.add(T.matmul(pooled, params.tensors["mlp1.W"]), params.tensors["mlp1.b"]))
    z = T.add(T.matmul(h, params.tensors["mlp2.W"]), params.tensors["mlp2.b"])
    return T.l2_normalize_rows(z)


# ---------------------------------------------------------------------------
# frozen single-item conveniences


@dataclass
class Embedding:
    vector: np.ndarray
    modality: str    # C, R, or X
    item_id: str


def encode_report(text: str, vocab: Vocab, params: EncoderParams, label_names,
                  item_id: str = "") -> Embedding:
    counts = report_counts(text, vocab, label_names)[None, :]
    vec = report_head(counts, params).data[0]
    return Embedding(vector=vec, modality="R", item_id=item_id)


def encode_volume(volume: Volume, params: EncoderParams, item_id: str = "") -> Embedding:
    feats = volume_features(volume)[None, :]
    vec = volume_head(feats, params).data[0]
    return Embedding(vector=vec, modality="C", item_id=item_id)


def encode_radiograph(pixels: np.ndarray, patch_size: int, params: EncoderParams,
                      item_id: str = "") -> Embedding:
    patches = image_patches(pixels, patch_size)
    vec = student_head(patches, patches.shape[0], params).data[0]
    return Embedding(vector=vec, modality="X", item_id=item_id)
