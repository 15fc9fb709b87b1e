"""Procedural labeled chest phantoms with paired template reports.

Each volume is a body ellipsoid of soft tissue in air, two lung ellipsoids,
and a spine cylinder, plus one geometric insert per positive label. The
label-to-insert geometry table below is fixed (positions and densities are
part of the data contract, not randomized per run); instance-level variety
comes from seeded jitter of the anatomy and a few low-contrast texture blobs,
so every generated volume is unique even when label vectors coincide.

Insert densities each occupy their own bin of the 16-bin HU histogram used by
the volume encoder, and insert footprints in the projection plane were chosen
with distinct positions modulo the radiograph patch grid.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import accel, io, kernels
from .errors import ConfigError, DataError
from .rng import SplitMix64, derive_seed

HU_AIR = -1000.0
HU_SOFT_TISSUE = 40.0
HU_LUNG = -800.0
HU_SPINE = 700.0

POSITIVE_TEMPLATE = "{name} is present."
NEGATIVE_TEMPLATE = "No {name}."

DEFAULT_LABEL_NAMES = (
    "cardiomegaly",
    "pleural_effusion",
    "lung_nodule",
    "consolidation",
    "atelectasis",
    "pneumothorax",
    "pericardial_effusion",
    "aortic_calcification",
)
DEFAULT_PREVALENCE = 0.3


@dataclass(frozen=True)
class LabelSpace:
    names: tuple[str, ...]
    prevalence: tuple[float, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ConfigError("label names must be unique")
        if len(self.prevalence) != len(self.names):
            raise ConfigError("one prevalence per label required")
        for p in self.prevalence:
            if not 0.0 < p < 1.0:
                raise ConfigError(f"prevalence must lie in (0,1), got {p}")

    def __len__(self) -> int:
        return len(self.names)

    @classmethod
    def default(cls) -> "LabelSpace":
        return cls(DEFAULT_LABEL_NAMES, (DEFAULT_PREVALENCE,) * len(DEFAULT_LABEL_NAMES))


@dataclass
class Volume:
    dims: tuple[int, int, int]          # (nx, ny, nz)
    spacing_mm: tuple[float, float, float]
    voxels: np.ndarray                  # float64, indexed [z, y, x]


@dataclass
class Triplet:
    id: str
    volume: str        # file path, relative to the manifest directory
    report: str
    labels: list[int]
    split: str         # train | test


@dataclass(frozen=True)
class Insert:
    """One label's geometry, in fractions of the volume dimensions.

    kind: ellipsoid (center+radii), box (center+half sizes), or cylinder_y
    (axis along y: footprint center/radius plus y center/half-length).
    """
    kind: str
    cx: float
    cy: float
    cz: float
    sx: float   # radius or half-size along x
    sy: float   # half-extent along y
    sz: float   # radius or half-size along z
    hu: float


# Geometry table, keyed by label name. HU values 850..2600 step 250 land in
# histogram bins 7..14 (16 bins over [-1024, 3000]); spine sits in bin 6,
# tissue in bin 4, lungs and air in bin 0.
INSERT_TABLE: dict[str, Insert] = {
    "cardiomegaly":          Insert("ellipsoid",  0.546875, 0.53125, 0.59375, 0.125,    0.109375, 0.09375,  850.0),
    "pleural_effusion":      Insert("box",        0.375,    0.5,     0.78125, 0.09375,  0.1875,   0.015625, 1100.0),
    "lung_nodule":           Insert("cylinder_y", 0.65625,  0.5,     0.28125, 0.0359375, 0.1875,  0.0359375, 1350.0),
    "consolidation":         Insert("box",        0.65625,  0.5,     0.6875,  0.03125,  0.125,    0.03125,  1600.0),
    "atelectasis":           Insert("cylinder_y", 0.34375,  0.5,     0.65625, 0.0359375, 0.1875,  0.0359375, 1850.0),
    "pneumothorax":          Insert("box",        0.8125,   0.5,     0.28125, 0.015625, 0.0625,   0.125,    2100.0),
    "pericardial_effusion":  Insert("cylinder_y", 0.53125,  0.5,     0.59375, 0.0359375, 0.1875,  0.0359375, 2350.0),
    "aortic_calcification":  Insert("cylinder_y", 0.46875,  0.5,     0.21875, 0.03125,  0.1875,   0.03125,  2600.0),
}


@dataclass(frozen=True)
class GenConfig:
    n_train: int = 512
    n_test: int = 128
    label_space: LabelSpace = None
    dims: tuple[int, int, int] = (64, 64, 64)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 42
    jitter: bool = True
    texture_blobs: int = 3

    def __post_init__(self):
        if self.label_space is None:
            object.__setattr__(self, "label_space", LabelSpace.default())
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must each be >= 1")
        if any(d < 8 for d in self.dims):
            raise ConfigError(f"volume dims must each be >= 8, got {self.dims}")
        if any(s <= 0 for s in self.spacing_mm):
            raise ConfigError(f"voxel spacing must be positive, got {self.spacing_mm}")
        if self.texture_blobs < 0:
            raise ConfigError("texture_blobs must be >= 0")


def _insert_params(insert: Insert, dims, rng=None) -> dict:
    nx, ny, nz = dims
    return {
        "cx": insert.cx * nx, "cy": insert.cy * ny, "cz": insert.cz * nz,
        "sx": insert.sx * nx, "sy": insert.sy * ny, "sz": insert.sz * nz,
    }


def _paint_insert(vox, insert: Insert, dims) -> None:
    p = _insert_params(insert, dims)
    if insert.kind == "ellipsoid":
        kernels.fill_ellipsoid(vox, p["cx"], p["cy"], p["cz"], p["sx"], p["sy"], p["sz"], insert.hu)
    elif insert.kind == "box":
        kernels.fill_box(vox, p["cx"] - p["sx"], p["cx"] + p["sx"],
                         p["cy"] - p["sy"], p["cy"] + p["sy"],
                         p["cz"] - p["sz"], p["cz"] + p["sz"], insert.hu)
    elif insert.kind == "cylinder_y":
        kernels.fill_cylinder_y(vox, p["cx"], p["cz"], p["sx"],
                                p["cy"] - p["sy"], p["cy"] + p["sy"], insert.hu)
    else:
        raise ValueError(f"unknown insert kind {insert.kind!r}")


def synthesize_volume(labels, label_space: LabelSpace, dims, spacing_mm, rng: SplitMix64,
                      jitter: bool = True, texture_blobs: int = 3) -> Volume:
    """Rasterize one phantom. The rng drives jitter and texture only; the
    label-insert geometry is fixed by INSERT_TABLE."""
    labels = list(labels)
    if len(labels) != len(label_space):
        raise ValueError(f"{len(labels)} labels for a {len(label_space)}-label space")
    nx, ny, nz = dims
    vox = np.full((nz, ny, nx), HU_AIR, dtype=np.float64)

    def jit(lo, hi):
        return rng.uniform(lo, hi) if jitter else 1.0

    # body
    kernels.fill_ellipsoid(vox, 0.5 * nx, 0.5 * ny, 0.5 * nz,
                           0.42 * nx * jit(0.93, 1.05),
                           0.36 * ny * jit(0.93, 1.05),
                           0.47 * nz * jit(0.93, 1.05), HU_SOFT_TISSUE)
    # lungs
    for cx_frac in (0.32, 0.68):
        dxj = rng.uniform(-1.0, 1.0) if jitter else 0.0
        dzj = rng.uniform(-1.0, 1.0) if jitter else 0.0
        kernels.fill_ellipsoid(vox, cx_frac * nx + dxj, 0.48 * ny, 0.52 * nz + dzj,
                               0.15 * nx * jit(0.9, 1.06),
                               0.22 * ny * jit(0.9, 1.06),
                               0.30 * nz * jit(0.9, 1.06), HU_LUNG)
    # spine
    kernels.fill_cylinder_z(vox, 0.5 * nx, 0.74 * ny, 0.055 * nx * jit(0.9, 1.1),
                            0.08 * nz, 0.92 * nz, HU_SPINE)
    # low-contrast texture blobs, painted before inserts so inserts stay visible
    for _ in range(texture_blobs):
        bx = rng.uniform(0.25, 0.75) * nx
        by = rng.uniform(0.25, 0.75) * ny
        bz = rng.uniform(0.25, 0.75) * nz
        brx = rng.uniform(0.03, 0.08) * nx
        bry = rng.uniform(0.03, 0.08) * ny
        brz = rng.uniform(0.03, 0.08) * nz
        bhu = rng.uniform(-80.0, 160.0)
        kernels.fill_ellipsoid(vox, bx, by, bz, brx, bry, brz, bhu)
    # label inserts
    for name, flag in zip(label_space.names, labels):
        if flag:
            _paint_insert(vox, INSERT_TABLE[name], dims)
    return Volume(dims=tuple(dims), spacing_mm=tuple(spacing_mm), voxels=vox)


def render_report(labels, label_space: LabelSpace, rng: SplitMix64) -> str:
    """One sentence per positive label plus negations for a seeded random
    half of the negatives, in seeded-shuffled order."""
    labels = list(labels)
    if len(labels) != len(label_space):
        raise ValueError(f"{len(labels)} labels for a {len(label_space)}-label space")
    sentences = [POSITIVE_TEMPLATE.format(name=name)
                 for name, flag in zip(label_space.names, labels) if flag]
    negatives = [name for name, flag in zip(label_space.names, labels) if not flag]
    picked = rng.sample_indices(len(negatives), len(negatives) // 2)
    sentences.extend(NEGATIVE_TEMPLATE.format(name=negatives[i]) for i in picked)
    rng.shuffle(sentences)
    return " ".join(sentences)


def _make_triplet(cfg: GenConfig, index: int, out_dir: str) -> Triplet:
    rng = SplitMix64(derive_seed(cfg.seed, "triplet", index))
    labels = [1 if rng.bernoulli(p) else 0 for p in cfg.label_space.prevalence]
    volume = synthesize_volume(labels, cfg.label_space, cfg.dims, cfg.spacing_mm,
                               rng, cfg.jitter, cfg.texture_blobs)
    report = render_report(labels, cfg.label_space, rng)
    tid = f"t{index:05d}"
    rel_path = os.path.join("volumes", f"{tid}.x2vol")
    io.write_volume(os.path.join(out_dir, rel_path), volume)
    split = "train" if index < cfg.n_train else "test"
    return Triplet(id=tid, volume=rel_path, report=report, labels=labels, split=split)


def generate_dataset(cfg: GenConfig, out_dir: str) -> list[Triplet]:
    """Write volume files plus the JSONL manifest; returns triplets sorted by id.

    Deterministic under (seed, config) regardless of worker thread count:
    each triplet owns a derived rng stream and its own output file.
    """
    try:
        os.makedirs(os.path.join(out_dir, "volumes"), exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out_dir}: {exc}") from exc
    if not os.access(out_dir, os.W_OK):
        raise DataError(f"output directory {out_dir} is not writable")

    total = cfg.n_train + cfg.n_test
    workers = min(accel.thread_count(), total)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            triplets = list(pool.map(lambda i: _make_triplet(cfg, i, out_dir), range(total)))
    else:
        triplets = [_make_triplet(cfg, i, out_dir) for i in range(total)]

    triplets.sort(key=lambda t: t.id)
    io.write_manifest(os.path.join(out_dir, "manifest.jsonl"), triplets)
    return triplets
