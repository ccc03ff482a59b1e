"""Synthetic 4-class point clouds and the .xyz / labels.csv directory format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

CLASSES = ("sphere", "cube", "torus", "cylinder")
SPLITS = {"train": 0, "test": 1}

TORUS_R, TORUS_r = 1.0, 0.4
TORUS_SCALE = 1.0 / (2 * (TORUS_R + TORUS_r))


class DataError(ValueError):
    pass


@dataclass
class SyntheticDataset:
    clouds: np.ndarray  # (n, n_points, 3)
    labels: np.ndarray  # (n,)
    split: str = "train"
    classes: tuple[str, ...] = CLASSES

    def __len__(self) -> int:
        return len(self.labels)


def _unit_vectors(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_sphere(rng, n):
    return 0.5 * _unit_vectors(rng, n)


def sample_cube(rng, n):
    face = rng.integers(0, 6, n)
    pts = rng.uniform(-0.5, 0.5, (n, 3))
    axis, sign = face // 2, np.where(face % 2 == 0, -0.5, 0.5)
    pts[np.arange(n), axis] = sign
    return pts


def sample_torus(rng, n):
    # area element is proportional to R + r cos(phi); rejection-sample phi
    phi = np.empty(0)
    while phi.size < n:
        cand = rng.uniform(0, 2 * math.pi, 2 * n)
        keep = rng.uniform(0, TORUS_R + TORUS_r, 2 * n) < TORUS_R + TORUS_r * np.cos(cand)
        phi = np.concatenate([phi, cand[keep]])
    phi = phi[:n]
    theta = rng.uniform(0, 2 * math.pi, n)
    ring = TORUS_R + TORUS_r * np.cos(phi)
    pts = np.stack([ring * np.cos(theta), ring * np.sin(theta), TORUS_r * np.sin(phi)], axis=1)
    return pts * TORUS_SCALE


def sample_cylinder(rng, n):
    # radius 0.5, height 1: side area pi, caps pi/2 together
    theta = rng.uniform(0, 2 * math.pi, n)
    on_side = rng.uniform(size=n) < 2.0 / 3.0
    rad = np.where(on_side, 0.5, 0.5 * np.sqrt(rng.uniform(size=n)))
    z = np.where(on_side, rng.uniform(-0.5, 0.5, n), np.where(rng.uniform(size=n) < 0.5, -0.5, 0.5))
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)


SAMPLERS = {"sphere": sample_sphere, "cube": sample_cube, "torus": sample_torus, "cylinder": sample_cylinder}


def half_extents(shape: str, rot: np.ndarray) -> np.ndarray:
    """Exact per-axis half-widths of the rotated canonical surface (support function at +e_i)."""
    if shape == "sphere":
        return np.full(3, 0.5)
    if shape == "cube":
        return 0.5 * np.abs(rot).sum(axis=1)
    axial = np.abs(rot[:, 2])  # |e_i . rotated z axis|
    radial = np.sqrt(np.clip(1.0 - axial**2, 0.0, None))
    if shape == "torus":
        return TORUS_SCALE * (TORUS_R * radial + TORUS_r)
    return 0.5 * axial + 0.5 * radial  # cylinder


def occlude(pts: np.ndarray, keep: float, rng: np.random.Generator) -> np.ndarray:
    """Drop the far (1 - keep) share along a random view direction, then resample back to n points."""
    n = len(pts)
    view = _unit_vectors(rng, 1)[0]
    depth = pts @ view
    visible = np.flatnonzero(depth <= np.quantile(depth, keep))
    return pts[rng.choice(visible, n)]


def sample_cloud(
    label: int,
    n_points: int,
    noise: float,
    rng: np.random.Generator,
    rotate: bool = True,
    keep: float = 1.0,
) -> np.ndarray:
    """One cloud inside the unit bounding box centred at the origin, plus jitter.

    The whole shape is rotated and rescaled so its exact bounding box has unit
    longest side; occlusion happens afterwards, so partial views stay inside that box.
    """
    name = CLASSES[label]
    pts = SAMPLERS[name](rng, n_points)
    if rotate:
        rot = Rotation.random(random_state=rng).as_matrix()
        pts = pts @ rot.T
        pts = pts / (2.0 * half_extents(name, rot).max())
    if keep < 1.0:
        pts = occlude(pts, keep, rng)
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, pts.shape)
    return pts


def generate_dataset(
    n: int,
    seed: int = 0,
    split: str = "train",
    n_points: int = 512,
    noise: float = 0.02,
    rotate: bool = True,
    keep: float = 1.0,
) -> SyntheticDataset:
    if noise < 0:
        raise ValueError("noise must be >= 0")
    if not 0.0 < keep <= 1.0:
        raise ValueError("keep must be in (0, 1]")
    labels = np.arange(n) % len(CLASSES)
    clouds = np.empty((n, n_points, 3))
    for i in range(n):
        rng = np.random.default_rng([seed, SPLITS[split], i])
        clouds[i] = sample_cloud(int(labels[i]), n_points, noise, rng, rotate, keep)
    return SyntheticDataset(clouds, labels, split)


# ---------------------------------------------------------------------------
# on-disk format


def read_xyz(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 coordinates, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as err:
                raise DataError(f"{path}:{lineno}: {err}") from None
    if not rows:
        raise DataError(f"{path}: no points")
    return np.array(rows)


def write_xyz(path, points: np.ndarray) -> None:
    np.savetxt(path, points, fmt="%.17g")


def save_dataset(ds: SyntheticDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filename", "label"])
        for i, (cloud, label) in enumerate(zip(ds.clouds, ds.labels)):
            name = f"{ds.split}_{i:05d}.xyz"
            write_xyz(out / name, cloud)
            w.writerow([name, int(label)])


def load_dataset(data_dir, split: str = "test") -> SyntheticDataset:
    root = Path(data_dir)
    index = root / "labels.csv"
    if not index.exists():
        raise DataError(f"{index} not found")
    clouds, labels = [], []
    with open(index, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                labels.append(int(row["label"]))
                clouds.append(read_xyz(root / row["filename"]))
            except (KeyError, TypeError, ValueError, OSError) as err:
                raise DataError(f"bad labels.csv row {row}: {err}") from None
    if not clouds:
        raise DataError(f"{index} lists no clouds")
    sizes = {len(c) for c in clouds}
    if len(sizes) != 1:
        raise DataError(f"clouds have differing point counts {sorted(sizes)}")
    return SyntheticDataset(np.stack(clouds), np.array(labels), split)
