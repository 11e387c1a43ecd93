"""Synthetic ellipse phantoms and paired sparse/full-view training samples.

Phantoms are additive ellipse stacks rasterized with supersampling (soft
edges keep line integrals close to their analytic values) and clipped to
[0, 1].  All support lies inside the inscribed field-of-view circle so
the fan geometry measures everything that is there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import io
from .geometry import (
    FanBeamGeometry,
    FanBeamProjector,
    Sinogram,
    interpolate_sinogram,
    sparse_sample,
)
from .validation import check_image

# largest |center| + axis so every ellipse stays inside the FOV circle
_MAX_EXTENT = 0.92


@dataclass(frozen=True)
class Ellipse:
    center_x: float
    center_y: float
    axis_a: float
    axis_b: float
    rotation: float
    attenuation: float


@dataclass
class EllipsePhantom:
    """Additive ellipse stack on the [-1, 1]^2 unit square."""

    ellipses: list

    def rasterize(self, image_size: int, supersample: int = 2) -> np.ndarray:
        """Render to ``image_size`` pixels; attenuations add where ellipses overlap."""
        n = image_size * supersample
        half = (n - 1) / 2.0
        coords = (np.arange(n) - half) / (n / 2.0)
        x, y = np.meshgrid(coords, coords)
        img = np.zeros((n, n), dtype=np.float64)
        for e in self.ellipses:
            ct, st = math.cos(e.rotation), math.sin(e.rotation)
            xr = (x - e.center_x) * ct + (y - e.center_y) * st
            yr = -(x - e.center_x) * st + (y - e.center_y) * ct
            img += e.attenuation * ((xr / e.axis_a) ** 2 + (yr / e.axis_b) ** 2 <= 1.0)
        img = img.reshape(image_size, supersample, image_size, supersample).mean(axis=(1, 3))
        return img.astype(np.float32)


def random_phantom(rng: np.random.Generator, n_ellipses_range=(4, 9)) -> EllipsePhantom:
    """Draw a body outline plus smaller internal ellipses."""
    lo, hi = n_ellipses_range
    if lo < 1:
        raise ValueError("n_ellipses_range minimum must be >= 1")
    if hi < lo:
        raise ValueError("n_ellipses_range must be (min, max) with max >= min")
    n_total = int(rng.integers(lo, hi + 1))

    # body: covers well over 10% of the image area and stays inside the FOV
    body_a = rng.uniform(0.5, 0.72)
    body_b = rng.uniform(0.5, 0.72)
    max_c = max(0.0, _MAX_EXTENT - max(body_a, body_b))
    ellipses = [
        Ellipse(
            center_x=rng.uniform(-max_c, max_c),
            center_y=rng.uniform(-max_c, max_c),
            axis_a=body_a,
            axis_b=body_b,
            rotation=rng.uniform(0.0, math.pi),
            attenuation=rng.uniform(0.3, 0.5),
        )
    ]
    for _ in range(n_total - 1):
        a = rng.uniform(0.04, 0.3)
        b = rng.uniform(0.04, 0.3)
        reach = _MAX_EXTENT - max(a, b) - 0.25
        ellipses.append(
            Ellipse(
                center_x=rng.uniform(-reach, reach),
                center_y=rng.uniform(-reach, reach),
                axis_a=a,
                axis_b=b,
                rotation=rng.uniform(0.0, math.pi),
                attenuation=rng.uniform(-0.25, 0.45),
            )
        )
    return EllipsePhantom(ellipses)


def generate_phantom(seed: int, image_size: int, n_ellipses_range=(4, 9)) -> np.ndarray:
    """Deterministic random phantom in [0, 1], at least one body-sized ellipse."""
    if image_size < 16:
        raise ValueError("image_size must be >= 16")
    rng = np.random.default_rng(seed)
    phantom = random_phantom(rng, n_ellipses_range)
    return np.clip(phantom.rasterize(image_size), 0.0, 1.0)


@dataclass
class ImagePair:
    """One training sample: full/sparse FBP images, their difference, sinogram."""

    i_full: np.ndarray
    i_sparse: np.ndarray
    artifact: np.ndarray
    sinogram: Sinogram  # interpolated sparse sinogram, mask marks measured rows
    n_views: int

    def save(self, path) -> None:
        io.save_arrays(
            path,
            [self.i_full, self.i_sparse, self.artifact, self.sinogram.data, self.sinogram.mask],
        )

    @classmethod
    def load(cls, path, geom: FanBeamGeometry) -> "ImagePair":
        i_full, i_sparse, artifact, sino_data, sino_mask = io.load_arrays(path, count=5)
        sino = Sinogram(sino_data, geom.angles, sino_mask)
        n_views = int(round(sino_mask[:, 0].sum()))
        return cls(i_full, i_sparse, artifact, sino, n_views)


def make_pairs(phantom, geom: FanBeamGeometry, n_views_list) -> list[ImagePair]:
    """Build pairs for several sparsity levels from one forward projection.

    The full sinogram and the full-view FBP are computed once and shared,
    which matters when generating datasets for several view counts.
    """
    img = check_image(phantom, "phantom", square=True)
    if img.shape[0] != geom.image_size:
        raise ValueError(f"phantom size {img.shape[0]} does not match geometry {geom.image_size}")
    projector = FanBeamProjector(geom)
    angles_t = torch.as_tensor(geom.angles)
    sino_t = projector.project(torch.as_tensor(img, dtype=torch.float32), angles_t)
    full = Sinogram(sino_t.numpy(), geom.angles)
    filtered = projector.filter_rows(sino_t)
    i_full = projector.backproject(filtered, angles_t).numpy()

    pairs = []
    for n_views in n_views_list:
        sparse = sparse_sample(full, int(n_views))
        rows = sparse.measured_rows()
        i_sparse = projector.backproject(
            filtered[rows], torch.as_tensor(geom.angles[rows])
        ).numpy()
        pairs.append(
            ImagePair(
                i_full=i_full,
                i_sparse=i_sparse,
                artifact=i_sparse - i_full,
                sinogram=interpolate_sinogram(sparse),
                n_views=int(n_views),
            )
        )
    return pairs


def make_pair(phantom, geom: FanBeamGeometry, n_views: int) -> ImagePair:
    """Single-sparsity variant of :func:`make_pairs`."""
    return make_pairs(phantom, geom, [n_views])[0]


def hu_window(image, window, calibration=(0.2, 0.0)) -> np.ndarray:
    """Map attenuation to Hounsfield units, clip to a window, rescale to [0, 1]."""
    low, high = float(window[0]), float(window[1])
    if not low < high:
        raise ValueError(f"window must satisfy low < high, got ({low}, {high})")
    mu_water, mu_air = float(calibration[0]), float(calibration[1])
    if mu_water == mu_air:
        raise ValueError("calibration requires mu_water != mu_air")
    arr = np.asarray(image, dtype=np.float64)
    hu = 1000.0 * (arr - mu_water) / (mu_water - mu_air)
    return ((np.clip(hu, low, high) - low) / (high - low)).astype(np.float32)


# -- dataset persistence ------------------------------------------------------

MANIFEST_NAME = "manifest.txt"
GEOMETRY_NAME = "geometry.txt"
SAMPLES_DIR = "samples"


def write_dataset(out_dir, geom: FanBeamGeometry, seeds, n_views_list, n_ellipses_range=(4, 9)):
    """Generate and persist pairs for ``seeds`` x ``n_views_list``.

    Samples are numbered sample_0000, sample_0001, ... ordered first by
    view count (ascending) then by seed, and the manifest records the
    (seed, n_views) behind every file so a re-run is byte-identical.
    """
    out_dir = Path(out_dir)
    samples = out_dir / SAMPLES_DIR
    samples.mkdir(parents=True, exist_ok=True)
    seeds = [int(s) for s in seeds]
    n_views_list = sorted(int(v) for v in n_views_list)

    manifest = {
        "format": "freeseed_dataset/1",
        "image_size": geom.image_size,
        "n_views_full": geom.n_views_full,
        "n_views_list": ",".join(str(v) for v in n_views_list),
        "seeds": ",".join(str(s) for s in seeds),
        "n_ellipses_min": n_ellipses_range[0],
        "n_ellipses_max": n_ellipses_range[1],
        "n_samples": len(seeds) * len(n_views_list),
    }
    geom.save(out_dir / GEOMETRY_NAME)

    index = 0
    for n_views in n_views_list:
        for seed in seeds:
            manifest[f"sample_{index:04d}"] = f"seed:{seed} n_views:{n_views}"
            index += 1
    io.write_keyvalues(out_dir / MANIFEST_NAME, manifest)

    # one projection per seed serves every view count
    for seed_pos, seed in enumerate(seeds):
        phantom = generate_phantom(seed, geom.image_size, n_ellipses_range)
        for nv_pos, pair in enumerate(make_pairs(phantom, geom, n_views_list)):
            index = nv_pos * len(seeds) + seed_pos
            pair.save(samples / f"{index:04d}.fsct")
    return out_dir


class DiskPairDataset:
    """Lazy reader over a dataset directory written by :func:`write_dataset`."""

    def __init__(self, root, n_views: int | None = None):
        self.root = Path(root)
        manifest = io.read_keyvalues(self.root / MANIFEST_NAME)
        if manifest.get("format") != "freeseed_dataset/1":
            raise ValueError(f"{self.root}: not a dataset directory")
        self.geometry = FanBeamGeometry.load(self.root / GEOMETRY_NAME)
        self.manifest = manifest
        entries = []
        i = 0
        while f"sample_{i:04d}" in manifest:
            desc = dict(part.split(":") for part in manifest[f"sample_{i:04d}"].split())
            entries.append((i, int(desc["seed"]), int(desc["n_views"])))
            i += 1
        if n_views is not None:
            entries = [e for e in entries if e[2] == int(n_views)]
            if not entries:
                raise ValueError(f"dataset has no samples with n_views={n_views}")
        self.entries = entries

    @property
    def n_views_available(self):
        return sorted({e[2] for e in self.entries})

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, idx: int) -> ImagePair:
        file_idx, _, _ = self.entries[idx]
        return ImagePair.load(self.root / SAMPLES_DIR / f"{file_idx:04d}.fsct", self.geometry)
