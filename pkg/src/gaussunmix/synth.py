"""Simulated scenes: tiled abundance maps with pure regions, resampled spectra, linear mixing."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .hsi import DataError

OCCUPANCY_TARGET = 0.95
DRAWS_PER_PIXEL = 50
DILATION_PROB = 0.5

BUNDLED_LIBRARY = ("material_a", "material_b", "material_c", "material_d")


@dataclass
class SynthConfig:
    width: int = 100
    height: int = 100
    sources: int = 4
    tile: int = 25
    superpixel: int = 3
    pure_tile_fraction: float = 0.25
    smoothing_passes: int = 2
    noise_snr_db: float | None = None
    seed: int = 0
    bands: int = 198
    wl_min: float = 400.0
    wl_max: float = 2500.0

    def validate(self) -> None:
        if self.tile < 1 or self.width < 1 or self.height < 1:
            raise ValueError("width, height and tile must be positive")
        if self.width % self.tile or self.height % self.tile:
            raise ValueError(f"width/height ({self.width}x{self.height}) not divisible by tile {self.tile}")
        if self.superpixel < 1 or self.superpixel % 2 == 0:
            raise ValueError(f"superpixel must be odd, got {self.superpixel}")
        if self.sources < 2:
            raise ValueError(f"need at least 2 sources, got {self.sources}")
        if not 0.0 <= self.pure_tile_fraction <= 1.0:
            raise ValueError("pure_tile_fraction must lie in [0, 1]")
        if self.smoothing_passes < 0:
            raise ValueError("smoothing_passes must be >= 0")
        if self.bands < 1 or not self.wl_min < self.wl_max:
            raise ValueError("need bands >= 1 and wl_min < wl_max")


@dataclass(frozen=True)
class SpectralLibraryEntry:
    wavelengths: np.ndarray
    reflectance: np.ndarray
    name: str = ""

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=np.float64)
        r = np.asarray(self.reflectance, dtype=np.float64)
        if wl.ndim != 1 or wl.shape != r.shape:
            raise DataError(f"{self.name}: wavelength and reflectance arrays must be equal-length 1-D")
        if np.any(np.diff(wl) <= 0):
            raise DataError(f"{self.name}: wavelengths must be strictly increasing")
        if np.any(r < 0) or np.any(r > 1):
            raise DataError(f"{self.name}: reflectance must lie in [0, 1]")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "reflectance", r)


# ---------------------------------------------------------------- abundances

def mean_filter(field: np.ndarray) -> np.ndarray:
    """3x3 box mean over the two leading axes, edges replicated."""
    h, w = field.shape[:2]
    pad = np.pad(field, ((1, 1), (1, 1)) + ((0, 0),) * (field.ndim - 2), mode="edge")
    acc = np.zeros_like(field, dtype=np.float64)
    for dm in range(3):
        for dn in range(3):
            acc += pad[dm:dm + h, dn:dn + w]
    return acc / 9.0


def _irregular_extend(field: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One round of random dilation: each pixel copies a random 4-neighbor with prob 0.5."""
    h, w, _ = field.shape
    pad = np.pad(field, ((1, 1), (1, 1), (0, 0)), mode="edge")
    offsets = np.array([(-1, 0), (1, 0), (0, -1), (0, 1)])
    choice = rng.integers(4, size=(h, w))
    take = rng.random((h, w)) < DILATION_PROB
    rows = np.arange(h)[:, None] + 1 + offsets[choice, 0]
    cols = np.arange(w)[None, :] + 1 + offsets[choice, 1]
    neighbor = pad[rows, cols]
    return np.where(take[..., None], neighbor, field)


def generate_abundance_cube(cfg: SynthConfig) -> np.ndarray:
    """Abundance field of shape ``(height, width, sources)`` satisfying ANC and ASC."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    h, w, K, T = cfg.height, cfg.width, cfg.sources, cfg.tile
    tiles = [(r, c) for r in range(0, h, T) for c in range(0, w, T)]
    if not tiles:
        raise ValueError("configuration yields zero tiles")
    field = np.zeros((h, w, K))
    occupied = np.zeros((h, w), dtype=bool)

    n_pure = int(round(cfg.pure_tile_fraction * len(tiles)))
    pure_idx = set(rng.permutation(len(tiles))[:n_pure].tolist())
    for i in sorted(pure_idx):
        r, c = tiles[i]
        field[r:r + T, c:c + T] = 0.0
        field[r:r + T, c:c + T, rng.integers(K)] = 1.0
        occupied[r:r + T, c:c + T] = True

    mixed = [tiles[i] for i in range(len(tiles)) if i not in pure_idx]
    if mixed:
        half = cfg.superpixel // 2
        n_mixed = len(mixed) * T * T
        target = OCCUPANCY_TARGET * n_mixed
        n_filled = 0
        for _ in range(DRAWS_PER_PIXEL * h * w):
            if n_filled >= target:
                break
            r0, c0 = mixed[rng.integers(len(mixed))]
            m = r0 + rng.integers(T)
            n = c0 + rng.integers(T)
            if occupied[m, n]:
                continue
            # superpixel clipped to its tile
            rs = slice(max(m - half, r0), min(m + half + 1, r0 + T))
            cs = slice(max(n - half, c0), min(n + half + 1, c0 + T))
            free = ~occupied[rs, cs]
            field[rs, cs][free] = rng.dirichlet(np.ones(K))
            n_filled += int(free.sum())
            occupied[rs, cs] = True
        holes = np.argwhere(~occupied)
        for m, n in holes:
            field[m, n] = rng.dirichlet(np.ones(K))

    for _ in range(cfg.smoothing_passes):
        field = _irregular_extend(field, rng)
    for _ in range(cfg.smoothing_passes):
        field = mean_filter(field)
    field = np.maximum(field, 0.0)
    return field / field.sum(axis=2, keepdims=True)


def generate_abundances(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(S, cube_view)``: the K x N matrix and its ``(h, w, K)`` field."""
    field = generate_abundance_cube(cfg)
    S = field.reshape(-1, cfg.sources).T.copy()
    return S, field


# ---------------------------------------------------------------- spectra

def resample_spectrum(entry: SpectralLibraryEntry, target_wavelengths) -> np.ndarray:
    """Natural cubic spline through the library samples, evaluated at the targets, floored at 0."""
    target = np.asarray(target_wavelengths, dtype=np.float64)
    if entry.wavelengths.size < 4:
        raise ValueError(f"{entry.name}: need at least 4 samples for cubic interpolation")
    lo, hi = entry.wavelengths[0], entry.wavelengths[-1]
    if target.size and (target.min() < lo or target.max() > hi):
        raise ValueError(
            f"{entry.name}: targets [{target.min()}, {target.max()}] outside library range [{lo}, {hi}]"
        )
    spline = CubicSpline(entry.wavelengths, entry.reflectance, bc_type="natural", extrapolate=False)
    return np.maximum(spline(target), 0.0)


def load_library_csv(path, name: str | None = None) -> SpectralLibraryEntry:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"spectral library file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"wavelength_nm", "reflectance"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns wavelength_nm, reflectance")
        rows = [(float(r["wavelength_nm"]), float(r["reflectance"])) for r in reader]
    wl, refl = zip(*rows) if rows else ((), ())
    return SpectralLibraryEntry(np.array(wl), np.array(refl), name or path.stem)


def save_library_csv(entry: SpectralLibraryEntry, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["wavelength_nm", "reflectance"])
        for wl, r in zip(entry.wavelengths, entry.reflectance):
            writer.writerow([repr(float(wl)), repr(float(r))])


def bundled_library() -> list[SpectralLibraryEntry]:
    """The four synthetic material spectra shipped with the package."""
    base = resources.files("gaussunmix") / "data"
    entries = []
    for name in BUNDLED_LIBRARY:
        with resources.as_file(base / f"{name}.csv") as p:
            entries.append(load_library_csv(p, name))
    return entries


def endmember_matrix(entries: list[SpectralLibraryEntry], target_wavelengths) -> np.ndarray:
    return np.stack([resample_spectrum(e, target_wavelengths) for e in entries], axis=1)


# ---------------------------------------------------------------- mixing

def mix_lmm(A: np.ndarray, S: np.ndarray, noise_snr_db: float | None = None,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """``Y = A S + E`` with Gaussian E at the requested image SNR, clamped to >= 0."""
    A = np.asarray(A, dtype=np.float64)
    S = np.asarray(S, dtype=np.float64)
    if A.ndim != 2 or S.ndim != 2 or A.shape[1] != S.shape[0]:
        raise ValueError(f"cannot mix A {A.shape} with S {S.shape}")
    Y = A @ S
    if noise_snr_db is not None:
        rng = rng if rng is not None else np.random.default_rng(0)
        signal_power = float(np.mean(Y ** 2))
        sigma = np.sqrt(signal_power / 10.0 ** (noise_snr_db / 10.0))
        Y = Y + rng.normal(0.0, sigma, size=Y.shape)
    return np.maximum(Y, 0.0)


@dataclass
class SyntheticScene:
    Y: np.ndarray           # B x N
    S: np.ndarray           # K x N
    A: np.ndarray           # B x K
    wavelengths: np.ndarray
    width: int
    height: int


def make_scene(cfg: SynthConfig, library: list[SpectralLibraryEntry] | None = None) -> SyntheticScene:
    library = bundled_library() if library is None else library
    if len(library) < cfg.sources:
        raise ValueError(f"library has {len(library)} spectra, need {cfg.sources}")
    wl = np.linspace(cfg.wl_min, cfg.wl_max, cfg.bands)
    A = endmember_matrix(library[:cfg.sources], wl)
    S, _ = generate_abundances(cfg)
    noise_rng = np.random.default_rng([cfg.seed, 1])
    Y = mix_lmm(A, S, cfg.noise_snr_db, noise_rng)
    return SyntheticScene(Y, S, A, wl, cfg.width, cfg.height)
