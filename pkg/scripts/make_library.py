"""Regenerate the bundled synthetic spectral library (src/gaussunmix/data/*.csv).

Each material is a smooth baseline plus a few Gaussian absorption/reflection
bumps, sampled on its own slightly irregular wavelength grid so that
resampling to a common grid is actually exercised.
"""
from pathlib import Path

import numpy as np

from gaussunmix.synth import BUNDLED_LIBRARY, SpectralLibraryEntry, save_library_csv

OUT = Path(__file__).resolve().parents[1] / "src" / "gaussunmix" / "data"

# (baseline, slope per 1000 nm, [(center nm, width nm, amplitude), ...])
MATERIALS = {
    "material_a": (0.08, 0.01, [(600, 120, 0.05), (1000, 200, -0.03), (2200, 150, 0.02)]),
    "material_b": (0.35, 0.05, [(1400, 80, -0.15), (1900, 90, -0.2), (2200, 60, -0.12)]),
    "material_c": (0.30, 0.12, [(900, 150, -0.08), (2340, 70, -0.2), (550, 100, 0.05)]),
    "material_d": (0.05, 0.0, [(800, 250, 0.45), (1650, 300, 0.25), (1200, 40, -0.1)]),
}


def spectrum(wl, baseline, slope, bumps):
    r = baseline + slope * (wl - 400.0) / 1000.0
    for c, s, a in bumps:
        r = r + a * np.exp(-0.5 * ((wl - c) / s) ** 2)
    return np.clip(r, 0.0, 1.0)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(20220101)
    for name in BUNDLED_LIBRARY:
        step = rng.uniform(8.0, 12.0)
        wl = np.arange(350.0, 2560.0, step) + rng.uniform(-1.5, 1.5)
        entry = SpectralLibraryEntry(np.round(wl, 3), np.round(spectrum(wl, *MATERIALS[name]), 6), name)
        save_library_csv(entry, OUT / f"{name}.csv")
        print(f"wrote {name}: {wl.size} samples")


if __name__ == "__main__":
    main()
