"""Hyperspectral cube data model, matrix view, Moore neighborhoods and file I/O.

Cubes are stored as ``(height, width, bands)`` arrays indexed ``(row, col, band)``.
The matrix view is ``B x N`` with pixels in row-major order, so pixel ``(m, n)``
(0-based) lands in column ``j = width * m + n``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ASC_TOL = 1e-6

# Row/col offsets of the eight Moore neighbors, frozen scan order NW, N, NE, W, E, SW, S, SE.
# The approximation network's input weights depend on this order.
MOORE_OFFSETS: tuple[tuple[int, int], ...] = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 1),
    (1, -1), (1, 0), (1, 1),
)
NEIGHBORHOOD_SIZE = len(MOORE_OFFSETS)


class DataError(ValueError):
    """Malformed or invariant-violating input data."""


@dataclass(frozen=True)
class HsiCube:
    """Non-negative reflectance cube of shape ``(height, width, bands)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise DataError(f"cube must be 3-D (height, width, bands), got shape {data.shape}")
        if min(data.shape) < 1:
            raise DataError(f"cube has an empty dimension: {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("cube contains non-finite values")
        if np.any(data < 0):
            raise DataError("cube contains negative reflectance values")
        data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def n_pixels(self) -> int:
        return self.height * self.width


def pixel_index(m: int, n: int, width: int) -> int:
    """Matrix column of the pixel at 0-based row ``m``, column ``n``."""
    return width * m + n


def cube_to_matrix(cube: HsiCube) -> np.ndarray:
    return cube.data.reshape(cube.n_pixels, cube.bands).T.copy()


def matrix_to_cube(Y: np.ndarray, width: int, height: int) -> HsiCube:
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise DataError(f"expected a B x N matrix, got shape {Y.shape}")
    if Y.shape[1] != width * height:
        raise DataError(
            f"matrix has {Y.shape[1]} pixels but width*height = {width}*{height} = {width * height}"
        )
    return HsiCube(Y.T.reshape(height, width, Y.shape[0]))


def extract_neighborhood(cube: HsiCube, m: int, n: int) -> np.ndarray:
    """Stacked spectra of the 8 Moore neighbors of pixel ``(m, n)``.

    Neighbors falling outside the image are replaced by the nearest edge pixel
    (clamp-to-edge). Returns a vector of length ``8 * bands``.
    """
    if not (0 <= m < cube.height and 0 <= n < cube.width):
        raise IndexError(f"pixel ({m}, {n}) outside {cube.height}x{cube.width} image")
    parts = []
    for dm, dn in MOORE_OFFSETS:
        mm = min(max(m + dm, 0), cube.height - 1)
        nn = min(max(n + dn, 0), cube.width - 1)
        parts.append(cube.data[mm, nn])
    return np.concatenate(parts)


def build_neighborhood_matrix(cube: HsiCube) -> np.ndarray:
    """``(8 * B) x N`` matrix whose column j is the neighborhood of pixel j."""
    h, w, B = cube.data.shape
    padded = np.pad(cube.data, ((1, 1), (1, 1), (0, 0)), mode="edge")
    blocks = [
        padded[1 + dm:1 + dm + h, 1 + dn:1 + dn + w, :].reshape(h * w, B)
        for dm, dn in MOORE_OFFSETS
    ]
    return np.concatenate(blocks, axis=1).T.copy()


def check_abundances(S: np.ndarray, tol: float = ASC_TOL) -> np.ndarray:
    """Validate ANC and ASC column-wise; returns ``S`` as float64."""
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2:
        raise DataError(f"abundance matrix must be 2-D, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise DataError("abundance matrix contains non-finite values")
    if np.any(S < 0):
        raise DataError("abundance matrix violates non-negativity")
    dev = np.abs(S.sum(axis=0) - 1.0)
    if dev.size and dev.max() > tol:
        j = int(dev.argmax())
        raise DataError(f"abundance column {j} sums to {S[:, j].sum():.9g}, not 1")
    return S


def check_endmembers(A: np.ndarray) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DataError(f"endmember matrix must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)) or np.any(A < 0):
        raise DataError("endmember matrix must be finite and non-negative")
    return A


# ---------------------------------------------------------------- file formats

def save_cube(cube: HsiCube, path) -> None:
    header = {"width": cube.width, "height": cube.height, "bands": cube.bands, "dtype": "f32"}
    payload = cube.data.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)


def load_cube(path) -> HsiCube:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
        w, h, B = int(header["width"]), int(header["height"]), int(header["bands"])
        dtype = header["dtype"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed header: {exc}") from exc
    if dtype != "f32":
        raise DataError(f"{path}: unsupported dtype {dtype!r}")
    if min(w, h, B) < 1:
        raise DataError(f"{path}: non-positive dimension in header {header}")
    payload = raw[nl + 1:]
    expected = w * h * B * 4
    if len(payload) != expected:
        raise DataError(
            f"{path}: payload is {len(payload)} bytes, header {w}x{h}x{B} implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(h, w, B)
    if np.any(data < 0):
        raise DataError(f"{path}: negative reflectance in payload")
    return HsiCube(data.astype(np.float32))


def save_matrix_csv(M: np.ndarray, path, prefix: str) -> None:
    """One column per pixel (or source); header names columns ``{prefix}{i}``."""
    M = np.asarray(M, dtype=np.float64)
    header = ",".join(f"{prefix}{i}" for i in range(M.shape[1]))
    np.savetxt(path, M, delimiter=",", header=header, comments="", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    try:
        M = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    if not np.all(np.isfinite(M)):
        raise DataError(f"{path}: non-finite entries")
    if np.any(M < 0):
        raise DataError(f"{path}: negative entries")
    return M


def save_abundances(S: np.ndarray, path) -> None:
    save_matrix_csv(check_abundances(S), path, "p")


def load_abundances(path) -> np.ndarray:
    return check_abundances(load_matrix_csv(path))


def save_endmembers(A: np.ndarray, path) -> None:
    save_matrix_csv(check_endmembers(A), path, "e")


def load_endmembers(path) -> np.ndarray:
    return check_endmembers(load_matrix_csv(path))
