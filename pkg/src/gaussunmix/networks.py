"""The approximation (AN), unmixing (UN) and mixing (MN) networks.

Layer sizes, with ``S = 8`` Moore neighbors::

    AN: 8B -> floor(8B/2) -> floor(8B/8) -> B      biased, ReLU hidden, linear out
    UN: B  -> floor(B/2)  -> floor(B/8)  -> K      no bias, leaky ReLU hidden, softmax out
    MN: K  -> floor(B/4)  -> B                     no bias, ReLU hidden, max(z, 1e-7) out

The UN has no bias and sees non-negative spectra, so a plain ReLU unit is on or
off for nearly every pixel and whole bottleneck layers can die; the leaky slope
keeps them trainable. All weights start from Glorot-uniform draws; MN weights
take their absolute value so no output band starts at the floor.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hsi import NEIGHBORHOOD_SIZE, HsiCube, build_neighborhood_matrix
from .nn import EPS, DenseNetwork, glorot_layer, load_network, save_network


@dataclass
class GaussModel:
    an: DenseNetwork
    un: DenseNetwork
    mn: DenseNetwork
    bands: int
    sources: int
    neighbors: int = NEIGHBORHOOD_SIZE
    pretrained: bool = False

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.bands, self.sources, self.neighbors

    def copy(self) -> "GaussModel":
        return GaussModel(self.an.copy(), self.un.copy(), self.mn.copy(),
                          self.bands, self.sources, self.neighbors, self.pretrained)


def layer_dims(B: int, K: int, S: int = NEIGHBORHOOD_SIZE) -> dict[str, list[int]]:
    return {
        "an": [S * B, (S * B) // 2, (S * B) // 8, B],
        "un": [B, B // 2, B // 8, K],
        "mn": [K, B // 4, B],
    }


def _stack(rng, dims, bias, out_activation, nonneg=False, hidden="relu"):
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        act = out_activation if i == len(dims) - 2 else hidden
        layer = glorot_layer(rng, d_in, d_out, bias, act)
        if nonneg:
            # abundances are non-negative, so mixed-sign weights leave whole output
            # bands stuck at the 1e-7 floor with zero gradient
            layer.weights = np.abs(layer.weights)
        layers.append(layer)
    return DenseNetwork(layers)


def build_model(B: int, K: int, seed: int = 0) -> GaussModel:
    if B < 8:
        raise ValueError(f"need at least 8 bands (floor(B/8) must be >= 1), got B={B}")
    if K < 2:
        raise ValueError(f"need at least 2 sources, got K={K}")
    dims = layer_dims(B, K)
    ss = np.random.SeedSequence(seed)
    rng_an, rng_un, rng_mn = (np.random.default_rng(s) for s in ss.spawn(3))
    return GaussModel(
        an=_stack(rng_an, dims["an"], True, "linear"),
        un=_stack(rng_un, dims["un"], False, "softmax", hidden="leaky_relu"),
        mn=_stack(rng_mn, dims["mn"], False, "relu_eps", nonneg=True),
        bands=B,
        sources=K,
    )


def an_forward(model: GaussModel, Nmat: np.ndarray) -> np.ndarray:
    """Raw AN output; unconstrained in sign."""
    return model.an(Nmat)


def smooth_pixels(model: GaussModel, Nmat: np.ndarray) -> np.ndarray:
    """AN output floored at 1e-7: the UN input and the MN's reconstruction reference."""
    return np.maximum(an_forward(model, Nmat), EPS)


def un_forward(model: GaussModel, Yhat: np.ndarray) -> np.ndarray:
    return model.un(Yhat)


def mn_forward(model: GaussModel, Lhat: np.ndarray) -> np.ndarray:
    return model.mn(Lhat)


def extract_endmembers(model: GaussModel) -> np.ndarray:
    """Feed the K x K identity through the MN; column k is endmember k."""
    return mn_forward(model, np.eye(model.sources))


def estimate_abundances(model: GaussModel, cube: HsiCube) -> np.ndarray:
    if cube.bands != model.bands:
        raise ValueError(f"cube has {cube.bands} bands, model expects {model.bands}")
    return un_forward(model, smooth_pixels(model, build_neighborhood_matrix(cube)))


def save_model(model: GaussModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {"bands": model.bands, "sources": model.sources,
                "neighbors": model.neighbors, "pretrained": model.pretrained}
    (directory / "model.json").write_text(json.dumps(manifest, indent=2) + "\n")
    for name in ("an", "un", "mn"):
        save_network(getattr(model, name), directory / name)


def load_model(directory) -> GaussModel:
    directory = Path(directory)
    manifest_path = directory / "model.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no model checkpoint at {directory}")
    manifest = json.loads(manifest_path.read_text())
    nets = {name: load_network(directory / name)[0] for name in ("an", "un", "mn")}
    model = GaussModel(nets["an"], nets["un"], nets["mn"], manifest["bands"], manifest["sources"],
                       manifest.get("neighbors", NEIGHBORHOOD_SIZE), manifest.get("pretrained", False))
    expected = layer_dims(model.bands, model.sources, model.neighbors)
    for name, net in nets.items():
        if net.dims != expected[name]:
            raise ValueError(f"{name} layer dims {net.dims} do not match {expected[name]}")
    return model
