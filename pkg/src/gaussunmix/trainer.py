"""Training schedules: the GAUSS initializer and its blind / prime variants.

Every schedule is a sequence of stages. A stage trains exactly one network (or,
for the blind UN stage, one network through a frozen second one) with a fresh
Adam state, for ``epochs_per_stage`` epochs of shuffled mini-batches. All other
networks are left untouched.

The pseudo-ground-truth row order is whatever k-means produced; the UN only
needs a consistent labeling, never the true endmember order. Sources are
matched to reference endmembers only at evaluation time.
"""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import nn
from .hsi import HsiCube, build_neighborhood_matrix, check_abundances, cube_to_matrix
from .metrics import assignment, sad_matrix
from .networks import GaussModel, extract_endmembers, smooth_pixels
from .nn import AdamState, NumericalError

STRATEGIES = ("gauss", "gauss_extended", "blind", "prime")

# fixed labels for per-stage RNG streams
_STAGE_CODES = {"an": 1, "un": 2, "mn": 3, "blind_un": 4, "blind_mn": 5}

BatchHook = Callable[[str, np.ndarray], None]


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs_per_stage: int = 25
    strategy: str = "gauss"
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    prime_pgt_path: str | None = None
    # "psid": MN reconstructs the smoothed pixels; "mse": MN reconstructs raw pixels under MSE
    mn_loss: str = "psid"

    def validate(self, require_pgt_path: bool = True) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_per_stage < 0:
            raise ValueError("epochs_per_stage must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; choose from {STRATEGIES}")
        if require_pgt_path and self.strategy == "prime" and not self.prime_pgt_path:
            raise ValueError("strategy 'prime' requires prime_pgt_path")
        if self.mn_loss not in ("psid", "mse"):
            raise ValueError(f"mn_loss must be 'psid' or 'mse', got {self.mn_loss!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StageLog:
    name: str
    losses: list[float] = field(default_factory=list)


@dataclass
class TrainReport:
    stages: list[StageLog] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def total_epochs(self) -> int:
        return sum(len(s.losses) for s in self.stages)

    def final_losses(self) -> dict[str, float]:
        out = {}
        for i, s in enumerate(self.stages):
            if s.losses:
                out[f"{i}:{s.name}"] = s.losses[-1]
        return out

    def extend(self, other: "TrainReport") -> None:
        self.stages.extend(other.stages)
        self.wall_time += other.wall_time

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "stage", "loss"])
        for s in self.stages:
            for e, loss in enumerate(s.losses, start=1):
                writer.writerow([e, s.name, repr(loss)])
        return buf.getvalue()

    def summary(self) -> dict:
        """Deterministic summary (wall time is excluded)."""
        return {
            "stages": [s.name for s in self.stages],
            "epochs": [len(s.losses) for s in self.stages],
            "total_epochs": self.total_epochs,
            "final_losses": self.final_losses(),
        }


# ---------------------------------------------------------------- data

@dataclass
class TrainingData:
    Nmat: np.ndarray  # 8B x N neighborhoods
    Y: np.ndarray     # B x N raw pixels

    @classmethod
    def from_cube(cls, cube: HsiCube) -> "TrainingData":
        return cls(build_neighborhood_matrix(cube).astype(np.float64),
                   cube_to_matrix(cube).astype(np.float64))

    @property
    def n(self) -> int:
        return self.Y.shape[1]


def _stage_rng(seed: int, pass_no: int, stage: str) -> np.random.Generator:
    return np.random.default_rng([seed, pass_no, _STAGE_CODES[stage]])


def _check_finite(value, stage: str, epoch: int, batch: int | None) -> None:
    if not np.all(np.isfinite(value)):
        where = f"batch {batch}" if batch is not None else "full-data evaluation"
        raise NumericalError(f"non-finite value in stage {stage!r}, epoch {epoch}, {where}")


def _run_stage(name: str, params: list[np.ndarray], step: Callable, evaluate: Callable[[], float],
               n: int, cfg: TrainConfig, rng: np.random.Generator) -> StageLog:
    """Generic epoch loop. ``step(idx)`` returns ``(loss, grads)`` for one mini-batch."""
    adam = AdamState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    log = StageLog(name)
    for epoch in range(1, cfg.epochs_per_stage + 1):
        order = rng.permutation(n)
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = step(idx)
            _check_finite(loss, name, epoch, b)
            for g in grads:
                _check_finite(g, name, epoch, b)
            nn.adam_step(adam, params, grads)
        full = evaluate()
        _check_finite(full, name, epoch, None)
        log.losses.append(full)
    return log


def _emit(hook: BatchHook | None, stage: str, L: np.ndarray) -> None:
    if hook is not None:
        hook(stage, L)


# ---------------------------------------------------------------- individual stages

def _feature_scale(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=1)
    sd = X.std(axis=1)
    # constant features (sd at rounding level relative to the data) keep unit scale
    sd = np.where(sd > 1e-10 * max(float(np.abs(X).max()), 1e-300), sd, 1.0)
    return mu, sd


def _unfold(net: nn.DenseNetwork, mu_in, sd_in, mu_out, sd_out) -> nn.DenseNetwork:
    """Re-express ``net`` in standardized input/output coordinates."""
    out = net.copy()
    first, last = out.layers[0], out.layers[-1]
    first.bias = first.bias + first.weights @ mu_in
    first.weights = first.weights * sd_in[None, :]
    last.weights = last.weights / sd_out[:, None]
    last.bias = (last.bias - mu_out) / sd_out
    return out


def _fold_into(target: nn.DenseNetwork, std_net: nn.DenseNetwork, mu_in, sd_in, mu_out, sd_out) -> None:
    """Write the reflectance-space equivalent of ``std_net`` into ``target`` in place."""
    for dst, src in zip(target.layers, std_net.layers):
        dst.weights[...] = src.weights
        dst.bias[...] = src.bias
    first, last = target.layers[0], target.layers[-1]
    first.weights[...] = first.weights / sd_in[None, :]
    first.bias[...] = first.bias - first.weights @ mu_in
    last.weights[...] = last.weights * sd_out[:, None]
    last.bias[...] = last.bias * sd_out + mu_out


def stage_an(model: GaussModel, data: TrainingData, cfg: TrainConfig, pass_no: int = 0) -> StageLog:
    """Fit the AN on the smoothing loss.

    Optimisation runs on per-feature standardized neighborhoods and targets
    (an exact affine reparametrisation of the first and last biased layers);
    the objective is still the reflectance-space loss, and the result is folded
    back so ``model.an`` always maps reflectances to reflectances. An untrained
    AN takes its initial weights as standardized-space weights.
    """
    mu_in, sd_in = _feature_scale(data.Nmat)
    mu_out, sd_out = _feature_scale(data.Y)
    Xs = (data.Nmat - mu_in[:, None]) / sd_in[:, None]
    Ts = (data.Y - mu_out[:, None]) / sd_out[:, None]
    w2 = (sd_out ** 2)[:, None]
    if model.pretrained:
        std_net = _unfold(model.an, mu_in, sd_in, mu_out, sd_out)
    else:
        std_net = model.an.copy()

    def step(idx):
        out, cache = std_net.forward(Xs[:, idx])
        diff = out - Ts[:, idx]
        n = len(idx)
        loss = float(np.sum(w2 * diff ** 2) / n)
        return loss, std_net.backward(cache, 2.0 * w2 * diff / n)[0]

    def evaluate():
        pred = std_net(Xs) * sd_out[:, None] + mu_out[:, None]
        return nn.loss_smooth(data.Y, pred)

    log = _run_stage("an", std_net.params(), step, evaluate, data.n, cfg,
                     _stage_rng(cfg.seed, pass_no, "an"))
    _fold_into(model.an, std_net, mu_in, sd_in, mu_out, sd_out)
    return log


def _band_rms(X: np.ndarray) -> np.ndarray:
    rms = np.sqrt(np.mean(X ** 2, axis=1))
    return np.where(rms > 0, rms, 1.0)


def _scaled_un(model: GaussModel, Yhat: np.ndarray) -> tuple[nn.DenseNetwork, np.ndarray, np.ndarray]:
    """UN re-expressed on per-band RMS-scaled inputs.

    Scaling (unlike centering) folds exactly into the bias-free first layer.
    An untrained UN takes its initial weights as scaled-space weights.
    """
    rms = _band_rms(Yhat)
    un = model.un.copy()
    if model.pretrained:
        un.layers[0].weights = un.layers[0].weights * rms[None, :]
    return un, Yhat / rms[:, None], rms


def _fold_un(model: GaussModel, scaled: nn.DenseNetwork, rms: np.ndarray) -> None:
    for dst, src in zip(model.un.layers, scaled.layers):
        dst.weights[...] = src.weights
    model.un.layers[0].weights[...] = scaled.layers[0].weights / rms[None, :]


def stage_un(model: GaussModel, data: TrainingData, pgt: np.ndarray, cfg: TrainConfig,
             pass_no: int = 0, hook: BatchHook | None = None, name: str = "un") -> StageLog:
    un, Yhat, rms = _scaled_un(model, smooth_pixels(model, data.Nmat))

    def step(idx):
        out, cache = un.forward(Yhat[:, idx])
        _emit(hook, name, out)
        L = pgt[:, idx]
        g = nn.softmax_ce_logit_grad(L, out)
        return nn.loss_ce(L, out), un.backward(cache, g, grad_is_preactivation=True)[0]

    def evaluate():
        return nn.loss_ce(pgt, un(Yhat))

    log = _run_stage(name, un.params(), step, evaluate, data.n, cfg, _stage_rng(cfg.seed, pass_no, "un"))
    _fold_un(model, un, rms)
    return log


def stage_mn(model: GaussModel, data: TrainingData, cfg: TrainConfig, pass_no: int = 0,
             hook: BatchHook | None = None, name: str = "mn", rng_label: str = "mn") -> StageLog:
    mn = model.mn
    Yhat = smooth_pixels(model, data.Nmat)
    Lhat = model.un(Yhat)
    _emit(hook, name, Lhat)
    if cfg.mn_loss == "psid":
        target, loss_fn, grad_fn = Yhat, nn.loss_psid, nn.loss_psid_grad
    else:
        target, loss_fn, grad_fn = data.Y, nn.loss_mse, nn.loss_mse_grad

    def step(idx):
        out, cache = mn.forward(Lhat[:, idx])
        loss, g = grad_fn(target[:, idx], out)
        return loss, mn.backward(cache, g)[0]

    def evaluate():
        return loss_fn(target, mn(Lhat))

    return _run_stage(name, mn.params(), step, evaluate, data.n, cfg,
                      _stage_rng(cfg.seed, pass_no, rng_label))


def stage_blind_un(model: GaussModel, data: TrainingData, cfg: TrainConfig, pass_no: int = 0,
                   hook: BatchHook | None = None) -> StageLog:
    """UN trained end to end through the frozen MN on the pSID reconstruction loss."""
    mn = model.mn
    Yhat = smooth_pixels(model, data.Nmat)
    un, Xs, rms = _scaled_un(model, Yhat)

    def step(idx):
        L, cache_un = un.forward(Xs[:, idx])
        _emit(hook, "blind_un", L)
        out, cache_mn = mn.forward(L)
        loss, g = nn.loss_psid_grad(Yhat[:, idx], out)
        _, dL = mn.backward(cache_mn, g, need_input_grad=True)
        return loss, un.backward(cache_un, dL)[0]

    def evaluate():
        return nn.loss_psid(Yhat, mn(un(Xs)))

    log = _run_stage("blind_un", un.params(), step, evaluate, data.n, cfg,
                     _stage_rng(cfg.seed, pass_no, "blind_un"))
    _fold_un(model, un, rms)
    return log


# ---------------------------------------------------------------- schedules

def _data(cube_or_data) -> TrainingData:
    return cube_or_data if isinstance(cube_or_data, TrainingData) else TrainingData.from_cube(cube_or_data)


def _check_pgt(model: GaussModel, data: TrainingData, pgt: np.ndarray) -> np.ndarray:
    pgt = np.asarray(pgt, dtype=np.float64)
    if pgt.shape != (model.sources, data.n):
        raise ValueError(f"pseudo-ground truth has shape {pgt.shape}, expected {(model.sources, data.n)}")
    return check_abundances(pgt)


def train_gauss(model: GaussModel, cube, pgt: np.ndarray, cfg: TrainConfig,
                hook: BatchHook | None = None, pass_no: int = 0) -> TrainReport:
    """AN on the smoothing loss, then UN on cross-entropy against ``pgt``, then MN on pSID."""
    cfg.validate()
    t0 = time.perf_counter()
    data = _data(cube)
    pgt = _check_pgt(model, data, pgt)
    report = TrainReport()
    report.stages.append(stage_an(model, data, cfg, pass_no))
    report.stages.append(stage_un(model, data, pgt, cfg, pass_no, hook))
    report.stages.append(stage_mn(model, data, cfg, pass_no, hook))
    model.pretrained = True
    report.wall_time = time.perf_counter() - t0
    return report


def train_gauss_extended(model: GaussModel, cube, pgt: np.ndarray, cfg: TrainConfig,
                         hook: BatchHook | None = None) -> TrainReport:
    """Two full GAUSS passes, matching the epoch budget of the two variants."""
    data = _data(cube)
    report = train_gauss(model, data, pgt, cfg, hook, pass_no=0)
    report.extend(train_gauss(model, data, pgt, cfg, hook, pass_no=1))
    return report


def _require_pretrained(model: GaussModel, what: str) -> None:
    if not model.pretrained:
        raise RuntimeError(f"{what} needs a model pre-trained with the GAUSS schedule")


def train_blind(model: GaussModel, cube, cfg: TrainConfig, hook: BatchHook | None = None) -> TrainReport:
    """Drop the pseudo-ground truth: UN through frozen MN on pSID, then MN alone.

    The AN stays frozen throughout.
    """
    cfg.validate()
    _require_pretrained(model, "blind training")
    t0 = time.perf_counter()
    data = _data(cube)
    report = TrainReport()
    report.stages.append(stage_blind_un(model, data, cfg, hook=hook))
    report.stages.append(stage_mn(model, data, cfg, hook=hook, name="blind_mn", rng_label="blind_mn"))
    report.wall_time = time.perf_counter() - t0
    return report


def align_external_pgt(model: GaussModel, cube, pgt: np.ndarray,
                       library: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Permute rows of an external abundance estimate into the model's source order.

    With ``library`` (B x K endmembers in the same order as ``pgt`` rows), the
    match is by minimum spectral angle against the MN-extracted endmembers.
    Otherwise rows are matched by maximum correlation with the UN's current output.
    Returns ``(aligned_pgt, perm)`` with ``aligned_pgt[k] = pgt[perm[k]]``.
    """
    data = _data(cube)
    pgt = _check_pgt(model, data, pgt)
    if library is not None:
        cost = sad_matrix(extract_endmembers(model), np.asarray(library, dtype=np.float64))
    else:
        Lhat = model.un(smooth_pixels(model, data.Nmat))
        a = Lhat - Lhat.mean(axis=1, keepdims=True)
        b = pgt - pgt.mean(axis=1, keepdims=True)
        denom = np.outer(np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.where(denom > 0, (a @ b.T) / np.where(denom > 0, denom, 1.0), 0.0)
        cost = -corr
    perm = assignment(cost)
    return pgt[perm], perm


def train_prime(model: GaussModel, cube, external_pgt: np.ndarray, cfg: TrainConfig,
                library: np.ndarray | None = None, align: bool = True,
                hook: BatchHook | None = None) -> TrainReport:
    """Re-supervise the UN with an external abundance estimate, then retrain the MN.

    Same two stages (and RNG streams) as GAUSS stages 2-3; the AN stays frozen.
    """
    cfg.validate(require_pgt_path=False)
    _require_pretrained(model, "prime training")
    t0 = time.perf_counter()
    data = _data(cube)
    pgt = _check_pgt(model, data, external_pgt)
    if align:
        pgt, _ = align_external_pgt(model, data, pgt, library)
    report = TrainReport()
    report.stages.append(stage_un(model, data, pgt, cfg, hook=hook, name="prime_un"))
    report.stages.append(stage_mn(model, data, cfg, hook=hook, name="prime_mn"))
    report.wall_time = time.perf_counter() - t0
    return report


def write_report(report: TrainReport, csv_path, json_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        fh.write(report.to_csv())
    with open(json_path, "w") as fh:
        json.dump(report.summary(), fh, indent=2)
        fh.write("\n")


def config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
