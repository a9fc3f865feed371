"""Stochastic gradient descent on the backprojection weights.

The objective is the mean squared reconstruction error over a set of
(sensor data, source image) pairs.  Because the reconstruction is
sum_j W^2 b with b independent of W, the gradient has the closed form
4 * (recon - truth) * W * b and one forward pass per sample is all a
step costs.  Training is plain SGD with batch size one, deterministic
given the dataset and the config.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError, ShapeMismatchError
from .forward import SensorData
from .phantoms import Image
from .recon import BackprojectionOperator, WeightTensor

PROBE_SAMPLES = 5
PROBE_STEPS = 5


@dataclass(frozen=True)
class TrainConfig:
    """Knobs of one training run.

    ``learning_rate = None`` asks for the automatic pre-scan (one decade
    below the largest power of ten that keeps a few probe steps finite
    and decreasing).
    ``init`` accepts "ones", "constant:<value>" or a path to a saved
    weight tensor to resume from.  ``weight_grid`` optionally trains the
    weights on a coarser m x m grid, bilinearly upsampled to the image
    grid inside the forward map.
    """

    epochs: int = 100
    batch_size: int = 1
    learning_rate: float | None = None
    init: str = "ones"
    shuffle_seed: int = 0
    checkpoint_every: int = 0
    weight_grid: int | None = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.learning_rate is not None and self.learning_rate < 0:
            raise ConfigError("learning_rate must be nonnegative")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be nonnegative")
        if self.weight_grid is not None and self.weight_grid < 2:
            raise ConfigError("weight_grid must be at least 2")


@dataclass
class TrainState:
    """Weights plus the loss trajectory of a (possibly partial) run."""

    weights: WeightTensor
    epoch: int = 0
    train_losses: list = field(default_factory=list)
    heldout_losses: list = field(default_factory=list)
    learning_rate: float = 0.0

    def __post_init__(self):
        if len(self.train_losses) != self.epoch:
            raise ConfigError("one training loss per completed epoch")
        if any(l < 0 for l in self.train_losses) or any(l < 0 for l in self.heldout_losses):
            raise ConfigError("losses are nonnegative")


def sample_loss(weights: WeightTensor, data: SensorData, truth: Image, op: BackprojectionOperator) -> float:
    recon = op.apply(weights, data)
    return float(((recon.values - truth.values) ** 2).sum())


def loss(weights: WeightTensor, pairs, op: BackprojectionOperator, squared: bool = True) -> float:
    """Mean reconstruction error of ``pairs`` = [(SensorData, Image), ...].

    Default is the mean of squared Euclidean norms ||F - P(W,G)||^2 (the
    form whose gradient drives training); ``squared=False`` averages the
    unsquared norms instead.
    """
    if len(pairs) == 0:
        raise ConfigError("loss needs at least one pair")
    total = 0.0
    for data, truth in pairs:
        value = sample_loss(weights, data, truth, op)
        total += value if squared else np.sqrt(value)
    return total / len(pairs)


def grad(weights: WeightTensor, pair, op: BackprojectionOperator) -> np.ndarray:
    """Exact gradient of ||F - P(W,G)||^2 with respect to W, shape (n, n, n_s).

    One forward pass; the contribution tensor b is reused, no numerical
    differentiation anywhere.
    """
    data, truth = pair
    if truth.grid != weights.grid:
        raise ShapeMismatchError("truth image grid does not match weights")
    b = op.contrib(data)
    recon = op.apply_to_contrib(weights, b)
    residual = recon.values - truth.values
    return 4.0 * residual[:, :, None] * weights.values * b.values


class _WeightParam:
    """Trainable parameterization of the weight tensor.

    Full resolution by default; with a coarse grid the parameters live on
    m x m x n_s and the applied tensor is their bilinear upsampling, so
    gradients pull back through the (sparse) interpolation matrix.
    """

    def __init__(self, grid, n_s: int, coarse: int | None):
        self.grid = grid
        self.n_s = n_s
        self.coarse = coarse
        if coarse is None:
            self.upsample = None
        else:
            self.upsample = _upsample_matrix(coarse, grid.n)

    def init_values(self, init: str, reader=None) -> np.ndarray:
        side = self.grid.n if self.coarse is None else self.coarse
        if init == "ones":
            return np.ones((side, side, self.n_s))
        if init.startswith("constant:"):
            try:
                kappa = float(init.split(":", 1)[1])
            except ValueError as exc:
                raise ConfigError(f"bad constant init {init!r}") from exc
            return np.full((side, side, self.n_s), kappa)
        if reader is None:
            raise ConfigError(f"unknown init {init!r}")
        values = reader(init)
        if values.shape != (side, side, self.n_s):
            raise ShapeMismatchError(
                f"resume weights shape {values.shape} does not match expected {(side, side, self.n_s)}"
            )
        return values

    def expand_values(self, values: np.ndarray) -> np.ndarray:
        """Raw upsampled array; no finiteness validation, safe mid-training."""
        if self.upsample is None:
            return values
        n = self.grid.n
        flat = self.upsample @ values.reshape(self.coarse * self.coarse, self.n_s)
        return flat.reshape(n, n, self.n_s)

    def expand(self, values: np.ndarray) -> WeightTensor:
        return WeightTensor(self.expand_values(values), self.grid)

    def pull_back(self, full_grad: np.ndarray) -> np.ndarray:
        if self.upsample is None:
            return full_grad
        n = self.grid.n
        flat = self.upsample.T @ full_grad.reshape(n * n, self.n_s)
        return flat.reshape(self.coarse, self.coarse, self.n_s)


def _upsample_matrix(coarse: int, fine: int):
    """Sparse (fine^2, coarse^2) bilinear interpolation matrix between two
    pixel-center grids over the same square; edge-clamped so constants are
    preserved exactly."""
    from scipy import sparse

    # fine pixel centers in coarse index coordinates
    pos = (np.arange(fine) + 0.5) * (coarse / fine) - 0.5
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, coarse - 2)
    frac = np.clip(pos - i0, 0.0, 1.0)

    rows_i, cols_i = np.meshgrid(np.arange(fine), np.arange(fine), indexing="ij")
    entries = []
    for di in (0, 1):
        wi = np.where(di == 0, 1.0 - frac, frac)[rows_i]
        for dj in (0, 1):
            wj = np.where(dj == 0, 1.0 - frac, frac)[cols_i]
            rows = (rows_i * fine + cols_i).ravel()
            cols = ((i0[rows_i] + di) * coarse + (i0[cols_i] + dj)).ravel()
            entries.append((rows, cols, (wi * wj).ravel()))
    rows = np.concatenate([e[0] for e in entries])
    cols = np.concatenate([e[1] for e in entries])
    vals = np.concatenate([e[2] for e in entries])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(fine * fine, coarse * coarse))


def epoch_order(shuffle_seed: int, epoch: int, n_samples: int) -> np.ndarray:
    """Deterministic sample order for one epoch, derived from the run seed
    and the epoch index so every epoch reshuffles reproducibly."""
    rng = np.random.default_rng([int(shuffle_seed) & 0xFFFFFFFFFFFFFFFF, int(epoch)])
    return rng.permutation(n_samples)


def prescan_learning_rate(param: _WeightParam, values: np.ndarray, pairs, op: BackprojectionOperator) -> float:
    """Pick the default learning rate: one decade below the largest power of
    ten for which a few probe steps on a few samples keep the loss finite and
    decreasing.

    The backoff matters: the probes run a few dozen updates, but an epoch
    over a real training set runs hundreds, and a rate at the edge of
    stability can survive the former yet blow up mid-epoch."""
    probe = pairs[:PROBE_SAMPLES]
    contribs = [op.contrib(data).values for data, _ in probe]

    def probe_loss(w):
        total = 0.0
        for (_, truth), b in zip(probe, contribs):
            residual = op.apply_values(param.expand_values(w), b) - truth.values
            total += float((residual**2).sum())
        return total / len(probe)

    base = probe_loss(values)
    if base == 0.0:
        return 1e-6
    with np.errstate(over="ignore", invalid="ignore"):
        for exponent in range(2, -13, -1):
            lr = 10.0**exponent
            w = values.copy()
            prev = base
            ok = True
            for _ in range(PROBE_STEPS):
                for (_, truth), b in zip(probe, contribs):
                    full_w = param.expand_values(w)
                    residual = op.apply_values(full_w, b) - truth.values
                    w -= lr * param.pull_back(4.0 * residual[:, :, None] * full_w * b)
                current = probe_loss(w) if np.all(np.isfinite(w)) else np.inf
                if not np.isfinite(current) or current >= prev:
                    ok = False
                    break
                prev = current
            if ok:
                return lr / 10.0
    raise DivergenceError("learning-rate pre-scan found no stable step size; data may be degenerate")


def sgd_train(
    train_pairs,
    heldout_pairs,
    cfg: TrainConfig,
    op: BackprojectionOperator,
    checkpoint=None,
    log=None,
    weight_reader=None,
) -> TrainState:
    """Train the weight tensor on ``train_pairs`` = [(SensorData, Image), ...].

    Per epoch: shuffle with a seed derived from (cfg.shuffle_seed, epoch),
    take one gradient step per batch, record the running mean of the
    per-sample losses seen during the epoch and the held-out loss after
    it.  ``checkpoint(epoch, WeightTensor)`` fires every
    ``cfg.checkpoint_every`` epochs (and for the initial tensor),
    ``log(epoch, train_loss, heldout_loss, lr, wall_seconds)`` once per
    epoch.  Raises DivergenceError as soon as an epoch loss goes
    non-finite.
    """
    if len(train_pairs) == 0:
        raise ConfigError("training set is empty")
    param = _WeightParam(op.grid, op.detectors.n_s, cfg.weight_grid)
    values = param.init_values(cfg.init, reader=weight_reader)

    lr = cfg.learning_rate
    if lr is None:
        lr = prescan_learning_rate(param, values, train_pairs, op)

    if checkpoint is not None:
        checkpoint(0, param.expand(values))

    state = TrainState(weights=param.expand(values), learning_rate=lr)
    start = _time.monotonic()
    for epoch in range(1, cfg.epochs + 1):
        order = epoch_order(cfg.shuffle_seed, epoch, len(train_pairs))
        epoch_total = 0.0
        with np.errstate(over="ignore", invalid="ignore"):
            for lo in range(0, len(order), cfg.batch_size):
                batch = order[lo : lo + cfg.batch_size]
                step = np.zeros_like(values)
                w = param.expand_values(values)
                for k in batch:
                    data, truth = train_pairs[k]
                    b = op.contrib(data).values
                    residual = op.apply_values(w, b) - truth.values
                    epoch_total += float((residual**2).sum())
                    full = 4.0 * residual[:, :, None] * w * b
                    step += param.pull_back(full)
                values = values - (lr / len(batch)) * step
                if not np.all(np.isfinite(values)):
                    raise DivergenceError(
                        f"training diverged at epoch {epoch}; try a lower learning rate"
                    )
        train_loss = epoch_total / len(train_pairs)
        if not np.isfinite(train_loss):
            raise DivergenceError(
                f"training diverged at epoch {epoch} (loss {train_loss}); try a lower learning rate"
            )
        weights = param.expand(values)
        heldout = loss(weights, heldout_pairs, op) if len(heldout_pairs) else float("nan")
        state.weights = weights
        state.epoch = epoch
        state.train_losses.append(train_loss)
        state.heldout_losses.append(heldout)
        cadence_hit = cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0
        if checkpoint is not None and (cadence_hit or epoch == cfg.epochs):
            checkpoint(epoch, weights)
        if log is not None:
            log(epoch, train_loss, heldout, lr, _time.monotonic() - start)
    return state
