"""Mini-batch training of the network against the summed NPCC loss."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import DivergenceError, ZeroVarianceError
from .loss import npcc_per_example, npcc_with_grad
from .model import NetworkConfig, PhENN
from .optim import Adam

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainHyper:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 200
    validation_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.optimizer != "adam":
            raise ValueError("only the 'adam' optimizer is implemented")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1
    hyper: dict = field(default_factory=dict)
    network: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    checkpoint: str | None = None

    def to_text(self, include_timing=False) -> str:
        lines = [f"hyper {' '.join(f'{k}={v!r}' for k, v in sorted(self.hyper.items()))}",
                 f"network {' '.join(f'{k}={v!r}' for k, v in sorted(self.network.items()))}",
                 f"best_epoch {self.best_epoch}",
                 f"checkpoint {self.checkpoint}"]
        if include_timing:
            lines.append(f"wall_clock {self.wall_clock:.3f}")
        lines.append("epoch,train_npcc,val_npcc")
        for i, tr in enumerate(self.train_loss):
            va = self.val_loss[i] if i < len(self.val_loss) else float("nan")
            lines.append(f"{i},{tr!r},{va!r}")
        return "\n".join(lines) + "\n"


def _stack(images, dtype):
    return np.asarray(images, dtype=dtype)[:, None]


def evaluate(net: PhENN, intensities, objects, batch_size=16) -> float:
    """Mean per-example NPCC of the network on a held-out set."""
    dt = net.config.np_dtype
    total, count = 0.0, 0
    for i in range(0, len(intensities), batch_size):
        out = net.forward(_stack(intensities[i : i + batch_size], dt))
        total += float(npcc_per_example(_stack(objects[i : i + batch_size], dt), out).sum())
        count += out.shape[0]
    return total / max(count, 1)


def train(pairs, config: NetworkConfig | None = None, hyper: TrainHyper | None = None,
          net: PhENN | None = None, progress=None):
    """Fit a network to ``pairs`` (objects are labels, intensities are inputs).

    Returns ``(net, report)``; the network holds the parameters from the epoch
    with the best validation NPCC (or the best training epoch without
    validation). ``progress(epoch, report)`` is called after every epoch; a
    true return value stops training early.
    """
    config = config or NetworkConfig()
    hyper = hyper or TrainHyper()
    objects, inputs = np.asarray(pairs.objects), np.asarray(pairs.intensities)
    n = len(objects)
    if n < 2 * hyper.batch_size:
        raise ValueError(f"need at least {2 * hyper.batch_size} pairs, got {n}")
    if np.any(np.ptp(objects.reshape(n, -1), axis=1) == 0):
        raise ZeroVarianceError("training set contains a constant object (NPCC undefined)")
    net = net or PhENN(config)
    dt = config.np_dtype
    rng = np.random.default_rng(hyper.seed)
    order = rng.permutation(n)
    n_val = int(np.floor(hyper.validation_fraction * n))
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    x_all, y_all = _stack(inputs, dt), _stack(objects, dt)

    opt = Adam(net.parameters(), lr=hyper.learning_rate)
    report = TrainReport(hyper=asdict(hyper), network=config.as_dict())
    best = (np.inf, None)
    start = time.perf_counter()
    for epoch in range(hyper.epochs):
        perm = train_idx[rng.permutation(len(train_idx))]
        total = 0.0
        for b, i in enumerate(range(0, len(perm), hyper.batch_size)):
            idx = perm[i : i + hyper.batch_size]
            out = net.forward(x_all[idx])
            try:
                losses, grad = npcc_with_grad(y_all[idx], out)
            except ZeroVarianceError as exc:
                raise DivergenceError(f"output collapsed at epoch {epoch} batch {b}: {exc}",
                                      epoch=epoch, batch=b) from exc
            loss = float(losses.sum())
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch} batch {b}",
                                      epoch=epoch, batch=b)
            net.backward(grad)
            opt.step([g for _, g in net.gradients()])
            total += loss
        report.train_loss.append(total / len(perm))
        if n_val:
            val = evaluate(net, inputs[val_idx], objects[val_idx], hyper.batch_size)
            report.val_loss.append(val)
        else:
            val = report.train_loss[-1]
        if val < best[0]:
            best = (val, net.get_state())
            report.best_epoch = epoch
        log.debug("epoch %d train %.4f val %.4f", epoch, report.train_loss[-1], val)
        if progress is not None and progress(epoch, report):
            break
    if best[1] is not None:
        net.set_state(best[1])
    report.wall_clock = time.perf_counter() - start
    return net, report


def infer(net: PhENN, intensity: np.ndarray) -> np.ndarray:
    """Deterministic single forward pass for one preprocessed intensity image."""
    intensity = np.asarray(intensity, dtype=float)
    if intensity.size and (intensity.min() < 0 or intensity.max() > 1):
        raise ValueError("infer expects a preprocessed intensity with values in [0, 1]")
    return net.predict(intensity)
