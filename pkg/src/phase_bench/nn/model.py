"""Encoder-decoder phase extraction network built from residual blocks.

Encoder: down-residual blocks (stride-2). Decoder: up-residual blocks
(nearest upsample + convolution), each followed by a channel concatenation
with the matching encoder output; the last decoder stage concatenates the
raw input intensity. A fuse convolution, a tail of plain residual blocks and
a linear 1-channel convolution produce the phase estimate.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError, DivergenceError, ShapeMismatchError
from .layers import (
    ChannelNorm,
    Conv2d,
    Layer,
    ReLU,
    Upsample2x,
    concat_channels,
    residual_add,
    split_channels,
)

DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class NetworkConfig:
    input_size: int = 64
    n_down: int = 3
    n_up: int = 3
    n_res: int = 1
    widths: tuple = (16, 32, 64)
    decoder_width: int = 16
    kernel: int = 3
    seed: int = 0
    dtype: str = "float64"
    zero_final: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.n_down < 1:
            raise ConfigError("need at least one down block", field="network.n_down")
        if self.n_up != self.n_down:
            raise ConfigError("must equal network.n_down", field="network.n_up")
        if len(self.widths) != self.n_down:
            raise ConfigError(f"needs {self.n_down} entries", field="network.widths")
        if self.input_size % (2**self.n_down):
            raise ConfigError(
                f"input size {self.input_size} not divisible by 2^{self.n_down}",
                field="network.input_size",
            )
        if self.kernel % 2 != 1:
            raise ConfigError("kernel must be odd", field="network.kernel")
        if self.dtype not in DTYPES:
            raise ConfigError(f"one of {sorted(DTYPES)}", field="network.dtype")

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def as_dict(self):
        return asdict(self)


class _Block(Layer):
    """Composite layer: parameters are those of named children, in order."""

    def __init__(self):
        super().__init__()
        self.children: list[tuple[str, Layer]] = []

    def add(self, name, layer):
        self.children.append((name, layer))
        return layer

    def parameters(self):
        out = []
        for name, child in self.children:
            out.extend((f"{name}.{k}", v) for k, v in child.parameters())
        return out

    def gradients(self):
        out = []
        for name, child in self.children:
            if isinstance(child, _Block):
                out.extend((f"{name}.{k}", v) for k, v in child.gradients())
            else:
                out.extend((f"{name}.{k}", child.grads[k]) for k in child.params)
        return out


class _ConvNormStack(_Block):
    """conv -> norm -> relu -> conv -> norm, the main branch of every residual block.

    The convolutions carry no bias: the following norm removes any per-channel offset.
    """

    def __init__(self, c_in, c_out, k, stride, rng, dtype, upsample=False):
        super().__init__()
        self.up = Upsample2x() if upsample else None
        self.conv1 = self.add("conv1", Conv2d(c_in, c_out, k, stride, rng, dtype, bias=False))
        self.norm1 = self.add("norm1", ChannelNorm(c_out, dtype=dtype))
        self.act1 = ReLU()
        self.conv2 = self.add("conv2", Conv2d(c_out, c_out, k, 1, rng, dtype, bias=False))
        self.norm2 = self.add("norm2", ChannelNorm(c_out, dtype=dtype))

    def forward(self, x):
        if self.up is not None:
            x = self.up(x)
        h = self.act1(self.norm1(self.conv1(x)))
        return self.norm2(self.conv2(h))

    def backward(self, dy):
        dh = self.conv2.backward(self.norm2.backward(dy))
        dx = self.conv1.backward(self.norm1.backward(self.act1.backward(dh)))
        if self.up is not None:
            dx = self.up.backward(dx)
        return dx


class DownResidualBlock(_Block):
    """Halves the spatial size: ``relu(main(x) + conv1x1_stride2(x))``."""

    def __init__(self, c_in, c_out, k=3, rng=None, dtype=np.float64):
        super().__init__()
        self.main = self.add("main", _ConvNormStack(c_in, c_out, k, 2, rng, dtype))
        self.skip = self.add("skip", Conv2d(c_in, c_out, 1, 2, rng, dtype))
        self.act = ReLU()

    def forward(self, x):
        return self.act(residual_add(self.main(x), self.skip(x)))

    def backward(self, dy):
        d = self.act.backward(dy)
        return self.main.backward(d) + self.skip.backward(d)


class UpResidualBlock(_Block):
    """Doubles the spatial size: ``relu(main(up(x)) + conv1x1(up(x)))``."""

    def __init__(self, c_in, c_out, k=3, rng=None, dtype=np.float64):
        super().__init__()
        self.up = Upsample2x()
        self.main = self.add("main", _ConvNormStack(c_in, c_out, k, 1, rng, dtype))
        self.skip = self.add("skip", Conv2d(c_in, c_out, 1, 1, rng, dtype))
        self.act = ReLU()

    def forward(self, x):
        u = self.up(x)
        return self.act(residual_add(self.main(u), self.skip(u)))

    def backward(self, dy):
        d = self.act.backward(dy)
        return self.up.backward(self.main.backward(d) + self.skip.backward(d))


class ResidualBlock(_Block):
    """Identity-shortcut block: ``relu(main(x) + x)``."""

    def __init__(self, channels, k=3, rng=None, dtype=np.float64):
        super().__init__()
        self.main = self.add("main", _ConvNormStack(channels, channels, k, 1, rng, dtype))
        self.act = ReLU()

    def forward(self, x):
        return self.act(residual_add(self.main(x), x))

    def backward(self, dy):
        d = self.act.backward(dy)
        return self.main.backward(d) + d


class PhENN(_Block):
    """The full network; ``forward`` maps ``(B, 1, N, N)`` intensities to ``(B, 1, N, N)`` phases."""

    def __init__(self, config: NetworkConfig | None = None):
        super().__init__()
        self.config = config = config or NetworkConfig()
        rng = np.random.default_rng(config.seed)
        dt, k, w = config.np_dtype, config.kernel, config.widths
        self.down = []
        c = 1
        for i, width in enumerate(w):
            self.down.append(self.add(f"down{i}", DownResidualBlock(c, width, k, rng, dt)))
            c = width
        self.skip_channels = [1] + list(w[:-1])
        self.up = []
        for j in range(config.n_up):
            skip_c = self.skip_channels[-1 - j]
            out_c = config.decoder_width if j == config.n_up - 1 else skip_c
            self.up.append(self.add(f"up{j}", UpResidualBlock(c, out_c, k, rng, dt)))
            c = out_c + skip_c
        self.fuse = self.add("fuse", Conv2d(c, config.decoder_width, k, 1, rng, dt))
        self.fuse_act = ReLU()
        self.tail = [self.add(f"res{i}", ResidualBlock(config.decoder_width, k, rng, dt))
                     for i in range(config.n_res)]
        # no bias: NPCC is blind to a constant offset of the output
        self.head = self.add(
            "head",
            Conv2d(config.decoder_width, 1, k, 1, rng, dt,
                   init="zero" if config.zero_final else "lecun", bias=False),
        )

    def forward(self, x):
        x = np.asarray(x, dtype=self.config.np_dtype)
        n = self.config.input_size
        if x.ndim != 4 or x.shape[1:] != (1, n, n):
            raise ShapeMismatchError(f"network expects (B, 1, {n}, {n}), got {x.shape}")
        x = np.ascontiguousarray(x.transpose(1, 0, 2, 3))
        skips = [x]
        h = x
        for blk in self.down:
            h = blk(h)
            skips.append(h)
        skips.pop()
        self._split = []
        for blk in self.up:
            h = blk(h)
            self._split.append(h.shape[0])
            h = concat_channels(h, skips.pop())
        h = self.fuse_act(self.fuse(h))
        for blk in self.tail:
            h = blk(h)
        out = self.head(h).transpose(1, 0, 2, 3)
        if not np.all(np.isfinite(out)):
            raise DivergenceError("non-finite network output", layer=self._first_nonfinite(x))
        return out

    def backward(self, dy):
        """Backpropagate ``dL/doutput``; fills every layer's ``grads``. Returns ``dL/dinput``."""
        d = self.head.backward(np.ascontiguousarray(np.asarray(dy).transpose(1, 0, 2, 3)))
        for blk in reversed(self.tail):
            d = blk.backward(d)
        d = self.fuse.backward(self.fuse_act.backward(d))
        skip_grads = []
        for blk, first in zip(reversed(self.up), reversed(self._split)):
            d, d_skip = split_channels(d, first)
            skip_grads.append(d_skip)
            d = blk.backward(d)
        # skip_grads[i] belongs to the output of down block i-1 (index 0 = raw input)
        for i in range(len(self.down) - 1, -1, -1):
            if i < len(self.down) - 1:
                d = d + skip_grads[i + 1]
            d = self.down[i].backward(d)
        return (d + skip_grads[0]).transpose(1, 0, 2, 3)

    def _first_nonfinite(self, x):
        """Index (in forward order) of the first block producing non-finite values."""
        h = x
        for i, blk in enumerate(self.down):
            h = blk(h)
            if not np.all(np.isfinite(h)):
                return i
        return len(self.down)

    def predict(self, intensity: np.ndarray) -> np.ndarray:
        """Single-image inference: ``(N, N) -> (N, N)``."""
        intensity = np.asarray(intensity)
        if intensity.ndim != 2:
            raise ShapeMismatchError("predict expects a single 2D intensity image")
        return self.forward(intensity[None, None])[0, 0].astype(np.float64)

    def parameter_count(self):
        return sum(v.size for _, v in self.parameters())

    def get_state(self):
        return [(name, arr.copy()) for name, arr in self.parameters()]

    def set_state(self, state):
        params = dict(self.parameters())
        names = [n for n, _ in state]
        if names != list(params):
            raise ShapeMismatchError("parameter names do not match the architecture")
        for name, arr in state:
            if params[name].shape != arr.shape:
                raise ShapeMismatchError(f"parameter {name}: {arr.shape} != {params[name].shape}")
            params[name][...] = arr
