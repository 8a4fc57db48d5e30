"""Plain UNet refiner and partial-convolution UNet inpainter.

Both networks keep a hand-written tape: ``forward`` caches what ``backward``
needs, and ``backward`` fills ``net.grads`` with the same keys as
``net.params``.  Inputs and outputs are ``(N, 1, H, W)`` arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError
from .limar import limar_inpaint
from .nn import ops


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_channels: int = 16
    in_channels: int = 1
    out_channels: int = 1
    kernel: int = 3
    # "direct" predicts the output outright; "residual" predicts a correction that
    # is added to the input image (refiner) or to the linear fill of the hole (inpainter)
    mode: str = "direct"
    dtype: str = "float32"
    # multiplier on the head output; None means "not fitted yet" (acts as 1) and is
    # set by the training loops from the spread of the residual targets
    output_scale: float | None = None

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ConfigurationError("depth and base_channels must be >= 1")
        if self.kernel % 2 == 0:
            raise ConfigurationError("kernel must be odd")
        if self.mode not in ("direct", "residual"):
            raise ConfigurationError(f"unknown refiner mode {self.mode!r}")
        if self.output_scale is not None and not self.output_scale > 0:
            raise ConfigurationError("output_scale must be positive")

    @property
    def scale(self) -> float:
        return 1.0 if self.output_scale is None else float(self.output_scale)

    @property
    def multiple(self) -> int:
        return 2 ** self.depth

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def to_dict(self) -> dict:
        return asdict(self)


class _Conv:
    """One (partial) convolution whose parameters live in the owning net's dict."""

    def __init__(self, net, name, cin, cout, k, stride=1, partial=False, init_scale=1.0):
        self.net, self.name, self.stride, self.partial = net, name, stride, partial
        self.wk, self.bk = name + ".w", name + ".b"
        std = init_scale * np.sqrt(2.0 / (cin * k * k))
        net.params[self.wk] = (net.rng.standard_normal((cout, cin, k, k)) * std).astype(net.dtype)
        net.params[self.bk] = np.zeros(cout, dtype=net.dtype)

    def forward(self, x, m=None):
        w, b = self.net.params[self.wk], self.net.params[self.bk]
        self.x_shape = x.shape
        if self.partial:
            y, m_out, self.cache = ops.pconv_cn_forward(x, m, w, b, self.stride)
            return y, m_out
        y, self.cache = ops.conv_cn_forward(x, w, b, self.stride)
        return y

    def backward(self, dy, need_dx=True):
        w = self.net.params[self.wk]
        if self.partial:
            dx, dw, db = ops.pconv_cn_backward(dy, self.cache, self.x_shape, w, self.stride, need_dx)
        else:
            dx, dw, db = ops.conv_cn_backward(dy, self.cache, self.x_shape, w, self.stride, need_dx)
        self.net.grads[self.wk] = dw
        self.net.grads[self.bk] = db
        self.cache = None
        return dx


def _to_cn(a):
    return np.ascontiguousarray(np.swapaxes(a, 0, 1))


def pad_to_multiple(x, multiple):
    """Reflect-pad the last two axes up to a multiple; returns ``(padded, crop)``."""
    H, W = x.shape[-2:]
    ph, pw = (-H) % multiple, (-W) % multiple
    if ph > min(H, W) - 1 or pw > min(H, W) - 1:
        raise ConfigurationError(f"cannot reflect-pad {H}x{W} to a multiple of {multiple}")
    if ph == 0 and pw == 0:
        return x, (slice(None), slice(None))
    pad = [(0, 0)] * (x.ndim - 2) + [(ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2)]
    crop = (slice(ph // 2, ph // 2 + H), slice(pw // 2, pw // 2 + W))
    return np.pad(x, pad, mode="reflect"), crop


class _Net:
    kind = "net"

    def __init__(self, config: UNetConfig, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.skip_scale = 1.0  # 0 ablates every skip connection

    @property
    def head_init(self) -> float:
        # residual nets start as the identity (refiner) or the linear fill (inpainter)
        return 0.0 if self.config.mode == "residual" else 0.1

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class UNet(_Net):
    """Encoder/decoder with max-pool downsampling and concatenated skips."""

    kind = "unet"

    def __init__(self, config: UNetConfig = UNetConfig(), seed: int = 0):
        super().__init__(config, seed)
        c, k = config, config.kernel
        self.enc = []
        cin = c.in_channels
        for lvl in range(c.depth):
            ch = c.channels(lvl)
            self.enc.append((_Conv(self, f"enc{lvl}a", cin, ch, k), _Conv(self, f"enc{lvl}b", ch, ch, k)))
            cin = ch
        self.dec = {}
        for lvl in range(c.depth - 2, -1, -1):
            ch = c.channels(lvl)
            self.dec[lvl] = (_Conv(self, f"dec{lvl}a", c.channels(lvl + 1) + ch, ch, k),
                             _Conv(self, f"dec{lvl}b", ch, ch, k))
        self.head = _Conv(self, "head", c.channels(0), c.out_channels, 1, init_scale=self.head_init)

    def forward(self, x):
        """Raw network output on a padded ``(N, C, H, W)`` input."""
        c = self.config
        if x.shape[-2] % c.multiple or x.shape[-1] % c.multiple:
            raise ConfigurationError(f"input {x.shape[-2:]} not divisible by {c.multiple}")
        h = _to_cn(x.astype(self.dtype, copy=False))
        self._x = h
        tape, skips = [], []
        for lvl, (ca, cb) in enumerate(self.enc):
            if lvl > 0:
                h, idx = ops.maxpool2x2_forward(h)
                tape.append(("pool", idx))
            pre_a = ca.forward(h)
            a = ops.relu_forward(pre_a)
            pre_b = cb.forward(a)
            h = ops.relu_forward(pre_b)
            tape.append(("enc", lvl, pre_a, pre_b))
            skips.append(h)
        for lvl in range(c.depth - 2, -1, -1):
            ca, cb = self.dec[lvl]
            up = ops.upsample_nearest2x(h)
            cat = np.concatenate([up, skips[lvl] * self.skip_scale], axis=0)
            pre_a = ca.forward(cat)
            a = ops.relu_forward(pre_a)
            pre_b = cb.forward(a)
            h = ops.relu_forward(pre_b)
            tape.append(("dec", lvl, up.shape[0], pre_a, pre_b))
        y = self.head.forward(h) * c.scale
        if c.mode == "residual":
            y = y + h_input_residual(self._x, c.out_channels)
        self._tape = tape
        return _to_cn(y)

    def backward(self, dy):
        """Accumulate parameter gradients for upstream ``dy`` (same shape as output)."""
        c = self.config
        self.grads = {}
        d = self.head.backward(_to_cn(dy.astype(self.dtype, copy=False)) * c.scale)
        dskips = [None] * c.depth
        tape = self._tape
        while tape and tape[-1][0] == "dec":
            _, lvl, n_up, pre_a, pre_b = tape.pop()
            ca, cb = self.dec[lvl]
            d = cb.backward(ops.relu_backward(pre_b, d))
            d = ca.backward(ops.relu_backward(pre_a, d))
            dskips[lvl] = d[n_up:] * self.skip_scale
            d = ops.upsample_nearest2x_backward(d[:n_up])
        for lvl in range(c.depth - 1, -1, -1):
            _, _, pre_a, pre_b = tape.pop()
            if dskips[lvl] is not None:
                d = d + dskips[lvl]
            ca, cb = self.enc[lvl]
            d = cb.backward(ops.relu_backward(pre_b, d))
            d = ca.backward(ops.relu_backward(pre_a, d), need_dx=lvl > 0)
            if lvl > 0:
                _, idx = tape.pop()
                d = ops.maxpool2x2_backward(idx, d)
        self._tape = None
        return self.grads


def h_input_residual(x_cn, out_channels):
    return x_cn[:out_channels]


class PUNet(_Net):
    """UNet whose convolutions are partial; stride-2 partial convs downsample.

    Decoder stages concatenate upsampled features with the skip features and
    carry a per-channel validity mask built from both halves.
    """

    kind = "punet"

    def __init__(self, config: UNetConfig = UNetConfig(), seed: int = 0):
        super().__init__(config, seed)
        c, k = config, config.kernel
        self.enc = []
        cin = c.in_channels
        for lvl in range(c.depth):
            ch = c.channels(lvl)
            self.enc.append((_Conv(self, f"enc{lvl}a", cin, ch, k, 1 if lvl == 0 else 2, True),
                             _Conv(self, f"enc{lvl}b", ch, ch, k, 1, True)))
            cin = ch
        self.dec = {}
        for lvl in range(c.depth - 2, -1, -1):
            ch = c.channels(lvl)
            self.dec[lvl] = (_Conv(self, f"dec{lvl}a", c.channels(lvl + 1) + ch, ch, k, 1, True),
                             _Conv(self, f"dec{lvl}b", ch, ch, k, 1, True))
        self.head = _Conv(self, "head", c.channels(0), c.out_channels, 1, 1, True, init_scale=self.head_init)

    def forward(self, x, valid):
        """Raw prediction for padded ``x`` with binary ``valid`` mask, both ``(N, 1, H, W)``."""
        c = self.config
        if x.shape[-2] % c.multiple or x.shape[-1] % c.multiple:
            raise ConfigurationError(f"input {x.shape[-2:]} not divisible by {c.multiple}")
        h = _to_cn(x.astype(self.dtype, copy=False))
        m = _to_cn(valid.astype(self.dtype, copy=False))
        tape, skips = [], []
        for lvl, (ca, cb) in enumerate(self.enc):
            pre_a, m = ca.forward(h, m)
            a = ops.relu_forward(pre_a)
            pre_b, m = cb.forward(a, m)
            h = ops.relu_forward(pre_b)
            tape.append((lvl, pre_a, pre_b))
            skips.append((h, m))
        for lvl in range(c.depth - 2, -1, -1):
            ca, cb = self.dec[lvl]
            sh, sm = skips[lvl]
            up, mup = ops.upsample_nearest2x(h), ops.upsample_nearest2x(m)
            cat = np.concatenate([up, sh * self.skip_scale], axis=0)
            mcat = np.concatenate([np.broadcast_to(mup, up.shape), np.broadcast_to(sm, sh.shape)], axis=0)
            pre_a, m = ca.forward(cat, mcat)
            a = ops.relu_forward(pre_a)
            pre_b, m = cb.forward(a, m)
            h = ops.relu_forward(pre_b)
            tape.append((lvl, up.shape[0], pre_a, pre_b))
        y, m = self.head.forward(h, m)
        y = y * c.scale
        self._tape = tape
        self.out_mask = _to_cn(m)
        return _to_cn(y)

    def backward(self, dy):
        c = self.config
        self.grads = {}
        d = self.head.backward(_to_cn(dy.astype(self.dtype, copy=False)) * c.scale)
        tape = self._tape
        dskips = [None] * c.depth
        for _ in range(c.depth - 1):
            lvl, n_up, pre_a, pre_b = tape.pop()
            ca, cb = self.dec[lvl]
            d = cb.backward(ops.relu_backward(pre_b, d))
            d = ca.backward(ops.relu_backward(pre_a, d))
            dskips[lvl] = d[n_up:] * self.skip_scale
            d = ops.upsample_nearest2x_backward(d[:n_up])
        for lvl in range(c.depth - 1, -1, -1):
            _, pre_a, pre_b = tape.pop()
            if dskips[lvl] is not None:
                d = d + dskips[lvl]
            ca, cb = self.enc[lvl]
            d = cb.backward(ops.relu_backward(pre_b, d))
            d = ca.backward(ops.relu_backward(pre_a, d), need_dx=lvl > 0)
        self._tape = None
        return self.grads


def punet_forward(net: PUNet, sino: np.ndarray, valid: np.ndarray, return_raw: bool = False):
    """Inpaint ``(N, 1, A, B)`` sinograms; known bins pass through exactly."""
    valid = np.asarray(valid)
    if not np.all((valid == 0) | (valid == 1)):
        raise ConfigurationError("valid mask must be binary")
    valid = valid.astype(bool)
    sino = np.asarray(sino, dtype=np.float64)
    xp, crop = pad_to_multiple(sino, net.config.multiple)
    mp, _ = pad_to_multiple(valid.astype(np.float64), net.config.multiple)
    raw = net.forward(xp, mp)[(..., *crop)].astype(np.float64)
    if net.config.mode == "residual":
        raw = raw + linear_fill(sino, valid)
    out = np.where(valid, sino, raw)
    return (out, raw) if return_raw else out


def linear_fill(sino: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """Per-row linear interpolation across the hole of every ``(..., A, B)`` sinogram."""
    sino = np.asarray(sino, dtype=np.float64)
    holes = ~np.asarray(valid, dtype=bool)
    flat_s = sino.reshape(-1, *sino.shape[-2:])
    flat_h = np.broadcast_to(holes, sino.shape).reshape(flat_s.shape)
    out = np.stack([limar_inpaint(s, h) for s, h in zip(flat_s, flat_h)])
    return out.reshape(sino.shape)


def unet_forward(net: UNet, img: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Refine ``(N, 1, H, W)`` normalised images; output clamped to ``[0, 1]``."""
    xp, crop = pad_to_multiple(np.asarray(img), net.config.multiple)
    y = net.forward(xp)[(..., *crop)].astype(np.float64)
    return np.clip(y, 0.0, 1.0) if clamp else y


def build_model(kind: str, config: UNetConfig, seed: int = 0) -> _Net:
    if kind == "unet":
        return UNet(config, seed)
    if kind == "punet":
        return PUNet(config, seed)
    raise ConfigurationError(f"unknown model kind {kind!r}")
