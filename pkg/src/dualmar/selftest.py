"""Fast oracle checks runnable from an installed package (``dualmar selftest``)."""

from __future__ import annotations

import tempfile
import time
from pathlib import Path

import numpy as np

from . import io
from .limar import limar_inpaint
from .nn import ops
from .phantom import generate_head_phantom
from .shapes import GenParams, generate_object, make_rng
from .tomo import ProjectionGeometry, iradon_fbp, radon, reconstruction_circle


def _fd_rel_err(f, arr, analytic, h=1e-4):
    num = np.zeros_like(arr)
    for i in np.ndindex(arr.shape):
        orig = arr[i]
        arr[i] = orig + h
        fp = f()
        arr[i] = orig - h
        fm = f()
        arr[i] = orig
        num[i] = (fp - fm) / (2 * h)
    scale = max(np.abs(num).max(), np.abs(analytic).max(), 1e-12)
    return float(np.abs(num - analytic).max() / scale)


def check_tomography():
    g = ProjectionGeometry.for_image(64, 90)
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((2, 64, 64))
    lin = np.abs(radon(2 * x - 3 * y, g) - (2 * radon(x, g) - 3 * radon(y, g))).max()
    lin /= np.abs(radon(x, g)).max()
    img = generate_head_phantom(rng, 64, 1).volume[0]
    rec = iradon_fbp(radon(img, g), g, 64)
    circle = reconstruction_circle(64)
    rmse = np.sqrt(np.mean((rec - img)[circle] ** 2)) / (img.max() - img.min())
    return lin < 1e-9 and rmse < 0.03, f"linearity {lin:.1e}, round-trip rmse {100 * rmse:.2f}% of range"


def check_gradients():
    worst = 0.0
    for seed in range(3):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((1, 2, 5, 5))
        w = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal(2)
        m = (rng.random((1, 1, 5, 5)) < 0.6).astype(float)
        for stride in (1, 2):
            dy = rng.standard_normal(ops.conv2d_forward(x, w, b, stride).shape)
            dx, dw, db = ops.conv2d_backward(x, w, dy, stride)
            f = lambda: float(np.sum(ops.conv2d_forward(x, w, b, stride) * dy))  # noqa: E731
            worst = max(worst, _fd_rel_err(f, x, dx), _fd_rel_err(f, w, dw), _fd_rel_err(f, b, db))
            dx, dw, db = ops.partial_conv2d_backward(x, m, w, b, dy, stride)
            f = lambda: float(np.sum(ops.partial_conv2d_forward(x, m, w, b, stride)[0] * dy))  # noqa: E731
            worst = max(worst, _fd_rel_err(f, w, dw), _fd_rel_err(f, b, db))
    return worst < 1e-4, f"max relative error {worst:.1e}"


def check_partial_conv():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    same = np.array_equal(ops.partial_conv2d_forward(x, np.ones((2, 1, 8, 8)), w, b)[0],
                          ops.conv2d_forward(x, w, b))
    m = (rng.random((2, 1, 8, 8)) < 0.5).astype(float)
    x2 = np.where(m == 0, 1e3, x)
    blind = np.array_equal(ops.partial_conv2d_forward(x, m, w, b)[0],
                           ops.partial_conv2d_forward(x2, m, w, b)[0])
    return same and blind, f"ones-mask equivalence {same}, masked-value independence {blind}"


def check_limar():
    rng = np.random.default_rng(2)
    row = np.interp(np.arange(40), [0, 10, 25, 39], rng.standard_normal(4))
    trace = np.zeros(40, dtype=bool)
    trace[[3, 4, 5, 14, 15, 20, 30, 31]] = True
    out = limar_inpaint(np.where(trace, 9.0, row)[None], trace[None])[0]
    err = float(np.abs(out - row).max())
    return err < 1e-12, f"piecewise-linear recovery error {err:.1e}"


def check_generator():
    rng = make_rng(3)
    p = GenParams()
    ok = True
    for _ in range(50):
        obj = generate_object(rng, p, (16, 128, 128))
        ok &= 1 <= obj.n_primitives <= 25 and obj.n_outliers <= 30
        ok &= all(m <= r + 2 * p.closing_radius for m, r in zip(obj.mask.shape, obj.range_shape))
    return bool(ok), "50 objects within count and size bounds"


def check_tensor_io():
    rng = np.random.default_rng(4)
    a = rng.standard_normal((3, 5, 7)).astype(np.float32)
    m = rng.random((4, 4)) < 0.5
    with tempfile.TemporaryDirectory() as d:
        io.write_named(Path(d) / "t.mtsr", {"a": a, "m": m})
        back = io.read_named(Path(d) / "t.mtsr")
    ok = back["a"].tobytes() == a.tobytes() and np.array_equal(back["m"], m)
    return ok, "bitwise round trip"


SUITES = {
    "tomography": check_tomography,
    "finite-differences": check_gradients,
    "partial-conv": check_partial_conv,
    "li-mar": check_limar,
    "generator": check_generator,
    "tensor-io": check_tensor_io,
}


def run(out=print) -> bool:
    all_ok = True
    for name, fn in SUITES.items():
        t = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as err:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(err).__name__}: {err}"
        all_ok &= ok
        out(f"{'PASS' if ok else 'FAIL'} {name:<20} {detail} ({time.perf_counter() - t:.1f}s)")
    return all_ok
