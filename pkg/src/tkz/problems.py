"""Test problems: random low-rank systems, Gaussian blur operators, metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import toeplitz

from .sampling import make_rng
from .tensor import DEFAULT_RANK_TOL, as_tensor3, fro_norm, t_pinv, t_product

STREAM_SYNTH_SLICE = 0x5EED_0101
STREAM_SYNTH_TRUTH = 0x5EED_0102
STREAM_VIDEO = 0x5EED_0103

PSNR_CAP = 999.0


class InconsistentSystemError(ValueError):
    """Raised when ``A * pinv(A) * B`` does not reproduce ``B``."""


@dataclass
class ProblemInstance:
    """A consistent system ``A * X = B`` with optional ground truth.

    ``x_star0`` is the least-norm solution ``pinv(A) * B`` (the limit of every
    solver started from zero); ``x_true`` is the tensor ``B`` was generated
    from, when known.
    """

    A: np.ndarray
    B: np.ndarray
    x_star0: Optional[np.ndarray] = None
    x_true: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = as_tensor3(self.A)
        self.B = as_tensor3(self.B)
        if self.A.shape[0] != self.B.shape[0] or self.A.shape[2] != self.B.shape[2]:
            raise ValueError(f"A {self.A.shape} and B {self.B.shape} do not match")

    @property
    def solution_shape(self):
        m, l, n = self.A.shape
        return (l, self.B.shape[1], n)


@dataclass(frozen=True)
class SyntheticSpec:
    m: int
    l: int
    n: int
    p: int
    r: int
    kappa: float
    seed: int = 0

    def __post_init__(self):
        if min(self.m, self.l, self.n, self.p, self.r) < 1:
            raise ValueError("all dimensions and the rank must be positive")
        if self.r > min(self.m, self.l):
            raise ValueError(f"rank {self.r} exceeds min(m, l) = {min(self.m, self.l)}")
        if not self.kappa > 1:
            raise ValueError("kappa must exceed 1")


@dataclass(frozen=True)
class BlurSpec:
    l: int
    n: int
    band: int = 6
    sigma: float = 1.8

    def __post_init__(self):
        if not 1 <= self.band <= self.l:
            raise ValueError(f"band must lie in [1, {self.l}]")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.n > self.l:
            raise ValueError("depth cannot exceed the image side (slice weights come from M2[:, 0])")


def gen_synthetic(spec: SyntheticSpec, rank_tol: float = DEFAULT_RANK_TOL) -> ProblemInstance:
    """Random system with frontal slices ``U_i D_i V_i^T`` of rank ``r``.

    ``D_i`` has diagonal entries uniform in ``(1, kappa)``.  Each slice draws
    from its own sub-stream, so changing ``n`` leaves earlier slices intact.
    """
    m, l, n, p, r = spec.m, spec.l, spec.n, spec.p, spec.r
    A = np.empty((m, l, n))
    for i in range(n):
        rng = make_rng(spec.seed, STREAM_SYNTH_SLICE, i)
        U, _ = np.linalg.qr(rng.standard_normal((m, r)))
        V, _ = np.linalg.qr(rng.standard_normal((l, r)))
        d = 1.0 + (spec.kappa - 1.0) * rng.random(r)
        A[:, :, i] = (U * d) @ V.T
    x_true = make_rng(spec.seed, STREAM_SYNTH_TRUTH).standard_normal((l, p, n))
    B = t_product(A, x_true)
    x_star0 = least_norm_solution(A, B, rank_tol=rank_tol)
    meta = {"kind": "synthetic", **spec.__dict__}
    return ProblemInstance(A, B, x_star0=x_star0, x_true=x_true, meta=meta)


def blur_matrices(spec: BlurSpec):
    """The two Toeplitz factors ``(M1, M2)`` of the Gaussian blur tensor."""
    l, band, sigma = spec.l, spec.band, spec.sigma
    z1 = np.zeros(l)
    z1[:band] = np.exp(-(np.arange(band) ** 2) / (2.0 * sigma**2))
    z2 = np.concatenate(([z1[0]], z1[1:][::-1]))
    scale = 1.0 / math.sqrt(2.0 * math.pi * sigma)
    return scale * toeplitz(z1), scale * toeplitz(z1, z2)


def gen_blur(spec: BlurSpec) -> np.ndarray:
    """Blur tensor with frontal slices ``A[:, :, j] = M2[j, 0] * M1``."""
    M1, M2 = blur_matrices(spec)
    return M1[:, :, None] * M2[: spec.n, 0][None, None, :]


def synthetic_video(l: int, p: int, n: int, seed: int = 0, objects: int = 6) -> np.ndarray:
    """Traffic-like clip in [0, 1]: sharp-edged boxes drifting over a shaded road.

    Hard edges matter; smooth content is deblurred in a couple of sweeps and
    makes every solver look alike.
    """
    rng = make_rng(seed, STREAM_VIDEO)
    yy, xx = np.mgrid[0:l, 0:p].astype(float)
    background = 0.3 + 0.2 * yy / l + 0.05 * np.sin(xx / 3.0)
    pos = rng.uniform([0, 0], [l, p], size=(objects, 2))
    vel = rng.uniform(-2.0, 2.0, size=(objects, 2))
    half = rng.uniform(3.0, 8.0, size=(objects, 2))
    amp = rng.uniform(-0.3, 0.6, size=objects)
    frames = np.empty((l, p, n))
    for t in range(n):
        f = background.copy()
        for o in range(objects):
            cy, cx = pos[o] + t * vel[o]
            f += amp[o] * ((np.abs(yy - cy) < half[o, 0]) & (np.abs(xx - cx) < half[o, 1]))
        frames[:, :, t] = f
    frames -= frames.min()
    return frames / frames.max()


def blur_problem(truth, spec: BlurSpec, rank_tol: float = DEFAULT_RANK_TOL) -> ProblemInstance:
    """Deblurring instance ``B = A * truth`` for a ground-truth ``l x p x n`` tensor."""
    truth = as_tensor3(truth)
    if truth.shape[0] != spec.l or truth.shape[2] != spec.n:
        raise ValueError(f"truth shape {truth.shape} does not match blur spec {spec}")
    A = gen_blur(spec)
    B = t_product(A, truth)
    x_star0 = least_norm_solution(A, B, rank_tol=rank_tol)
    meta = {"kind": "blur", **spec.__dict__}
    return ProblemInstance(A, B, x_star0=x_star0, x_true=truth, meta=meta)


def least_norm_solution(A, B, rank_tol: float = DEFAULT_RANK_TOL, check: float = 1e-8) -> np.ndarray:
    """``pinv(A) * B``; raises if the system is not consistent to ``check``."""
    X = t_product(t_pinv(A, rank_tol), B)
    bnorm = fro_norm(B)
    if check is not None and fro_norm(t_product(A, X) - B) > check * max(bnorm, np.finfo(float).tiny):
        raise InconsistentSystemError("A * pinv(A) * B differs from B: system is inconsistent")
    return X


def rse(x, x_star0, x0) -> float:
    """Relative squared error ``||x - x*||^2 / ||x0 - x*||^2``."""
    den = fro_norm(np.asarray(x0) - x_star0) ** 2
    if den == 0.0:
        raise ValueError("x0 coincides with the reference solution; RSE undefined")
    return fro_norm(np.asarray(x) - x_star0) ** 2 / den


def psnr(frame_est, frame_ref, peak: Optional[float] = None) -> float:
    """Peak signal-to-noise ratio in dB; ``peak`` defaults to ``max(frame_ref)``.

    A perfect match returns the finite sentinel ``PSNR_CAP``.
    """
    frame_est = np.asarray(frame_est, dtype=float)
    frame_ref = np.asarray(frame_ref, dtype=float)
    if peak is None:
        peak = float(frame_ref.max())
    mse = float(np.mean((frame_est - frame_ref) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return 10.0 * math.log10(peak**2 / mse)
