"""Point-source heat fields: diffusion kernel, atomic measures, noise injection.

The diffusion kernel used throughout is

    G(x, t) = (4*pi*t)**(-dim/2) * exp(-|x|**2 / (2*t)),

i.e. prefactor ``(4*pi*t)**(-dim/2)`` with exponent denominator ``2*t``.
Its total mass is ``2**(-dim/2)``, not 1; the convention is fixed so that a
kernel at time ``t`` has exactly the shape of the autocorrelation bump of
width ``Lambda = t/2`` used by the certificate machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelParams",
    "SparseMeasure",
    "green_kernel",
    "evaluate_field",
    "tv_norm",
    "autocorrelation",
    "add_noise",
]


@dataclass(frozen=True)
class KernelParams:
    """Spatial dimension of the diffusion kernel (the time convention is fixed)."""

    dim: int

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {self.dim}")


def _as_points(x, dim: int) -> tuple[np.ndarray, bool]:
    """Coerce scalar / (dim,) / (n,) / (n, dim) input to (n, dim); flag single points."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if dim != 1:
            raise ValueError(f"scalar point given but dim={dim}")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if dim == 1:
            # one or many 1D points
            return arr.reshape(-1, 1), arr.size == 1
        if arr.size != dim:
            raise ValueError(f"point of length {arr.size} does not match dim={dim}")
        return arr.reshape(1, dim), True
    if arr.ndim == 2 and arr.shape[1] == dim:
        return arr, False
    raise ValueError(f"cannot interpret array of shape {arr.shape} as {dim}-D points")


@dataclass(frozen=True)
class SparseMeasure:
    """Finite atomic signed measure: positions ``(s, dim)`` and amplitudes ``(s,)``."""

    positions: np.ndarray
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        amp = np.atleast_1d(np.asarray(self.amplitudes, dtype=float))
        if pos.ndim != 2:
            raise ValueError("positions must be a (s, dim) array")
        if amp.ndim != 1 or amp.shape[0] != pos.shape[0]:
            raise ValueError("amplitudes must be one scalar per position")
        if pos.shape[1] not in (1, 2):
            raise ValueError(f"spatial dimension must be 1 or 2, got {pos.shape[1]}")
        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(amp)):
            raise ValueError("positions and amplitudes must be finite")
        if pos.shape[0] > 1:
            uniq = np.unique(pos, axis=0)
            if uniq.shape[0] != pos.shape[0]:
                raise ValueError("atom positions must be pairwise distinct")
        pos.setflags(write=False)
        amp.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def from_1d(cls, positions, amplitudes) -> "SparseMeasure":
        pos = np.asarray(positions, dtype=float).reshape(-1, 1)
        return cls(pos, np.asarray(amplitudes, dtype=float))

    @classmethod
    def empty(cls, dim: int) -> "SparseMeasure":
        return cls(np.empty((0, dim)), np.empty(0))

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    def tv_norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes)))

    def scaled(self, factor: float) -> "SparseMeasure":
        return SparseMeasure(self.positions, factor * self.amplitudes)


def green_kernel(displacement, t: float, params: KernelParams):
    """Diffusion kernel (4*pi*t)**(-dim/2) * exp(-|displacement|**2 / (2*t)).

    ``displacement`` may be a scalar (1D), a single point, or an (n, dim)
    array; the return value is a float or an (n,) array accordingly.
    """
    if t <= 0:
        raise ValueError(f"kernel time must be positive, got {t}")
    pts, single = _as_points(displacement, params.dim)
    r2 = np.einsum("nd,nd->n", pts, pts)
    vals = (4.0 * math.pi * t) ** (-params.dim / 2.0) * np.exp(-r2 / (2.0 * t))
    return float(vals[0]) if single else vals


def evaluate_field(mu: SparseMeasure, x, t: float):
    """Field value sum_i c_i * G(x - p_i, t) at one or many points ``x``."""
    if t <= 0:
        raise ValueError(f"field time must be positive, got {t}")
    pts, single = _as_points(x, mu.dim)
    if mu.n_atoms == 0:
        vals = np.zeros(pts.shape[0])
    else:
        diff = pts[:, None, :] - mu.positions[None, :, :]
        r2 = np.einsum("nkd,nkd->nk", diff, diff)
        kern = (4.0 * math.pi * t) ** (-mu.dim / 2.0) * np.exp(-r2 / (2.0 * t))
        vals = kern @ mu.amplitudes
    return float(vals[0]) if single else vals


def tv_norm(mu: SparseMeasure) -> float:
    """Total variation norm of an atomic measure: sum of absolute amplitudes."""
    return mu.tv_norm()


def autocorrelation(x, lam: float) -> float:
    """Gaussian similarity bump exp(-|x|**2 / (4*lam)); equals 1 at x = 0."""
    if lam <= 0:
        raise ValueError(f"width parameter must be positive, got {lam}")
    arr = np.asarray(x, dtype=float)
    r2 = float(np.sum(arr * arr))
    return math.exp(-r2 / (4.0 * lam))


def _standard_normal(n: int, seed: int) -> np.ndarray:
    """n deterministic N(0,1) draws: Box-Muller over a Philox counter stream."""
    gen = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    m = (n + 1) // 2
    u1 = gen.random(m)
    u2 = gen.random(m)
    r = np.sqrt(-2.0 * np.log1p(-u1))  # 1 - u1 in (0, 1], no log(0)
    z = np.concatenate([r * np.cos(2.0 * math.pi * u2), r * np.sin(2.0 * math.pi * u2)])
    return z[:n]


def add_noise(b, snr_db: float, seed: int) -> np.ndarray:
    """Add white Gaussian noise at the given SNR (dB); deterministic in ``seed``.

    The per-entry noise variance is ``|b|_2^2 * 10**(-snr_db/10) / len(b)``.
    ``snr_db = inf`` returns ``b`` unchanged.
    """
    b = np.asarray(b, dtype=float)
    if math.isinf(snr_db):
        if snr_db > 0:
            return b.copy()
        raise ValueError("snr_db = -inf is not meaningful")
    energy = float(b @ b)
    if energy == 0.0:
        raise ValueError("SNR is undefined for an all-zero signal")
    var = energy * 10.0 ** (-snr_db / 10.0) / b.size
    return b + math.sqrt(var) * _standard_normal(b.size, seed)
