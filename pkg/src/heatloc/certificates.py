"""Certificate lab: explicit soft-recovery certificates and their guarantees.

The construction approximates a Gaussian similarity bump centered at an
arbitrary point by a combination of equally wide Gaussians centered on a
uniform sample grid.  The combination coefficients come from approximating a
plane wave by a trigonometric polynomial via convolution with a Jackson
kernel; their l2 norm never exceeds 1, and the uniform approximation error
decays like one over the grid half-density.

With such a certificate in hand, the three soft-recovery conditions (anchor
value at least 1, point bound sigma, off-support bound 1 - tau) are checked
on a dense evaluation mesh, and the resulting localization radii for the
noiseless and noisy programs are evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .field import SparseMeasure
from .operators import (
    DictionaryMatrix,
    DualCertificate,
    MeasurementOperator,
    SampleSet,
)
from .solvers import operator_norm_estimate

__all__ = [
    "CertConfig",
    "JacksonCoefficients",
    "CertificateApproximation",
    "CertificateReport",
    "jackson_kernel",
    "jackson_coefficients",
    "grid_sample_set",
    "build_certificate_g",
    "calibrated_certificate",
    "verify_soft_conditions",
    "recovery_radius",
    "noisy_recovery_radius",
    "verify_soft_stable_inequality",
    "smallest_feasible_m",
    "project_l1_ball",
]

_NORM_CACHE: dict[tuple[int, int], float] = {}
_MULT_CACHE: dict[tuple[int, int], np.ndarray] = {}


@dataclass(frozen=True)
class CertConfig:
    """Certificate construction parameters.

    ``lam`` is the width of the similarity bump; samples live on a uniform
    grid of spacing 1/m over [-1, 1]^dim, all taken at time t = 2*lam so the
    sampled kernels have exactly the bump's width.
    """

    lam: float
    m: int
    p_jackson: int
    quadrature_points: int = 4096
    dim: int = 2
    mesh_points: int = 2048

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError("width parameter lam must be positive")
        if self.m < 1 or self.p_jackson < 1 or self.quadrature_points < 64:
            raise ValueError("m, p_jackson and quadrature_points must be positive")
        if self.dim not in (1, 2):
            raise ValueError("dim must be 1 or 2")

    @property
    def t(self) -> float:
        return 2.0 * self.lam


def _jackson_nodes(p: int, n_quad: int) -> np.ndarray:
    n = max(n_quad, 8 * p)
    return -math.pi + 2.0 * math.pi * np.arange(n) / n


def _jackson_raw(p: int, x: np.ndarray) -> np.ndarray:
    """(sin(p x/2) / sin(x/2))**4 with the continuous extension p**4 at x = 0."""
    half = 0.5 * np.asarray(x, dtype=float)
    s = np.sin(half)
    ratio = np.full_like(half, float(p))
    mask = np.abs(s) >= 1e-14
    ratio[mask] = np.sin(p * half[mask]) / s[mask]
    return ratio**4


def _jackson_norm(p: int, n_quad: int) -> float:
    key = (p, max(n_quad, 8 * p))
    if key not in _NORM_CACHE:
        nodes = _jackson_nodes(p, n_quad)
        integral = 2.0 * math.pi * float(np.mean(_jackson_raw(p, nodes)))
        _NORM_CACHE[key] = 1.0 / integral
    return _NORM_CACHE[key]


def jackson_kernel(p: int, x) -> np.ndarray | float:
    """Fourth-power trigonometric kernel on [-pi, pi], normalized to unit integral."""
    if p < 1:
        raise ValueError("kernel order p must be >= 1")
    arr = np.asarray(x, dtype=float)
    vals = _jackson_norm(p, 4096) * _jackson_raw(p, arr)
    return float(vals) if np.isscalar(x) or arr.ndim == 0 else vals


def _jackson_multiplier(p: int, n_quad: int) -> np.ndarray:
    """Fourier multipliers m_p(n) = int J_p(x) exp(-i n x) dx for n = 0..2p.

    The quadrature is exact: the integrands are trigonometric polynomials of
    degree below the node count.
    """
    key = (p, max(n_quad, 8 * p))
    if key not in _MULT_CACHE:
        nodes = _jackson_nodes(p, n_quad)
        vals = _jackson_norm(p, n_quad) * _jackson_raw(p, nodes)
        n = np.arange(2 * p + 1)
        phase = np.exp(-1j * n[:, None] * nodes[None, :])
        mult = 2.0 * math.pi * (phase @ vals) / nodes.size
        _MULT_CACHE[key] = np.real(mult)
    return _MULT_CACHE[key]


def _prolonged_wave(delta: float, theta: np.ndarray) -> np.ndarray:
    """Plane wave exp(i*delta*theta) on [-pi/2, pi/2], linearly bridged to its
    periodic continuation on [pi/2, 3pi/2]; 2*pi periodic and Lipschitz.
    """
    th = np.mod(theta + 0.5 * math.pi, 2.0 * math.pi) - 0.5 * math.pi
    out = np.empty(th.shape, dtype=complex)
    wave = th <= 0.5 * math.pi
    out[wave] = np.exp(1j * delta * th[wave])
    left = np.exp(1j * math.pi * delta / 2.0)
    right = np.exp(-1j * math.pi * delta / 2.0)
    slope = (right - left) / math.pi
    out[~wave] = left + (th[~wave] - 0.5 * math.pi) * slope
    return out


def _wave_coeffs(delta: float, p: int, n_quad: int) -> np.ndarray:
    """Fourier coefficients of the prolonged plane wave for n = -2p..2p."""
    n_nodes = max(n_quad, 8 * p)
    theta = -math.pi + 2.0 * math.pi * np.arange(n_nodes) / n_nodes
    vals = _prolonged_wave(delta, theta)
    n = np.arange(-2 * p, 2 * p + 1)
    phase = np.exp(-1j * n[:, None] * theta[None, :])
    return (phase @ vals) / n_nodes


@dataclass(frozen=True)
class JacksonCoefficients:
    """Per-axis combination coefficients c_n, |n| <= 2p, with l2 norm <= 1."""

    axes: tuple[np.ndarray, ...]
    offsets: np.ndarray

    @property
    def norm(self) -> float:
        out = 1.0
        for a in self.axes:
            out *= float(np.linalg.norm(a))
        return out

    def dense(self) -> np.ndarray:
        if len(self.axes) == 1:
            return self.axes[0]
        return np.outer(self.axes[0], self.axes[1])


def jackson_coefficients(delta, p: int, n_quad: int = 4096) -> JacksonCoefficients:
    """Coefficients approximating exp(i*delta.omega) by sum c_n exp(i*n.omega).

    ``delta`` must lie in [-1/2, 1/2] per coordinate.  The approximation is
    uniform over [-pi/2, pi/2] per axis with error O(1/p), and the coefficient
    vector always satisfies |c|_2 <= 1 (up to quadrature round-off).
    """
    if p < 1:
        raise ValueError("kernel order p must be >= 1")
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    if np.any(np.abs(d) > 0.5):
        raise ValueError(f"delta must lie in [-1/2, 1/2] per coordinate, got {d}")
    mult = _jackson_multiplier(p, n_quad)
    full_mult = mult[np.abs(np.arange(-2 * p, 2 * p + 1))]
    axes = tuple(_wave_coeffs(dj, p, n_quad) * full_mult for dj in d)
    coeffs = JacksonCoefficients(axes, np.arange(-2 * p, 2 * p + 1))
    if coeffs.norm > 1.0 + 1e-8:
        raise RuntimeError(f"coefficient norm {coeffs.norm} exceeds 1; quadrature too coarse")
    return coeffs


def grid_sample_set(cfg: CertConfig) -> SampleSet:
    """Uniform sensor grid of spacing 1/m over [-1, 1]^dim, all at time 2*lam."""
    axis = np.arange(-cfg.m, cfg.m + 1) / cfg.m
    return SampleSet.grid((axis,) * cfg.dim, cfg.t)


@dataclass(frozen=True)
class CertificateApproximation:
    """A grid certificate approximating ``scale`` times the bump at ``p0``."""

    certificate: DualCertificate
    p0: np.ndarray
    scale: float
    sup_error: float
    tail_bound: float
    coeff_norm: float
    weight_norm: float
    imag_residue: float

    def scaled(self, factor: float) -> "CertificateApproximation":
        cert = DualCertificate(self.certificate.op, self.certificate.weights * factor)
        return replace(
            self,
            certificate=cert,
            scale=self.scale * factor,
            sup_error=self.sup_error * factor,
            tail_bound=self.tail_bound * factor,
            weight_norm=self.weight_norm * factor,
            imag_residue=self.imag_residue * factor,
        )


def _bump_mesh(axes, p0: np.ndarray, lam: float) -> np.ndarray:
    factors = [np.exp(-((ax - c) ** 2) / (4.0 * lam)) for ax, c in zip(axes, p0)]
    if len(factors) == 1:
        return factors[0]
    return np.outer(factors[0], factors[1])


def build_certificate_g(cfg: CertConfig, p0, scale: float = 1.0) -> CertificateApproximation:
    """Grid-sample weights whose induced function approximates scale * bump(x - p0).

    ``p0`` must lie in [-1/2, 1/2]^dim.  The weights place one combination
    coefficient on the sample nearest each translate of p0; the reported
    sup-error is measured on a dense mesh wide enough that the analytic tail
    beyond it is negligible (returned as ``tail_bound``).
    """
    t = cfg.t
    p0 = np.atleast_1d(np.asarray(p0, dtype=float))
    if p0.shape != (cfg.dim,):
        raise ValueError(f"p0 must be a point of dimension {cfg.dim}")
    if np.any(np.abs(p0) > 0.5):
        raise ValueError("p0 must lie in [-1/2, 1/2] per coordinate")
    samples = grid_sample_set(cfg)
    op = MeasurementOperator(samples)

    n0 = np.rint(p0 * cfg.m).astype(int)
    delta = p0 * cfg.m - n0
    coeffs = jackson_coefficients(delta, cfg.p_jackson, cfg.quadrature_points)
    idx_axes = [n0[j] + coeffs.offsets + cfg.m for j in range(cfg.dim)]
    for idx in idx_axes:
        if idx.min() < 0 or idx.max() > 2 * cfg.m:
            raise ValueError(
                "candidate grid does not contain the required translates; "
                "need m >= 4*p_jackson (plus room for p0 away from the center)"
            )
    pref_inv = (4.0 * math.pi * t) ** (cfg.dim / 2.0)
    if cfg.dim == 1:
        w = np.zeros(2 * cfg.m + 1, dtype=complex)
        w[idx_axes[0]] = scale * pref_inv * coeffs.axes[0]
    else:
        w = np.zeros((2 * cfg.m + 1, 2 * cfg.m + 1), dtype=complex)
        w[np.ix_(idx_axes[0], idx_axes[1])] = (
            scale * pref_inv * np.outer(coeffs.axes[0], coeffs.axes[1])
        )
    cert = DualCertificate(op, w.ravel())

    lam1 = float(np.sum(np.abs(cert.weights)))
    amp = lam1 / pref_inv + abs(scale)
    pad = math.sqrt(2.0 * t * math.log(max(amp, 1.0) * 1e13 / max(abs(scale), 1e-300)))
    mesh = np.linspace(-1.0 - pad, 1.0 + pad, cfg.mesh_points)
    g_mesh = cert.on_mesh((mesh,) * cfg.dim)
    target = scale * _bump_mesh((mesh,) * cfg.dim, p0, cfg.lam)
    sup_error = float(np.max(np.abs(g_mesh - target)))
    tail = amp * math.exp(-pad * pad / (2.0 * t))
    weight_norm = abs(scale) * pref_inv * coeffs.norm

    return CertificateApproximation(
        certificate=cert,
        p0=p0,
        scale=scale,
        sup_error=sup_error,
        tail_bound=tail,
        coeff_norm=coeffs.norm,
        weight_norm=weight_norm,
        imag_residue=float(np.max(np.abs(np.imag(g_mesh)))),
    )


def calibrated_certificate(cfg: CertConfig, mu0: SparseMeasure, i0: int) -> CertificateApproximation:
    """Certificate at atom i0 of mu0, scaled so the anchor condition holds with equality."""
    _check_normalized(mu0)
    base = build_certificate_g(cfg, mu0.positions[i0], scale=1.0)
    anchor = float(
        np.sum(mu0.amplitudes * np.real(np.atleast_1d(base.certificate(mu0.positions))))
    )
    if anchor <= 0:
        raise ValueError("unit-scale certificate has non-positive anchor; grid too coarse")
    return base.scaled(1.0 / anchor)


@dataclass(frozen=True)
class CertificateReport:
    """Tightest soft-recovery parameters of a certificate, mesh margins included."""

    sigma: float
    tau: float
    feasible: bool
    sup_error: float
    coeff_norm: float
    weight_norm: float
    anchor: float
    tau_mesh: float
    mesh_margin: float
    tail_bound: float
    bound_noiseless: float
    bound_noisy: float
    p0: np.ndarray
    i0: int


def _check_normalized(mu0: SparseMeasure) -> None:
    if mu0.n_atoms == 0:
        raise ValueError("measure must have at least one atom")
    if np.any(mu0.amplitudes <= 0):
        raise ValueError("soft-recovery conditions assume positive amplitudes")
    if abs(float(np.sum(mu0.amplitudes)) - 1.0) > 1e-9:
        raise ValueError("soft-recovery conditions assume amplitudes summing to 1")


def _mesh_values(g, axes) -> np.ndarray:
    try:
        return np.asarray(g.on_mesh(axes))
    except (AttributeError, ValueError):
        pass
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    chunks = []
    for start in range(0, pts.shape[0], 262144):
        chunks.append(np.atleast_1d(g(pts[start : start + 262144])))
    flat = np.concatenate(chunks)
    return flat.reshape([len(a) for a in axes])


def _gradient_bound(g, axes, values: np.ndarray) -> float:
    try:
        return float(g.gradient_bound())
    except AttributeError:
        pass
    # fall back to a finite-difference estimate on the evaluation mesh
    bound = 0.0
    for axis in range(values.ndim):
        h = axes[axis][1] - axes[axis][0]
        bound = max(bound, float(np.max(np.abs(np.diff(values, axis=axis)))) / h)
    return 2.0 * bound


def verify_soft_conditions(
    g,
    mu0: SparseMeasure,
    i0: int,
    lam: float,
    *,
    coeff_norm: float = math.nan,
    eps: float = 0.0,
    rho: float = 1.0,
    mesh_points: int = 2048,
    box: tuple | None = None,
) -> CertificateReport:
    """Evaluate the three soft-recovery conditions of ``g`` for atom ``i0``.

    Returns the tightest (sigma, tau) the certificate supports: sigma is the
    certificate modulus at the anchor atom, and tau is one minus the measured
    sup of |g - bump * g(p0)| over a dense mesh, shrunk by an off-mesh
    Lipschitz margin and a Gaussian tail bound for the region beyond the mesh.
    """
    _check_normalized(mu0)
    if lam <= 0:
        raise ValueError("width parameter lam must be positive")
    p0 = mu0.positions[i0]

    at_atoms = np.atleast_1d(g(mu0.positions))
    anchor = float(np.sum(mu0.amplitudes * np.real(at_atoms)))
    g0 = complex(np.asarray(g(p0)).item())
    sigma = abs(g0)

    weights = getattr(g, "weights", None)
    if box is None:
        samples = getattr(getattr(g, "op", None), "samples", None)
        base_lo = np.minimum(np.min(mu0.positions, axis=0), p0)
        base_hi = np.maximum(np.max(mu0.positions, axis=0), p0)
        if samples is not None:
            base_lo = np.minimum(base_lo, np.min(samples.xs, axis=0))
            base_hi = np.maximum(base_hi, np.max(samples.xs, axis=0))
        amp = sigma + 1.0
        if weights is not None and samples is not None:
            t_min = float(np.min(samples.ts))
            pref = (4.0 * math.pi * t_min) ** (-mu0.dim / 2.0)
            amp += float(np.sum(np.abs(weights))) * pref
        pad = math.sqrt(4.0 * lam * math.log(amp * 1e13))
        lo, hi = base_lo - pad, base_hi + pad
        tail = amp * math.exp(-pad * pad / (4.0 * lam))
    else:
        lo = np.atleast_1d(np.asarray(box[0], dtype=float))
        hi = np.atleast_1d(np.asarray(box[1], dtype=float))
        tail = 0.0  # caller-supplied box: tail treated as out of scope

    axes = [np.linspace(lo[j], hi[j], mesh_points) for j in range(mu0.dim)]
    values = _mesh_values(g, axes)
    bump = _bump_mesh(axes, p0, lam)
    sup_mesh = float(np.max(np.abs(values - g0 * bump)))

    h = max(float(a[1] - a[0]) for a in axes)
    lip_bump = sigma * math.exp(-0.5) / math.sqrt(2.0 * lam)
    lip_g = _gradient_bound(g, axes, values)
    margin = (lip_g + lip_bump) * 0.5 * h * math.sqrt(mu0.dim)

    tau_mesh = 1.0 - sup_mesh
    tau = tau_mesh - margin - tail
    feasible = anchor >= 1.0 - 1e-9 and 0.0 < tau <= 1.0

    weight_norm = float(np.linalg.norm(weights)) if weights is not None else math.nan
    bound_noiseless = math.nan
    bound_noisy = math.nan
    if feasible and tau <= sigma * (1.0 + 1e-12):
        bound_noiseless = recovery_radius(tau, sigma, lam)
        if not math.isnan(weight_norm):
            level = tau / sigma - (2.0 * weight_norm * eps + (rho - 1.0)) / (rho * sigma)
            if 0.0 < level:
                bound_noisy = math.sqrt(4.0 * lam * math.log(1.0 / level))

    return CertificateReport(
        sigma=sigma,
        tau=tau,
        feasible=feasible,
        sup_error=sup_mesh,
        coeff_norm=coeff_norm,
        weight_norm=weight_norm,
        anchor=anchor,
        tau_mesh=tau_mesh,
        mesh_margin=margin,
        tail_bound=tail,
        bound_noiseless=bound_noiseless,
        bound_noisy=bound_noisy,
        p0=p0,
        i0=i0,
    )


def recovery_radius(tau: float, sigma: float, lam: float) -> float:
    """Localization radius sqrt(4*lam*log(sigma/tau)) guaranteed by a certificate."""
    if not 0.0 < tau <= sigma * (1.0 + 1e-12):
        raise ValueError(f"need 0 < tau <= sigma, got tau={tau}, sigma={sigma}")
    if lam <= 0:
        raise ValueError("width parameter lam must be positive")
    return math.sqrt(4.0 * lam * math.log(max(sigma / tau, 1.0)))


def noisy_recovery_radius(
    tau: float, sigma: float, lam: float, lambda_norm: float, eps: float, rho: float
) -> float:
    """Localization radius under noise level eps and TV budget rho >= 1.

    The effective certificate level drops to
    tau/sigma - (2*|lambda|_2*eps + (rho - 1)) / (rho*sigma);
    the bound is vacuous (raises) when that level is not positive.
    """
    if rho < 1.0:
        raise ValueError("rho must be >= 1")
    if eps < 0.0:
        raise ValueError("eps must be >= 0")
    if not 0.0 < tau <= sigma * (1.0 + 1e-12):
        raise ValueError(f"need 0 < tau <= sigma, got tau={tau}, sigma={sigma}")
    level = tau / sigma - (2.0 * lambda_norm * eps + (rho - 1.0)) / (rho * sigma)
    if level <= 0.0:
        raise ValueError(f"noise level makes the bound vacuous (level={level})")
    return math.sqrt(4.0 * lam * math.log(1.0 / min(level, 1.0)))


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto the l1 ball of the given radius."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    v = np.asarray(v, dtype=float)
    if np.sum(np.abs(v)) <= radius:
        return v.copy()
    a = np.sort(np.abs(v))[::-1]
    cum = np.cumsum(a)
    k = np.arange(1, a.size + 1)
    ok = a - (cum - radius) / k > 0
    k_star = int(np.max(np.nonzero(ok)[0])) + 1
    theta = (cum[k_star - 1] - radius) / k_star
    return np.sign(v) * np.maximum(np.abs(v) - theta, 0.0)


def _l1_ball_least_squares(
    E: np.ndarray, b: np.ndarray, radius: float, max_iters: int = 200_000, tol: float = 1e-9
) -> tuple[np.ndarray, bool]:
    """min |E x - b|_2 s.t. |x|_1 <= radius, by accelerated projected gradient.

    Convergence is declared on a windowed relative-objective stall; the
    highly coherent dictionaries this is used on have nearly flat optimal
    faces along which mass keeps sloshing at machine level long after the
    objective and the support have stabilized.
    """
    L = operator_norm_estimate(E)
    step = 1.0 / (1.05 * L * L)
    x = np.zeros(E.shape[1])
    y = x.copy()
    t_k = 1.0
    prev_obj = math.inf
    for it in range(max_iters):
        grad = E.T @ (E @ y - b)
        x_new = project_l1_ball(y - step * grad, radius)
        obj_new = float(np.sum((E @ x_new - b) ** 2))
        if obj_new > float(np.sum((E @ x - b) ** 2)):
            # restart the momentum when it overshoots
            t_k = 1.0
            y = x.copy()
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k * t_k))
        y = x_new + ((t_k - 1.0) / t_next) * (x_new - x)
        x, t_k = x_new, t_next
        if (it + 1) % 500 == 0:
            if abs(prev_obj - obj_new) <= tol * max(1.0, obj_new):
                return x, True
            prev_obj = obj_new
    return x, False


def verify_soft_stable_inequality(
    A: DictionaryMatrix,
    b: np.ndarray,
    report: CertificateReport,
    lam: float,
    rho: float,
    eps: float,
    *,
    max_iters: int = 200_000,
) -> bool | None:
    """Check the noisy soft-recovery conclusion on a finite grid instance.

    Solves min |A x - b| subject to |x|_1 <= rho, and tests whether some
    support atom x_j of the minimizer satisfies
    bump(x_j - p0) >= (rho*tau - 2*|lambda|_2*eps + 1 - rho) / (rho*sigma).
    Returns None when the inner solve does not converge.
    """
    if rho < 1.0:
        raise ValueError("rho must be >= 1")
    b = np.asarray(b, dtype=float)
    x, ok = _l1_ball_least_squares(A.entries, b, rho, max_iters=max_iters)
    if not ok:
        return None
    rhs = (rho * report.tau - 2.0 * report.weight_norm * eps + 1.0 - rho) / (rho * report.sigma)
    xmax = float(np.max(np.abs(x))) if x.size else 0.0
    if xmax == 0.0:
        return rhs <= 0.0
    supp = np.abs(x) > 1e-6 * xmax
    diffs = A.points[supp] - report.p0[None, :]
    overlaps = np.exp(-np.einsum("nd,nd->n", diffs, diffs) / (4.0 * lam))
    return bool(np.max(overlaps) >= rhs - 1e-9)


def smallest_feasible_m(
    lam: float,
    mu0: SparseMeasure,
    i0: int,
    m_values,
    p_rule=None,
    **cert_kwargs,
) -> tuple[int, CertificateReport] | None:
    """First m in ``m_values`` whose calibrated certificate is feasible.

    ``p_rule`` maps m to the kernel order; the default m // 4 is the largest
    order whose translates fit inside the grid.
    """
    p_rule = p_rule or (lambda m: max(1, m // 4))
    for m in sorted(m_values):
        try:
            cfg = CertConfig(lam=lam, m=int(m), p_jackson=int(p_rule(m)), dim=mu0.dim, **cert_kwargs)
            approx = calibrated_certificate(cfg, mu0, i0)
            report = verify_soft_conditions(
                approx.certificate, mu0, i0, lam, coeff_norm=approx.coeff_norm
            )
        except ValueError:
            continue
        if report.feasible:
            return int(m), report
    return None
