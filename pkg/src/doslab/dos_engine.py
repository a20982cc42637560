"""Density-of-states estimation and closed-form DOS oracles.

Two independent estimator paths:

* the moment path: per Monte Carlo sample, the box at the dependence radius
  of the polynomial degree is assembled with open boundary, so projected
  traces of polynomials in H equal their infinite-volume values exactly (the
  counting lemma); functionals of Bernstein approximants are evaluated
  through local spectral quadrature (Lanczos nodes/weights at the projection
  sites), which is the numerically stable repackaging of the moment vector;

* the histogram path: full diagonalization of a periodic box, eigenvalue
  counts deposited into bins; carries an uncorrected O(surface/volume)
  finite-volume bias reported in the estimate metadata.

Closed forms: the free-lattice DOSf and its Fourier transform, the Lloyd
model (Cauchy disorder), and the Kesten measure on the Bethe lattice.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaln, xlogy

from . import lattice_ops as lat
from ._bessel import besselj0
from .lattice_ops import HamiltonianBox, ModelSpec

# optimal constant in the Bernstein approximation error (Sikkema's constant)
C_BERNSTEIN = (4306.0 + 837.0 * np.sqrt(6.0)) / 5832.0

FREE_DOSF_STEP = 1.0 / 2048.0  # grid step of the cached d-fold self-convolution

_MAX_BERNSTEIN_DEGREE = 10 ** 6


class DosError(ValueError):
    """Invalid estimator input or failed numerical contract."""


# ---------------------------------------------------------------------------
# test functions and Bernstein machinery
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TestFunction:
    """Lipschitz test function with its exact constants."""

    fn: Callable
    lip_constant: float
    sup_norm: float
    label: str = ""

    def __call__(self, x):
        return self.fn(x)

    @property
    def lip_norm(self) -> float:
        """||f||_inf + L_f."""
        return self.sup_norm + self.lip_constant


@dataclass(frozen=True, eq=False)
class BernsteinPolynomial:
    """Bernstein approximant B_n[f o phi^{-1}] o phi on [-r, r], phi(x) = (x+r)/(2r).

    Stored by its node values f(2r k/n - r); evaluation uses the positive
    Bernstein basis in log space (no cancellation at any degree).  The raw
    power-basis coefficient vector is available for small degrees but is
    numerically meaningless beyond degree ~25 in double precision.
    """

    degree: int
    half_width: float
    node_values: np.ndarray

    def basis_matrix(self, x) -> np.ndarray:
        """Matrix B[k, i] = b_{k,n}((x_i + r)/(2r)), columns normalized to sum 1."""
        n, r = self.degree, self.half_width
        t = np.clip((np.asarray(x, dtype=float) + r) / (2.0 * r), 0.0, 1.0)
        k = np.arange(n + 1)
        logc = gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)
        logb = logc[:, None] + xlogy(k[:, None], t[None, :]) \
            + xlogy((n - k)[:, None], (1.0 - t)[None, :])
        B = np.exp(logb)
        B /= B.sum(axis=0, keepdims=True)  # partition of unity, exactly
        return B

    def evaluate(self, x):
        x_arr = np.atleast_1d(np.asarray(x, dtype=float))
        vals = self.node_values @ self.basis_matrix(x_arr)
        return float(vals[0]) if np.ndim(x) == 0 else vals

    __call__ = evaluate

    def power_coefficients(self) -> np.ndarray:
        """Coefficients c_j with f_n(x) = sum c_j x^j on [-r, r].

        Exact binomial convolution; only meaningful for small degrees.
        """
        n, r = self.degree, self.half_width
        coef_t = np.zeros(n + 1)
        for k in range(n + 1):
            # C(n,k) t^k (1-t)^{n-k}
            c = np.exp(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))
            one_minus = np.zeros(n - k + 1)
            for i in range(n - k + 1):
                one_minus[i] = (-1) ** i * np.exp(
                    gammaln(n - k + 1) - gammaln(i + 1) - gammaln(n - k - i + 1))
            term = np.zeros(n + 1)
            term[k:k + len(one_minus)] = c * one_minus
            coef_t += self.node_values[k] * term
        # substitute t = (x + r)/(2r) = 0.5 + x/(2r)
        poly = np.polynomial.Polynomial([0.0])
        t_poly = np.polynomial.Polynomial([0.5, 0.5 / r])
        power = np.polynomial.Polynomial([1.0])
        for j in range(n + 1):
            poly = poly + coef_t[j] * power
            power = power * t_poly
        return poly.coef


def bernstein_approx(f, n: int, r: float) -> BernsteinPolynomial:
    """Degree-n Bernstein approximant of f on [-r, r].

    Satisfies ||f_n - f||_inf <= bernstein_error_bound(L_f, r, n).
    """
    if n < 1:
        raise DosError("Bernstein degree must be >= 1")
    if n > _MAX_BERNSTEIN_DEGREE:
        raise DosError("Bernstein degree too large for log-space binomials")
    nodes = 2.0 * r * np.arange(n + 1) / n - r
    fn = f.fn if isinstance(f, TestFunction) else f
    return BernsteinPolynomial(n, r, np.asarray(fn(nodes), dtype=float))


def bernstein_error_bound(lip_constant: float, r: float, n: int) -> float:
    """b_f n^{-1/2} with b_f = 2 r c_b L_f and c_b = (4306 + 837 sqrt(6))/5832."""
    if n < 1:
        raise DosError("Bernstein degree must be >= 1")
    return 2.0 * r * C_BERNSTEIN * lip_constant / np.sqrt(n)


# ---------------------------------------------------------------------------
# DOS estimates
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class DosEstimate:
    """Moment-vector or histogram representation of the DOS measure."""

    kind: str
    samples: int
    seed: int
    spectral_bound: float
    moments: np.ndarray | None = None
    moment_stderr: np.ndarray | None = None
    bin_edges: np.ndarray | None = None
    bin_masses: np.ndarray | None = None
    bin_stderr: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "moments":
            if abs(self.moments[0] - 1.0) > 1e-15:
                raise DosError("zeroth moment must be exactly 1")
        elif self.kind == "histogram":
            if np.any(self.bin_masses < 0) or abs(self.bin_masses.sum() - 1.0) > 1e-12:
                raise DosError("histogram masses must be nonnegative and sum to 1")
            r = self.spectral_bound
            if self.bin_edges[0] < -r - 1e-12 or self.bin_edges[-1] > r + 1e-12:
                raise DosError("bin edges outside [-r, r]")
        else:
            raise DosError(f"unknown estimate kind {self.kind!r}")

    def to_csv(self) -> str:
        lines = [f"# {self.kind},{self.samples},{self.seed},{self.spectral_bound:.17g}"]
        if self.kind == "moments":
            lines.append("moment_index,value,stderr")
            for j, (v, s) in enumerate(zip(self.moments, self.moment_stderr)):
                lines.append(f"{j},{v:.17g},{s:.17g}")
        else:
            lines.append("bin_lo,bin_hi,mass,stderr")
            for lo, hi, m, s in zip(self.bin_edges[:-1], self.bin_edges[1:],
                                    self.bin_masses, self.bin_stderr):
                lines.append(f"{lo:.17g},{hi:.17g},{m:.17g},{s:.17g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "DosEstimate":
        lines = [l for l in text.splitlines() if l.strip()]
        if not lines or not lines[0].startswith("#"):
            raise DosError("estimate CSV missing '# kind,samples,seed,r' header")
        kind, samples, seed, r = [s.strip() for s in lines[0][1:].split(",")]
        rows = [tuple(float(x) for x in l.split(",")) for l in lines[2:]]
        if kind == "moments":
            vals = np.array([v for _, v, _ in rows])
            errs = np.array([s for _, _, s in rows])
            return cls("moments", int(samples), int(seed), float(r),
                       moments=vals, moment_stderr=errs)
        edges = np.array([row[0] for row in rows] + [rows[-1][1]])
        return cls("histogram", int(samples), int(seed), float(r),
                   bin_edges=edges,
                   bin_masses=np.array([row[2] for row in rows]),
                   bin_stderr=np.array([row[3] for row in rows]))


# ---------------------------------------------------------------------------
# moment path
# ---------------------------------------------------------------------------

def box_trace_powers(box: HamiltonianBox, n: int) -> np.ndarray:
    """[Tr(P0 H^j P0) for j = 0..n] by the Krylov recursion v_{j+1} = H v_j."""
    proj = box.projection_indices
    V = np.zeros((box.dim, len(proj)))
    V[proj, np.arange(len(proj))] = 1.0
    out = np.empty(n + 1)
    out[0] = float(len(proj))
    W = V
    for j in range(1, n + 1):
        W = box.apply(W)
        out[j] = float(np.sum(W[proj, np.arange(len(proj))]))
    return out


def _sampled_box(model: ModelSpec, seed: int, sample_index: int, radius: int,
                 boundary: str = "open") -> HamiltonianBox:
    region = lat.region_sites(model, radius, boundary)
    disorder = lat.sample_disorder(model, seed, sample_index, region)
    return lat.assemble_box(model, radius, disorder, boundary)


def trace_moments(model: ModelSpec, max_degree: int, samples: int, seed: int,
                  return_samples: bool = False) -> DosEstimate:
    """Moment-kind estimate: m_j = E[Tr(P0 H^j P0)]/N, j = 0..max_degree.

    Exact in the volume: the box radius is dependence_radius(max_degree), so
    the only error is Monte Carlo.  m_0 = 1 exactly.
    """
    if max_degree < 0 or samples < 1:
        raise DosError("need max_degree >= 0 and samples >= 1")
    radius = lat.dependence_radius(model, max_degree)
    N = model.rank
    per_sample = np.empty((samples, max_degree + 1))
    for s in range(samples):
        box = _sampled_box(model, seed, s, radius)
        per_sample[s] = box_trace_powers(box, max_degree) / N
    means = per_sample.mean(axis=0)
    means[0] = 1.0
    stderr = (per_sample.std(axis=0, ddof=1) / np.sqrt(samples)
              if samples > 1 else np.zeros(max_degree + 1))
    est = DosEstimate("moments", samples, seed, model.spectral_bound,
                      moments=means, moment_stderr=stderr)
    if return_samples:
        est.metadata["per_sample"] = per_sample
    return est


def _lanczos_quadrature(box: HamiltonianBox, start: int, steps: int):
    """Gauss quadrature (nodes, weights) of the local spectral measure at a site.

    Lanczos with full reorthogonalization; exact for polynomials of degree
    <= 2*steps - 1.  Early breakdown means the measure has fewer support
    points and the truncated rule is already exact.
    """
    dim = box.dim
    scale = max(box.spectral_bound, 1.0)
    Q = np.zeros((dim, steps))
    q = np.zeros(dim)
    q[start] = 1.0
    Q[:, 0] = q
    alphas, betas = [], []
    for j in range(steps):
        v = box.apply(Q[:, j])
        a = float(Q[:, j] @ v)
        alphas.append(a)
        v -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ v)   # full reorthogonalization
        v -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ v)
        b = float(np.linalg.norm(v))
        if j == steps - 1 or b <= 1e-13 * scale:
            break
        betas.append(b)
        Q[:, j + 1] = v / b
    theta, vecs = sla.eigh_tridiagonal(np.array(alphas), np.array(betas))
    w = vecs[0] ** 2
    return theta, w / w.sum()


def local_spectral_quadrature(box: HamiltonianBox, degree: int):
    """Averaged quadrature over the projection sites: nodes, weights with
    Tr(P0 p(H) P0)/N = sum_i w_i p(theta_i) exactly for deg p <= degree."""
    steps = min(degree // 2 + 2, box.dim)
    proj = box.projection_indices
    nodes, weights = [], []
    for s in proj:
        th, w = _lanczos_quadrature(box, int(s), steps)
        nodes.append(th)
        weights.append(w / len(proj))
    return np.concatenate(nodes), np.concatenate(weights)


def dos_functional_bank(model: ModelSpec, fs: Sequence[TestFunction], degree: int,
                        samples: int, seed: int):
    """Moment-path estimates of n(f_n) for a bank of test functions.

    Returns (values, stderrs, bias_bounds); all functions share the same
    Monte Carlo samples, so the estimator is exactly linear in f at fixed
    seed and degree.
    """
    if degree < 1 or samples < 1:
        raise DosError("need degree >= 1 and samples >= 1")
    r = model.spectral_bound
    polys = [bernstein_approx(f, degree, r) for f in fs]
    G = np.stack([p.node_values for p in polys])        # (n_f, degree+1)
    radius = lat.dependence_radius(model, degree)
    basis_proto = polys[0]
    per_sample = np.empty((samples, len(fs)))
    for s in range(samples):
        box = _sampled_box(model, seed, s, radius)
        nodes, weights = local_spectral_quadrature(box, degree)
        beta = basis_proto.basis_matrix(nodes) @ weights   # Bernstein moments
        per_sample[s] = G @ beta
    values = per_sample.mean(axis=0)
    stderrs = (per_sample.std(axis=0, ddof=1) / np.sqrt(samples)
               if samples > 1 else np.zeros(len(fs)))
    biases = np.array([bernstein_error_bound(f.lip_constant, r, degree) for f in fs])
    return values, stderrs, biases


def dos_functional(model: ModelSpec, f: TestFunction, degree: int, samples: int,
                   seed: int, method: str = "quadrature"):
    """(value, stderr, bias_bound) for the DOS functional of f at one degree.

    value estimates n(f_n) where f_n is the Bernstein approximant;
    |n(f) - n(f_n)| <= bias_bound deterministically.  method="power"
    contracts the raw power moments against the power-basis coefficients
    (cross-check route, small degrees only).
    """
    if method == "quadrature":
        v, s, b = dos_functional_bank(model, [f], degree, samples, seed)
        return float(v[0]), float(s[0]), float(b[0])
    if method != "power":
        raise DosError(f"unknown method {method!r}")
    if degree > 25:
        raise DosError("power-basis route is numerically meaningless beyond degree 25")
    r = model.spectral_bound
    poly = bernstein_approx(f, degree, r)
    coeffs = poly.power_coefficients()
    est = trace_moments(model, degree, samples, seed, return_samples=True)
    per_sample = est.metadata["per_sample"] @ coeffs
    value = float(per_sample.mean())
    stderr = float(per_sample.std(ddof=1) / np.sqrt(samples)) if samples > 1 else 0.0
    return value, stderr, float(bernstein_error_bound(f.lip_constant, r, degree))


# ---------------------------------------------------------------------------
# histogram path
# ---------------------------------------------------------------------------

def _box_eigenvalues(box: HamiltonianBox) -> np.ndarray:
    tri = box.tridiagonal()
    if tri is not None:
        return sla.eigh_tridiagonal(tri[0], tri[1], eigvals_only=True)
    band = box.banded_lower_1d_periodic()
    if band is not None:
        return sla.eig_banded(band, lower=True, eigvals_only=True)
    dtype = np.float32 if box.dim > 4096 else np.float64
    dense = box.to_dense(dtype)
    return sla.eigh(dense, eigvals_only=True, overwrite_a=True,
                    check_finite=False, driver="evd").astype(np.float64)


def dos_histogram(model: ModelSpec, side_or_depth: int, samples: int, bins: int,
                  seed: int, boundary: str = "periodic") -> DosEstimate:
    """Histogram-kind estimate from full diagonalization of finite boxes.

    Periodic boundary by default to minimize surface effects; the remaining
    finite-volume bias is O(surface/volume), reported in the metadata and
    not corrected.  Boxes above 4096 sites are diagonalized in float32
    (documented; the eigenvalue error ~r*1e-6 is far below a bin width).
    """
    g = model.geometry
    if isinstance(g, lat.Bethe):
        if side_or_depth < 2:
            raise DosError("Bethe histogram needs depth >= 2")
        boundary = "open"
    elif side_or_depth < 4:
        raise DosError("histogram box side must be >= 4")
    if bins < 8:
        raise DosError("need at least 8 bins")
    r = model.spectral_bound
    edges = np.linspace(-r, r, bins + 1)
    masses = np.empty((samples, bins))
    for s in range(samples):
        for attempt in (0, 1):
            try:
                box = _sampled_box(model, seed, s + attempt * 10 ** 9,
                                   side_or_depth, boundary)
                eigs = _box_eigenvalues(box)
                break
            except np.linalg.LinAlgError:
                if attempt == 1:
                    raise DosError(f"diagonalization failed twice at sample {s}")
        counts, _ = np.histogram(np.clip(eigs, -r, r), bins=edges)
        masses[s] = counts / box.dim
    mean = masses.mean(axis=0)
    mean /= mean.sum()
    stderr = (masses.std(axis=0, ddof=1) / np.sqrt(samples)
              if samples > 1 else np.zeros(bins))
    if isinstance(g, lat.Bethe):
        tree = lat.bethe_tree(g.k, side_or_depth)
        leaves = np.sum(tree.vertex_depths == side_or_depth)
        surface = leaves / tree.n_vertices
        note = ("finite tree: the leaf fraction is O(1); the all-eigenvalue "
                "histogram estimates the canopy DOS, not the root spectral "
                "average -- use the moment path for Bethe DOSm quantities")
    else:
        d = g.d if isinstance(g, lat.CubeLattice) else 1
        surface = 2.0 * d / side_or_depth
        note = "boundary bias O(surface/volume), not corrected"
    return DosEstimate("histogram", samples, seed, r,
                       bin_edges=edges, bin_masses=mean, bin_stderr=stderr,
                       metadata={"surface_fraction": float(surface),
                                 "finite_volume_note": note,
                                 "boundary": boundary,
                                 "side_or_depth": side_or_depth})


def ids(estimate: DosEstimate, E: float):
    """(value, stderr) of the IDS N(E): cumulative histogram mass below E,
    linearly interpolated inside the containing bin."""
    if estimate.kind != "moments" and estimate.kind != "histogram":
        raise DosError("unknown estimate kind")
    if estimate.kind == "moments":
        raise DosError("IDS needs the histogram path, not a moment vector")
    edges, masses = estimate.bin_edges, estimate.bin_masses
    if E <= edges[0]:
        return 0.0, 0.0
    if E >= edges[-1]:
        return 1.0, 0.0
    b = int(np.searchsorted(edges, E, side="right") - 1)
    frac = (E - edges[b]) / (edges[b + 1] - edges[b])
    weights = np.zeros(len(masses))
    weights[:b] = 1.0
    weights[b] = frac
    value = float(weights @ masses)
    stderr = float(np.sqrt(np.sum((weights * estimate.bin_stderr) ** 2)))
    return min(max(value, 0.0), 1.0), stderr


# ---------------------------------------------------------------------------
# closed forms: free lattice, Lloyd model, Kesten measure
# ---------------------------------------------------------------------------

def free_ids_1d(E):
    """IDS of the free 1d Laplacian: N(E) = 1/2 + arcsin(E/2)/pi on [-2, 2]."""
    return 0.5 + np.arcsin(np.clip(np.asarray(E, dtype=float) / 2.0, -1, 1)) / np.pi


_free_grid_cache: dict = {}


def _free_dosf_grid(d: int, step: float = FREE_DOSF_STEP):
    """Cached (centers, density) of the d-fold self-convolution on a step grid."""
    key = (d, step)
    if key in _free_grid_cache:
        return _free_grid_cache[key]
    cache_dir = os.environ.get("DOSLAB_CACHE_DIR")
    fname = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        fname = os.path.join(cache_dir, f"free_dosf_d{d}_step{step:.3e}.npz")
        if os.path.exists(fname):
            data = np.load(fname)
            _free_grid_cache[key] = (data["centers"], data["density"])
            return _free_grid_cache[key]
    n1 = int(round(4.0 / step))
    edges1 = np.linspace(-2.0, 2.0, n1 + 1)
    m1 = np.diff(free_ids_1d(edges1))        # exact cell masses of the arcsine law
    mass = m1
    for _ in range(d - 1):
        from scipy.signal import fftconvolve
        mass = fftconvolve(mass, m1)
        mass = np.maximum(mass, 0.0)
    mass /= mass.sum()
    n = len(mass)
    centers = (np.arange(n) - (n - 1) / 2.0) * step
    density = mass / step
    _free_grid_cache[key] = (centers, density)
    if fname:
        np.savez(fname, centers=centers, density=density)
    return _free_grid_cache[key]


def free_dosf(d: int, E):
    """DOSf of the free Laplacian on Z^d.

    d=1 is the arcsine density (1/2pi)/sqrt(1-(E/2)^2) on (-2,2) with a +inf
    sentinel at the van Hove edges |E| = 2; d >= 2 is the cached d-fold
    numeric self-convolution at grid step 1/2048, linearly interpolated.
    """
    E_arr = np.atleast_1d(np.asarray(E, dtype=float))
    if d == 1:
        out = np.zeros_like(E_arr)
        inside = np.abs(E_arr) < 2.0
        out[inside] = 1.0 / (2.0 * np.pi * np.sqrt(1.0 - (E_arr[inside] / 2.0) ** 2))
        out[np.abs(E_arr) == 2.0] = np.inf
    else:
        centers, density = _free_dosf_grid(d)
        out = np.interp(E_arr, centers, density, left=0.0, right=0.0)
    return float(out[0]) if np.ndim(E) == 0 else out


def free_dosf_fourier(d: int, t):
    """Fourier transform of the free DOSf: [J0(2t)/sqrt(2 pi)]^d.

    Satisfies |value| <= 2^{-d} pi^{-d/2} |t|^{-d/2} for t != 0.
    """
    return (besselj0(2.0 * np.asarray(t, dtype=float)) / np.sqrt(2.0 * np.pi)) ** d


def free_fourier_decay_bound(d: int, t):
    return 2.0 ** (-d) * np.pi ** (-d / 2.0) * np.abs(np.asarray(t, dtype=float)) ** (-d / 2.0)


_lloyd_panels_cache: dict = {}


def _lloyd_fourier_route(d: int, lam: float, E_arr: np.ndarray) -> np.ndarray:
    # rho_lam(E) = (1/pi) int_0^inf cos(tE) J0(2t)^d e^{-lam t} dt,
    # composite 12-node Gauss-Legendre panels of width 1/2, cutoff at
    # e^{-lam T} ~ 1e-20
    T = min(46.0 / lam, 8000.0)
    key = (d, lam, T)
    if key not in _lloyd_panels_cache:
        n_panels = int(np.ceil(T / 0.5))
        gl_x, gl_w = np.polynomial.legendre.leggauss(12)
        width = T / n_panels
        starts = width * np.arange(n_panels)
        t = (starts[:, None] + width * 0.5 * (gl_x[None, :] + 1.0)).ravel()
        w = np.tile(width * 0.5 * gl_w, n_panels)
        fac = w * besselj0(2.0 * t) ** d * np.exp(-lam * t)
        _lloyd_panels_cache[key] = (t, fac)
    t, fac = _lloyd_panels_cache[key]
    return (np.cos(np.outer(E_arr, t)) @ fac) / np.pi


def _lloyd_convolution_route(d: int, lam: float, E_arr: np.ndarray) -> np.ndarray:
    # cell-averaged free density paired with exact Cauchy cell integrals
    step = FREE_DOSF_STEP
    if d == 1:
        n1 = int(round(4.0 / step))
        edges = np.linspace(-2.0, 2.0, n1 + 1)
        mass = np.diff(free_ids_1d(edges))
    else:
        centers, density = _free_dosf_grid(d)
        mass = density * step
        edges = np.concatenate([centers - step / 2.0, [centers[-1] + step / 2.0]])
    lo, hi = edges[:-1], edges[1:]
    out = np.empty(len(E_arr))
    for i, e in enumerate(E_arr):
        cell = (np.arctan((e - lo) / lam) - np.arctan((e - hi) / lam)) / np.pi
        out[i] = float(np.sum(mass / (hi - lo) * cell))
    return out


def lloyd_dosf(d: int, lam: float, E, route: str = "fourier"):
    """DOSf of the Lloyd model (Cauchy disorder of scale lam > 0).

    Equals (free DOSf * Cauchy_lam)(E); equivalently the inverse Fourier
    transform of free_dosf_fourier(d, t) e^{-lam |t|}.  route="both" checks
    the two evaluations against each other to 1e-5 and returns the Fourier
    value.
    """
    if lam <= 0:
        raise DosError("Lloyd model needs lam > 0")
    E_arr = np.atleast_1d(np.asarray(E, dtype=float))
    if route == "fourier":
        out = _lloyd_fourier_route(d, lam, E_arr)
    elif route == "convolution":
        out = _lloyd_convolution_route(d, lam, E_arr)
    elif route == "both":
        out = _lloyd_fourier_route(d, lam, E_arr)
        alt = _lloyd_convolution_route(d, lam, E_arr)
        gap = float(np.max(np.abs(out - alt)))
        if gap > 1e-5:
            raise DosError(f"Lloyd dual-route disagreement {gap:.3e} > 1e-5")
    else:
        raise DosError(f"unknown route {route!r}")
    return float(out[0]) if np.ndim(E) == 0 else out


def kesten_dosf(k: int, E):
    """Kesten measure density: (k/2pi) sqrt(4(k-1) - E^2)/(k^2 - E^2) on
    |E| <= 2 sqrt(k-1), zero outside."""
    if k < 3:
        raise DosError("Bethe coordination number must be >= 3")
    E_arr = np.atleast_1d(np.asarray(E, dtype=float))
    edge = 2.0 * np.sqrt(k - 1.0)
    out = np.zeros_like(E_arr)
    inside = np.abs(E_arr) <= edge
    Ei = E_arr[inside]
    out[inside] = (k / (2.0 * np.pi)) * np.sqrt(np.maximum(4.0 * (k - 1.0) - Ei ** 2, 0.0)) \
        / (k * k - Ei ** 2)
    return float(out[0]) if np.ndim(E) == 0 else out


def kesten_constant(k: int) -> float:
    """Upper bound c_B on the sup of the Kesten density (two-branch formula)."""
    if 3 <= k <= 6:
        return k / (4.0 * np.pi * np.sqrt(k * k - 4.0 * (k - 1.0)))
    return np.sqrt(4.0 * (k - 1.0)) / k


_KESTEN_GL = np.polynomial.legendre.leggauss(512)


def kesten_moment(k: int, j: int) -> float:
    """int E^j kesten_dosf(k, E) dE by substitution E = 2 sqrt(k-1) sin(theta)."""
    edge = 2.0 * np.sqrt(k - 1.0)
    x, w = _KESTEN_GL
    theta = 0.5 * np.pi * x
    E = edge * np.sin(theta)
    vals = kesten_dosf(k, E) * E ** j * edge * np.cos(theta) * 0.5 * np.pi
    return float(np.sum(w * vals))


def kesten_ids(k: int, E: float) -> float:
    """IDS of the Kesten measure by the same substitution quadrature."""
    edge = 2.0 * np.sqrt(k - 1.0)
    if E <= -edge:
        return 0.0
    if E >= edge:
        return 1.0
    x, w = _KESTEN_GL
    t_hi = np.arcsin(E / edge)
    theta = (t_hi - (-0.5 * np.pi)) / 2.0 * (x + 1.0) - 0.5 * np.pi
    vals = kesten_dosf(k, edge * np.sin(theta)) * edge * np.cos(theta)
    return float(np.sum(w * vals) * (t_hi + 0.5 * np.pi) / 2.0)


# ---------------------------------------------------------------------------
# finite-rank deviation
# ---------------------------------------------------------------------------

def finite_rank_deviation(model: ModelSpec, ell, lam: float, lam0: float,
                          f: TestFunction, frozen_disorder: dict,
                          box_radius: int):
    """(lhs, rhs) of the finite-rank bound for a rank-N coupling at block ell.

    lhs = |Tr(P0 f(H + lam P_ell) P0) - Tr(P0 f(H + lam0 P_ell) P0)| by full
    diagonalization; rhs = 2 N^2 L_f |lam - lam0|.  Requires the flat
    profile and unit disorder scale so the perturbation is exactly lam P_ell.
    """
    g = model.geometry
    if not isinstance(g, lat.CubeLattice):
        raise DosError("finite-rank check is defined for cube models")
    if model.disorder_scale != 1.0 or np.any(model.profile != 1.0):
        raise DosError("finite-rank check needs unit disorder scale and flat profile")
    ell = tuple(int(c) for c in np.atleast_1d(ell))
    K = g.K
    hi_corner = max(abs(c * K) for c in ell) + (K - 1)
    if hi_corner > box_radius:
        raise DosError("coupling block lies outside the box; enlarge box_radius")
    N = model.rank
    values = []
    for coupling in (lam, lam0):
        disorder = dict(frozen_disorder)
        disorder[ell] = coupling
        box = lat.assemble_box(model, box_radius, disorder, "open")
        eigvals, vecs = np.linalg.eigh(box.to_dense())
        w = np.sum(vecs[box.projection_indices, :] ** 2, axis=0)
        values.append(float(w @ f(eigvals)))
    lhs = abs(values[0] - values[1])
    rhs = 2.0 * N * N * f.lip_constant * abs(lam - lam0)
    return lhs, rhs
