"""Compactly supported atomic probability measures on an interval.

Measures are stored in canonical atomic form: strictly increasing locations,
positive weights summing to one.  Continuous measures enter through
:func:`discretize_density`, which moves each unit of mass by at most step/2
and therefore perturbs the bounded-Lipschitz metric by at most step/2.

The metric :func:`dw` is the Dudley / bounded-Lipschitz distance

    d_w(mu, nu) = sup { |mu(f) - nu(f)| : ||f||_inf + L_f <= 1 },

computed exactly on the union of atom locations as a small linear program.
On the line, Lipschitz constraints between adjacent sorted locations imply
all pairwise ones, so the LP has O(m) constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping

import numpy as np
from scipy.optimize import linprog

from ._rng import key_uniform

MERGE_TOL = 1e-12   # duplicate-atom merge tolerance in location
WEIGHT_TOL = 1e-9   # accepted deviation of input weights from total mass 1

KERNELS = ("box", "triangle", "smooth-bump")
_KERNEL_CELLS = 16  # kernels discretized at width/32 resolution -> 16 cells

PAIR_KINDS = (
    "mollified-atoms",
    "absolutely-continuous",
    "point-family",
    "disorder-rescale",
)


class MeasureError(ValueError):
    """Invalid measure construction or operation."""


def _merge_atoms(locations, weights, tol=MERGE_TOL):
    """Sort atoms and merge locations closer than tol (weights may be signed)."""
    order = np.argsort(locations, kind="stable")
    locs = np.asarray(locations, dtype=float)[order]
    wts = np.asarray(weights, dtype=float)[order]
    out_locs, out_wts = [], []
    for x, w in zip(locs, wts):
        if out_locs and x - out_locs[-1] <= tol:
            out_wts[-1] += w
        else:
            out_locs.append(x)
            out_wts.append(w)
    return np.array(out_locs), np.array(out_wts)


@dataclass(frozen=True, eq=False)
class ProbabilityMeasure:
    """Atomic Borel probability measure supported in [-C, C].

    Invariants (enforced by :func:`make_atomic`): weights sum to 1 within
    1e-12, every |location| <= C, locations strictly increasing.
    """

    locations: np.ndarray
    weights: np.ndarray
    support_bound: float
    label: str = ""

    def __post_init__(self):
        locs = np.array(self.locations, dtype=float)
        wts = np.array(self.weights, dtype=float)
        locs.flags.writeable = False
        wts.flags.writeable = False
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", wts)

    @property
    def n_atoms(self) -> int:
        return len(self.locations)

    @cached_property
    def cumulative_weights(self) -> np.ndarray:
        cw = np.cumsum(self.weights)
        cw[-1] = 1.0  # pin against rounding so quantile(u<1) is always valid
        cw.flags.writeable = False
        return cw

    def quantile(self, u) -> np.ndarray:
        """Inverse CDF: smallest atom x_i with F(x_i) > u."""
        idx = np.searchsorted(self.cumulative_weights, u, side="right")
        return self.locations[np.minimum(idx, self.n_atoms - 1)]

    def sample(self, seed: int, stream: int, counters) -> np.ndarray:
        """Counter-keyed draws: pure function of (seed, stream, counter row)."""
        return self.quantile(key_uniform(seed, stream, counters))

    def integrate(self, f) -> float:
        """mu(f) = sum_i w_i f(x_i)."""
        return float(np.sum(self.weights * np.asarray(f(self.locations))))

    def mean(self) -> float:
        return float(np.sum(self.weights * self.locations))

    def cdf(self, x) -> np.ndarray:
        """Mass of (-inf, x]."""
        idx = np.searchsorted(self.locations, x, side="right")
        cw = np.concatenate(([0.0], self.cumulative_weights))
        return cw[idx]

    def reflected(self) -> "ProbabilityMeasure":
        """Pushforward under x -> -x."""
        return make_atomic(-self.locations[::-1], self.weights[::-1],
                           self.support_bound, label=self.label + "-reflected")


def make_atomic(locations, weights, C, label="") -> ProbabilityMeasure:
    """Canonical atomic measure from point masses.

    Sorts, merges duplicates (1e-12 location tolerance), drops zero-weight
    atoms and renormalizes.  Weights must be nonnegative and sum to 1 within
    1e-9 before renormalization.
    """
    locations = np.asarray(locations, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if locations.size == 0 or weights.size == 0:
        raise MeasureError("empty atom list")
    if locations.shape != weights.shape or locations.ndim != 1:
        raise MeasureError("locations and weights must be equal-length 1d")
    if np.any(weights < 0):
        raise MeasureError("negative weight")
    total = weights.sum()
    if abs(total - 1.0) > WEIGHT_TOL:
        raise MeasureError(f"weights sum to {total!r}, not 1 within {WEIGHT_TOL}")
    C = float(C)
    if C < 0:
        raise MeasureError("support bound must be nonnegative")
    if np.any(np.abs(locations) > C * (1 + 1e-15) + 1e-300):
        raise MeasureError("atom location outside [-C, C]")
    locs, wts = _merge_atoms(locations, weights / total)
    keep = wts > 0
    locs, wts = locs[keep], wts[keep]
    if locs.size == 0:
        raise MeasureError("all weights vanish")
    wts = wts / wts.sum()
    return ProbabilityMeasure(locs, wts, C, label)


def point_mass(x=0.0, C=1.0, label="") -> ProbabilityMeasure:
    return make_atomic([x], [1.0], C, label=label or f"delta({x:g})")


def bernoulli(p=0.5, a=1.0, C=None, label="") -> ProbabilityMeasure:
    """Two-point measure p*delta(-a) + (1-p)*delta(+a)."""
    if C is None:
        C = abs(a)
    return make_atomic([-a, a], [p, 1.0 - p], C, label=label or "bernoulli")


def discretize_density(density_samples, C, step) -> ProbabilityMeasure:
    """Atomic approximation of an absolutely continuous measure.

    The density is the piecewise-linear interpolant of ``density_samples``
    (pairs (x, value), zero outside the sampled range); each grid cell of
    width <= step on [-C, C] becomes one atom at the cell center carrying the
    exact trapezoid mass of the interpolant over the cell.  Mass moves at
    most step/2, so the d_w perturbation is at most step/2.
    """
    if step <= 0:
        raise MeasureError("step must be positive")
    pts = np.asarray(sorted(density_samples), dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise MeasureError("density_samples must be (x, value) pairs")
    xs, vals = pts[:, 0], pts[:, 1]
    if np.any(vals < 0):
        raise MeasureError("density values must be nonnegative")
    n_cells = max(1, int(np.ceil(2.0 * C / step)))
    edges = np.linspace(-C, C, n_cells + 1)
    # integrate the interpolant exactly: refine by the sample abscissae
    grid = np.union1d(edges, xs[(xs > -C) & (xs < C)])
    dens = np.interp(grid, xs, vals, left=0.0, right=0.0)
    seg_mass = 0.5 * (dens[1:] + dens[:-1]) * np.diff(grid)
    cell_idx = np.clip(np.searchsorted(edges, grid[:-1], side="right") - 1, 0, n_cells - 1)
    masses = np.zeros(n_cells)
    np.add.at(masses, cell_idx, seg_mass)
    total = masses.sum()
    if total <= 0:
        raise MeasureError("density integrates to zero")
    centers = 0.5 * (edges[:-1] + edges[1:])
    keep = masses > 0
    return make_atomic(centers[keep], masses[keep] / total, C)


def _kernel_cells(kind, eta):
    """Offsets (cell centers) and masses of the discretized kernel on [-eta/2, eta/2]."""
    h = eta / 2.0
    edges = np.linspace(-h, h, _KERNEL_CELLS + 1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    if kind == "box":
        masses = np.full(_KERNEL_CELLS, 1.0 / _KERNEL_CELLS)
    elif kind == "triangle":
        def cdf(x):
            return np.where(x <= 0, (x + h) ** 2 / (2 * h * h),
                            1.0 - (h - x) ** 2 / (2 * h * h))
        masses = np.diff(cdf(edges))
    elif kind == "smooth-bump":
        u = np.linspace(-1.0, 1.0, 4097)
        dens = np.zeros_like(u)
        inner = np.abs(u) < 1
        dens[inner] = np.exp(-1.0 / (1.0 - u[inner] ** 2))
        cum = np.concatenate(([0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(u))))
        cum /= cum[-1]
        masses = np.diff(np.interp(edges / h, u, cum))
    else:
        raise MeasureError(f"unknown kernel {kind!r}; choose from {KERNELS}")
    return centers, masses / masses.sum()


def mollify(m: ProbabilityMeasure, kernel: str, width: float) -> ProbabilityMeasure:
    """Replace each atom by a discretized kernel of the same mass.

    The kernel has full width ``width`` (support [-width/2, width/2]) and is
    discretized at width/32 resolution; the support bound grows to C + width.
    Guarantee: d_w(result, m) <= max(1, C) * width.
    """
    if width <= 0:
        raise MeasureError("mollifier width must be positive")
    offsets, kmass = _kernel_cells(kernel, width)
    locs = (m.locations[:, None] + offsets[None, :]).ravel()
    wts = (m.weights[:, None] * kmass[None, :]).ravel()
    return make_atomic(locs, wts, m.support_bound + width,
                       label=f"{m.label}*{kernel}({width:g})" if m.label else "")


def rescale(m: ProbabilityMeasure, lam: float) -> ProbabilityMeasure:
    """Pushforward under x -> lam*x, i.e. d nu_lam(x) = d mu(x / lam).

    rescale(m, 0) is the point mass at 0.  Total weight is preserved exactly.
    """
    if lam < 0:
        raise MeasureError("lambda must be nonnegative")
    if lam == 0:
        return ProbabilityMeasure(np.array([0.0]), np.array([1.0]), 0.0,
                                  label="delta(0)")
    locs, wts = _merge_atoms(lam * m.locations, m.weights)
    return ProbabilityMeasure(locs, wts / wts.sum(), lam * m.support_bound,
                              label=f"{m.label}@{lam:g}" if m.label else "")


def dw(mu: ProbabilityMeasure, nu: ProbabilityMeasure) -> float:
    """Bounded-Lipschitz (Dudley) distance between atomic measures.

    Exact linear program on the union of atom locations, variables
    (f_1..f_m, M, L): maximize sum (mu_i - nu_i) f_i subject to
    |f_i| <= M, |f_{i+1} - f_i| <= L (x_{i+1} - x_i), M + L <= 1, M, L >= 0.
    The result lies in [0, 2]; it is zero iff the canonical atoms coincide.
    """
    locs, c = _merge_atoms(
        np.concatenate([mu.locations, nu.locations]),
        np.concatenate([mu.weights, -nu.weights]),
    )
    if len(locs) == 1 or np.max(np.abs(c)) < 1e-15:
        return 0.0
    m = len(locs)
    gaps = np.diff(locs)
    n_var = m + 2  # f_1..f_m, M, L
    i_M, i_L = m, m + 1
    rows = []
    rhs = []
    for i in range(m):  # f_i - M <= 0 ; -f_i - M <= 0
        r = np.zeros(n_var); r[i] = 1.0; r[i_M] = -1.0
        rows.append(r); rhs.append(0.0)
        r = np.zeros(n_var); r[i] = -1.0; r[i_M] = -1.0
        rows.append(r); rhs.append(0.0)
    for i in range(m - 1):  # |f_{i+1} - f_i| <= L * gap_i
        r = np.zeros(n_var); r[i + 1] = 1.0; r[i] = -1.0; r[i_L] = -gaps[i]
        rows.append(r); rhs.append(0.0)
        r = np.zeros(n_var); r[i] = 1.0; r[i + 1] = -1.0; r[i_L] = -gaps[i]
        rows.append(r); rhs.append(0.0)
    r = np.zeros(n_var); r[i_M] = 1.0; r[i_L] = 1.0
    rows.append(r); rhs.append(1.0)
    obj = np.zeros(n_var)
    obj[:m] = -c  # linprog minimizes
    bounds = [(-1.0, 1.0)] * m + [(0.0, 1.0), (0.0, None)]
    res = linprog(obj, A_ub=np.array(rows), b_ub=np.array(rhs),
                  bounds=bounds, method="highs")
    if not res.success:
        raise MeasureError(f"d_w linear program failed: {res.message}")
    return max(0.0, -res.fun)


@dataclass(frozen=True)
class MeasurePairDescriptor:
    """Descriptor of an approximating pair with a known analytic d_w bound.

    kinds and parameters:
      - "mollified-atoms":       eta (mollifier width), support_bound
      - "absolutely-continuous": l1_distance (of the densities)
      - "point-family":          weight_deltas, location_deltas (tuples),
                                 max_abs_location
      - "disorder-rescale":      lambda (disorder scale, in (0, 1])
    """

    kind: str
    parameters: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PAIR_KINDS:
            raise MeasureError(f"unknown descriptor kind {self.kind!r}")
        needed = {
            "mollified-atoms": ("eta",),
            "absolutely-continuous": ("l1_distance",),
            "point-family": ("weight_deltas", "location_deltas", "max_abs_location"),
            "disorder-rescale": ("lambda",),
        }[self.kind]
        for key in needed:
            if key not in self.parameters:
                raise MeasureError(f"{self.kind} descriptor missing {key!r}")
        for key, val in self.parameters.items():
            arr = np.atleast_1d(np.asarray(val, dtype=float))
            if np.any(arr < 0) and key not in ("weight_deltas", "location_deltas"):
                raise MeasureError(f"descriptor parameter {key!r} must be nonnegative")


def dw_upper_bound(desc: MeasurePairDescriptor) -> float:
    """Analytic upper bound on d_w for the described pair."""
    p = desc.parameters
    if desc.kind == "mollified-atoms":
        C = float(p.get("support_bound", 1.0))
        return max(1.0, C) * float(p["eta"])
    if desc.kind == "absolutely-continuous":
        return float(p["l1_distance"])
    if desc.kind == "point-family":
        dsum = float(np.sum(np.abs(p["weight_deltas"])) +
                     np.sum(np.abs(p["location_deltas"])))
        return max(1.0, float(p["max_abs_location"])) * dsum
    if desc.kind == "disorder-rescale":
        return float(p["lambda"])
    raise MeasureError(f"unknown descriptor kind {desc.kind!r}")


def to_text(m: ProbabilityMeasure) -> str:
    """Serialize: one `support_bound` header line, one `atom <loc> <wt>` per atom."""
    lines = [f"support_bound {m.support_bound:.17g}"]
    lines += [f"atom {x:.17g} {w:.17g}" for x, w in zip(m.locations, m.weights)]
    return "\n".join(lines) + "\n"


def from_text(text: str) -> ProbabilityMeasure:
    C = None
    locs, wts = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "support_bound" and len(parts) == 2:
            C = float(parts[1])
        elif parts[0] == "atom" and len(parts) == 3:
            locs.append(float(parts[1]))
            wts.append(float(parts[2]))
        else:
            raise MeasureError(f"bad measure file line {lineno}: {raw!r}")
    if C is None:
        raise MeasureError("measure file missing support_bound header")
    return make_atomic(locs, wts, C)


def save(m: ProbabilityMeasure, path) -> None:
    with open(path, "w") as fh:
        fh.write(to_text(m))


def load(path) -> ProbabilityMeasure:
    with open(path) as fh:
        return from_text(fh.read())
