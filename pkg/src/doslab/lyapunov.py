"""Lyapunov exponents, the Thouless formula, and Poisson transforms.

Transfer-matrix products with periodic renormalization (every 32 steps for
the scalar chain, QR re-orthonormalization every 8 for the strip) give the
growth-rate route; per-bin analytic quadrature against a histogram DOS
estimate gives the Thouless route

    L(E0) = int log|E' - E0| dn(E'),

whose log singularity at real E0 is absolutely integrable against a
piecewise-constant bin density, so no principal-value handling is needed.
The Poisson transform P(E + i eps) = int eps/((E-E')^2 + eps^2) dn(E') is
the eps-derivative of L(E + i eps).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from ._rng import key_uniform
from .dos_engine import DosError
from .measures import ProbabilityMeasure

SCALAR_RENORM = 32  # renormalization cadence, scalar chain
STRIP_RENORM = 8    # QR cadence, strip


class LyapunovError(ValueError):
    pass


@dataclass(eq=False)
class LyapunovResult:
    energy: complex
    value: float
    method: str
    steps_or_quadrature: int
    error_estimate: float
    exponents: np.ndarray | None = None  # strip: top L exponents, nonincreasing

    def __post_init__(self):
        if self.exponents is not None:
            self.exponents = np.asarray(self.exponents, dtype=float)


def free_lyapunov(E) -> float:
    """Lyapunov exponent of the free 1d chain: 0 on [-2, 2], else
    log|(E + sqrt(E^2 - 4))/2| with the branch making the value >= 0."""
    E = complex(E)
    if E.imag == 0.0 and abs(E.real) <= 2.0:
        return 0.0
    s = np.sqrt(E * E - 4.0 + 0j)
    return float(np.log(max(abs((E + s) / 2.0), abs((E - s) / 2.0))))


def transfer_lyapunov_1d(measure: ProbabilityMeasure, E, steps: int, seed: int,
                         replicas: int = 8) -> LyapunovResult:
    """Top Lyapunov exponent of the 1d chain from transfer-matrix products.

    Multiplies ((E - omega, -1), (1, 0)) over keyed disorder draws, dividing
    by the running Frobenius norm every 32 steps and accumulating the log;
    the value is the accumulated log-norm over the step count, averaged over
    independent replicas, with the replica scatter as error estimate.
    """
    if steps < 10 ** 3:
        raise LyapunovError("transfer product needs at least 10^3 steps")
    if replicas < 2:
        raise LyapunovError("need >= 2 replicas for an error estimate")
    E = complex(E)
    real_case = E.imag == 0.0
    dtype = np.float64 if real_case else np.complex128
    Ev = E.real if real_case else E
    a = np.ones(replicas, dtype=dtype)
    b = np.zeros(replicas, dtype=dtype)
    c = np.zeros(replicas, dtype=dtype)
    d = np.ones(replicas, dtype=dtype)
    acc = np.zeros(replicas)
    chunk = 8192
    done = 0
    while done < steps:
        m = min(chunk, steps - done)
        draws = np.stack([measure.sample(seed, rep, done + np.arange(m))
                          for rep in range(replicas)])
        for i in range(m):
            eo = Ev - draws[:, i]
            a, b, c, d = eo * a - c, eo * b - d, a, b
            done += 1
            if done % SCALAR_RENORM == 0 or done == steps:
                norm = np.sqrt(np.abs(a) ** 2 + np.abs(b) ** 2
                               + np.abs(c) ** 2 + np.abs(d) ** 2)
                acc += np.log(norm)
                a, b, c, d = a / norm, b / norm, c / norm, d / norm
    vals = acc / steps
    return LyapunovResult(E, float(vals.mean()), "transfer", steps,
                          float(vals.std(ddof=1) / np.sqrt(replicas)))


def strip_lyapunov(matrix_family, width: int, E, steps: int, seed: int,
                   weights=None, replicas: int = 4) -> LyapunovResult:
    """Nonnegative Lyapunov spectrum of the strip from symplectic products.

    The 2L x 2L blocks ((E I - omega_n, -I), (I, 0)) act on an orthonormal
    frame re-orthonormalized by QR every 8 steps; gamma_j is the averaged
    log of the j-th diagonal of R.  Returns the top L exponents
    (nonincreasing) and their sum as the value.
    """
    if width < 1:
        raise LyapunovError("strip width must be >= 1")
    mats = [np.asarray(m, dtype=float) for m in np.atleast_3d(matrix_family)]
    if not mats:
        raise LyapunovError("empty matrix family")
    w = np.asarray(weights if weights is not None else
                   [1.0 / len(mats)] * len(mats), dtype=float)
    cumw = np.cumsum(w / w.sum())
    cumw[-1] = 1.0
    E = complex(E)
    dtype = np.float64 if E.imag == 0.0 else np.complex128
    Ev = E.real if E.imag == 0.0 else E
    L2 = 2 * width
    eye = np.eye(width)
    per_replica = np.empty((replicas, L2))
    for rep in range(replicas):
        acc = np.zeros(L2)
        Q = np.eye(L2, dtype=dtype)
        reseeded = False
        u = key_uniform(seed, rep, np.arange(steps))
        idx = np.searchsorted(cumw, u, side="right")
        done = 0
        while done < steps:
            A = np.zeros((L2, L2), dtype=dtype)
            A[:width, :width] = Ev * eye - mats[idx[done]]
            A[:width, width:] = -eye
            A[width:, :width] = eye
            Q = A @ Q
            done += 1
            if done % STRIP_RENORM == 0 or done == steps:
                Q, R = np.linalg.qr(Q)
                diag = np.abs(np.diagonal(R))
                if not np.all(np.isfinite(diag)) or np.any(diag == 0.0):
                    if reseeded:
                        raise LyapunovError("QR breakdown (rank-deficient frame)")
                    # re-seed the frame once from keyed uniforms
                    reseeded = True
                    G = key_uniform(seed, rep + 10 ** 6,
                                    np.arange(L2 * L2)).reshape(L2, L2) - 0.5
                    Q, _ = np.linalg.qr(G.astype(dtype))
                    continue
                signs = np.where(np.diagonal(R).real < 0, -1.0, 1.0)
                Q = Q * signs
                acc += np.log(diag)
        per_replica[rep] = acc / steps
    gammas = per_replica.mean(axis=0)
    order = np.argsort(gammas)[::-1]
    top = gammas[order][:width]
    sums = per_replica[:, order[:width]].sum(axis=1)
    return LyapunovResult(E, float(sums.mean()), "transfer", steps,
                          float(sums.std(ddof=1) / np.sqrt(replicas)),
                          exponents=np.sort(top)[::-1])


def _bin_log_integral(lo, hi, E: complex):
    """int_lo^hi log|x - E| dx, elementwise over bin arrays."""
    if E.imag == 0.0:
        a = E.real

        def F(x):
            u = x - a
            with np.errstate(divide="ignore", invalid="ignore"):
                val = u * (np.log(np.abs(u)) - 1.0)
            return np.where(u == 0.0, 0.0, val)

        return F(hi) - F(lo)
    a, beta = E.real, E.imag

    def G(x):
        u = x - a
        return 0.5 * (u * np.log(u * u + beta * beta) - 2.0 * u) \
            + beta * np.arctan(u / beta)

    return G(hi) - G(lo)


def thouless(estimate, E) -> LyapunovResult:
    """Lyapunov exponent via the Thouless formula against a DOS estimate.

    Histogram input: per-bin analytic integration of log|x - E| against the
    bin's constant density (exact for the binned measure); atomic input:
    exact sum.  The result is floored at 0 with the negative excess folded
    into the error estimate.
    """
    E = complex(E)
    if isinstance(estimate, ProbabilityMeasure):
        dist = np.abs(estimate.locations - E)
        if np.any(dist == 0.0):
            raise LyapunovError("Thouless integral diverges at an atom of the measure")
        raw = float(np.sum(estimate.weights * np.log(dist)))
        stat = 0.0
        n_quad = estimate.n_atoms
    else:
        if estimate.kind != "histogram":
            raise DosError("Thouless quadrature needs the histogram path")
        lo, hi = estimate.bin_edges[:-1], estimate.bin_edges[1:]
        integrals = _bin_log_integral(lo, hi, E) / (hi - lo)
        raw = float(integrals @ estimate.bin_masses)
        stat = float(np.sqrt(np.sum((integrals * estimate.bin_stderr) ** 2)))
        n_quad = len(lo)
    value = max(raw, 0.0)
    return LyapunovResult(E, value, "thouless", n_quad,
                          stat + max(0.0, -raw))


def poisson_transform(estimate, E: float, eps: float) -> float:
    """P(E + i eps) = int eps/((E - E')^2 + eps^2) dn(E') (> 0).

    Per-bin arctan antiderivative for histogram input, exact sum for atomic
    input.
    """
    if eps <= 0:
        raise LyapunovError("Poisson transform needs eps > 0")
    if isinstance(estimate, ProbabilityMeasure):
        return float(np.sum(estimate.weights * eps
                            / ((E - estimate.locations) ** 2 + eps ** 2)))
    if estimate.kind != "histogram":
        raise DosError("Poisson transform needs the histogram path")
    lo, hi = estimate.bin_edges[:-1], estimate.bin_edges[1:]
    per_bin = (np.arctan((hi - E) / eps) - np.arctan((lo - E) / eps)) / (hi - lo)
    return float(per_bin @ estimate.bin_masses)


def lyapunov_extrapolate(measure: ProbabilityMeasure, E: float, eps_sequence,
                         steps: int, seed: int, replicas: int = 8):
    """Table of L(E + i eps) over a decreasing eps sequence plus a
    Richardson-style eps -> 0 estimate (Neville on the last three points).

    Makes no claim beyond the table; quantitative eps -> 0 rates are the
    business of the bound-verification layer.
    """
    eps_sequence = list(eps_sequence)
    if not eps_sequence:
        raise LyapunovError("empty eps sequence")
    if any(e <= 0 for e in eps_sequence) or \
            any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise LyapunovError("eps sequence must be strictly decreasing and positive")
    table = []
    for eps in eps_sequence:
        res = transfer_lyapunov_1d(measure, E + 1j * eps, steps, seed, replicas)
        table.append((eps, res.value, res.error_estimate))
    pts = table[-min(3, len(table)):]
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    # Neville to eps = 0
    for lvl in range(1, len(xs)):
        for i in range(len(xs) - lvl):
            ys[i] = ((0.0 - xs[i + lvl]) * ys[i] - (0.0 - xs[i]) * ys[i + 1]) \
                / (xs[i] - xs[i + lvl])
    return float(ys[0]), table


def appendix_c_integral(eps: float) -> float:
    """int_eps^1 d alpha / log((1/eps) sqrt(alpha/(1-alpha))).

    The integrand tends to 0 at alpha = 1 (the log blows up), so the
    endpoint is integrable; adaptive quadrature handles it directly.
    Satisfies value >= (1/100)/log(1/eps) for small eps.
    """
    if not 0.0 < eps < 0.5:
        raise LyapunovError("eps must lie in (0, 1/2)")

    def integrand(alpha):
        if alpha >= 1.0:
            return 0.0
        h = np.log(np.sqrt(alpha / (1.0 - alpha)) / eps)
        return 0.0 if not np.isfinite(h) or h == 0.0 else 1.0 / h

    val, err = quad(integrand, eps, 1.0, limit=400)
    return float(val)
