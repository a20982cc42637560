"""Finite-volume Hamiltonians for the four model families.

Geometries: cube lattice Z^d with block size K and a potential profile,
strip of width L with matrix-valued potentials, Bethe tree of coordination
k >= 3.  Boxes are assembled from a disorder map produced by
:func:`sample_disorder`, whose values are keyed counter-RNG draws: the value
attached to a block is a pure function of (seed, sample index, block
coordinate), so perturbing the disorder outside the dependence radius of a
polynomial degree cannot change the projected trace (bit-identically).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from . import measures
from ._rng import fold_key, key_uniform
from .measures import ProbabilityMeasure

MAX_BOX_SITES = 10_000_000  # out-of-memory guard for assembled boxes

BOUNDARIES = ("open", "periodic")


class LatticeError(ValueError):
    """Invalid model description or box assembly."""


# ---------------------------------------------------------------------------
# geometries and model description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CubeLattice:
    d: int
    K: int = 1

    def __post_init__(self):
        if self.d < 1 or self.K < 1:
            raise LatticeError("cube lattice needs d >= 1 and K >= 1")


@dataclass(frozen=True, eq=False)
class Strip:
    width: int
    matrices: tuple = ()
    weights: tuple = ()

    def __post_init__(self):
        if self.width < 1:
            raise LatticeError("strip width must be >= 1")
        if not self.matrices:
            raise LatticeError("strip needs a nonempty matrix family")
        mats = tuple(np.asarray(m, dtype=float) for m in self.matrices)
        for m in mats:
            if m.shape != (self.width, self.width):
                raise LatticeError("strip matrices must be width x width")
            if np.max(np.abs(m - m.T)) > 1e-12:
                raise LatticeError("strip matrices must be symmetric to 1e-12")
        w = np.asarray(self.weights if self.weights else
                       [1.0 / len(mats)] * len(mats), dtype=float)
        if len(w) != len(mats) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise LatticeError("strip weights must be a probability vector")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "weights", tuple(w / w.sum()))


@dataclass(frozen=True)
class Bethe:
    k: int

    def __post_init__(self):
        if self.k < 3:
            raise LatticeError("Bethe coordination number must be >= 3")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Operator family: geometry, profile, disorder scale, single-site measure."""

    geometry: object
    disorder_scale: float = 1.0
    measure: ProbabilityMeasure | None = None
    profile: np.ndarray | None = None

    def __post_init__(self):
        if self.disorder_scale < 0:
            raise LatticeError("disorder scale must be nonnegative")
        if isinstance(self.geometry, CubeLattice):
            K, d = self.geometry.K, self.geometry.d
            prof = self.profile
            if prof is None:
                prof = np.ones((K,) * d)
            prof = np.asarray(prof, dtype=float)
            if prof.shape != (K,) * d:
                raise LatticeError(f"profile must cover all K^d sites, shape {(K,)*d}")
            prof = prof.copy()
            prof.flags.writeable = False
            object.__setattr__(self, "profile", prof)
        elif self.profile is not None:
            raise LatticeError("profile applies to cube lattices only")
        if self.measure is None and not isinstance(self.geometry, Strip):
            object.__setattr__(self, "measure", measures.rescale(
                measures.point_mass(0.0), 0.0))

    @property
    def rank(self) -> int:
        """N = rank of the projection P0."""
        g = self.geometry
        if isinstance(g, CubeLattice):
            return g.K ** g.d
        if isinstance(g, Strip):
            return g.width
        return 1

    @property
    def profile_sup(self) -> float:
        return float(np.max(np.abs(self.profile))) if self.profile is not None else 1.0

    @property
    def spectral_bound(self) -> float:
        """r with sigma(H) in [-r, r] for every disorder realization."""
        g = self.geometry
        lam = self.disorder_scale
        if isinstance(g, CubeLattice):
            C = self.measure.support_bound
            return 2.0 * g.d + lam * C * self.profile_sup
        if isinstance(g, Strip):
            pot = max(float(np.max(np.abs(np.linalg.eigvalsh(m)))) for m in g.matrices)
            return 2.0 + pot
        C = self.measure.support_bound
        return 2.0 * np.sqrt(g.k - 1.0) + lam * C


# ---------------------------------------------------------------------------
# counting lemma bookkeeping
# ---------------------------------------------------------------------------

def dependence_radius(model: ModelSpec, n: int) -> int:
    """Box radius (cube/strip) or tree depth (Bethe) that makes
    Tr(P0 H^n P0) exactly equal to its infinite-volume value.

    Closed length-n walks from the projection block stay within
    (K-1) + floor(n/2) sites of it; on the tree, within generation
    floor(n/2).
    """
    if n < 0:
        raise LatticeError("degree must be nonnegative")
    g = model.geometry
    if isinstance(g, CubeLattice):
        return (g.K - 1) + n // 2
    if isinstance(g, Strip):
        return n // 2
    return n // 2


def gamma_count(model: ModelSpec, n: int, refined: bool = False) -> float:
    """Counting-function value Gamma(n): number of disorder variables the
    map omega -> Tr(P0 H^n P0) can depend on.

    Default is the simplified form the theorem constants are stated with:
    2^d n^d on the cube lattice (2n for the strip), 3 k^{n/2} on the Bethe
    lattice.  ``refined=True`` returns the sharper block count.
    """
    if n < 1:
        raise LatticeError("gamma_count needs n >= 1")
    g = model.geometry
    if isinstance(g, Bethe):
        if refined:
            depth = n // 2
            if depth == 0:
                return 1.0
            return 1.0 + g.k * ((g.k - 1.0) ** depth - 1.0) / (g.k - 2.0)
        return 3.0 * g.k ** (n / 2.0)
    d = g.d if isinstance(g, CubeLattice) else 1
    K = g.K if isinstance(g, CubeLattice) else 1
    if refined:
        R = (K - 1) + n // 2
        if K >= 2:
            per_axis = 2 * int(np.ceil(R / (K - 1)))
        else:
            per_axis = 2 * (n // 2) + 1  # every site is a block
        return float(per_axis ** d)
    return float(2 ** d) * float(n) ** d


# ---------------------------------------------------------------------------
# regions and disorder sampling
# ---------------------------------------------------------------------------

class BetheTree:
    """Rooted tree: root has k children, other internal vertices k-1, to a depth.

    Vertex identity is its child-index path from the root, folded to a 64-bit
    key, so disorder values do not depend on the requested depth.
    """

    def __init__(self, k: int, depth: int):
        self.k = k
        self.depth = depth
        parents = [-1]
        keys = [fold_key(())]
        depths = [0]
        frontier = [(0, ())]
        for level in range(depth):
            nxt = []
            for idx, path in frontier:
                n_child = k if idx == 0 else k - 1
                for c in range(n_child):
                    child_path = path + (c,)
                    parents.append(idx)
                    keys.append(fold_key(child_path))
                    depths.append(level + 1)
                    nxt.append((len(parents) - 1, child_path))
            frontier = nxt
        self.parents = np.array(parents, dtype=np.int64)
        self.keys = np.array(keys, dtype=np.int64)
        self.vertex_depths = np.array(depths, dtype=np.int64)

    @property
    def n_vertices(self) -> int:
        return len(self.parents)


@lru_cache(maxsize=32)
def bethe_tree(k: int, depth: int) -> BetheTree:
    return BetheTree(k, depth)


def region_sites(model: ModelSpec, radius_or_length: int, boundary: str = "open"):
    """Site enumeration of the finite box (deterministic row-major order)."""
    g = model.geometry
    if isinstance(g, Bethe):
        return bethe_tree(g.k, radius_or_length)
    if isinstance(g, Strip):
        if boundary == "open":
            return np.arange(-radius_or_length, radius_or_length + 1, dtype=np.int64)
        return np.arange(radius_or_length, dtype=np.int64)
    d, K = g.d, g.K
    if boundary == "open":
        R = radius_or_length
        if R < K - 1:
            raise LatticeError("box radius must cover the projection block (R >= K-1)")
        if (2 * R + 1) ** d > MAX_BOX_SITES:
            raise LatticeError(f"box volume {(2*R+1)**d} exceeds cap {MAX_BOX_SITES}")
        axes = [np.arange(-R, R + 1, dtype=np.int64)] * d
    else:
        side = radius_or_length
        if side < 3:
            raise LatticeError("periodic box needs side >= 3")
        if side % K:
            raise LatticeError("periodic box side must be a multiple of K")
        if side ** d > MAX_BOX_SITES:
            raise LatticeError(f"box volume {side**d} exceeds cap {MAX_BOX_SITES}")
        axes = [np.arange(side, dtype=np.int64)] * d
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in grids], axis=1)


def sample_disorder(model: ModelSpec, seed: int, sample_index: int, region) -> dict:
    """One keyed draw per disorder block intersecting the region.

    The value at a block is a pure function of (seed, sample_index, block
    coordinate): deterministic and independent of the enumeration order.
    """
    g = model.geometry
    if isinstance(g, Bethe):
        tree: BetheTree = region
        vals = model.measure.sample(seed, sample_index, tree.keys[:, None])
        return dict(zip((int(k) for k in tree.keys), vals))
    if isinstance(g, Strip):
        sites = np.asarray(region, dtype=np.int64)
        if sites.size == 0:
            raise LatticeError("empty region")
        u = key_uniform(seed, sample_index, sites[:, None])
        cumw = np.cumsum(g.weights)
        cumw[-1] = 1.0
        idx = np.searchsorted(cumw, u, side="right")
        return {int(s): int(i) for s, i in zip(sites, idx)}
    sites = np.asarray(region, dtype=np.int64)
    if sites.size == 0:
        raise LatticeError("empty region")
    blocks = np.unique(np.floor_divide(sites, g.K), axis=0)
    vals = model.measure.sample(seed, sample_index, blocks)
    return {tuple(int(c) for c in b): float(v) for b, v in zip(blocks, vals)}


# ---------------------------------------------------------------------------
# Hamiltonian boxes
# ---------------------------------------------------------------------------

@dataclass
class HamiltonianBox:
    """Sparse symmetric finite-volume Hamiltonian.

    ``diagonal`` holds the on-site potential; (hop_i, hop_j, hop_val) the
    off-diagonal entries with i < j (hoppings are 1; strip on-site blocks
    carry matrix entries).  ``projection_indices`` realize P0.
    """

    kind: str
    boundary: str
    dim: int
    diagonal: np.ndarray
    hop_i: np.ndarray
    hop_j: np.ndarray
    hop_val: np.ndarray
    projection_indices: np.ndarray
    spectral_bound: float
    region: object = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self._matrix = sp.csr_matrix(
            (np.concatenate([self.hop_val, self.hop_val, self.diagonal]),
             (np.concatenate([self.hop_i, self.hop_j, np.arange(self.dim)]),
              np.concatenate([self.hop_j, self.hop_i, np.arange(self.dim)]))),
            shape=(self.dim, self.dim))

    def apply(self, v: np.ndarray) -> np.ndarray:
        if v.shape[0] != self.dim:
            raise LatticeError("vector length does not match box dimension")
        return self._matrix.dot(v)

    def to_dense(self, dtype=np.float64) -> np.ndarray:
        # cast the sparse entries first so the dense array is born in dtype
        return self._matrix.astype(dtype, copy=False).toarray()

    def tridiagonal(self):
        """(diag, offdiag) when the box is tridiagonal in its natural order."""
        if not np.all(self.hop_j - self.hop_i == 1) or len(self.hop_i) != self.dim - 1:
            return None
        off = np.zeros(self.dim - 1)
        off[self.hop_i] = self.hop_val
        return self.diagonal.copy(), off

    def banded_lower_1d_periodic(self):
        """Bandwidth-2 reordering of a periodic chain (ring fold 0, n-1, 1, n-2, ...).

        Returns the LAPACK lower-banded form for scipy.linalg.eig_banded,
        or None if the structure is not a single periodic chain.
        """
        n = self.dim
        expected = {(i, i + 1) for i in range(n - 1)} | {(0, n - 1)}
        if {(int(a), int(b)) for a, b in zip(self.hop_i, self.hop_j)} != expected:
            return None
        pos = np.empty(n, dtype=np.int64)
        half = (n + 1) // 2
        pos[:half] = 2 * np.arange(half)
        pos[half:] = 2 * (n - 1 - np.arange(half, n)) + 1
        band = np.zeros((3, n))
        band[0, :] = self.diagonal[np.argsort(pos)]
        for a, b in zip(self.hop_i, self.hop_j):
            pa, pb = pos[a], pos[b]
            lo, hi = (pa, pb) if pa < pb else (pb, pa)
            band[hi - lo, lo] += 1.0
        return band

    def gershgorin_interval(self):
        radius = np.zeros(self.dim)
        np.add.at(radius, self.hop_i, np.abs(self.hop_val))
        np.add.at(radius, self.hop_j, np.abs(self.hop_val))
        return (float(np.min(self.diagonal - radius)),
                float(np.max(self.diagonal + radius)))


def apply_H(box: HamiltonianBox, v: np.ndarray) -> np.ndarray:
    """Matvec y = H v through the sparse structure."""
    return box.apply(np.asarray(v, dtype=float))


def _cube_hops(shape, boundary):
    arr = np.arange(int(np.prod(shape))).reshape(shape)
    pairs_i, pairs_j = [], []
    for axis in range(len(shape)):
        if boundary == "open":
            a = np.take(arr, range(shape[axis] - 1), axis=axis)
            b = np.take(arr, range(1, shape[axis]), axis=axis)
        else:
            a = arr
            b = np.roll(arr, -1, axis=axis)
        pairs_i.append(a.ravel())
        pairs_j.append(b.ravel())
    i = np.concatenate(pairs_i)
    j = np.concatenate(pairs_j)
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    return lo, hi


def assemble_box(model: ModelSpec, radius_or_length: int, disorder: dict,
                 boundary: str = "open") -> HamiltonianBox:
    """Assemble the finite-volume Hamiltonian over the requested region.

    Hopping entries are 1 between nearest neighbors (per geometry and
    boundary rule); the diagonal at site x in block j is
    lambda * omega_j * Theta(offset of x), the strip carries its sampled
    matrix block per site, the Bethe tree lambda * omega_x.
    """
    if boundary not in BOUNDARIES:
        raise LatticeError(f"boundary must be one of {BOUNDARIES}")
    g = model.geometry
    lam = model.disorder_scale
    if isinstance(g, Bethe):
        tree = region_sites(model, radius_or_length)
        n = tree.n_vertices
        if n > MAX_BOX_SITES:
            raise LatticeError(f"box volume {n} exceeds cap {MAX_BOX_SITES}")
        try:
            omega = np.array([disorder[int(k)] for k in tree.keys])
        except KeyError as exc:
            raise LatticeError(f"disorder map missing block {exc}") from None
        child = np.arange(1, n)
        hop_i, hop_j = tree.parents[1:], child
        lo, hi = np.minimum(hop_i, hop_j), np.maximum(hop_i, hop_j)
        return HamiltonianBox("bethe", "open", n, lam * omega, lo, hi,
                              np.ones(n - 1), np.array([0]),
                              model.spectral_bound, region=tree)

    if isinstance(g, Strip):
        sites = region_sites(model, radius_or_length, boundary)
        L = g.width
        n_sites = len(sites)
        dim = n_sites * L
        if dim > MAX_BOX_SITES:
            raise LatticeError(f"box volume {dim} exceeds cap {MAX_BOX_SITES}")
        diag = np.zeros(dim)
        hop_i, hop_j, hop_val = [], [], []
        try:
            mats = [g.matrices[disorder[int(s)]] for s in sites]
        except KeyError as exc:
            raise LatticeError(f"disorder map missing block {exc}") from None
        for p, mat in enumerate(mats):
            base = p * L
            diag[base:base + L] = np.diag(mat)
            for a in range(L):
                for b in range(a + 1, L):
                    if mat[a, b] != 0.0:
                        hop_i.append(base + a)
                        hop_j.append(base + b)
                        hop_val.append(mat[a, b])
        n_edges = n_sites - 1 if boundary == "open" else n_sites
        if boundary == "periodic" and n_sites < 3:
            raise LatticeError("periodic strip needs length >= 3")
        for e in range(n_edges):
            p, q = e, (e + 1) % n_sites
            for a in range(L):
                hop_i.append(min(p, q) * L + a)
                hop_j.append(max(p, q) * L + a)
                hop_val.append(1.0)
        proj_site = int(np.where(sites == 0)[0][0]) if 0 in sites else 0
        proj = np.arange(proj_site * L, proj_site * L + L)
        return HamiltonianBox("strip", boundary, dim, diag,
                              np.array(hop_i, dtype=np.int64),
                              np.array(hop_j, dtype=np.int64),
                              np.array(hop_val), proj, model.spectral_bound,
                              region=sites)

    sites = region_sites(model, radius_or_length, boundary)
    d, K = g.d, g.K
    n = len(sites)
    if n > MAX_BOX_SITES:
        raise LatticeError(f"box volume {n} exceeds cap {MAX_BOX_SITES}")
    shape = (2 * radius_or_length + 1,) * d if boundary == "open" \
        else (radius_or_length,) * d
    blocks = np.floor_divide(sites, K)
    offsets = sites - K * blocks
    ublocks, inv = np.unique(blocks, axis=0, return_inverse=True)
    try:
        uvals = np.array([disorder[tuple(int(c) for c in b)] for b in ublocks])
    except KeyError as exc:
        raise LatticeError(f"disorder map missing block {exc}") from None
    theta = model.profile[tuple(offsets.T)]
    diag = lam * uvals[inv] * theta
    hop_i, hop_j = _cube_hops(shape, boundary)
    in_block = np.all((sites >= 0) & (sites <= K - 1), axis=1)
    proj = np.where(in_block)[0]
    if len(proj) != K ** d:
        raise LatticeError("box does not contain the projection block")
    return HamiltonianBox("cube", boundary, n, diag, hop_i, hop_j,
                          np.ones(len(hop_i)), proj, model.spectral_bound,
                          region=sites)


# ---------------------------------------------------------------------------
# model files: flat `key = value`
# ---------------------------------------------------------------------------

def parse_keyvalue(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise LatticeError(f"bad key=value line {lineno}: {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def model_from_text(text: str, measure_loader=measures.load, base_dir=".") -> ModelSpec:
    import os

    kv = parse_keyvalue(text)
    kind = kv.pop("geometry", None)
    if kind is None:
        raise LatticeError("model file missing 'geometry'")
    lam = float(kv.pop("lambda", "1.0"))
    meas = None
    if "measure" in kv:
        path = kv.pop("measure")
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        meas = measure_loader(path)
    if kind == "cube":
        d = int(kv.pop("d", "1"))
        K = int(kv.pop("K", "1"))
        profile = None
        if "profile" in kv:
            profile = np.array([float(x) for x in kv.pop("profile").split(",")])
            profile = profile.reshape((K,) * d)
        if kv:
            raise LatticeError(f"unknown model keys: {sorted(kv)}")
        return ModelSpec(CubeLattice(d, K), lam, meas, profile)
    if kind == "bethe":
        k = int(kv.pop("k", "3"))
        if kv:
            raise LatticeError(f"unknown model keys: {sorted(kv)}")
        return ModelSpec(Bethe(k), lam, meas)
    if kind == "strip":
        L = int(kv.pop("L"))
        mats, wts = [], []
        for idx in itertools.count(1):
            mkey, wkey = f"strip_matrix_{idx}", f"strip_weight_{idx}"
            if mkey not in kv:
                break
            mats.append(np.array([float(x) for x in kv.pop(mkey).split(",")])
                        .reshape(L, L))
            wts.append(float(kv.pop(wkey, "1")))
        if kv:
            raise LatticeError(f"unknown model keys: {sorted(kv)}")
        wts = np.asarray(wts)
        return ModelSpec(Strip(L, tuple(mats), tuple(wts / wts.sum())), lam, meas)
    raise LatticeError(f"unknown geometry {kind!r}")


def load_model(path) -> ModelSpec:
    import os

    with open(path) as fh:
        return model_from_text(fh.read(), base_dir=os.path.dirname(os.path.abspath(path)))
