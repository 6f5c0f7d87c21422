"""Uniform cell-centered grids with zero-flux boundaries.

The simulator works on a 1-D interval or a 2-D square, discretized with a
uniform cell-centered mesh: node ``i`` sits at ``(i + 1/2) h``.  With this
layout a reflected ghost value (ghost = first interior value) enforces a
homogeneous Neumann condition to second order without one-sided stencils.

All operators here are pure functions; fields are value objects and are
never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sps


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centered mesh on an interval (dim=1) or square (dim=2).

    ``n`` is the number of nodes per axis and ``length`` the edge length of
    the box, so the spacing is ``h = length / n``.
    """

    dim: int
    n: int
    length: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 3:
            raise ValueError(f"need at least 3 nodes per axis, got {self.n}")
        if not self.length > 0.0:
            raise ValueError(f"length must be positive, got {self.length}")

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def num_nodes(self) -> int:
        return self.n ** self.dim

    @property
    def shape(self) -> tuple:
        return (self.n,) if self.dim == 1 else (self.n, self.n)

    def coordinates(self):
        """Cell-center coordinates: a vector for dim=1, a meshgrid pair for dim=2."""
        x = (np.arange(self.n) + 0.5) * self.h
        if self.dim == 1:
            return x
        return np.meshgrid(x, x, indexing="ij")

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim


@dataclass
class ScalarField:
    """Node values of a scalar quantity on a grid."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            if v.size == self.grid.num_nodes:
                v = v.reshape(self.grid.shape)
            else:
                raise ValueError(
                    f"field has {v.size} values, grid has {self.grid.num_nodes} nodes"
                )
        object.__setattr__(self, "values", v)

    def check_finite(self) -> "ScalarField":
        if not np.all(np.isfinite(self.values)):
            raise FloatingPointError("field contains non-finite values")
        return self

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())


def field_of(grid: Grid, value) -> ScalarField:
    """Build a field from a scalar constant or an array of node values."""
    if np.isscalar(value):
        return ScalarField(grid, np.full(grid.shape, float(value)))
    return ScalarField(grid, np.asarray(value, dtype=float))


def _require_same_grid(*fields: ScalarField) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise ValueError("fields live on different grids")
    return g


def laplace_neumann(grid: Grid, u: ScalarField) -> ScalarField:
    """Discrete Laplacian with reflected ghost values (zero normal flux).

    3-point (1-D) / 5-point (2-D) stencil divided by h^2.  Constants are in
    the kernel exactly; boundary rows see the reflected ghost, which is what
    makes the cell-centered Neumann closure second order.
    """
    if u.grid != grid:
        raise ValueError("field does not live on the given grid")
    v = u.values
    h2 = grid.h ** 2
    out = np.zeros_like(v)
    for axis in range(grid.dim):
        p = np.pad(v, [(1, 1) if a == axis else (0, 0) for a in range(grid.dim)],
                   mode="edge")
        sl_lo = tuple(slice(0, -2) if a == axis else slice(None) for a in range(grid.dim))
        sl_hi = tuple(slice(2, None) if a == axis else slice(None) for a in range(grid.dim))
        out += (p[sl_lo] - 2.0 * v + p[sl_hi]) / h2
    return ScalarField(grid, out).check_finite()


def _face_coefficient(k_lo: np.ndarray, k_hi: np.ndarray,
                      harmonic: bool) -> np.ndarray:
    if not harmonic:
        return 0.5 * (k_lo + k_hi)
    # harmonic mean annihilates the flux wherever the coefficient touches 0,
    # which stalls degenerate runs; kept as an option, not the default
    s = k_lo + k_hi
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0.0, 2.0 * k_lo * k_hi / s, 0.0)


def div_k_grad_arrays(grid: Grid, kv: np.ndarray, uv: np.ndarray,
                      harmonic: bool = False) -> np.ndarray:
    """Raw-array core of :func:`div_k_grad` (no wrapping, no checks);
    hot path of the linear solver."""
    h = grid.h
    out = np.zeros_like(uv)
    for axis in range(grid.dim):
        du = np.diff(uv, axis=axis)
        kf = _face_coefficient(_slab(kv, axis, None, -1),
                               _slab(kv, axis, 1, None), harmonic)
        flux = kf * du / h
        # divergence: interior nodes see (flux_right - flux_left)/h,
        # boundary nodes see the single interior face (outer flux is zero)
        pad = [(1, 1) if a == axis else (0, 0) for a in range(grid.dim)]
        fpad = np.pad(flux, pad, mode="constant")
        out += np.diff(fpad, axis=axis) / h
    return out


def div_k_grad(grid: Grid, k: ScalarField, u: ScalarField,
               harmonic: bool = False) -> ScalarField:
    """Divergence of the flux ``k grad u`` in conservation form.

    Face coefficients are arithmetic means of the node values of ``k`` by
    default (``harmonic=True`` switches the averaging); boundary faces carry
    zero flux.  With ``k == 1`` this reduces to :func:`laplace_neumann` to
    machine precision.
    """
    _require_same_grid(k, u)
    if u.grid != grid:
        raise ValueError("field does not live on the given grid")
    if k.values.min() < 0.0:
        raise ValueError("flux coefficient must be nonnegative")
    out = div_k_grad_arrays(grid, k.values, u.values, harmonic)
    return ScalarField(grid, out).check_finite()


def _slab(a: np.ndarray, axis: int, start, stop) -> np.ndarray:
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    return a[tuple(idx)]


def integrate(grid: Grid, u: ScalarField) -> float:
    """Midpoint quadrature: h^dim times the sum of node values."""
    if u.grid != grid:
        raise ValueError("field does not live on the given grid")
    return float(grid.cell_volume * u.values.sum())


def h1_seminorm_sq(grid: Grid, u: ScalarField) -> float:
    """Face-based discrete Dirichlet energy: sum over interior faces of
    h^dim ((u_q - u_p)/h)^2.  Zero exactly iff the field is constant."""
    if u.grid != grid:
        raise ValueError("field does not live on the given grid")
    h = grid.h
    total = 0.0
    for axis in range(grid.dim):
        du = np.diff(u.values, axis=axis)
        total += float(np.sum((du / h) ** 2))
    return grid.cell_volume * total


def dirichlet_energy(grid: Grid, k: ScalarField, u: ScalarField,
                     harmonic: bool = False) -> float:
    """Weighted face energy sum_faces k_face h^dim ((u_q - u_p)/h)^2.

    Matches the bilinear form of :func:`div_k_grad` for the same averaging:
    ``integrate(v * (-div_k_grad(k, u))) == dirichlet_form(k, u, v)``.
    """
    _require_same_grid(k, u)
    h = grid.h
    total = 0.0
    for axis in range(grid.dim):
        du = np.diff(u.values, axis=axis)
        kf = _face_coefficient(_slab(k.values, axis, None, -1),
                               _slab(k.values, axis, 1, None), harmonic)
        total += float(np.sum(kf * (du / h) ** 2))
    return grid.cell_volume * total


@lru_cache(maxsize=32)
def laplacian_matrix(grid: Grid) -> sps.csr_matrix:
    """Sparse matrix of :func:`laplace_neumann` (row-major node ordering).

    Cached per grid; used by the Newton solver of the implicit stage.
    """
    n, h2 = grid.n, grid.h ** 2
    main = -2.0 * np.ones(n)
    main[0] = main[-1] = -1.0  # reflected ghost merges into the diagonal
    off = np.ones(n - 1)
    lap1d = sps.diags([off, main, off], offsets=[-1, 0, 1], format="csr") / h2
    if grid.dim == 1:
        return lap1d.tocsr()
    eye = sps.identity(n, format="csr")
    return (sps.kron(lap1d, eye) + sps.kron(eye, lap1d)).tocsr()


def write_snapshot(path, field: ScalarField, t: float) -> None:
    """Write a field snapshot: header ``dim n length t`` then one node value
    per line in row-major order, 17 significant digits (lossless round trip)."""
    g = field.grid
    lines = [f"{g.dim} {g.n} {g.length:.17g} {t:.17g}"]
    lines.extend(f"{v:.17g}" for v in field.values.ravel())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path) -> tuple:
    """Read a snapshot written by :func:`write_snapshot`.

    Returns ``(field, t)``.
    """
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ValueError(f"{path}: malformed snapshot header")
        dim, n = int(header[0]), int(header[1])
        length, t = float(header[2]), float(header[3])
        grid = Grid(dim, n, length)
        values = np.loadtxt(fh, dtype=float, ndmin=1)
    if values.size != grid.num_nodes:
        raise ValueError(
            f"{path}: expected {grid.num_nodes} values, found {values.size}"
        )
    return ScalarField(grid, values.reshape(grid.shape)), t
