"""Periodic cell problems on the unit cell and their slow-parameter tables.

For each slow sample x and direction j this solves

    div_y[ a(x, y) (e^j + grad_y chi^j(x, y)) ] = 0,   <chi^j(x, .)> = 0,

periodically in y, together with the adjoint problems (coefficient a^T).
Smooth coefficients use Fourier collocation with an inverse-Laplacian
preconditioner; discontinuous laminates use conservative finite volumes
with a direct sparse solve.
"""

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assemble import assemble_diffusion
from .errors import SolveError
from .grids import TorusGrid, centered_gradient
from .spectral import calculus

_ENERGY_SLACK = 1.0 + 1e-6


@dataclass
class CellField:
    """One cell solution: zero-mean values and gradient on the cell grid."""
    values: np.ndarray          # (*cell_shape)
    grad: np.ndarray            # (d, *cell_shape)
    residual: float             # relative discrete residual
    method: str


class SpectralCellSolver:
    """Fourier collocation for div_y[a (e^j + grad chi)] = 0 on one cell.

    The unknown lives in the zero-mean, Nyquist-masked trig space; the
    preconditioner is the exact inverse Laplacian on that space, so the
    preconditioned operator has spectrum controlled by the ellipticity
    bounds alone.
    """

    def __init__(self, a_nodes, grid, tol, maxiter=300):
        self.grid = grid
        self.a = a_nodes                    # (*shape, d, d)
        self.tol = tol
        self.maxiter = maxiter
        self.calc = calculus(grid.shape)

    def _apply(self, nvec):
        v = nvec.reshape(self.grid.shape)
        g = self.calc.grad(v)
        flux = np.einsum("...pq,q...->p...", self.a, g)
        return -self.calc.div(flux).ravel()

    def _precond(self, rvec):
        return self.calc.poisson(rvec.reshape(self.grid.shape)).ravel()

    def solve(self, j):
        n = self.grid.size
        b = self.calc.div(np.moveaxis(self.a[..., :, j], -1, 0)).ravel()
        nb = np.linalg.norm(b)
        if nb == 0.0:
            zero = np.zeros(self.grid.shape)
            return CellField(zero, np.zeros((self.grid.dim,) + self.grid.shape),
                             0.0, "spectral")
        lin = spla.LinearOperator((n, n), matvec=self._apply)
        pre = spla.LinearOperator((n, n), matvec=self._precond)
        x, info = spla.lgmres(lin, b, M=pre, rtol=self.tol, atol=0.0,
                              maxiter=self.maxiter)
        v = x.reshape(self.grid.shape)
        v = v - v.mean()
        # lgmres may stagnate at the roundoff floor just above rtol; the
        # contract is the achieved residual, not the iteration count
        res = np.linalg.norm(self._apply(v.ravel()) - b) / nb
        if res > 10 * self.tol:
            raise SolveError(f"cell solve (spectral, j={j}) residual {res:.2e} "
                             f"(info={info})")
        return CellField(v, self.calc.grad(v), res, "spectral")

    def flux_column(self, cf, j):
        """Node values of a (e^j + grad chi^j), shape (d, *cell)."""
        g = cf.grad.copy()
        ej = np.zeros_like(g)
        ej[j] = 1.0
        return np.einsum("...pq,q...->p...", self.a, g + ej)

    def effective_column(self, cf, j):
        return self.flux_column(cf, j).reshape(self.grid.dim, -1).mean(axis=1)


class FVCellSolver:
    """Conservative finite volumes for cells with discontinuous coefficients.

    The singular periodic system is pinned at node 0 (the conservative
    right-hand side is exactly compatible, so pinning is exact) and solved
    directly.  The effective column uses the face-flux quadrature, which is
    exact for laminates whose jumps align with grid nodes.
    """

    def __init__(self, a_eval, grid, tol):
        self.grid = grid
        self.tol = tol
        d = grid.dim
        self.diag_faces = []
        for m in range(d):
            xf = grid.face_coords(m)
            self.diag_faces.append(a_eval(xf)[..., m, m])
        self.a_nodes = a_eval(grid.coords())
        self.cross = {}
        for m in range(d):
            for k in range(d):
                if m != k:
                    self.cross[(m, k)] = self.a_nodes[..., m, k]
        self.mat = assemble_diffusion(grid, self.diag_faces, self.cross, mass=0.0)
        self._lu = None

    @property
    def lu(self):
        # pin node 0 against the constant null space (the conservative rhs
        # is exactly compatible, so pinning is exact); factored on first use
        # since quadrature-only consumers never solve
        if self._lu is None:
            coo = self.mat.tocoo()
            keep = coo.row != 0
            pinned = sp.coo_matrix(
                (np.concatenate([coo.data[keep], [1.0]]),
                 (np.concatenate([coo.row[keep], [0]]),
                  np.concatenate([coo.col[keep], [0]]))),
                shape=coo.shape).tocsc()
            self._lu = spla.splu(pinned)
        return self._lu

    def _rhs(self, j):
        # div of the constant-direction flux a e^j, discretized like the matrix
        d = self.grid.dim
        h = self.grid.h
        out = np.zeros(self.grid.shape)
        for m in range(d):
            if m == j:
                af = self.diag_faces[m]
                out += (af - np.roll(af, 1, axis=m)) / h
            else:
                c = self.cross[(m, j)]
                out += (np.roll(c, -1, axis=m) - np.roll(c, 1, axis=m)) / (2.0 * h)
        return out

    def solve(self, j):
        b = self._rhs(j).ravel()
        nb = np.linalg.norm(b)
        if nb == 0.0:
            zero = np.zeros(self.grid.shape)
            return CellField(zero, np.zeros((self.grid.dim,) + self.grid.shape),
                             0.0, "fv")
        b_pinned = b.copy()
        b_pinned[0] = 0.0
        x = self.lu.solve(b_pinned)
        v = x.reshape(self.grid.shape)
        v = v - v.mean()
        res = np.linalg.norm(self.mat @ v.ravel() - b) / nb
        if res > max(10 * self.tol, 1e-10):
            raise SolveError(f"cell solve (fv, j={j}) residual {res:.2e}")
        return CellField(v, centered_gradient(v, self.grid.h), res, "fv")

    def effective_column(self, cf, j):
        """Flux mean of a (e^j + grad chi^j): conservative faces plus node cross terms."""
        d = self.grid.dim
        h = self.grid.h
        col = np.zeros(d)
        for m in range(d):
            face_flux = self.diag_faces[m] * (
                (np.roll(cf.values, -1, axis=m) - cf.values) / h + (1.0 if m == j else 0.0))
            col[m] = face_flux.mean()
            for k in range(d):
                if k != m:
                    dk = (np.roll(cf.values, -1, axis=k)
                          - np.roll(cf.values, 1, axis=k)) / (2 * h)
                    col[m] += (self.cross[(m, k)] * (dk + (1.0 if k == j else 0.0))).mean()
        return col

    def flux_column(self, cf, j):
        """Node values of a (e^j + grad chi^j) from central gradients."""
        g = cf.grad.copy()
        ej = np.zeros_like(g)
        ej[j] = 1.0
        return np.einsum("...pq,q...->p...", self.a_nodes, g + ej)


def make_solver(a_eval, grid, tol, method):
    if grid.n % 2:
        raise ValueError(f"cell grids need an even point count, got {grid.n}")
    if method == "spectral":
        return SpectralCellSolver(a_eval(grid.coords()), grid, tol)
    if method == "fv":
        return FVCellSolver(a_eval, grid, tol)
    raise ValueError(f"unknown cell method '{method}'")


def solve_cell(a_eval, j, grid, tol=1e-11, method="spectral"):
    """Solve one periodic cell problem in direction j.

    `a_eval` maps cell coordinates (..., d) to matrices (..., d, d) for one
    frozen slow point.  Returns a zero-mean CellField whose discrete
    residual is below 10*tol; raises SolveError otherwise.
    """
    if not 0 <= j < grid.dim:
        raise ValueError(f"direction {j} out of range for dim {grid.dim}")
    solver = make_solver(a_eval, grid, tol, method)
    cf = solver.solve(j)
    _check_energy(cf, grid, a_eval)
    return cf


def solve_adjoint_cell(a_eval, j, grid, tol=1e-11, method="spectral"):
    """Cell problem with the transposed coefficient matrix."""
    def a_t(y):
        return np.swapaxes(a_eval(y), -1, -2)
    return solve_cell(a_t, j, grid, tol=tol, method=method)


def _check_energy(cf, grid, a_eval):
    # gradient energy of any cell solution obeys |grad chi| <= sqrt(d)/lam^2
    # for any lam satisfying both ellipticity inequalities; the sampled
    # two-sided lam below is such a constant
    a = a_eval(grid.coords())
    sym = 0.5 * (a + np.swapaxes(a, -1, -2))
    lam_low = float(np.linalg.eigvalsh(sym).min())
    if lam_low <= 0:
        raise SolveError("cell coefficient not elliptic on the grid")
    upper = float(np.linalg.norm(a, ord=2, axis=(-2, -1)).max())
    lam = min(lam_low, 1.0 / upper)
    w = grid.h ** grid.dim
    gnorm = np.sqrt(w * float(np.sum(cf.grad ** 2)))
    bound = np.sqrt(grid.dim) / lam ** 2
    if gnorm > bound * _ENERGY_SLACK:
        raise SolveError(f"cell gradient energy {gnorm:.3g} violates bound {bound:.3g}")


@dataclass
class CellSolutions:
    """Cell solutions, adjoints, and slow-variable gradients on a sample grid.

    Array layout (slow sample axes first, then direction j, then cell axes):
      chi, chi_adj:                 (*slow_shape, d, *cell_shape)
      grad_y_chi, grad_y_chi_adj:   (*slow_shape, d, d, *cell_shape)
      grad_x_chi, grad_x_chi_adj:   (*slow_shape, d, d, *cell_shape)
    where grad_* [..., j, m, ...] holds the m-derivative of solution j.
    """
    family: str
    slow_grid: TorusGrid
    cell_grid: TorusGrid
    chi: np.ndarray
    grad_y_chi: np.ndarray
    chi_adj: np.ndarray
    grad_y_chi_adj: np.ndarray
    grad_x_chi: np.ndarray
    grad_x_chi_adj: np.ndarray
    residual_max: float = 0.0
    lipschitz_quotient: float = 0.0
    method: str = "spectral"

    @property
    def dim(self):
        return self.cell_grid.dim


def _slow_gradient(table, slow_grid):
    """Centered differences over the leading slow axes (periodic wrap)."""
    d = slow_grid.dim
    inv2h = 1.0 / (2.0 * slow_grid.h)
    comps = []
    for ax in range(d):
        comps.append((np.roll(table, -1, axis=ax) - np.roll(table, 1, axis=ax)) * inv2h)
    # (*slow, d, *cell) -> insert derivative axis after j
    return np.stack(comps, axis=d + 1)


def _h1_cell_norm(values, grad, w):
    return np.sqrt(w * (np.sum(values ** 2) + np.sum(grad ** 2)))


def build_cell_table(field, slow_grid, cell_grid, tol=1e-11, jobs=1):
    """Solve primal and adjoint cell problems at every slow sample.

    Slow-variable gradients are taken by centered differences over the
    (periodic) slow grid.  The largest adjacent-sample H1 Lipschitz
    quotient of the solutions is recorded.
    """
    d = field.dim
    if slow_grid.dim != d or cell_grid.dim != d:
        raise ValueError("grid dimensions do not match the field")
    method = field.cell_method
    xs = slow_grid.coords().reshape(-1, d)
    n_slow = xs.shape[0]
    cshape = cell_grid.shape

    chi = np.zeros((n_slow, d) + cshape)
    gy = np.zeros((n_slow, d, d) + cshape)
    chi_a = np.zeros((n_slow, d) + cshape)
    gy_a = np.zeros((n_slow, d, d) + cshape)
    residual_max = 0.0

    symmetric = field.symmetric

    def work(i):
        x = xs[i]

        def a_eval(y):
            xb = np.broadcast_to(x, y.shape)
            return field.eval(xb, y)

        try:
            solver = make_solver(a_eval, cell_grid, tol, method)
            out = []
            for j in range(d):
                cf = solver.solve(j)
                out.append((cf.values, cf.grad, cf.residual))
            if symmetric:
                out_adj = out
            else:
                def a_eval_t(y):
                    return np.swapaxes(a_eval(y), -1, -2)
                solver_a = make_solver(a_eval_t, cell_grid, tol, method)
                out_adj = []
                for j in range(d):
                    cf = solver_a.solve(j)
                    out_adj.append((cf.values, cf.grad, cf.residual))
        except SolveError as exc:
            raise SolveError(f"slow sample x = {x}: {exc}") from exc
        return out, out_adj

    try:
        if field.lipschitz_x == 0.0:
            # no slow dependence: one solve serves every sample
            results = [work(0)] * n_slow
        elif jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(work, range(n_slow)))
        else:
            results = [work(i) for i in range(n_slow)]
    except SolveError as exc:
        raise SolveError(f"cell table build failed: {exc}") from exc

    for i, (out, out_adj) in enumerate(results):
        for j in range(d):
            chi[i, j], gy[i, j], res = out[j]
            residual_max = max(residual_max, res)
            chi_a[i, j], gy_a[i, j], res_a = out_adj[j]
            residual_max = max(residual_max, res_a)

    sshape = slow_grid.shape
    chi = chi.reshape(sshape + (d,) + cshape)
    gy = gy.reshape(sshape + (d, d) + cshape)
    chi_a = chi_a.reshape(sshape + (d,) + cshape)
    gy_a = gy_a.reshape(sshape + (d, d) + cshape)

    gx = _slow_gradient(chi, slow_grid)
    gx_a = _slow_gradient(chi_a, slow_grid)

    # adjacent-sample H1 Lipschitz quotient along each slow axis
    w = cell_grid.h ** d
    quot = 0.0
    for ax in range(d):
        dv = np.roll(chi, -1, axis=ax) - chi
        dg = np.roll(gy, -1, axis=ax) - gy
        dv_sq = np.sum(dv ** 2, axis=tuple(range(d + 1, dv.ndim)))   # (*slow, d)
        dg_sq = np.sum(dg ** 2, axis=tuple(range(d + 1, dg.ndim)))
        per_pair = np.sqrt(w * (dv_sq + dg_sq))
        quot = max(quot, float(per_pair.max()) / slow_grid.h)

    return CellSolutions(family=field.name, slow_grid=slow_grid, cell_grid=cell_grid,
                         chi=chi, grad_y_chi=gy, chi_adj=chi_a, grad_y_chi_adj=gy_a,
                         grad_x_chi=gx, grad_x_chi_adj=gx_a,
                         residual_max=residual_max, lipschitz_quotient=quot,
                         method=method)


# -- binary container --------------------------------------------------------

_MAGIC = b"CELLTBL1"


def save_cell_table(path, cells):
    """Write a cell table to the documented flat binary layout.

    Layout: 8-byte magic, 64-byte family name (utf-8, zero padded), three
    little-endian int64 (dim, n_x, n_y), one little-endian float64 pair
    (residual_max, lipschitz_quotient), then the six float64 arrays chi,
    grad_y_chi, chi_adj, grad_y_chi_adj, grad_x_chi, grad_x_chi_adj in
    C order.
    """
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(cells.family.encode()[:64].ljust(64, b"\0"))
        fh.write(struct.pack("<3q", cells.dim, cells.slow_grid.n, cells.cell_grid.n))
        fh.write(struct.pack("<2d", cells.residual_max, cells.lipschitz_quotient))
        for arr in (cells.chi, cells.grad_y_chi, cells.chi_adj,
                    cells.grad_y_chi_adj, cells.grad_x_chi, cells.grad_x_chi_adj):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_cell_table(path):
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError(f"{path}: not a cell table container")
        family = fh.read(64).rstrip(b"\0").decode()
        dim, n_x, n_y = struct.unpack("<3q", fh.read(24))
        residual_max, lip = struct.unpack("<2d", fh.read(16))
        slow = TorusGrid(dim, n_x)
        cell = TorusGrid(dim, n_y)
        sshape, cshape = slow.shape, cell.shape

        def read(shape):
            count = int(np.prod(shape))
            arr = np.frombuffer(fh.read(8 * count), dtype="<f8", count=count)
            return arr.reshape(shape).copy()

        chi = read(sshape + (dim,) + cshape)
        gy = read(sshape + (dim, dim) + cshape)
        chi_a = read(sshape + (dim,) + cshape)
        gy_a = read(sshape + (dim, dim) + cshape)
        gx = read(sshape + (dim, dim) + cshape)
        gx_a = read(sshape + (dim, dim) + cshape)
    return CellSolutions(family=family, slow_grid=slow, cell_grid=cell,
                         chi=chi, grad_y_chi=gy, chi_adj=chi_a, grad_y_chi_adj=gy_a,
                         grad_x_chi=gx, grad_x_chi_adj=gx_a,
                         residual_max=residual_max, lipschitz_quotient=lip)
