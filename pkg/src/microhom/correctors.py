"""Smoothed correctors, coefficient tensors, and the composed operators.

All objects here are built from the cell tables, the flux deviations, and
the homogenized resolvent:

  * the smoothed corrector applies the cell solutions along a symmetric
    offset lattice: K(x) = sum_l w_l chi(x - eps w_l, x/eps) . grad u(x - eps w_l);
  * third/second-order coefficient tensors pair flux deviations with the
    adjoint cell solutions and slow gradients;
  * the eps-free composed operator sandwiches those differential operators
    between homogenized resolvents;
  * the double-averaged matrix contracts the analytic slow gradient of the
    coefficient with both families of cell gradients along the lattice.

Fast-variable evaluations land on the n_f-point sublattice of the cell by
construction (offsets are grid multiples), so cell data is restricted once
per sweep point and then only gathered.
"""

from dataclasses import dataclass

import numpy as np

from .assemble import assemble_diffusion
from .effective import _flux, flux_corrector, multilinear
from .grids import GridFunction, TorusGrid, centered_gradient
from .operators import (DiscreteOperator, grad_component_op, gradient_op,
                        matrix_op)
from .smoothing import SmoothingSpec
from .spectral import subsample, trig_resample


def _restrict_cell_axes(table, d, n_f):
    """Restrict the trailing d cell axes to the n_f-point sublattice."""
    cshape = table.shape[-d:]
    n_y = cshape[0]
    lead = table.shape[:-d]
    flat = table.reshape((-1,) + cshape)
    if n_y % n_f == 0:
        out = np.stack([subsample(f, n_f) for f in flat])
    else:
        out = np.stack([trig_resample(f, n_f) for f in flat])
    return out.reshape(lead + (n_f,) * d)


def _slow_corners(slow_grid, pts):
    """Flattened corner indices and weights of multilinear interpolation.

    pts: (N, d) -> (indices (2^d, N), weights (2^d, N)).
    """
    d = slow_grid.dim
    n = slow_grid.n
    u = np.mod(pts, 1.0) * n
    i0 = np.floor(u).astype(int) % n
    w = u - np.floor(u)
    i1 = (i0 + 1) % n
    if d == 1:
        idx = np.stack([i0[:, 0], i1[:, 0]])
        wts = np.stack([1 - w[:, 0], w[:, 0]])
    else:
        idx = np.stack([i0[:, 0] * n + i0[:, 1], i1[:, 0] * n + i0[:, 1],
                        i0[:, 0] * n + i1[:, 1], i1[:, 0] * n + i1[:, 1]])
        wts = np.stack([(1 - w[:, 0]) * (1 - w[:, 1]), w[:, 0] * (1 - w[:, 1]),
                        (1 - w[:, 0]) * w[:, 1], w[:, 0] * w[:, 1]])
    return idx, wts


class CorrectorKernel:
    """Cell solutions evaluated over the fine grid for every fast residue.

    fields[rho][j] is the fine-grid array of chi^j(z, ((i + rho) mod n_f)/n_f)
    with z the fine node and i its fast index; the offset-lattice operator
    only ever needs these n_f^d residue fields.
    """

    def __init__(self, cells, grid, eps, n_f, adjoint=False):
        d = cells.dim
        if grid.n % n_f or abs(grid.n * eps - n_f) > 1e-9:
            raise ValueError("fine grid must carry exactly n_f points per eps-cell")
        self.grid = grid
        self.n_f = n_f
        self.dim = d
        table = cells.chi_adj if adjoint else cells.chi
        fast = _restrict_cell_axes(table, d, n_f)          # (*slow, d, *[n_f]^d)
        n_slow = cells.slow_grid.size
        fast_flat = fast.reshape(n_slow, d, n_f ** d)

        pts = grid.coords().reshape(-1, d)
        corner_idx, corner_w = _slow_corners(cells.slow_grid, pts)

        axes_idx = np.indices(grid.shape)                  # (d, *fine)
        self.fields = {}
        for rho_flat in range(n_f ** d):
            rho = np.unravel_index(rho_flat, (n_f,) * d)
            fidx = np.zeros(grid.size, dtype=int)
            stride = 1
            for ax in reversed(range(d)):
                comp = (axes_idx[ax].ravel() + rho[ax]) % n_f
                fidx += comp * stride
                stride *= n_f
            per_j = np.zeros((d, grid.size))
            for c in range(corner_idx.shape[0]):
                gathered = fast_flat[corner_idx[c], :, fidx]   # (N, d)
                per_j += (corner_w[c][:, None] * gathered).T
            self.fields[rho] = per_j.reshape((d,) + grid.shape)

    def field(self, shift_vec):
        rho = tuple(int(s) % self.n_f for s in shift_vec)
        return self.fields[rho]


def _lattice_apply(kernel, p_fields, spec, grid):
    """sum_l w_l [kernel_l . p](x - eps w_l) for stacked gradient fields p."""
    shifts, _, weights = spec.lattice(grid.dim)
    axes = tuple(range(grid.dim))
    out = np.zeros(grid.shape)
    for s, w in zip(shifts, weights):
        fld = kernel.field(s)
        q = np.einsum("j...,j...->...", fld, p_fields)
        out += w * np.roll(q, tuple(s), axis=axes)
    return out


def _lattice_apply_transpose(kernel, r, spec, grid):
    """Adjoint of _lattice_apply in the stacked-field inner product."""
    shifts, _, weights = spec.lattice(grid.dim)
    axes = tuple(range(grid.dim))
    out = np.zeros((grid.dim,) + grid.shape)
    for s, w in zip(shifts, weights):
        back = np.roll(r, tuple(-np.asarray(s)), axis=axes)
        out += w * kernel.field(s) * back
    return out


def corrector_K(u_hom: GridFunction, cells, spec: SmoothingSpec) -> GridFunction:
    """Smoothed corrector of a homogenized solution.

    K(x) = sum_l w_l chi(x - eps w_l, x/eps) . grad u_hom(x - eps w_l),
    with the slow argument interpolated multilinearly from the sample grid
    and the fast argument landing on the cell sublattice.
    """
    grid = u_hom.grid
    spec.check_grid(grid)
    kernel = CorrectorKernel(cells, grid, spec.eps, spec.n_omega, adjoint=False)
    p = centered_gradient(u_hom.values, grid.h)
    return GridFunction(grid, _lattice_apply(kernel, p, spec, grid))


def corrector_Ktilde(v_hom: GridFunction, cells, spec: SmoothingSpec) -> GridFunction:
    """Smoothed corrector of the adjoint problem's homogenized solution."""
    grid = v_hom.grid
    spec.check_grid(grid)
    kernel = CorrectorKernel(cells, grid, spec.eps, spec.n_omega, adjoint=True)
    p = centered_gradient(v_hom.values, grid.h)
    return GridFunction(grid, _lattice_apply(kernel, p, spec, grid))


def corrector_op(cells, spec: SmoothingSpec, grid, resolvent: DiscreteOperator,
                 adjoint=False) -> DiscreteOperator:
    """The corrector as an operator on right-hand sides.

    Composition: resolve, take the centered gradient, contract with the
    residue fields along the offset lattice.  For the adjoint corrector
    pass the transposed homogenized resolvent.  The true adjoint of the
    returned operator (via .T) realizes the divergence-form identity
    resolvent^T . (-div) . kernel-quadrature^T without further derivation.
    """
    spec.check_grid(grid)
    kernel = CorrectorKernel(cells, grid, spec.eps, spec.n_omega, adjoint=adjoint)
    gop = gradient_op(grid)
    d = grid.dim
    n = grid.size

    def q_mv(x):
        p = x.reshape((d,) + grid.shape)
        return _lattice_apply(kernel, p, spec, grid).ravel()

    def q_rmv(x):
        r = x.reshape(grid.shape)
        return _lattice_apply_transpose(kernel, r, spec, grid).ravel()

    quad = DiscreteOperator((n, d * n), q_mv, q_rmv, grid=grid, label="kernel-quad")
    label = "Ktilde" if adjoint else "K"
    op = quad @ gop @ resolvent
    op.label = label
    return op


@dataclass
class CorrectorCoeffs:
    """Cell-averaged coefficient tensors of the composed corrector operator.

    Index conventions over the trailing axes:
      c3[..., j, k, m]      = < dev^j_m  chi_adj^k >
      c3_adj[..., k, j, m]  = < dev_adj^k_m  chi^j >
      c2[..., j, k]         = < dev^j . grad_x chi_adj^k >
      c2_adj[..., k, j]     = < dev_adj^k . grad_x chi^j >
    All vanish when the coefficient has no slow dependence except c3/c3_adj,
    which vanish only for constant coefficients.
    """
    slow_grid: TorusGrid
    c3: np.ndarray
    c3_adj: np.ndarray
    c2: np.ndarray
    c2_adj: np.ndarray
    equivalence_defect: float = 0.0


def corrector_coeffs(cells, fc, field, hom, fc_adj=None) -> CorrectorCoeffs:
    """Coefficient tensors from the flux deviations and cell solutions.

    `fc` is the primal flux corrector; the adjoint one is built on demand
    (deviation of the transposed field from the adjoint cell solutions).
    The third-order tensor is also evaluated through its reduced form
    < chi_adj^k (a (grad chi^j + e^j))_m > and the worst relative
    disagreement of the two quadratures is recorded.
    """
    if fc_adj is None:
        fc_adj = flux_corrector(cells, field, hom, adjoint=True)
    d = cells.dim
    cell_axes = tuple(range(-d, 0))
    w_mean = lambda arr: arr.mean(axis=cell_axes)

    sshape = cells.slow_grid.shape
    c3 = np.zeros(sshape + (d, d, d))
    c3_alt = np.zeros(sshape + (d, d, d))
    c3_adj = np.zeros(sshape + (d, d, d))
    c2 = np.zeros(sshape + (d, d))
    c2_adj = np.zeros(sshape + (d, d))

    xs = cells.slow_grid.coords()
    ys = cells.cell_grid.coords()
    xb = xs.reshape(xs.shape[:-1] + (1,) * d + (d,))
    a = field.eval(np.broadcast_to(xb, xs.shape[:-1] + ys.shape),
                   np.broadcast_to(ys, xs.shape[:-1] + ys.shape))

    integrand_scale = 1e-30
    for j in range(d):
        dev_j = np.take(fc.deviation, j, axis=d)        # (*slow, d, *cell)
        grad_j = np.take(cells.grad_y_chi, j, axis=d)
        epg = grad_j.copy()
        epg[(Ellipsis, j) + (slice(None),) * d] += 1.0
        flux_j = _flux(a, epg, d)
        for k in range(d):
            chi_ak = np.take(cells.chi_adj, k, axis=d)  # (*slow, *cell)
            gx_ak = np.take(cells.grad_x_chi_adj, k, axis=d)
            for m in range(d):
                c3[..., j, k, m] = w_mean(np.take(dev_j, m, axis=d) * chi_ak)
                c3_alt[..., j, k, m] = w_mean(np.take(flux_j, m, axis=d) * chi_ak)
                integrand_scale = max(integrand_scale,
                                      float(w_mean(np.abs(np.take(flux_j, m, axis=d)
                                                          * chi_ak)).max()))
            c2[..., j, k] = w_mean((dev_j * gx_ak).sum(axis=d))
    for k in range(d):
        dev_ak = np.take(fc_adj.deviation, k, axis=d)
        for j in range(d):
            chi_j = np.take(cells.chi, j, axis=d)
            gx_j = np.take(cells.grad_x_chi, j, axis=d)
            for m in range(d):
                c3_adj[..., k, j, m] = w_mean(np.take(dev_ak, m, axis=d) * chi_j)
            c2_adj[..., k, j] = w_mean((dev_ak * gx_j).sum(axis=d))

    # relative to the integrand's own magnitude, so identically-zero tensors
    # (one-dimensional flux deviations vanish) do not produce 0/0 ratios
    defect = float(np.abs(c3 - c3_alt).max()) / integrand_scale

    # tensors that are zero up to quadrature roundoff become exact zeros,
    # otherwise they would seed third-derivative-amplified noise downstream
    for arr in (c3, c3_adj, c2, c2_adj):
        if float(np.abs(arr).max()) < 1e-12 * integrand_scale:
            arr[...] = 0.0

    return CorrectorCoeffs(slow_grid=cells.slow_grid, c3=c3, c3_adj=c3_adj,
                           c2=c2, c2_adj=c2_adj, equivalence_defect=defect)


def _coeff_field(table, slow_grid, grid):
    """Interpolate a slow-sample coefficient table to the fine nodes."""
    pts = grid.coords().reshape(-1, slow_grid.dim)
    vals = multilinear(table, slow_grid, pts)
    return vals.reshape(grid.shape + table.shape[slow_grid.dim:])


def assemble_L(coeffs: CorrectorCoeffs, hom_solver: DiscreteOperator,
               grid: TorusGrid) -> DiscreteOperator:
    """The eps-free composed operator.

    Builds the third- and second-order differential operators from the
    coefficient tensors (interpolated to the fine grid), takes the true
    operator transpose of the adjoint pair, and sandwiches everything
    between homogenized resolvents.  The third-order parts act only inside
    this composition.
    """
    d = grid.dim
    n = grid.size
    c3 = _coeff_field(coeffs.c3, coeffs.slow_grid, grid)
    c3_adj = _coeff_field(coeffs.c3_adj, coeffs.slow_grid, grid)
    c2 = _coeff_field(coeffs.c2, coeffs.slow_grid, grid)
    c2_adj = _coeff_field(coeffs.c2_adj, coeffs.slow_grid, grid)
    D = [grad_component_op(grid, ax) for ax in range(d)]

    def diag(vals):
        v = vals.ravel()
        return lambda x: v * x

    def build(order3, order2, outer_first):
        """sum D_out [D_m [c3 . D_in u]] - sum D_out [c2 . D_in u].

        outer_first=True gives (out=k, in=j) from c3[j,k,m]/c2[j,k];
        False gives the adjoint layout (out=j, in=k) from c3_adj[k,j,m].
        """
        terms = []
        for jj in range(d):
            for kk in range(d):
                if outer_first:
                    out_ax, in_ax = kk, jj
                else:
                    out_ax, in_ax = jj, kk
                for m in range(d):
                    c = order3[..., jj, kk, m] if outer_first else order3[..., kk, jj, m]
                    mul = diag(c)
                    terms.append((out_ax, m, in_ax, mul, +1.0))
                c = order2[..., jj, kk] if outer_first else order2[..., kk, jj]
                terms.append((out_ax, None, in_ax, diag(c), -1.0))

        def mv(x):
            out = np.zeros(n)
            for out_ax, mid_ax, in_ax, mul, sign in terms:
                y = D[in_ax]._mv(x)
                y = mul(y)
                if mid_ax is not None:
                    y = D[mid_ax]._mv(y)
                out += sign * D[out_ax]._mv(y)
            return out

        def rmv(x):
            out = np.zeros(n)
            for out_ax, mid_ax, in_ax, mul, sign in terms:
                y = -D[out_ax]._mv(x)
                if mid_ax is not None:
                    y = -D[mid_ax]._mv(y)
                y = mul(y)
                out += sign * (-D[in_ax]._mv(y))
            return out

        return DiscreteOperator((n, n), mv, rmv, grid=grid, label="L-part")

    primal = build(c3, c2, outer_first=True)
    adj = build(c3_adj, c2_adj, outer_first=False)
    core = primal + adj.T
    op = hom_solver @ core @ hom_solver
    op.label = "Lop"
    return op


class _OffsetTables:
    """Batched evaluation of cell tables on offset fast lattices.

    Spectral tables are transformed once; each offset then costs one phase
    multiply, an alias fold onto the n_f bins, and a small inverse FFT.
    FV tables fall back to periodic linear interpolation.
    """

    def __init__(self, table, d, n_f, method):
        cshape = table.shape[-d:]
        self.lead = table.shape[:-d]
        self.d = d
        self.n_f = n_f
        self.n_y = cshape[0]
        self.method = method
        flat = table.reshape((-1,) + cshape)
        if method == "fv":
            self.flat = flat
        else:
            if self.n_y % n_f:
                raise ValueError(f"{n_f} does not divide {self.n_y}")
            axes = tuple(range(1, d + 1))
            self.spec = np.fft.fftn(flat, axes=axes) / (self.n_y ** d)
            from .spectral import integer_freqs
            self.freqs = integer_freqs(cshape)

    def at(self, offset):
        d, n_f, n_y = self.d, self.n_f, self.n_y
        if self.method == "fv":
            pts = (np.indices((n_f,) * d).reshape(d, -1).T / n_f
                   + np.asarray(offset)) % 1.0
            u = pts * n_y
            i0 = np.floor(u).astype(int) % n_y
            i1 = (i0 + 1) % n_y
            w = u - np.floor(u)
            if d == 1:
                out = ((1 - w[:, 0]) * self.flat[:, i0[:, 0]]
                       + w[:, 0] * self.flat[:, i1[:, 0]])
            else:
                out = ((1 - w[:, 0]) * (1 - w[:, 1]) * self.flat[:, i0[:, 0], i0[:, 1]]
                       + w[:, 0] * (1 - w[:, 1]) * self.flat[:, i1[:, 0], i0[:, 1]]
                       + (1 - w[:, 0]) * w[:, 1] * self.flat[:, i0[:, 0], i1[:, 1]]
                       + w[:, 0] * w[:, 1] * self.flat[:, i1[:, 0], i1[:, 1]])
            return out.reshape(self.lead + (n_f ** d,))
        phase = np.ones((1,) * (d + 1), dtype=complex)
        spec = self.spec
        for ax in range(d):
            phase = phase * np.exp(2j * np.pi * self.freqs[ax][None]
                                   * float(offset[ax]))
        spec = spec * phase
        s = n_y // n_f
        if d == 1:
            folded = spec.reshape(-1, s, n_f).sum(axis=1)
            out = np.fft.ifft(folded, axis=-1).real * n_f
        else:
            folded = spec.reshape(-1, s, n_f, s, n_f).sum(axis=(1, 3))
            out = np.fft.ifftn(folded, axes=(1, 2)).real * n_f ** 2
        return out.reshape(self.lead + (n_f ** d,))


def drift_matrix_field(field, cells, spec: SmoothingSpec, grid: TorusGrid):
    """Double-averaged matrix from the analytic slow gradient, fine nodes.

    Entry [j, k] at node x contracts (grad_y chi_adj^k + e^k) with the
    offset-and-line average of grad_x a(x + t eps w, x/eps + w) . w applied
    to (grad_y chi^j + e^j); both gradient families are evaluated at the
    slow point x and the offset fast point.  The offset integral has no
    grid-function shifts in it, so it uses the tensor Gauss rule (the
    integrand is analytic in the offset but not periodic).  Returns
    (*fine, d, d).
    """
    d = grid.dim
    n_f = spec.n_omega
    spec.check_grid(grid)
    eps = spec.eps

    n_slow = cells.slow_grid.size
    pts = grid.coords().reshape(-1, d)
    corner_idx, corner_w = _slow_corners(cells.slow_grid, pts)
    axes_idx = np.indices(grid.shape).reshape(d, -1)
    fidx = np.zeros(grid.size, dtype=int)
    stride = 1
    for ax in reversed(range(d)):
        fidx += (axes_idx[ax] % n_f) * stride
        stride *= n_f

    t_nodes, t_weights = spec.gauss_rule()
    omegas, weights = spec.gauss_lattice(d)
    fast_base = (axes_idx.T % n_f) / n_f
    gy_tab = _OffsetTables(cells.grad_y_chi, d, n_f, cells.method)
    gya_tab = _OffsetTables(cells.grad_y_chi_adj, d, n_f, cells.method)

    out = np.zeros((grid.size, d, d))
    dd = np.arange(d)
    for om, w in zip(omegas, weights):
        gy_off = gy_tab.at(om).reshape(n_slow, d, d, n_f ** d)
        gya_off = gya_tab.at(om).reshape(n_slow, d, d, n_f ** d)
        P = np.zeros((grid.size, d, d))
        Q = np.zeros((grid.size, d, d))
        for c in range(corner_idx.shape[0]):
            P += corner_w[c][:, None, None] * gy_off[corner_idx[c][:, None, None],
                                                     dd[None, :, None],
                                                     dd[None, None, :],
                                                     fidx[:, None, None]]
            Q += corner_w[c][:, None, None] * gya_off[corner_idx[c][:, None, None],
                                                      dd[None, :, None],
                                                      dd[None, None, :],
                                                      fidx[:, None, None]]
        for j in range(d):
            P[:, j, j] += 1.0
            Q[:, j, j] += 1.0
        # line average of grad_x a . omega along the offset
        fast_pts = fast_base + om
        mid = np.zeros((grid.size, d, d))
        for tv, tw in zip(t_nodes, t_weights):
            ga = field.grad_x(pts + tv * eps * om, fast_pts)
            mid += tw * np.einsum("npqr,r->npq", ga, om)
        out += w * np.einsum("nkp,npq,njq->njk", Q, mid, P)
    return out.reshape(grid.shape + (d, d))


def assemble_M(field, cells, spec: SmoothingSpec, hom_solver: DiscreteOperator,
               grid: TorusGrid) -> DiscreteOperator:
    """Conservative discretization of the double-averaged form, sandwiched.

    The bilinear form is <c-hat^{jk} d_j u, d_k v>, so the assembler
    receives the transposed matrix field (its flux convention is
    flux_m = sum_k C[m, k] d_k u).  Diagonal entries are averaged onto
    faces; off-diagonal entries stay at nodes.
    """
    d = grid.dim
    chat = drift_matrix_field(field, cells, spec, grid)
    cmat = np.swapaxes(chat, -1, -2)
    diag_faces = []
    for m in range(d):
        vals = cmat[..., m, m]
        diag_faces.append(0.5 * (vals + np.roll(vals, -1, axis=m)))
    cross = {}
    for m in range(d):
        for k in range(d):
            if m != k:
                cross[(m, k)] = cmat[..., m, k]
    mat = assemble_diffusion(grid, diag_faces, cross, mass=0.0)
    mop = matrix_op(mat, grid=grid, label="M_eps")
    op = hom_solver @ mop @ hom_solver
    op.label = "Mop"
    return op


def full_corrector(cor_op: DiscreteOperator, cor_adj_transposed: DiscreteOperator,
                   l_op: DiscreteOperator, m_op: DiscreteOperator) -> DiscreteOperator:
    """The assembled corrector: primal + transposed-adjoint - composed - averaged."""
    op = cor_op + cor_adj_transposed - l_op - m_op
    op.label = "C_eps"
    return op
