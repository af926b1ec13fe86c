"""Profile chi(c, r) of the generalized collision invariants.

chi minimises, over functions h(theta, r) on (0, pi) x (0, r_max),

    J(h) = sigma/2 int int [(d_theta h)^2 / r^2 + (d_r h)^2
                            + (d-2) h^2 / (r^2 sin^2 theta)] r^(d-1) e sin^(d-2) theta
           - int int h r^d e sin^(d-1) theta,

and the invariants are recovered as psi_E(v) = chi(theta, |v|) (v.E) / |v_perp|.
J is discretised with bilinear elements on a uniform (theta, r) mesh.
Nodes on theta = 0, theta = pi and r = 0 carry the value 0: these are the
images of the axis R Omega, where psi_E vanishes by reflection symmetry.
The outer radius r_max has a natural boundary condition.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .equilibrium import azimuth_rule, check_unit, frame, grad_phi
from .errors import AxisEvaluation, DomainError, NoConvergence, SingularAssembly
from .quadrature import ModelParams, PolarGrid, log_weight

AXIS_TOL = 1e-28
DIRECT_LIMIT = 100_000
R_EXCLUDE = 0.05

_GX, _GW = np.polynomial.legendre.leggauss(3)
_GX = 0.5 * (_GX + 1.0)
_GW = 0.5 * _GW


@dataclass(frozen=True)
class BoundaryPolicy:
    theta_dirichlet: bool = True
    r0_dirichlet: bool = True
    rmax: str = "natural"


@dataclass(frozen=True, eq=False)
class FEMesh:
    """Uniform node lattice theta_j = j pi / n_theta, r_i = i r_max / n_r."""

    n_theta: int
    n_r: int
    r_max: float

    @property
    def h_theta(self):
        return np.pi / self.n_theta

    @property
    def h_r(self):
        return self.r_max / self.n_r

    @property
    def theta(self):
        return np.linspace(0.0, np.pi, self.n_theta + 1)

    @property
    def r(self):
        return np.linspace(0.0, self.r_max, self.n_r + 1)

    @property
    def shape(self):
        return (self.n_theta + 1, self.n_r + 1)

    def free_mask(self, policy):
        mask = np.ones(self.shape, dtype=bool)
        if policy.theta_dirichlet:
            mask[0, :] = False
            mask[-1, :] = False
        if policy.r0_dirichlet:
            mask[:, 0] = False
        return mask

    def element_points(self):
        """3x3 Gauss points of every element: theta, r, local coords and weights.

        Shapes are ``(n_theta, n_r, 9)``; weights include the element area.
        """
        jt = np.arange(self.n_theta)[:, None, None]
        ir = np.arange(self.n_r)[None, :, None]
        xi = np.repeat(_GX, 3)[None, None, :]
        zeta = np.tile(_GX, 3)[None, None, :]
        w = (np.repeat(_GW, 3) * np.tile(_GW, 3))[None, None, :]
        theta = (jt + xi) * self.h_theta
        r = (ir + zeta) * self.h_r
        shape = (self.n_theta, self.n_r, 9)
        return (np.broadcast_to(theta, shape), np.broadcast_to(r, shape),
                np.broadcast_to(xi, shape), np.broadcast_to(zeta, shape),
                np.broadcast_to(w * self.h_theta * self.h_r, shape))


def _shape_functions(xi, zeta):
    """Bilinear basis on the unit square, corners (0,0), (1,0), (0,1), (1,1).

    Returns values, d/dxi, d/dzeta, each with a trailing axis of length 4.
    """
    N = np.stack([(1 - xi) * (1 - zeta), xi * (1 - zeta), (1 - xi) * zeta, xi * zeta], axis=-1)
    dxi = np.stack([-(1 - zeta), (1 - zeta), -zeta, zeta], axis=-1)
    dzeta = np.stack([-(1 - xi), -xi, (1 - xi), xi], axis=-1)
    return N, dxi, dzeta


def _element_nodes(mesh):
    """Global node index of the 4 corners of each element, shape (n_theta, n_r, 4)."""
    nr1 = mesh.n_r + 1
    jt = np.arange(mesh.n_theta)[:, None]
    ir = np.arange(mesh.n_r)[None, :]
    base = jt * nr1 + ir
    return np.stack([base, base + nr1, base + 1, base + nr1 + 1], axis=-1)


@dataclass(frozen=True, eq=False)
class WeakFormSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    boundary_policy: BoundaryPolicy
    mesh: FEMesh
    params: ModelParams
    grid: PolarGrid
    free: np.ndarray  # boolean node mask, shape mesh.shape
    log_shift: float  # matrix and rhs are scaled by exp(-log_shift)

    def energy(self, x):
        """Discrete J (scaled) of a free-node vector."""
        return 0.5 * x @ (self.matrix @ x) - self.rhs @ x


def _coefficients(params, theta, r, shift):
    """Integrand weights of the three quadratic terms and the load, scaled."""
    d = params.dim
    s = np.sin(theta)
    e = np.exp(log_weight(np.cos(theta), r, params) - shift)
    sig = params.sigma
    k_theta = sig * r ** (d - 3) * s ** (d - 2) * e
    k_r = sig * r ** (d - 1) * s ** (d - 2) * e
    k_0 = sig * (d - 2) * r ** (d - 3) * s ** (d - 4) * e if d > 2 else np.zeros_like(e)
    load = r**d * s ** (d - 1) * e
    return k_theta, k_r, k_0, load


def assemble_weak_form(params, grid, n_theta=None, n_r=None, policy=None):
    """Assemble stiffness matrix and load vector of the discretised J(h).

    The element mesh covers ``(0, pi) x (0, grid.r_max)``; its resolution
    defaults to ``(grid.n_theta, grid.n_r)``.
    """
    if grid.params != params:
        raise DomainError("grid was built for different model parameters")
    policy = policy or BoundaryPolicy()
    mesh = FEMesh(n_theta or grid.n_theta, n_r or grid.n_r, grid.r_max)
    theta, r, xi, zeta, w = mesh.element_points()
    shift = float(np.max(log_weight(np.cos(theta), r, params)))
    k_t, k_r, k_0, load = _coefficients(params, theta, r, shift)
    for name, arr in (("theta", k_t), ("r", k_r), ("zeroth", k_0), ("load", load)):
        if not np.all(np.isfinite(arr)):
            bad = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
            raise SingularAssembly(f"nonfinite {name} weight at element/point {bad}")

    N, dxi, dzeta = _shape_functions(xi, zeta)
    gt = dxi / mesh.h_theta
    gr = dzeta / mesh.h_r
    Ke = (np.einsum("ejq,ejqa,ejqb->ejab", w * k_t, gt, gt)
          + np.einsum("ejq,ejqa,ejqb->ejab", w * k_r, gr, gr)
          + np.einsum("ejq,ejqa,ejqb->ejab", w * k_0, N, N))
    Fe = np.einsum("ejq,ejqa->eja", w * load, N)

    nodes = _element_nodes(mesh)
    rows = np.broadcast_to(nodes[..., :, None], Ke.shape).ravel()
    cols = np.broadcast_to(nodes[..., None, :], Ke.shape).ravel()
    n = mesh.shape[0] * mesh.shape[1]
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A = ((A + A.T) * 0.5).tocsr()
    b = np.bincount(nodes.ravel(), weights=Fe.ravel(), minlength=n)

    free = mesh.free_mask(policy)
    idx = np.flatnonzero(free.ravel())
    A_ff = A[idx][:, idx].tocsr()
    A_ff.sort_indices()
    return WeakFormSystem(matrix=A_ff, rhs=b[idx], boundary_policy=policy, mesh=mesh,
                          params=params, grid=grid, free=free, log_shift=shift)


# ---------------------------------------------------------------------------
# chi field
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ChiField:
    grid: PolarGrid
    values: np.ndarray  # (n_theta + 1, n_r + 1) nodal values
    residual_norm: float
    params: ModelParams
    mesh: FEMesh
    solver_residual: float = 0.0
    method: str = "direct"
    meta: dict = field(default_factory=dict)

    def locate(self, theta, r):
        mesh = self.mesh
        theta = np.asarray(theta, dtype=float)
        r = np.asarray(r, dtype=float)
        if np.any(r > mesh.r_max * (1 + 1e-12)) or np.any(r < 0):
            raise DomainError(f"radius outside [0, {mesh.r_max:g}]")
        ut = np.clip(theta / mesh.h_theta, 0.0, mesh.n_theta)
        ur = np.clip(r / mesh.h_r, 0.0, mesh.n_r)
        j = np.minimum(ut.astype(int), mesh.n_theta - 1)
        i = np.minimum(ur.astype(int), mesh.n_r - 1)
        return j, i, ut - j, ur - i

    def evaluate(self, theta, r, derivatives=False):
        """Bilinear interpolant of chi at (theta, r), optionally with its gradient."""
        j, i, a, b = self.locate(theta, r)
        V = self.values
        v00, v10, v01, v11 = V[j, i], V[j + 1, i], V[j, i + 1], V[j + 1, i + 1]
        val = (1 - a) * (1 - b) * v00 + a * (1 - b) * v10 + (1 - a) * b * v01 + a * b * v11
        if not derivatives:
            return val
        dt = ((1 - b) * (v10 - v00) + b * (v11 - v01)) / self.mesh.h_theta
        dr = ((1 - a) * (v01 - v00) + a * (v11 - v10)) / self.mesh.h_r
        return val, dt, dr

    def __call__(self, c, r):
        return self.evaluate(np.arccos(np.clip(c, -1.0, 1.0)), r)

    def element_rule(self):
        """Element-aligned Gauss rule: flattened theta, r, weights, scaled e, shift."""
        theta, r, _, _, w = self.mesh.element_points()
        theta, r, w = theta.ravel(), r.ravel(), w.ravel()
        loge = log_weight(np.cos(theta), r, self.params)
        shift = float(loge.max())
        return theta, r, w, np.exp(loge - shift), shift


def _strong_residual(values, mesh, params):
    """Strong-form residual of the Euler-Lagrange equation at interior nodes.

    The equation is divided by r^(d-1) sin^(d-2) e so the residual is in
    natural units. Returns (residual, measure weights, node radii) on nodes
    1..n_theta-1 x 1..n_r-1.
    """
    d = params.dim
    sig = params.sigma
    ht, hr = mesh.h_theta, mesh.h_r
    T, R = np.meshgrid(mesh.theta, mesh.r, indexing="ij")
    shift = log_weight(np.cos(T[1:-1, 1:-1]), R[1:-1, 1:-1], params).max()

    def weight(t, rr, p):
        return rr**p * np.sin(t) ** (d - 2) * np.exp(log_weight(np.cos(t), rr, params) - shift)

    tc, rc = T[1:-1, 1:-1], R[1:-1, 1:-1]
    X = values
    Xc = X[1:-1, 1:-1]
    flux_tp = weight(tc + ht / 2, rc, d - 3) * (X[2:, 1:-1] - Xc)
    flux_tm = weight(tc - ht / 2, rc, d - 3) * (Xc - X[:-2, 1:-1])
    flux_rp = weight(tc, rc + hr / 2, d - 1) * (X[1:-1, 2:] - Xc)
    flux_rm = weight(tc, rc - hr / 2, d - 1) * (Xc - X[1:-1, :-2])
    wc = weight(tc, rc, d - 1)
    div = (flux_tp - flux_tm) / ht**2 + (flux_rp - flux_rm) / hr**2
    s = np.sin(tc)
    res = -sig * div / wc + sig * (d - 2) * Xc / (rc**2 * s**2) - rc * s
    return res, wc * ht * hr, rc


def strong_residual_norm(values, mesh, params, r_exclude=R_EXCLUDE):
    """Weighted L2 norm of the strong residual, weight r^(d-1) sin^(d-2) e.

    Nodes with r < r_exclude * r_max are left out: the polar chart is
    singular at r = 0, and there the bilinear elements and the
    finite-difference stencil disagree at O(1) on the first ring.
    """
    res, w, rc = _strong_residual(values, mesh, params)
    keep = rc >= r_exclude * mesh.r_max
    return float(np.sqrt(np.sum(w[keep] * res[keep] ** 2) / np.sum(w[keep])))


def solve_chi(system, tol=1e-10, method="auto", maxiter=None):
    """Solve the assembled system for chi.

    ``method`` is ``"direct"`` (sparse LU), ``"cg"`` (Jacobi-preconditioned
    conjugate gradients) or ``"auto"``: direct below 1e5 unknowns.
    """
    if not 0 < tol <= 1e-4:
        raise DomainError("tol must lie in (0, 1e-4]")
    A, b = system.matrix, system.rhs
    n = b.size
    if method == "auto":
        method = "direct" if n < DIRECT_LIMIT else "cg"
    if method == "direct":
        x = spla.spsolve(A.tocsc(), b, permc_spec="COLAMD")
    elif method == "cg":
        dinv = 1.0 / A.diagonal()
        M = spla.LinearOperator(A.shape, matvec=lambda y: dinv * y)
        maxiter = maxiter or 20 * n
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            rel = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
            raise NoConvergence(info if info > 0 else maxiter, rel)
    else:
        raise DomainError(f"unknown solver method {method!r}")
    rel = float(np.linalg.norm(A @ x - b) / np.linalg.norm(b))
    if not np.isfinite(rel) or rel > tol:
        raise NoConvergence(0, rel)
    values = np.zeros(system.mesh.shape)
    values[system.free] = x
    res = strong_residual_norm(values, system.mesh, system.params)
    return ChiField(grid=system.grid, values=values, residual_norm=res, params=system.params,
                    mesh=system.mesh, solver_residual=rel, method=method)


def compute_chi(params, grid, n_theta=None, n_r=None, tol=1e-10, method="auto"):
    """Assemble and solve in one call."""
    return solve_chi(assemble_weak_form(params, grid, n_theta, n_r), tol=tol, method=method)


# ---------------------------------------------------------------------------
# reconstruction of psi and its gradient
# ---------------------------------------------------------------------------

def _split(v, omega):
    v = np.asarray(v, dtype=float)
    par = v @ omega
    perp_vec = v - par[..., None] * omega
    perp2 = np.sum(perp_vec * perp_vec, axis=-1)
    return par, perp_vec, perp2


def psi_values(chi, v, omega, E, with_gradient=False):
    """psi_E(v) = chi(theta, |v|) (v.E)/|v_perp| and optionally grad_v psi_E."""
    omega = np.asarray(omega, dtype=float)
    E = np.asarray(E, dtype=float)
    par, perp_vec, perp2 = _split(v, omega)
    if np.any(perp2 < AXIS_TOL):
        raise AxisEvaluation("psi is singular on the axis R Omega")
    rho = np.sqrt(perp2)
    r = np.sqrt(par * par + perp2)
    theta = np.arctan2(rho, par)
    ehat = perp_vec / rho[..., None]
    proj = ehat @ E
    if not with_gradient:
        return chi.evaluate(theta, r) * proj
    val, dt, dr = chi.evaluate(theta, r, derivatives=True)
    ct, st = par / r, rho / r
    vhat = ct[..., None] * omega + st[..., None] * ehat
    that = -st[..., None] * omega + ct[..., None] * ehat
    grad = proj[..., None] * (dr[..., None] * vhat + (dt / r)[..., None] * that)
    grad += (val / rho)[..., None] * (E - proj[..., None] * ehat)
    return val * proj, grad


def reconstruct_psi(chi, E, omega):
    """Evaluator v -> psi_E(v) for a unit E orthogonal to the unit omega."""
    omega = check_unit(omega)
    E = check_unit(E)
    if abs(E @ omega) > 1e-12:
        raise DomainError("E must be orthogonal to omega")

    def psi(v):
        return psi_values(chi, v, omega, E)

    return psi


def transverse_basis(omega):
    """Orthonormal basis E_1..E_{d-1} of the complement of omega."""
    return frame(omega)[:, 1:].T


# ---------------------------------------------------------------------------
# velocity-space quadrature on the element mesh
# ---------------------------------------------------------------------------

def _element_data(chi):
    """Flattened element Gauss rule with the co-area factor, cached on ``chi.meta``."""
    if "_rule" not in chi.meta:
        d = chi.params.dim
        theta, r, w, e, shift = chi.element_rule()
        area = w * r ** (d - 1) * np.sin(theta) ** (d - 2)
        mass = 2.0 * float(np.sum(area * e)) if d == 2 else 2.0 * np.pi * float(np.sum(area * e))
        chi.meta["_rule"] = (theta, r, area, e, shift, mass)
    return chi.meta["_rule"]


def _lift(theta, r, dirs, omega):
    """Velocities with polar angle theta about omega and transverse directions ``dirs``."""
    d = omega.size
    local = np.empty(theta.shape + (d,))
    local[..., 0] = r * np.cos(theta)
    rho = r * np.sin(theta)
    for k in range(d - 1):
        local[..., k + 1] = rho * dirs[..., k]
    return local @ frame(omega).T


def velocity_slices(chi, omega, n_phi=8, elements=None, phi_window=None):
    """Yield ``(v, dv, e)`` per azimuthal node of an element-aligned rule.

    ``dv`` are volume weights and ``e`` the equilibrium factor scaled by the
    same constant for every call, so ``sum(dv * e) / mass`` integrates
    against M. ``elements`` restricts the rule to a boolean element subset;
    ``phi_window = (centre, half_width)`` replaces the uniform azimuth rule
    by a Gauss rule on that arc (d = 3 only).
    """
    omega = check_unit(omega)
    d = chi.params.dim
    theta, r, area, e, _, _ = _element_data(chi)
    if elements is not None:
        keep = np.repeat(elements.ravel(), 9)
        theta, r, area, e = theta[keep], r[keep], area[keep], e[keep]
    if d == 2:
        dirs, wphi = azimuth_rule(2)
    elif phi_window is None:
        dirs, wphi = azimuth_rule(3, n_phi)
    else:
        centre, half = phi_window
        x, wx = np.polynomial.legendre.leggauss(n_phi)
        phi = centre + half * x
        dirs, wphi = np.stack([np.cos(phi), np.sin(phi)], axis=1), half * wx
    for direction, wp in zip(dirs, wphi):
        v = _lift(theta, r, np.broadcast_to(direction, theta.shape + (d - 1,)), omega)
        yield v, area * wp, e


def velocity_quadrature(chi, omega, n_phi=8):
    """All slices of :func:`velocity_slices` concatenated."""
    parts = list(velocity_slices(chi, omega, n_phi))
    return tuple(np.concatenate([p[k] for p in parts]) for k in range(3))


def equilibrium_mass(chi):
    """sum(dv * e) over the full rule: the scaled partition function."""
    return _element_data(chi)[5]


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def _bump(v, center, radius):
    """C-infinity bump exp(-1/(1-s^2)), s = |v - center| / radius, and its gradient."""
    diff = (v - center) / radius
    s2 = np.sum(diff * diff, axis=-1)
    inside = s2 < 1.0
    den = np.where(inside, 1.0 - s2, 1.0)
    val = np.where(inside, np.exp(-1.0 / den), 0.0)
    grad = np.where(inside[:, None], val[:, None] * (-2.0 * diff / radius) / den[:, None] ** 2, 0.0)
    return val, grad


def _bump_rule(chi, omega, center, radius):
    """Elements and azimuth arc covering the support of a bump that avoids the axis."""
    mesh = chi.mesh
    local = frame(omega).T @ center
    rc = np.linalg.norm(local)
    rho_c = np.linalg.norm(local[1:])
    if rho_c <= radius:
        raise DomainError("bump support touches the axis")
    theta_c = np.arctan2(rho_c, local[0])
    dt = np.arcsin(radius / rc)
    j0 = max(int(np.floor((theta_c - dt) / mesh.h_theta)), 0)
    j1 = min(int(np.ceil((theta_c + dt) / mesh.h_theta)), mesh.n_theta)
    i0 = max(int(np.floor((rc - radius) / mesh.h_r)), 0)
    i1 = min(int(np.ceil((rc + radius) / mesh.h_r)), mesh.n_r)
    elements = np.zeros((mesh.n_theta, mesh.n_r), dtype=bool)
    elements[j0:j1, i0:i1] = True
    window = None
    if chi.params.dim == 3:
        window = (np.arctan2(local[2], local[1]), np.arcsin(radius / rho_c))
    return elements, window


def w_vector(chi, table, omega, E, n_phi=8):
    """W[psi_E] = int M grad psi_E dv / c1 in velocity space.

    M is axisymmetric and grad psi_E carries only first azimuthal harmonics,
    so a uniform azimuth rule with n_phi >= 3 is exact in phi.
    """
    total = np.zeros(chi.params.dim)
    for v, dv, e in velocity_slices(chi, omega, n_phi):
        _, g = psi_values(chi, v, omega, E, with_gradient=True)
        total += (dv * e) @ g
    return total / equilibrium_mass(chi) / table.c1


def weak_residual(chi, omega, E, center, radius, psi=None, n_phi=32):
    """a(psi, theta) - l(theta) for one bump test function, and its H1_M norm.

    a(psi, theta) = sigma int grad psi . grad theta M and
    l(theta) = int theta (v . E) M. ``psi`` may be a callable
    ``v -> (values, gradients)`` that replaces psi_E.
    """
    omega = check_unit(omega)
    elements, window = _bump_rule(chi, omega, center, radius)
    a = l = norm2 = 0.0
    for v, dv, e in velocity_slices(chi, omega, n_phi, elements, window):
        th, gth = _bump(v, center, radius)
        keep = th > 0
        if not keep.any():
            continue
        v, m, th, gth = v[keep], (dv * e)[keep], th[keep], gth[keep]
        gpsi = psi_values(chi, v, omega, E, with_gradient=True)[1] if psi is None else psi(v)[1]
        a += chi.params.sigma * np.sum(m * np.sum(gpsi * gth, axis=-1))
        l += np.sum(m * th * (v @ E))
        norm2 += np.sum(m * (th**2 + np.sum(gth * gth, axis=-1)))
    mass = equilibrium_mass(chi)
    return (a - l) / mass, np.sqrt(norm2 / mass)


@dataclass
class CheckReport:
    """Named checks with value, tolerance and outcome."""

    rows: list = field(default_factory=list)

    def add(self, name, value, tol, passed=None, kind="below"):
        if passed is None:
            passed = bool(value < tol) if kind == "below" else bool(value > tol)
        self.rows.append({"name": name, "value": float(value), "tol": float(tol),
                          "kind": kind, "passed": bool(passed)})
        return passed

    @property
    def passed(self):
        return all(row["passed"] for row in self.rows)

    def __getitem__(self, name):
        for row in self.rows:
            if row["name"] == name:
                return row
        raise KeyError(name)

    def extend(self, other):
        self.rows.extend(other.rows)
        return self

    def table(self):
        lines = []
        for row in self.rows:
            op = "<" if row["kind"] == "below" else ">"
            flag = "PASS" if row["passed"] else "FAIL"
            lines.append(f"{flag}  {row['name']:<48s} {row['value']:.3e} {op} {row['tol']:.1e}")
        return "\n".join(lines)


def _random_bumps(chi, omega, n_test, rng):
    """Bump centres drawn from M restricted away from the axis, radii ~ sqrt(sigma)."""
    sig = chi.params.sigma
    d = chi.params.dim
    theta, r, area, e, _, _ = _element_data(chi)
    p = area * e * np.sin(theta) ** 2
    p /= p.sum()
    centers, radii = [], []
    r_max = chi.mesh.r_max
    while len(centers) < n_test:
        k = rng.choice(p.size, p=p)
        direction = rng.standard_normal(d - 1)
        direction /= np.linalg.norm(direction)
        rad = np.sqrt(sig) * rng.uniform(0.3, 0.8)
        rho = r[k] * np.sin(theta[k])
        if rho < 1.25 * rad or r[k] + rad > r_max:
            continue
        local = np.concatenate([[r[k] * np.cos(theta[k])], rho * direction])
        centers.append(frame(omega) @ local)
        radii.append(rad)
    return np.array(centers), np.array(radii)


def _control_psi(chi, E):
    """A transverse-linear function that does not solve the invariant equation.

    v . E itself is the exact invariant when the potential vanishes, so
    (v . E)|v| is used then.
    """
    from .quadrature import ZeroPotential

    if not isinstance(chi.params.potential, ZeroPotential):
        return lambda v: (v @ E, np.broadcast_to(E, v.shape)), "v.E"

    def psi(v):
        r = np.linalg.norm(v, axis=-1)
        ve = v @ E
        return ve * r, r[:, None] * E + (ve / r)[:, None] * v

    return psi, "(v.E)|v|"


def verify_adjoint_kernel(chi, table, n_test=20, omega=None, seed=0, tol=5e-4, n_phi=32):
    """Check W[psi_E] = E and the weak form against ``n_test`` bump functions.

    Weak-form residuals are relative to the H1_M norm of each bump. Also
    reports the constant invariant and a negative control.
    """
    if n_test < 1:
        raise DomainError("n_test must be >= 1")
    d = chi.params.dim
    omega = np.eye(d)[0] if omega is None else check_unit(omega)
    rng = np.random.default_rng(seed)
    report = CheckReport()
    basis = transverse_basis(omega)

    w_err = max(np.linalg.norm(w_vector(chi, table, omega, E) - E) for E in basis)
    report.add("W[psi_E] = E", w_err, tol)

    centers, radii = _random_bumps(chi, omega, n_test, rng)
    worst = 0.0
    for E in basis:
        for c, rad in zip(centers, radii):
            res, norm = weak_residual(chi, omega, E, c, rad, n_phi=n_phi)
            worst = max(worst, abs(res) / norm)
    report.add("weak form a(psi, theta) = l(theta)", worst, tol)

    E = basis[0]
    zero = lambda v: (np.zeros(len(v)), np.zeros_like(v))
    const = lambda v: (np.ones(len(v)), np.zeros_like(v))
    control, label = _control_psi(chi, E)
    worst_const = largest = 0.0
    for c, rad in zip(centers, radii):
        # a(1, theta) = (a - l)(1) - (a - l)(0)
        r1, norm = weak_residual(chi, omega, E, c, rad, psi=const, n_phi=n_phi)
        r0, _ = weak_residual(chi, omega, E, c, rad, psi=zero, n_phi=n_phi)
        worst_const = max(worst_const, abs(r1 - r0) / norm)
        rv, _ = weak_residual(chi, omega, E, c, rad, psi=control, n_phi=n_phi)
        largest = max(largest, abs(rv) / norm)
    report.add("constant is an invariant", worst_const, 1e-14)
    report.add(f"{label} is not an invariant", largest, 10 * tol, kind="above")
    return report


# ---------------------------------------------------------------------------
# generalized collision invariants: int Q(f) psi for mixtures of shifted equilibria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ShiftedMixture:
    """f = sum_k w_k exp(-(|v - u_k|^2/2 + eta V(|v|))/sigma) / Z_k.

    ``log_norm[k]`` is log Z_k relative to the scaled equilibrium factor.
    """

    weights: np.ndarray
    shifts: np.ndarray
    log_norm: np.ndarray
    omega: np.ndarray

    def evaluate(self, v, e, params):
        """Values and gradients at ``v``; ``e`` is the scaled factor exp(-Phi_omega/sigma - s)."""
        f = np.zeros(len(v))
        g = np.zeros_like(v)
        for w, u, ln in zip(self.weights, self.shifts, self.log_norm):
            val = w * e * _tilt(v, u, self.omega, params.sigma, ln)
            f += val
            g -= val[:, None] * grad_phi(v, u, params) / params.sigma
        return f, g


def _tilt(v, u, omega, sigma, log_norm=0.0):
    """exp(-Phi_u/sigma) / exp(-Phi_omega/sigma), divided by exp(log_norm)."""
    return np.exp((v @ (u - omega)) / sigma - (u @ u - 1.0) / (2.0 * sigma) - log_norm)


def _grid_rule(table, omega, n_phi):
    """Spectral Gauss rule of the polar grid lifted to velocity space: (v, dv, e)."""
    from .equilibrium import velocity_rule

    grid = table.grid
    local, w, logw = velocity_rule(grid, n_phi)
    v = local @ frame(omega).T
    return v, w, np.exp(logw - grid.log_shift)


def _component_moments(u, rule, omega, sigma):
    v, dv, e = rule
    t = dv * e * _tilt(v, u, omega, sigma)
    mass = t.sum()
    return mass, (t @ v) / mass


def shifted_mixture(table, omega, rng, n_components=3, transverse=None, n_phi=32, rule=None):
    """Random mixture of shifted equilibria with first moment on R_+ omega.

    The transverse shift of the last component is solved for so the
    transverse moment vanishes (or equals ``transverse`` times the first
    transverse basis vector, for negative controls).
    """
    from scipy.optimize import root

    from .errors import MomentConstraintViolated

    params = table.params
    sig = params.sigma
    d = params.dim
    omega = check_unit(omega)
    basis = transverse_basis(omega)
    rule = rule or _grid_rule(table, omega, n_phi)
    k = n_components
    w = rng.uniform(0.5, 1.5, k)
    w /= w.sum()
    spread = min(0.5, np.sqrt(sig))
    along = rng.uniform(0.2, 0.8, k) if transverse is not None else 1.0 + spread * rng.uniform(-0.6, 0.6, k)
    perp = spread * rng.uniform(-1.0, 1.0, (k, d - 1))
    target = np.zeros(d - 1)
    if transverse is not None:
        target[0] = transverse

    def shifts_of(p_last):
        p = perp.copy()
        p[-1] = p_last
        return along[:, None] * omega + p @ basis

    def transverse_moment(p_last):
        u = shifts_of(p_last)
        m = sum(wk * _component_moments(uk, rule, omega, sig)[1] for wk, uk in zip(w, u))
        return basis @ m - target

    # unreachable targets overflow; they surface below as a nonfinite miss
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        sol = root(transverse_moment, perp[-1], method="hybr", options={"xtol": 1e-15})
        u = shifts_of(sol.x)
        masses = np.array([_component_moments(uk, rule, omega, sig)[0] for uk in u])
        mix = ShiftedMixture(weights=w, shifts=u, log_norm=np.log(masses), omega=omega)
        moment = first_moment_of(mix, rule, params)
        miss = np.linalg.norm(basis @ moment - target)
    if not miss <= 1e-12 or (transverse is None and moment @ omega <= 0):
        raise MomentConstraintViolated(f"transverse moment misses its target by {miss:.3e}")
    return mix


def first_moment_of(mix, rule, params):
    """int f v dv on a rule ``(v, dv, e)``."""
    v, dv, e = rule
    f = sum(w * _tilt(v, u, mix.omega, params.sigma, ln)
            for w, u, ln in zip(mix.weights, mix.shifts, mix.log_norm))
    return (dv * e * f) @ v


def collision_moments(chi, omega, mixtures, n_phi=32, rule=None):
    """int Q(f) psi_E dv = -int (sigma grad f + f grad Phi_{Omega[f]}) . grad psi_E dv.

    Returns an array (n_mixtures, d-1) over the transverse basis of omega.
    Omega[f] is taken from the first moment on the spectral grid rule.
    For a component f_k centred at u_k the flux is f_k (u_k - Omega[f]):
    the potential terms cancel, so all components share one pass.
    """
    from .equilibrium import orientation_of

    params = chi.params
    sig = params.sigma
    omega = check_unit(omega)
    basis = transverse_basis(omega)
    orient = [orientation_of(first_moment_of(m, rule, params)) for m in mixtures]
    owner = np.concatenate([np.full(len(m.weights), n) for n, m in enumerate(mixtures)])
    shifts = np.concatenate([m.shifts for m in mixtures])
    weights = np.concatenate([m.weights for m in mixtures])
    log_norm = np.concatenate([m.log_norm for m in mixtures])
    lever = weights[:, None] * (shifts - np.array(orient)[owner])
    offset = (np.sum(shifts * shifts, axis=1) - 1.0) / (2.0 * sig) + log_norm
    _, _, _, _, shift_chi, _ = _element_data(chi)
    # the mixtures are normalised against the grid's scaled factor
    rescale = np.exp(shift_chi - chi.grid.log_shift)
    acc = np.zeros((len(basis), shifts.shape[0]))
    for v, dv, e in velocity_slices(chi, omega, n_phi):
        tilt = np.exp((v @ (shifts - omega).T) / sig - offset)
        m = dv * e * rescale
        for b, E in enumerate(basis):
            g = psi_values(chi, v, omega, E, with_gradient=True)[1]
            acc[b] += np.einsum("nk,nk->k", (m[:, None] * g) @ lever.T, tilt)
    out = np.zeros((len(mixtures), len(basis)))
    for b in range(len(basis)):
        out[:, b] = -np.bincount(owner, weights=acc[b], minlength=len(mixtures))
    return out


def verify_gci_equivalence(chi, table, n_densities=20, omega=None, seed=1, tol=1e-4,
                           n_negative=5, negative_tol=1e-3, n_phi=32):
    """int Q(f) psi = 0 for mixtures with moment on R_+ Omega; nonzero otherwise."""
    if n_densities < 1:
        raise DomainError("n_densities must be >= 1")
    params = chi.params
    d = params.dim
    omega = np.eye(d)[0] if omega is None else check_unit(omega)
    rng = np.random.default_rng(seed)
    rule = _grid_rule(table, omega, n_phi if d == 3 else 8)
    report = CheckReport()

    eq = ShiftedMixture(weights=np.ones(1), shifts=omega[None, :],
                        log_norm=np.log([_component_moments(omega, rule, omega, params.sigma)[0]]),
                        omega=omega)
    positive = [shifted_mixture(table, omega, rng, rule=rule) for _ in range(n_densities)]
    negative = [shifted_mixture(table, omega, rng, transverse=rng.uniform(0.2, 0.4), rule=rule)
                for _ in range(n_negative)]
    vals = np.abs(collision_moments(chi, omega, [eq] + positive + negative, n_phi, rule))
    report.add("equilibrium: |int Q(M) psi|", vals[0].max(), 1e-10)
    report.add("GCI: |int Q(f) psi|, moment on R Omega", vals[1:n_densities + 1].max(), tol)
    if n_negative:
        report.add("negative control: |int Q(f) psi|, transverse moment",
                   vals[n_densities + 1:, 0].min(), negative_tol, kind="above")
    return report
