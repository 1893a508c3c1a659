"""
Dense small-scale semidefinite programming.

Solves linear-objective problems over products of real symmetric PSD
blocks and nonnegative scalars, with linear trace constraints
(equality or inequality). The solver is a primal-dual path-following
interior-point method with Nesterov-Todd scaling and a Mehrotra
predictor-corrector step, run on the homogeneous self-dual embedding so
that infeasibility is certified rather than guessed.

Hermitian problems enter through the real symmetric embedding
``H -> [[Re H, -Im H], [Im H, Re H]]``; coefficient matrices carry a
half scaling so traces match the complex problem exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, cho_solve, solve_triangular, svd, LinAlgError


# -- Hermitian <-> real symmetric embedding -------------------------------


def embed_hermitian(h: np.ndarray) -> np.ndarray:
    """Real symmetric image of a Hermitian matrix (variable side)."""
    re, im = h.real, h.imag
    return np.block([[re, -im], [im, re]])


def embed_coefficient(h: np.ndarray) -> np.ndarray:
    """Constraint/objective coefficient such that traces are preserved.

    For Hermitian ``A`` and ``X``: ``<embed_coefficient(A),
    embed_hermitian(X)> == tr(A X)``.
    """
    return 0.5 * embed_hermitian(h)


def extract_hermitian(m: np.ndarray) -> np.ndarray:
    """Hermitian matrix recovered from a (general) real symmetric 2n x 2n."""
    n = m.shape[0] // 2
    re = 0.5 * (m[:n, :n] + m[n:, n:])
    im = 0.5 * (m[n:, :n] - m[n:, :n].T)
    return re + 1j * im


# -- public problem description -------------------------------------------


@dataclass
class TraceConstraint:
    """One linear constraint ``sum_i <A_i, X_i> + a . t  (sense)  rhs``."""

    coeff_blocks: dict              # block index -> real symmetric coefficient
    coeff_scalars: np.ndarray       # (num_scalars,)
    rhs: float
    sense: str                      # "<=", ">=", "=="


@dataclass
class SdpProblem:
    """Block PSD program with nonnegative auxiliary scalars.

    Variables are real symmetric PSD matrices ``X_i`` (sizes
    ``block_dims``) plus ``num_scalars`` nonnegative scalars ``t``.
    """

    block_dims: list
    num_scalars: int
    objective_blocks: dict          # block index -> real symmetric coefficient
    objective_scalars: np.ndarray
    maximize: bool
    constraints: list = field(default_factory=list)

    def add_constraint(self, coeff_blocks: dict, coeff_scalars, rhs: float, sense: str):
        if sense not in ("<=", ">=", "=="):
            raise ValueError(f"bad constraint sense {sense!r}")
        self.constraints.append(TraceConstraint(
            coeff_blocks=coeff_blocks,
            coeff_scalars=np.asarray(coeff_scalars, dtype=float),
            rhs=float(rhs), sense=sense))


@dataclass
class SdpSolution:
    """Solver output: block matrices, scalars and convergence diagnostics."""

    block_matrices: list
    scalars: np.ndarray
    objective: float
    duality_gap: float              # relative
    iterations: int
    status: str                     # "optimal" | "infeasible" | "unbounded" | "max-iter"
    primal_residual: float
    dual_residual: float
    certificate: np.ndarray | None = None


# -- svec packing ----------------------------------------------------------

_SQRT2 = np.sqrt(2.0)


def _svec_indices(n: int):
    iu = np.triu_indices(n)
    scale = np.where(iu[0] == iu[1], 1.0, _SQRT2)
    return iu, scale


def svec(m: np.ndarray) -> np.ndarray:
    iu, scale = _svec_indices(m.shape[0])
    return m[iu] * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    iu, scale = _svec_indices(n)
    m = np.zeros((n, n))
    m[iu] = v / scale
    return m + np.triu(m, 1).T


# -- cone helpers ------------------------------------------------------------


class _Cone:
    """Product of PSD blocks and a nonnegative orthant, svec-packed."""

    def __init__(self, block_dims, num_lin):
        self.block_dims = list(block_dims)
        self.num_lin = int(num_lin)
        self.block_sizes = [n * (n + 1) // 2 for n in self.block_dims]
        self.offsets = np.cumsum([0] + self.block_sizes)
        self.lin_start = int(self.offsets[-1])
        self.dim = self.lin_start + self.num_lin
        self.degree = sum(self.block_dims) + self.num_lin

    def identity(self) -> np.ndarray:
        e = np.zeros(self.dim)
        for b, n in enumerate(self.block_dims):
            e[self.offsets[b]:self.offsets[b + 1]] = svec(np.eye(n))
        e[self.lin_start:] = 1.0
        return e

    def blocks(self, x: np.ndarray):
        for b, n in enumerate(self.block_dims):
            yield smat(x[self.offsets[b]:self.offsets[b + 1]], n)

    def lin(self, x: np.ndarray) -> np.ndarray:
        return x[self.lin_start:]

    def pack(self, mats, lin) -> np.ndarray:
        x = np.zeros(self.dim)
        for b, m in enumerate(mats):
            x[self.offsets[b]:self.offsets[b + 1]] = svec(m)
        x[self.lin_start:] = lin
        return x

    def max_step(self, x: np.ndarray, dx: np.ndarray) -> float:
        """Largest step with ``x + a*dx`` inside the cone (up to a large cap)."""
        alpha = np.inf
        for b, n in enumerate(self.block_dims):
            sl = slice(self.offsets[b], self.offsets[b + 1])
            xm, dm = smat(x[sl], n), smat(dx[sl], n)
            l = _chol_psd(xm)
            inner = solve_triangular(l, dm, lower=True)
            inner = solve_triangular(l, inner.T, lower=True)
            lam_min = np.linalg.eigvalsh(0.5 * (inner + inner.T))[0]
            if lam_min < 0:
                alpha = min(alpha, -1.0 / lam_min)
        xl, dl = self.lin(x), self.lin(dx)
        neg = dl < 0
        if neg.any():
            alpha = min(alpha, float(np.min(-xl[neg] / dl[neg])))
        return alpha


class _Scaling:
    """Nesterov-Todd scaling for the current (x, z) pair."""

    def __init__(self, cone: _Cone, x: np.ndarray, z: np.ndarray):
        self.cone = cone
        self.r = []
        self.rinv = []
        self.lam_blocks = []
        for b, n in enumerate(cone.block_dims):
            sl = slice(cone.offsets[b], cone.offsets[b + 1])
            xm, zm = smat(x[sl], n), smat(z[sl], n)
            lx = _chol_psd(xm)
            lz = _chol_psd(zm)
            u, sig, vt = svd(lz.T @ lx)
            r = lx @ vt.T / np.sqrt(sig)
            rinv = (np.sqrt(sig)[:, None] * vt) @ _tri_inv(lx)
            self.r.append(r)
            self.rinv.append(rinv)
            self.lam_blocks.append(sig)
        xl, zl = cone.lin(x), cone.lin(z)
        self.d_lin = np.sqrt(xl / zl)
        self.lam_lin = np.sqrt(xl * zl)

    def apply_h(self, v: np.ndarray) -> np.ndarray:
        """Apply ``W W^T``: per block ``G M G`` with ``G = R R^T``; lin ``d^2``."""
        cone = self.cone
        out = np.empty_like(v)
        for b, n in enumerate(cone.block_dims):
            sl = slice(cone.offsets[b], cone.offsets[b + 1])
            g = self.r[b] @ self.r[b].T
            out[sl] = svec(g @ smat(v[sl], n) @ g)
        out[cone.lin_start:] = self.d_lin ** 2 * v[cone.lin_start:]
        return out

    def apply_h_inv(self, v: np.ndarray) -> np.ndarray:
        cone = self.cone
        out = np.empty_like(v)
        for b, n in enumerate(cone.block_dims):
            sl = slice(cone.offsets[b], cone.offsets[b + 1])
            gi = self.rinv[b].T @ self.rinv[b]
            out[sl] = svec(gi @ smat(v[sl], n) @ gi)
        out[cone.lin_start:] = v[cone.lin_start:] / self.d_lin ** 2
        return out

    def scale_x(self, v: np.ndarray):
        """Per-block ``R^-1 M R^-T`` and lin ``v/d`` (maps x to scaled space)."""
        mats = [self.rinv[b] @ smat(v[sl], n) @ self.rinv[b].T
                for b, (n, sl) in enumerate(self._block_slices(v))]
        return mats, self.cone.lin(v) / self.d_lin

    def scale_z(self, v: np.ndarray):
        """Per-block ``R^T M R`` and lin ``v*d`` (maps z to scaled space)."""
        mats = [self.r[b].T @ smat(v[sl], n) @ self.r[b]
                for b, (n, sl) in enumerate(self._block_slices(v))]
        return mats, self.cone.lin(v) * self.d_lin

    def _block_slices(self, v):
        cone = self.cone
        return [(n, slice(cone.offsets[b], cone.offsets[b + 1]))
                for b, n in enumerate(cone.block_dims)]

    def unscale_z(self, mats, lin) -> np.ndarray:
        """Inverse of the z-side scaling: ``R^-T M R^-1``, lin ``v/d``."""
        out = np.zeros(self.cone.dim)
        for b, n in enumerate(self.cone.block_dims):
            sl = slice(self.cone.offsets[b], self.cone.offsets[b + 1])
            out[sl] = svec(self.rinv[b].T @ mats[b] @ self.rinv[b])
        out[self.cone.lin_start:] = lin / self.d_lin
        return out


def _chol_psd(m: np.ndarray) -> np.ndarray:
    """Cholesky with escalating regularization for boundary iterates."""
    scale = max(abs(np.trace(m)), 1.0)
    for bump in (0.0, 1e-13, 1e-10, 1e-7, 1e-4):
        try:
            return cholesky(m + bump * scale * np.eye(m.shape[0]), lower=True)
        except LinAlgError:
            continue
    w, v = np.linalg.eigh(m)
    w = np.clip(w, scale * 1e-12, None)
    return cholesky((v * w) @ v.T + scale * 1e-12 * np.eye(m.shape[0]), lower=True)


def _tri_inv(l: np.ndarray) -> np.ndarray:
    return solve_triangular(l, np.eye(l.shape[0]), lower=True)


# -- canonicalization --------------------------------------------------------


def _canonicalize(problem: SdpProblem):
    """Rewrite as ``min c.x, A x = b, x in K`` with slack scalars.

    Rows are equilibrated by their largest coefficient so wildly mixed
    physical scales (watt-level powers against sub-picowatt noise) do
    not poison the Newton systems.
    """
    n_blocks = len(problem.block_dims)
    num_slack = sum(1 for con in problem.constraints if con.sense != "==")
    cone = _Cone(problem.block_dims, problem.num_scalars + num_slack)
    m = len(problem.constraints)
    a = np.zeros((m, cone.dim))
    b = np.zeros(m)
    slack_pos = cone.lin_start + problem.num_scalars
    for j, con in enumerate(problem.constraints):
        row = np.zeros(cone.dim)
        for bidx, coeff in con.coeff_blocks.items():
            sl = slice(cone.offsets[bidx], cone.offsets[bidx + 1])
            row[sl] = svec(np.asarray(coeff, dtype=float))
        if problem.num_scalars:
            row[cone.lin_start:cone.lin_start + problem.num_scalars] = con.coeff_scalars
        # equilibrate on the structural coefficients only; the unit slack
        # coefficient is appended afterwards so it cannot mask tiny rows
        scale = max(np.max(np.abs(row)), abs(con.rhs), 1e-300)
        row /= scale
        if con.sense == "<=":
            row[slack_pos] = 1.0
            slack_pos += 1
        elif con.sense == ">=":
            row[slack_pos] = -1.0
            slack_pos += 1
        a[j] = row
        b[j] = con.rhs / scale
    c = np.zeros(cone.dim)
    for bidx, coeff in problem.objective_blocks.items():
        sl = slice(cone.offsets[bidx], cone.offsets[bidx + 1])
        c[sl] = svec(np.asarray(coeff, dtype=float))
    if problem.num_scalars:
        c[cone.lin_start:cone.lin_start + problem.num_scalars] = problem.objective_scalars
    sign = -1.0 if problem.maximize else 1.0
    return cone, a, b, sign * c, sign


def solve_sdp(problem: SdpProblem, tol: float = 1e-7, feastol: float = 1e-7,
              max_iterations: int = 200) -> SdpSolution:
    """Solve the block SDP; see the module docstring for the method.

    Terminates when the relative duality gap falls below ``tol`` and
    both feasibility residuals below ``feastol``; returns an
    infeasibility certificate if the homogeneous embedding converges to
    a dual improving ray instead.
    """
    cone, a, b, c, sign = _canonicalize(problem)
    m = len(b)
    if m == 0:
        raise ValueError("problem must have at least one constraint")
    x = cone.identity()
    z = cone.identity()
    y = np.zeros(m)
    tau, kappa = 1.0, 1.0
    degree = cone.degree + 1
    norm_b = 1.0 + np.linalg.norm(b)
    norm_c = 1.0 + np.linalg.norm(c)

    status = "max-iter"
    iters = 0
    for iters in range(1, max_iterations + 1):
        r_p = a @ x - b * tau
        r_d = -a.T @ y + c * tau - z
        r_g = float(b @ y - c @ x - kappa)
        mu = (x @ z + tau * kappa) / degree

        pobj = float(c @ x) / tau
        dobj = float(b @ y) / tau
        pres = np.linalg.norm(a @ (x / tau) - b) / norm_b
        dres = np.linalg.norm(-a.T @ (y / tau) + c - z / tau) / norm_c
        relgap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        if pres <= feastol and dres <= feastol and relgap <= tol:
            status = "optimal"
            break

        by = float(b @ y)
        cx = float(c @ x)
        if by > 0:
            inf_res = np.linalg.norm(a.T @ y + z) / by
            if inf_res <= feastol and mu / degree <= 1e-2 and tau <= 1e-3 * kappa:
                status = "infeasible"
                break
        if cx < 0:
            unb_res = np.linalg.norm(a @ x) / (-cx)
            if unb_res <= feastol and mu / degree <= 1e-2 and tau <= 1e-3 * kappa:
                status = "unbounded"
                break

        w = _Scaling(cone, x, z)
        h_rows = np.array([w.apply_h(a[j]) for j in range(m)])
        schur = a @ h_rows.T
        try:
            schur_f = cholesky(schur + 1e-13 * np.trace(schur) / max(m, 1) * np.eye(m),
                               lower=True)
        except LinAlgError:
            schur_f = cholesky(schur + 1e-9 * np.trace(schur) / max(m, 1) * np.eye(m),
                               lower=True)
        hc = w.apply_h(c)

        def schur_solve(rhs):
            sol = cho_solve((schur_f, True), rhs)
            sol += cho_solve((schur_f, True), rhs - schur @ sol)  # one refinement
            return sol

        v1 = schur_solve(b + a @ hc)

        def newton(eta1, eta2, eta3, ds_blocks, ds_lin, d_kappa):
            # scaled complementarity rhs -> unscaled correction term
            dt_blocks = []
            for bi, sig in enumerate(w.lam_blocks):
                denom = 0.5 * (sig[:, None] + sig[None, :])
                dt_blocks.append(ds_blocks[bi] / denom)
            dt_lin = ds_lin / w.lam_lin
            w_s = w.unscale_z(dt_blocks, dt_lin)
            r_tilde = eta2 + w_s
            v2 = schur_solve(eta1 - a @ w.apply_h(r_tilde))
            u2 = w.apply_h(r_tilde + a.T @ v2)
            u1 = w.apply_h(a.T @ v1 - c)
            denom_tau = float(b @ v1 - c @ u1) + kappa / tau
            num_tau = eta3 - float(b @ v2) + float(c @ u2) + d_kappa / tau
            d_tau = num_tau / denom_tau
            dy = v2 + d_tau * v1
            dx = u2 + d_tau * u1
            # recover dz and dkappa from the linear equations directly so
            # they hold exactly; residual error lands on the (soft)
            # complementarity targets instead of the KKT system
            dz = -a.T @ dy + c * d_tau - eta2
            d_kap = float(b @ dy - c @ dx) - eta3
            return dx, dy, dz, d_tau, d_kap

        # predictor (affine scaling) direction
        ds_blocks_aff = [-np.diag(sig ** 2) for sig in w.lam_blocks]
        ds_lin_aff = -w.lam_lin ** 2
        dxa, dya, dza, dta, dka = newton(-r_p, -r_d, -r_g, ds_blocks_aff,
                                         ds_lin_aff, -tau * kappa)
        alpha_x = cone.max_step(x, dxa)
        alpha_z = cone.max_step(z, dza)
        alpha = min(1.0, alpha_x, alpha_z,
                    -tau / dta if dta < 0 else np.inf,
                    -kappa / dka if dka < 0 else np.inf)
        mu_aff = ((x + alpha * dxa) @ (z + alpha * dza)
                  + (tau + alpha * dta) * (kappa + alpha * dka)) / degree
        sigma = float(np.clip((mu_aff / mu) ** 3, 0.0, 1.0))

        # combined corrector direction
        xs_mats, xs_lin = w.scale_x(dxa)
        zs_mats, zs_lin = w.scale_z(dza)
        ds_blocks = []
        for bi, sig in enumerate(w.lam_blocks):
            cross = 0.5 * (xs_mats[bi] @ zs_mats[bi] + zs_mats[bi] @ xs_mats[bi])
            ds_blocks.append(sigma * mu * np.eye(len(sig)) - np.diag(sig ** 2) - cross)
        ds_lin = sigma * mu - w.lam_lin ** 2 - xs_lin * zs_lin
        d_kappa = sigma * mu - tau * kappa - dta * dka
        scale_r = 1.0 - sigma
        dx, dy, dz, dt, dk = newton(-scale_r * r_p, -scale_r * r_d, -scale_r * r_g,
                                    ds_blocks, ds_lin, d_kappa)

        alpha = min(cone.max_step(x, dx), cone.max_step(z, dz),
                    -tau / dt if dt < 0 else np.inf,
                    -kappa / dk if dk < 0 else np.inf)
        alpha = min(1.0, 0.98 * alpha)
        if alpha < 1e-10:
            break  # stalled; report the best iterate
        x = x + alpha * dx
        z = z + alpha * dz
        y = y + alpha * dy
        tau += alpha * dt
        kappa += alpha * dk

    if status in ("optimal", "max-iter"):
        xs = x / tau
        mats = [0.5 * (mb + mb.T) for mb in cone.blocks(xs)]
        scalars = cone.lin(xs)[:problem.num_scalars]
        pobj = float(c @ xs)
        dobj = float(b @ y) / tau
        return SdpSolution(
            block_matrices=mats, scalars=scalars, objective=sign * pobj,
            duality_gap=abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj)),
            iterations=iters, status=status,
            primal_residual=float(np.linalg.norm(a @ xs - b) / norm_b),
            dual_residual=float(np.linalg.norm(-a.T @ (y / tau) + c - z / tau) / norm_c))
    # certificate exit: report the improving ray
    cert = y / max(float(b @ y), 1e-300) if status == "infeasible" else x / max(float(-c @ x), 1e-300)
    empty = [np.zeros((n, n)) for n in problem.block_dims]
    return SdpSolution(
        block_matrices=empty, scalars=np.zeros(problem.num_scalars),
        objective=np.nan, duality_gap=np.nan, iterations=iters, status=status,
        primal_residual=np.nan, dual_residual=np.nan, certificate=cert)
