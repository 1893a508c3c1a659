"""
Max-min joint precoder design.

Lifts per-stream beamformers to covariance blocks (one per receiver plus
a pooled radar covariance), maximizes the minimum weighted directed
power over the tracked targets subject to the power budget, per-receiver
SINR floors and pairwise angular-correlation bounds, then recovers
beamformer columns from the block eigenstructure.

A second solve at the fixed optimum minimizes the total receiver-block
power; this removes the split degeneracy of the relaxation and drives
the receiver blocks to (numerically) rank one, so the extracted columns
lose essentially nothing.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario
from .waveform import PrecoderSet
from .channel import CsiReport, tx_steering
from .metrics import (range_bound_constant, angle_bound_constant, radar_snr,
                      directed_power, achieved_sinr, AngleSingularityError)
from .sdp import (SdpProblem, SdpSolution, solve_sdp, embed_coefficient,
                  extract_hermitian)


class InfeasibleDesignError(RuntimeError):
    """The constraint set admits no precoder (with certificate context)."""


class PrecoderNumericsError(RuntimeError):
    """The solver failed to converge on a (presumably feasible) design."""


@dataclass
class PrecoderProblem:
    """Inputs of one design call."""

    csi: CsiReport
    target_gains: np.ndarray            # complex (M_trgt,) estimated
    target_ranges_m: np.ndarray         # (M_trgt,)
    target_angles_rad: np.ndarray       # (M_trgt,)
    sinr_floor_linear: np.ndarray       # (M_rx,)
    power_budget_w: float
    correlation_limit: float
    angle_set_rad: np.ndarray           # directions of interest (N_ang,)
    subcarrier_policy: str = "center"   # "center" | "all" | "stride:k"
    weights: np.ndarray | None = None   # filled by compute_weights if None

    @property
    def num_receivers(self) -> int:
        return self.csi.estimates.shape[0]

    @property
    def num_targets(self) -> int:
        return len(self.target_angles_rad)

    def validate(self, s: Scenario) -> None:
        if self.num_targets == 0:
            raise ValueError("precoder design needs at least one tracked target")
        if len(self.angle_set_rad) > self.num_receivers + self.num_targets:
            raise ValueError("angle set larger than receivers + targets")
        if self.weights is not None and np.any(np.asarray(self.weights) <= 0):
            raise ValueError("weights must be positive")


@dataclass
class BeamformerSolution:
    """Designed precoders plus extraction and verification diagnostics."""

    precoders: PrecoderSet
    rank_one_gap: np.ndarray            # (n_designed, M_rx) receiver-block gaps
    designed_subcarriers: list
    verification: dict = field(default_factory=dict)
    solver_stats: list = field(default_factory=list)


def compute_weights(p: PrecoderProblem, s: Scenario) -> np.ndarray:
    """Max-min weights making weighted directed power track positioning accuracy.

    ``w_p = SNR_p / (k_R + k_Theta(theta_p) * R_p^2)`` up to a common
    normalization (largest weight = 1), so equalizing ``w_p * P(theta_p)``
    equalizes the positioning-accuracy metric across targets.
    """
    k_r = range_bound_constant(s)
    w = np.zeros(p.num_targets)
    for i in range(p.num_targets):
        theta = p.target_angles_rad[i]
        if abs(np.cos(theta)) ** 2 < 1e-6:
            warnings.warn(f"target {i} near +/-90 deg: angle bound nearly singular, "
                          "weight collapses to zero", stacklevel=2)
        k_t = angle_bound_constant(theta, s, cos2_floor=1e-30)
        snr = radar_snr(p.target_gains[i], s)
        w[i] = snr / (k_r + k_t * p.target_ranges_m[i] ** 2)
    return w / w.max()


def _steering_matrix(angles: np.ndarray, freq_hz: float, s: Scenario) -> np.ndarray:
    return np.array([tx_steering(t, freq_hz, s) for t in angles]).T  # (N_tx, N_ang)


def mrt_sinr_ceiling(p: PrecoderProblem, subcarrier: int) -> np.ndarray:
    """Single-user matched-filter SINR upper bound per receiver (linear)."""
    h = p.csi.estimates[:, subcarrier, :]
    return np.einsum("ql,ql->q", h, h.conj()).real * p.power_budget_w / p.csi.noise_power_w


def assemble_sdp(p: PrecoderProblem, subcarrier: int, s: Scenario,
                 tau_floor: float | None = None,
                 sinr_margin: float = 0.0) -> SdpProblem:
    """Build the lifted covariance program for one subcarrier.

    Blocks are the ``M_rx`` receiver covariances followed by the pooled
    radar covariance. With ``tau_floor`` unset the objective maximizes
    the auxiliary minimum ``tau``; with it set the program instead
    minimizes total receiver-block power at that fixed level (the
    rank-one refinement stage). ``sinr_margin`` backs the SINR floors
    off by a relative factor, absorbing the beam mismatch a replicated
    single-subcarrier design sees at the band edges.

    SINR floors that exceed the matched-filter ceiling are rejected
    early with a readable message; the solver certificate remains the
    authority for every other infeasibility.
    """
    p.validate(s)
    n_tx = s.array.num_tx
    m_rx = p.num_receivers
    freq = s.ofdm.subcarrier_frequency_hz(subcarrier)
    floors = p.sinr_floor_linear * (1.0 + sinr_margin)
    ceilings = mrt_sinr_ceiling(p, subcarrier)
    for q in range(m_rx):
        if p.sinr_floor_linear[q] > 0 and p.sinr_floor_linear[q] > ceilings[q]:
            raise InfeasibleDesignError(
                f"receiver {q} demands SINR {10*np.log10(p.sinr_floor_linear[q]):.1f} dB "
                f"above its matched-filter ceiling "
                f"{10*np.log10(ceilings[q]):.1f} dB; no precoder can satisfy it")

    refine = tau_floor is not None
    num_scalars = 0 if refine else 1
    n_blocks = m_rx + 1
    eye = embed_coefficient(np.eye(n_tx))
    if refine:
        obj_blocks = {b: eye for b in range(m_rx)}
        obj_scalars = np.zeros(0)
    else:
        obj_blocks = {}
        obj_scalars = np.array([1.0])
    prob = SdpProblem(block_dims=[2 * n_tx] * n_blocks, num_scalars=num_scalars,
                      objective_blocks=obj_blocks, objective_scalars=obj_scalars,
                      maximize=not refine)
    zero_s = np.zeros(num_scalars)

    # C2: total power
    prob.add_constraint({b: eye for b in range(n_blocks)}, zero_s,
                        p.power_budget_w, "<=")
    # C3: per-receiver SINR in lifted form
    for q in range(m_rx):
        if floors[q] <= 0:
            continue
        h = p.csi.estimates[q, subcarrier]
        hq = embed_coefficient(np.outer(h, h.conj()))
        coeffs = {b: -hq for b in range(n_blocks)}
        coeffs[q] = (1.0 / floors[q]) * hq
        prob.add_constraint(coeffs, zero_s, float(p.csi.noise_power_w[q]), ">=")
    # C4: pairwise angular correlation, conservative box on Re/Im
    u_set = _steering_matrix(p.angle_set_rad, freq, s)
    bound = p.correlation_limit / np.sqrt(2.0)
    for k in range(u_set.shape[1]):
        for l in range(k + 1, u_set.shape[1]):
            outer = np.outer(u_set[:, k], u_set[:, l].conj())
            a_re = embed_coefficient(0.5 * (outer + outer.conj().T))
            a_im = embed_coefficient(-0.5j * (outer - outer.conj().T))
            for coeff in (a_re, a_im):
                prob.add_constraint({b: coeff for b in range(n_blocks)},
                                    zero_s, bound, "<=")
                prob.add_constraint({b: -coeff for b in range(n_blocks)},
                                    zero_s, bound, "<=")
    # C5: weighted directed power per target
    weights = p.weights if p.weights is not None else compute_weights(p, s)
    for i in range(p.num_targets):
        u = tx_steering(p.target_angles_rad[i], freq, s)
        coeff = embed_coefficient(weights[i] * np.outer(u, u.conj()))
        if refine:
            prob.add_constraint({b: coeff for b in range(n_blocks)}, zero_s,
                                float(tau_floor), ">=")
        else:
            prob.add_constraint({b: coeff for b in range(n_blocks)},
                                np.array([-1.0]), 0.0, ">=")
    return prob


def extract_rank_one(sol: SdpSolution, num_receivers: int, num_tx: int
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Beamformer columns from the solved covariance blocks.

    Receiver blocks contribute their dominant eigenpair (gap recorded);
    the pooled radar block is expanded exactly into its eigen-beams on
    the remaining columns (truncating only if its rank exceeds the free
    column count).
    """
    f = np.zeros((num_tx, num_tx), dtype=complex)
    gaps = np.zeros(num_receivers)
    for q in range(num_receivers):
        r = extract_hermitian(sol.block_matrices[q])
        w, v = np.linalg.eigh(r)
        tr = float(np.trace(r).real)
        if tr > 1e-14:
            gaps[q] = max(0.0, 1.0 - w[-1] / tr)
            f[:, q] = np.sqrt(max(w[-1], 0.0)) * v[:, -1]
    r_rad = extract_hermitian(sol.block_matrices[num_receivers])
    w, v = np.linalg.eigh(r_rad)
    order = np.argsort(w)[::-1]
    col = num_receivers
    for i in order:
        if col >= num_tx or w[i] <= max(w[order[0]], 0.0) * 1e-12:
            break
        f[:, col] = np.sqrt(w[i]) * v[:, i]
        col += 1
    return f, gaps


def design(p: PrecoderProblem, s: Scenario, tol: float = 1e-8) -> BeamformerSolution:
    """Solve the design per the subcarrier policy and verify the result.

    ``center`` solves at the zero-offset subcarrier and replicates the
    precoder across the band (the fractional bandwidth is ~0.2%, so the
    channels are effectively flat); ``all`` solves every subcarrier;
    ``stride:k`` solves every k-th and reuses the nearest design.
    """
    if p.weights is None:
        p.weights = compute_weights(p, s)
    n_sc = s.ofdm.num_subcarriers
    policy = p.subcarrier_policy
    if policy == "center":
        designed = [n_sc // 2]
    elif policy == "all":
        designed = list(range(n_sc))
    elif policy.startswith("stride:"):
        stride = int(policy.split(":", 1)[1])
        if stride < 1:
            raise ValueError("stride must be >= 1")
        designed = list(range(0, n_sc, stride))
    else:
        raise ValueError(f"unknown subcarrier policy {policy!r}")

    n_tx = s.array.num_tx
    m_rx = p.num_receivers
    # replicated designs back the SINR floors off a little so the band
    # edges stay above the nominal floor despite beam mismatch
    margin = 0.05 if policy != "all" else 0.0
    matrices = np.zeros((n_sc, n_tx, n_tx), dtype=complex)
    gaps = np.zeros((len(designed), m_rx))
    stats = []
    f_by_designed = {}
    for i, n in enumerate(designed):
        sol = solve_sdp(assemble_sdp(p, n, s, sinr_margin=margin), tol=tol)
        if sol.status in ("infeasible", "unbounded"):
            raise InfeasibleDesignError(
                f"subcarrier {n}: solver returned {sol.status} after "
                f"{sol.iterations} iterations (certificate available); "
                "constraint set: power budget, "
                f"{m_rx} SINR floors, {len(p.angle_set_rad)} correlation angles")
        if sol.status == "max-iter":
            raise PrecoderNumericsError(
                f"subcarrier {n}: solver hit the iteration limit "
                f"(gap {sol.duality_gap:.2e})")
        stats.append({"subcarrier": n, "stage": 1, "iterations": sol.iterations,
                      "gap": sol.duality_gap, "objective": sol.objective})
        if m_rx > 0:
            # refine at a hair below the optimum: restores an interior so
            # the receiver-power minimization converges crisply
            refine = solve_sdp(assemble_sdp(p, n, s,
                                            tau_floor=sol.objective * (1.0 - 1e-4),
                                            sinr_margin=margin),
                               tol=max(tol, 1e-7))
            if refine.status == "optimal":
                sol = refine
                stats.append({"subcarrier": n, "stage": 2,
                              "iterations": refine.iterations,
                              "gap": refine.duality_gap,
                              "objective": refine.objective})
        f, gaps[i] = extract_rank_one(sol, m_rx, n_tx)
        f_by_designed[n] = f
    designed_arr = np.array(designed)
    for n in range(n_sc):
        nearest = designed_arr[np.argmin(np.abs(designed_arr - n))]
        matrices[n] = f_by_designed[nearest]

    precoders = PrecoderSet(matrices=matrices)
    out = BeamformerSolution(precoders=precoders, rank_one_gap=gaps,
                             designed_subcarriers=designed, solver_stats=stats)
    out.verification = verify(out, p, s)
    return out


def angular_correlation(precoders: PrecoderSet, angles_rad: np.ndarray,
                        subcarrier: int, s: Scenario) -> np.ndarray:
    """Cross-direction covariance couplings ``U^H R_F U`` at one subcarrier."""
    freq = s.ofdm.subcarrier_frequency_hz(subcarrier)
    u = _steering_matrix(angles_rad, freq, s)
    f = precoders.matrices[subcarrier]
    return u.conj().T @ (f @ f.conj().T) @ u


def verify(sol: BeamformerSolution, p: PrecoderProblem, s: Scenario) -> dict:
    """Re-evaluate every design constraint on the extracted beamformers."""
    power = sol.precoders.per_subcarrier_power()
    report = {
        "power_per_subcarrier_w": power.tolist(),
        "max_power_w": float(power.max()),
        "rank_one_gap_max": float(sol.rank_one_gap.max()) if sol.rank_one_gap.size else 0.0,
    }
    if p.num_receivers:
        sinr = achieved_sinr(sol.precoders, p.csi, num_receivers=p.num_receivers)
        report["sinr_min_db"] = (10.0 * np.log10(sinr.minimum)).tolist()
        report["sinr_mean_db"] = (10.0 * np.log10(sinr.mean)).tolist()
        report["sinr_floor_db"] = (10.0 * np.log10(p.sinr_floor_linear)).tolist()
    offdiag = 0.0
    for n in sol.designed_subcarriers:
        q = angular_correlation(sol.precoders, p.angle_set_rad, n, s)
        mask = ~np.eye(q.shape[0], dtype=bool)
        if mask.any():
            offdiag = max(offdiag, float(np.abs(q[mask]).max()))
    report["max_offdiag_correlation"] = offdiag
    report["correlation_limit"] = p.correlation_limit
    report["directed_power_w"] = [
        float(directed_power(sol.precoders, t, s)) for t in p.target_angles_rad]
    report["weighted_directed_power"] = [
        float(w * dp) for w, dp in zip(p.weights, report["directed_power_w"])]
    return report


def transmit_pattern(precoders: PrecoderSet, s: Scenario,
                     step_deg: float = 0.5) -> tuple[np.ndarray, np.ndarray]:
    """Directed power sampled over [-90, 90] degrees."""
    angles = np.radians(np.arange(-90.0, 90.0 + step_deg / 2, step_deg))
    power = np.array([directed_power(precoders, t, s) for t in angles])
    return angles, power
