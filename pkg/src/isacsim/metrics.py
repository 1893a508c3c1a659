"""
Closed-form performance metrics: directed transmit power, radar SNR,
range/angle/positioning estimation bounds and achieved downlink SINR.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario
from .waveform import PrecoderSet
from .channel import CommChannel, CsiReport, subcarrier_frequencies, tx_positions_m


class AngleSingularityError(ValueError):
    """Angle bound is undefined at +/-90 degrees (cos^2 vanishes)."""


@dataclass(frozen=True)
class CrlbReport:
    """Estimation-variance lower bounds for one target."""

    var_range_m2: float
    var_angle_rad2: float
    var_x_m2: float
    var_y_m2: float
    positioning_accuracy: float     # inverse of summed Cartesian variances
    snr_linear: float
    directed_power_w: float


@dataclass(frozen=True)
class SinrReport:
    """Achieved downlink SINR per receiver and subcarrier (linear)."""

    per_subcarrier: np.ndarray      # (M_rx, N_sc)
    minimum: np.ndarray             # (M_rx,)
    mean: np.ndarray                # (M_rx,)


def directed_power(precoders: PrecoderSet, theta_rad: float, s: Scenario) -> float:
    """Average transmit power steered toward ``theta_rad`` in watts.

    Subcarrier average of ``|u_n^H F_n F_n^H u_n|`` with the
    (unnormalized) transmit steering vector; an omnidirectional precoder
    returns the full power budget, a matched single beam returns
    ``num_tx`` times it.
    """
    c = s.radio.speed_of_light_m_s
    freqs = subcarrier_frequencies(s)
    pos = tx_positions_m(s)
    u = np.exp(2j * np.pi * freqs[:, None] * pos[None, :] * np.sin(theta_rad) / c)
    uf = np.einsum("nl,nlj->nj", u.conj(), precoders.matrices)
    return float(np.mean(np.abs(np.einsum("nj,nj->n", uf, uf.conj()))))


def radar_snr(gain: complex, s: Scenario) -> float:
    """Post-integration target SNR ``N_virt N_sc N_sym |alpha|^2 / sigma^2``."""
    noise = s.radar_noise_power_w
    if noise <= 0:
        raise ValueError("radar noise power must be positive")
    return (s.array.num_virtual * s.ofdm.num_subcarriers * s.ofdm.num_symbols
            * float(np.abs(gain)) ** 2 / noise)


def range_bound_constant(s: Scenario) -> float:
    """Numerator constant of the range variance bound (m^2 times SNR*P)."""
    c = s.radio.speed_of_light_m_s
    df = s.ofdm.subcarrier_spacing_hz
    n_sc = s.ofdm.num_subcarriers
    return 3.0 * c ** 2 / (8.0 * np.pi ** 2 * df ** 2 * (n_sc ** 2 - 1))


def angle_bound_constant(theta_rad: float, s: Scenario, cos2_floor: float = 1e-12) -> float:
    """Numerator constant of the angle variance bound (rad^2 times SNR*P)."""
    c = s.radio.speed_of_light_m_s
    fc = s.ofdm.carrier_frequency_hz
    lam = s.wavelength_m
    cos2 = float(np.cos(theta_rad)) ** 2
    if cos2 < cos2_floor:
        raise AngleSingularityError(
            f"angle bound diverges at theta={np.degrees(theta_rad):.2f} deg")
    n_virt = s.array.num_virtual
    return 6.0 * c ** 2 / (np.pi ** 2 * fc ** 2 * lam ** 2 * cos2 * (n_virt ** 2 - 1))


def crlb(gain: complex, range_m: float, theta_rad: float,
         precoders: PrecoderSet, s: Scenario) -> CrlbReport:
    """Range/angle/positioning bounds for one (estimated) target.

    Both variances scale inversely with the product of the target SNR
    and the power directed at the target; the positioning accuracy is
    the inverse of the summed Cartesian variances, identically equal to
    ``1 / (var_R + var_Theta * R^2)``.
    """
    snr = radar_snr(gain, s)
    p_dir = directed_power(precoders, theta_rad, s)
    if p_dir <= 0:
        raise ValueError("directed power must be positive for a finite bound")
    denom = snr * p_dir
    var_r = range_bound_constant(s) / denom
    var_t = angle_bound_constant(theta_rad, s) / denom
    sin_t, cos_t = np.sin(theta_rad), np.cos(theta_rad)
    var_x = sin_t ** 2 * var_r + (range_m * cos_t) ** 2 * var_t
    var_y = cos_t ** 2 * var_r + (range_m * sin_t) ** 2 * var_t
    return CrlbReport(
        var_range_m2=float(var_r), var_angle_rad2=float(var_t),
        var_x_m2=float(var_x), var_y_m2=float(var_y),
        positioning_accuracy=float(1.0 / (var_x + var_y)),
        snr_linear=float(snr), directed_power_w=float(p_dir))


def achieved_sinr(precoders: PrecoderSet, csi: CsiReport | CommChannel,
                  num_receivers: int | None = None) -> SinrReport:
    """Evaluate the downlink SINR of every receiver stream.

    Column ``q`` of each precoding matrix serves receiver ``q``; every
    other nonzero column (including radar-only beams) contributes
    interference.
    """
    if isinstance(csi, CsiReport):
        h, noise = csi.estimates, csi.noise_power_w
    else:
        h, noise = csi.vectors, csi.noise_power_w
    m_rx = h.shape[0] if num_receivers is None else num_receivers
    if m_rx > precoders.matrices.shape[2]:
        raise ValueError("more receivers than precoder columns")
    n_sc = h.shape[1]
    out = np.zeros((m_rx, n_sc))
    proj = np.abs(np.einsum("qnl,nlj->qnj", h.conj(), precoders.matrices)) ** 2
    for q in range(m_rx):
        num = proj[q, :, q]
        den = proj[q].sum(axis=1) - num + noise[q]
        out[q] = num / den
    return SinrReport(per_subcarrier=out,
                      minimum=out.min(axis=1) if n_sc else np.zeros(m_rx),
                      mean=out.mean(axis=1) if n_sc else np.zeros(m_rx))
