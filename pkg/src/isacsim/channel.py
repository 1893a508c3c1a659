"""
Radar reflection and LOS communication channels.

The radar channel is simulated from exact element-to-target distances
(antenna ``l`` at ``l*d_tx`` and antenna ``k`` at ``k*d_rx`` along the
array axis, ranges referenced to element 0), while imaging and precoding
work with the far-field plane-wave steering model. The gap between the
two is deliberate model mismatch.

A time-domain delay oracle re-derives the received frame by synthesizing
the delayed subcarrier expansion at the sampling instants and
demodulating; it validates the per-subcarrier matrix-product path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario, Target, RadioParams
from .waveform import SymbolFrame, TimeSignal, ofdm_demodulate


class DelayBeyondCyclicPrefixError(RuntimeError):
    """A target's two-way delay exceeds the cyclic prefix."""


@dataclass(frozen=True)
class RadarChannel:
    """Per-subcarrier MIMO radar channel and its per-target components."""

    matrices: np.ndarray        # complex (N_sc, N_rx, N_tx), sum over targets
    per_target: np.ndarray      # complex (M_trgt, N_sc, N_rx, N_tx)
    gains: np.ndarray           # complex (M_trgt,)


@dataclass(frozen=True)
class CommChannel:
    """LOS downlink channel vectors per receiver and subcarrier."""

    vectors: np.ndarray         # complex (M_rx, N_sc, N_tx)
    noise_power_w: np.ndarray   # (M_rx,)


@dataclass(frozen=True)
class CsiReport:
    """Channel and noise estimates fed back by the receivers."""

    estimates: np.ndarray       # complex (M_rx, N_sc, N_tx)
    noise_power_w: np.ndarray   # (M_rx,)


@dataclass(frozen=True)
class ReceivedRadarFrame:
    """Received radar symbols, ``samples[n][rx antenna, symbol]``."""

    samples: np.ndarray         # complex (N_sc, N_rx, N_sym)


def subcarrier_frequencies(s: Scenario) -> np.ndarray:
    """Absolute subcarrier frequencies in row order (signed indexing)."""
    n = np.arange(s.ofdm.num_subcarriers) - s.ofdm.num_subcarriers // 2
    return s.ofdm.carrier_frequency_hz + n * s.ofdm.subcarrier_spacing_hz


def tx_positions_m(s: Scenario) -> np.ndarray:
    return np.arange(s.array.num_tx) * s.array.tx_spacing_m


def rx_positions_m(s: Scenario) -> np.ndarray:
    return np.arange(s.array.num_rx) * s.array.rx_spacing_m


def tx_steering(theta_rad: float, freq_hz: float, s: Scenario) -> np.ndarray:
    """Unit-modulus transmit array response toward ``theta_rad``."""
    c = s.radio.speed_of_light_m_s
    return np.exp(2j * np.pi * freq_hz * tx_positions_m(s) * np.sin(theta_rad) / c)


def virtual_steering(theta_rad: float, freq_hz: float, s: Scenario) -> np.ndarray:
    """Response of the synthesized ``num_virtual``-element half-wavelength ULA."""
    c = s.radio.speed_of_light_m_s
    m = np.arange(s.array.num_virtual)
    return np.exp(2j * np.pi * freq_hz * m * s.array.virtual_spacing_m * np.sin(theta_rad) / c)


def steering_vectors(n: int, range_m: float, theta_rad: float,
                     s: Scenario) -> tuple[np.ndarray, np.ndarray]:
    """Range-dependent plane-wave steering of both ULAs at subcarrier ``n``.

    Element ``l`` of the transmit vector carries the phase of the one-way
    path ``range_m - l*d_tx*sin(theta)`` at the subcarrier frequency;
    likewise for the receive vector with the sparse spacing.
    """
    c = s.radio.speed_of_light_m_s
    f = s.ofdm.subcarrier_frequency_hz(n)
    a_tx = np.exp(-2j * np.pi * f * (range_m - tx_positions_m(s) * np.sin(theta_rad)) / c)
    a_rx = np.exp(-2j * np.pi * f * (range_m - rx_positions_m(s) * np.sin(theta_rad)) / c)
    return a_tx, a_rx


def target_gain(t: Target, radio: RadioParams, wavelength_m: float) -> complex:
    """Two-way amplitude gain of a point target (radar range equation)."""
    mag = np.sqrt(t.rcs_m2 * radio.rx_gain_linear * wavelength_m ** 2
                  / ((4 * np.pi) ** 3 * t.range_m ** 4))
    return mag * np.exp(1j * t.phase_rad)


def two_way_delays(t: Target, s: Scenario) -> np.ndarray:
    """Exact propagation delays per (rx, tx) antenna pair, in seconds."""
    x_t = t.range_m * np.sin(t.azimuth_rad)
    y_t = t.range_m * np.cos(t.azimuth_rad)
    r_tx = np.hypot(x_t - tx_positions_m(s), y_t)
    r_rx = np.hypot(x_t - rx_positions_m(s), y_t)
    return (r_rx[:, None] + r_tx[None, :]) / s.radio.speed_of_light_m_s


def radar_channel(s: Scenario) -> RadarChannel:
    """Superposition of per-target reflection channels (exact geometry)."""
    n_sc, n_rx, n_tx = s.ofdm.num_subcarriers, s.array.num_rx, s.array.num_tx
    freqs = subcarrier_frequencies(s)
    per_target = np.zeros((len(s.targets), n_sc, n_rx, n_tx), dtype=complex)
    gains = np.zeros(len(s.targets), dtype=complex)
    for p, t in enumerate(s.targets):
        alpha = target_gain(t, s.radio, s.wavelength_m)
        tau = two_way_delays(t, s)
        per_target[p] = alpha * np.exp(-2j * np.pi * freqs[:, None, None] * tau[None, :, :])
        gains[p] = alpha
    matrices = per_target.sum(axis=0) if len(s.targets) else \
        np.zeros((n_sc, n_rx, n_tx), dtype=complex)
    return RadarChannel(matrices=matrices, per_target=per_target, gains=gains)


def plane_wave_radar_channel(s: Scenario) -> RadarChannel:
    """Far-field construction from the steering vectors; imaging-model reference."""
    n_sc, n_rx, n_tx = s.ofdm.num_subcarriers, s.array.num_rx, s.array.num_tx
    per_target = np.zeros((len(s.targets), n_sc, n_rx, n_tx), dtype=complex)
    gains = np.zeros(len(s.targets), dtype=complex)
    for p, t in enumerate(s.targets):
        alpha = target_gain(t, s.radio, s.wavelength_m)
        gains[p] = alpha
        for n in range(n_sc):
            a_tx, a_rx = steering_vectors(n, t.range_m, t.azimuth_rad, s)
            per_target[p, n] = alpha * np.outer(a_rx, a_tx)
    matrices = per_target.sum(axis=0) if len(s.targets) else \
        np.zeros((n_sc, n_rx, n_tx), dtype=complex)
    return RadarChannel(matrices=matrices, per_target=per_target, gains=gains)


def _complex_noise(rng: np.random.Generator, shape, power: float) -> np.ndarray:
    scale = np.sqrt(power / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def propagate_radar(x: SymbolFrame, ch: RadarChannel, noise_power_w: float,
                    rng: np.random.Generator | None = None) -> ReceivedRadarFrame:
    """Per-subcarrier product ``H_n X_n`` plus white circular noise."""
    if x.num_subcarriers != ch.matrices.shape[0] or x.num_streams != ch.matrices.shape[2]:
        raise ValueError("frame and channel dimensions disagree")
    y = np.einsum("nkl,nlm->nkm", ch.matrices, x.symbols)
    if noise_power_w > 0:
        if rng is None:
            raise ValueError("rng required when noise power is nonzero")
        y = y + _complex_noise(rng, y.shape, noise_power_w)
    return ReceivedRadarFrame(samples=y)


def propagate_radar_time_oracle(x: TimeSignal, s: Scenario) -> ReceivedRadarFrame:
    """Noiseless received frame via time-domain delayed synthesis.

    Recovers the per-subcarrier symbols from the sampled transmit
    signal, applies each target's exact pairwise delays to the
    subcarrier expansion, synthesizes the received time samples with a
    unitary inverse DFT, and demodulates them again. Independent
    validation path for :func:`propagate_radar`.
    """
    limits_tau = s.ofdm.cyclic_prefix_s
    n_sc = s.ofdm.num_subcarriers
    symbols = ofdm_demodulate(x)                      # (N_sc, N_tx, N_sym)
    freqs = subcarrier_frequencies(s)
    n_rx, n_sym = s.array.num_rx, symbols.shape[2]
    y_freq = np.zeros((n_sc, n_rx, n_sym), dtype=complex)
    for t in s.targets:
        tau = two_way_delays(t, s)                    # (N_rx, N_tx)
        if tau.max() > limits_tau:
            raise DelayBeyondCyclicPrefixError(
                f"target delay {tau.max():.3e} s exceeds cyclic prefix {limits_tau:.3e} s")
        alpha = target_gain(t, s.radio, s.wavelength_m)
        phase = np.exp(-2j * np.pi * freqs[:, None, None] * tau[None, :, :])
        y_freq += alpha * np.einsum("nkl,nlm->nkm", phase, symbols)
    # down to time samples and back: the oracle's numbers pass through
    # the sampled waveform rather than staying in the subcarrier domain
    spec = np.fft.ifftshift(y_freq, axes=0)
    time = np.sqrt(n_sc) * np.fft.ifft(spec, axis=0)
    back = np.fft.fft(time, axis=0) / np.sqrt(n_sc)
    return ReceivedRadarFrame(samples=np.fft.fftshift(back, axes=0))


def comm_channel(s: Scenario) -> CommChannel:
    """Free-space LOS vectors toward each receiver, per subcarrier."""
    n_sc, n_tx = s.ofdm.num_subcarriers, s.array.num_tx
    freqs = subcarrier_frequencies(s)
    c = s.radio.speed_of_light_m_s
    pos = tx_positions_m(s)
    vectors = np.zeros((len(s.receivers), n_sc, n_tx), dtype=complex)
    noise = np.zeros(len(s.receivers))
    for q, r in enumerate(s.receivers):
        amp = np.sqrt(r.rx_gain_linear) * s.wavelength_m / (4 * np.pi * r.range_m)
        path = r.range_m - pos[None, :] * np.sin(r.azimuth_rad)
        vectors[q] = amp * np.exp(-2j * np.pi * freqs[:, None] * path / c)
        noise[q] = s.comm_noise_power_w(r)
    return CommChannel(vectors=vectors, noise_power_w=noise)


def receive_preamble_and_estimate_csi(pre: SymbolFrame, precoders,
                                      ch: CommChannel,
                                      rng: np.random.Generator | None = None) -> CsiReport:
    """Simulate preamble reception at every receiver and LS-estimate CSI.

    Each receiver observes ``y^T = h^T X_n + w^T`` with
    ``X_n = F_n P_n`` and solves the LS problem for ``h``. With the
    square orthogonal preamble the LS fit is exact, so there are no
    residual degrees of freedom for noise estimation; the report then
    carries the receiver's configured noise power (ideal feedback).

    Parameters
    ----------
    pre : SymbolFrame
        Preamble frame (kind ``"preamble"``).
    precoders : PrecoderSet
        Precoders applied at the transmitter (the sounding identity).
    ch : CommChannel
        True downlink channel used for the simulation.
    rng : numpy.random.Generator, optional
        Required if any receiver has nonzero noise power.
    """
    if pre.kind != "preamble":
        raise ValueError("CSI estimation expects a preamble frame")
    x = np.einsum("nij,njm->nim", precoders.matrices, pre.symbols)   # (N_sc, N_tx, N_sym)
    m_rx, n_sc, n_tx = ch.vectors.shape
    n_sym = x.shape[2]
    dof = n_sym - n_tx
    est = np.zeros_like(ch.vectors)
    noise = ch.noise_power_w.copy()
    for q in range(m_rx):
        y = np.einsum("nl,nlm->nm", ch.vectors[q], x)                # (N_sc, N_sym)
        if ch.noise_power_w[q] > 0:
            if rng is None:
                raise ValueError("rng required when noise power is nonzero")
            y = y + _complex_noise(rng, y.shape, ch.noise_power_w[q])
        for n in range(n_sc):
            gram = x[n] @ x[n].conj().T                              # (N_tx, N_tx)
            est[q, n] = np.linalg.solve(gram.T, x[n].conj() @ y[n])
        if dof > 0:
            resid = y - np.einsum("nl,nlm->nm", est[q], x)
            noise[q] = float(np.mean(np.abs(resid) ** 2) * n_sym / dof)
    return CsiReport(estimates=est, noise_power_w=noise)
