"""
Range-angle imaging from received MIMO-OFDM radar frames.

Pipeline: per-subcarrier channel estimation (LS for orthogonal frames,
whitened for precoded ones), virtual-array observation assembly,
frequency-space decoupling by per-row resampling, windowed zero-padded
2D transforms, peak detection and parabolic refinement.

Transform conventions: the range axis uses the positive-exponent
(inverse) DFT, so range bin ``r`` maps to ``r * c / (2 * D_sc * df)``;
the angle axis uses the forward DFT with the zero frequency shifted to
the center, so shifted bin ``t`` maps to ``arcsin(2 t / D_virt)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .scenario import Scenario
from .waveform import SymbolFrame
from .channel import ReceivedRadarFrame

_WINDOWS = {
    "rect": lambda n: np.ones(n),
    "hamming": np.hamming,
    "hann": np.hanning,
    "blackman": np.blackman,
}


class GramConditionError(RuntimeError):
    """The symbol Gram matrix is too ill-conditioned for the LS estimator."""


class PeakOnBorderError(RuntimeError):
    """A detected peak sits on the image border and cannot be refined."""


def window_taps(name: str, length: int) -> np.ndarray:
    try:
        return _WINDOWS[name](length)
    except KeyError:
        raise ValueError(f"unknown window {name!r}; choose from {sorted(_WINDOWS)}") from None


@dataclass(frozen=True)
class RadarObservation:
    """Stacked virtual-array rows, one per subcarrier (tx index fastest)."""

    matrix: np.ndarray              # complex (N_sc, N_virt)
    decoupled: bool
    mode: str = "ls"                # "ls" | "whitened"
    tx_shaping: np.ndarray | None = None   # (N_tx, N_tx) sqrt-Gram, whitened mode


@dataclass(frozen=True)
class RangeAngleImage:
    """Complex range-angle spectrum with physical axes."""

    omega: np.ndarray               # complex (D_sc, D_virt), angle axis centered
    range_axis_m: np.ndarray        # (D_sc,)
    sin_axis: np.ndarray            # (D_virt,) sin(angle) grid
    window: str
    window_sum_range: float         # sum of range-axis window taps
    window_sum_angle: float         # sum of angle-axis window taps
    base_frequency_hz: float        # lowest subcarrier frequency (phase reference)
    speed_of_light_m_s: float
    mode: str = "ls"
    tx_shaping: np.ndarray | None = None

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.omega)

    @property
    def angle_axis_rad(self) -> np.ndarray:
        return np.arcsin(np.clip(self.sin_axis, -1.0, 1.0))


@dataclass(frozen=True)
class Detection:
    """Refined point-target estimate extracted from an image peak."""

    range_m: float
    azimuth_rad: float
    gain_estimate: complex
    peak_magnitude: float
    peak_indices: tuple[int, int]


def estimate_radar_channel(y: ReceivedRadarFrame, x: SymbolFrame,
                           mode: str | None = None,
                           condition_limit: float = 1e8) -> np.ndarray:
    """Per-subcarrier MIMO channel estimates from known transmit symbols.

    Orthogonal (preamble) frames use the plain LS estimator
    ``Y X^H (X X^H)^-1``. Precoded data frames use the whitened variant
    ``Y X^H (X X^H)^-1/2`` so that the estimation noise stays white;
    beamformed precoders make the Gram rank-deficient by design, so the
    inverse square root is taken on the dominant eigenspace.

    Returns an array of shape ``(N_sc, N_rx, N_tx)``.
    """
    if mode is None:
        mode = "ls" if x.kind == "preamble" else "whitened"
    if mode not in ("ls", "whitened"):
        raise ValueError(f"unknown estimator mode {mode!r}")
    n_sc = x.num_subcarriers
    out = np.zeros((n_sc, y.samples.shape[1], x.num_streams), dtype=complex)
    for n in range(n_sc):
        xn = x.symbols[n]
        gram = xn @ xn.conj().T
        if mode == "ls":
            cond = np.linalg.cond(gram)
            if not np.isfinite(cond) or cond > condition_limit:
                raise GramConditionError(
                    f"symbol Gram matrix at subcarrier {n} has condition number "
                    f"{cond:.3e} (limit {condition_limit:.1e}); LS estimation "
                    "requires orthogonal transmission")
            out[n] = np.linalg.solve(gram.T, (y.samples[n] @ xn.conj().T).T).T
        else:
            w, v = np.linalg.eigh(gram)
            keep = w > max(w[-1], 0.0) * 1e-12
            inv_sqrt = (v[:, keep] / np.sqrt(w[keep])) @ v[:, keep].conj().T
            out[n] = y.samples[n] @ xn.conj().T @ inv_sqrt
    return out


def whitening_shape(x: SymbolFrame, subcarrier: int) -> np.ndarray:
    """Positive square root of the symbol Gram at one subcarrier.

    This is the matrix the whitened estimator leaves multiplied onto the
    true channel; peak-gain calibration divides it back out.
    """
    xn = x.symbols[subcarrier]
    gram = xn @ xn.conj().T
    w, v = np.linalg.eigh(gram)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def build_observation(h_hat: np.ndarray, mode: str = "ls",
                      tx_shaping: np.ndarray | None = None) -> RadarObservation:
    """Stack per-subcarrier estimates into the observation matrix.

    Row ``n`` is ``vec(H_n)`` with the transmit index varying fastest,
    matching the virtual-array ordering ``kron(a_rx, a_tx)``.
    """
    n_sc, n_rx, n_tx = h_hat.shape
    return RadarObservation(matrix=h_hat.reshape(n_sc, n_rx * n_tx).copy(),
                            decoupled=False, mode=mode, tx_shaping=tx_shaping)


def _sinc_taps(frac: np.ndarray, half_width: int = 4, beta: float = 8.0) -> np.ndarray:
    """Kaiser-windowed sinc weights for offsets ``frac`` (last axis taps)."""
    arg = 1.0 - (frac / half_width) ** 2
    w = np.i0(beta * np.sqrt(np.clip(arg, 0.0, None))) / np.i0(beta)
    w = np.where(np.abs(frac) <= half_width, w, 0.0)
    return np.sinc(frac) * w


def decouple(obs: RadarObservation, s: Scenario,
             interpolator: str = "sinc8") -> RadarObservation:
    """Remove the frequency-space coupling by per-row spatial resampling.

    Row ``n`` (signed offset ``n'``) is resampled at positions
    ``m * f_c / (f_c + n' * df)``, which aligns the spatial phase slope
    of every subcarrier to the carrier-frequency response. Samples
    falling outside the aperture are extrapolated by the same kernel
    with the in-range taps renormalized.
    """
    if obs.decoupled:
        raise ValueError("observation is already decoupled")
    n_sc, n_virt = obs.matrix.shape
    fc = s.ofdm.carrier_frequency_hz
    df = s.ofdm.subcarrier_spacing_hz
    n_signed = np.arange(n_sc) - n_sc // 2
    scale = fc / (fc + n_signed * df)                       # (N_sc,)
    positions = scale[:, None] * np.arange(n_virt)[None, :]  # (N_sc, N_virt)
    if interpolator == "sinc8":
        base = np.floor(positions).astype(int)
        taps = np.arange(-3, 5)                              # 8 taps
        idx = base[:, :, None] + taps[None, None, :]
        frac = positions[:, :, None] - idx
        weights = _sinc_taps(frac)
        valid = (idx >= 0) & (idx < n_virt)
        weights = np.where(valid, weights, 0.0)
        weights = weights / weights.sum(axis=2, keepdims=True)
        idx = np.clip(idx, 0, n_virt - 1)
        rows = np.take_along_axis(obs.matrix[:, None, :].repeat(n_virt, axis=1),
                                  idx, axis=2)
        out = (weights * rows).sum(axis=2)
    elif interpolator == "spline":
        from scipy.interpolate import CubicSpline
        out = np.empty_like(obs.matrix)
        grid = np.arange(n_virt)
        for n in range(n_sc):
            out[n] = CubicSpline(grid, obs.matrix[n], extrapolate=True)(positions[n])
    else:
        raise ValueError(f"unknown interpolator {interpolator!r}")
    return replace(obs, matrix=out, decoupled=True)


def form_image(obs: RadarObservation, s: Scenario, window: str = "hamming",
               pad_range: int | None = None, pad_angle: int | None = None,
               interpolator: str = "sinc8") -> RangeAngleImage:
    """Windowed, zero-padded 2D spectrum of the (decoupled) observation.

    Applies decoupling first when the observation still carries the
    coupling term. The range axis is transformed with the
    positive-exponent DFT of length ``pad_range * N_sc`` and the angle
    axis with the forward DFT of length ``pad_angle * N_virt``, centered
    with the zero frequency in the middle.
    """
    if not obs.decoupled:
        obs = decouple(obs, s, interpolator=interpolator)
    n_sc, n_virt = obs.matrix.shape
    d_sc = (pad_range if pad_range is not None else s.ofdm.pad_factor_range) * n_sc
    d_virt = (pad_angle if pad_angle is not None else s.ofdm.pad_factor_angle) * n_virt
    w_r = window_taps(window, n_sc)
    w_a = window_taps(window, n_virt)
    data = obs.matrix * w_r[:, None] * w_a[None, :]
    omega_prime = d_sc * np.fft.ifft(data, n=d_sc, axis=0)
    omega = np.fft.fftshift(np.fft.fft(omega_prime, n=d_virt, axis=1), axes=1)
    c = s.radio.speed_of_light_m_s
    range_axis = np.arange(d_sc) * c / (2.0 * d_sc * s.ofdm.subcarrier_spacing_hz)
    sin_axis = 2.0 * (np.arange(d_virt) - d_virt // 2) / d_virt
    return RangeAngleImage(
        omega=omega, range_axis_m=range_axis, sin_axis=sin_axis,
        window=window, window_sum_range=float(w_r.sum()),
        window_sum_angle=float(w_a.sum()),
        base_frequency_hz=s.ofdm.subcarrier_frequency_hz(0),
        speed_of_light_m_s=c, mode=obs.mode, tx_shaping=obs.tx_shaping)


def noise_floor(img: RangeAngleImage) -> float:
    """RMS magnitude of the noise background (median-based, Rayleigh model)."""
    med = float(np.median(img.magnitude))
    return med / np.sqrt(np.log(2.0))


def detect_peaks(img: RangeAngleImage, max_detections: int = 10,
                 dynamic_range_db: float = 25.0,
                 floor_margin_db: float = 12.0) -> list[tuple[int, int]]:
    """Local maxima of the image magnitude above adaptive thresholds.

    A pixel is kept when it dominates its 8-neighborhood, sits within
    ``dynamic_range_db`` of the global peak and exceeds the estimated
    noise floor by ``floor_margin_db``. Returns at most
    ``max_detections`` index pairs sorted by descending magnitude.
    """
    mag = img.magnitude
    if mag.size == 0:
        raise ValueError("empty image")
    peak = float(mag.max())
    if peak == 0.0:
        return []
    thresh = max(peak * 10.0 ** (-dynamic_range_db / 20.0),
                 noise_floor(img) * 10.0 ** (floor_margin_db / 20.0))
    from scipy.ndimage import maximum_filter
    local_max = (mag == maximum_filter(mag, size=3, mode="nearest")) & (mag >= thresh)
    rr, tt = np.nonzero(local_max)
    order = np.argsort(mag[rr, tt])[::-1]
    out = []
    taken = np.zeros(mag.shape, dtype=bool)
    for i in order[: 4 * max_detections]:
        r, t = int(rr[i]), int(tt[i])
        if taken[max(r - 1, 0):r + 2, max(t - 1, 0):t + 2].any():
            continue  # plateau duplicate of an already-kept peak
        taken[r, t] = True
        out.append((r, t))
        if len(out) == max_detections:
            break
    return out


def _parabolic_offset(la: float, lb: float, lg: float) -> tuple[float, float]:
    """Vertex offset and value correction of a 3-point log-domain parabola."""
    denom = la - 2.0 * lb + lg
    if denom >= 0.0:
        return 0.0, 0.0
    delta = 0.5 * (la - lg) / denom
    corr = -0.125 * (la - lg) * delta
    return float(np.clip(delta, -0.5, 0.5)), float(corr)


def refine_and_estimate(img: RangeAngleImage, peaks: list[tuple[int, int]],
                        num_tx: int | None = None) -> list[Detection]:
    """Sub-bin parameter estimates at the given peak indices.

    Fits a parabola to the log magnitude along both axes, maps the
    fractional bins to range/angle, and calibrates the complex gain by
    the window sums (plus the whitening shape for precoded images, in
    which case ``num_tx`` must be provided).
    """
    mag = img.magnitude
    d_sc, d_virt = mag.shape
    dets = []
    for (r, t) in peaks:
        if r <= 0 or r >= d_sc - 1 or t <= 0 or t >= d_virt - 1:
            raise PeakOnBorderError(f"peak at ({r}, {t}) touches the image border")
        with np.errstate(divide="ignore"):
            lr = np.log(mag[r - 1:r + 2, t])
            lt = np.log(mag[r, t - 1:t + 2])
        dr, cr = _parabolic_offset(lr[0], lr[1], lr[2])
        dt, ct = _parabolic_offset(lt[0], lt[1], lt[2])
        range_m = (r + dr) * img.range_axis_m[1] if d_sc > 1 else 0.0
        sin_theta = 2.0 * (t + dt - d_virt // 2) / d_virt
        azimuth = float(np.arcsin(np.clip(sin_theta, -1.0, 1.0)))
        peak_mag = float(mag[r, t] * np.exp(cr + ct))
        amp = peak_mag / (img.window_sum_range * img.window_sum_angle)
        if img.mode == "whitened" and img.tx_shaping is not None:
            if num_tx is None:
                num_tx = img.tx_shaping.shape[0]
            m = np.arange(num_tx)
            u = np.exp(1j * np.pi * m * sin_theta)   # half-wavelength tx array
            shaped = np.real(u.conj() @ img.tx_shaping @ u)
            amp *= num_tx / max(shaped, 1e-300)
        phase_ref = np.exp(2j * np.pi * img.base_frequency_hz
                           * 2.0 * range_m / img.speed_of_light_m_s)
        gain = amp * np.exp(1j * np.angle(img.omega[r, t])) * phase_ref
        dets.append(Detection(range_m=float(range_m), azimuth_rad=azimuth,
                              gain_estimate=complex(gain), peak_magnitude=peak_mag,
                              peak_indices=(r, t)))
    return dets


# -- image export --------------------------------------------------------


def export_image_csv(img: RangeAngleImage, path) -> None:
    """dB-magnitude matrix with angle (deg) header row and range (m) column."""
    mag = img.magnitude
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    db[~np.isfinite(db)] = -400.0
    angles_deg = np.degrees(img.angle_axis_rad)
    with open(path, "w") as fh:
        fh.write("range_m\\angle_deg," + ",".join(f"{a:.6f}" for a in angles_deg) + "\n")
        for i, r in enumerate(img.range_axis_m):
            fh.write(f"{r:.6f}," + ",".join(f"{v:.4f}" for v in db[i]) + "\n")


def export_image_pgm(img: RangeAngleImage, path, dynamic_range_db: float = 40.0) -> None:
    """8-bit binary graymap scaled over ``dynamic_range_db`` below the peak.

    A sidecar ``<path>.axes.txt`` records the physical axes. Image rows
    run from range bin 0 (top) downward; columns sweep the angle axis.
    """
    mag = img.magnitude
    peak = mag.max()
    if peak == 0:
        scaled = np.zeros_like(mag)
    else:
        with np.errstate(divide="ignore"):
            db = 20.0 * np.log10(mag / peak)
        scaled = np.clip(1.0 + db / dynamic_range_db, 0.0, 1.0)
    pixels = np.round(255.0 * scaled).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())
    with open(f"{path}.axes.txt", "w") as fh:
        fh.write(f"rows: range bins 0..{pixels.shape[0]-1}, "
                 f"step {img.range_axis_m[1] if len(img.range_axis_m) > 1 else 0.0:.6f} m\n")
        fh.write(f"cols: angle bins, sin(theta) from {img.sin_axis[0]:.6f} "
                 f"step {img.sin_axis[1]-img.sin_axis[0]:.6f}\n")
        fh.write(f"dynamic_range_db: {dynamic_range_db}\n")
