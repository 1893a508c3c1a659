"""
Scenario configuration: system parameters, targets, receivers and all
derived physical constants.

Every other module consumes a validated, immutable :class:`Scenario`.
Configuration files are JSON with human-friendly units (GHz-scale Hz
values, dBm power, dB gains, degrees); internally everything is SI and
radians.

Noise convention: the thermal noise power is computed over the full
signal bandwidth as ``k_B * T * B * 10^(NF_dB/10)`` watts (dBW, not
dBm). With the reference temperature of 290 K this reproduces the
expected total noise power for the default 160 MHz / 15 dB-NF setup
(about -106.93 dBW).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact
BOLTZMANN = 1.380649e-23        # J/K, exact (SI 2019)
REFERENCE_TEMPERATURE_K = 290.0


class ScenarioError(ValueError):
    """Configuration could not be parsed or violates an invariant."""


def _require(cond: bool, invariant: str) -> None:
    if not cond:
        raise ScenarioError(f"invariant violated: {invariant}")


@dataclass(frozen=True)
class OfdmParams:
    """OFDM numerology and image padding factors."""

    carrier_frequency_hz: float
    subcarrier_spacing_hz: float
    num_subcarriers: int
    symbol_duration_s: float          # DFT part, no cyclic prefix
    cyclic_prefix_s: float
    total_symbol_duration_s: float
    num_symbols: int
    pad_factor_range: int = 4
    pad_factor_angle: int = 4

    @property
    def bandwidth_hz(self) -> float:
        return self.num_subcarriers * self.subcarrier_spacing_hz

    @property
    def num_cyclic_prefix_samples(self) -> int:
        return round(self.cyclic_prefix_s * self.bandwidth_hz)

    def subcarrier_frequency_hz(self, n: int) -> float:
        """Absolute frequency of subcarrier ``n`` (0-based row index).

        Subcarriers span the signed index range [-N/2, N/2-1]; row 0 is
        the most negative offset.
        """
        return self.carrier_frequency_hz + (n - self.num_subcarriers // 2) * self.subcarrier_spacing_hz

    def validate(self) -> None:
        _require(self.num_subcarriers > 0 and self.num_subcarriers % 2 == 0,
                 "num_subcarriers must be a positive even integer")
        _require(self.carrier_frequency_hz > 0, "carrier frequency must be positive")
        _require(self.subcarrier_spacing_hz > 0, "subcarrier spacing must be positive")
        _require(abs(self.subcarrier_spacing_hz * self.symbol_duration_s - 1.0) < 1e-9,
                 "subcarrier spacing must equal 1/symbol_duration (orthogonality)")
        _require(abs(self.total_symbol_duration_s
                     - (self.symbol_duration_s + self.cyclic_prefix_s)) < 1e-15,
                 "total symbol duration must equal symbol_duration + cyclic_prefix")
        _require(self.cyclic_prefix_s >= 0, "cyclic prefix duration must be non-negative")
        _require(self.num_symbols > 0, "num_symbols must be positive")
        _require(self.pad_factor_range >= 1 and self.pad_factor_angle >= 1,
                 "pad factors must be integers >= 1")


@dataclass(frozen=True)
class ArrayGeometry:
    """Transmit/receive ULA layout and the synthesized virtual array."""

    num_tx: int
    num_rx: int
    num_virtual: int
    tx_spacing_m: float        # lambda/2 (critical)
    rx_spacing_m: float        # num_tx * lambda/2 (sparse)
    virtual_spacing_m: float   # lambda/2

    def validate(self, wavelength_m: float) -> None:
        _require(self.num_tx >= 1, "num_tx must be >= 1")
        _require(self.num_rx >= 1, "num_rx must be >= 1")
        _require(self.num_virtual == self.num_tx * self.num_rx,
                 "num_virtual must equal num_tx * num_rx")
        _require(abs(self.tx_spacing_m - wavelength_m / 2) < 1e-12,
                 "tx spacing must be lambda/2")
        _require(abs(self.rx_spacing_m - self.num_tx * wavelength_m / 2) < 1e-12,
                 "rx spacing must be num_tx * lambda/2")
        _require(abs(self.virtual_spacing_m - wavelength_m / 2) < 1e-12,
                 "virtual spacing must be lambda/2")


@dataclass(frozen=True)
class RadioParams:
    """Power, gains and noise derived quantities."""

    total_tx_power_w: float
    noise_figure_db: float
    rx_gain_linear: float
    temperature_k: float = REFERENCE_TEMPERATURE_K
    speed_of_light_m_s: float = SPEED_OF_LIGHT

    def noise_power_w(self, bandwidth_hz: float, noise_figure_db: float | None = None) -> float:
        """Thermal noise power over ``bandwidth_hz`` in watts."""
        nf = self.noise_figure_db if noise_figure_db is None else noise_figure_db
        return BOLTZMANN * self.temperature_k * bandwidth_hz * 10.0 ** (nf / 10.0)

    def validate(self) -> None:
        _require(self.total_tx_power_w > 0, "transmit power must be positive")
        _require(self.rx_gain_linear > 0, "receive gain must be positive")
        _require(self.temperature_k > 0, "temperature must be positive")


@dataclass(frozen=True)
class Target:
    """Point scatterer tracked by the radar."""

    range_m: float
    azimuth_rad: float
    rcs_m2: float
    phase_rad: float = 0.0

    def validate(self) -> None:
        _require(self.range_m > 0, "target range must be positive")
        _require(abs(self.azimuth_rad) < math.pi / 2, "target azimuth must be within (-90, 90) deg")
        _require(self.rcs_m2 > 0, "target reflectivity must be positive")


@dataclass(frozen=True)
class CommReceiver:
    """Single-antenna downlink receiver with a minimum-SINR demand."""

    range_m: float
    azimuth_rad: float
    rx_gain_linear: float
    noise_figure_db: float
    min_sinr_linear: float

    def validate(self) -> None:
        _require(self.range_m > 0, "receiver range must be positive")
        _require(abs(self.azimuth_rad) < math.pi / 2, "receiver azimuth must be within (-90, 90) deg")
        _require(self.min_sinr_linear > 0, "receiver minimum SINR must be positive")


@dataclass(frozen=True)
class Scenario:
    """Validated full experiment description.

    Immutable after construction; safe to share across workers. All
    derived quantities are pure functions of the input fields.
    """

    ofdm: OfdmParams
    array: ArrayGeometry
    radio: RadioParams
    targets: tuple[Target, ...]
    receivers: tuple[CommReceiver, ...]
    correlation_limit: float
    rng_seed: int
    source: dict = field(default=None, repr=False, compare=False)

    @property
    def wavelength_m(self) -> float:
        return self.radio.speed_of_light_m_s / self.ofdm.carrier_frequency_hz

    @property
    def radar_noise_power_w(self) -> float:
        return self.radio.noise_power_w(self.ofdm.bandwidth_hz)

    def comm_noise_power_w(self, receiver: CommReceiver) -> float:
        return self.radio.noise_power_w(self.ofdm.bandwidth_hz, receiver.noise_figure_db)

    def validate(self) -> None:
        self.ofdm.validate()
        self.array.validate(self.wavelength_m)
        self.radio.validate()
        for t in self.targets:
            t.validate()
        for r in self.receivers:
            r.validate()
        _require(len(self.receivers) < self.array.num_tx,
                 "number of receivers must be smaller than num_tx")
        _require(self.correlation_limit > 0, "correlation limit must be positive")
        limits = derived_limits(self)
        horizon = min(limits["max_range_m"], limits["max_range_isi_m"])
        for i, t in enumerate(self.targets):
            if t.range_m >= horizon:
                warnings.warn(
                    f"target {i} at {t.range_m:.2f} m lies beyond the unambiguous/ISI-free "
                    f"horizon of {horizon:.2f} m; expect aliasing or inter-symbol interference",
                    stacklevel=2,
                )

    # -- (de)serialization ------------------------------------------------

    @classmethod
    def from_dict(cls, cfg: dict) -> "Scenario":
        try:
            s = _scenario_from_dict(cfg)
        except KeyError as exc:
            raise ScenarioError(f"missing configuration field: {exc}") from exc
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"bad configuration value: {exc}") from exc
        s.validate()
        return s

    def to_dict(self) -> dict:
        """Return the normalized configuration (file units)."""
        return json.loads(json.dumps(self.source))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.to_dict() == other.to_dict()


def _dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)

def _db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def _scenario_from_dict(cfg: dict) -> Scenario:
    ofdm_cfg = cfg["ofdm"]
    n_sc = int(ofdm_cfg["num_subcarriers"])
    t_dft = float(ofdm_cfg["symbol_duration_s"])
    t_cp = float(ofdm_cfg["cyclic_prefix_s"])
    df = float(ofdm_cfg.get("subcarrier_spacing_hz", 1.0 / t_dft))
    array_cfg = cfg["array"]
    n_tx = int(array_cfg["num_tx"])
    n_rx = int(array_cfg["num_rx"])

    radio_cfg = cfg["radio"]
    if "total_tx_power_dbm" in radio_cfg:
        p_tx = _dbm_to_watts(float(radio_cfg["total_tx_power_dbm"]))
    else:
        p_tx = float(radio_cfg["total_tx_power_w"])
    radio = RadioParams(
        total_tx_power_w=p_tx,
        noise_figure_db=float(radio_cfg["noise_figure_db"]),
        rx_gain_linear=_db_to_linear(float(radio_cfg.get("rx_gain_db", 20.0))),
        temperature_k=float(radio_cfg.get("temperature_k", REFERENCE_TEMPERATURE_K)),
    )

    ofdm = OfdmParams(
        carrier_frequency_hz=float(ofdm_cfg["carrier_frequency_hz"]),
        subcarrier_spacing_hz=df,
        num_subcarriers=n_sc,
        symbol_duration_s=t_dft,
        cyclic_prefix_s=t_cp,
        total_symbol_duration_s=t_dft + t_cp,
        num_symbols=int(ofdm_cfg.get("num_symbols", n_tx)),
        pad_factor_range=int(ofdm_cfg.get("pad_factor_range", 4)),
        pad_factor_angle=int(ofdm_cfg.get("pad_factor_angle", 4)),
    )

    lam = SPEED_OF_LIGHT / ofdm.carrier_frequency_hz
    array = ArrayGeometry(
        num_tx=n_tx,
        num_rx=n_rx,
        num_virtual=n_tx * n_rx,
        tx_spacing_m=lam / 2,
        rx_spacing_m=n_tx * lam / 2,
        virtual_spacing_m=lam / 2,
    )

    targets = []
    for i, t in enumerate(cfg.get("targets", [])):
        if "rcs_dbsm" in t:
            rcs = _db_to_linear(float(t["rcs_dbsm"]))
        else:
            rcs = float(t["rcs_m2"])
        targets.append(Target(
            range_m=float(t["range_m"]),
            azimuth_rad=math.radians(float(t["azimuth_deg"])),
            rcs_m2=rcs,
            phase_rad=float(t.get("phase_rad", 0.0)),
        ))

    prec_cfg = cfg.get("precoder", {})
    eta_override = prec_cfg.get("eta_db")
    receivers = []
    for i, r in enumerate(cfg.get("receivers", [])):
        eta_db = float(eta_override if eta_override is not None else r["min_sinr_db"])
        receivers.append(CommReceiver(
            range_m=float(r["range_m"]),
            azimuth_rad=math.radians(float(r["azimuth_deg"])),
            rx_gain_linear=_db_to_linear(float(r.get("rx_gain_db", 20.0))),
            noise_figure_db=float(r.get("noise_figure_db", radio.noise_figure_db)),
            min_sinr_linear=_db_to_linear(eta_db),
        ))

    gamma_cor = float(prec_cfg.get("gamma_cor", 0.02 * p_tx))

    return Scenario(
        ofdm=ofdm,
        array=array,
        radio=radio,
        targets=tuple(targets),
        receivers=tuple(receivers),
        correlation_limit=gamma_cor,
        rng_seed=int(cfg.get("seed", 0)),
        source=json.loads(json.dumps(cfg)),
    )


def load_scenario(path) -> Scenario:
    """Load and validate a scenario from a JSON file.

    Raises
    ------
    ScenarioError
        If the file cannot be parsed or an invariant is violated; the
        message carries the offending field or invariant.
    """
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioError(
            f"cannot parse scenario file {path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
        ) from exc
    return Scenario.from_dict(cfg)


def save_scenario(scenario: Scenario, path) -> None:
    """Write the scenario back out in file units (round-trip stable)."""
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def derived_limits(s: Scenario) -> dict:
    """Resolution and unambiguous-range limits of the configured system.

    Returns a dict with ``range_resolution_m``, ``angle_resolution_rad``,
    ``max_range_m`` (spectral ambiguity limit) and ``max_range_isi_m``
    (cyclic-prefix limit).
    """
    c = s.radio.speed_of_light_m_s
    bw = s.ofdm.bandwidth_hz
    return {
        "range_resolution_m": c / (2.0 * bw),
        "angle_resolution_rad": 2.0 / s.array.num_virtual,
        "max_range_m": s.ofdm.num_subcarriers * c / (2.0 * bw),
        "max_range_isi_m": s.ofdm.cyclic_prefix_s * c / 2.0,
    }
