"""
Frame construction, precoding and OFDM (de)modulation.

Frames are per-subcarrier symbol tensors of shape
``(num_subcarriers, num_tx, num_symbols)``. Subcarrier row ``n`` maps to
the signed index ``n - num_subcarriers//2``. The modulator uses the
unitary transform convention (1/sqrt(N) both ways), so a
modulate/demodulate round trip is the identity and per-entry powers are
identical in time and frequency domain.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


@dataclass(frozen=True)
class SymbolFrame:
    """Per-subcarrier symbol matrix stack, ``symbols[n][stream, symbol]``."""

    symbols: np.ndarray                 # complex (N_sc, N_tx, N_sym)
    kind: str                           # "preamble" | "data"

    @property
    def num_subcarriers(self) -> int:
        return self.symbols.shape[0]

    @property
    def num_streams(self) -> int:
        return self.symbols.shape[1]

    @property
    def num_symbols(self) -> int:
        return self.symbols.shape[2]


@dataclass(frozen=True)
class PrecoderSet:
    """Per-subcarrier precoding matrices, ``matrices[n]`` of shape (N_tx, N_tx)."""

    matrices: np.ndarray                # complex (N_sc, N_tx, N_tx)

    @classmethod
    def scaled_identity(cls, scale: float, num_tx: int, num_subcarriers: int) -> "PrecoderSet":
        m = np.broadcast_to(scale * np.eye(num_tx, dtype=complex),
                            (num_subcarriers, num_tx, num_tx)).copy()
        return cls(matrices=m)

    @classmethod
    def replicated(cls, matrix: np.ndarray, num_subcarriers: int) -> "PrecoderSet":
        return cls(matrices=np.broadcast_to(matrix, (num_subcarriers, *matrix.shape)).copy())

    def per_subcarrier_power(self) -> np.ndarray:
        """tr(F_n F_n^H) per subcarrier."""
        return np.einsum("nij,nij->n", self.matrices, self.matrices.conj()).real


@dataclass(frozen=True)
class TimeSignal:
    """Sampled baseband transmit signal, one row per antenna, CP included."""

    samples: np.ndarray                 # complex (N_tx, N_sym * (N_cp + N_sc))
    sample_rate_hz: float
    num_cyclic_prefix: int
    num_subcarriers: int

    @property
    def samples_per_symbol(self) -> int:
        return self.num_cyclic_prefix + self.num_subcarriers


def hadamard_matrix(order: int) -> np.ndarray:
    """Sylvester-Hadamard matrix of the given power-of-two order."""
    if order & (order - 1):
        raise ValueError("Hadamard order must be a power of two")
    h = np.ones((1, 1))
    while h.shape[0] < order:
        h = np.block([[h, h], [h, -h]])
    return h


def mapping_matrix(num_tx: int) -> np.ndarray:
    """Orthogonal preamble mapping with ``P P^H = num_tx * I``.

    Sylvester-Hadamard when ``num_tx`` is a power of two, otherwise the
    DFT matrix scaled to the same orthogonality constant.
    """
    if num_tx == 1:
        return np.ones((1, 1), dtype=complex)
    if num_tx & (num_tx - 1) == 0:
        return hadamard_matrix(num_tx).astype(complex)
    k = np.arange(num_tx)
    return np.exp(-2j * np.pi * np.outer(k, k) / num_tx)


def make_preamble(s: Scenario) -> tuple[SymbolFrame, PrecoderSet]:
    """Orthogonal sounding preamble and its omnidirectional precoder.

    The frame uses ``num_symbols = num_tx`` mapping columns and the
    precoder is ``sqrt(P_tx / num_tx) * I``, which radiates the total
    power equally from all antennas.
    """
    n_tx = s.array.num_tx
    p = mapping_matrix(n_tx)
    symbols = np.broadcast_to(p, (s.ofdm.num_subcarriers, n_tx, n_tx)).copy()
    scale = np.sqrt(s.radio.total_tx_power_w / n_tx)
    precoders = PrecoderSet.scaled_identity(scale, n_tx, s.ofdm.num_subcarriers)
    return SymbolFrame(symbols=symbols, kind="preamble"), precoders


def make_data_frame(s: Scenario, rng: np.random.Generator) -> SymbolFrame:
    """Random QPSK payload/radar streams on all ``num_tx`` streams."""
    shape = (s.ofdm.num_subcarriers, s.array.num_tx, s.ofdm.num_symbols)
    bits = rng.integers(0, 4, size=shape)
    symbols = np.exp(1j * (np.pi / 4 + np.pi / 2 * bits))
    return SymbolFrame(symbols=symbols, kind="data")


def precode(frame: SymbolFrame, precoders: PrecoderSet) -> SymbolFrame:
    """Apply ``F_n`` to every symbol column: ``X_n = F_n S_n``."""
    if precoders.matrices.shape[0] != frame.num_subcarriers \
            or precoders.matrices.shape[2] != frame.num_streams:
        raise ValueError(
            f"precoder shape {precoders.matrices.shape} does not match "
            f"frame shape {frame.symbols.shape}")
    out = np.einsum("nij,njm->nim", precoders.matrices, frame.symbols)
    return SymbolFrame(symbols=out, kind=frame.kind)


def ofdm_modulate(frame: SymbolFrame, precoders: PrecoderSet | None, s: Scenario) -> TimeSignal:
    """Synthesize the sampled baseband signal at critical rate B.

    Per antenna and symbol the subcarrier vector (signed indexing) is
    transformed with a unitary inverse DFT and a cyclic prefix of
    ``round(T_cp * B)`` samples is prepended.
    """
    x = precode(frame, precoders) if precoders is not None else frame
    n_sc = s.ofdm.num_subcarriers
    n_cp = s.ofdm.num_cyclic_prefix_samples
    # rows are ordered from the most negative subcarrier: undo the shift
    # so numpy's ifft sees standard (DC-first) ordering
    spec = np.fft.ifftshift(x.symbols, axes=0)
    body = np.sqrt(n_sc) * np.fft.ifft(spec, axis=0)        # (N_sc, N_tx, N_sym)
    with_cp = np.concatenate([body[n_sc - n_cp:], body], axis=0) if n_cp else body
    samples = with_cp.transpose(1, 2, 0).reshape(s.array.num_tx, -1)
    return TimeSignal(samples=samples, sample_rate_hz=s.ofdm.bandwidth_hz,
                      num_cyclic_prefix=n_cp, num_subcarriers=n_sc)


def ofdm_demodulate(signal: TimeSignal) -> np.ndarray:
    """Recover the per-subcarrier symbols from a sampled signal.

    Inverse of :func:`ofdm_modulate`: strips the cyclic prefix and
    applies the unitary forward DFT per symbol. Returns an array of
    shape ``(N_sc, n_rows, N_sym)`` in signed-subcarrier row order.
    """
    n_sc, n_cp = signal.num_subcarriers, signal.num_cyclic_prefix
    n_rows = signal.samples.shape[0]
    sym = signal.samples.reshape(n_rows, -1, n_cp + n_sc)[:, :, n_cp:]
    spec = np.fft.fft(sym, axis=2) / np.sqrt(n_sc)
    return np.fft.fftshift(spec, axes=2).transpose(2, 0, 1)
