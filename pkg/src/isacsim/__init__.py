"""
MIMO-OFDM joint radar-communication simulation toolkit.

Subpackages cover the full pipeline: scenario configuration, frame
generation and OFDM modulation, radar/communication channel simulation,
virtual-array range-angle imaging, closed-form performance metrics, and
SINR-constrained max-min precoder design on an in-house SDP solver.
"""

from .scenario import (Scenario, OfdmParams, ArrayGeometry, RadioParams, Target,
                       CommReceiver, ScenarioError, load_scenario, save_scenario,
                       derived_limits, SPEED_OF_LIGHT)
from .waveform import (SymbolFrame, PrecoderSet, TimeSignal, make_preamble,
                       make_data_frame, precode, ofdm_modulate, ofdm_demodulate)
from .channel import (RadarChannel, CommChannel, CsiReport, ReceivedRadarFrame,
                      target_gain, steering_vectors, tx_steering, virtual_steering,
                      radar_channel, propagate_radar, propagate_radar_time_oracle,
                      comm_channel, receive_preamble_and_estimate_csi)
from .imaging import (RadarObservation, RangeAngleImage, Detection,
                      estimate_radar_channel, build_observation, decouple,
                      form_image, detect_peaks, refine_and_estimate)
from .metrics import (CrlbReport, SinrReport, directed_power, radar_snr, crlb,
                      achieved_sinr)
from .sdp import SdpProblem, SdpSolution, solve_sdp
from .precoder import (PrecoderProblem, BeamformerSolution, compute_weights,
                       assemble_sdp, extract_rank_one, design,
                       InfeasibleDesignError)

__version__ = "0.1.0"
