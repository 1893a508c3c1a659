"""
Command-line pipeline driver.

Commands:

* ``ndp``     sounding-frame imaging pass: omnidirectional preamble,
              reflection simulation, channel estimation, range-angle
              image, detections and downlink CSI.
* ``design``  max-min precoder design from a previous ndp output.
* ``run``     full chain: ndp, design, precoded transmission, whitened
              re-imaging and all performance metrics.
* ``sweep``   SINR-floor sweep producing the radar/communication
              trade-off table with an omnidirectional baseline row.

Every command writes its artifacts into one output directory and a
``manifest.json`` listing the files with checksums. Outputs are
deterministic for a fixed seed. Exit codes: 0 ok, 2 configuration
error, 3 infeasible design, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .scenario import Scenario, ScenarioError, load_scenario, derived_limits
from .waveform import make_preamble, make_data_frame, precode, PrecoderSet
from .channel import (radar_channel, propagate_radar, comm_channel,
                      receive_preamble_and_estimate_csi, CsiReport, tx_steering,
                      target_gain)
from .imaging import (estimate_radar_channel, build_observation, form_image,
                      detect_peaks, refine_and_estimate, export_image_csv,
                      export_image_pgm, whitening_shape, GramConditionError,
                      Detection, RangeAngleImage)
from .metrics import crlb, achieved_sinr, directed_power
from .precoder import (PrecoderProblem, design, compute_weights,
                       transmit_pattern, InfeasibleDesignError,
                       PrecoderNumericsError)
from .ioutil import write_complex, read_complex, sha256_of


def _rng_for(s: Scenario, seed, salt: int) -> np.random.Generator:
    base = s.rng_seed if seed is None else int(seed)
    return np.random.default_rng([base, salt])


def _write_detections_csv(path, detections: list[Detection]) -> None:
    with open(path, "w") as fh:
        fh.write("range_m,azimuth_deg,gain_abs,gain_phase_rad,peak_magnitude,"
                 "range_bin,angle_bin\n")
        for d in detections:
            fh.write(f"{d.range_m:.9e},{np.degrees(d.azimuth_rad):.9e},"
                     f"{abs(d.gain_estimate):.9e},{np.angle(d.gain_estimate):.9e},"
                     f"{d.peak_magnitude:.9e},{d.peak_indices[0]},{d.peak_indices[1]}\n")


def _read_detections_csv(path) -> list[Detection]:
    dets = []
    with open(path) as fh:
        next(fh)
        for line in fh:
            r, az, ga, gp, pm, rb, tb = line.strip().split(",")
            dets.append(Detection(
                range_m=float(r), azimuth_rad=np.radians(float(az)),
                gain_estimate=float(ga) * np.exp(1j * float(gp)),
                peak_magnitude=float(pm), peak_indices=(int(rb), int(tb))))
    return dets


def _write_csi(out: Path, csi: CsiReport, stem: str = "csi") -> list[Path]:
    bin_path = out / f"{stem}.cpx"
    meta_path = out / f"{stem}.json"
    write_complex(bin_path, csi.estimates, kind="csi")
    with open(meta_path, "w") as fh:
        json.dump({"noise_power_w": list(map(float, csi.noise_power_w))},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [bin_path, meta_path]


def _read_csi(out: Path, stem: str = "csi") -> CsiReport:
    est, kind = read_complex(out / f"{stem}.cpx")
    if kind != "csi":
        raise ScenarioError(f"{out}/{stem}.cpx holds {kind!r}, expected csi")
    with open(out / f"{stem}.json") as fh:
        meta = json.load(fh)
    return CsiReport(estimates=est, noise_power_w=np.asarray(meta["noise_power_w"]))


def _write_image(out: Path, img: RangeAngleImage, stem: str) -> list[Path]:
    csv_path = out / f"{stem}.csv"
    pgm_path = out / f"{stem}.pgm"
    export_image_csv(img, csv_path)
    export_image_pgm(img, pgm_path)
    return [csv_path, pgm_path, Path(f"{pgm_path}.axes.txt")]


def estimate_receiver_angles(csi: CsiReport, s: Scenario) -> np.ndarray:
    """Direction of each receiver from its CSI vector (LOS steering match)."""
    n_center = s.ofdm.num_subcarriers // 2
    freq = s.ofdm.subcarrier_frequency_hz(n_center)
    grid = np.radians(np.arange(-89.9, 89.95, 0.1))
    steer = np.array([tx_steering(t, freq, s) for t in grid])   # (G, N_tx)
    out = np.zeros(csi.estimates.shape[0])
    for q in range(len(out)):
        h = csi.estimates[q, n_center]
        out[q] = grid[np.argmax(np.abs(steer.conj() @ h))]
    return out


def build_angle_set(target_angles: np.ndarray, receiver_angles: np.ndarray,
                    merge_tol_rad: float = np.radians(2.0)) -> np.ndarray:
    """Directions of interest: targets plus receivers, near-duplicates merged."""
    angles = list(target_angles)
    for a in receiver_angles:
        if all(abs(a - b) > merge_tol_rad for b in angles):
            angles.append(a)
    return np.array(sorted(angles))


def ndp_pass(s: Scenario, seed=None, window: str = "hamming",
             pad: int | None = None):
    """Shared sounding pass: returns (image, detections, csi)."""
    pre, fpre = make_preamble(s)
    x = precode(pre, fpre)
    ch = radar_channel(s)
    rng = _rng_for(s, seed, salt=1)
    y = propagate_radar(x, ch, s.radar_noise_power_w, rng)
    h_hat = estimate_radar_channel(y, x)
    img = form_image(build_observation(h_hat), s, window=window,
                     pad_range=pad, pad_angle=pad)
    peaks = detect_peaks(img)
    detections = refine_and_estimate(img, peaks)
    csi = None
    if s.receivers:
        cch = comm_channel(s)
        csi = receive_preamble_and_estimate_csi(pre, fpre, cch,
                                                _rng_for(s, seed, salt=2))
    return img, detections, csi


def cmd_ndp(s: Scenario, out: Path, args) -> list[Path]:
    img, detections, csi = ndp_pass(s, args.seed, args.window, args.pad)
    files = _write_image(out, img, "ndp_image")
    det_path = out / "detections.csv"
    _write_detections_csv(det_path, detections)
    files.append(det_path)
    if csi is not None:
        files += _write_csi(out, csi)
    print(f"ndp: {len(detections)} detections")
    for d in detections:
        print(f"  range {d.range_m:7.3f} m   azimuth {np.degrees(d.azimuth_rad):+8.3f} deg"
              f"   gain {abs(d.gain_estimate):.3e}")
    return files


def _problem_from_artifacts(s: Scenario, csi: CsiReport,
                            detections: list[Detection], eta_db,
                            policy: str) -> PrecoderProblem:
    if not detections:
        raise ScenarioError("no detections available for precoder design")
    gains = np.array([d.gain_estimate for d in detections])
    ranges = np.array([d.range_m for d in detections])
    angles = np.array([d.azimuth_rad for d in detections])
    if eta_db is None:
        floors = np.array([r.min_sinr_linear for r in s.receivers])
    else:
        etas = np.broadcast_to(np.atleast_1d(np.asarray(eta_db, dtype=float)),
                               (len(s.receivers),))
        floors = 10.0 ** (etas / 10.0)
    rx_angles = estimate_receiver_angles(csi, s) if len(s.receivers) else np.zeros(0)
    return PrecoderProblem(
        csi=csi, target_gains=gains, target_ranges_m=ranges,
        target_angles_rad=angles, sinr_floor_linear=floors,
        power_budget_w=s.radio.total_tx_power_w,
        correlation_limit=s.correlation_limit,
        angle_set_rad=build_angle_set(angles, rx_angles),
        subcarrier_policy=policy)


def _write_design(out: Path, sol, s: Scenario, stem: str = "beamformers") -> list[Path]:
    files = []
    bf_path = out / f"{stem}.cpx"
    write_complex(bf_path, sol.precoders.matrices, kind="precoders")
    files.append(bf_path)
    rep_path = out / "verification.json"
    report = dict(sol.verification)
    report["solver"] = sol.solver_stats
    report["rank_one_gap"] = sol.rank_one_gap.tolist()
    report["designed_subcarriers"] = list(map(int, sol.designed_subcarriers))
    with open(rep_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    files.append(rep_path)
    ang, power = transmit_pattern(sol.precoders, s)
    bp_path = out / "beampattern.csv"
    with open(bp_path, "w") as fh:
        fh.write("angle_deg,power_w\n")
        for a, pw in zip(ang, power):
            fh.write(f"{np.degrees(a):.4f},{pw:.9e}\n")
    files.append(bp_path)
    return files


def cmd_design(s: Scenario, out: Path, args) -> list[Path]:
    ndp_dir = Path(args.ndp) if args.ndp else out
    csi = _read_csi(ndp_dir)
    detections = _read_detections_csv(ndp_dir / "detections.csv")
    problem = _problem_from_artifacts(s, csi, detections, args.eta, args.policy)
    sol = design(problem, s)
    files = _write_design(out, sol, s)
    v = sol.verification
    print(f"design: max power {v['max_power_w']:.6f} W, "
          f"min SINR {v.get('sinr_min_db')} dB, "
          f"max correlation {v['max_offdiag_correlation']:.4f}")
    return files


def cmd_run(s: Scenario, out: Path, args) -> list[Path]:
    img, detections, csi = ndp_pass(s, args.seed, args.window, args.pad)
    files = _write_image(out, img, "ndp_image")
    det_path = out / "detections.csv"
    _write_detections_csv(det_path, detections)
    files.append(det_path)
    if csi is not None:
        files += _write_csi(out, csi)

    problem = _problem_from_artifacts(s, csi, detections, args.eta, args.policy)
    sol = design(problem, s)
    files += _write_design(out, sol, s)

    # precoded data transmission, whitened re-imaging
    rng = _rng_for(s, args.seed, salt=3)
    data = make_data_frame(s, rng)
    x = precode(data, sol.precoders)
    ch = radar_channel(s)
    y = propagate_radar(x, ch, s.radar_noise_power_w, _rng_for(s, args.seed, salt=4))
    h_hat = estimate_radar_channel(y, x)
    shaping = whitening_shape(x, s.ofdm.num_subcarriers // 2)
    obs = build_observation(h_hat, mode="whitened", tx_shaping=shaping)
    img2 = form_image(obs, s, window=args.window, pad_range=args.pad,
                      pad_angle=args.pad)
    peaks2 = detect_peaks(img2)
    det2 = refine_and_estimate(img2, peaks2)
    files += _write_image(out, img2, "precoded_image")
    det2_path = out / "precoded_detections.csv"
    _write_detections_csv(det2_path, det2)
    files.append(det2_path)

    # metrics: per-target bounds under the designed precoder and the
    # omnidirectional baseline, plus achieved SINRs
    omni = PrecoderSet.scaled_identity(
        np.sqrt(s.radio.total_tx_power_w / s.array.num_tx),
        s.array.num_tx, s.ofdm.num_subcarriers)
    met_path = out / "metrics.csv"
    with open(met_path, "w") as fh:
        fh.write("target,range_m,azimuth_deg,gain_abs,snr_db,directed_power_w,"
                 "var_range_m2,var_angle_rad2,positioning_accuracy,"
                 "positioning_accuracy_omni\n")
        for i, d in enumerate(detections):
            rep = crlb(d.gain_estimate, d.range_m, d.azimuth_rad, sol.precoders, s)
            rep0 = crlb(d.gain_estimate, d.range_m, d.azimuth_rad, omni, s)
            fh.write(f"{i},{d.range_m:.9e},{np.degrees(d.azimuth_rad):.9e},"
                     f"{abs(d.gain_estimate):.9e},"
                     f"{10*np.log10(rep.snr_linear):.6f},{rep.directed_power_w:.9e},"
                     f"{rep.var_range_m2:.9e},{rep.var_angle_rad2:.9e},"
                     f"{rep.positioning_accuracy:.9e},{rep0.positioning_accuracy:.9e}\n")
    files.append(met_path)
    if csi is not None:
        sinr = achieved_sinr(sol.precoders, csi)
        sinr_path = out / "sinr.csv"
        with open(sinr_path, "w") as fh:
            fh.write("receiver,min_db,mean_db\n")
            for q in range(len(s.receivers)):
                fh.write(f"{q},{10*np.log10(sinr.minimum[q]):.6f},"
                         f"{10*np.log10(sinr.mean[q]):.6f}\n")
        files.append(sinr_path)
    print(f"run: ndp {len(detections)} detections, precoded {len(det2)} detections")
    return files


def cmd_sweep(s: Scenario, out: Path, args) -> list[Path]:
    if args.eta is None:
        etas = list(np.arange(10.0, 30.0 + 0.5, 1.0))
    else:
        etas = list(np.atleast_1d(np.asarray(args.eta, dtype=float)))
    img, detections, csi = ndp_pass(s, args.seed, args.window, args.pad)
    omni = PrecoderSet.scaled_identity(
        np.sqrt(s.radio.total_tx_power_w / s.array.num_tx),
        s.array.num_tx, s.ofdm.num_subcarriers)
    rows = []
    m_rx, m_t = len(s.receivers), len(detections)
    base = ["omni", ""] + [""] * m_rx
    base += [f"{crlb(d.gain_estimate, d.range_m, d.azimuth_rad, omni, s).positioning_accuracy:.9e}"
             for d in detections]
    base += [f"{directed_power(omni, d.azimuth_rad, s):.9e}" for d in detections]
    rows.append(base)
    for eta_db in etas:
        try:
            problem = _problem_from_artifacts(s, csi, detections, eta_db, args.policy)
            sol = design(problem, s)
        except (InfeasibleDesignError, PrecoderNumericsError) as exc:
            rows.append([f"{eta_db:.2f}", "infeasible"] + [""] * (m_rx + 2 * m_t))
            print(f"sweep eta={eta_db:.1f} dB: infeasible ({exc})")
            continue
        v = sol.verification
        row = [f"{eta_db:.2f}", "optimal"]
        row += [f"{x:.6f}" for x in v.get("sinr_min_db", [])]
        for d in detections:
            rep = crlb(d.gain_estimate, d.range_m, d.azimuth_rad, sol.precoders, s)
            row.append(f"{rep.positioning_accuracy:.9e}")
        row += [f"{x:.9e}" for x in v["directed_power_w"]]
        rows.append(row)
    sweep_path = out / "sweep.csv"
    with open(sweep_path, "w") as fh:
        header = ["eta_db", "status"]
        header += [f"sinr_min_db_rx{q}" for q in range(m_rx)]
        header += [f"positioning_accuracy_t{i}" for i in range(m_t)]
        header += [f"directed_power_w_t{i}" for i in range(m_t)]
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")
    print(f"sweep: {len(etas)} floors, table at {sweep_path}")
    return [sweep_path]


def _parse_eta(text):
    if text is None:
        return None
    vals = [float(v) for v in str(text).split(",")]
    return vals[0] if len(vals) == 1 else vals


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="isacsim",
        description="MIMO-OFDM joint radar-communication simulation pipeline")
    parser.add_argument("command", choices=["ndp", "design", "run", "sweep"])
    parser.add_argument("--scenario", required=True, help="scenario JSON file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="override scenario seed")
    parser.add_argument("--eta", type=_parse_eta, default=None,
                        help="SINR floor override, dB (single value or comma list)")
    parser.add_argument("--subcarrier-policy", dest="policy", default="center",
                        help="center | all | stride:k")
    parser.add_argument("--window", default="hamming",
                        help="window for imaging (rect|hamming|hann|blackman)")
    parser.add_argument("--pad", type=int, default=None,
                        help="zero-padding factor override for both image axes")
    parser.add_argument("--ndp", default=None,
                        help="directory with ndp outputs (design command)")
    args = parser.parse_args(argv)

    try:
        s = load_scenario(args.scenario)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        handler = {"ndp": cmd_ndp, "design": cmd_design,
                   "run": cmd_run, "sweep": cmd_sweep}[args.command]
        files = handler(s, out, args)
        manifest = {
            "command": args.command,
            "scenario": str(args.scenario),
            "seed": s.rng_seed if args.seed is None else args.seed,
            "outputs": [{"path": str(p.relative_to(out)), "sha256": sha256_of(p)}
                        for p in files],
        }
        man_path = out / "manifest.json"
        with open(man_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        missing = [f["path"] for f in manifest["outputs"]
                   if not (out / f["path"]).exists()]
        if missing:
            print(f"manifest lists missing files: {missing}", file=sys.stderr)
            return 4
        return 0
    except ScenarioError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleDesignError as exc:
        print(f"infeasible design: {exc}", file=sys.stderr)
        return 3
    except (GramConditionError, PrecoderNumericsError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
