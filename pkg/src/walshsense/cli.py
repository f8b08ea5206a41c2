"""Command-line scenario runner.

Verbs::

    walshsense simulate  SCENARIO.cfg   full acquisition -> spectrum, trace, errors, curves
    walshsense compare   SCENARIO.cfg   Walsh vs sequential and vs CPMG/PDD subsets
    walshsense transform WAVEFORM.csv   sampled trace -> spectrum.json
    walshsense reconstruct SPECTRUM.json  spectrum -> reconstruction.csv
    walshsense bound     WAVEFORM.csv|SCENARIO.cfg --order n

Exit codes: 0 success, 2 configuration error, 3 infeasible scenario,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import ConfigError, Scenario, bundled_scenarios, load_scenario
from .estimation import (
    CoefficientEstimate,
    amplitude_resolution,
    compare_sequential,
    fit_cosine_phase,
    fit_slope_origin,
)
from .reconstruct import Subset, l2_error, reconstruct, subset_members, subset_reconstruct
from .sensor_sim import (
    AmplitudeSweep,
    InfeasibleScenario,
    MeasurementCurve,
    PhaseSweep,
    acquire_curve,
)
from .walsh_core import (
    Ordering,
    WalshSpectrum,
    _resolve_grid,
    fwht,
    truncation_bound,
    walsh_spectrum,
)
from .waveform import Scaled, max_abs_derivative, read_sampled_csv

__all__ = ["main", "run_scenario", "run_comparison", "NumericalFailure",
           "EXIT_OK", "EXIT_CONFIG", "EXIT_INFEASIBLE", "EXIT_NUMERICAL"]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERICAL = 4


class NumericalFailure(RuntimeError):
    """A computation produced no usable number (exit code 4)."""


def _num(x) -> Optional[float]:
    """Round to 12 significant digits; non-finite values become null."""
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return float(f"{x:.12g}")


def _fmt(x) -> str:
    x = float(x)
    return f"{x:.12g}" if math.isfinite(x) else "inf" if x > 0 else "nan"


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


# -- spectrum / reconstruction files -----------------------------------------

def spectrum_payload(spec: WalshSpectrum, flagged=None, **meta) -> dict:
    out = dict(meta)
    out.update({
        "period_us": _num(spec.period),
        "order": spec.order,
        "N": len(spec),
        "ordering": spec.ordering.value,
        "unit": "nT",
        "coefficients": [_num(c) for c in spec.coeffs],
        "sigmas": None if spec.sigmas is None else [_num(s) for s in spec.sigmas],
    })
    if flagged is not None:
        out["flagged"] = [int(m) for m in flagged]
    return out


def read_spectrum_json(path) -> WalshSpectrum:
    try:
        data = json.loads(Path(path).read_text())
        sig = data.get("sigmas")
        sigmas = None if sig is None else np.array(
            [math.inf if s is None else s for s in sig], dtype=float)
        coeffs = np.array(data["coefficients"], dtype=float)
        return WalshSpectrum(float(data["period_us"]), coeffs,
                             Ordering.parse(data.get("ordering", "sequency")), sigmas)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: not a readable spectrum file ({exc})") from None


def write_reconstruction_csv(path: Path, rec) -> None:
    rows = [(t, v, rec.sigma) for t, v in zip(rec.times, rec.values)]
    _write_csv(path, ("time_us", "field_nT", "sigma_nT"), rows)


# -- simulate ----------------------------------------------------------------

def _curve_rows(curve: MeasurementCurve, expected: MeasurementCurve):
    return zip(curve.sweep.values, curve.mean_signal, curve.std_err, expected.mean_signal)


def _acquire(sc: Scenario, grid: int) -> tuple[list, dict]:
    """Estimate every coefficient; return estimates (nT) and curves by m."""
    T, N = sc.period_us, sc.N
    model = sc.sensor
    curves = {}
    estimates = []
    if sc.protocol == "amplitude_sweep":
        shape = Scaled(sc.waveform, 1.0 / sc.field_scale_nT)
        f_hat = walsh_spectrum(shape, T, sc.order, grid=grid).coeffs
        top = max(float(np.max(np.abs(f_hat))), 1e-12)
        b_max = sc.max_phase_rad / (model.gamma_per_us * T * top)
        sweep = AmplitudeSweep.symmetric(b_max, sc.sweep_points)
        for m in range(N):
            curve = acquire_curve(model, shape, m, T, sweep, sc.repetitions,
                                  rng_seed=sc.seed, grid=grid)
            ideal = acquire_curve(model, shape, m, T, sweep, None, grid=grid)
            est = fit_slope_origin(curve, model.gamma, T)
            estimates.append(CoefficientEstimate(
                m, est.value * sc.field_scale_nT, est.sigma * sc.field_scale_nT, "nT",
                est.flagged, est.note))
            curves[m] = (curve, ideal)
    else:
        sweep = PhaseSweep.full_turn(sc.sweep_points)
        for m in range(N):
            ideal = acquire_curve(model, sc.waveform, m, T, sweep, None, grid=grid)
            if sc.protocol == "noiseless":
                curve = ideal
                estimates.append(None)
            else:
                curve = acquire_curve(model, sc.waveform, m, T, sweep, sc.repetitions,
                                      rng_seed=sc.seed, grid=grid)
                estimates.append(fit_cosine_phase(curve, model.gamma, T))
            curves[m] = (curve, ideal)
    return estimates, curves


def run_scenario(config, out_dir, seed: Optional[int] = None,
                 grid_multiplier: Optional[int] = None,
                 ordering: Optional[str] = None) -> dict:
    """Run one scenario and write its artifacts into ``out_dir``.

    Returns the error report. Raises :class:`ConfigError`,
    :class:`InfeasibleScenario` or :class:`NumericalFailure`.
    """
    sc = load_scenario(config)
    if seed is not None:
        sc.seed = int(seed)
    if grid_multiplier is not None:
        sc.grid_multiplier = int(grid_multiplier)
    out_ordering = Ordering.parse(ordering) if ordering else sc.ordering
    out = Path(out_dir)
    T, N, n = sc.period_us, sc.N, sc.order
    grid = _resolve_grid(n, None, sc.grid_multiplier)

    truth = walsh_spectrum(sc.waveform, T, n, grid=grid)
    estimates, curves = _acquire(sc, grid)
    if sc.protocol == "noiseless":
        spec = WalshSpectrum(T, truth.coeffs, Ordering.SEQUENCY, np.zeros(N))
        flagged = []
    else:
        values = np.array([e.value for e in estimates])
        sigmas = np.array([e.sigma for e in estimates])
        if not np.all(np.isfinite(values)):
            raise NumericalFailure("coefficient fit returned a non-finite value")
        spec = WalshSpectrum(T, values, Ordering.SEQUENCY, sigmas)
        flagged = [e.m for e in estimates if e.flagged]

    rec = reconstruct(spec)
    write_reconstruction_csv(out / "reconstruction.csv", rec)
    _write_json(out / "spectrum.json", spectrum_payload(
        spec.reorder(out_ordering), flagged, scenario=sc.name, protocol=sc.protocol,
        repetitions=sc.repetitions, seed=sc.seed))

    err_grid = max(grid, 1 << 12)
    max_deriv = max_abs_derivative(sc.waveform, T)
    entries = []
    for subset in Subset:
        members = subset_members(subset, N)
        mask = np.zeros(N, dtype=bool)
        mask[members] = True
        part = WalshSpectrum(T, np.where(mask, spec.coeffs, 0.0), Ordering.SEQUENCY,
                             np.where(mask, spec.sigmas, 0.0))
        r = reconstruct(part)
        n_eff = max(len(members), 1).bit_length() - 1
        entries.append({
            "subset": subset.value,
            "budget": len(members),
            "e_N": _num(l2_error(r, sc.waveform, grid=err_grid)),
            "bound": _num(truncation_bound(max_deriv, n_eff if subset is not Subset.FULL
                                           else n, period=T)),
            "delta_b_nT": _num(r.sigma),
        })
    report = {
        "scenario": sc.name,
        "N": N,
        "period_us": _num(T),
        "max_abs_derivative_nT_per_us": _num(max_deriv),
        "e_N_noiseless": _num(l2_error(reconstruct(truth), sc.waveform, grid=err_grid)),
        "entries": entries,
    }
    _write_json(out / "error_report.json", report)

    for m, (curve, ideal) in curves.items():
        _write_csv(out / "curves" / f"m_{m:04d}.csv",
                   (curve.sweep.label, "mean_signal", "std_err", "expected_signal"),
                   _curve_rows(curve, ideal))
    return report


# -- compare -----------------------------------------------------------------

def run_comparison(config, out_dir, seed: Optional[int] = None,
                   grid_multiplier: Optional[int] = None) -> dict:
    sc = load_scenario(config)
    if seed is not None:
        sc.seed = int(seed)
    if grid_multiplier is not None:
        sc.grid_multiplier = int(grid_multiplier)
    c = sc.compare
    sequential = []
    for o in c.orders:
        r = compare_sequential(1 << o, sc.period_us, sc.sensor, M=c.repetitions,
                               trials=c.trials, seed=sc.seed, t2_star=c.t2_star_us,
                               min_interval=c.min_interval_us,
                               include_visibility=c.include_visibility)
        sequential.append({k: (_num(v) if isinstance(v, float) else v)
                           for k, v in r.as_dict().items()})

    N_sub = 1 << c.subset_order
    subsets = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for subset in Subset:
            _, rep = subset_reconstruct(sc.waveform, subset, c.budget, N_sub,
                                        sc.period_us, multiplier=sc.grid_multiplier)
            d = rep.as_dict()
            d["members"] = list(rep.members)
            subsets.append({k: (_num(v) if isinstance(v, float) else v)
                            for k, v in d.items()})
    e = {s["subset"]: s["e_N"] for s in subsets}
    report = {
        "scenario": sc.name,
        "period_us": _num(sc.period_us),
        "seed": sc.seed,
        "sequential": sequential,
        "subsets": {
            "N": N_sub,
            "budget": c.budget,
            "entries": subsets,
            "full_beats_all_subsets": bool(
                e["full"] < min(e["cpmg"], e["pdd"], e["cpmg+pdd"])),
        },
    }
    _write_json(Path(out_dir) / "comparison.json", report)
    return report


# -- transform / reconstruct / bound -----------------------------------------

def _load_trace(path):
    try:
        return read_sampled_csv(path)
    except (OSError, ValueError, IndexError, StopIteration) as exc:
        raise ConfigError(f"{path}: cannot read waveform CSV ({exc})") from None


def run_transform(path, out_dir, order: Optional[int] = None,
                  ordering: Optional[str] = None) -> WalshSpectrum:
    """Spectrum of a sampled trace whose length is a power of two.

    The samples are taken as cell values on ``[0, T)``; with ``order`` the
    trace is block-averaged down to ``2**order`` cells first.
    """
    w = _load_trace(path)
    K = w.values.size
    if K & (K - 1):
        raise ConfigError(f"{path}: number of samples {K} is not a power of two")
    cells = w.values
    if order is not None:
        N = 1 << int(order)
        if N > K:
            raise ConfigError(f"{path}: order {order} needs at least {N} samples, "
                              f"file has {K}")
        cells = cells.reshape(N, K // N).mean(axis=1)
    spec = fwht(cells, Ordering.parse(ordering or "sequency"), period=w.period)
    _write_json(Path(out_dir) / "spectrum.json",
                spectrum_payload(spec, source=Path(path).name))
    return spec


def run_reconstruct(path, out_dir):
    spec = read_spectrum_json(path)
    rec = reconstruct(spec)
    write_reconstruction_csv(Path(out_dir) / "reconstruction.csv", rec)
    return rec


def run_bound(source, order: int) -> dict:
    if str(source).endswith(".cfg") or not Path(source).exists():
        sc = load_scenario(source)
        w, T = sc.waveform, sc.period_us
    else:
        w = _load_trace(source)
        T = w.period
    d = max_abs_derivative(w, T)
    return {"order": int(order), "N": 1 << int(order), "period_us": _num(T),
            "max_abs_derivative_nT_per_us": _num(d),
            "bound_nT": _num(truncation_bound(d, int(order), period=T))}


# -- entry point -------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="walshsense",
                                description="Walsh reconstruction of time-varying fields")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, seed=True, grid=True, ordering=True):
        sp.add_argument("--out-dir", default=".", help="output directory")
        if seed:
            sp.add_argument("--seed", type=int, help="override the scenario seed")
        if grid:
            sp.add_argument("--grid-multiplier", type=int,
                            help="quadrature points per Walsh cell")
        if ordering:
            sp.add_argument("--ordering", choices=[o.value for o in Ordering],
                            help="ordering of written spectra")

    sp = sub.add_parser("simulate", help="run a scenario")
    sp.add_argument("config")
    common(sp)
    sp = sub.add_parser("compare", help="Walsh vs sequential and subset report")
    sp.add_argument("config")
    common(sp, ordering=False)
    sp = sub.add_parser("transform", help="sampled CSV -> spectrum.json")
    sp.add_argument("waveform")
    sp.add_argument("--order", type=int)
    common(sp, seed=False, grid=False)
    sp = sub.add_parser("reconstruct", help="spectrum.json -> reconstruction.csv")
    sp.add_argument("spectrum")
    common(sp, seed=False, grid=False, ordering=False)
    sp = sub.add_parser("bound", help="truncation bound of a waveform")
    sp.add_argument("source", help="waveform CSV or scenario config")
    sp.add_argument("--order", type=int, required=True)
    sp = sub.add_parser("scenarios", help="list bundled scenarios")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        gm =getattr(args, "grid_multiplier", None)
        if gm is not None and (gm < 1 or gm & (gm - 1)):
            raise ConfigError(f"--grid-multiplier must be a power of two, got {gm}")
        if args.verb == "simulate":
            run_scenario(args.config, args.out_dir, args.seed, gm, args.ordering)
        elif args.verb == "compare":
            run_comparison(args.config, args.out_dir, args.seed, gm)
        elif args.verb == "transform":
            run_transform(args.waveform, args.out_dir, args.order, args.ordering)
        elif args.verb == "reconstruct":
            run_reconstruct(args.spectrum, args.out_dir)
        elif args.verb == "bound":
            if args.order < 0:
                raise ConfigError("--order must be non-negative")
            print(json.dumps(run_bound(args.source, args.order), indent=2))
        elif args.verb == "scenarios":
            print("\n".join(bundled_scenarios()))
    except InfeasibleScenario as exc:
        print(f"error: infeasible scenario: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
