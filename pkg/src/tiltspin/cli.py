"""Command-line front end: ``tiltspin <verb> [options]``.

Exit codes: 0 success, 2 malformed input, 3 physics-domain error,
4 fit did not converge. Angles are degrees on the command line and in
every file written here.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import alignment, effective, fitting, pulses, tomography
from .errors import ConfigError, PhysicsDomainError
from .spin_core import FieldConfig, SpinSystemParams

log = logging.getLogger("tiltspin")

EXIT_OK, EXIT_INPUT, EXIT_DOMAIN, EXIT_FIT = 0, 2, 3, 4


class FitNotConverged(Exception):
    def __init__(self, payload):
        super().__init__("fit did not converge")
        self.payload = payload


# -- input helpers -------------------------------------------------------------


def data_path(name: str) -> Path:
    """Path of a bundled data file (default parameters, tomography records, sequences)."""
    return Path(str(resources.files("tiltspin") / "data" / name))


def read_json(path) -> object:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc


def load_config(args) -> tuple:
    """Resolve (params, field) from --config, --params/--field files and inline overrides."""
    params_data, field_data = None, None
    if getattr(args, "config", None):
        cfg = read_json(args.config)
        if not isinstance(cfg, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(cfg) - {"params", "field"}
        if unknown:
            raise ConfigError(f"unknown run-config keys {sorted(unknown)}")
        params_data, field_data = cfg.get("params"), cfg.get("field")
    if getattr(args, "params", None):
        params_data = read_json(args.params)
    if params_data is None:
        params_data = read_json(data_path("default_params.json"))
    if getattr(args, "field", None):
        field_data = read_json(args.field)
    if field_data is None:
        field_data = read_json(data_path("field_240G_2deg.json"))
    if not isinstance(params_data, dict) or not isinstance(field_data, dict):
        raise ConfigError("params and field must be JSON objects")
    field_data = dict(field_data)
    for key in ("b_gauss", "phi_deg", "azimuth_deg"):
        value = getattr(args, key, None)
        if value is not None:
            field_data[key] = value
    return SpinSystemParams.from_dict(params_data), FieldConfig.from_dict(field_data)


def parse_grid(text: str) -> list:
    """``start:stop:num`` (inclusive linspace) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, num = text.split(":")
            n = int(num)
            if n < 0:
                raise ValueError
            return np.linspace(float(start), float(stop), n).tolist()
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"cannot parse grid {text!r}; use start:stop:num or a,b,c") from exc


def parse_sweep(spec: str) -> tuple:
    if "=" not in spec:
        raise ConfigError(f"sweep spec {spec!r} must look like name=start:stop:num")
    name, grid = spec.split("=", 1)
    values = parse_grid(grid)
    if not values:
        raise ConfigError("sweep grid is empty")
    return name.strip(), values


def emit(text: str, out) -> None:
    if out:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


def _clean(x):
    # NaN is not valid JSON; report undefined quantities as null
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


# -- verbs ---------------------------------------------------------------------


def predict_record(p: SpinSystemParams, f: FieldConfig) -> dict:
    model = effective.effective_hamiltonian(p, f)
    f_exact, rel = effective.oracle_deviation(p, f)
    rec = {"params": p.to_dict(), "field": f.to_dict()}
    rec.update(model.as_record())
    rec["omega_z_mhz"] = model.omega_z
    rec["omega_x_mhz"] = model.omega_x
    rec["f_oracle_mhz"] = f_exact
    rec["oracle_rel_deviation"] = rel
    return rec


def cmd_predict(args) -> int:
    p, f = load_config(args)
    emit(dumps(_clean(predict_record(p, f))), args.out)
    return EXIT_OK


SWEEP_COLUMNS = ("f_nucl_mhz", "theta_eff_deg", "c_e", "c_n", "c_total", "f_oracle_mhz")


def _sweep_row(task):
    p, f, name, value = task
    rec = predict_record(p, f)
    return [value] + [rec[c] for c in SWEEP_COLUMNS]


def cmd_sweep(args) -> int:
    p, f = load_config(args)
    name, values = parse_sweep(args.sweep)
    if name not in ("phi_deg", "b_gauss", "azimuth_deg"):
        raise ConfigError(f"can sweep phi_deg, b_gauss or azimuth_deg, not {name!r}")
    base = f.to_dict()
    tasks = [(p, FieldConfig.from_dict({**base, name: v}), name, v) for v in values]
    if args.jobs and args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_sweep_row, tasks))
    else:
        rows = [_sweep_row(t) for t in tasks]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow((name,) + SWEEP_COLUMNS)
    for row in rows:
        w.writerow([repr(float(v)) for v in row])
    emit(buf.getvalue(), args.out)
    return EXIT_OK


_SWEEP_ALIASES = {"rabi_mhz": "rabi"}


def cmd_simulate(args) -> int:
    p, f = load_config(args)
    seq = pulses.load_sequence(args.sequence)
    if args.sweep:
        target, values = parse_sweep(args.sweep)
        try:
            index, param = target.split(".", 1)
            index = int(index)
        except ValueError as exc:
            raise ConfigError(f"simulate sweep target {target!r} must be <index>.<param>") from exc
        if param == "phase_deg":
            param, values = "phase", [math.radians(v) for v in values]
        param = _SWEEP_ALIASES.get(param, param)
        seq = pulses.PulseSequence(seq.elements, pulses.Sweep(index, param, tuple(values)), seq.name)
    if seq.sweep is None:
        raise ConfigError("sequence has no sweep; pass --sweep <index>.<param>=start:stop:num")
    envelope = None
    if args.envelope:
        env = read_json(args.envelope)
        unknown = set(env) - {"t1", "t2", "t2_star", "exponent", "apply"}
        if unknown:
            raise ConfigError(f"unknown envelope keys {sorted(unknown)}")
        decay = env.pop("apply", "t2_star")
        envelope = pulses.DecayEnvelope(**{k: float(v) for k, v in env.items()})
    else:
        decay = "t2_star"
    trace = pulses.run_sequence(seq, p, f, envelope, decay)
    try:
        trace.meta["dominant_frequency_mhz"] = fitting.extract_frequency(trace.x, trace.y)
    except (PhysicsDomainError, ConfigError):
        trace.meta["dominant_frequency_mhz"] = None
    if args.out:
        pulses.save_trace(trace, args.out)
    else:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in zip(trace.x, trace.y):
            w.writerow([repr(float(x)), repr(float(y))])
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


def _matrix_json(m: np.ndarray) -> list:
    return [[[float(z.real), float(z.imag)] for z in row] for row in m]


def tomo_from_record(data: dict, project: bool = False) -> dict:
    kind = data.get("kind")
    unknown = set(data) - {"kind", "target", "targets", "expectations", "quads", "correlators",
                           "electron", "nuclear", "printed"}
    if unknown:
        raise ConfigError(f"unknown tomography keys {sorted(unknown)}")
    if kind == "1q":
        if "expectations" in data:
            e = {k.lower(): float(v) for k, v in data["expectations"].items()}
        elif "quads" in data:
            e = {k.lower(): tomography.expectation_from_readouts(tomography.ReadoutQuad(*q))
                 for k, q in data["quads"].items()}
        else:
            raise ConfigError("1q record needs 'expectations' or 'quads'")
        try:
            rec = tomography.TomographyRecord1Q(e["x"], e["y"], e["z"])
        except KeyError as exc:
            raise ConfigError(f"missing expectation {exc}") from exc
        rho = tomography.reconstruct_1q(rec)
        default_targets = ["zero"]
    elif kind == "2q":
        marg = {k: tuple(data[k]) for k in ("electron", "nuclear") if k in data}
        if "quads" in data:
            rec = tomography.TomographyRecord2Q.from_quads(data["quads"], **marg)
        elif "correlators" in data:
            rec = tomography.TomographyRecord2Q({k.upper(): float(v) for k, v in data["correlators"].items()}, **marg)
        else:
            raise ConfigError("2q record needs 'quads' or 'correlators'")
        rho = tomography.reconstruct_2q(rec)
        default_targets = ["bell_phi_plus"]
    else:
        raise ConfigError("record 'kind' must be '1q' or '2q'")
    if project:
        rho = tomography.project_psd(rho)
    targets = data.get("targets") or ([data["target"]] if "target" in data else default_targets)
    eig = tomography.eigenvalues(rho)
    fids = {}
    for t in targets:
        entry = {"overlap": tomography.fidelity(rho, t, "overlap")}
        entry["uhlmann"] = tomography.fidelity(rho, t, "uhlmann") if eig.min() >= -1e-10 else None
        fids[t] = entry
    out = {"density_matrix": _matrix_json(rho), "eigenvalues": eig.tolist(), "psd": bool(eig.min() >= -1e-10),
           "projected": project, "fidelity": fids}
    if kind == "2q":
        out["correlators"] = dict(rec.correlators)
    return out


def cmd_tomo(args) -> int:
    data = read_json(args.input)
    if not isinstance(data, dict):
        raise ConfigError("tomography input must be a JSON object")
    emit(dumps(tomo_from_record(data, args.project_psd)), args.out)
    return EXIT_OK


def cmd_align(args) -> int:
    p, _ = load_config(args) if (args.params or args.config) else (SpinSystemParams(), None)
    D = args.D if args.D is not None else p.D
    E = args.E if args.E is not None else p.E
    if args.csv:
        with open(args.csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows or not {"nu1", "nu2"} <= set(rows[0]):
            raise ConfigError("alignment CSV needs nu1 and nu2 columns")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["nu1", "nu2", "b_gauss", "theta_deg", "beta_mhz", "delta_mhz"])
        for row in rows:
            try:
                n1, n2 = float(row["nu1"]), float(row["nu2"])
            except ValueError as exc:
                raise ConfigError(f"bad alignment row {row}") from exc
            r = alignment.invert_odmr(alignment.AlignmentInput(n1, n2, D, E), p.gamma_e, args.tol_mhz)
            w.writerow([repr(v) for v in (n1, n2, r.b_gauss, math.degrees(r.theta), r.beta, r.delta)])
        emit(buf.getvalue(), args.out)
        return EXIT_OK
    if args.nu1 is None or args.nu2 is None:
        raise ConfigError("align needs --nu1 and --nu2, or --csv")
    r = alignment.invert_odmr(alignment.AlignmentInput(args.nu1, args.nu2, D, E), p.gamma_e, args.tol_mhz)
    emit(dumps(_clean(r.as_record())), args.out)
    return EXIT_OK


def read_xy(path) -> tuple:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except FileNotFoundError as exc:
        raise ConfigError(f"file not found: {path}") from exc
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        data = np.array([[float(v) for v in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"{path}: non-numeric data") from exc
    if data.ndim != 2 or data.shape[1] < 2:
        raise ConfigError(f"{path}: need at least two columns (x, y[, sigma])")
    sigma = data[:, 2] if data.shape[1] > 2 else None
    return data[:, 0], data[:, 1], sigma


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def cmd_fit(args) -> int:
    x, y, sigma = read_xy(args.data)
    init = {}
    for item in args.init or []:
        if "=" not in item:
            raise ConfigError(f"--init expects name=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            init[k] = float(v)
        except ValueError as exc:
            raise ConfigError(f"--init value for {k} is not a number") from exc
    res = fitting.fit(args.model, x, y, init, sigma)
    payload = dumps(_clean(res.as_record()))
    if not res.converged:
        raise FitNotConverged(payload)
    emit(payload, args.out)
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _config_args(p: argparse.ArgumentParser, field: bool = True) -> None:
    p.add_argument("--config", help="JSON object with 'params' and 'field'")
    p.add_argument("--params", help="spin-parameter JSON (default: bundled defaults)")
    if field:
        p.add_argument("--field", help="field JSON with b_gauss, phi_deg, azimuth_deg")
        p.add_argument("--b-gauss", dest="b_gauss", type=float, help="override field magnitude (G)")
        p.add_argument("--phi-deg", dest="phi_deg", type=float, help="override tilt (degrees)")
        p.add_argument("--azimuth-deg", dest="azimuth_deg", type=float, help="override azimuth (degrees)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tiltspin", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    sp = sub.add_parser("predict", help="effective-model prediction with exact cross-check")
    _config_args(sp)
    sp.add_argument("--out")
    sp.add_argument("--format", choices=["json"], default="json")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("sweep", help="tabulate predictions over phi_deg or b_gauss")
    _config_args(sp)
    sp.add_argument("--sweep", required=True, help="e.g. phi_deg=0:20:41")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out")
    sp.add_argument("--format", choices=["csv"], default="csv")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("simulate", help="run a pulse sequence and write the trace")
    _config_args(sp)
    sp.add_argument("--sequence", required=True)
    sp.add_argument("--sweep", help="e.g. 2.duration=0:60:1201")
    sp.add_argument("--envelope", help="JSON with t1/t2/t2_star/exponent and 'apply'")
    sp.add_argument("--out", help="CSV path; a .json sidecar is written next to it")
    sp.add_argument("--format", choices=["csv"], default="csv")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("tomo", help="reconstruct a density matrix from a tomography record")
    sp.add_argument("--input", required=True)
    sp.add_argument("--project-psd", action="store_true")
    sp.add_argument("--out")
    sp.add_argument("--format", choices=["json"], default="json")
    sp.set_defaults(func=cmd_tomo)

    sp = sub.add_parser("align", help="field magnitude and angle from two ODMR lines")
    _config_args(sp, field=False)
    sp.add_argument("--nu1", type=float)
    sp.add_argument("--nu2", type=float)
    sp.add_argument("--D", type=float)
    sp.add_argument("--E", type=float)
    sp.add_argument("--csv", help="CSV with nu1,nu2 columns")
    sp.add_argument("--tol-mhz", dest="tol_mhz", type=float, default=0.05,
                    help="precision of the input lines; small negative beta^2 within it reads as zero field")
    sp.add_argument("--out")
    sp.add_argument("--format", choices=["json", "csv"], default="json")
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("fit", help="fit a zoo model to x,y[,sigma] CSV data")
    sp.add_argument("--model", required=True, choices=sorted(fitting.MODELS))
    sp.add_argument("--data", required=True)
    sp.add_argument("--init", nargs="*", help="starting values as name=value")
    sp.add_argument("--out")
    sp.add_argument("--format", choices=["json"], default="json")
    sp.set_defaults(func=cmd_fit)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except PhysicsDomainError as exc:
        print(f"domain error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except FitNotConverged as exc:
        emit(exc.payload, getattr(args, "out", None))
        print("fit did not converge", file=sys.stderr)
        return EXIT_FIT
    except (OSError, KeyError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
