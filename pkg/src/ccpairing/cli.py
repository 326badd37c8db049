"""Command-line driver: exact tables, N0 sweeps, multistart branch scans and RPA spectra.

Exit codes: 0 success, 2 numerical non-convergence, 3 invalid configuration.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import sys
from dataclasses import dataclass

import numpy as np

from .functional import AmplitudeVector, Gauge, Scheme, SchemeConfig, evaluate, residuals
from .oracle import exact_ground_energy, interpolated_exact_energy
from .quasispin import ModelParams
from .rpa import NoDynamicsError, rpa_at
from .solver import SolutionPoint, SolverSettings, multistart_scan, natural_sweep, scaled_norm

EXIT_OK = 0
EXIT_NO_CONVERGENCE = 2
EXIT_BAD_CONFIG = 3

SWEEP_COLUMNS = ["n0", "lambda", "energy", "n_mean", "n2_mean", "dn2", "e_exact_interp", "delta_e",
                 "converged", "zero_modes", "unstable"]
BRANCH_COLUMNS = ["n0", "branch_id", "lambda", "energy", "n_mean", "n2_mean", "dn2", "delta_expect",
                  "delta_dag_expect", "converged"]
RPA_COLUMNS = ["n0", "re_omega", "im_omega", "class"]
EXACT_COLUMNS = ["n", "energy"]

# flag name -> (type, default); the config file uses the same keys
OPTIONS = {
    "omega": (int, 10),
    "g": (float, 1.0),
    "n0": (float, None),
    "n0_min": (float, None),
    "n0_max": (float, None),
    "n0_steps": (int, None),
    "scheme": (str, "particle-eccm"),
    "order": (int, 1),
    "gauge": (str, None),
    "seed": (int, 0),
    "multistart": (int, 200),
    "tol": (float, 1e-11),
    "format": (str, "csv"),
    "output": (str, None),
    "input": (str, None),
    "plot": (str, None),
    "workers": (int, 1),
}

log = logging.getLogger("ccpairing")


class ConfigError(ValueError):
    pass


class NonConvergence(RuntimeError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_BAD_CONFIG, f"{self.prog}: error: {message}\n")


@dataclass
class RunConfig:
    command: str
    model: ModelParams
    scheme: SchemeConfig | None
    solver: SolverSettings
    values: dict

    @property
    def fmt(self) -> str:
        return self.values["format"]

    def summary(self) -> dict:
        out = {"command": self.command, "omega": self.model.omega, "g": self.model.g}
        if self.scheme is not None:
            out.update(scheme=self.scheme.scheme.value, order=self.scheme.order, gauge=self.scheme.gauge.value)
        if self.command != "exact":
            out.update(seed=self.solver.seed, multistart=self.values["multistart"], tol=self.solver.tol)
        return out


# -- configuration ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccpairing", description="CCM solvers for the single-shell pairing model.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "exact": "exact ground-state energies for even N = 0..2Ω",
        "sweep": "solve along an N0 grid with warm starts",
        "branches": "multistart scan for all solutions at one N0",
        "rpa": "RPA frequencies at solutions from --input (or a fresh sweep)",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", help="flat key=value or JSON file; flags override it")
        for key in OPTIONS:
            flags = ["--" + key.replace("_", "-")] + (["-o"] if key == "output" else [])
            kwargs = {"default": None, "dest": key}
            if key == "scheme":
                kwargs["choices"] = [s.value for s in Scheme]
            elif key == "gauge":
                kwargs["choices"] = [g.value for g in Gauge]
            elif key == "format":
                kwargs["choices"] = ["csv", "json"]
            else:
                kwargs["type"] = OPTIONS[key][0]
            p.add_argument(*flags, **kwargs)
    return parser


def read_config_file(path: str) -> dict:
    """Parse a JSON object or ``key = value`` lines (``#`` starts a comment)."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad JSON config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("JSON config must be an object")
    else:
        raw = {}
        for num, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{num}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            raw[key] = val.strip("\"'")
    out = {}
    for key, val in raw.items():
        norm = key.strip().lstrip("-").replace("-", "_")
        if norm not in OPTIONS:
            raise ConfigError(f"unknown config key {key!r}")
        out[norm] = val
    return out


def _coerce(key: str, val):
    kind = OPTIONS[key][0]
    if val is None:
        return None
    try:
        if kind is int:
            if isinstance(val, bool):
                raise ValueError
            num = float(val)
            if not num.is_integer():
                raise ValueError
            return int(num)
        if kind is float:
            if isinstance(val, bool):
                raise ValueError
            return float(val)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {kind.__name__}, got {val!r}") from None
    return str(val)


def resolve(args: argparse.Namespace) -> RunConfig:
    values = {key: default for key, (_, default) in OPTIONS.items()}
    if args.config:
        for key, val in read_config_file(args.config).items():
            values[key] = _coerce(key, val)
    for key in OPTIONS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    if values["format"] not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {values['format']!r}")
    try:
        model = ModelParams(values["omega"], values["g"], 0.0)
        scheme = None
        if args.command != "exact":
            gauge = Gauge(values["gauge"]) if values["gauge"] is not None else None
            scheme = SchemeConfig(Scheme(values["scheme"]), values["order"], gauge)
            if scheme.order > model.omega:
                raise ConfigError(f"order {scheme.order} exceeds omega {model.omega}")
        if values["multistart"] is None or values["multistart"] < 1:
            raise ConfigError("--multistart must be >= 1")
        solver = SolverSettings(tol=values["tol"], seed=values["seed"],
                                multistart_count=values["multistart"], workers=max(1, values["workers"]))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(args.command, model, scheme, solver, values)


def n0_grid(cfg: RunConfig) -> np.ndarray:
    v = cfg.values
    if v["n0_steps"] is not None or v["n0_min"] is not None or v["n0_max"] is not None:
        if None in (v["n0_steps"], v["n0_min"], v["n0_max"]):
            raise ConfigError("--n0-min, --n0-max and --n0-steps go together")
        if v["n0_steps"] < 1:
            raise ConfigError("empty N0 grid")
        if v["n0_steps"] == 1 and v["n0_min"] != v["n0_max"]:
            raise ConfigError("a one-point grid needs --n0-min equal to --n0-max")
        grid = np.linspace(v["n0_min"], v["n0_max"], v["n0_steps"])
    elif v["n0"] is not None:
        grid = np.array([v["n0"]])
    else:
        raise ConfigError("no N0 given: use --n0 or --n0-min/--n0-max/--n0-steps")
    top = 2 * cfg.model.omega
    if np.any(~np.isfinite(grid)) or grid.min() < 0 or grid.max() > top:
        raise ConfigError(f"N0 values must lie in [0, {top}]")
    return grid


# -- output -------------------------------------------------------------------


def fmt_number(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x) + 0.0  # no negative zero
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def to_json(obj) -> str:
    """JSON with every float written to 17 significant digits; non-finite floats become null."""
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format(float(obj) + 0.0, ".17g") if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {to_json(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ", ".join(to_json(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def render(cfg: RunConfig, columns: list[str], rows: list[dict], extra: dict | None = None) -> str:
    if cfg.fmt == "json":
        doc = {"config": cfg.summary()}
        if extra:
            doc.update(extra)
        doc["points"] = rows
        return to_json(doc) + "\n"
    buf = io.StringIO()
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt_number(row[c]) if not isinstance(row[c], str) else row[c] for c in columns) + "\n")
    return buf.getvalue()


def emit(cfg: RunConfig, text: str) -> None:
    path = cfg.values["output"]
    if path in (None, "-"):
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def point_record(pt: SolutionPoint) -> dict:
    obs = pt.obs
    return {
        "n0": pt.n0,
        "branch_id": pt.branch_id,
        "lambda": pt.amps.lam,
        "energy": obs.energy,
        "n_mean": obs.n_mean,
        "n2_mean": obs.n2_mean,
        "dn2": obs.dn2,
        "delta_expect": obs.delta_expect,
        "delta_dag_expect": obs.delta_dag_expect,
        "converged": bool(pt.converged),
        "residual_norm": pt.residual_norm,
        "labels": pt.scheme.labels(),
        "amplitudes": [float(v) for v in pt.amps.x],
    }


def load_points(path: str) -> tuple[ModelParams, SchemeConfig, list[dict]]:
    """Read a JSON solution file written by ``sweep`` or ``branches``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        conf = doc["config"]
        model = ModelParams(int(conf["omega"]), float(conf["g"]), 0.0)
        scheme = SchemeConfig(Scheme(conf["scheme"]), int(conf["order"]), Gauge(conf["gauge"]))
        points = list(doc["points"])
        for rec in points:
            rec["amps"] = AmplitudeVector(np.array(rec["amplitudes"], dtype=float), scheme)
            rec["n0"] = float(rec["n0"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot load solution file {path}: {exc}") from exc
    return model, scheme, points


# -- commands -----------------------------------------------------------------


def cmd_exact(cfg: RunConfig) -> tuple[str, list[dict]]:
    rows = [{"n": n, "energy": exact_ground_energy(cfg.model, n)} for n in range(0, 2 * cfg.model.omega + 1, 2)]
    return render(cfg, EXACT_COLUMNS, rows), rows


def _rpa_summary(pt: SolutionPoint):
    if not pt.converged:
        return None
    try:
        return rpa_at(pt.params, pt)
    except (NoDynamicsError, np.linalg.LinAlgError, ValueError) as exc:
        log.warning("RPA failed at n0=%s: %s", pt.n0, exc)
        return None


def cmd_sweep(cfg: RunConfig) -> tuple[str, list[dict]]:
    grid = n0_grid(cfg)
    pts = natural_sweep(cfg.model, cfg.scheme, grid, cfg.solver)
    rows = []
    for pt in pts:
        rec = point_record(pt)
        rec["e_exact_interp"] = interpolated_exact_energy(cfg.model, pt.n0)
        rec["delta_e"] = rec["energy"] - rec["e_exact_interp"]
        spec = _rpa_summary(pt)
        rec["zero_modes"] = spec.zero_modes if spec is not None else -1
        rec["unstable"] = bool(spec.unstable) if spec is not None else False
        rows.append(rec)
        log.info("n0=%.6g converged=%s E=%.12g", pt.n0, pt.converged, rec["energy"])
    if not any(r["converged"] for r in rows):
        raise NonConvergence("no grid point converged")
    return render(cfg, SWEEP_COLUMNS, rows), rows


def cmd_branches(cfg: RunConfig) -> tuple[str, list[dict]]:
    if cfg.values["n0"] is None:
        raise ConfigError("branches needs --n0")
    grid = n0_grid(cfg)
    if grid.size != 1:
        raise ConfigError("branches takes a single --n0")
    pts = multistart_scan(cfg.model, cfg.scheme, float(grid[0]), cfg.solver)
    rows = [point_record(p) for p in pts]
    status = "found" if rows else "no-solution"
    return render(cfg, BRANCH_COLUMNS, rows, {"status": status}), rows


def cmd_rpa(cfg: RunConfig) -> tuple[str, list[dict]]:
    if cfg.values["input"]:
        model, scheme, recs = load_points(cfg.values["input"])
        cfg.model, cfg.scheme = model, scheme
        points = []
        for rec in recs:
            if not rec.get("converged", False):
                raise NonConvergence(f"input point at n0={rec['n0']} is not converged")
            params = model.with_n0(rec["n0"])
            f, jac = residuals(params, rec["amps"], jacobian=True)
            res = scaled_norm(f, jac)
            points.append(SolutionPoint(params, rec["amps"], evaluate(params, rec["amps"]), res, True,
                                        branch_id=rec.get("branch_id")))
    else:
        grid = n0_grid(cfg)
        points = [p for p in natural_sweep(cfg.model, cfg.scheme, grid, cfg.solver) if p.converged]
        if not points:
            raise NonConvergence("no grid point converged")
    rows = []
    for pt in points:
        try:
            spec = rpa_at(pt.params, pt)
        except NoDynamicsError:
            # no kinetic term: every direction is a zero mode
            rows.extend({"n0": pt.n0, "re_omega": 0.0, "im_omega": 0.0, "class": "zero"}
                        for _ in range(pt.amps.x.size - 1))
            continue
        order = np.lexsort((spec.frequencies.imag, spec.frequencies.real))
        for i in order:
            w = spec.frequencies[i]
            rows.append({"n0": pt.n0, "re_omega": w.real, "im_omega": w.imag, "class": spec.classes[i]})
    return render(cfg, RPA_COLUMNS, rows), rows


COMMANDS = {"exact": cmd_exact, "sweep": cmd_sweep, "branches": cmd_branches, "rpa": cmd_rpa}


def make_plot(cfg: RunConfig, rows: list[dict], path: str) -> None:
    """Optional quick-look figure; needs the ``plot`` extra."""
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError("--plot needs matplotlib (pip install 'artifact[plot]')") from exc
    fig, ax = plt.subplots(figsize=(6, 4))
    if cfg.command == "exact":
        ax.plot([r["n"] for r in rows], [r["energy"] for r in rows], "o-")
        ax.set_xlabel("N")
        ax.set_ylabel("E")
    elif cfg.command == "rpa":
        x = [r["n0"] for r in rows]
        ax.plot(x, [r["re_omega"] for r in rows], ".", label="Re ω")
        ax.plot(x, [r["im_omega"] for r in rows], "x", label="Im ω")
        ax.set_xlabel("N0")
        ax.legend()
    else:
        ok = [r for r in rows if r["converged"]]
        ax.plot([r["n0"] for r in ok], [r["energy"] for r in ok], "o-" if cfg.command == "sweep" else "o")
        if cfg.command == "sweep":
            ax.plot([r["n0"] for r in rows], [r["e_exact_interp"] for r in rows], "k--", label="exact")
            ax.legend()
        ax.set_xlabel("N0")
        ax.set_ylabel("E")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve(args)
        text, rows = COMMANDS[cfg.command](cfg)
        emit(cfg, text)
        if cfg.values["plot"]:
            make_plot(cfg, rows, cfg.values["plot"])
    except ConfigError as exc:
        print(f"ccpairing: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except NonConvergence as exc:
        print(f"ccpairing: {exc}", file=sys.stderr)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
