"""Kommandolinje + TOML-config.

Kør:
  python scripts/cli_io.py run configs/localization.toml [--json] [--seed N] [--threads T] [--out DIR] [--gnuplot]
  python scripts/cli_io.py scan-ids configs/subcritical.toml
  python scripts/cli_io.py scan-lyapunov configs/localization.toml
  python scripts/cli_io.py green configs/localization.toml --interval 0 99 --energy 0.5
  python scripts/cli_io.py gap-count configs/free_bound_state.toml [--window E1 E2]
  python scripts/cli_io.py check-identities [CONFIG]
  python scripts/cli_io.py report output/<scenario>-<hash>

Exit: 0 alle hårde assertions OK, 1 en hård assertion fejlede (eller en numerisk konstruktion
fejlede), 2 config-fejl / NotInGap / anden forudsætningsfejl.

Config-sektioner: [potential] [perturbation] [scenario] (+ [scenario.parameters]) [numerics] [output].
Ukendte nøgler er en hård fejl med linjenummer. Output-mappe: --out > [output].dir > $QPLAB_OUTPUT > output/.
Log går til stderr, så --json på stdout kan parses.
"""
import argparse
import json
import os
import re
import sys
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))
import lattice_ops as LO
import cocycle as CO
import spectral_box as SB
import oscillation as OS
import experiments as EX

SECTIONS = {
    "potential": {"kind", "coupling", "alpha", "theta", "fourier"},
    "perturbation": {"kind", "C", "rate", "table", "n0"},
    "scenario": {"name", "seed", "expected", "parameters"},
    "numerics": {"threads", "theta_grid", "lyapunov_k", "chunk_sites", "bisection_rtol", "ids_theta_grid",
                 "label_k_max", "label_tol", "edge_tol", "edge_steps"},
    "output": {"dir", "gnuplot"},
}

NUMERICS_TARGET = {
    "threads": CO, "theta_grid": CO, "lyapunov_k": CO, "chunk_sites": CO,
    "bisection_rtol": SB, "ids_theta_grid": SB, "label_k_max": SB, "label_tol": SB,
    "edge_tol": OS, "edge_steps": OS,
}

POTENTIAL_KINDS = ("almost_mathieu", "fourier", "zero", "appendix")

COMMANDS = {
    "run": None,
    "scan-ids": "ids_scan",
    "scan-lyapunov": "lyapunov_scan",
    "green": "green",
    "gap-count": "gap_count",
    "check-identities": "identities",
}

# ekstra scenario-parametre som ikke står i experiments.CONFIG
EXTRA_PARAMETERS = {"ldt": {"E", "N", "eps", "theta_samples"}}


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class RunConfig:
    scenario: str
    operator: LO.OperatorSpec
    potential: dict
    perturbation: dict | None
    parameters: dict = field(default_factory=dict)
    expected: tuple = ()
    seed: int = 0
    numerics: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    notes: list = field(default_factory=list)


# =============================================================================
# LINJENUMRE
# =============================================================================

_HEADER = re.compile(r"^\s*\[+\s*([^\]]+?)\s*\]+\s*(#.*)?$")


def _line_of(text, key, section=None):
    """First line assigning `key` inside [section] (or anywhere when section is None)."""
    if not text:
        return None
    pat = re.compile(rf'^\s*["\']?{re.escape(str(key))}["\']?\s*=')
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            current = m.group(1).strip()
            continue
        if (section is None or current == section) and pat.match(line):
            return i
    return None


def _section_line(text, name):
    if not text:
        return None
    for i, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m and m.group(1).strip() == name:
            return i
    return None


# =============================================================================
# PARSING
# =============================================================================

def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _alpha_tokens(raw, text):
    tokens = []
    for a in _as_list(raw):
        if isinstance(a, bool) or not isinstance(a, (str, int, float)):
            raise ConfigError(f"alpha must be a string or number, got {a!r}", _line_of(text, "alpha", "potential"))
        tokens.append(a if isinstance(a, str) else repr(a))
    return tokens


def _normalize_potential(sec, text):
    kind = sec.get("kind", "almost_mathieu")
    if kind not in POTENTIAL_KINDS:
        raise ConfigError(f"Unknown potential kind: {kind!r}", _line_of(text, "kind", "potential"))
    out = {"kind": kind}
    if kind == "appendix":
        return out
    out["alpha"] = _alpha_tokens(sec.get("alpha", "golden"), text)
    out["theta"] = [float(t) for t in _as_list(sec.get("theta", [0.0] * len(out["alpha"])))]
    if kind == "zero":
        return out
    out["coupling"] = float(sec.get("coupling", 1.0))
    if kind == "fourier":
        if "fourier" not in sec:
            raise ConfigError("fourier potential needs a 'fourier' list of [mode, re, im]", _section_line(text, "potential"))
        out["fourier"] = [[_as_list(mode), float(re_), float(im)] for mode, re_, im in sec["fourier"]]
    return out


def _table_pairs(raw):
    if isinstance(raw, dict):
        return sorted([int(n), float(v)] for n, v in raw.items())
    return sorted([int(n), float(v)] for n, v in raw)


def _normalize_perturbation(sec, text):
    kind = sec.get("kind", "zero")
    line = lambda key: _line_of(text, key, "perturbation")
    if kind not in LO.PERTURBATION_KINDS:
        raise ConfigError(f"Unknown perturbation kind: {kind!r}", line("kind"))
    out = {"kind": kind}
    if kind in ("exponential", "power_law"):
        for key in ("C", "rate"):
            if key not in sec:
                raise ConfigError(f"{kind} perturbation needs {key!r}", _section_line(text, "perturbation"))
        out.update(C=float(sec["C"]), rate=float(sec["rate"]))
    elif kind == "table":
        out["table"] = _table_pairs(sec.get("table", {}))
    elif kind == "inverse_square_tail":
        out.update(C=float(sec.get("C", -2.0)), n0=int(sec.get("n0", 2)), table=_table_pairs(sec.get("table", {})))
    return out


def _build_operator(potential, perturbation, parameters):
    if potential["kind"] == "appendix":
        return LO.appendix_operator(u0=float(parameters.get("u0", EX.CONFIG["appendix"]["u0"])))
    alpha = tuple(potential["alpha"])
    theta = tuple(potential["theta"])
    if potential["kind"] == "almost_mathieu":
        if len(alpha) != 1:
            raise LO.InvalidPotential(f"almost_mathieu is one-frequency, got alpha of dimension {len(alpha)}")
        pot = LO.almost_mathieu(potential["coupling"], alpha[0], theta[0])
    elif potential["kind"] == "zero":
        pot = LO.PotentialSpec(fourier_coeffs=(), alpha=alpha, theta=theta, coupling=0.0)
    else:
        coeffs = tuple((tuple(mode), complex(re_, im)) for mode, re_, im in potential["fourier"])
        pot = LO.PotentialSpec(fourier_coeffs=coeffs, alpha=alpha, theta=theta, coupling=potential["coupling"])
    g = perturbation or {"kind": "zero"}
    pert = LO.PerturbationSpec(kind=g["kind"], C=g.get("C", 0.0), rate=g.get("rate", 0.0),
                               table=tuple(tuple(x) for x in g.get("table", [])), n0=g.get("n0", 2))
    return LO.OperatorSpec(pot, pert)


def _check_keys(doc, text):
    for name, sec in doc.items():
        if name not in SECTIONS:
            raise ConfigError(f"Unknown section [{name}]", _section_line(text, name) or _line_of(text, name))
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table", _line_of(text, name))
        for key in sec:
            if key not in SECTIONS[name]:
                raise ConfigError(f"Unknown key {key!r} in [{name}]", _line_of(text, key, name))


def _check_parameters(name, params, text):
    allowed = set(EX.CONFIG.get(name, {})) | EXTRA_PARAMETERS.get(name, set())
    for key in params:
        if key not in allowed:
            raise ConfigError(f"Unknown parameter {key!r} for scenario {name!r}",
                              _line_of(text, key, "scenario.parameters"))


def config_from_dict(doc, text=None):
    """Validated RunConfig from a parsed TOML document (text only feeds line numbers)."""
    _check_keys(doc, text)
    scen = doc.get("scenario", {})
    name = scen.get("name")
    if name not in EX.SCENARIOS + EX.ADHOC:
        raise ConfigError(f"Unknown scenario: {name!r}", _line_of(text, "name", "scenario") or _section_line(text, "scenario"))
    params = dict(scen.get("parameters", {}))
    _check_parameters(name, params, text)
    potential = _normalize_potential(doc.get("potential", {"kind": "zero"}), text)
    notes, warnings = [], []
    if "perturbation" in doc:
        perturbation = _normalize_perturbation(doc["perturbation"], text)
    else:
        perturbation = None
        if potential["kind"] != "appendix":
            notes.append("no [perturbation] block: using Zero")
    try:
        op = _build_operator(potential, perturbation, params)
    except LO.InvalidPotential as e:
        key = "fourier" if "symmetric" in str(e) else "kind"
        raise ConfigError(str(e), _line_of(text, key, "potential") or _line_of(text, key, "perturbation")) from e
    if potential["kind"] != "appendix" and LO.is_rationally_dependent(list(op.potential.alpha)):
        warnings.append(f"rationally dependent frequency: alpha = {potential['alpha']}")
    numerics = dict(doc.get("numerics", {}))
    output = dict(doc.get("output", {}))
    return RunConfig(
        scenario=name,
        operator=op,
        potential=potential,
        perturbation=perturbation,
        parameters=params,
        expected=tuple(scen.get("expected", ())),
        seed=int(scen.get("seed", 0)),
        numerics=numerics,
        output=output,
        warnings=warnings,
        notes=notes,
    )


def config_to_dict(cfg):
    """Inverse of config_from_dict (alpha keeps the token it was written with)."""
    doc = {
        "potential": dict(cfg.potential),
        "scenario": {"name": cfg.scenario, "seed": cfg.seed, "expected": list(cfg.expected),
                     "parameters": dict(cfg.parameters)},
    }
    if cfg.perturbation is not None:
        doc["perturbation"] = dict(cfg.perturbation)
    if cfg.numerics:
        doc["numerics"] = dict(cfg.numerics)
    if cfg.output:
        doc["output"] = dict(cfg.output)
    return doc


def parse_config(text):
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        m = re.search(r"line (\d+)", str(e))
        raise ConfigError(f"TOML syntax error: {e}", int(m.group(1)) if m else None) from e
    return config_from_dict(doc, text)


def load_config(path):
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def apply_numerics(numerics, threads=None):
    """Sætter numerik-nøgler i modulernes CONFIG. Returnerer de gamle værdier til restore_numerics."""
    previous = {}
    for key, value in numerics.items():
        previous.setdefault(key, NUMERICS_TARGET[key].CONFIG[key])
        NUMERICS_TARGET[key].CONFIG[key] = value
    if threads:
        previous.setdefault("threads", CO.CONFIG["threads"])
        CO.CONFIG["threads"] = int(threads)
    return previous


def restore_numerics(previous):
    for key, value in previous.items():
        NUMERICS_TARGET[key].CONFIG[key] = value


def output_root(args_out, cfg):
    if args_out:
        return args_out
    if cfg is not None and cfg.output.get("dir"):
        return cfg.output["dir"]
    return os.environ.get("QPLAB_OUTPUT", "output")


# =============================================================================
# KOMMANDOER
# =============================================================================

# numeriske fejl der arver ValueError, men er kørselsfejl (exit 1)
NUMERIC_FAILURES = (SB.NoLabel, SB.TooShort, OS.DegenerateTrace)

# exit 2; ValueError til sidst dækker argument-checks (E1 < E2, N >= 4, theta_samples)
PRECONDITION_ERRORS = (
    ConfigError, LO.InvalidPotential, LO.InvalidInterval, CO.PerturbationNotAllowed, CO.BranchMismatch,
    EX.ReportInvalid, OS.NotInGap, SB.SingularBox, EX.EdgeNotFound, OSError, ValueError,
)


def _log(msg):
    print(msg, file=sys.stderr)


def _emit(args, payload, lines):
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False))
    else:
        for line in lines:
            print(line)


def _fail(args, exc, code):
    kind = type(exc).__name__
    print(f"❌ {kind}: {exc}", file=sys.stderr)
    if getattr(args, "json", False):
        print(json.dumps({"error": str(exc), "kind": kind}, sort_keys=True))
    return code


def _command_overrides(args):
    params = {}
    if getattr(args, "window", None):
        params["E1"], params["E2"] = args.window
    if getattr(args, "interval", None):
        params["interval"] = list(args.interval)
    if getattr(args, "energy", None) is not None:
        params["E"] = args.energy
    return params


def _run_command(args):
    cfg = load_config(args.config) if args.config else None
    if cfg is None and args.command != "check-identities":
        raise ConfigError(f"{args.command} needs a config file")
    name = COMMANDS[args.command] or cfg.scenario
    params = dict(cfg.parameters) if cfg is not None and cfg.scenario == name else {}
    params.update(_command_overrides(args))
    if name == "identities" and cfg is not None:
        params["use_operator"] = True
    previous = apply_numerics(cfg.numerics if cfg else {}, args.threads)
    try:
        return _run_scenario(args, cfg, name, params)
    finally:
        restore_numerics(previous)


def _run_scenario(args, cfg, name, params):
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    op = cfg.operator if cfg else None
    expected = cfg.expected if cfg is not None and cfg.scenario == name else ()
    rep = EX.run_scenario(EX.Scenario(name, op, params, expected, seed), log=_log)
    if cfg is not None:
        rep.notes.extend(cfg.notes + [f"⚠ {w}" for w in cfg.warnings])
    gnuplot = args.gnuplot or bool(cfg and cfg.output.get("gnuplot"))
    run_dir = EX.write_report(rep, output_root(args.out, cfg), gnuplot)
    data = rep.to_dict()
    status = "✅ PASS" if rep.passed else "❌ FAIL"
    lines = [f"{status} {name} → {run_dir}"]
    lines += [f"  {'✅' if a.passed else ('❌' if a.hard else '⚠')} {a.name}: {a.measured}" for a in rep.assertions]
    _emit(args, {"run_dir": run_dir, "digest": EX.report_digest(data), "report": data}, lines)
    return 0 if rep.passed else 1


def _report_command(args):
    path = os.path.join(args.run_dir, "report.json")
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    EX.validate_report(data)
    lines = [f"{'✅ PASS' if data['passed'] else '❌ FAIL'} {data['scenario']} (seed {data['seed']})"]
    lines += [f"  {k}: {v}" for k, v in sorted(data["summary"].items())]
    lines += [f"  📄 {a}" for a in data["artifacts"]]
    _emit(args, {"run_dir": args.run_dir, "digest": EX.report_digest(data), "report": data}, lines)
    return 0 if data["passed"] else 1


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="maskinlæsbar JSON på stdout")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="tråde til theta-grid løkker")
    common.add_argument("--out", default=None, help="output-rod (default: $QPLAB_OUTPUT eller output/)")
    common.add_argument("--gnuplot", action="store_true", help="skriv også .dat tabeller")

    ap = argparse.ArgumentParser(prog="cli_io.py", description="Quasi-periodiske Schrödinger-operatorer: scenarier og scans")
    sub = ap.add_subparsers(dest="command", required=True)
    for cmd in ("run", "scan-ids", "scan-lyapunov"):
        sub.add_parser(cmd, parents=[common]).add_argument("config")
    green = sub.add_parser("green", parents=[common])
    green.add_argument("config")
    green.add_argument("--interval", type=int, nargs=2, metavar=("N1", "N2"))
    green.add_argument("--energy", type=float, default=None)
    gap = sub.add_parser("gap-count", parents=[common])
    gap.add_argument("config")
    gap.add_argument("--window", type=float, nargs=2, metavar=("E1", "E2"))
    sub.add_parser("check-identities", parents=[common]).add_argument("config", nargs="?")
    sub.add_parser("report", parents=[common]).add_argument("run_dir")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "report":
            return _report_command(args)
        return _run_command(args)
    except NUMERIC_FAILURES as e:
        return _fail(args, e, 1)
    except PRECONDITION_ERRORS as e:
        return _fail(args, e, 2)
    except RuntimeError as e:
        return _fail(args, e, 1)


if __name__ == "__main__":
    sys.exit(main())
