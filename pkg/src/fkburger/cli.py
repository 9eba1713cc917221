"""Command-line front end.

    fkburger params --q 1
    fkburger loops --q 1 --samples 100000 --out loops.csv
    fkburger cone --q 1 --n-grid 2:50 --m-grid 2:30 --out cone.csv
    fkburger map --q 1 --length 20 --format dot
    fkburger verify --suite harmonic
    fkburger heavytail --samples 200000

Settings may also come from a key=value file given with --config; flags
win over the file. Data goes to stdout or --out, diagnostics to stderr.
Exit codes: 0 ok, 1 a verification failed, 2 bad configuration, 3 too much
censoring.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .params import ParameterError, resolve_params

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_CENSORED = 0, 1, 2, 3

# settings that never change results and stay out of output headers
_NOT_ECHOED = {"workers", "out", "config", "command"}


class ConfigError(ValueError):
    pass


class CensoringExceeded(RuntimeError):
    pass


def _grid(text):
    """'2:50' (inclusive range), '2:50:4' (with step) or '1,2,4'."""
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [int(x) for x in text.split(":")]
            if len(parts) == 2:
                return list(range(parts[0], parts[1] + 1))
            if len(parts) == 3:
                return list(range(parts[0], parts[1] + 1, parts[2]))
            raise ValueError
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "as_dict"):
        return o.as_dict()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, default=_json_default, sort_keys=True, indent=1)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_mutually_exclusive_group()
    g.add_argument("--p", type=float, help="F probability p in [0, 1/2)")
    g.add_argument("--q", type=float, help="loop weight q in [0, 4)")
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=int)
    common.add_argument("--budget", type=int)
    common.add_argument("--out")
    common.add_argument("--workers", type=int)
    common.add_argument("--format", choices=("csv", "json", "dot"))
    common.add_argument("--config", help="key=value file; flags override it")

    parser = _Parser(prog="fkburger", description="hamburger-cheeseburger loop and cone experiments")
    parser.add_argument("--version", action="version", version=f"fkburger {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("params", parents=[common], help="derived parameters")

    lp = sub.add_parser("loops", parents=[common], help="typical or length-biased loop samples")
    lp.add_argument("--variant", default=None)
    lp.add_argument("--biased", action="store_const", const=True, default=None)
    lp.add_argument("--method", choices=("loglog", "hill"))
    lp.add_argument("--max-censored", type=float)

    cp = sub.add_parser("cone", parents=[common], help="cone-exit exponent experiments")
    cp.add_argument("--n-grid", type=_grid)
    cp.add_argument("--m-grid", type=_grid)
    cp.add_argument("--samples-m", type=int)
    cp.add_argument("--cap-n", type=int)
    cp.add_argument("--max-censored", type=float)

    mp = sub.add_parser("map", parents=[common], help="sample a balanced word and export its map")
    mp.add_argument("--length", type=int)
    mp.add_argument("--word")

    vp = sub.add_parser("verify", parents=[common], help="verification suites")
    vp.add_argument("--suite", choices=("harmonic", "covariance", "identity", "appendix", "all"))

    hp = sub.add_parser("heavytail", parents=[common], help="heavy-tailed walk calibration")
    hp.add_argument("--alpha", type=float, action="append")
    hp.add_argument("--cap", type=int)
    return parser


DEFAULTS = {
    "seed": 0, "samples": None, "budget": None, "out": None, "workers": 1, "format": None,
    "variant": "first-F-left-of-0", "biased": False, "method": "loglog", "max_censored": 0.01,
    "n_grid": list(range(2, 51)), "m_grid": list(range(2, 31)), "samples_m": None, "cap_n": 62_500,
    "length": 20, "word": None, "suite": "all", "alpha": None, "cap": 10**5,
}

_CASTS = {"p": float, "q": float, "seed": int, "samples": int, "budget": int, "workers": int,
          "max_censored": float, "samples_m": int, "cap_n": int, "length": int, "cap": int,
          "n_grid": _grid, "m_grid": _grid, "biased": lambda s: s.lower() in ("1", "true", "yes"),
          "alpha": lambda s: [float(x) for x in s.split(",")]}


def read_config(path) -> dict:
    """Parse a flat key=value file; '#' starts a comment."""
    out = {}
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    for k, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{k}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS and key not in ("p", "q"):
            raise ConfigError(f"{path}:{k}: unknown key {key!r}")
        try:
            out[key] = _CASTS.get(key, str)(val)
        except (ValueError, argparse.ArgumentTypeError):
            raise ConfigError(f"{path}:{k}: bad value for {key}: {val!r}") from None
    return out


def resolve_config(argv) -> dict:
    ns = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(ns).items() if v is not None}
    cfg = dict(DEFAULTS)
    if ns.config:
        cfg.update(read_config(ns.config))
    if "p" in flags or "q" in flags:
        cfg.pop("p", None)
        cfg.pop("q", None)
    cfg.update(flags)
    if cfg.get("p") is None and cfg.get("q") is None:
        if cfg["command"] in ("params", "loops", "cone", "map"):
            raise ConfigError("one of --p or --q is required")
        cfg["q"] = 1.0
    if cfg.get("p") is not None and cfg.get("q") is not None:
        raise ConfigError("give only one of p and q")
    return cfg


_COMMON_KEYS = ("p", "q", "seed", "samples", "budget", "format")
COMMAND_KEYS = {
    "params": (),
    "loops": ("variant", "biased", "method", "max_censored"),
    "cone": ("n_grid", "m_grid", "samples_m", "cap_n", "max_censored"),
    "map": ("length", "word"),
    "verify": ("suite", "alpha", "cap"),
    "heavytail": ("alpha", "cap"),
}


def header(cfg, params=None) -> dict:
    keys = _COMMON_KEYS + COMMAND_KEYS[cfg["command"]]
    echoed = {k: cfg[k] for k in sorted(keys) if cfg.get(k) is not None and k not in _NOT_ECHOED}
    h = {"program": "fkburger", "version": __version__, "command": cfg["command"], "seed": cfg["seed"],
         "config": echoed}
    if params is not None:
        h["derived"] = params.as_dict()
    return h


def header_lines(h) -> list:
    return [f"fkburger {h['version']} {h['command']}", f"seed: {h['seed']}",
            "config: " + json.dumps(h["config"], sort_keys=True, default=_json_default)] + \
           (["derived: " + json.dumps(h["derived"], sort_keys=True)] if "derived" in h else [])


def emit(cfg, text: str, suffix: str = ""):
    if cfg.get("out"):
        path = cfg["out"] + suffix
        with open(path, "w") as fh:
            fh.write(text)
        print(f"wrote {path}", file=sys.stderr)
    else:
        sys.stdout.write(text)


def _params(cfg):
    return resolve_params(cfg.get("p"), cfg.get("q"))


# ---------------------------------------------------------------- commands

def cmd_params(cfg):
    prm = _params(cfg)
    d = prm.as_dict()
    d["sigma2"] = prm.sigma2
    emit(cfg, dumps(d) + "\n")


def cmd_loops(cfg):
    from .loops import loop_tail_fits, sample_biased_loops, sample_loops

    prm = _params(cfg)
    n = cfg["samples"] or 10_000
    budget = cfg["budget"] or 10**6
    if cfg["biased"]:
        batch = sample_biased_loops(prm, n, cfg["seed"], budget, workers=cfg["workers"])
    else:
        batch = sample_loops(prm, cfg["variant"], n, cfg["seed"], budget, cfg["workers"])
    h = header(cfg, prm)
    fits = {}
    try:
        fits = {k: v.as_dict() for k, v in loop_tail_fits(batch, cfg["method"], seed=cfg["seed"], budget=budget).items()}
    except ValueError as exc:
        fits = {"error": str(exc)}
    doc = {"header": h, "samples": len(batch), "censored_fraction": batch.censored_fraction, "fits": fits}
    if cfg["format"] == "json":
        emit(cfg, dumps(doc) + "\n")
    else:
        emit(cfg, batch.csv_text(header_lines(h)))
        if cfg.get("out"):
            emit(cfg, dumps(doc) + "\n", ".fit.json")
    if batch.censored_fraction > cfg["max_censored"]:
        raise CensoringExceeded(f"censored fraction {batch.censored_fraction:.4g} exceeds {cfg['max_censored']}")


def cmd_cone(cfg):
    from .cone import estimate_exit_exponents

    prm = _params(cfg)
    trials_n = cfg["samples"] or 4 * 10**6
    trials_m = cfg["samples_m"] or 4 * trials_n
    res = estimate_exit_exponents(prm, cfg["n_grid"], cfg["m_grid"], trials_n, trials_m, cfg["cap_n"],
                                  cfg["budget"] or 10**9, cfg["seed"], workers=cfg["workers"])
    h = header(cfg, prm)
    doc = {"header": h, "fits": res.fits, "symbols": res.symbols, "budget": res.budget,
           "diagnostics": res.diagnostics}
    if cfg["format"] == "json":
        doc["rows"] = res.rows
        emit(cfg, dumps(doc) + "\n")
    else:
        emit(cfg, res.csv_text(header_lines(h)))
        if cfg.get("out"):
            emit(cfg, dumps(doc) + "\n", ".fit.json")
    frac = res.fits["J"]["censored_fraction"]
    if frac > cfg["max_censored"]:
        raise CensoringExceeded(f"censored fraction {frac:.4g} exceeds {cfg['max_censored']}")


def cmd_map(cfg):
    from .maps import build_map, export_map, extract_loops, sample_balanced_word
    from .words import Word

    prm = _params(cfg)
    if cfg["word"]:
        word = Word.from_text(cfg["word"])
    else:
        word = sample_balanced_word(prm, cfg["length"], cfg["seed"])
    pmap = build_map(word)
    overlay = extract_loops(pmap)
    fmt = cfg["format"] or "json"
    if fmt == "csv":
        raise ConfigError("map export supports json and dot")
    text = export_map(pmap, overlay, fmt)
    if fmt == "json":
        doc = {"header": header(cfg, prm), "word": str(word), "map": json.loads(text)}
        text = dumps(doc) + "\n"
    else:
        text = "".join(f"// {line}\n" for line in header_lines(header(cfg, prm))) + text
    emit(cfg, text)


def cmd_verify(cfg):
    prm = _params(cfg)
    suite = cfg["suite"]
    seed = cfg["seed"]
    out = {"header": header(cfg, prm)}
    ok = True
    if suite in ("harmonic", "all"):
        from .harmonic import certificate_suite
        rep = certificate_suite(prm, patch_eps=(0.01, 0.02, 0.05))
        out["harmonic"] = rep
        ok &= rep["passed"]
    if suite in ("covariance", "all"):
        from .cone import covariance_check
        steps = cfg["samples"] or 10**5
        rep = covariance_check(prm, steps=steps, trials=400, seed=seed, workers=cfg["workers"])
        out["covariance"] = rep.as_dict()
        err = rep.relative_errors()
        ok &= all(abs(err[k]) < 0.02 for k in ("var_x", "var_y", "cov", "diag_x", "diag_y")) \
            and err["offdiag_over_diag"] < 0.02
    if suite in ("identity", "all"):
        from .cone import same_event_check
        trials = cfg["samples"] or 10**4
        rep = same_event_check(prm, trials, seed=seed, workers=cfg["workers"])
        out["identity"] = rep
        ok &= rep["violations"] == 0
    if suite in ("appendix", "all"):
        rep = _appendix(cfg, trials=cfg["samples"] or 20_000)
        out["appendix"] = rep
        ok &= rep["passed"]
    out["passed"] = bool(ok)
    emit(cfg, dumps(out) + "\n")
    return EXIT_OK if ok else EXIT_FAILED


def _appendix(cfg, trials):
    from .estimator import left_tail_and_summax_checks, return_time_experiment

    seed = cfg["seed"]
    alphas = cfg["alpha"] or [4 / 3, 1.5]
    rt = {}
    ok = True
    for a in alphas:
        fits = {}
        for start in (1, 0):
            f = return_time_experiment(a, 10 * trials, cfg["cap"], seed, start=start)
            fits[f"start={start}"] = f.as_dict()
        rt[repr(a)] = {"target": 1 / a, **fits}
        ok &= abs(fits["start=1"]["exponent"] - 1 / a) <= 0.1
    env = left_tail_and_summax_checks(trials=trials, seed=seed)
    return {"return_times": rt, "envelopes": env, "passed": bool(ok and env["passed"])}


def cmd_heavytail(cfg):
    rep = _appendix(cfg, trials=cfg["samples"] or 20_000)
    rep = {"header": header(cfg), **rep}
    emit(cfg, dumps(rep) + "\n")
    return EXIT_OK if rep["passed"] else EXIT_FAILED


COMMANDS = {"params": cmd_params, "loops": cmd_loops, "cone": cmd_cone, "map": cmd_map,
            "verify": cmd_verify, "heavytail": cmd_heavytail}


def _fail(code, kind, msg):
    print(json.dumps({"error": kind, "message": str(msg), "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        cfg = resolve_config(argv)
        return COMMANDS[cfg["command"]](cfg) or EXIT_OK
    except (ConfigError, ParameterError) as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, exc)
    except CensoringExceeded as exc:
        return _fail(EXIT_CENSORED, "CensoringExceeded", exc)
    except ValueError as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, exc)
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
