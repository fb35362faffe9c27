"""Command-line front end.

Subcommands: decompose, simulate, verify, envelope, stats. Settings come from
built-in defaults, then an optional ``--config`` file (INI sections or a JSON
meta sidecar written by a previous run), then command-line flags.

Exit codes: 0 success, 1 verification failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .closed_form_statistics import (KINDS, NORMALIZATIONS, SpecError, StatisticSpec, TieError,
                                     build_kernel, chatterjee_xi, closed_form_ab, raw_statistic,
                                     statistic_value)
from .kernel_decomposition import (DENSE_MAX_N, KernelError, boundedness_delta, center_kernel,
                                   eta_from_kernel, normalize, read_kernel_file)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).replace(",", " ").split()]


def _zmax(s):
    return "auto" if str(s).strip() == "auto" else float(s)


SCHEMA = {
    "statistic": {"kind": str, "n": int, "n1": int, "n2": int, "normalization": str},
    "simulation": {"num_samples": int, "seed": int, "workers": int, "z_max": _zmax,
                   "z_step": float, "z_points": _floats, "offset_lattice": _bool,
                   "continuity_correction": _bool, "allow_beyond_cap": _bool},
    "envelope": {"theta": float, "c1": float, "delta1_c": float, "delta": float,
                 "z": _floats, "t": _floats},
}

DEFAULTS = {
    "statistic": {"kind": "descents", "n": 100, "n1": 0, "n2": 0,
                  "normalization": "variance_exact"},
    "simulation": {"num_samples": 10 ** 6, "seed": 0, "workers": 1, "z_max": "auto",
                   "z_step": 0.5, "z_points": None, "offset_lattice": False,
                   "continuity_correction": False, "allow_beyond_cap": False},
    "envelope": {"theta": 1.0, "c1": 1.0, "delta1_c": 1.0, "delta": None,
                 "z": [0.0, 0.5, 1.0, 1.5, 2.0], "t": [0.5, 1.0]},
}


def read_config(path) -> dict:
    """Raw section -> key -> value mapping from an INI file or a JSON sidecar."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc}"]) from None
    if p.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"bad JSON in {path}: {exc}"]) from None
        data = data.get("config", data)
        if not isinstance(data, dict) or not all(isinstance(v, dict) for v in data.values()):
            raise ConfigError([f"{path}: expected an object of sections"])
        return data
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"bad config syntax in {path}: {exc}"]) from None
    return {s: dict(cp[s]) for s in cp.sections()}


def resolve_config(file_cfg: dict, overrides: dict) -> dict:
    """Merge defaults, file and flags; validate every key, reporting all problems."""
    problems = []
    cfg = {s: dict(v) for s, v in DEFAULTS.items()}
    for layer in (file_cfg or {}, overrides):
        for section, items in layer.items():
            if section not in SCHEMA:
                problems.append(f"unknown section [{section}]")
                continue
            for key, val in items.items():
                if key not in SCHEMA[section]:
                    problems.append(f"unknown key {section}.{key}")
                    continue
                if val is None:
                    continue
                try:
                    cfg[section][key] = SCHEMA[section][key](val)
                except (TypeError, ValueError) as exc:
                    problems.append(f"bad value for {section}.{key}: {val!r} ({exc})")
    st = cfg["statistic"]
    if st["kind"] not in KINDS and st["kind"] != "chatterjee_oscillation":
        problems.append(f"statistic.kind must be one of {', '.join(KINDS)}")
    if st["normalization"] not in NORMALIZATIONS:
        problems.append(f"statistic.normalization must be one of {', '.join(NORMALIZATIONS)}")
    if st["kind"] == "mww" and st["n1"] and st["n2"]:
        st["n"] = st["n1"] + st["n2"]
    sim = cfg["simulation"]
    if sim["workers"] < 1:
        problems.append("simulation.workers must be >= 1")
    if sim["num_samples"] < 1:
        problems.append("simulation.num_samples must be >= 1")
    env = cfg["envelope"]
    for key in ("theta", "c1", "delta1_c"):
        if not env[key] > 0:
            problems.append(f"envelope.{key} must be positive")
    if problems:
        raise ConfigError(problems)
    return cfg


def spec_from_config(cfg: dict) -> StatisticSpec:
    st = cfg["statistic"]
    try:
        if st["kind"] == "mww":
            n1, n2 = st["n1"], st["n2"]
            if not (n1 and n2):
                n1, n2 = st["n"] // 2, st["n"] - st["n"] // 2
            return StatisticSpec.mww(n1, n2, st["normalization"])
        return StatisticSpec(st["kind"], st["n"], st["normalization"])
    except SpecError as exc:
        raise ConfigError([str(exc)]) from None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dump(obj, cfg=None) -> str:
    # the resolved config rides along so the output can be fed back via --config
    if cfg is not None:
        obj = dict(obj, config=cfg)
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


# --- subcommands -----------------------------------------------------------

def cmd_decompose(args, cfg) -> int:
    spec = None
    if args.kernel:
        xi = read_kernel_file(args.kernel)
    else:
        spec = spec_from_config(cfg)
        xi = build_kernel(spec)
    n = xi.shape[0]
    xs = center_kernel(xi)
    ep = eta_from_kernel(xi, xs)
    dips = normalize(xi)
    scale = max(1.0, float(np.abs(xi).max()))
    report = boundedness_delta(dips, exact_assignment=args.exact_row)
    out = {
        "n": n,
        "sigma": dips.sigma,
        "sigma2": dips.sigma ** 2,
        "a_is_zero": dips.a_is_zero,
        "mean_shift": dips.mean_shift,
        "sum_a2": float((dips.a ** 2).sum()),
        "marginal_residuals": {
            "xi_star": max(float(np.abs(xs.mean(axis=ax)).max()) for ax in range(4)) / scale,
            "eta_star_rows": float(np.abs(ep.eta_star.mean(axis=1)).max()),
            "eta_star_cols": float(np.abs(ep.eta_star.mean(axis=0)).max()),
        },
        "delta_report": report.to_dict(),
    }
    if spec is not None:
        out["statistic"] = spec.as_dict()
        cf = closed_form_ab(spec)
        ratio = dips.sigma / cf.sigma
        err = max(float(np.abs(dips.a * ratio - cf.a).max()),
                  float(np.abs(dips.b * ratio - cf.dense_b()).max()))
        out["closed_form_check"] = {"scale": ratio, "max_abs_diff": err,
                                    "a_is_zero_agrees": cf.a_is_zero == dips.a_is_zero,
                                    "ok": err <= 1e-10 and cf.a_is_zero == dips.a_is_zero}
    _emit(_dump(out, cfg), args.out)
    return EXIT_OK


def _z_grid(cfg, spec):
    from .simulation import default_z_grid
    sim = cfg["simulation"]
    if sim["z_points"]:
        return sim["z_points"]
    zmax = None if sim["z_max"] == "auto" else sim["z_max"]
    return default_z_grid(spec, sim["z_step"], zmax)


def cmd_simulate(args, cfg) -> int:
    from .simulation import tail_ratio_table
    spec = spec_from_config(cfg)
    sim = cfg["simulation"]
    table = tail_ratio_table(spec, _z_grid(cfg, spec), sim["num_samples"], sim["seed"],
                             sim["workers"], allow_beyond_cap=sim["allow_beyond_cap"],
                             offset_lattice=sim["offset_lattice"],
                             continuity_correction=sim["continuity_correction"])
    table.meta["config"] = _jsonable(cfg)
    table.meta["version"] = __version__
    csv_text = table.to_csv()
    meta_text = table.meta_json() + "\n"
    if args.out:
        Path(args.out).write_text(csv_text)
        Path(args.meta or f"{args.out}.meta.json").write_text(meta_text)
    else:
        sys.stdout.write(csv_text)
        if args.meta:
            Path(args.meta).write_text(meta_text)
    worst = max(abs(r.ratio - 1) for r in table.rows)
    print(f"{spec.kind} n={spec.n} samples={sim['num_samples']}: max |ratio-1| = {worst:.6g}",
          file=sys.stderr)
    return EXIT_OK


def _verify_pair_identity(spec, num_perms, seed):
    from .exchangeable_pair import conditional_mean_d
    from .kernel_decomposition import evaluate
    dips = closed_form_ab(spec)
    rng = np.random.Generator(np.random.Philox(seed))
    worst = 0.0
    for _ in range(num_perms):
        p = rng.permutation(spec.n)
        lhs, rhs = conditional_mean_d(dips, p)
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(evaluate(dips, p))))
    return {"suite": "pair-identity", "statistic": spec.as_dict(), "permutations": num_perms,
            "max_scaled_gap": worst, "ok": worst <= 1e-10}


def _verify_fibers(n):
    from .permutation_transforms import Pair, Single, fiber_uniformity_test
    if n < 4:
        raise ConfigError(["fibers suite needs n >= 4"])
    chains = {"single": [Single(1, 2)], "pair": [Pair(0, 2, 3, 1)],
              "composed": [Pair(0, 2, 3, 1), Single(1, 0)]}
    details = {}
    for name, chain in chains.items():
        details[name] = fiber_uniformity_test(n, chain).summary()
    return {"suite": "fibers", "n": n, "fibers": details,
            "ok": all(d["ok"] for d in details.values())}


def _verify_moments(n):
    from fractions import Fraction
    from .simulation import exact_distribution
    if n > 8:
        raise ConfigError(["moments suite enumerates S_n and needs n <= 8"])
    n1 = n // 2
    expected = {
        "descents": (Fraction(n - 1, 2), Fraction(n + 1, 12)),
        "inversions": (Fraction(n * (n - 1), 4), Fraction(n * (n - 1) * (2 * n + 5), 72)),
        "mww": (Fraction(n1 * (n - n1), 2), Fraction(n1 * (n - n1) * (n + 1), 12)),
    }
    rows = []
    for kind, (m, v) in expected.items():
        spec = StatisticSpec.mww(n1, n - n1) if kind == "mww" else StatisticSpec(kind, n)
        em, ev = exact_distribution(spec).raw_moments()
        rows.append({"statistic": kind, "mean": float(em), "mean_formula": float(m),
                     "var": float(ev), "var_formula": float(v), "ok": em == m and ev == v})
    return {"suite": "moments", "n": n, "rows": rows, "ok": all(r["ok"] for r in rows)}


def cmd_verify(args, cfg) -> int:
    n = args.n if args.n is not None else cfg["statistic"]["n"]
    if args.suite == "pair-identity":
        spec = spec_from_config(cfg)
        res = _verify_pair_identity(spec, args.num_perms, cfg["simulation"]["seed"])
    elif args.suite == "fibers":
        res = _verify_fibers(n)
    else:
        res = _verify_moments(n)
    _emit(_dump(res, cfg), args.out)
    print(f"verify {args.suite}: {'pass' if res['ok'] else 'FAIL'}", file=sys.stderr)
    return EXIT_OK if res["ok"] else EXIT_FAIL


def cmd_envelope(args, cfg) -> int:
    from .stein_normal import (EnvelopeParams, application_deltas, md_bound_envelope,
                               mgf_envelope, tau0_theta, tau_theta)
    env = cfg["envelope"]
    n = cfg["statistic"]["n"]
    delta = env["delta"]
    source = "configured"
    if delta is None:
        spec = spec_from_config(cfg)
        delta = boundedness_delta(closed_form_ab(spec)).delta_coupled
        source = f"coupled delta of {spec.kind}"
    params = EnvelopeParams(n=n, delta=delta, theta=env["theta"], c1=env["c1"],
                            delta1_c=env["delta1_c"])
    tau = tau_theta(params)
    d1, d2 = application_deltas(n, delta, env["delta1_c"])
    tau0 = tau0_theta(tau, delta, d1, lambda t: d2, env["theta"])
    zrows = []
    for z in env["z"]:
        if 0 <= z <= tau:
            zrows.append({"z": z, "envelope": md_bound_envelope(params, z, tau), "in_range": True})
        else:
            zrows.append({"z": z, "envelope": None, "in_range": False})
    trows = [{"t": t, "mgf_envelope": mgf_envelope(t, delta, d1(t), d2),
              "in_range": 0 <= t <= min(tau, 1 / delta)} for t in env["t"]]
    out = {"n": n, "delta": delta, "delta_source": source, "theta": env["theta"],
           "c1": env["c1"], "delta1_c": env["delta1_c"], "tau": tau, "tau0": tau0,
           "z_rows": zrows, "t_rows": trows}
    _emit(_dump(out, cfg), args.out)
    return EXIT_OK


def cmd_stats(args, cfg) -> int:
    spec = spec_from_config(cfg)
    if args.data:
        if spec.kind != "chatterjee":
            raise ConfigError(["--data is only meaningful for the chatterjee statistic"])
        rows = []
        for line_no, line in enumerate(Path(args.data).read_text().splitlines(), 1):
            if not line.strip() or (line_no == 1 and args.header):
                continue
            parts = line.replace(";", ",").split(",")
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                raise ConfigError([f"{args.data}:{line_no}: expected two numeric columns"]) from None
        x, y = np.array(rows).T
        out = {"statistic": "chatterjee", "n": len(x), "value": chatterjee_xi(x, y)}
    elif args.perm:
        try:
            p = np.array([int(v) for v in args.perm.replace(",", " ").split()]) - 1
        except ValueError:
            raise ConfigError(["--perm must be a list of integers"]) from None
        if len(p) != spec.n:
            if spec.kind == "mww" and cfg["statistic"]["n1"]:
                raise ConfigError([f"--perm has length {len(p)}, expected n={spec.n}"])
            st = dict(cfg["statistic"], n=len(p))
            spec = spec_from_config(dict(cfg, statistic=st))
        try:
            out = {"statistic": spec.as_dict(), "raw": raw_statistic(spec, p),
                   "value": statistic_value(spec, p)}
        except ValueError as exc:
            raise ConfigError([str(exc)]) from None
    else:
        raise ConfigError(["stats needs --perm or --data"])
    _emit(_dump(out, cfg), args.out)
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="root random seed")
    common.add_argument("--workers", type=int, help="worker processes for sampling")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--config", help="INI config or JSON meta sidecar")
    stat = argparse.ArgumentParser(add_help=False)
    stat.add_argument("--builtin", choices=list(KINDS) + ["chatterjee_oscillation"],
                      help="built-in statistic")
    stat.add_argument("--n", type=int)
    stat.add_argument("--n1", type=int)
    stat.add_argument("--n2", type=int)
    stat.add_argument("--normalization", choices=NORMALIZATIONS)

    ap = argparse.ArgumentParser(prog="dips", description=__doc__.splitlines()[0],
                                 parents=[common])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", parents=[common, stat], help="normalize a kernel")
    p.add_argument("--kernel", help="kernel text file (header n=<int>, then n^4 reals)")
    p.add_argument("--exact-row", action="store_true",
                   help=f"exact assignment for the row bound (n <= 12)")

    p = sub.add_parser("simulate", parents=[common, stat], help="Monte Carlo tail ratios")
    p.add_argument("--num-samples", type=int)
    p.add_argument("--z", help="comma-separated z grid (default: auto up to the cap)")
    p.add_argument("--z-max", help="grid cap, or 'auto'")
    p.add_argument("--z-step", type=float)
    p.add_argument("--offset-lattice", action="store_true", default=None)
    p.add_argument("--continuity-correction", action="store_true", default=None)
    p.add_argument("--allow-beyond-cap", action="store_true", default=None)
    p.add_argument("--meta", help="meta JSON path (default: <out>.meta.json)")

    p = sub.add_parser("verify", parents=[common, stat], help="deterministic checks")
    p.add_argument("suite", choices=["pair-identity", "fibers", "moments"])
    p.add_argument("--num-perms", type=int, default=20)

    p = sub.add_parser("envelope", parents=[common, stat], help="bound envelopes")
    p.add_argument("--delta", type=float)
    p.add_argument("--theta", type=float)
    p.add_argument("--c1", type=float)
    p.add_argument("--delta1-c", type=float)
    p.add_argument("--z", help="comma-separated z values")
    p.add_argument("--t", help="comma-separated t values")

    p = sub.add_parser("stats", parents=[common, stat], help="evaluate one statistic")
    p.add_argument("--perm", help="1-based permutation, e.g. 2,1,3")
    p.add_argument("--data", help="two-column x,y CSV for the chatterjee statistic")
    p.add_argument("--header", action="store_true", help="CSV has a header row")
    return ap


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)
    ov = {
        "statistic": {"kind": g("builtin"), "n": g("n"), "n1": g("n1"), "n2": g("n2"),
                      "normalization": g("normalization")},
        "simulation": {"seed": g("seed"), "workers": g("workers"),
                       "num_samples": g("num_samples"), "z_max": g("z_max"),
                       "z_step": g("z_step"), "offset_lattice": g("offset_lattice"),
                       "continuity_correction": g("continuity_correction"),
                       "allow_beyond_cap": g("allow_beyond_cap")},
        "envelope": {"theta": g("theta"), "c1": g("c1"), "delta1_c": g("delta1_c"),
                     "delta": g("delta"), "t": g("t")},
    }
    if args.command == "simulate":
        ov["simulation"]["z_points"] = g("z")
    elif args.command == "envelope":
        ov["envelope"]["z"] = g("z")
    return ov


COMMANDS = {"decompose": cmd_decompose, "simulate": cmd_simulate, "verify": cmd_verify,
            "envelope": cmd_envelope, "stats": cmd_stats}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        file_cfg = read_config(args.config) if args.config else {}
        cfg = resolve_config(file_cfg, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (KernelError, SpecError, TieError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
