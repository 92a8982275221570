"""Command-line interface: ``udid fit | simulate | sensitivity | diagnose``.

Configuration files are flat ``key = value`` text (``#`` starts a comment).
Exit codes: 0 success, 1 input or configuration error, 2 some estimator failed
(partial results are still written).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .baseline_pt import PT_ESTIMATORS, PtModel
from .data_model import PanelDataset, validate
from .discretized import DiscretizedModel
from .dgp import CONFIG_TYPES, config_dict, oracle_att0, simulate, zika_like
from .errors import UdidError, ValidationError
from .estimators import UDID_ESTIMATORS, UdidModel
from .sensitivity import covariate_invariance, sensitivity_sweep

EXIT_OK, EXIT_INPUT, EXIT_PARTIAL = 0, 1, 2

FIT_DEFAULTS = {
    "family": "gaussian",
    "or_spec": "loglinear",  # or "discretized"
    "M": "10",
    "post": "gaussian",  # discretized post-period baseline: gaussian | multinomial
    "interact": "auto",  # auto: interact the odds ratio with covariates when any are present
    "contrast": "additive",
    "ci_level": "0.95",
    "estimators": "glm,ipw,dr,pt-reg,pt-ipw,pt-dr",
    "sensitivity_estimator": "dr",
    "grid_lo": "-2",
    "grid_hi": "2",
    "grid_step": "0.05",
    "seed": "0",
}

SIM_DEFAULTS = {"dgp": "continuous_orec"}

RECORD_FIELDS = ("estimator", "estimand", "estimate", "se", "ci_lo", "ci_hi", "n", "n_treated",
                 "converged", "psi0", "psi1", "crude", "debias", "error")


class InputError(Exception):
    """Bad input file or configuration; maps to exit code 1."""


def read_config(path, defaults: dict) -> dict:
    cfg = dict(defaults)
    if path is None:
        return cfg
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string("[config]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    cfg.update(parser["config"])
    return cfg


def _check_keys(cfg, allowed):
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise InputError(f"unknown config keys: {', '.join(unknown)}")


def read_panel_csv(path) -> tuple[PanelDataset, list]:
    """Read ``y0, y1, a`` and optional ``x1..xp`` columns; returns (panel, covariate names)."""
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError(f"{path} is empty") from None
        missing = [c for c in ("y0", "y1", "a") if c not in header]
        if missing:
            raise InputError(f"missing required columns: {', '.join(missing)}")
        xcols = [h for h in header if h.startswith("x") and h[1:].isdigit()]
        xcols.sort(key=lambda h: int(h[1:]))
        if xcols != [f"x{j + 1}" for j in range(len(xcols))]:
            raise InputError("covariate columns must be named x1..xp without gaps")
        cols = ["y0", "y1", "a"] + xcols
        pos = [header.index(c) for c in cols]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InputError(f"row {lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rows.append([float(row[i]) for i in pos])
            except ValueError:
                raise InputError(f"row {lineno}: non-numeric value") from None
    if not rows:
        raise InputError(f"{path} has no data rows")
    arr = np.array(rows)
    d = PanelDataset(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3:])
    try:
        validate(d)
    except ValidationError as exc:
        raise InputError(str(exc)) from exc
    return d, xcols


def write_panel_csv(path, d: PanelDataset):
    header = ["y0", "y1", "a"] + [f"x{j + 1}" for j in range(d.p)]
    with open(path, "w", newline="", encoding="utf-8") as handle:
        out = csv.writer(handle, lineterminator="\n")
        out.writerow(header)
        for i in range(d.n):
            out.writerow([repr(float(d.y0[i])), repr(float(d.y1[i])), str(int(d.a[i]))]
                         + [repr(float(v)) for v in d.x[i]])


def _float(cfg, key):
    try:
        return float(cfg[key])
    except ValueError:
        raise InputError(f"config key {key} must be a number, got {cfg[key]!r}") from None


def _int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise InputError(f"config key {key} must be an integer, got {cfg[key]!r}") from None


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _records(reports, prefix="") -> list:
    out = []
    for rep in reports:
        rec = rep.record()
        rec["estimator"] = prefix + rec["estimator"]
        out.append({k: _clean(rec[k]) for k in RECORD_FIELDS if k in rec})
    return out


def _udid_model(d, cfg, estimators):
    contrast, level = cfg["contrast"], _float(cfg, "ci_level")
    interact = cfg["interact"]
    if interact not in ("auto", "true", "false"):
        raise InputError("interact must be auto, true or false")
    if cfg["or_spec"] == "loglinear":
        from .or_family import LogLinear

        inter = d.p > 0 if interact == "auto" else interact == "true"
        return UdidModel(d, cfg["family"], LogLinear(interact=inter), contrast, level, estimators)
    if cfg["or_spec"] == "discretized":
        inter = interact == "true"
        return DiscretizedModel(d, _int(cfg, "M"), None, inter, cfg["post"], contrast, level, estimators)
    raise InputError(f"or_spec must be loglinear or discretized, got {cfg['or_spec']!r}")


def _format_table(records) -> str:
    head = f"{'estimator':<16}{'estimate':>11}{'se':>10}{'ci_lo':>11}{'ci_hi':>11}{'crude':>11}{'debias':>11}  status"
    lines = [head, "-" * len(head)]

    def num(v):
        return f"{v:>11.4f}" if isinstance(v, float) else f"{'':>11}"

    for r in records:
        status = "ok" if r["converged"] else "FAILED: " + str(r.get("error", ""))
        se = f"{r['se']:>10.4f}" if isinstance(r["se"], float) else f"{'':>10}"
        lines.append(f"{r['estimator']:<16}{num(r['estimate'])}{se}{num(r['ci_lo'])}{num(r['ci_hi'])}"
                     f"{num(r.get('crude'))}{num(r.get('debias'))}  {status}")
    return "\n".join(lines) + "\n"


def _split_estimators(cfg):
    names = [e.strip() for e in cfg["estimators"].split(",") if e.strip()]
    if not names:
        raise InputError("no estimators requested")
    udid, pt = [], []
    for e in names:
        if e in UDID_ESTIMATORS:
            udid.append(e)
        elif e in PT_ESTIMATORS:
            pt.append(e)
        elif e == "discretized":
            udid.extend(UDID_ESTIMATORS)
            cfg["or_spec"] = "discretized"
        else:
            raise InputError(f"unknown estimator {e!r}")
    return list(dict.fromkeys(udid)), pt


def run_fit(d, cfg) -> list:
    udid, pt = _split_estimators(cfg)
    records = []
    if udid:
        model = _udid_model(d, cfg, udid)
        prefix = "discretized-" if cfg["or_spec"] == "discretized" else ""
        records += _records(model.fit().reports.values(), prefix)
    if pt:
        records += _records(PtModel(d, cfg["contrast"], _float(cfg, "ci_level"), pt).fit().reports.values())
    return records


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as handle:
        for r in records:
            handle.write(json.dumps(r, allow_nan=False) + "\n")


def cmd_fit(args) -> int:
    cfg = read_config(args.config, FIT_DEFAULTS)
    _check_keys(cfg, FIT_DEFAULTS)
    if args.estimators:
        cfg["estimators"] = args.estimators
    d, _ = read_panel_csv(args.input)
    try:
        records = run_fit(d, cfg)
    except (ValueError, UdidError) as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out)
    _write_jsonl(out.with_suffix(".jsonl"), records)
    table = _format_table(records)
    out.with_suffix(".txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK if all(r["converged"] for r in records) else EXIT_PARTIAL


def _sim_config(cfg):
    kind = cfg.pop("dgp")
    if kind == "zika_like":
        base = zika_like()
        kind = base.kind
    elif kind in CONFIG_TYPES:
        base = CONFIG_TYPES[kind]()
    else:
        raise InputError(f"unknown dgp {kind!r}; choose from {sorted(CONFIG_TYPES) + ['zika_like']}")
    cls = CONFIG_TYPES[kind]
    kinds = {f.name: f.type for f in fields(cls) if f.init}
    values = {k: v for k, v in config_dict(base).items() if k in kinds}
    for key, raw in cfg.items():
        if key not in kinds:
            raise InputError(f"unknown key {key!r} for dgp {kind}")
        if key == "mixture":
            nums = [float(v) for v in raw.replace(";", ",").split(",")]
            if len(nums) != 6:
                raise InputError("mixture needs six numbers: w1, m1, s1, w2, m2, s2")
            values[key] = (tuple(nums[:3]), tuple(nums[3:]))
        elif key in ("n", "seed", "n_cov"):
            values[key] = _int(cfg, key)
        elif key == "error_law":
            values[key] = raw
        else:
            values[key] = _float(cfg, key)
    try:
        sim = cls(**values)
        sim.check()
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid dgp config: {exc}") from exc
    return sim


def cmd_simulate(args) -> int:
    cfg = read_config(args.config, SIM_DEFAULTS)
    sim = _sim_config(cfg)
    d, att = simulate(sim)
    out = Path(args.out)
    write_panel_csv(out, d)
    truth, truth_se = oracle_att0(sim)
    sidecar = {"true_att": att, "att_scale": "additive", "truth_y1_untreated_treated": truth,
               "truth_mc_se": truth_se, "seed": sim.seed, "dgp": sim.kind,
               "params": {k: v for k, v in config_dict(sim).items() if k != "kind"}}
    out.with_suffix(".truth.json").write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK


def _grid(cfg):
    lo, hi, step = _float(cfg, "grid_lo"), _float(cfg, "grid_hi"), _float(cfg, "grid_step")
    if not (lo <= 0 <= hi and step > 0):
        raise InputError("grid must satisfy grid_lo <= 0 <= grid_hi with grid_step > 0")
    neg = -np.arange(0, -lo + step * 1e-9, step)[::-1]
    pos = np.arange(step, hi + step * 1e-9, step)
    return np.round(np.concatenate([neg, pos]), 12) + 0.0


def cmd_sensitivity(args) -> int:
    cfg = read_config(args.config, FIT_DEFAULTS)
    _check_keys(cfg, FIT_DEFAULTS)
    for key in ("grid_lo", "grid_hi", "grid_step"):
        value = getattr(args, key)
        if value is not None:
            cfg[key] = str(value)
    estimator = args.estimator or cfg["sensitivity_estimator"]
    if estimator not in UDID_ESTIMATORS:
        raise InputError(f"sensitivity estimator must be one of {UDID_ESTIMATORS}")
    d, _ = read_panel_csv(args.input)
    try:
        model = _udid_model(d, cfg, (estimator,))
        curve = sensitivity_sweep(model, estimator, _grid(cfg))
    except (ValueError, UdidError) as exc:
        raise InputError(str(exc)) from exc
    out = Path(args.out)
    with open(out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["d_prime", "estimate", "se", "ci_lo", "ci_hi", "converged"])
        for dp, est, se, lo, hi, ok in curve.rows():
            writer.writerow([repr(dp)] + [repr(v) if ok else "" for v in (est, se, lo, hi)] + [int(ok)])
    lines = [f"estimator {estimator}", f"sigma_y {curve.sigma_y!r}"]
    for side in ("negative", "positive"):
        lines.append(f"breakdown_nonsig_{side} {curve.breakdown_nonsig[side]}")
        lines.append(f"breakdown_zero_{side} {curve.breakdown_zero[side]}")
    summary = "\n".join(lines) + "\n"
    out.with_suffix(".summary.txt").write_text(summary, encoding="utf-8")
    sys.stdout.write(summary)
    return EXIT_OK if curve.converged.all() else EXIT_PARTIAL


def cmd_diagnose(args) -> int:
    d, names = read_panel_csv(args.input)
    try:
        rep = covariate_invariance(d, names)
    except UdidError as exc:
        raise InputError(str(exc)) from exc
    lines = [f"# {rep.note}", f"# reject when Wald > {rep.threshold:.4f}"]
    if not rep.covariates:
        lines.append("# no covariates in the input; nothing to test")
    lines.append(f"{'covariate':<12}{'term':<12}{'wald':>10}  reject")
    for name, term, stat, rej in rep.rows():
        lines.append(f"{name:<12}{term:<12}{stat:>10.4f}  {'yes' if rej else 'no'}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="udid", description="Difference-in-differences under "
                                     "odds-ratio equi-confounding.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit UDiD and parallel-trends estimators")
    p.add_argument("input")
    p.add_argument("--config")
    p.add_argument("--estimators", help="comma-separated subset, overrides the config")
    p.add_argument("--out", default="udid_result", help="output prefix for .jsonl and .txt")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="write a synthetic panel and a truth sidecar")
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="CSV path; the sidecar is <stem>.truth.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sensitivity", help="sweep the odds-ratio departure d'")
    p.add_argument("input")
    p.add_argument("--config")
    p.add_argument("--estimator", choices=UDID_ESTIMATORS)
    p.add_argument("--grid-lo", dest="grid_lo", type=float)
    p.add_argument("--grid-hi", dest="grid_hi", type=float)
    p.add_argument("--grid-step", dest="grid_step", type=float)
    p.add_argument("--out", default="sensitivity.csv")
    p.set_defaults(func=cmd_sensitivity)

    p = sub.add_parser("diagnose", help="covariate invariance Wald tests")
    p.add_argument("input")
    p.add_argument("--out")
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
