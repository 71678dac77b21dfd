"""Command-line front end: allocators, simulations and figure sweeps.

All commands print (or write with ``--output``) tab-separated tables preceded
by ``# key: value`` metadata lines. Exit codes: 0 ok, 1 other failure,
2 configuration error, 3 numerical degeneracy, 4 infeasible.
"""
from __future__ import annotations

import argparse
import io
import itertools
import math
import subprocess
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, alloc, analysis, montecarlo
from .errors import ConfigError, InfeasibleError, NomaError, NumericalDegeneracyError
from .system import (D1, D2, QUANTIZERS, SystemConfig, cluster_config, dbm_to_mw, load_config,
                     reference_config)

FIGURES = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "custom")


# ---------------------------------------------------------------------------
# table output

def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() or "unknown"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(round(v, 10))
    return str(v)


@dataclass
class Table:
    columns: list
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append(row)

    def render(self) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}: {v}\n")
        buf.write("\t".join(self.columns) + "\n")
        for r in self.rows:
            buf.write("\t".join(_fmt(r.get(c)) for c in self.columns) + "\n")
        return buf.getvalue()


def _emit(table: Table, output):
    text = table.render()
    if output in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(output).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"{output}: cannot write results ({exc.strerror or exc})") from exc


def _meta(cfg: SystemConfig, command: str, seed=None, **extra) -> dict:
    m = {"nomalf": __version__, "command": command, "config_digest": cfg.digest(),
         "seed": cfg.rng_seed if seed is None else seed, "git_describe": git_describe()}
    m.update(extra)
    return m


# ---------------------------------------------------------------------------
# config assembly

def _parse_matrix(text: str) -> np.ndarray:
    try:
        return np.array([[float(x) for x in row.split(",")] for row in text.split(";")])
    except ValueError as exc:
        raise ConfigError(f"cannot parse matrix {text!r}; use '25,35;27,37;29,39'") from exc


def build_config(args) -> tuple[SystemConfig, dict]:
    if args.config:
        try:
            cfg, opts = load_config(args.config)
        except FileNotFoundError as exc:
            raise ConfigError(f"{args.config}: no such config file") from exc
    else:
        cfg, opts = reference_config(D2 if args.preset == "d2" else D1), {"quantizer": "rvq"}
    changes = {}
    for name in ("M", "N", "K", "B", "alpha"):
        v = getattr(args, name, None)
        if v is not None:
            changes[name] = v
    if args.P_dbm is not None:
        changes["P"] = dbm_to_mw(args.P_dbm)
    if args.distances is not None:
        d = _parse_matrix(args.distances)
        changes["distances"] = d
        changes.setdefault("N", d.shape[0])
        changes.setdefault("K", d.shape[1])
        if args.noise_dbm is None and np.shape(cfg.noise_vars) != d.shape:
            changes["noise_vars"] = np.full(d.shape, float(np.asarray(cfg.noise_vars).flat[0]))
    if args.noise_dbm is not None:
        shape = changes.get("distances", cfg.distances).shape
        changes["noise_vars"] = np.full(shape, dbm_to_mw(args.noise_dbm))
    if args.trials is not None:
        changes["mc_trials"] = args.trials
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if changes:
        cfg = cfg.replace(**changes)
    if args.quantizer is not None:
        opts["quantizer"] = args.quantizer
    if args.threads is not None:
        opts["threads"] = args.threads
    return cfg, opts


def _common(p: argparse.ArgumentParser):
    g = p.add_argument_group("scenario")
    g.add_argument("--config", help="TOML config file (see docs/config.md)")
    g.add_argument("--preset", choices=("d1", "d2"), default="d1",
                   help="built-in scenario when no --config is given")
    g.add_argument("--M", type=int)
    g.add_argument("--N", type=int)
    g.add_argument("--K", type=int)
    g.add_argument("--B", type=int)
    g.add_argument("--P-dbm", dest="P_dbm", type=float)
    g.add_argument("--alpha", type=float)
    g.add_argument("--distances", help="N x K matrix, rows separated by ';'")
    g.add_argument("--noise-dbm", dest="noise_dbm", type=float)
    g.add_argument("--trials", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--quantizer", choices=QUANTIZERS)
    g.add_argument("--threads", type=int, help="worker threads (default NOMALF_THREADS or CPU count)")
    p.add_argument("--output", "-o", default="-", help="output file (default stdout)")


# ---------------------------------------------------------------------------
# commands

def _user_rows(table, sc, **cols):
    for n, k in np.ndindex(sc.N, sc.K):
        row = {"cluster": n + 1, "user": k + 1, "user_id": int(sc.user_ids[n, k])}
        for name, arr in cols.items():
            row[name] = arr[n, k]
        table.add(**row)


def cmd_cluster(args):
    cfg, _ = build_config(args)
    sc = cluster_config(cfg)
    t = Table(["cluster", "user", "user_id", "distance_m", "noise_mw", "cnr"], meta=_meta(cfg, "cluster"))
    _user_rows(t, sc, distance_m=sc.config.distances, noise_mw=sc.config.noise_vars, cnr=sc.cnr)
    _emit(t, args.output)


def cmd_allocate_power(args):
    cfg, _ = build_config(args)
    pw = alloc.allocate_power(cluster_config(cfg), args.power_scheme, not args.no_reduce)
    sc = pw.scenario
    meta = _meta(cfg, "allocate-power", C_star=_fmt(pw.C_star), n_active_clusters=pw.n_active_clusters,
                 layout=f"{sc.N}x{sc.K}", notes="; ".join(pw.notes) or "-")
    t = Table(["cluster", "phi", "cluster_power_mw", "per_user_mw"], meta=meta)
    for n in range(sc.N):
        t.add(cluster=n + 1, phi=pw.phi[n], cluster_power_mw=pw.cluster_power[n],
              per_user_mw=pw.per_user[n, 0])
    _emit(t, args.output)


def cmd_allocate_bits(args):
    cfg, _ = build_config(args)
    sc = cluster_config(cfg)
    pw = alloc.allocate_power(sc, args.power_scheme, not args.no_reduce)
    bits = alloc.allocate_bits(pw.scenario, pw, args.bit_scheme)
    meta = _meta(cfg, "allocate-bits", bit_scheme=args.bit_scheme, power_scheme=args.power_scheme,
                 total_bits=bits.total_used)
    t = Table(["cluster", "user", "user_id", "relaxed_bits", "bits"], meta=meta)
    _user_rows(t, pw.scenario, relaxed_bits=bits.relaxed, bits=bits.bits)
    _emit(t, args.output)


def cmd_joint(args):
    cfg, _ = build_config(args)
    pw, bits = alloc.joint_optimize(cluster_config(cfg), not args.no_reduce)
    sc = pw.scenario
    meta = _meta(cfg, "joint", C_star=_fmt(pw.C_star), n_active_clusters=pw.n_active_clusters,
                 layout=f"{sc.N}x{sc.K}", notes="; ".join(pw.notes) or "-", total_bits=bits.total_used)
    t = Table(["cluster", "user", "user_id", "phi", "power_mw", "relaxed_bits", "bits"], meta=meta)
    phi = np.repeat(pw.phi[:, None], sc.K, axis=1)
    _user_rows(t, sc, phi=phi, power_mw=pw.per_user, relaxed_bits=bits.relaxed, bits=bits.bits)
    _emit(t, args.output)


def cmd_simulate(args):
    cfg, opts = build_config(args)
    sc = cluster_config(cfg)
    threads = opts.get("threads")
    q = opts.get("quantizer", "rvq")
    if args.scheme == "oma":
        res = montecarlo.simulate_oma(sc, quantizer=q, threads=threads)
        t = Table(["cluster", "user", "user_id", "rate", "se"],
                  meta=_meta(cfg, "simulate", scheme="oma", esr=_fmt(res.esr), esr_se=_fmt(res.esr_se),
                             trials=res.trials, quantizer=q))
        _user_rows(t, sc, rate=res.per_user_rate, se=res.per_user_se)
        _emit(t, args.output)
        return
    res, pw, bits = montecarlo.run_scheme(sc, args.scheme, quantizer=q, threads=threads)
    s = pw.scenario
    if args.trace:
        montecarlo.dump_trace(args.trace, s, bits.bits, res.seed, min(res.trials, args.trace_trials), q,
                              res.csi_model)
    lb1, flags = analysis.lb1_table(s, pw.per_user, bits.bits)
    ideal = analysis.ideal_table(s, pw.per_user)
    ub = analysis.loss_ub_table(s, pw.per_user, bits.bits)
    meta = _meta(cfg, "simulate", scheme=args.scheme, quantizer=q, trials=res.trials,
                 layout=f"{s.N}x{s.K}", esr=_fmt(res.esr), esr_se=_fmt(res.esr_se),
                 lb1_esr=_fmt(lb1.sum()), ideal_esr=_fmt(ideal.sum()),
                 numerics_flags=",".join(sorted(flags)) or "-")
    t = Table(["cluster", "user", "user_id", "power_mw", "bits", "rate", "se", "lb1", "ideal", "loss_ub"],
              meta=meta)
    _user_rows(t, s, power_mw=pw.per_user, bits=bits.bits, rate=res.per_user_rate, se=res.per_user_se,
               lb1=lb1, ideal=ideal, loss_ub=ub)
    _emit(t, args.output)


# ---------------------------------------------------------------------------
# experiments

@dataclass(frozen=True)
class ExperimentSpec:
    figure_id: str
    sweep: str                  # "P" (dBm) or "B" (bits)
    values: tuple
    schemes: tuple
    output_path: str = "-"

    def __post_init__(self):
        if self.figure_id not in FIGURES:
            raise ConfigError(f"unknown figure {self.figure_id!r}; choose from {FIGURES}")
        if self.sweep not in ("P", "B"):
            raise ConfigError("sweep must be over P or B")
        if not self.values:
            raise ConfigError("sweep is empty")
        if not self.schemes:
            raise ConfigError("no schemes given")
        bad = [s for s in self.schemes if s not in montecarlo.SCHEMES]
        if bad:
            raise ConfigError(f"unknown schemes {bad}; choose from {montecarlo.SCHEMES}")


# figure defaults: scenario, budget, sweep and schemes
FIGURE_DEFAULTS = {
    "fig1": dict(D=D1, B=72, sweep="P", values=(20.0, 30.0, 40.0), schemes=("joint",)),
    "fig2": dict(D=D1, B=42, sweep="P", values=tuple(float(x) for x in range(0, 61, 10)),
                 schemes=("joint", "alt-csi")),
    "fig3": dict(D=D1, B=42, sweep="P", values=tuple(float(x) for x in range(0, 61, 10)),
                 schemes=("bits-only", "ref-bits", "equal-both")),
    "fig4": dict(D=D1, B=60, sweep="P", values=tuple(float(x) for x in range(0, 61, 10)),
                 schemes=("bits-only", "ref-bits")),
    "fig5": dict(D=D2, B=42, sweep="P", values=tuple(float(x) for x in range(0, 61, 10)),
                 schemes=("joint", "bits-only", "equal-both")),
    "fig6": dict(D=D2, B=None, sweep="B", values=tuple(float(x) for x in range(12, 85, 12)),
                 schemes=("joint", "bits-only", "equal-both", "oma")),
}


def _frange(text: str) -> tuple:
    """'start:stop:step' (inclusive stop) or a comma list."""
    try:
        if ":" in text:
            a, b, s = (float(x) for x in text.split(":"))
            if s <= 0:
                raise ConfigError("sweep step must be positive")
            n = int(math.floor((b - a) / s + 1e-9)) + 1
            return tuple(a + i * s for i in range(n))
        return tuple(float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {text!r}; use 'start:stop:step' or 'a,b,c'") from None


def _user_cols(n_users):
    cols = []
    for name in ("rate", "se", "bits", "power_mw"):
        cols += [f"{name}_u{i}" for i in range(n_users)]
    return cols


def _per_user(row, sc, name, arr):
    for n, k in np.ndindex(sc.N, sc.K):
        row[f"{name}_u{int(sc.user_ids[n, k])}"] = arr[n, k]


def run_experiment(spec: ExperimentSpec, cfg: SystemConfig, quantizer="rvq", threads=None) -> Table:
    """One row per (sweep value, scheme[, clustering variant])."""
    n_users = cfg.N * cfg.K
    cols = ["sweep", "value", "scheme", "variant", "P_dbm", "B", "layout", "esr", "esr_se",
            "loss", "loss_se", "lb1_esr", "ideal_esr", "loss_ub_sum"] + _user_cols(n_users)
    table = Table(cols, meta=_meta(cfg, "experiment", figure=spec.figure_id, sweep=spec.sweep,
                                   schemes=",".join(spec.schemes), quantizer=quantizer,
                                   trials=cfg.mc_trials))
    for v in spec.values:
        point = cfg.with_power_dbm(v) if spec.sweep == "P" else cfg.replace(B=int(round(v)))
        sc = cluster_config(point)
        base = dict(sweep=spec.sweep, value=v, P_dbm=point.P_dbm, B=point.B)
        if spec.figure_id == "fig1":
            perms = list(itertools.permutations(range(1, sc.N + 1)))
            out = montecarlo.clustering_experiment(sc, perms, quantizer=quantizer, threads=threads)
            for perm, o in out.items():
                table.add(**base, scheme="joint", variant="(" + ",".join(map(str, perm)) + ")",
                          layout=f"{sc.N}x{sc.K}", esr=o.esr, esr_se=o.esr_se, loss=o.loss,
                          loss_se=o.loss_se)
            continue
        for scheme in spec.schemes:
            res, pw, bits = montecarlo.run_scheme(sc, scheme, quantizer=quantizer, threads=threads)
            row = dict(base, scheme=scheme, variant="-", esr=res.esr, esr_se=res.esr_se)
            if pw is None:   # OMA
                row["layout"] = f"{sc.N}x{sc.K}"
                _per_user(row, sc, "rate", res.per_user_rate)
                _per_user(row, sc, "se", res.per_user_se)
                _per_user(row, sc, "bits", alloc.equal_bits(sc).bits)
                _per_user(row, sc, "power_mw", np.full((sc.N, sc.K), point.P / sc.N / sc.K))
                table.add(**row)
                continue
            s = pw.scenario
            row["layout"] = f"{s.N}x{s.K}"
            if scheme != "alt-csi":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    row["lb1_esr"] = float(analysis.lb1_table(s, pw.per_user, bits.bits)[0].sum())
                row["ideal_esr"] = float(analysis.ideal_table(s, pw.per_user).sum())
                row["loss_ub_sum"] = float(analysis.loss_ub_table(s, pw.per_user, bits.bits).sum())
            for name, arr in (("rate", res.per_user_rate), ("se", res.per_user_se),
                              ("bits", bits.bits), ("power_mw", pw.per_user)):
                _per_user(row, s, name, arr)
            table.add(**row)
    return table


def cmd_experiment(args):
    fig = args.figure
    if fig == "custom":
        cfg, opts = build_config(args)
        sweep = args.sweep or "P"
        values = _frange(args.values) if args.values else ((cfg.P_dbm,) if sweep == "P" else (cfg.B,))
        schemes = tuple(args.schemes.split(",")) if args.schemes else ("joint",)
    else:
        d = FIGURE_DEFAULTS[fig]
        if not args.config and args.distances is None:
            args.preset = "d2" if d["D"] is D2 else "d1"
        if args.B is None and d["B"] is not None and not args.config:
            args.B = d["B"]
        cfg, opts = build_config(args)
        sweep = d["sweep"]
        values = _frange(args.values) if args.values else d["values"]
        schemes = tuple(args.schemes.split(",")) if args.schemes else d["schemes"]
    spec = ExperimentSpec(fig, sweep, values, schemes, args.output)
    table = run_experiment(spec, cfg, opts.get("quantizer", "rvq"), opts.get("threads"))
    _emit(table, spec.output_path)


def cmd_validate_specfun(args):
    from .validate import specfun_report

    rows, ok = specfun_report()
    t = Table(["function", "args", "value", "reference", "rel_error", "tolerance", "pass"],
              meta={"nomalf": __version__, "command": "validate-specfun", "git_describe": git_describe()})
    for r in rows:
        t.add(**r)
    _emit(t, args.output)
    return 0 if ok else 1


# ---------------------------------------------------------------------------

def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nomalf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("cluster", help="cluster users by large-scale gain")
    _common(s)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("allocate-power", help="cluster power fractions")
    _common(s)
    s.add_argument("--power-scheme", choices=alloc.POWER_SCHEMES, default="joint")
    s.add_argument("--no-reduce", action="store_true", help="fail instead of dropping clusters")
    s.set_defaults(func=cmd_allocate_power)

    s = sub.add_parser("allocate-bits", help="feedback bit allocation")
    _common(s)
    s.add_argument("--power-scheme", choices=alloc.POWER_SCHEMES, default="joint")
    s.add_argument("--bit-scheme", choices=alloc.BIT_SCHEMES, default="proposed")
    s.add_argument("--no-reduce", action="store_true")
    s.set_defaults(func=cmd_allocate_bits)

    s = sub.add_parser("joint", help="joint power and bit allocation")
    _common(s)
    s.add_argument("--no-reduce", action="store_true")
    s.set_defaults(func=cmd_joint)

    s = sub.add_parser("simulate", help="Monte Carlo rates with analytical bounds")
    _common(s)
    s.add_argument("--scheme", choices=montecarlo.SCHEMES, default="joint")
    s.add_argument("--trace", help="dump the first block of realizations to this binary file")
    s.add_argument("--trace-trials", type=int, default=1000)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("experiment", help="figure sweeps")
    _common(s)
    s.add_argument("--figure", choices=FIGURES, default="custom")
    s.add_argument("--sweep", choices=("P", "B"), help="custom sweep variable")
    s.add_argument("--values", help="sweep values 'start:stop:step' or 'a,b,c'")
    s.add_argument("--schemes", help="comma list of " + ",".join(montecarlo.SCHEMES))
    s.set_defaults(func=cmd_experiment)

    s = sub.add_parser("validate-specfun", help="check special functions against scipy references")
    s.add_argument("--output", "-o", default="-")
    s.set_defaults(func=cmd_validate_specfun)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        rc = args.func(args)
    except ConfigError as exc:
        print(f"nomalf: config error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except NumericalDegeneracyError as exc:
        print(f"nomalf: numerical degeneracy: {exc}", file=sys.stderr)
        return NumericalDegeneracyError.exit_code
    except InfeasibleError as exc:
        print(f"nomalf: infeasible: {exc}", file=sys.stderr)
        return InfeasibleError.exit_code
    except (NomaError, OSError) as exc:
        print(f"nomalf: {exc}", file=sys.stderr)
        return 1
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
