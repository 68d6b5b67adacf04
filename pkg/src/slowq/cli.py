"""``slowq`` command line: solve, train, evaluate, compare and analyse configs.

Every command takes ``--config``, ``--seed`` and ``--out`` and writes plain
files into the output directory.  All randomness is derived from the seed by
named sub-streams, so a rerun with the same arguments reproduces every file
byte for byte whatever ``SLOWQ_THREADS`` says.

Exit codes: 0 ok, 1 bad config or usage, 2 state space over the cap,
3 numerical failure.
"""
from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click
import numpy as np

from ._threads import configure_threads
from .exact import STATE_CAP, solve_optimal, solve_optimal_np
from .fluid import (DT, EQ_TOL, HORIZON, SETTLE_STEPS, EqualSplit, find_equilibria,
                    integrate, two_class_equilibria, vector_field_export)
from .learn import adp_train, adp_train_np, diagnostics_csv
from .model import (ConfigError, LinearSlowdown, NumericalError, StateSpaceTooLarge,
                    WaitDerivedSlowdown, load_config)
from .policy import BENCHMARKS, BenchmarkPolicy, load_policy, save_policy, strict_priority
from .sim import DEFAULT_T, simulate_long_run, simulate_wait_dependent, trace_events

U64 = click.IntRange(0, 2**64 - 1)
COMPARE_DEFAULT = "optimal,adp," + ",".join(BENCHMARKS)


def _sig(v):
    return float(f"{v:.6g}")


def _plain(obj):
    """JSON-safe copy with floats cut to 6 significant digits."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return _sig(v) if np.isfinite(v) else None
    return obj


class Run:
    def __init__(self, command, config, seed, out, knobs):
        self.cfg = load_config(config)
        self.seed = seed
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.summary = {"command": command, "seed": seed, "config": self.cfg.to_dict(),
                        "knobs": dict(knobs)}

    def write(self, name, text):
        (self.out / name).write_text(text)

    def finish(self, **results):
        self.summary.update(results)
        self.write("summary.json", json.dumps(_plain(self.summary), indent=2, sort_keys=True)
                   + "\n")


def common(f):
    f = click.option("--out", required=True, type=click.Path(file_okay=False),
                     help="Output directory (created if missing).")(f)
    f = click.option("--seed", required=True, type=U64, help="Master seed.")(f)
    f = click.option("--config", required=True, type=click.Path(exists=True, dir_okay=False),
                     help="System config JSON.")(f)
    return f


def learn_options(f):
    opts = [
        click.option("--N", "N", type=int, default=None,
                     help="Sampled states (default 5% of the box, at most 5000)."),
        click.option("--n-max", type=int, default=None,
                     help="Policy iterations (default 5, 15 for sparse samples)."),
        click.option("--n-step", type=int, default=30, show_default=True),
        click.option("--n-tilde-max", type=int, default=2000, show_default=True),
        click.option("--alpha", type=float, default=0.95, show_default=True),
        click.option("--T", "T", type=int, default=DEFAULT_T, show_default=True,
                     help="Truncation length of a coupled run."),
        click.option("--no-adaptive", is_flag=True, help="Spend the full budget everywhere."),
        click.option("--degree", type=int, default=3, show_default=True),
        click.option("--eval-horizon", type=int, default=10**6, show_default=True),
        click.option("--eval-reps", type=int, default=4, show_default=True),
    ]
    for o in reversed(opts):
        f = o(f)
    return f


def _learn_kw(kn):
    return dict(N=kn["N"], n_max=kn["n_max"], n_step=kn["n_step"],
                n_tilde_max=kn["n_tilde_max"], alpha=kn["alpha"], T=kn["T"],
                adaptive=not kn["no_adaptive"], degree=kn["degree"],
                eval_horizon=kn["eval_horizon"], eval_reps=kn["eval_reps"])


def _estimates_csv(diag):
    parts = []
    for row in diag:
        text = row["estimates"].to_csv()
        if not text:
            continue
        lines = text.rstrip("\n").split("\n")
        if not parts:
            parts.append("iteration," + lines[0])
        parts.extend(f"{row['iteration']},{ln}" for ln in lines[1:])
    return "\n".join(parts) + "\n" if parts else ""


def _diag_summary(diag):
    return [{k: v for k, v in row.items() if k != "estimates"} for row in diag]


def _is_wait_config(cfg):
    return all(isinstance(c.slowdown, WaitDerivedSlowdown) for c in cfg.classes)


def _parse_policy(spec, cfg, p):
    s = spec.strip().lower()
    if s.startswith("static:"):
        try:
            order = [int(t) - 1 for t in s[7:].split(",")]
        except ValueError:
            raise ConfigError(f"bad static order {spec!r}") from None
        pol = strict_priority(order)
        pol._check(cfg)
        return pol
    if s == "equal_split":
        return EqualSplit()
    return load_policy(spec, cfg, p=p)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
def cli():
    """Scheduling multiclass multiserver queues with congestion slowdown."""
    configure_threads()


@cli.command()
@common
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.option("--state-cap", type=int, default=STATE_CAP, show_default=True)
def solve(config, seed, out, **kn):
    """Exact optimal policy by relative value iteration."""
    run = Run("solve", config, seed, out, kn)
    cfg = run.cfg
    if cfg.mode == "nonpreemptive":
        vt, pol = solve_optimal_np(cfg, tol=kn["tol"], state_cap=kn["state_cap"])
    else:
        vt, pol = solve_optimal(cfg, tol=kn["tol"], state_cap=kn["state_cap"])
    run.write("policy.csv", pol.to_csv(cfg))
    run.write("values.csv", vt.to_csv())
    run.finish(gamma=vt.gamma, iterations=vt.iterations)
    click.echo(f"gamma* = {vt.gamma:.6g}")


@cli.command()
@common
@learn_options
@click.option("--init", default="fluid", show_default=True,
              help="Initial policy: fluid, a benchmark name or a policy file.")
@click.option("--fluid-iterations", type=int, default=3, show_default=True)
def train(config, seed, out, **kn):
    """Simulation-based policy iteration with a classifier policy."""
    run = Run("train", config, seed, out, kn)
    cfg = run.cfg
    if cfg.mode != "preemptive":
        raise ConfigError("train is for preemptive configs; use train-np")
    init, pi0 = kn["init"], None
    if init != "fluid" and init not in BENCHMARKS:
        pi0 = load_policy(init, cfg)
    pol, diag = adp_train(cfg, pi0=pi0, seed=seed, init=init if pi0 is None else "fluid",
                          fluid_iterations=kn["fluid_iterations"], **_learn_kw(kn))
    _write_training(run, pol, diag)


@cli.command("train-np")
@common
@learn_options
@click.option("--init", default="cmu_zero", show_default=True,
              help="Initial admission rule: a benchmark name or a policy file.")
def train_np(config, seed, out, **kn):
    """Policy iteration over admission decisions of a non-preemptive system."""
    run = Run("train-np", config, seed, out, kn)
    cfg = run.cfg
    init, pi0 = kn["init"], None
    if init not in BENCHMARKS:
        pi0 = load_policy(init, cfg)
    pol, diag = adp_train_np(cfg, pi0=pi0, seed=seed,
                             init=init if pi0 is None else "cmu_zero", **_learn_kw(kn))
    _write_training(run, pol, diag)


def _write_training(run, pol, diag):
    save_policy(pol, run.cfg, run.out / "policy.json")
    run.write("diagnostics.csv", diagnostics_csv(diag))
    run.write("estimates.csv", _estimates_csv(diag))
    run.finish(iterations=_diag_summary(diag),
               total_samples=sum(r["samples"] for r in diag))
    if diag and "cost" in diag[-1]:
        click.echo(f"final cost = {diag[-1]['cost']:.6g} +- {diag[-1]['cost_ci']:.3g}")


@cli.command("eval")
@common
@click.option("--policy", "policy_spec", default="cmu_zero", show_default=True,
              help="Benchmark name, static:i,j,.. or a policy file.")
@click.option("--horizon", type=float, default=1e6, show_default=True,
              help="Uniformized steps, or days for wait-derived configs.")
@click.option("--warmup", type=float, default=None, help="Default 20% of the horizon.")
@click.option("--reps", type=int, default=10, show_default=True)
@click.option("--p", type=float, default=0.5, show_default=True,
              help="Routing probability of class 1.")
@click.option("--service", type=click.Choice(["lognormal", "exponential"]),
              default="lognormal", show_default=True)
@click.option("--trace", type=int, default=0, show_default=True,
              help="Also log this many events of one run to trace.csv.")
def eval_(config, seed, out, **kn):
    """Long-run cost and waits of one policy."""
    run = Run("eval", config, seed, out, kn)
    cfg = run.cfg
    pol = _parse_policy(kn["policy_spec"], cfg, kn["p"])
    if _is_wait_config(cfg) and cfg.mode == "nonpreemptive":
        st = simulate_wait_dependent(cfg, pol, kn["horizon"], kn["warmup"], kn["reps"], seed,
                                     service=kn["service"])
    else:
        warm = None if kn["warmup"] is None else int(kn["warmup"])
        st = simulate_long_run(cfg, pol, int(kn["horizon"]), warm, kn["reps"], seed)
    run.write("stats.csv", st.to_csv())
    if kn["trace"] > 0:
        run.write("trace.csv", trace_events(cfg, pol, kn["trace"], seed))
    run.finish(result=st.summary())
    click.echo(f"cost = {st.cost_mean:.6g} +- {st.cost_ci:.3g}")


@cli.command()
@common
@click.option("--policies", default=COMPARE_DEFAULT, show_default=True,
              help="Comma list of optimal, adp, benchmark names or policy files.")
@click.option("--adp", "adp_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Trained policy file; otherwise ADP is trained here.")
@click.option("--horizon", type=int, default=10**6, show_default=True)
@click.option("--warmup", type=int, default=None, help="Default 20% of the horizon.")
@click.option("--reps", type=int, default=10, show_default=True)
@click.option("--state-cap", type=int, default=STATE_CAP, show_default=True)
@learn_options
def compare(config, seed, out, **kn):
    """Cost of several policies on common random numbers, with gaps."""
    run = Run("compare", config, seed, out, kn)
    cfg = run.cfg
    nonpre = cfg.mode == "nonpreemptive"
    names = [s.strip() for s in kn["policies"].split(",") if s.strip()]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate policy in --policies")
    pols, exact, notes = {}, {}, {}
    for name in names:
        if name == "optimal":
            try:
                solver = solve_optimal_np if nonpre else solve_optimal
                vt, pol = solver(cfg, state_cap=kn["state_cap"])
            except StateSpaceTooLarge as exc:
                notes["optimal"] = str(exc)
                continue
            pols[name], exact[name] = pol, vt.gamma
        elif name == "adp":
            if kn["adp_file"]:
                pols[name] = load_policy(kn["adp_file"], cfg)
            else:
                trainer = adp_train_np if nonpre else adp_train
                kw = _learn_kw(kn)
                kw["evaluate"] = False
                pols[name], _ = trainer(cfg, seed=seed, **kw)
                save_policy(pols[name], cfg, run.out / "adp_policy.json")
        else:
            pols[name] = _parse_policy(name, cfg, 0.5)
    rows = {}
    for name, pol in pols.items():
        st = simulate_long_run(cfg, pol, kn["horizon"], kn["warmup"], kn["reps"], seed)
        rows[name] = (_sig(st.cost_mean), _sig(st.cost_ci))
    ref = "optimal" if "optimal" in rows else ("adp" if "adp" in rows else None)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "cost", "ci", "gap_pct", "exact_gamma"])
    table = []
    for name in sorted(rows):
        cost, ci = rows[name]
        gap = 100.0 * (cost / rows[ref][0] - 1.0) if ref and rows[ref][0] > 0 else float("nan")
        g = exact.get(name)
        w.writerow([name, f"{cost:.6g}", f"{ci:.6g}", f"{gap:.6g}",
                    "" if g is None else f"{g:.6g}"])
        table.append({"policy": name, "cost": cost, "ci": ci, "gap_pct": gap})
        click.echo(f"{name:>14s}  {cost:10.6g} +- {ci:<9.3g} gap {gap:8.3f}%")
    run.write("compare.csv", buf.getvalue())
    run.finish(reference=ref, rows=table, skipped=notes, exact_gamma=exact)


@cli.command()
@common
@click.option("--policy", "policy_spec", default="static:1,2", show_default=True,
              help="static:i,j,.., equal_split, a benchmark name or a policy file.")
@click.option("--grid-step", type=float, default=1.0, show_default=True,
              help="Spacing of the exported vector field.")
@click.option("--start-step", type=float, default=None,
              help="Spacing of equilibrium search starts (default kappa/10).")
@click.option("--trajectory", default=None, help="Also integrate from this point, e.g. 5,5.")
@click.option("--dt", type=float, default=DT, show_default=True)
@click.option("--fluid-horizon", type=float, default=HORIZON, show_default=True)
@click.option("--eq-tol", type=float, default=EQ_TOL, show_default=True)
@click.option("--settle-steps", type=int, default=SETTLE_STEPS, show_default=True)
def fluid(config, seed, out, **kn):
    """Fluid vector field and equilibria under a fixed policy."""
    run = Run("fluid", config, seed, out, kn)
    cfg = run.cfg
    pol = _parse_policy(kn["policy_spec"], cfg, 0.5)
    fkw = dict(dt=kn["dt"], horizon=kn["fluid_horizon"], eq_tol=kn["eq_tol"],
               settle_steps=kn["settle_steps"])
    if cfg.n_classes == 2:
        run.write("vector_field.csv", vector_field_export(cfg, pol, kn["grid_step"]))
    closed = None
    linear = all(isinstance(c.slowdown, LinearSlowdown) for c in cfg.classes)
    if (cfg.n_classes == 2 and linear and isinstance(pol, BenchmarkPolicy)
            and pol.rule == "static" and tuple(pol.order) == (0, 1)):
        try:
            closed = [e.to_dict() for e in two_class_equilibria(cfg)]
        except ConfigError as exc:
            closed = {"unavailable": str(exc)}
    found = find_equilibria(cfg, pol, grid_step=kn["start_step"], **fkw)
    detected = [e.to_dict() for e in found]
    doc = {"policy": kn["policy_spec"], "closed_form": closed, "detected": detected,
           "stable_count": sum(1 for e in found if e.stable)}
    run.write("equilibria.json", json.dumps(_plain(doc), indent=2, sort_keys=True) + "\n")
    if kn["trajectory"]:
        try:
            x0 = np.array([float(t) for t in kn["trajectory"].split(",")])
        except ValueError:
            raise ConfigError(f"bad trajectory start {kn['trajectory']!r}") from None
        traj = integrate(cfg, pol, x0, sample_every=100, **fkw)
        run.write("trajectory.csv", traj.to_csv())
    run.finish(equilibria=detected, closed_form=closed)
    for e in found:
        click.echo(f"{e.kind:>13s} {np.round(e.point, 4).tolist()} stable={e.stable}")


@cli.command("case-study")
@common
@click.option("--p", type=float, default=0.46, show_default=True,
              help="Routing probability of class 1 when both classes wait.")
@click.option("--adp", "adp_file", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Trained admission policy; otherwise one is trained here.")
@click.option("--N", "N", type=int, default=200, show_default=True)
@click.option("--n-max", type=int, default=3, show_default=True)
@click.option("--n-tilde-max", type=int, default=2000, show_default=True)
@click.option("--horizon", type=float, default=1e6, show_default=True, help="Days.")
@click.option("--warmup", type=float, default=None, help="Default 20% of the horizon.")
@click.option("--reps", type=int, default=8, show_default=True)
@click.option("--service", type=click.Choice(["lognormal", "exponential"]),
              default="lognormal", show_default=True)
def case_study(config, seed, out, **kn):
    """Mean waits under routing, FCFS and a learned admission policy."""
    run = Run("case-study", config, seed, out, kn)
    cfg = run.cfg
    if not (_is_wait_config(cfg) and cfg.mode == "nonpreemptive"):
        raise ConfigError("case-study needs a non-preemptive wait-derived config")
    if kn["adp_file"]:
        adp = load_policy(kn["adp_file"], cfg)
    else:
        adp, _ = adp_train_np(cfg, N=kn["N"], n_max=kn["n_max"],
                              n_tilde_max=kn["n_tilde_max"], seed=seed, evaluate=False)
        save_policy(adp, cfg, run.out / "adp_policy.json")
    pols = {"adp_np": adp, "fcfs": BenchmarkPolicy("fcfs"),
            "routing": BenchmarkPolicy("routing", p=kn["p"])}
    res = {name: simulate_wait_dependent(cfg, pol, kn["horizon"], kn["warmup"], kn["reps"],
                                         seed, service=kn["service"])
           for name, pol in pols.items()}
    I = cfg.n_classes
    base = _sig(res["fcfs"].overall_wait_mean)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy"] + [f"wait_{i + 1}" for i in range(I)]
               + ["overall_wait", "overall_ci", "delta_vs_fcfs"])
    table = {}
    for name in sorted(res):
        st = res[name]
        overall = _sig(st.overall_wait_mean)
        w.writerow([name] + [f"{v:.6g}" for v in st.wait_mean]
                   + [f"{overall:.6g}", f"{st.overall_wait_ci:.6g}", f"{overall - base:.6g}"])
        table[name] = dict(st.summary(), delta_vs_fcfs=overall - base)
        click.echo(f"{name:>8s}  mean wait {overall:8.4g} days  (vs fcfs {overall - base:+.4g})")
    run.write("waits.csv", buf.getvalue())
    run.finish(results=table)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="slowq", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        return 1
    except StateSpaceTooLarge as exc:
        click.echo(f"state space too large: {exc}", err=True)
        return 2
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return 3
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
