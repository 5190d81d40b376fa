"""Command-line experiment runner; every command writes CSV."""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed

from . import analytic as an
from ._validation import is_prime
from .config import EstimationMode, SystemConfig, TrafficConfig, load_config, validate
from .mac import Scheme, simulate_fast_retrial, simulate_single_shot
from .phy import PreambleCounter, build_alltop_pool, collision_stats, synthesize_channel
from .selftest import run_selftest

SCHEMA = "epaloha-csv/1"
VARIABLES = ("lambda", "lambda0", "K", "M", "alpha", "alpha0")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    start: float
    stop: float
    step: float
    overrides: dict = field(default_factory=dict)
    trials: int = 10_000
    slots: int = 10_000
    warmup: int = 1_000
    seed: int = 0

    def __post_init__(self):
        if self.variable not in VARIABLES + ("snr_db",):
            raise UsageError(f"unknown sweep variable {self.variable!r}")
        if not self.step > 0:
            raise UsageError("step must be > 0")
        if self.start > self.stop:
            raise UsageError("start must not exceed stop")

    def grid(self):
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        values = [round(self.start + i * self.step, 12) for i in range(n)]
        if self.variable in ("K", "M"):
            values = [int(round(v)) for v in values]
        return values


def _fmt(value):
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".9g")
    return str(value)


def write_csv(rows, out):
    """Rows are dicts sharing one key order; a schema column leads every row."""
    rows = list(rows)
    if not rows:
        return
    header = ["schema"] + list(rows[0])
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([SCHEMA] + [_fmt(row[k]) for k in header[1:]])


def _map_points(fn, points, n_jobs):
    if n_jobs == 1:
        return [fn(p) for p in points]
    return Parallel(n_jobs=n_jobs)(delayed(fn)(p) for p in points)


# -- analytic ------------------------------------------------------------------


def _poisson_lam(spec, x, M):
    if spec.variable == "alpha":
        return x * M
    if spec.variable == "lambda":
        return x
    raise UsageError("this formula sweeps lambda or alpha")


def _analytic_row(which, spec, x, M, params):
    row = {"variable": spec.variable, "x": x}
    if which == "eta_sa":
        if spec.variable != "K":
            raise UsageError("eta_sa sweeps K")
        lam = params.get("lam") or float(x)
        p = params.get("p")
        p = min(1.0, 1.0 / lam) if p is None else p
        row.update(eta_sa_known=an.eta_sa_known(x), eta_sa_blind=an.eta_sa_blind(p, lam),
                   inv_e=an.INV_E)
    elif which == "psi":
        if spec.variable not in ("alpha",):
            raise UsageError("psi sweeps alpha")
        row.update(psi=an.psi(x), q_ep=an.q_ep_asymptotic(x), q_ma=-math.expm1(-x),
                   delay_outage_ep_D2=an.delay_outage(an.q_ep_asymptotic(x), 2),
                   delay_outage_ma_D2=an.delay_outage(-math.expm1(-x), 2))
    elif which == "ratio":
        ratio = an.max_throughput_ratio()
        row.update(ratio=ratio, ep_max_normalized=an.INV_E * ratio,
                   ma_max_normalized=an.INV_E, psi_ratio=an.psi_max()[1] / an.INV_E)
    elif which == "users":
        if spec.variable != "K":
            raise UsageError("users sweeps K")
        row.update(M=M, n_ma=an.n_ma(x, M), s_bar=an.s_bar(x, M),
                   n_ep_upper=an.n_ep_upper(x, M))
    elif which == "poisson":
        if spec.variable == "M":
            lam = params.get("lam")
            if lam is None:
                raise UsageError("sweeping M needs --lam")
            M = x
        else:
            lam = _poisson_lam(spec, x, M)
        row.update(M=M, lam=lam, n_ma=an.n_ma_poisson(lam, M), q_ma=an.q_ma(lam, M),
                   n_ep_lower=an.n_ep_lower_poisson(lam, M),
                   n_ep_approx=an.n_ep_approx(lam, M),
                   psi_scaled=M * an.psi(min(1.0, lam / M)) if lam <= M else math.nan,
                   gap_lower=an.INV_E * lam * -math.expm1(-lam / M))
    elif which == "fixed_point":
        if spec.variable == "alpha0":
            lambda0 = x * M
        elif spec.variable == "lambda0":
            lambda0 = x
        else:
            raise UsageError("fixed_point sweeps lambda0 or alpha0")
        ma = an.solve_lambda_ma(lambda0, M)
        ep = an.solve_lambda_ep(lambda0, M)
        q_ma = an.q_ma(ma.lam, M) if ma.stable else math.nan
        q_ep = (1.0 - lambda0 / ep.lam) if ep.stable and ep.lam > 0 else (0.0 if ep.stable else math.nan)
        row.update(M=M, lambda0=lambda0, lam_ma=ma.lam, stable_ma=ma.stable, q_ma=q_ma,
                   lam_ep=ep.lam, stable_ep=ep.stable, q_ep=q_ep)
        for D in params.get("thresholds", (2,)):
            row[f"outage_ma_D{D}"] = q_ma**D if ma.stable else math.nan
            row[f"outage_ep_D{D}"] = q_ep**D if ep.stable else math.nan
    elif which == "pool":
        lam = _poisson_lam(spec, x, M)
        delta = params.get("delta", 0.01)
        pool = params.get("pool_size") or an.min_pool_size(lam, M, delta)
        exact, approx = an.no_collision_mixture(lam, M, pool)
        row.update(M=M, lam=lam, delta=delta, min_pool_size=an.min_pool_size(lam, M, delta),
                   pool_size=pool, no_collision_exact=exact, no_collision_approx=approx,
                   no_collision_first_order=1 - lam**2 / (2 * pool * M**2))
    elif which == "overhead":
        if spec.variable != "M":
            raise UsageError("overhead sweeps M")
        config = params["config"]
        w_max = params.get("w_max", 256)
        row.update(kappa=an.overhead_factor(config.t_p, config.t_d, config.t_f),
                   w_max=w_max, feedback_bits=an.feedback_bits(x, w_max))
    else:
        raise UsageError(f"unknown formula {which!r}")
    return row


FORMULAS = ("eta_sa", "psi", "ratio", "users", "poisson", "fixed_point", "pool", "overhead")


def cmd_analytic(spec, which, config, params=None):
    config = config.replace(**spec.overrides)
    params = dict(params or {}, config=config)
    M = config.M
    return [_analytic_row(which, spec, x, M, params) for x in spec.grid()]


# -- simulate --------------------------------------------------------------------


def _schemes(name):
    if name == "both":
        return [Scheme.MA, Scheme.EP]
    return [Scheme.parse(name)]


def _simulate_point(args):
    scheme, spec, x, config, params = args
    var = spec.variable
    M = int(x) if var == "M" else config.M
    config = config.replace(M=M)
    row = {"scheme": scheme.value, "M": M, "variable": var, "x": x}
    thresholds = params.get("thresholds", (2,))
    if var in ("lambda0", "alpha0"):
        lambda0 = x * M if var == "alpha0" else x
        stats = simulate_fast_retrial(scheme, config, lambda0, spec.slots + spec.warmup,
                                      spec.warmup, spec.seed, thresholds)
        row.update(load=lambda0, trials=0, slots=stats.slots, mean=stats.throughput,
                   stderr=math.nan, q=stats.empirical_q, throughput=stats.throughput,
                   empirical_lambda=stats.empirical_lambda,
                   status="diverged" if stats.diverged else "ok")
        for D in thresholds:
            row[f"outage_D{D}"] = stats.outage[D]
        return row
    if var == "K":
        traffic, load = TrafficConfig(fixed_k=int(x)), x
    elif var == "M":
        if params.get("K") is not None:
            traffic, load = TrafficConfig(fixed_k=params["K"]), params["K"]
        elif params.get("lam") is not None:
            traffic, load = TrafficConfig(lam=params["lam"]), params["lam"]
        elif params.get("alpha") is not None:
            traffic, load = TrafficConfig(lam=params["alpha"] * M), params["alpha"] * M
        else:
            raise UsageError("sweeping M needs --K, --lam or --alpha")
    else:
        load = x * M if var == "alpha" else x
        traffic = TrafficConfig(lam=load)
    s = simulate_single_shot(scheme, config, traffic, spec.trials, spec.seed)
    row.update(load=load, trials=spec.trials, slots=0, mean=s.mean, stderr=s.stderr,
               q=s.collision_fraction, throughput=s.mean, empirical_lambda=s.mean_active,
               status="ok")
    for D in thresholds:
        row[f"outage_D{D}"] = math.nan
    return row


def cmd_simulate(scheme, spec, config, params=None, n_jobs=1):
    params = params or {}
    config = config.replace(**spec.overrides)
    points = [(s, spec, x, config, params) for x in spec.grid() for s in _schemes(scheme)]
    return _map_points(_simulate_point, points, n_jobs)


# -- phy ---------------------------------------------------------------------------


def _phy_point(args):
    spec, x, config, params = args
    t_p = params.get("t_p", config.t_p)
    pool = build_alltop_pool(t_p)
    k = params.get("k", 2)
    snr_db = x if spec.variable == "snr_db" else params.get("snr_db", 20.0)
    noise = 0.0 if params.get("noiseless") else config.noise_power
    snr = 10 ** (snr_db / 10)
    counter = PreambleCounter(pool.dictionary, params.get("max_k"), config.stop_factor,
                              noise, snr).fit()
    rng = np.random.default_rng([spec.seed, int(round(1000 * snr_db))])
    hits = 0
    pairs = []
    for _ in range(spec.trials):
        chosen = rng.choice(pool.pool_size, size=k, replace=False) + 1
        obs = synthesize_channel(list(chosen), pool, snr, noise, rng)
        k_hat = int(counter.predict(obs.y)[0])
        hits += k_hat == k
        pairs.append((k, k_hat))
    lam = params.get("lam", 20.0)
    M = config.M
    pool_size = params.get("pool_size", pool.pool_size)
    emp, se, exact, first = collision_stats(lam, M, pool_size, spec.trials, spec.seed)
    row = {"variable": spec.variable, "x": x, "t_p": t_p, "pool_size": pool.pool_size,
           "coherence": pool.coherence, "snr_db": snr_db, "noise_power": noise, "k": k,
           "trials": spec.trials, "accuracy": hits / spec.trials,
           "collision_lam": lam, "collision_M": M, "collision_pool": pool_size,
           "no_collision_empirical": emp, "no_collision_stderr": se,
           "no_collision_exact": exact, "no_collision_first_order": first}
    return row, pairs


def cmd_phy(spec, config, params=None, n_jobs=1, confusion_out=None):
    params = params or {}
    config = config.replace(**spec.overrides)
    t_p = params.get("t_p", config.t_p)
    if t_p < 5 or not is_prime(t_p):
        raise UsageError(f"t_p must be a prime >= 5, got {t_p}")
    results = _map_points(_phy_point, [(spec, x, config, params) for x in spec.grid()], n_jobs)
    if confusion_out is not None:
        writer = csv.writer(confusion_out, lineterminator="\n")
        writer.writerow(["x", "true_k", "estimated_k"])
        for x, (_, pairs) in zip(spec.grid(), results):
            writer.writerows((_fmt(x), a, b) for a, b in pairs)
    return [row for row, _ in results]


# -- figure presets ----------------------------------------------------------------


def figure1(args, config):
    rows = []
    for K in range(1, 21):
        rows.append({"K": K, "eta_sa_known": an.eta_sa_known(K), "inv_e": an.INV_E})
    return rows


def _pair(config, traffic, trials, seed):
    ma = simulate_single_shot(Scheme.MA, config, traffic, trials, seed)
    ep = simulate_single_shot(Scheme.EP, config, traffic, trials, seed)
    return ma, ep


def figure3(args, config):
    M = 100
    config = config.replace(M=M)
    rows = []
    for alpha in SweepSpec("alpha", 0.05, 1.0, 0.05).grid():
        lam = alpha * M
        ma, ep = _pair(config, TrafficConfig(lam=lam), args.trials, args.seed)
        rows.append({"alpha": alpha, "lam": lam, "M": M,
                     "sim_ma": ma.mean / M, "sim_ma_stderr": ma.stderr / M,
                     "sim_ep": ep.mean / M, "sim_ep_stderr": ep.stderr / M,
                     "analytic_ma": an.n_ma_poisson(lam, M) / M,
                     "ep_lower": an.n_ep_lower_poisson(lam, M) / M,
                     "ep_approx": an.n_ep_approx(lam, M) / M,
                     "psi": an.psi(alpha)})
    return rows


def _vs_m(args, config, lam_of_m, ms):
    rows = []
    for M in ms:
        lam = lam_of_m(M)
        cfg = config.replace(M=M)
        ma, ep = _pair(cfg, TrafficConfig(lam=lam), args.trials, args.seed)
        rows.append({"M": M, "lam": lam, "sim_ma": ma.mean, "sim_ma_stderr": ma.stderr,
                     "sim_ep": ep.mean, "sim_ep_stderr": ep.stderr,
                     "gap": ep.mean - ma.mean,
                     "analytic_ma": an.n_ma_poisson(lam, M),
                     "ep_lower": an.n_ep_lower_poisson(lam, M),
                     "ep_approx": an.n_ep_approx(lam, M),
                     "gap_lower": an.INV_E * lam * -math.expm1(-lam / M)})
    return rows


def figure4(args, config):
    return _vs_m(args, config, lambda M: 20.0, range(20, 101, 10))


def figure5(args, config):
    return _vs_m(args, config, lambda M: 0.8 * M, (50, 100, 150, 200, 250, 300, 350, 400))


def figure6(args, config):
    M = 100
    config = config.replace(M=M)
    rows = []
    for lambda0 in range(2, 42, 2):
        row = {"lambda0": lambda0, "alpha0": lambda0 / M}
        ma_fp = an.solve_lambda_ma(lambda0, M)
        ep_fp = an.solve_lambda_ep(lambda0, M)
        row.update(lam_ma_analytic=ma_fp.lam,
                   q_ma_analytic=an.q_ma(ma_fp.lam, M) if ma_fp.stable else math.nan,
                   lam_ep_analytic=ep_fp.lam,
                   q_ep_analytic=1 - lambda0 / ep_fp.lam if ep_fp.stable else math.nan)
        for scheme, tag in ((Scheme.MA, "ma"), (Scheme.EP, "ep")):
            st = simulate_fast_retrial(scheme, config, lambda0, args.slots + args.warmup,
                                       args.warmup, args.seed, (2,))
            row[f"lam_{tag}_sim"] = st.empirical_lambda
            row[f"q_{tag}_sim"] = st.empirical_q
            row[f"outage_{tag}_D2_sim"] = st.outage[2]
            row[f"status_{tag}"] = "diverged" if st.diverged else "ok"
        rows.append(row)
    return rows


FIGURES = {"figure1": figure1, "figure3": figure3, "figure4": figure4,
           "figure5": figure5, "figure6": figure6}


# -- argument parsing ----------------------------------------------------------------


def _common(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--trials", type=int, default=10_000)
    parser.add_argument("--slots", type=int, default=10_000,
                        help="measured slots for fast-retrial runs")
    parser.add_argument("--warmup", type=int, default=1_000)
    parser.add_argument("--out", help="CSV destination (default: stdout)")
    parser.add_argument("--n-jobs", type=int, default=1)
    parser.add_argument("--M", type=int, help="number of channels")


def _sweep(parser, default_var):
    parser.add_argument("--var", default=default_var)
    parser.add_argument("--start", type=float, required=True)
    parser.add_argument("--stop", type=float, required=True)
    parser.add_argument("--step", type=float, required=True)


def _thresholds(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def build_parser():
    parser = argparse.ArgumentParser(
        prog="epaloha",
        description="Multichannel ALOHA with preamble exploration: models and simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analytic", help="evaluate closed-form models on a grid")
    _common(p)
    _sweep(p, "alpha")
    p.add_argument("--which", required=True, help=f"one of {', '.join(FORMULAS)}")
    p.add_argument("--lam", type=float)
    p.add_argument("--p", type=float, help="access probability for eta_sa")
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--w-max", type=int, default=256)
    p.add_argument("--thresholds", type=_thresholds, default=(2,))

    p = sub.add_parser("simulate", help="Monte Carlo sweep")
    _common(p)
    _sweep(p, "alpha")
    p.add_argument("--scheme", default="both", choices=["ma", "ep", "both"])
    p.add_argument("--mode", choices=[m.value for m in EstimationMode])
    p.add_argument("--K", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--thresholds", type=_thresholds, default=(2,))

    p = sub.add_parser("phy", help="preamble counting accuracy and collision statistics")
    _common(p)
    _sweep(p, "snr_db")
    p.add_argument("--t-p", type=int)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--max-k", type=int)
    p.add_argument("--noiseless", action="store_true")
    p.add_argument("--lam", type=float, default=20.0)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--confusion", help="write per-channel (true k, estimated k) pairs here")

    p = sub.add_parser("selftest", help="run the built-in consistency checks")
    _common(p)

    for name in FIGURES:
        p = sub.add_parser(name, help=f"data for {name}")
        _common(p)
    return parser


def _load(args):
    config = SystemConfig()
    if args.config:
        config, _ = load_config(args.config)
    if getattr(args, "mode", None):
        config = config.replace(estimation_mode=args.mode)
    errors = validate(config)
    if errors:
        raise UsageError("invalid configuration: " + "; ".join(errors))
    return config


def _spec(args):
    overrides = {"M": args.M} if args.M else {}
    return SweepSpec(args.var, args.start, args.stop, args.step, overrides, trials=args.trials,
                     slots=args.slots, warmup=args.warmup, seed=args.seed)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load(args)
        if args.command == "selftest":
            return 0 if run_selftest() else 1
        if args.command == "analytic":
            if args.which not in FORMULAS:
                raise UsageError(f"unknown formula {args.which!r}")
            params = {"lam": args.lam, "p": args.p, "delta": args.delta,
                      "pool_size": args.pool_size, "w_max": args.w_max,
                      "thresholds": args.thresholds}
            rows = cmd_analytic(_spec(args), args.which, config, params)
        elif args.command == "simulate":
            params = {"K": args.K, "lam": args.lam, "alpha": args.alpha,
                      "thresholds": args.thresholds}
            rows = cmd_simulate(args.scheme, _spec(args), config, params, args.n_jobs)
        elif args.command == "phy":
            params = {"k": args.k, "max_k": args.max_k, "noiseless": args.noiseless,
                      "lam": args.lam}
            if args.t_p:
                params["t_p"] = args.t_p
            if args.pool_size:
                params["pool_size"] = args.pool_size
            confusion = open(args.confusion, "w", newline="") if args.confusion else None
            try:
                rows = cmd_phy(_spec(args), config, params, args.n_jobs, confusion)
            finally:
                if confusion:
                    confusion.close()
        else:
            rows = FIGURES[args.command](args, config)
    except (UsageError, ValueError, TypeError) as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    if args.out:
        with open(args.out, "w", newline="") as fh:
            write_csv(rows, fh)
    else:
        write_csv(rows, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
