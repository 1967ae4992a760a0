"""Command-line experiment runner.

Subcommands: validate-theory, train, baseline, tradeoff, diversity, plot.
Exit codes: 0 success, 1 runtime failure (partial artifacts kept next to a
FAILED marker), 2 configuration error.  All randomness flows from the
config seed, so re-running a config reproduces report.csv byte for byte;
wall-clock timings go to run.log, which is excluded from that guarantee.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
import traceback

import numpy as np
from scipy.spatial.distance import pdist

from . import oracles, reporting
from .baselines import best_of_n, noise_opt, train_direct_finetune
from .config import ConfigError, ExperimentConfig, load_config
from .generators import Generator, make_generator
from .hypernet import NoiseHypernetwork, init_hypernet
from .oracles import kl_knn
from .rewards import Reward, make_reward
from .training import save_checkpoint, train_hypernoise

REPORT_COLUMNS = ["method", "step", "generation_steps", "reward_mean",
                  "reward_se", "base_reward_mean", "fidelity",
                  "diversity_mean_pairwise", "lipschitz_audit"]


class RunContext:
    def __init__(self, out_dir: str, quiet: bool):
        self.out_dir = out_dir
        self.quiet = quiet
        self.t0 = time.monotonic()
        self.log_lines: list[str] = []

    def path(self, *parts) -> str:
        return os.path.join(self.out_dir, *parts)

    def log(self, msg: str):
        self.log_lines.append(msg)
        if not self.quiet:
            print(msg)

    def finish(self):
        self.log_lines.append(f"wall_time_s {time.monotonic() - self.t0:.3f}")
        reporting.atomic_write(self.path("run.log"), "\n".join(self.log_lines) + "\n")

    def fail(self, message: str):
        reporting.atomic_write(self.path("FAILED"), message + "\n")
        self.log_lines.append(f"FAILED: {message}")
        self.finish()


def _echo_config(ctx: RunContext, cfg: ExperimentConfig):
    reporting.atomic_write(ctx.path("config-resolved.ini"), cfg.resolved_echo())


def _build(cfg: ExperimentConfig) -> tuple[Generator, Reward]:
    g = make_generator(cfg.generator_spec(), seed=cfg["generator"]["weight_seed"])
    r = make_reward(cfg.reward_spec())
    return g, r


def _heldout_noise(cfg: ExperimentConfig, g: Generator) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed + 900_000)
    return rng.standard_normal((cfg["evaluation"]["heldout"], g.latent_dim))


def _mean_pairwise(y: np.ndarray) -> float:
    return float(pdist(y).mean())


def _fidelity(cfg: ExperimentConfig, g: Generator, hn: NoiseHypernetwork,
              x_heldout: np.ndarray) -> float:
    """Distributional closeness of the modulated run to the base run."""
    delta = hn.perturb(x_heldout)
    if cfg["evaluation"]["fidelity_metric"] == "closed_form_gaussian_kl":
        # noise-space KL in its L2 form; exact for constant shifts
        return float(0.5 * np.mean(np.sum(delta * delta, axis=1)))
    rng = np.random.default_rng(cfg.seed + 910_000)
    fresh = rng.standard_normal(x_heldout.shape)
    return kl_knn(g.generate(x_heldout + delta), g.generate(fresh))


def _reward_stats(r: Reward, y: np.ndarray) -> tuple[float, float]:
    vals = r.evaluate_batch(y)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(len(vals)))


# ---------------------------------------------------------------------------
# Subcommand bodies (raise on failure; exit-code mapping happens in main)
# ---------------------------------------------------------------------------

def run_validate_theory(cfg: ExperimentConfig, ctx: RunContext) -> int:
    _echo_config(ctx, cfg)
    report = oracles.run_theory_suite(seed=cfg.seed, n=cfg["theory"]["n"],
                                      knn_k=cfg["theory"]["knn_k"])
    rows = [[c.name, c.statistic, c.tolerance, c.status] for c in report.checks]
    reporting.write_csv(ctx.path("report.csv"),
                        ["check", "statistic", "tolerance", "status"], rows)
    for c in report.checks:
        ctx.log(f"{c.name}: {c.status} (stat {c.statistic:.6g}, tol {c.tolerance:.6g})")
    if not report.all_pass():
        ctx.log("theory suite: FAIL")
        return 1
    ctx.log("theory suite: all checks pass")
    return 0


def run_train(cfg: ExperimentConfig, ctx: RunContext) -> int:
    if cfg.method != "hypernoise":
        raise ConfigError(f"[run] method: train expects hypernoise, got {cfg.method!r}")
    _echo_config(ctx, cfg)
    g, r = _build(cfg)
    t = cfg["train"]
    hn = init_hypernet(g, rank=t["rank"], alpha=t["adapter_alpha"], seed=cfg.seed)
    history = train_hypernoise(hn, g, r, cfg.train_config())
    if history.aborted_reason:
        raise RuntimeError(f"training aborted: {history.aborted_reason}")

    reporting.write_csv(
        ctx.path("history.csv"),
        ["step", "loss", "l2_term", "reward_term", "grad_norm"],
        [[s, lo, l2, rw, gn] for s, lo, l2, rw, gn in
         zip(history.steps, history.loss, history.l2_term,
             history.reward_term, history.grad_norm)])
    save_checkpoint(ctx.path("checkpoint.bin"), hn,
                    extra={"steps": t["steps"], "seed": cfg.seed})

    x = _heldout_noise(cfg, g)
    fidelity = _fidelity(cfg, g, hn, x)
    lip = hn.lipschitz_upper_bound()
    final_step = history.steps[-1] if history.steps else 0
    rows = []
    for gen_steps in cfg["evaluation"]["multi_step"]:
        y_mod = g.generate(x + hn.perturb(x), steps=gen_steps)
        y_base = g.generate(x, steps=gen_steps)
        mean, se = _reward_stats(r, y_mod)
        base_mean = float(r.evaluate_batch(y_base).mean())
        div = _mean_pairwise(y_mod[:cfg["evaluation"]["diversity_samples"]])
        rows.append(["hypernoise", final_step, gen_steps, mean, se,
                     base_mean, fidelity, div, lip])
        ctx.log(f"steps={gen_steps}: reward {mean:.6g} (base {base_mean:.6g}), "
                f"fidelity {fidelity:.6g}")
    reporting.write_csv(ctx.path("report.csv"), REPORT_COLUMNS, rows)

    svg = reporting.svg_curve(
        [("loss", [float(s) for s in history.steps], history.loss),
         ("reward", [float(s) for s in history.steps], history.reward_term)],
        title="training", xlabel="step")
    reporting.atomic_write(ctx.path("plots", "history.svg"), svg)
    return 0


def run_baseline(cfg: ExperimentConfig, ctx: RunContext) -> int:
    _echo_config(ctx, cfg)
    g, r = _build(cfg)
    x = _heldout_noise(cfg, g)
    rows = []
    if cfg.method == "noise_opt":
        res = noise_opt(g, r, cfg.noise_opt_config())
        fidelity = 0.5 * float(res.noise @ res.noise)
        rows.append(["noise_opt", cfg["noise_opt"]["steps"], 1, res.reward,
                     0.0, float(r.evaluate_batch(g.generate(x)).mean()),
                     fidelity, "", ""])
        ctx.log(f"noise_opt: reward {res.reward:.6g}, objective {res.objective:.6g}")
    elif cfg.method == "best_of_n":
        res = best_of_n(g, r, cfg["best_of_n"]["counts"], seed=cfg.seed)
        base_mean = float(r.evaluate_batch(g.generate(x)).mean())
        for n, best in zip(res.counts, res.best_rewards):
            rows.append(["best_of_n", n, 1, best, 0.0, base_mean, "", "", ""])
        ctx.log(f"best_of_n: best reward {res.best_rewards[-1]:.6g} "
                f"at n={res.counts[-1]}")
    elif cfg.method == "direct_ft":
        adapted, hist = train_direct_finetune(g, r, cfg.direct_ft_config())
        base_mean = float(r.evaluate_batch(g.generate(x)).mean())
        for step, rew, drift in zip(hist.steps, hist.mean_reward, hist.output_drift):
            rows.append(["direct_ft", step, 1, rew, 0.0, base_mean, drift, "", ""])
        ctx.log(f"direct_ft: reward {hist.mean_reward[-1]:.6g}, "
                f"final drift {hist.output_drift[-1]:.6g} ({hist.drift_estimator})")
    else:
        raise ConfigError(
            f"[run] method: baseline expects noise_opt, best_of_n, or "
            f"direct_ft, got {cfg.method!r}")
    reporting.write_csv(ctx.path("report.csv"), REPORT_COLUMNS, rows)
    return 0


def run_tradeoff(cfg_h: ExperimentConfig, cfg_d: ExperimentConfig,
                 ctx: RunContext) -> int:
    for section in ("generator", "reward"):
        if cfg_h[section] != cfg_d[section]:
            raise ConfigError(f"tradeoff configs disagree in [{section}]")
    if cfg_h.seed != cfg_d.seed:
        raise ConfigError("tradeoff configs disagree on [run] seed")
    if cfg_h["train"]["steps"] != cfg_d["direct_ft"]["steps"]:
        raise ConfigError("tradeoff configs disagree on the step budget")
    _echo_config(ctx, cfg_h)
    g, r = _build(cfg_h)
    x = _heldout_noise(cfg_h, g)

    t = cfg_h["train"]
    hn = init_hypernet(g, rank=t["rank"], alpha=t["adapter_alpha"], seed=cfg_h.seed)
    curve_h: list[tuple[int, float, float]] = []

    def hook(step, net):
        y = g.generate(x + net.perturb(x))
        curve_h.append((step, float(r.evaluate_batch(y).mean()),
                        _fidelity(cfg_h, g, net, x)))

    history = train_hypernoise(hn, g, r, cfg_h.train_config(), eval_hook=hook)
    if history.aborted_reason:
        raise RuntimeError(f"training aborted: {history.aborted_reason}")

    _, hist_d = train_direct_finetune(g, r, cfg_d.direct_ft_config())
    curve_d = list(zip(hist_d.steps, hist_d.mean_reward, hist_d.output_drift))

    steps = sorted({s for s, _, _ in curve_h} | {s for s, _, _ in curve_d})
    h_map = {s: (rw, fi) for s, rw, fi in curve_h}
    d_map = {s: (rw, fi) for s, rw, fi in curve_d}
    rows = []
    for s in steps:
        hr, hf = h_map.get(s, ("", ""))
        dr, df = d_map.get(s, ("", ""))
        rows.append([s, hr, hf, dr, df])
    reporting.write_csv(
        ctx.path("tradeoff.csv"),
        ["step", "hypernoise_reward", "hypernoise_fidelity",
         "direct_ft_reward", "direct_ft_fidelity"], rows)
    svg = reporting.svg_curve(
        [("hypernoise", [f for _, _, f in curve_h], [rw for _, rw, _ in curve_h]),
         ("direct_ft", [f for _, _, f in curve_d], [rw for _, rw, _ in curve_d])],
        title="reward vs fidelity cost", xlabel="fidelity (KL)", ylabel="reward")
    reporting.atomic_write(ctx.path("plots", "tradeoff.svg"), svg)
    ctx.log(f"tradeoff: {len(curve_h)} points (residual method), "
            f"{len(curve_d)} points (direct fine-tune)")
    return 0


def run_diversity(cfg: ExperimentConfig, ctx: RunContext) -> int:
    _echo_config(ctx, cfg)
    g, r = _build(cfg)
    t = cfg["train"]
    hn = init_hypernet(g, rank=t["rank"], alpha=t["adapter_alpha"], seed=cfg.seed)
    if t["steps"] > 0:
        history = train_hypernoise(hn, g, r, cfg.train_config())
        if history.aborted_reason:
            raise RuntimeError(f"training aborted: {history.aborted_reason}")
    ev = cfg["evaluation"]
    n_samples = ev["diversity_samples"]
    rows = []
    base_vals, mod_vals = [], []
    for i in range(ev["diversity_seeds"]):
        rng = np.random.default_rng(cfg.seed + 700_000 + i)
        x = rng.standard_normal((n_samples, g.latent_dim))
        base = _mean_pairwise(g.generate(x))
        mod = _mean_pairwise(g.generate(x + hn.perturb(x)))
        base_vals.append(base)
        mod_vals.append(mod)
        rows.append([str(i), base, mod])
    bmean, mmean = float(np.mean(base_vals)), float(np.mean(mod_vals))
    rows.append(["mean", bmean, mmean])
    rows.append(["sd", float(np.std(base_vals, ddof=1)),
                 float(np.std(mod_vals, ddof=1))])
    reporting.write_csv(ctx.path("report.csv"),
                        ["seed", "base_mean_pairwise", "modulated_mean_pairwise"],
                        rows)
    svg = reporting.svg_bars(["base", "modulated"], [bmean, mmean],
                             title="output diversity", ylabel="mean pairwise distance")
    reporting.atomic_write(ctx.path("plots", "diversity.svg"), svg)
    ctx.log(f"diversity: base {bmean:.6g}, modulated {mmean:.6g} "
            f"(ratio {mmean / bmean:.4f})")
    return 0


# ---------------------------------------------------------------------------

def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="noisetilt", description="noise-space reward tilting experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True)
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed-override", type=int, default=None)
        p.add_argument("--quiet", action="store_true")

    common(sub.add_parser("validate-theory", help="run every oracle check"))
    common(sub.add_parser("train", help="train the residual noise network"))
    common(sub.add_parser("baseline", help="run the configured baseline method"))
    p_t = sub.add_parser("tradeoff", help="reward-vs-fidelity curves, both methods")
    p_t.add_argument("config_hypernoise")
    p_t.add_argument("config_direct")
    common(p_t, config=False)
    common(sub.add_parser("diversity", help="pairwise-distance collapse audit"))
    p_p = sub.add_parser("plot", help="render a CSV as a deterministic SVG")
    p_p.add_argument("csv_path")
    p_p.add_argument("--kind", choices=["curve", "bars"], required=True)
    p_p.add_argument("--out", required=True)
    p_p.add_argument("--title", default="")
    p_p.add_argument("--quiet", action="store_true")

    args = parser.parse_args(argv)

    if args.command == "plot":
        try:
            reporting.plot_csv(args.csv_path, args.kind, args.out, title=args.title)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if not args.quiet:
            print(f"wrote {args.out}")
        return 0

    try:
        if args.command == "tradeoff":
            cfg = load_config(args.config_hypernoise)
            cfg_d = load_config(args.config_direct)
        else:
            cfg = load_config(args.config)
            cfg_d = None
        if args.seed_override is not None:
            cfg["run"]["seed"] = args.seed_override
            if cfg_d is not None:
                cfg_d["run"]["seed"] = args.seed_override
        out_dir = args.out or cfg["run"]["out_dir"]
        ctx = RunContext(out_dir, args.quiet)
        os.makedirs(out_dir, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        if args.command == "validate-theory":
            code = run_validate_theory(cfg, ctx)
        elif args.command == "train":
            code = run_train(cfg, ctx)
        elif args.command == "baseline":
            code = run_baseline(cfg, ctx)
        elif args.command == "tradeoff":
            code = run_tradeoff(cfg, cfg_d, ctx)
        elif args.command == "diversity":
            code = run_diversity(cfg, ctx)
        else:  # pragma: no cover
            raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        ctx.fail(f"{type(exc).__name__}: {exc}")
        print(f"runtime failure: {exc}", file=sys.stderr)
        if not args.quiet:
            traceback.print_exc()
        return 1
    ctx.finish()
    return code


if __name__ == "__main__":
    sys.exit(main())
