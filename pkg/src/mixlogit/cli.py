"""Command-line entry point.

Subcommands: ``generate`` (synthetic preference JSONL), ``train``
(checkpoints + trajectory CSV + summary), ``eval`` (margin report JSON/CSV),
``verify`` (oracle self-checks) and ``bench`` (runtime-overhead report).
Report-producing commands also render a figure next to each delimited
output.

Exit codes: 0 success, 1 verification failure, 2 runtime abort,
3 config/schema error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from collections import Counter
from pathlib import Path

from . import datagen, evaluate, model as model_mod, objective, plots, train as train_mod
from .config import ConfigError, RunConfig, thread_cap
from .train import TrainingAborted

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_RUNTIME_ABORT = 2
EXIT_CONFIG_ERROR = 3

# reference points reported alongside measured overhead ratios
OVERHEAD_REFERENCE = {"lognormal": 1.02, "gamma": 1.1}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixlogit",
        description="Preference optimization with a learned strength distribution",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", type=Path, required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override RNG seed")

    p_gen = sub.add_parser("generate", help="write a synthetic preference dataset")
    add_common(p_gen)
    p_gen.add_argument("--out", type=Path, required=True, help="output JSONL path")

    p_train = sub.add_parser("train", help="train a policy on preference pairs")
    add_common(p_train)
    p_train.add_argument("--data", type=Path, default=None,
                         help="input JSONL (default: paths.data from config)")
    p_train.add_argument("--out", type=Path, default=None,
                         help="output directory (default: paths.out_dir)")
    p_train.add_argument("--variant", choices=["dpo", "lognormal", "gamma"],
                         default=None, help="strength distribution variant")
    p_train.add_argument("--beta", type=float, default=None,
                         help="fixed beta for the dpo variant")
    p_train.add_argument("--beta-lr", type=float, default=None,
                         help="learning rate for distribution parameters (0 freezes)")
    p_train.add_argument("--paper-exact", action="store_true",
                         help="bare series truncation without tail correction")

    p_eval = sub.add_parser("eval", help="margin report for a trained policy")
    add_common(p_eval)
    p_eval.add_argument("--ckpt", type=Path, required=True, help="policy checkpoint")
    p_eval.add_argument("--data", type=Path, default=None)
    p_eval.add_argument("--out", type=Path, default=None)
    p_eval.add_argument("--baseline", type=Path, default=None,
                        help="baseline report JSON for margin gains")
    p_eval.add_argument("--length-normalize", action="store_true",
                        help="divide response log-probs by response length")

    p_verify = sub.add_parser("verify", help="run oracle self-checks")
    p_verify.add_argument("--level", choices=["quick", "full"], default="quick")

    p_bench = sub.add_parser("bench", help="runtime overhead of loss variants")
    add_common(p_bench)
    p_bench.add_argument("--out", type=Path, default=None)
    p_bench.add_argument("--pairs", type=int, default=2000)
    p_bench.add_argument("--steps", type=int, default=8)
    p_bench.add_argument("--repetitions", type=int, default=5)

    return parser


def _load_config(path: Path) -> RunConfig:
    return RunConfig.load(path)


def cmd_generate(cfg: RunConfig, out_path: Path, seed: int | None) -> int:
    spec = cfg.generator_spec(seed_override=seed)
    pairs = datagen.generate(spec, chunk_size=cfg.chunk_size())
    out_path.parent.mkdir(parents=True, exist_ok=True)
    datagen.write_jsonl(pairs, out_path)
    print(f"wrote {len(pairs)} pairs to {out_path}")
    histogram: Counter = Counter()
    for p in pairs:
        for dim, cat in p.subgroups.items():
            histogram[(dim, cat)] += 1
    for (dim, cat), count in sorted(histogram.items()):
        print(f"  {dim}/{cat}: {count}")
    return EXIT_OK


def _resolve(cfg: RunConfig, cli_value: Path | None, section_key: str,
             what: str) -> Path:
    if cli_value is not None:
        return cli_value
    paths = cfg.section("paths")
    if section_key not in paths:
        raise ConfigError(f"/paths/{section_key}", f"{what} not given on the "
                          "command line and missing from the config")
    return cfg.resolve_path(paths[section_key])


def cmd_train(cfg: RunConfig, args) -> int:
    data_path = _resolve(cfg, args.data, "data", "training data")
    out_dir = _resolve(cfg, args.out, "out_dir", "output directory")
    out_dir.mkdir(parents=True, exist_ok=True)

    pairs = datagen.read_jsonl(data_path)
    settings = cfg.model_settings()
    vocab = _vocab_from_pairs(cfg, pairs)
    reference = model_mod.init_reference(
        vocab, hidden_dim=settings["hidden_dim"], seed=settings["seed"],
        std=settings["std"], window=settings["window"])
    policy = model_mod.init_policy_from(reference)

    tcfg = cfg.train_config(seed_override=args.seed,
                            beta_lr_override=args.beta_lr,
                            paper_exact=args.paper_exact)
    dist = cfg.distribution(variant_override=args.variant,
                            beta_override=args.beta, beta_lr=tcfg.beta_lr)

    t0 = time.perf_counter_ns()
    policy, dist, trajectory = train_mod.train(pairs, policy, reference, dist, tcfg)
    wallclock_ns = time.perf_counter_ns() - t0

    model_mod.save_checkpoint(policy, out_dir / "policy.ckpt")
    model_mod.save_checkpoint(reference, out_dir / "reference.ckpt")
    (out_dir / "dist.json").write_text(
        json.dumps(dist.to_dict(), indent=2) + "\n", encoding="utf-8")
    train_mod.write_trajectory_csv(trajectory, out_dir / "trajectory.csv")
    summary = {
        "final_loss": trajectory[-1].loss,
        "final_beta_mean": dist.mean(),
        "final_beta_variance": dist.variance(),
        "steps": trajectory[-1].step,
        "pairs": len(pairs),
        "wallclock_ns": wallclock_ns,
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    plots.trajectory_figure(trajectory, out_dir / "trajectory.png")
    print(f"trained {trajectory[-1].step} steps on {len(pairs)} pairs; "
          f"final loss {trajectory[-1].loss:.6f}, "
          f"beta mean {dist.mean():.4f}, variance {dist.variance():.6f}")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def _vocab_from_pairs(cfg: RunConfig, pairs) -> model_mod.VocabConfig:
    g = cfg.section("generator")
    vocab = model_mod.VocabConfig(**g.get("vocab", {}))
    max_token = max((max(p.prompt + p.chosen + p.rejected) for p in pairs),
                    default=0)
    if max_token >= vocab.vocab_size:
        raise ConfigError("/generator/vocab",
                          f"data contains token {max_token} outside "
                          f"vocab_size {vocab.vocab_size}")
    return vocab


def cmd_eval(cfg: RunConfig, args) -> int:
    data_path = _resolve(cfg, args.data, "data", "evaluation data")
    out_dir = _resolve(cfg, args.out, "out_dir", "output directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = model_mod.load_checkpoint(args.ckpt)
    pairs = datagen.read_jsonl(data_path)

    eval_cfg = cfg.section("eval")
    length_normalize = args.length_normalize or eval_cfg.get("length_normalize", False)
    reference = None
    if eval_cfg.get("use_delta_r_margin", False):
        ref_path = Path(args.ckpt).parent / "reference.ckpt"
        reference = model_mod.load_checkpoint(ref_path)

    baseline = None
    if args.baseline is not None:
        baseline = evaluate.read_report_json(args.baseline)
    report = evaluate.build_report(policy, pairs, baseline=baseline,
                                   length_normalize=length_normalize,
                                   reference=reference)
    evaluate.write_report_json(report, out_dir / "report.json")
    evaluate.write_report_csv(report, out_dir / "report.csv")
    plots.margins_figure(report, out_dir / "margins.png")
    if report.margin_gain is not None:
        plots.gains_figure(report, out_dir / "margin_gains.png")

    print(f"micro avg margin: {report.micro_avg:+.6f} nats over "
          f"{len(report.per_pair_margins)} pairs")
    for dim in sorted(report.macro_avg):
        print(f"  macro[{dim}]: {report.macro_avg[dim]:+.6f}")
    if report.margin_gain is not None:
        print(f"micro gain vs baseline: {report.margin_gain['micro']:+.6f}")
    missing_dims = {d for p in pairs for d in p.subgroups} - set(report.macro_avg)
    for dim in sorted(missing_dims):
        print(f"warning: dimension {dim!r} missing from macro table")
    print(f"outputs in {out_dir}")
    return EXIT_OK


def cmd_verify(level: str) -> int:
    from . import verify as verify_mod  # scipy import deferred to use

    results = verify_mod.run_checks(level)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r.line())
    if failed:
        print(f"FAILED: {failed[0].name}")
        return EXIT_VERIFY_FAILED
    print(f"all {sum(1 for r in results if r.bound is not None)} gated checks passed")
    return EXIT_OK


def cmd_bench(cfg: RunConfig, args) -> int:
    out_dir = _resolve(cfg, args.out, "out_dir", "output directory")
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = cfg.generator_spec(seed_override=args.seed)
    spec.n_pairs = args.pairs
    pairs = datagen.generate(spec)
    settings = cfg.model_settings()

    def workload(dist_builder):
        reference = model_mod.init_reference(
            spec.vocab, hidden_dim=settings["hidden_dim"], seed=settings["seed"],
            std=settings["std"], window=settings["window"])
        policy = model_mod.init_policy_from(reference)
        tcfg = train_mod.TrainConfig(epochs=1, batch_size=max(1, args.pairs // args.steps),
                                     eval_every=10**9, rng_seed=0)
        train_mod.train(pairs, policy, reference, dist_builder(), tcfg)

    variants = {
        "dpo": lambda: objective.PointMass(0.1),
        "lognormal": lambda: objective.LogNormal.from_effective(-2.3, 0.6, True),
        "gamma": lambda: objective.Gamma.from_effective(2.0, 16.7, True),
    }
    ratios = evaluate.runtime_compare(workload, variants,
                                      repetitions=args.repetitions)
    doc = {"workload_pairs": args.pairs, "reference_points": OVERHEAD_REFERENCE,
           "ratios": ratios}
    (out_dir / "runtime.json").write_text(json.dumps(doc, indent=2) + "\n",
                                          encoding="utf-8")
    plots.runtime_figure(ratios, out_dir / "runtime.png",
                         reference_points=OVERHEAD_REFERENCE)
    for name in ("dpo", "lognormal", "gamma"):
        r = ratios[name]
        ref = OVERHEAD_REFERENCE.get(name)
        ref_str = f" (reported reference {ref:.2f}x)" if ref else ""
        print(f"{name}: {r['ratio_mean']:.3f}x +- {r['ratio_std']:.3f}{ref_str}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        thread_cap()
        if args.command == "verify":
            return cmd_verify(args.level)
        cfg = _load_config(args.config)
        if args.command == "generate":
            return cmd_generate(cfg, args.out, args.seed)
        if args.command == "train":
            return cmd_train(cfg, args)
        if args.command == "eval":
            return cmd_eval(cfg, args)
        if args.command == "bench":
            return cmd_bench(cfg, args)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error at {exc.pointer}: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except TrainingAborted as exc:
        print(f"runtime abort: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ABORT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME_ABORT


if __name__ == "__main__":
    sys.exit(main())
