"""Command-line front end: reproducible batch workflows over the library.

Every subcommand writes its outputs plus a run manifest recording the
resolved invocation; `rerun` replays a manifest and reproduces the result
artifacts byte-for-byte. Logs go to stderr as key=value lines.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import (
    criteria_curve,
    tau_sensitivity,
    write_curves_csv,
    write_curves_long_csv,
    write_matrix_csv,
)
from .errors import ConfigError, PairmineError
from .losses import LossConfig
from .mining import (
    MiningConfig,
    filter_noise,
    mine_fast,
    mine_hpm,
    mine_im,
    mine_tm,
    read_report,
    write_report,
    write_summary,
)
from .store import (
    MANIFEST_NAME,
    load_dataset,
    save_dataset,
    save_ground_truth,
    synth_clusters,
)
from .training import (
    ComposerConfig,
    ToyEncoder,
    TrainConfig,
    compose_batch,
    eval_retrieval,
    load_encoder,
    save_encoder,
    train,
    write_recall_csv,
    write_trace_csv,
)

# shared defaults for the mining/training subcommands
DEFAULT_K = 50
DEFAULT_TAU = 0.5
DEFAULT_GAMMA = 1.0
DEFAULT_P = 1


def _log(**fields) -> None:
    print(" ".join(f"{k}={v}" for k, v in fields.items()), file=sys.stderr)


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_run_manifest(subcommand: str, argv: list[str], config: dict,
                        inputs: list[str], outputs: list[str],
                        seed: int | None, wall_time_s: float,
                        primary_output: Path) -> Path:
    if primary_output.is_dir():
        path = primary_output / "run.json"
    else:
        path = primary_output.with_name(primary_output.name + ".run.json")
    doc = {
        "subcommand": subcommand,
        "argv": argv,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "version": __version__,
        "wall_time_s": wall_time_s,
    }
    _atomic_write_text(path, json.dumps(doc, indent=2) + "\n")
    return path


def _resolve_taus(args) -> tuple[float, float]:
    tau_i = args.tau if args.tau_i is None else args.tau_i
    tau_t = args.tau if args.tau_t is None else args.tau_t
    return tau_i, tau_t


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated numbers: {exc}") from exc


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated integers: {exc}") from exc


# --- subcommand handlers; each returns (config, inputs, outputs, seed, primary) ---

def cmd_synth(args):
    result = synth_clusters(args.clusters, args.per_cluster, args.image_dim,
                            args.text_dim, args.noise_scale,
                            args.mismatch_fraction, args.seed)
    out = Path(args.out)
    provenance = ("synth clusters={} per_cluster={} image_dim={} text_dim={} "
                  "noise_scale={} mismatch_fraction={} seed={}; ground truth in "
                  "ground_truth.json").format(
                      args.clusters, args.per_cluster, args.image_dim,
                      args.text_dim, args.noise_scale, args.mismatch_fraction,
                      args.seed)
    save_dataset(result.dataset, out, provenance=provenance)
    truth = save_ground_truth(result, out)
    _log(cmd="synth", pairs=result.dataset.num_pairs,
         mismatched=int(result.mismatch_mask.sum()), out=out)
    config = {
        "clusters": args.clusters, "per_cluster": args.per_cluster,
        "image_dim": args.image_dim, "text_dim": args.text_dim,
        "noise_scale": args.noise_scale,
        "mismatch_fraction": args.mismatch_fraction,
    }
    outputs = [str(out / MANIFEST_NAME), str(truth)]
    return config, [], outputs, args.seed, out


def cmd_mine(args):
    method = args.method
    if args.pool_size is not None and method == "hpm":
        method = "fast"
    dataset = load_dataset(args.manifest, normalize_rows=True)
    tau_i, tau_t = _resolve_taus(args)
    if method in ("hpm", "fast"):
        config = MiningConfig(k=args.k, tau_image=tau_i, tau_text=tau_t,
                              pool_size=args.pool_size if method == "fast" else None,
                              seed=args.seed, worker_count=args.workers)
        if method == "fast" and config.pool_size is None:
            raise ConfigError("--pool-size is required for the fast method")
        report = (mine_hpm if method == "hpm" else mine_fast)(dataset, config)
    elif method in ("im", "tm"):
        report = (mine_im if method == "im" else mine_tm)(
            dataset, args.k, worker_count=args.workers)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown method {method}")

    out = Path(args.out)
    write_report(report, out)
    summary_path = out.with_name(out.name + ".summary.json")
    write_summary(report, summary_path)
    _log(cmd="mine", method=method, targets=report.summary.targets,
         noise=report.summary.noise_count,
         wall_s=f"{report.summary.wall_time_s:.3f}")
    config_doc = {
        "method": method, "k": args.k, "tau_image": tau_i, "tau_text": tau_t,
        "pool_size": args.pool_size, "workers": args.workers,
    }
    return (config_doc, [str(args.manifest)],
            [str(out), str(summary_path)], args.seed, out)


def cmd_filter(args):
    report = read_report(args.report)
    clean, noise = filter_noise(report)
    out = Path(args.out)
    doc = {"clean": sorted(clean), "noise": sorted(noise)}
    _atomic_write_text(out, json.dumps(doc, indent=2) + "\n")
    _log(cmd="filter", clean=len(clean), noise=len(noise), out=out)
    return {}, [str(args.report)], [str(out)], None, out


def cmd_compose(args):
    dataset = load_dataset(args.manifest, normalize_rows=True)
    report = read_report(args.report)
    config = ComposerConfig(batch_size=args.batch_size,
                            seed_fraction=args.seed_fraction,
                            hard_per_seed=args.p, seed=args.seed)
    plan = compose_batch(dataset, report, config)
    out = Path(args.out)
    doc = {
        "base": list(plan.base),
        "composed": list(plan.composed),
        "hard_mask": {str(k): list(v) for k, v in sorted(plan.hard_mask.items())},
    }
    _atomic_write_text(out, json.dumps(doc, indent=2) + "\n")
    _log(cmd="compose", base=len(plan.base), composed=len(plan.composed), out=out)
    config_doc = {"batch_size": args.batch_size, "seed_fraction": args.seed_fraction,
                  "p": args.p}
    return config_doc, [str(args.manifest), str(args.report)], [str(out)], args.seed, out


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        iterations=args.iters,
        loss=LossConfig(temperature=args.sigma, margin_weight=args.gamma,
                        symmetric=args.symmetric),
        composer=ComposerConfig(batch_size=args.batch_size,
                                seed_fraction=args.seed_fraction,
                                hard_per_seed=args.p, seed=args.seed),
        seed=args.seed,
        early_stop_patience=args.patience,
        eval_interval=args.eval_interval,
    )


def cmd_train(args):
    dataset = load_dataset(args.manifest, normalize_rows=True)
    report = read_report(args.report)
    config = _train_config(args)
    if args.init_checkpoint is not None:
        init = load_encoder(args.init_checkpoint)
    else:
        init = ToyEncoder.random(dataset.image_dim, dataset.text_dim,
                                 args.embed_dim, args.init_seed)
    encoder, trace = train(dataset, report, config, init)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_encoder(encoder, out)
    trace_path = out / "trace.csv"
    write_trace_csv(trace, trace_path)
    _log(cmd="train", iterations=len(trace),
         final_loss=f"{trace[-1].total:.6f}" if trace else "nan", out=out)
    config_doc = {
        "lr": args.lr, "iters": args.iters, "sigma": args.sigma,
        "gamma": args.gamma, "symmetric": args.symmetric,
        "batch_size": args.batch_size, "seed_fraction": args.seed_fraction,
        "p": args.p, "embed_dim": args.embed_dim, "init_seed": args.init_seed,
        "init_checkpoint": args.init_checkpoint,
        "patience": args.patience, "eval_interval": args.eval_interval,
    }
    inputs = [str(args.manifest), str(args.report)]
    if args.init_checkpoint is not None:
        inputs.append(str(args.init_checkpoint))
    outputs = [str(out / "encoder.json"), str(out / "image_proj.f32"),
               str(out / "text_proj.f32"), str(trace_path)]
    return config_doc, inputs, outputs, args.seed, out


def cmd_eval(args):
    dataset = load_dataset(args.manifest, normalize_rows=True)
    encoder = load_encoder(args.checkpoint)
    ks = _parse_int_list(args.ks, "--ks")
    table = eval_retrieval(encoder, dataset, ks)
    out = Path(args.out)
    write_recall_csv(table, out)
    _log(cmd="eval", **{f"r_at_{k}": f"{table[k]:.4f}" for k in sorted(table)})
    return {"ks": ks}, [str(args.manifest), str(args.checkpoint)], [str(out)], None, out


def cmd_stats(args):
    labeled = []
    for entry in args.report:
        label, _, path = entry.partition("=")
        if not path:
            raise ConfigError(
                f"--report expects LABEL=PATH, got {entry!r}")
        labeled.append((label, read_report(path)))
    curves = criteria_curve(labeled)
    out = Path(args.out)
    write_curves_csv(curves, out)
    long_path = out.with_name(out.stem + "_long.csv")
    write_curves_long_csv(curves, long_path)
    _log(cmd="stats", reports=len(labeled), out=out)
    inputs = [item.partition("=")[2] for item in args.report]
    return ({"reports": args.report}, inputs,
            [str(out), str(long_path)], None, out)


def cmd_kendall(args):
    dataset = load_dataset(args.manifest, normalize_rows=True)
    grid = _parse_float_list(args.taus, "--taus")
    matrix = tau_sensitivity(dataset, grid, k=args.k, seed=args.seed,
                             worker_count=args.workers)
    out = Path(args.out)
    write_matrix_csv(matrix, out)
    _log(cmd="kendall", grid=len(grid), out=out)
    config_doc = {"taus": grid, "k": args.k, "workers": args.workers,
                  # statistic choices, recorded with the output
                  "kendall_variant": "tau-b",
                  "missing_id_rank": "list length + 1"}
    return config_doc, [str(args.manifest)], [str(out)], args.seed, out


def cmd_rerun(args):
    doc = json.loads(Path(args.run_manifest).read_text())
    argv = [str(a) for a in doc["argv"]]
    _log(cmd="rerun", subcommand=doc.get("subcommand"), argv=" ".join(argv))
    code = main(argv)
    if code != 0:
        raise PairmineError(f"rerun of {doc.get('subcommand')} failed with code {code}")
    return None


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line machine-parseable flag errors
        print(f"error cmd={self.prog} type=usage msg=\"{message}\"", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pairmine",
                     description="Hard text-image pair mining and desk-scale training")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_workers(p):
        p.add_argument("--workers", type=int, default=0,
                       help="parallel workers over targets (0 = all cores); "
                            "never affects results")

    p = sub.add_parser("synth", help="generate a synthetic clustered dataset")
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--per-cluster", type=int, required=True)
    p.add_argument("--image-dim", type=int, required=True)
    p.add_argument("--text-dim", type=int, required=True)
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--mismatch-fraction", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("mine", help="mine hard pairs")
    p.add_argument("--manifest", required=True)
    p.add_argument("--method", choices=["hpm", "fast", "im", "tm"], default="hpm")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--tau", type=float, default=DEFAULT_TAU,
                   help="sets both modality thresholds")
    p.add_argument("--tau-i", type=float, default=None, help="override image threshold")
    p.add_argument("--tau-t", type=float, default=None, help="override text threshold")
    p.add_argument("--pool-size", type=int, default=None,
                   help="per-target candidate pool (switches to the fast method)")
    p.add_argument("--seed", type=int, default=0)
    add_workers(p)
    p.add_argument("--out", required=True, help="report JSONL path")
    p.set_defaults(handler=cmd_mine)

    p = sub.add_parser("filter", help="split a report into clean/noise id sets")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True, help="output JSON path")
    p.set_defaults(handler=cmd_filter)

    p = sub.add_parser("compose", help="compose one hard-pair training batch")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--batch-size", type=int, required=True)
    p.add_argument("--seed-fraction", type=float, default=1.0)
    p.add_argument("--p", type=int, default=DEFAULT_P, help="hard pairs per seed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="batch plan JSON path")
    p.set_defaults(handler=cmd_compose)

    p = sub.add_parser("train", help="continuous training with hard-pair batches")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed-fraction", type=float, default=1.0)
    p.add_argument("--p", type=int, default=DEFAULT_P)
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
    p.add_argument("--sigma", type=float, default=0.07)
    p.add_argument("--symmetric", action="store_true",
                   help="average both contrastive directions")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--embed-dim", type=int, default=16)
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--init-checkpoint", default=None,
                   help="warm-start from a saved encoder instead of random init")
    p.add_argument("--patience", type=int, default=None,
                   help="early stop after this many non-improving R@1 evals")
    p.add_argument("--eval-interval", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="image-to-text retrieval recall")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ks", default="1,5,10", help="comma-separated cutoffs")
    p.add_argument("--out", required=True, help="recall CSV path")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("stats", help="per-rank score curves across reports")
    p.add_argument("--report", action="append", required=True,
                   metavar="LABEL=PATH", help="repeatable labeled report")
    p.add_argument("--out", required=True, help="wide CSV path")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("kendall", help="threshold sensitivity of mined rankings")
    p.add_argument("--manifest", required=True)
    p.add_argument("--taus", required=True, help="comma-separated threshold grid")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--seed", type=int, default=0)
    add_workers(p)
    p.add_argument("--out", required=True, help="matrix CSV path")
    p.set_defaults(handler=cmd_kendall)

    p = sub.add_parser("rerun", help="replay a run manifest bit-exactly")
    p.add_argument("--run-manifest", required=True)
    p.set_defaults(handler=cmd_rerun)

    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        started = time.perf_counter()
        result = args.handler(args)
        if result is not None:
            config, inputs, outputs, seed, primary = result
            _write_run_manifest(args.command, argv, config, inputs, outputs,
                                seed, time.perf_counter() - started,
                                Path(primary))
        return 0
    except (PairmineError, OSError) as exc:
        print(f"error cmd={args.command} type={type(exc).__name__} msg=\"{exc}\"",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
