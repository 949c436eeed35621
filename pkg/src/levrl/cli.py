"""Command-line workbench: dataset generation, training, decoding, reports.

Subcommands: gen, pretrain, rl (with --sweep), decode, eval, stats.
Metrics are line-delimited JSON; tables are CSV; corpus BLEU is reported
scaled by 100 with two decimals.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import DatasetSpec, gen_dataset, load_pairs
from .editing import greedy_decode_batch, load_trace_records
from .errors import ConfigError
from .model import EditPolicyModel, ModelConfig, load_model
from .rl import AdvantageStats, RLConfig, rl_finetune, run_temperature_sweep
from .bleu import corpus_bleu
from .seeding import substream
from .supervised import SupervisedConfig, evaluate_corpus, pretrain


@dataclass
class RunConfig:
    """Every knob of a run; serializable and strictly validated."""

    seed: int = 0
    threads: int = 1
    data_dir: str = ""
    out_dir: str = "runs/out"
    checkpoint: str = ""
    model: ModelConfig = field(default_factory=ModelConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    pretrain: SupervisedConfig = field(default_factory=SupervisedConfig)
    rl: RLConfig = field(default_factory=RLConfig)

    def validate(self) -> None:
        problems: list[str] = []
        for name, sub in (("model", self.model), ("dataset", self.dataset),
                          ("rl", self.rl)):
            try:
                sub.validate()
            except (ConfigError, ValueError) as e:
                problems.append(f"{name}: {e}")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if self.pretrain.steps < 1:
            problems.append("pretrain: steps must be >= 1")
        if self.pretrain.batch_size < 1:
            problems.append("pretrain: batch_size must be >= 1")
        if problems:
            raise ConfigError("invalid configuration: " + "; ".join(problems))

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        groups = {"model": ModelConfig, "dataset": DatasetSpec,
                  "pretrain": SupervisedConfig, "rl": RLConfig}
        scalar_keys = {f for f in cls.__dataclass_fields__ if f not in groups}
        unknown = set(d) - scalar_keys - set(groups)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs: dict = {k: v for k, v in d.items() if k in scalar_keys}
        for name, sub_cls in groups.items():
            if name in d:
                sub_fields = {f.name for f in
                              sub_cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
                sub_unknown = set(d[name]) - sub_fields
                if sub_unknown:
                    raise ConfigError(
                        f"unknown {name} config keys: {sorted(sub_unknown)}")
                kwargs[name] = sub_cls(**d[name])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))


def _threads_default() -> int:
    env = os.environ.get("LEVRL_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def _schedule_kind(flag_value: str) -> str:
    return flag_value.replace("-", "_")


def _require_checkpoint(path: str) -> Path:
    p = Path(path) if path else None
    if not p or not p.exists():
        hint = p if p else "<out-dir>/pretrained.npz"
        raise FileNotFoundError(
            f"checkpoint not found: expected a model checkpoint at '{hint}'; "
            "run `levrl pretrain` first or pass --checkpoint")
    return p


def _resolve_config(args, need_data: bool = True) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_json(Path(args.config).read_text())
    o = lambda v, cur: cur if v is None else v  # noqa: E731
    cfg.seed = o(args.seed, cfg.seed)
    cfg.threads = o(getattr(args, "threads", None), _threads_default())
    cfg.out_dir = o(getattr(args, "out_dir", None), cfg.out_dir)
    cfg.data_dir = o(getattr(args, "data_dir", None), cfg.data_dir)
    cfg.checkpoint = o(getattr(args, "checkpoint", None), cfg.checkpoint)
    ds_vocab = None
    if need_data and cfg.data_dir:
        sidecar = Path(cfg.data_dir) / "dataset_spec.json"
        if sidecar.exists():
            loaded = json.loads(sidecar.read_text())
            cfg.dataset = DatasetSpec(**loaded)
            ds_vocab = cfg.dataset.vocab_size
    vocab = getattr(args, "vocab_size", None)
    if vocab is not None:
        cfg.model.vocab_size = vocab
    elif ds_vocab is not None:
        cfg.model.vocab_size = max(cfg.model.vocab_size, ds_vocab)
    mp = getattr(args, "max_placeholders", None)
    if mp is not None:
        cfg.model.max_placeholders = mp
    # pretrain knobs
    cfg.pretrain.steps = o(getattr(args, "steps", None), cfg.pretrain.steps)
    cfg.pretrain.batch_size = o(getattr(args, "batch", None), cfg.pretrain.batch_size)
    cfg.pretrain.lr = o(getattr(args, "lr", None), cfg.pretrain.lr)
    # rl knobs
    cfg.rl.steps = o(getattr(args, "steps", None), cfg.rl.steps)
    cfg.rl.batch_size = o(getattr(args, "batch", None), cfg.rl.batch_size)
    cfg.rl.lr = o(getattr(args, "lr", None), cfg.rl.lr)
    cfg.rl.approach = o(getattr(args, "approach", None), cfg.rl.approach)
    cfg.rl.k = o(getattr(args, "k", None), cfg.rl.k)
    cfg.rl.n_iterations = o(getattr(args, "iterations", None), cfg.rl.n_iterations)
    sched = getattr(args, "schedule", None)
    if sched is not None:
        cfg.rl.schedule_kind = _schedule_kind(sched)
    cfg.rl.tau0 = o(getattr(args, "tau0", None), cfg.rl.tau0)
    cfg.rl.tauT = o(getattr(args, "tauT", None), cfg.rl.tauT)
    cfg.rl.reward_smoothing = o(getattr(args, "reward_smoothing", None),
                                cfg.rl.reward_smoothing)
    cfg.validate()
    if need_data and ds_vocab is not None:
        if cfg.dataset.max_len + 2 > cfg.model.max_seq_len:
            raise ConfigError(
                f"dataset max_len {cfg.dataset.max_len} does not fit the "
                f"model's max_seq_len {cfg.model.max_seq_len} (need +2 for "
                "sentinels)")
        if cfg.dataset.vocab_size > cfg.model.vocab_size:
            raise ConfigError(
                f"dataset vocab {cfg.dataset.vocab_size} exceeds model vocab "
                f"{cfg.model.vocab_size}")
    return cfg


def _load_split(cfg: RunConfig, name: str):
    if not cfg.data_dir:
        raise ConfigError("data directory required: pass --data-dir")
    return load_pairs(Path(cfg.data_dir) / f"{name}.jsonl")


def _save_run_config(cfg: RunConfig) -> None:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_config.json").write_text(cfg.to_json() + "\n")


# -- subcommands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    spec = DatasetSpec(
        task=args.task or "lexmap",
        vocab_size=args.vocab_size or 32,
        min_len=args.min_len, max_len=args.max_len,
        n_train=args.n_train, n_valid=args.n_valid, n_test=args.n_test,
        seed=args.seed or 0)
    spec.validate()
    paths = gen_dataset(spec, args.out_dir or "data")
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _resolve_config(args)
    _save_run_config(cfg)
    train = _load_split(cfg, "train")
    valid = _load_split(cfg, "valid")
    model = EditPolicyModel(cfg.model, substream(cfg.seed, "init"))
    summary = pretrain(model, train, valid, cfg.pretrain, cfg.seed, cfg.out_dir)
    bleu = summary["heldout_bleu"]
    print(f"checkpoint: {summary['checkpoint']}")
    print(f"heldout BLEU: {bleu * 100:.2f}" if bleu is not None else "heldout BLEU: n/a")
    return 0


def cmd_rl(args) -> int:
    cfg = _resolve_config(args)
    ckpt = _require_checkpoint(cfg.checkpoint)
    _save_run_config(cfg)
    train = _load_split(cfg, "train")
    valid = _load_split(cfg, "valid")
    if args.sweep:
        make_model = lambda: load_model(ckpt)[0]  # noqa: E731
        rows = run_temperature_sweep(make_model, train, valid, cfg.rl,
                                     cfg.seed, cfg.out_dir)
        print(f"sweep table: {Path(cfg.out_dir) / 'temperature_sweep.csv'}")
        for row in rows:
            bleu = row["final_bleu"]
            shown = f"{bleu * 100:.2f}" if bleu is not None else "n/a"
            print(f"{row['schedule']}: {shown}")
        return 0
    model, _ = load_model(ckpt)
    summary = rl_finetune(model, train, valid, cfg.rl, cfg.seed, cfg.out_dir)
    if args.dump_traces:
        from .editing import dump_traces, rollout_batch
        n = min(args.dump_traces, len(valid))
        rngs = [substream(cfg.seed, "trace-dump", i) for i in range(n)]
        traces = rollout_batch(model, [src for src, _ in valid[:n]],
                               cfg.rl.n_iterations, cfg.rl.tauT, rngs,
                               references=[tgt for _, tgt in valid[:n]],
                               record_step_bleu=True,
                               smoothing=cfg.rl.reward_smoothing)
        trace_path = Path(cfg.out_dir) / "traces.jsonl"
        dump_traces(trace_path, traces, references=[tgt for _, tgt in valid[:n]])
        print(f"traces: {trace_path}")
    bleu = summary["heldout_bleu"]
    print(f"checkpoint: {summary['checkpoint']}")
    print(f"heldout BLEU: {bleu * 100:.2f}" if bleu is not None else "heldout BLEU: n/a")
    return 0


def cmd_decode(args) -> int:
    ckpt = _require_checkpoint(args.checkpoint)
    model, _ = load_model(ckpt)
    pairs = load_pairs(args.input)
    if not pairs:
        raise ValueError(f"decode input is empty: {args.input}")
    out_path = Path(args.out or (Path(args.out_dir or ".") / "decoded.jsonl"))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w") as fh:
        for i in range(0, len(pairs), 64):
            chunk = pairs[i:i + 64]
            hyps = greedy_decode_batch(model, [s for s, _ in chunk],
                                       max_iters=args.max_iters)
            for (src, _), hyp in zip(chunk, hyps):
                fh.write(json.dumps({"src": src, "hyp": list(hyp.content)}) + "\n")
    print(f"decoded: {out_path}")
    return 0


def cmd_eval(args) -> int:
    pairs = load_pairs(args.input)
    if not pairs:
        raise ValueError(f"eval input is empty: {args.input}")
    refs = [tgt for _, tgt in pairs]
    if args.hyp:
        with open(args.hyp) as fh:
            hyps = [json.loads(line)["hyp"] for line in fh if line.strip()]
        if len(hyps) != len(refs):
            raise ValueError(
                f"{len(hyps)} hypotheses for {len(refs)} references")
        bleu = corpus_bleu(list(zip(hyps, refs)))
    else:
        ckpt = _require_checkpoint(args.checkpoint)
        model, _ = load_model(ckpt)
        bleu = evaluate_corpus(model, pairs, threads=args.threads or _threads_default())
    print(f"{bleu * 100:.2f}")
    return 0


def cmd_stats(args) -> int:
    shown = False
    if args.run_dir:
        run_dir = Path(args.run_dir)
        for stats_file in sorted(run_dir.glob("advantage_stats_*.json")):
            stats = AdvantageStats.from_json(stats_file.read_text())
            print(f"# {stats_file.name}")
            print(f"{'iteration':>9}  {'operation':<16} {'sd':>10}")
            for row in stats.rows():
                print(f"{row['iteration']:>9}  {row['operation']:<16} "
                      f"{row['sd']:>10.4f}")
            csv_path = run_dir / (stats_file.stem.replace("stats", "sd") + ".csv")
            stats.write_csv(csv_path)
            print(f"csv: {csv_path}")
            shown = True
    if args.traces:
        records = load_trace_records(args.traces)
        if not records:
            raise ValueError(f"trace file is empty: {args.traces}")
        finals = [r["steps"][-1]["bleu"] for r in records
                  if r["steps"] and r["steps"][-1]["bleu"] is not None]
        print(f"traces: {len(records)}")
        if finals:
            print(f"mean final BLEU: {100 * float(np.mean(finals)):.2f}")
        flagged = sum(1 for r in records if r["flagged"])
        print(f"flagged (length-clamped): {flagged}")
        shown = True
    if not shown:
        raise ValueError("nothing to report: pass --run-dir and/or --traces")
    return 0


# -- parser ------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for evaluation (env LEVRL_THREADS)")
    p.add_argument("--config", type=str, default=None,
                   help="JSON RunConfig file; explicit flags override it")


def _add_train_common(p: argparse.ArgumentParser) -> None:
    _add_common(p)
    p.add_argument("--data-dir", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--max-placeholders", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="levrl",
        description="Edit-based sequence generation workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--task", choices=["copy", "reverse", "sort", "lexmap"],
                   default=None)
    p.add_argument("--vocab-size", type=int, default=None)
    p.add_argument("--min-len", type=int, default=4)
    p.add_argument("--max-len", type=int, default=12)
    p.add_argument("--n-train", type=int, default=10000)
    p.add_argument("--n-valid", type=int, default=500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="supervised dual-policy pre-training")
    _add_train_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("rl", help="REINFORCE fine-tuning")
    _add_train_common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--approach", choices=["stepwise", "episodic"], default=None)
    p.add_argument("--k", type=int, default=None, help="baseline sample size (default 5)")
    p.add_argument("--iterations", type=int, default=None,
                   help="edit iterations per rollout (default 3)")
    p.add_argument("--schedule", choices=["constant", "anneal-down", "anneal-up"],
                   default=None)
    p.add_argument("--tau0", type=float, default=None)
    p.add_argument("--tauT", type=float, default=None)
    p.add_argument("--reward-smoothing", choices=["none", "addone"], default=None)
    p.add_argument("--sweep", action="store_true",
                   help="run the five temperature settings and emit one table")
    p.add_argument("--dump-traces", type=int, default=0, metavar="N",
                   help="after training, dump N sampled rollout traces (JSONL)")
    p.set_defaults(func=cmd_rl)

    p = sub.add_parser("decode", help="greedy decode a dataset file")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--input", type=str, required=True)
    p.add_argument("--out", type=str, default=None)
    p.add_argument("--max-iters", type=int, default=10)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="corpus BLEU of a checkpoint or hyp file")
    _add_common(p)
    p.add_argument("--checkpoint", type=str, default=None)
    p.add_argument("--input", type=str, required=True,
                   help="JSONL with {'src':..., 'tgt':...} references")
    p.add_argument("--hyp", type=str, default=None,
                   help="JSONL with {'hyp': ...}; skips decoding")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="render advantage-SD table / trace summary")
    p.add_argument("--run-dir", type=str, default=None)
    p.add_argument("--traces", type=str, default=None)
    p.set_defaults(func=cmd_stats)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
