"""Command-line entry point: ``tsattn <command> [flags]`` or ``python3 -m tsattn``.

Commands: synth, features, mix, train, eval, sweep-gamma, gradcheck. Results
tables go to stdout as TSV (and to ``--out`` when given). Errors print one
``error: ...`` line to stderr and exit with status 2; gradcheck exits 1 when
any op fails. ``TSA_NUM_THREADS`` bounds the worker pool used for feature
extraction and mixing (default 1).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import experiments as X
from . import gradcheck as G
from .attention import Scenario
from .backbones import SpeakerModel
from .checkpoint import CheckpointError, load_model, save_model
from .dataset import Manifest, ManifestEntry, SyntheticSpeakerSpec, generate_synthetic_corpus, read_manifest, write_manifest
from .errors import AudioError, ConfigError
from .features import FeatureKind, read_wav, write_wav
from .noise import SNR_GRID, MixSpec, NoiseKind, mix, read_noise_manifest, resolve_source
from .objectives import read_trials
from .trainer import TrainingDiverged, train

log = logging.getLogger("tsattn")

EVAL_COLUMNS = ("noise", "snr", "top1", "eer")
SWEEP_COLUMNS = ("gamma", "top1", "eer")
GRADCHECK_COLUMNS = ("op", "seeds", "max_rel_error", "status")


def num_threads() -> int:
    raw = os.environ.get("TSA_NUM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"TSA_NUM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"TSA_NUM_THREADS must be a positive integer, got {n}")
    return n


def parallel_map(fn, items):
    """Ordered map over a bounded thread pool; results do not depend on the thread count."""
    items = list(items)
    n = min(num_threads(), max(len(items), 1))
    if n == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def parse_snrs(text: str | None) -> list[float]:
    if text is None:
        return list(SNR_GRID)
    try:
        vals = [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"--snr expects comma-separated numbers, got {text!r}") from None
    if not vals:
        raise ConfigError("--snr is empty")
    return vals


def fmt_snr(snr: float) -> str:
    return f"{snr:g}"


def emit(text: str, out) -> None:
    """Write a finished table to ``out`` (if any) and stdout; nothing is written before it is complete."""
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    sys.stdout.flush()


def _require_file(path, flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{flag}: no such file {str(p)!r}")
    return p


def _manifest(args) -> Manifest:
    return read_manifest(_require_file(args.manifest, "--manifest"))


def _noise_manifest(args) -> dict:
    if getattr(args, "noise_manifest", None) is None:
        return {}
    return read_noise_manifest(_require_file(args.noise_manifest, "--noise-manifest"))


def _overrides(args) -> dict:
    return {"seed": args.seed, "scenario": args.scenario, "gamma": args.gamma}


# -- commands --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    spec = SyntheticSpeakerSpec(args.speakers, args.utts, args.duration, args.seed if args.seed is not None else 0, args.test_fraction)
    m = generate_synthetic_corpus(spec, args.out)
    print(f"wrote {len(m)} utterances from {len(m.speakers)} speakers to {Path(args.out) / 'manifest.txt'}")
    return 0


def cmd_features(args) -> int:
    manifest = _manifest(args)
    if args.out is None:
        raise ConfigError("--out (cache directory) is required")
    loader = X.NoisyLoader(manifest, args.kind, cache_dir=args.out)
    fms = parallel_map(loader, [e.path for e in manifest.entries])
    print(f"cached {len(fms)} {FeatureKind(args.kind).value} matrices in {args.out}")
    return 0


def cmd_mix(args) -> int:
    manifest = _manifest(args)
    if args.out is None:
        raise ConfigError("--out (output directory) is required")
    if args.noise is None:
        raise ConfigError("--noise is required")
    kind = NoiseKind(args.noise)
    source = resolve_source(kind, _noise_manifest(args), allow_standin=True)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out)
    fixed = None if args.snr in (None, "random") else parse_snrs(args.snr)
    if fixed is not None and len(fixed) != 1:
        raise ConfigError("mix takes a single --snr value (or 'random' for the training grid)")
    todo = [e for e in manifest.entries if args.split == "all" or e.split == args.split]

    def one(e: ManifestEntry) -> ManifestEntry:
        useed = X.utterance_seed(seed, e.path)
        spec = MixSpec.training(kind, np.random.default_rng(useed)) if fixed is None else MixSpec(fixed[0], kind, useed)
        (out / e.path).parent.mkdir(parents=True, exist_ok=True)
        write_wav(out / e.path, mix(read_wav(manifest.resolve(e)), source, spec))
        return e

    done = parallel_map(one, todo)
    write_manifest(out / "manifest.txt", Manifest(done, out))
    print(f"mixed {len(done)} utterances with {kind.value} into {out}")
    return 0


def cmd_train(args) -> int:
    run = X.load_run_config(_require_file(args.config, "--config"), _overrides(args))
    manifest = _manifest(args)
    manifest.check_identification()
    if args.out is None:
        raise ConfigError("--out (run directory) is required")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model_cfg = run.model.replace(n_speakers=len(manifest.speakers))
    echo = model_cfg.to_text() + "".join(
        f"{k} = {v}\n"
        for k, v in (
            ("epochs", run.train.epochs),
            ("finetune_epochs", run.train.finetune_epochs),
            ("lr_first_epoch", repr(run.train.lr(0, "CE"))),
            ("finetune_lr_first_epoch", repr(run.train.lr(0, "AMS"))),
            ("decay", repr(run.train.decay)),
            ("train_noise", run.train_noise),
        )
    )
    (out / "config.txt").write_text(echo, encoding="utf-8")
    log_path = out / "metrics.log"
    if args.resume is None and log_path.exists():
        log_path.unlink()
    loader = X.NoisyLoader(manifest, model_cfg.feature_kind, _noise_manifest(args), cache_dir=args.cache)
    model, history = train(
        SpeakerModel(model_cfg), X.prepare_training(manifest, run), loader, run.train, out_dir=out, resume_from=args.resume
    )
    save_model(out / "final.ckpt", model, {"has_ams": "true" if model.ams_weight is not None else "false"})
    for rec in history:
        print(rec.line())
    return 0


def cmd_eval(args) -> int:
    model, _, _ = load_model(_require_file(args.checkpoint, "--checkpoint"))
    manifest = _manifest(args)
    if len(manifest.speakers) != model.config.n_speakers:
        raise ConfigError(f"manifest has {len(manifest.speakers)} speakers but the checkpoint was trained on {model.config.n_speakers}")
    seed = args.seed if args.seed is not None else 0
    trials = read_trials(_require_file(args.trials, "--trials")) if args.trials else None
    loader = X.NoisyLoader(manifest, model.config.feature_kind, _noise_manifest(args))
    noise = args.noise or "none"
    conditions = [("none", None)] if noise == "none" else [(NoiseKind(noise).value, s) for s in parse_snrs(args.snr)]
    rows = []
    for kind, snr in conditions:
        top1, err = X.evaluate_condition(model, manifest, loader, kind, snr, seed, task=args.task, trials=trials)
        rows.append([kind, "-" if snr is None else fmt_snr(snr), top1, err])
    emit(X.write_tsv(EVAL_COLUMNS, rows), args.out)
    return 0


def cmd_sweep_gamma(args) -> int:
    run = X.load_run_config(_require_file(args.config, "--config"), {"seed": args.seed})
    manifest = _manifest(args)
    manifest.check_identification()
    snrs = parse_snrs(args.snr)
    if len(snrs) != 1:
        raise ConfigError("sweep-gamma takes a single --snr value")
    loader = X.NoisyLoader(manifest, run.model.feature_kind, _noise_manifest(args))
    rows = X.sweep_gamma(manifest, run, loader, NoiseKind(args.noise).value, snrs[0], run.train.seed)
    emit(X.write_tsv(SWEEP_COLUMNS, rows), args.out)
    return 0


def cmd_gradcheck(args) -> int:
    names = args.ops.split(",") if args.ops else list(G.CASES)
    unknown = [n for n in names if n not in G.CASES]
    if unknown:
        raise ConfigError(f"unknown ops {unknown}; choose from {sorted(G.CASES)}")
    base = args.seed if args.seed is not None else 0
    rows, failed = [], False
    for name in names:
        r = G.run_case(name, args.seeds, base)
        print(f"{name}: {r.seconds:.1f}s", file=sys.stderr)
        failed |= not r.passed
        rows.append([name, r.seeds, f"{r.max_rel_error:.3e}", "pass" if r.passed else "FAIL"])
    emit(X.write_tsv(GRADCHECK_COLUMNS, rows), args.out)
    return 1 if failed else 0


# -- parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsattn", description="Two-stage attention speaker recognition experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *flags):
        sp.add_argument("--seed", type=int, default=None)
        if "manifest" in flags:
            sp.add_argument("--manifest", help="<path> <speaker> <split> list")
        if "noise_manifest" in flags:
            sp.add_argument("--noise-manifest", help="[noise]/[music]/[speech] sections of WAV paths")
        if "out" in flags:
            sp.add_argument("--out")
        if "config" in flags:
            sp.add_argument("--config", help="flat key = value file")
        return sp

    sp = common(sub.add_parser("synth", help="generate a synthetic speaker corpus"), "out")
    sp.add_argument("--speakers", type=int, default=8)
    sp.add_argument("--utts", type=int, default=50)
    sp.add_argument("--duration", type=float, default=2.0)
    sp.add_argument("--test-fraction", type=float, default=0.2)
    sp.set_defaults(fn=cmd_synth)

    sp = common(sub.add_parser("features", help="extract and cache features"), "manifest", "out")
    sp.add_argument("--kind", choices=[k.value for k in FeatureKind], default=FeatureKind.LOGMEL40.value)
    sp.set_defaults(fn=cmd_features)

    sp = common(sub.add_parser("mix", help="write noisy copies of a manifest"), "manifest", "noise_manifest", "out")
    sp.add_argument("--noise", choices=[k.value for k in NoiseKind])
    sp.add_argument("--snr", help="dB, or 'random' to draw from the training grid per utterance")
    sp.add_argument("--split", choices=("all", "train", "test"), default="all")
    sp.set_defaults(fn=cmd_mix)

    sp = common(sub.add_parser("train", help="train a model from a config file"), "manifest", "noise_manifest", "out", "config")
    sp.add_argument("--scenario", choices=[s.value for s in Scenario])
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--resume", help="checkpoint written by a previous run")
    sp.add_argument("--cache", help="feature cache directory")
    sp.set_defaults(fn=cmd_train)

    sp = common(sub.add_parser("eval", help="top-1 / EER per noise condition as TSV"), "manifest", "noise_manifest", "out")
    sp.add_argument("--checkpoint")
    sp.add_argument("--task", choices=("identify", "verify"), default="identify")
    sp.add_argument("--noise", choices=["none"] + [k.value for k in NoiseKind], default="none")
    sp.add_argument("--snr", help="comma-separated dB list (default: 0,5,10,15,20)")
    sp.add_argument("--trials", help="'<0|1> <utt_a> <utt_b>' lines; generated from the test split if omitted")
    sp.set_defaults(fn=cmd_eval)

    sp = common(sub.add_parser("sweep-gamma", help="parallel scenario over the gamma grid"), "manifest", "noise_manifest", "out", "config")
    sp.add_argument("--noise", choices=[k.value for k in NoiseKind], default=NoiseKind.BABBLE.value)
    sp.add_argument("--snr", default="0")
    sp.set_defaults(fn=cmd_sweep_gamma)

    sp = common(sub.add_parser("gradcheck", help="finite-difference check of every differentiable op"), "out")
    sp.add_argument("--seeds", type=int, default=100)
    sp.add_argument("--ops", help="comma-separated subset of op names")
    sp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, AudioError, CheckpointError, TrainingDiverged, ValueError, OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
