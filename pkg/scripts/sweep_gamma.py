"""Parallel composition over gamma in {0, 0.2, ..., 1} at one noise condition.

    python3 scripts/sweep_gamma.py --noise babble --snr 0 --out results/gamma.tsv
"""

import argparse
from pathlib import Path

from tsattn import experiments as X
from tsattn.dataset import SyntheticSpeakerSpec, generate_synthetic_corpus, read_manifest


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/toy_ft.conf")
    p.add_argument("--manifest")
    p.add_argument("--noise", default="babble")
    p.add_argument("--snr", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/gamma.tsv")
    args = p.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        manifest = read_manifest(args.manifest)
    else:
        manifest = generate_synthetic_corpus(SyntheticSpeakerSpec(8, 50, 2.0, seed=args.seed), out.parent / "corpus")
    run = X.load_run_config(args.config, {"scenario": "parallel", "seed": args.seed})
    loader = X.NoisyLoader(manifest, run.model.feature_kind)
    rows = X.sweep_gamma(manifest, run, loader, args.noise, args.snr, args.seed)
    text = X.write_tsv(["gamma", "top1", "eer"], rows)
    out.write_text(text)
    print(text, end="")


if __name__ == "__main__":
    main()
