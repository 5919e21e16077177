"""Train every attention scenario and evaluate it over noise kinds x SNR grid.

    python3 scripts/run_grid.py --config configs/toy_ft.conf --out results/grid
    python3 scripts/run_grid.py --manifest data/manifest.txt --noise-manifest data/noise.txt

Without --manifest a synthetic corpus (8 speakers x 50 x 2 s) is generated.
Writes grid.tsv with columns scenario, noise, snr, top1, eer.
"""

import argparse
import logging
from pathlib import Path

from tsattn import experiments as X
from tsattn.dataset import SyntheticSpeakerSpec, generate_synthetic_corpus, read_manifest
from tsattn.noise import SNR_GRID, read_noise_manifest

SCENARIOS = ("none", "time", "freq", "ft", "tf", "parallel")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="configs/toy_ft.conf")
    p.add_argument("--manifest")
    p.add_argument("--noise-manifest")
    p.add_argument("--out", default="results/grid")
    p.add_argument("--scenarios", default=",".join(SCENARIOS))
    p.add_argument("--noise", default="babble,music,noise")
    p.add_argument("--train-noise", default=None, help="override train_noise from the config")
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        manifest = read_manifest(args.manifest)
    else:
        manifest = generate_synthetic_corpus(SyntheticSpeakerSpec(8, 50, 2.0, seed=args.seed), out / "corpus")
    noise_manifest = read_noise_manifest(args.noise_manifest) if args.noise_manifest else None
    base = X.parse_config_text(Path(args.config).read_text())
    if args.train_noise:
        base["train_noise"] = args.train_noise

    rows = []
    for scenario in args.scenarios.split(","):
        run = X.build_run_config(base, {"scenario": scenario, "seed": args.seed})
        loader = X.NoisyLoader(manifest, run.model.feature_kind, noise_manifest)
        model = X.train_model(manifest, run, loader)
        top1, eer = X.evaluate_condition(model, manifest, loader, "none", None, args.seed)
        rows.append([scenario, "none", "-", top1, eer])
        for kind in args.noise.split(","):
            for snr in SNR_GRID:
                top1, eer = X.evaluate_condition(model, manifest, loader, kind, snr, args.seed)
                rows.append([scenario, kind, f"{snr:g}", top1, eer])
                logging.info("%s %s %g dB top1=%.3f eer=%.3f", scenario, kind, snr, top1, eer)
    (out / "grid.tsv").write_text(X.write_tsv(["scenario", "noise", "snr", "top1", "eer"], rows))


if __name__ == "__main__":
    main()
