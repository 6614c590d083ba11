"""Train tiny GlotNet and WaveNet models on two minutes of one synthetic
speaker and compare copy-synthesis quality on the training utterances.

    python3 scripts/overfit_experiment.py --minutes 20 --out results/overfit
"""
import argparse
import json
import logging
from pathlib import Path

from glotnet import dsp, evaluation, experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--minutes", type=float, default=20.0, help="training budget per model")
    ap.add_argument("--utterances", type=int, default=60)
    ap.add_argument("--duration", type=float, default=2.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--ema-decay", type=float, default=0.995)
    ap.add_argument("--out", type=Path, default=None, help="write WAVs and reports here")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cfg = experiment.OverfitConfig(n_utterances=args.utterances, duration=args.duration, seed=args.seed)
    cfg.train.time_limit = args.minutes * 60.0
    cfg.train.ema_decay = args.ema_decay
    res = experiment.run(cfg)
    print(experiment.summary(res))
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        names = res["prepared"].names
        for label, outs in res["speech"].items():
            d = args.out / label
            d.mkdir(exist_ok=True)
            for n, y in zip(names, outs):
                dsp.write_wav(d / f"{n}.wav", y)
            evaluation.write_report(res["reports"][label], args.out / f"report_{label}")
        (args.out / "summary.json").write_text(json.dumps(
            {k: res[k] for k in ("aggregate", "train_seconds", "final_loss", "steps", "gen_rate")}, indent=2))


if __name__ == "__main__":
    main()
