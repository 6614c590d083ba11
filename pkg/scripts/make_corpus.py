"""Write a synthetic one-speaker corpus as 16 kHz PCM16 WAV files.

    python3 scripts/make_corpus.py corpus --utterances 60 --duration 2
"""
import argparse
from pathlib import Path

from glotnet import corpus, dsp


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out", type=Path)
    ap.add_argument("--utterances", type=int, default=60)
    ap.add_argument("--duration", type=float, default=2.0, help="seconds per utterance")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    for name, x in corpus.make_corpus(args.utterances, args.duration, args.seed):
        dsp.write_wav(args.out / f"{name}.wav", x)
    print(f"wrote {args.utterances} utterances to {args.out}")


if __name__ == "__main__":
    main()
