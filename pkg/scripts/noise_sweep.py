"""Raw distant-label accuracy of the default corpus across spurious-candidate rates.

Used to pick the default extra_candidate_rate so raw accuracy lands in
[0.45, 0.65] for every seed.

    python scripts/noise_sweep.py --rates 0.15 0.2 0.22 0.25 --seeds 10
"""

import argparse
import copy

from visdist.denoise import e_step_initial
from visdist.evaluation import label_quality
from visdist.synth import SynthConfig, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", type=float, nargs="+", default=[0.15, 0.2, 0.22, 0.25])
    ap.add_argument("--seeds", type=int, default=10)
    args = ap.parse_args()
    print("rate,min,max,per_seed")
    for rate in args.rates:
        accs = []
        for seed in range(args.seeds):
            c = generate(SynthConfig(seed=seed, extra_candidate_rate=rate))
            ds = e_step_initial(copy.deepcopy(c.ds), c.kb.num_relations)
            accs.append(label_quality(ds, c.gold))
        print(f"{rate},{min(accs):.3f},{max(accs):.3f},{';'.join(f'{a:.3f}' for a in accs)}",
              flush=True)


if __name__ == "__main__":
    main()
