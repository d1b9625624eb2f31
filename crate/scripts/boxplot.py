"""Box-plot of occlusion proportion per interval from `flowacc occ-stats` output.

usage: python scripts/boxplot.py <reports>/occ_samples.csv [out.png]
"""

import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main() -> None:
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    samples = defaultdict(list)
    with open(sys.argv[1], newline="") as f:
        for row in csv.DictReader(f):
            samples[int(row["delta"])].append(float(row["alpha"]))
    deltas = sorted(samples)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([samples[d] for d in deltas], tick_labels=[str(d) for d in deltas], showfliers=False)
    ax.set_xlabel("frame interval")
    ax.set_ylabel("occlusion proportion")
    fig.tight_layout()
    out = sys.argv[2] if len(sys.argv) > 2 else "occ_boxplot.png"
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
