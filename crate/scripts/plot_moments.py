"""Plot moments.csv written by `spectral-em oracle` or `spectral-em maxreg`.

    python scripts/plot_moments.py out/moments.csv [figure.png]
"""

import sys

import matplotlib.pyplot as plt
import pandas as pd


def main(path, target=None):
    df = pd.read_csv(path)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for j, group in df.groupby("j"):
        if "full" in group:
            (line,) = ax.plot(group["tau"], group["full"], marker="o", ms=3, label=f"j={j}")
            if group["continuous"].notna().all():
                ax.plot(group["tau"], group["continuous"], ls="--", color=line.get_color())
        else:
            ax.errorbar(group["tau"], group["estimate"], yerr=4 * group["standard_error"],
                        marker="o", ms=3, capsize=2, label=f"j={j}")
            if group["exact"].notna().all():
                ax.plot(group["tau"], group["exact"], ls="--", color="k", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("E X_j(t)^2")
    ax.legend(ncol=2, fontsize=8)
    fig.tight_layout()
    if target:
        fig.savefig(target, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main(*sys.argv[1:3])
