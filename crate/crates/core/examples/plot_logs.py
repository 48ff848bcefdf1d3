"""Plot train/validation NLL curves from one or more training logs.

    python plot_logs.py runs/mnist_qdop_lr1e-3.csv runs/mnist_sgd_lr1e0.csv -o nll.png
"""
import argparse
import csv

import matplotlib.pyplot as plt


def read_log(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    cols = {k: [float(r[k]) for r in rows] for k in rows[0]} if rows else {}
    return cols


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("logs", nargs="+")
    ap.add_argument("-o", "--out", default="nll.png")
    ap.add_argument("--time", action="store_true", help="x axis is cumulative step time")
    args = ap.parse_args()

    fig, (ax_t, ax_v) = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for path in args.logs:
        log = read_log(path)
        if not log:
            continue
        x = log["epoch"]
        if args.time:
            total, x = 0.0, []
            for w in log["wall_s"]:
                total += w
                x.append(total)
        ax_t.plot(x, log["train_nll"], label=path)
        ax_v.plot(x, log["valid_nll"], label=path)
    for ax, title in ((ax_t, "train"), (ax_v, "validation")):
        ax.set_title(title)
        ax.set_xlabel("seconds" if args.time else "epoch")
        ax.set_yscale("log")
    ax_t.set_ylabel("NLL per sample")
    ax_v.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)


if __name__ == "__main__":
    main()
