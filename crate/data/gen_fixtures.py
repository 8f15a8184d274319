"""Regenerates the synthetic fixture datasets in this directory.

Each fixture copies the row count, feature count and class counts of a
well-known imbalanced benchmark set. Values are drawn from overlapping
Gaussians: the majority class is one broad cloud, the minority class a
mixture of a few tighter subclusters offset from it. Features are then
mapped to per-feature units so that scaling matters.

    python3 data/gen_fixtures.py
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent


def draw(rng, n_min, n_maj, d, sep, n_sub):
    maj = rng.normal(0.0, 1.0, size=(n_maj, d))
    centers = []
    for _ in range(n_sub):
        direction = rng.normal(size=d)
        direction /= np.linalg.norm(direction)
        centers.append(direction * sep * rng.uniform(0.8, 1.2))
    sizes = np.full(n_sub, n_min // n_sub)
    sizes[: n_min % n_sub] += 1
    minority = np.vstack(
        [rng.normal(c, 0.6, size=(k, d)) for c, k in zip(centers, sizes)]
    )
    scale = np.exp(rng.uniform(np.log(0.5), np.log(80.0), size=d))
    offset = rng.uniform(-20.0, 60.0, size=d)
    return minority * scale + offset, maj * scale + offset


def shuffled(rng, minority, majority, pos, neg):
    x = np.vstack([minority, majority])
    y = np.array([pos] * len(minority) + [neg] * len(majority))
    order = rng.permutation(len(y))
    return x[order], y[order]


def fmt(v, integer):
    return str(int(round(v))) if integer else f"{v:.4f}"


def write_csv(path, names, x, y, integer=()):
    with open(path, "w", newline="\n") as f:
        f.write(",".join(names + ["class"]) + "\n")
        for row, label in zip(x, y):
            cells = [fmt(v, i in integer) for i, v in enumerate(row)]
            f.write(",".join(cells + [label]) + "\n")


def write_keel(path, relation, names, x, y, integer=()):
    x = np.array([[float(fmt(v, i in integer)) for i, v in enumerate(r)] for r in x])
    with open(path, "w", newline="\n") as f:
        f.write(f"@relation {relation}\n")
        for i, name in enumerate(names):
            kind = "integer" if i in integer else "real"
            lo, hi = x[:, i].min(), x[:, i].max()
            f.write(f"@attribute {name} {kind} [{fmt(lo, i in integer)}, {fmt(hi, i in integer)}]\n")
        f.write("@attribute Class {positive, negative}\n")
        f.write(f"@inputs {', '.join(names)}\n")
        f.write("@outputs Class\n")
        f.write("@data\n")
        for row, label in zip(x, y):
            cells = [fmt(v, i in integer) for i, v in enumerate(row)]
            f.write(", ".join(cells + [label]) + "\n")


FIXTURES = [
    # name, n_min, n_maj, d, sep, subclusters, format, labels, integer columns
    ("heart", 120, 150, 13, 1.6, 2, "csv", ("present", "absent"), {0, 1, 2, 5, 6, 8, 10, 11, 12}),
    ("haberman", 81, 225, 3, 1.2, 2, "keel", ("positive", "negative"), {0, 1, 2}),
    ("vertebral", 100, 210, 6, 1.8, 2, "csv", ("normal", "abnormal"), set()),
    ("yeast-0-3-5-9_vs_7-8", 50, 456, 8, 1.6, 3, "keel", ("positive", "negative"), set()),
    ("ecoli4", 20, 316, 7, 2.2, 2, "keel", ("positive", "negative"), set()),
    ("blood-transfusion", 178, 570, 4, 1.0, 2, "csv", ("donated", "not_donated"), {0, 1, 2, 3}),
    ("glass6", 29, 185, 9, 2.2, 3, "keel", ("positive", "negative"), set()),
    ("blobs-ir5", 60, 300, 4, 1.6, 3, "csv", ("minority", "majority"), set()),
    ("blobs-ir10", 40, 400, 4, 1.8, 3, "csv", ("minority", "majority"), set()),
]


def main():
    for seed, (name, n_min, n_maj, d, sep, n_sub, kind, (pos, neg), integer) in enumerate(FIXTURES):
        rng = np.random.default_rng(1000 + seed)
        minority, majority = draw(rng, n_min, n_maj, d, sep, n_sub)
        if integer:
            # counts and ages cannot be negative
            for i in integer:
                low = min(minority[:, i].min(), majority[:, i].min())
                if low < 0:
                    minority[:, i] -= low
                    majority[:, i] -= low
        x, y = shuffled(rng, minority, majority, pos, neg)
        names = [f"a{i + 1}" for i in range(d)]
        if kind == "csv":
            write_csv(OUT / f"{name}.csv", names, x, y, integer)
        else:
            write_keel(OUT / f"{name}.dat", name, names, x, y, integer)


if __name__ == "__main__":
    main()
