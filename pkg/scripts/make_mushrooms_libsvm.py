"""Convert the UCI mushroom table (CSV with header) into LIBSVM format.

Every categorical attribute except stalk-root (the one with missing values) is
one-hot encoded over the values that occur, attributes in column order and
values sorted within each attribute. This yields 112 binary features. Labels:
edible -> 1, poisonous -> 2.

    python scripts/make_mushrooms_libsvm.py mushroom.csv data/mushrooms
"""

import csv
import sys


def main(src, dst):
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    label_col = next(k for k, h in enumerate(header) if "edible" in h.lower())
    feature_cols = [k for k, h in enumerate(header) if k != label_col and h.lower() != "stalk-root"]
    index = {}
    for k in feature_cols:
        for v in sorted({r[k] for r in body}):
            index[(k, v)] = len(index) + 1
    with open(dst, "w") as out:
        for r in body:
            label = 1 if r[label_col] == "e" else 2
            feats = sorted(index[(k, r[k])] for k in feature_cols)
            out.write(f"{label} " + " ".join(f"{j}:1" for j in feats) + "\n")
    print(f"{len(body)} rows, {len(index)} features -> {dst}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
