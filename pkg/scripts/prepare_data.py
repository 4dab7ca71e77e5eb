"""Build the income and protein CSV files under ``data/`` from PyPI wheels.

The income files are the original Adult train/test files shipped inside the
``responsibly`` wheel. The protein file (UCI Yeast, 1,484 rows, 10 sites)
is rebuilt from the one-vs-rest KEEL splits in ``imbalanced-databases``:
each split labels a subset of the same 1,484 feature rows, so site labels
are recovered by matching rows on their feature values.

Usage: python scripts/prepare_data.py [--out data] [--wheels DIR]
"""

from __future__ import annotations

import argparse
import csv
import io
import subprocess
import sys
import tempfile
import zipfile
from collections import Counter
from pathlib import Path

ADULT_WHEEL = "responsibly==0.1.2"
KEEL_WHEEL = "imbalanced-databases==0.1.1"
ADULT_COLUMNS = ["age", "workclass", "fnlwgt", "education", "education_num",
                 "marital_status", "occupation", "relationship", "race", "sex",
                 "capital_gain", "capital_loss", "hours_per_week", "native_country", "income"]
YEAST_COLUMNS = ["mcg", "gvh", "alm", "mit", "erl", "pox", "vac", "nuc", "site"]


def fetch(spec: str, dest: Path) -> Path:
    name = spec.split("==")[0].replace("-", "_")
    found = sorted(dest.glob(f"{name}-*.whl"))
    if not found:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(dest), spec],
                       check=True)
        found = sorted(dest.glob(f"{name}-*.whl"))
    return found[-1]


def write_adult(wheel: Path, out: Path) -> None:
    with zipfile.ZipFile(wheel) as z:
        for member, target in [("adult.data", "adult_train.csv"), ("adult.test", "adult_test.csv")]:
            text = z.read(f"responsibly/dataset/adult/{member}").decode("utf-8")
            rows = []
            for line in text.splitlines():
                if not line.strip() or line.startswith("|"):
                    continue
                cells = [c.strip() for c in line.split(",")]
                cells[-1] = cells[-1].rstrip(".")
                rows.append(cells)
            with open(out / target, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(ADULT_COLUMNS)
                w.writerows(rows)
            print(f"{target}: {len(rows)} rows")


def _keel(z: zipfile.ZipFile, name: str):
    text = z.read(f"imbalanced_databases/data/{name}/{name}.dat").decode("utf-8")
    rows = []
    for line in io.StringIO(text):
        if line.startswith("@") or not line.strip():
            continue
        cells = [c.strip() for c in line.split(",")]
        rows.append((tuple(float(x) for x in cells[:-1]), cells[-1]))
    return rows


def write_yeast(wheel: Path, out: Path) -> None:
    with zipfile.ZipFile(wheel) as z:
        base = _keel(z, "yeast1")
        feats = [f for f, _ in base]
        site = ["NUC" if lab == "positive" else None for _, lab in base]

        def rows_of(name, which="positive"):
            return Counter(f for f, lab in _keel(z, name) if lab == which)

        def assign(pool: Counter, cls: str):
            pool = pool.copy()
            for i, f in enumerate(feats):
                if site[i] is None and pool[f] > 0:
                    site[i] = cls
                    pool[f] -= 1
            if sum(v for v in pool.values() if v > 0):
                raise SystemExit(f"could not place every {cls} row")

        for name, cls in [("yeast3", "ME3"), ("yeast4", "ME2"), ("yeast5", "ME1"), ("yeast6", "EXC")]:
            assign(rows_of(name), cls)
        assign(rows_of("yeast-1-4-5-8_vs_7"), "VAC")
        assign(rows_of("yeast-2_vs_8"), "POX")
        assign(rows_of("yeast-2_vs_4", "negative"), "CYT")
        # yeast-1-2-8-9_vs_7 negatives are NUC, CYT, POX and ERL
        erl = rows_of("yeast-1-2-8-9_vs_7", "negative")
        for cls in ("NUC", "CYT", "POX"):
            erl -= Counter(f for f, s in zip(feats, site) if s == cls)
        assign(erl, "ERL")
        site = [s or "MIT" for s in site]

    with open(out / "yeast.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(YEAST_COLUMNS)
        for f, s in zip(feats, site):
            w.writerow([f"{x:.2f}" for x in f] + [s])
    print(f"yeast.csv: {len(feats)} rows, sites {dict(Counter(site).most_common())}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "data"))
    ap.add_argument("--wheels", default=None, help="directory holding (or receiving) the wheels")
    args = ap.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        wheels = Path(args.wheels or tmp)
        wheels.mkdir(parents=True, exist_ok=True)
        write_adult(fetch(ADULT_WHEEL, wheels), out)
        write_yeast(fetch(KEEL_WHEEL, wheels), out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
