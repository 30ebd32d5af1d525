"""Convert locally available copies of the benchmark tables into plain numeric CSVs.

The sandbox this was built in had no network access, so the sources are
files shipped inside other Python distributions. Pass whichever you have:

    python3 scripts/prepare_datasets.py --out data \
        --pydataset pydataset-0.2.0.tar.gz \
        --themis themis-ml-0.0.4.tar.gz \
        --keel keel_ds-0.2.5-py3-none-any.whl \
        --orange orange3-3.39.0-*.whl

UCI originals (--wine winequality-red.csv, --ionosphere ionosphere.data)
are accepted too. Each output has a header row and a final ``target``
column.
"""
import argparse
import csv
import io
import tarfile
import zipfile
from collections import Counter
from pathlib import Path


def read_member(archive: Path, suffix: str) -> bytes:
    """Bytes of the first archive member whose name ends with ``suffix`` (tar/zip, nested tar allowed)."""
    if zipfile.is_zipfile(archive):
        with zipfile.ZipFile(archive) as z:
            for name in z.namelist():
                if name.endswith(suffix):
                    return z.read(name)
    else:
        with tarfile.open(archive) as t:
            for m in t.getmembers():
                if m.name.endswith(suffix) and "/._" not in m.name:
                    return t.extractfile(m).read()
            for m in t.getmembers():
                if m.name.endswith("resources.tar.gz"):
                    inner = tarfile.open(fileobj=io.BytesIO(t.extractfile(m).read()))
                    for im in inner.getmembers():
                        if im.name.endswith(suffix) and "/._" not in im.name:
                            return inner.extractfile(im).read()
    raise SystemExit(f"{suffix} not found in {archive}")


def write(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    print(f"wrote {path} ({len(rows)} rows, {len(header) - 1} features)")


def boston(src: Path, out: Path):
    rows = list(csv.reader(io.StringIO(read_member(src, "MASS/Boston.csv").decode())))
    header = rows[0][1:-1] + ["target"]
    write(out / "boston.csv", header, [r[1:] for r in rows[1:]])


def german(src: Path, out: Path):
    """Categorical codes such as A34 become their within-attribute ordinal (4); numbers pass through."""
    rows = list(csv.reader(io.StringIO(read_member(src, "german_credit.csv").decode())))
    header = rows[0][:-1] + ["target"]
    body = []
    for r in rows[1:]:
        feats = []
        for j, cell in enumerate(r[:-1]):
            if cell.startswith("A"):
                code = cell[1:]
                prefix = str(j + 1)
                feats.append(str(int(code[len(prefix):]) if code.startswith(prefix) else int(code)))
            else:
                feats.append(cell)
        body.append(feats + [r[-1]])
    write(out / "german_credit.csv", header, body)


WINE_NAMES = ["fixed_acidity", "volatile_acidity", "citric_acid", "residual_sugar", "chlorides",
              "free_sulfur_dioxide", "total_sulfur_dioxide", "density", "pH", "sulphates", "alcohol"]


def _keel_rows(src: Path, name: str):
    text = read_member(src, "/" + name).decode()
    return [[c.strip() for c in line.split(",")] for line in text.splitlines() if line and not line.startswith("@")]


def wine_from_keel(src: Path, out: Path):
    """Rebuild the 3..8 quality grades from KEEL's one-vs-rest splits.

    ``red-4`` lists every row (positive = grade 4); ``3_vs_5``, ``8_vs_6``
    and ``8_vs_6-7`` pin the other grades, and rows are matched by value.
    """
    grade = {}

    def tag(rows, positive, negative):
        for r in rows:
            key = tuple(r[:-1])
            grade.setdefault(key, Counter())[positive if r[-1] == "positive" else negative] += 1

    every = _keel_rows(src, "winequality-red-4.dat")
    tag(_keel_rows(src, "winequality-red-3_vs_5.dat"), 3, 5)
    tag(_keel_rows(src, "winequality-red-8_vs_6.dat"), 8, 6)
    seven = Counter()
    six_or_eight = Counter(tuple(r[:-1]) for r in _keel_rows(src, "winequality-red-8_vs_6.dat"))
    for r in _keel_rows(src, "winequality-red-8_vs_6-7.dat"):
        key = tuple(r[:-1])
        if six_or_eight[key]:
            six_or_eight[key] -= 1
        else:
            seven[key] += 1
    for key, c in seven.items():
        grade.setdefault(key, Counter())[7] += c
    body = []
    for r in every:
        key = tuple(r[:-1])
        if r[-1] == "positive":
            body.append(list(key) + ["4"])
            continue
        pool = grade.get(key)
        if not pool:
            raise SystemExit(f"no grade recovered for row {key}")
        g = min(k for k, v in pool.items() if v > 0)
        pool[g] -= 1
        if pool[g] == 0:
            del pool[g]
        body.append(list(key) + [str(g)])
    write(out / "wine_quality_red.csv", WINE_NAMES + ["target"], body)


def ionosphere_from_orange(src: Path, out: Path):
    lines = read_member(src, "datasets/ionosphere.tab").decode().splitlines()
    header = lines[0].split("\t")
    rows = [line.split("\t") for line in lines[3:] if line.strip()]
    write(out / "ionosphere.csv", header[:-1] + ["target"], rows)


def wine(src: Path, out: Path):
    rows = list(csv.reader(open(src, encoding="utf-8"), delimiter=";"))
    header = [h.strip('"').replace(" ", "_") for h in rows[0][:-1]] + ["target"]
    write(out / "wine_quality_red.csv", header, rows[1:])


def ionosphere(src: Path, out: Path):
    rows = [r for r in csv.reader(open(src, encoding="utf-8")) if r]
    header = [f"a{j + 1}" for j in range(len(rows[0]) - 1)] + ["target"]
    write(out / "ionosphere.csv", header, rows)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", type=Path, default=Path("data"))
    p.add_argument("--pydataset", type=Path, help="pydataset sdist (holds MASS/Boston.csv)")
    p.add_argument("--themis", type=Path, help="themis-ml sdist (holds german_credit.csv)")
    p.add_argument("--keel", type=Path, help="keel-ds wheel (wine quality red splits)")
    p.add_argument("--orange", type=Path, help="Orange3 wheel (ionosphere.tab)")
    p.add_argument("--wine", type=Path, help="UCI winequality-red.csv (semicolon separated)")
    p.add_argument("--ionosphere", type=Path, help="UCI ionosphere.data")
    args = p.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)
    jobs = ((boston, args.pydataset), (german, args.themis), (wine_from_keel, args.keel),
            (ionosphere_from_orange, args.orange), (wine, args.wine), (ionosphere, args.ionosphere))
    for fn, src in jobs:
        if src is not None:
            fn(src, args.out)


if __name__ == "__main__":
    main()
