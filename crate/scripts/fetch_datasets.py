#!/usr/bin/env python3
"""Fetch and convert the four benchmark datasets into data/.

The upstream source is the PMLB dataset mirror on GitHub (commit-pinned,
checksum-verified). PMLB stores every column as a number; categorical
columns are label-encoded in alphabetical order of the original UCI
category strings, with '?' (missing) encoded as 0 where the original data
contains missing cells. This script decodes those columns back to the
original UCI strings where the mapping is documented (Adult), restores the
original class labels, and writes:

  data/<name>.csv          RFC-4180 CSV with header row
  data/<name>.schema.toml  column schema (name, kind, categories, label)

Run `python3 scripts/fetch_datasets.py --help` for options. The vendored
files in data/ are committed, so running this is only needed to regenerate
them from upstream. See docs/datasets.md for provenance notes and checksums.
"""

import argparse
import csv
import gzip
import hashlib
import io
import sys
import urllib.request
from pathlib import Path

PMLB_COMMIT = "7c1f4bdc00136dc2e55c87fa6b8ba6e8af6d1a68"
DEFAULT_BASE = (
    "https://raw.githubusercontent.com/EpistasisLab/pmlb/" + PMLB_COMMIT + "/datasets"
)

# sha256 of the upstream .tsv.gz files at the pinned commit
UPSTREAM = {
    "_deprecated_heart_statlog": "8961cb48eb662faa5d55d7849ee8be88d8b2a3eeebd383cfa5df38c60133ebcb",
    "tae": "5eb60cdd947ecb4ea476ba854299dbe18d522df3ed684fb8f60657fdd4132910",
    "credit_approval_australia": "1f69f25b0168c39018c214ae39f2bb8fe6da97e1df389c2cb88cf9bde2f08ace",
    "adult": "fb8bc76eafa39558b6044907f23416faf99099cefb8afd06a2cf5afbdae1b506",
}

# Adult: PMLB label-encodes each categorical column in alphabetical order of
# the original UCI strings ('?' sorts first). Maps verified against rows of
# the original adult.data (see docs/datasets.md).
ADULT_WORKCLASS = [
    "?", "Federal-gov", "Local-gov", "Never-worked", "Private",
    "Self-emp-inc", "Self-emp-not-inc", "State-gov", "Without-pay",
]
ADULT_EDUCATION = [
    "10th", "11th", "12th", "1st-4th", "5th-6th", "7th-8th", "9th",
    "Assoc-acdm", "Assoc-voc", "Bachelors", "Doctorate", "HS-grad",
    "Masters", "Preschool", "Prof-school", "Some-college",
]
ADULT_MARITAL = [
    "Divorced", "Married-AF-spouse", "Married-civ-spouse",
    "Married-spouse-absent", "Never-married", "Separated", "Widowed",
]
ADULT_OCCUPATION = [
    "?", "Adm-clerical", "Armed-Forces", "Craft-repair", "Exec-managerial",
    "Farming-fishing", "Handlers-cleaners", "Machine-op-inspct",
    "Other-service", "Priv-house-serv", "Prof-specialty", "Protective-serv",
    "Sales", "Tech-support", "Transport-moving",
]
ADULT_RELATIONSHIP = [
    "Husband", "Not-in-family", "Other-relative", "Own-child", "Unmarried", "Wife",
]
ADULT_RACE = [
    "Amer-Indian-Eskimo", "Asian-Pac-Islander", "Black", "Other", "White",
]
ADULT_SEX = ["Female", "Male"]
ADULT_COUNTRY = [
    "?", "Cambodia", "Canada", "China", "Columbia", "Cuba",
    "Dominican-Republic", "Ecuador", "El-Salvador", "England", "France",
    "Germany", "Greece", "Guatemala", "Haiti", "Holand-Netherlands",
    "Honduras", "Hong", "Hungary", "India", "Iran", "Ireland", "Italy",
    "Jamaica", "Japan", "Laos", "Mexico", "Nicaragua",
    "Outlying-US(Guam-USVI-etc)", "Peru", "Philippines", "Poland",
    "Portugal", "Puerto-Rico", "Scotland", "South", "Taiwan", "Thailand",
    "Trinadad&Tobago", "United-States", "Vietnam", "Yugoslavia",
]
ADULT_TRAIN_ROWS = 32561  # rows 32562.. are the original test split


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def fetch(name: str, base_url: str, cache_dir: Path) -> Path:
    cache_dir.mkdir(parents=True, exist_ok=True)
    dest = cache_dir / f"{name}.tsv.gz"
    if not dest.exists():
        url = f"{base_url}/{name}/{name}.tsv.gz"
        print(f"downloading {url}")
        with urllib.request.urlopen(url) as resp:
            dest.write_bytes(resp.read())
    digest = sha256_file(dest)
    if digest != UPSTREAM[name]:
        sys.exit(
            f"checksum mismatch for {dest}: got {digest}, expected {UPSTREAM[name]}"
        )
    return dest


def read_tsv(path: Path):
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    return rows[0], rows[1:]


def fmt_number(cell: str) -> str:
    """Render PMLB's float-formatted numbers compactly (70.0 -> 70).

    Empty cells (missing values in the credit data) pass through unchanged;
    the loader treats them as the missing sentinel and drops those rows.
    """
    if cell == "":
        return ""
    value = float(cell)
    if value == int(value):
        return str(int(value))
    return repr(value)


def numeric_sort(values):
    try:
        return sorted(values, key=lambda v: (float(v), v))
    except ValueError:
        return sorted(values)


def write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_schema(path: Path, columns, rows, header, missing="?"):
    """columns: list of (name, kind) with kind in {numerical, categorical, label}."""
    out = io.StringIO()
    for name, kind in columns:
        idx = header.index(name)
        out.write("[[column]]\n")
        out.write(f'name = "{name}"\n')
        if kind == "label":
            out.write("label = true\n")
        else:
            out.write(f'kind = "{kind}"\n')
            if kind == "categorical":
                values = {row[idx] for row in rows if row[idx] not in (missing, "")}
                cats = ", ".join(f'"{v}"' for v in numeric_sort(values))
                out.write(f"categories = [{cats}]\n")
        out.write("\n")
    path.write_text(out.getvalue(), encoding="utf-8")


def convert_heart(src: Path, out_dir: Path):
    _, rows = read_tsv(src)
    header = [
        "age", "sex", "cp", "trestbps", "chol", "fbs", "restecg",
        "thalach", "exang", "oldpeak", "slope", "ca", "thal", "class",
    ]
    out_rows = []
    for row in rows:
        *features, target = row
        cells = [fmt_number(c) for c in features]
        # restore the original 1 = absence / 2 = presence class codes
        cells.append(str(int(float(target)) + 1))
        out_rows.append(cells)
    write_csv(out_dir / "heart.csv", header, out_rows)
    columns = [
        ("age", "numerical"), ("sex", "categorical"), ("cp", "categorical"),
        ("trestbps", "numerical"), ("chol", "numerical"),
        ("fbs", "categorical"), ("restecg", "categorical"),
        ("thalach", "numerical"), ("exang", "categorical"),
        ("oldpeak", "numerical"), ("slope", "categorical"),
        ("ca", "numerical"), ("thal", "categorical"), ("class", "label"),
    ]
    write_schema(out_dir / "heart.schema.toml", columns, out_rows, header)


def convert_tae(src: Path, out_dir: Path):
    _, rows = read_tsv(src)
    header = ["native_speaker", "instructor", "course", "semester", "class_size", "class"]
    out_rows = [[fmt_number(c) for c in row] for row in rows]
    write_csv(out_dir / "tae.csv", header, out_rows)
    columns = [
        ("native_speaker", "categorical"), ("instructor", "categorical"),
        ("course", "categorical"), ("semester", "categorical"),
        ("class_size", "numerical"), ("class", "label"),
    ]
    write_schema(out_dir / "tae.schema.toml", columns, out_rows, header)


def convert_credit(src: Path, out_dir: Path):
    _, rows = read_tsv(src)
    header = [f"A{i}" for i in range(1, 16)] + ["class"]
    out_rows = []
    for row in rows:
        *features, target = row
        cells = [fmt_number(c) for c in features]
        cells.append("+" if target == "0" else "-")
        out_rows.append(cells)
    write_csv(out_dir / "credit.csv", header, out_rows)
    numerical = {"A2", "A3", "A8", "A11", "A14", "A15"}
    columns = [
        (name, "numerical" if name in numerical else "categorical")
        for name in header[:-1]
    ] + [("class", "label")]
    write_schema(out_dir / "credit.schema.toml", columns, out_rows, header)


def convert_adult(src: Path, out_dir: Path):
    _, rows = read_tsv(src)
    rows = rows[:ADULT_TRAIN_ROWS]
    header = [
        "age", "workclass", "fnlwgt", "education", "education-num",
        "marital-status", "occupation", "relationship", "race", "sex",
        "capital-gain", "capital-loss", "hours-per-week", "native-country",
        "class",
    ]
    decoders = {
        1: ADULT_WORKCLASS, 3: ADULT_EDUCATION, 5: ADULT_MARITAL,
        6: ADULT_OCCUPATION, 7: ADULT_RELATIONSHIP, 8: ADULT_RACE,
        9: ADULT_SEX, 13: ADULT_COUNTRY,
    }
    out_rows = []
    for row in rows:
        cells = []
        for idx, cell in enumerate(row[:-1]):
            if idx in decoders:
                cells.append(decoders[idx][int(float(cell))])
            else:
                cells.append(fmt_number(cell))
        cells.append("<=50K" if row[-1] == "1" else ">50K")
        out_rows.append(cells)
    write_csv(out_dir / "adult.csv", header, out_rows)
    numerical = {
        "age", "fnlwgt", "education-num", "capital-gain", "capital-loss",
        "hours-per-week",
    }
    columns = [
        (name, "numerical" if name in numerical else "categorical")
        for name in header[:-1]
    ] + [("class", "label")]
    write_schema(out_dir / "adult.schema.toml", columns, out_rows, header)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--base-url", default=DEFAULT_BASE,
                        help="base URL of the PMLB datasets directory")
    parser.add_argument("--cache-dir", type=Path, default=Path("build/dataset-cache"),
                        help="where to keep the downloaded .tsv.gz files")
    parser.add_argument("--out-dir", type=Path, default=Path("data"),
                        help="where to write the converted CSV + schema files")
    args = parser.parse_args()

    args.out_dir.mkdir(parents=True, exist_ok=True)
    convert_heart(fetch("_deprecated_heart_statlog", args.base_url, args.cache_dir), args.out_dir)
    convert_tae(fetch("tae", args.base_url, args.cache_dir), args.out_dir)
    convert_credit(fetch("credit_approval_australia", args.base_url, args.cache_dir), args.out_dir)
    convert_adult(fetch("adult", args.base_url, args.cache_dir), args.out_dir)

    for path in sorted(args.out_dir.iterdir()):
        print(f"{sha256_file(path)}  {path}")


if __name__ == "__main__":
    main()
