#!/usr/bin/env python3
"""Prepare the two example datasets as plain CSV files under data/.

takeover_bids.csv
    The takeover-bids data (126 firms) distributed as ``Bids`` in the R
    package Ecdat and mirrored by the Python package ``pydataset``.
    Written with columns: numbids, leglrest, rearest, finrest, whtknght,
    bidprem, insthold, size, regulatn.

attendance.csv
    The UCLA ``nb_data`` school-attendance data (314 students). It is
    published as a Stata file; pass it with ``--attendance-dta``.
    Written with columns: daysabs, female, academic, vocational, math.
    ``prog`` is coded 1 = General (baseline), 2 = Academic, 3 = Vocational;
    ``female`` is 1 for female students.

Usage:
    python3 scripts/fetch_data.py [--bids-csv PATH] [--attendance-dta PATH]

Without ``--bids-csv`` the script imports ``pydataset`` (``pip install
pydataset``) and reads its bundled copy.
"""

import argparse
import csv
import os
import sys

HERE = os.path.dirname(os.path.abspath(__file__))
DATA = os.path.join(HERE, os.pardir, "data")

BIDS_COLUMNS = ["numbids", "leglrest", "rearest", "finrest", "whtknght",
                "bidprem", "insthold", "size", "regulatn"]
ATTENDANCE_COLUMNS = ["daysabs", "female", "academic", "vocational", "math"]


def bids_rows(path):
    if path is None:
        import pydataset  # noqa: F401  (locates the bundled resources)
        path = os.path.join(os.path.dirname(pydataset.__file__), "resources",
                            "rdata", "csv", "Ecdat", "Bids.csv")
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            yield [row[c] for c in BIDS_COLUMNS]


def attendance_rows(path):
    import pandas as pd

    frame = pd.read_stata(path, convert_categoricals=False)
    gender = frame["gender"]
    if gender.dtype == object:
        female = (gender.str.lower() == "female").astype(int)
    else:
        # Stata coding in nb_data: 1 = female, 2 = male.
        female = (gender == 1).astype(int)
    prog = frame["prog"].astype(int)
    for i in range(len(frame)):
        yield [int(frame["daysabs"].iloc[i]), int(female.iloc[i]),
               int(prog.iloc[i] == 2), int(prog.iloc[i] == 3),
               float(frame["math"].iloc[i])]


def write(name, header, rows):
    os.makedirs(DATA, exist_ok=True)
    target = os.path.join(DATA, name)
    tmp = target + ".tmp"
    with open(tmp, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        count = 0
        for row in rows:
            out.writerow(row)
            count += 1
    os.replace(tmp, target)
    print(f"wrote {os.path.normpath(target)} ({count} rows)")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--bids-csv", help="Ecdat Bids.csv (defaults to pydataset's copy)")
    parser.add_argument("--attendance-dta", help="nb_data.dta from the UCLA statistics site")
    args = parser.parse_args()

    write("takeover_bids.csv", BIDS_COLUMNS, bids_rows(args.bids_csv))
    if args.attendance_dta:
        write("attendance.csv", ATTENDANCE_COLUMNS, attendance_rows(args.attendance_dta))
    else:
        print("attendance data skipped (pass --attendance-dta nb_data.dta)", file=sys.stderr)


if __name__ == "__main__":
    main()
