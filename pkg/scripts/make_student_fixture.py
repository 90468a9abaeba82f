"""Write the 500-row synthetic student CSV used by the ingestion tests."""

import argparse
from pathlib import Path

from capstrat.ingest import synthetic_students, write_student_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "tests" / "data" / "students_synthetic.csv"))
    args = ap.parse_args()
    write_student_csv(args.out, synthetic_students(args.rows, args.seed))
    print(f"wrote {args.rows} rows to {args.out}")


if __name__ == "__main__":
    main()
