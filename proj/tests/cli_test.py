# Copyright 2026 The idconf Authors
# SPDX-License-Identifier: Apache-2.0
"""End-to-end checks of the idconf command line tool.

Usage: cli_test.py <idconf executable> <report schema>
"""

import csv
import io
import json
import pathlib
import subprocess
import sys
import tempfile

import jsonschema

FAST = ["--trees", "10", "--perms", "40", "--label-perms", "8", "--feature-perms", "8", "--threads", "2"]


def run(exe, *args, expect=0):
    proc = subprocess.run([exe, *args], capture_output=True, text=True, timeout=600)
    if proc.returncode != expect:
        raise AssertionError(f"{args}: exit {proc.returncode}, wanted {expect}\n{proc.stderr}")
    return proc


def main():
    exe, schema_path = sys.argv[1], sys.argv[2]
    schema = json.loads(pathlib.Path(schema_path).read_text())
    validator = jsonschema.Draft202012Validator(schema)
    checks = 0

    def valid(report):
        nonlocal checks
        validator.validate(report)
        checks += 1
        return report

    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        data = tmp / "ex6.csv"
        run(exe, "simulate", "--preset", "example6", "--seed", "4", "--out", str(data))
        header = data.read_text().splitlines()[0].split(",")
        assert header[:2] == ["subject_id", "label"], header

        both = valid(json.loads(run(exe, "analyze", "--input", str(data), "--test", "both", *FAST).stdout))
        assert both["identity_confounding"]["observed"] == both["disease_recognition"]["median"]
        assert both["warnings"] == []

        again = json.loads(run(exe, "analyze", "--input", str(data), "--test", "both", *FAST).stdout)
        assert again == both, "same seed must give the same report"

        subject = valid(json.loads(run(exe, "analyze", "--input", str(data), "--split", "subject", "--test",
                                       "identity-confounding", *FAST).stdout))
        assert "disease_recognition" not in subject
        assert any("subject-wise" in w for w in subject["warnings"])

        rec = valid(json.loads(run(exe, "analyze", "--input", str(data), "--recommend", *FAST).stdout))
        assert rec["recommendation"]["recommendation"] in ("record_wise_acceptable", "subject_wise")

        err = valid(json.loads(run(exe, "analyze", "--input", str(data), "--metric", "error_rate", *FAST).stdout))
        assert "pseudo_p" not in err

        big = valid(json.loads(run(exe, "analyze", "--input", str(data), "--trees", "2", "--perms", "10001").stdout))
        assert sum(big["disease_recognition"]["histogram"]["counts"]) == 10001

        sim = tmp / "sim.json"
        run(exe, "simulate", "--preset", "example1", "--seed", "2", "--analyze", "--out", str(sim), *FAST)
        valid(json.loads(sim.read_text()))

        rows = list(csv.reader(io.StringIO(run(exe, "analyze", "--input", str(data), "--format", "csv",
                                               *FAST).stdout)))
        assert rows[0] == ["section", "key", "value"], rows[0]
        assert any(r[:2] == ["disease_recognition", "p_value"] for r in rows)

        summary = tmp / "summary.csv"
        long = run(exe, "calibrate", "--datasets", "2", "--trees", "5", "--perms", "10", "--feature-perms", "3",
                   "--label-perms", "3", "--summary", str(summary)).stdout
        long_rows = list(csv.DictReader(io.StringIO(long)))
        assert len(long_rows) == 2 * 2 * 4, len(long_rows)
        assert {r["test"] for r in long_rows} == {"disease_recognition", "pseudo", "analytic", "identity_confounding"}
        summary_rows = list(csv.DictReader(io.StringIO(summary.read_text())))
        assert {"test", "split", "n", "below_0.05", "median"} <= set(summary_rows[0]), summary_rows[0]

        run(exe, "calibrate", "--datasets", "0", expect=2)
        run(exe, "calibrate", "--datasets", "1000", "--time-cap", "0.001", expect=2)
        run(exe, "analyze", "--input", str(data), "--recommend", "--split", "subject", expect=2)
        bad = tmp / "bad.csv"
        bad.write_text("subject_id,label,f1\ns1,case,1.0\ns1,control,2.0\n")
        run(exe, "analyze", "--input", str(bad), *FAST, expect=3)
        nonnum = tmp / "nonnum.csv"
        nonnum.write_text("subject_id,label,f1\ns1,case,x\ns2,control,2.0\n")
        run(exe, "analyze", "--input", str(nonnum), *FAST, expect=3)

    print(f"cli: {checks} reports valid, all checks passed")


if __name__ == "__main__":
    main()
