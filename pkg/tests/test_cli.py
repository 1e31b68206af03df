import json
from pathlib import Path

import pytest

from fracheat.cli import (
    EXIT_BADMANIFEST,
    EXIT_FAILCHECK,
    EXIT_OK,
    EXIT_REFUSED,
    main,
    validate_manifest,
)

GEOM = {"dim": 1, "lo": [-1.0], "hi": [1.0], "padding": 1.0, "n": 64}


def write_manifest(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestValidation:
    def test_valid_manifest(self):
        doc = {"kind": "assemble", "geometry": GEOM, "order": 1.0}
        assert validate_manifest(doc) == []

    def test_schema_diagnostics_carry_field_path(self):
        doc = {"kind": "assemble", "geometry": dict(GEOM, dim=3), "order": 1.0}
        problems = validate_manifest(doc)
        assert any("geometry/dim" in p for p in problems)

    def test_kind_requirements(self):
        problems = validate_manifest({"kind": "kernel", "geometry": GEOM})
        assert any("requires field" in p for p in problems)

    def test_unknown_fields_rejected(self):
        doc = {"kind": "assemble", "geometry": GEOM, "order": 1.0, "bogus": 1}
        assert validate_manifest(doc)


class TestRun:
    def test_assemble_idempotent(self, tmp_path):
        man = write_manifest(
            tmp_path, "a.json", {"kind": "assemble", "geometry": GEOM, "order": 1.0}
        )
        out = tmp_path / "out"
        assert main(["run", str(man), "--out", str(out)]) == EXIT_OK
        first = json.loads((out / "assemble.json").read_text())
        assert first["cache_hit"] is False
        assert (out / "cache" / first["cache_file"]).exists()
        assert main(["run", str(man), "--out", str(out)]) == EXIT_OK
        second = json.loads((out / "assemble.json").read_text())
        assert second["cache_hit"] is True

    def test_invalid_manifest_exit_code(self, tmp_path):
        man = write_manifest(tmp_path, "bad.json", {"kind": "kernel", "geometry": GEOM})
        assert main(["run", str(man)]) == EXIT_BADMANIFEST
        assert not (tmp_path / "fracheat-out").exists()  # no partial artifacts

    def test_unparseable_manifest(self, tmp_path):
        p = tmp_path / "broken.json"
        p.write_text("{nope")
        assert main(["run", str(p)]) == EXIT_BADMANIFEST

    def test_kernel_manifest(self, tmp_path):
        man = write_manifest(
            tmp_path,
            "k.json",
            {
                "kind": "kernel",
                "geometry": dict(GEOM, n=96),
                "s": 0.5,
                "times": [0.05, 0.1, 0.2, 0.4],
            },
        )
        out = tmp_path / "out"
        assert main(["run", str(man), "--out", str(out)]) == EXIT_OK
        payload = json.loads((out / "kernel.json").read_text())
        assert payload["pass"] is True
        assert (out / "kernel_mass.csv").exists()

    def test_certify_manifest_report_schema(self, tmp_path):
        man = write_manifest(
            tmp_path,
            "c.json",
            {
                "kind": "certify",
                "geometry": dict(GEOM, n=96),
                "coarse_n": 64,
                "s": 0.5,
                "rho": 0.5,
                "times": [0.1, 0.2],
                "target": "kernel-gradient",
            },
        )
        out = tmp_path / "out"
        assert main(["run", str(man), "--out", str(out)]) == EXIT_OK
        payload = json.loads((out / "certify_kernel-gradient.json").read_text())
        for key in ("regime", "rho", "C_star", "argmax", "stability_ratio", "samples", "D", "exclusion"):
            assert key in payload

    def test_green_refusal_exit_code(self, tmp_path):
        man = write_manifest(
            tmp_path,
            "g.json",
            {
                "kind": "certify",
                "geometry": dict(GEOM, n=64),
                "s": 0.2,
                "rho": 0.25,
                "target": "green-gradient",
            },
        )
        assert main(["run", str(man), "--out", str(tmp_path / "out")]) == EXIT_REFUSED

    def test_kpz_scan_row_count(self, tmp_path):
        man = write_manifest(
            tmp_path,
            "kpz.json",
            {
                "kind": "kpz",
                "geometry": dict(GEOM, n=64),
                "s": 0.5,
                "q_values": [1.1, 1.2],
                "amplitudes": [0.0, 0.05],
                "horizons": [0.05],
            },
        )
        out = tmp_path / "out"
        assert main(["run", str(man), "--out", str(out)]) == EXIT_OK
        rows = (out / "kpz_scan.csv").read_text().strip().splitlines()
        assert len(rows) - 1 == 2 * 2 * 1

    def test_solve_cross_validation(self, tmp_path):
        man = write_manifest(
            tmp_path,
            "s.json",
            {
                "kind": "solve",
                "geometry": dict(GEOM, n=64),
                "s": 0.5,
                "ladder": {"kind": "uniform", "t_max": 0.2, "count": 8},
                "data": {"w0": "eigenmode"},
                "method": "both",
            },
        )
        out = tmp_path / "out"
        assert main(["run", str(man), "--out", str(out)]) == EXIT_OK
        payload = json.loads((out / "solve.json").read_text())
        assert payload["cross_validation_gap"] < 1e-2


class TestReport:
    def test_empty_directory(self, tmp_path):
        assert main(["report", str(tmp_path)]) == EXIT_OK
        table = json.loads((tmp_path / "report.json").read_text())
        assert table["total"] == 0

    def test_mixed_directory(self, tmp_path, capsys):
        (tmp_path / "ok.json").write_text(json.dumps({"theorem_tag": "x", "pass": True}))
        (tmp_path / "bad.json").write_text(json.dumps({"theorem_tag": "y", "pass": False}))
        assert main(["report", str(tmp_path)]) == EXIT_FAILCHECK
        table = json.loads((tmp_path / "report.json").read_text())
        assert table["total"] == 2 and table["failed"] == 1
        out = capsys.readouterr().out
        assert "FAIL" in out and "PASS" in out

    def test_report_manifest_kind(self, tmp_path):
        (tmp_path / "ok.json").write_text(json.dumps({"theorem_tag": "x", "pass": True}))
        man = write_manifest(tmp_path, "r.json", {"kind": "report", "directory": str(tmp_path)})
        assert main(["run", str(man)]) == EXIT_OK


class TestDeterminism:
    def test_rerun_byte_identical(self, tmp_path):
        man = write_manifest(
            tmp_path,
            "k.json",
            {
                "kind": "kernel",
                "geometry": dict(GEOM, n=64),
                "s": 0.5,
                "times": [0.1, 0.2],
            },
        )
        blobs = []
        for run in ("r1", "r2"):
            out = tmp_path / run
            assert main(["run", str(man), "--out", str(out), "--cache", "rebuild"]) == EXIT_OK
            blobs.append(
                {
                    p.name: p.read_bytes()
                    for p in sorted(out.iterdir())
                    if p.suffix in (".json", ".csv")
                }
            )
        assert blobs[0] == blobs[1]
