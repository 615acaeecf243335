import json
import math

import numpy as np
import pytest

import fixtures
from mono3dkit import dataio, kernels
from mono3dkit.cli import main
from mono3dkit.dataio import read_labels, write_labels
from mono3dkit.kernels import LossReport


def dir_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.glob("*.txt"))}


def run_pseudolabel(root, out, extra=()):
    return main(
        [
            "pseudolabel",
            "--detections",
            str(root / "detections"),
            "--depth",
            str(root / "depth"),
            "--calib",
            str(root / "calib"),
            "--out",
            str(out),
            *extra,
        ]
    )


class TestPseudolabelCommand:
    def test_produces_labels_and_summary(self, tmp_path, capsys):
        ids = fixtures.build_scene(tmp_path, n_images=4, seed=5)
        out = tmp_path / "out"
        assert run_pseudolabel(tmp_path, out) == 0
        assert sorted(p.stem for p in out.glob("*.txt")) == ids
        captured = capsys.readouterr().out
        assert "[summary]" in captured
        assert "images = 4" in captured
        # effective config echoed for provenance
        assert "score_threshold = 0.1" in captured
        assert "prior.Car" in captured

    def test_deterministic_across_runs(self, tmp_path):
        fixtures.build_scene(tmp_path, n_images=4, seed=6)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run_pseudolabel(tmp_path, out_a) == 0
        assert run_pseudolabel(tmp_path, out_b) == 0
        assert dir_bytes(out_a) == dir_bytes(out_b)

    def test_empty_input_dir(self, tmp_path, capsys):
        for d in ("detections", "depth", "calib"):
            (tmp_path / d).mkdir()
        out = tmp_path / "out"
        assert run_pseudolabel(tmp_path, out) == 0
        assert list(out.glob("*.txt")) == []
        assert "images = 0" in capsys.readouterr().out

    def test_missing_calib_names_image_and_cleans_up(self, tmp_path, capsys):
        fixtures.build_scene(tmp_path, n_images=3, seed=7)
        victim = tmp_path / "calib" / "000001.txt"
        victim.unlink()
        out = tmp_path / "out"
        assert run_pseudolabel(tmp_path, out) == 2
        assert "000001" in capsys.readouterr().err
        # partial outputs removed on failure
        assert list(out.glob("*.txt")) == []

    def test_flag_overrides_config_file(self, tmp_path, capsys):
        fixtures.build_scene(tmp_path, n_images=2, seed=8)
        cfg = tmp_path / "run.cfg"
        cfg.write_text("score_threshold = 0.4\n")
        out = tmp_path / "out"
        code = run_pseudolabel(
            tmp_path, out, extra=("--config", str(cfg), "--score-threshold", "0.6")
        )
        assert code == 0
        assert "score_threshold = 0.6" in capsys.readouterr().out

    def test_score_threshold_filters_labels(self, tmp_path):
        fixtures.build_scene(tmp_path, n_images=3, seed=9)
        loose, strict = tmp_path / "loose", tmp_path / "strict"
        run_pseudolabel(tmp_path, loose, extra=("--score-threshold", "0.0"))
        run_pseudolabel(tmp_path, strict, extra=("--score-threshold", "0.9"))
        n_loose = sum(len(read_labels(p)) for p in loose.glob("*.txt"))
        n_strict = sum(len(read_labels(p)) for p in strict.glob("*.txt"))
        assert n_strict < n_loose

    def test_worker_counts_agree(self, tmp_path):
        fixtures.build_scene(tmp_path, n_images=6, seed=10)
        outs = []
        for workers in ("1", "4"):
            out = tmp_path / f"w{workers}"
            assert run_pseudolabel(tmp_path, out, extra=("--workers", workers)) == 0
            outs.append(dir_bytes(out))
        assert outs[0] == outs[1]

    def test_labels_parse_back(self, tmp_path):
        fixtures.build_scene(tmp_path, n_images=2, seed=11)
        out = tmp_path / "out"
        run_pseudolabel(tmp_path, out)
        for path in out.glob("*.txt"):
            for rec in read_labels(path):
                assert rec.score is not None
                assert rec.z > 0
                assert rec.h > 0


class TestEvalCommand:
    def test_perfect_predictions_score_100_every_row(self, tmp_path, capsys):
        fixtures.build_scene(tmp_path, n_images=4, seed=12)
        gt = tmp_path / "gt"
        run_pseudolabel(tmp_path, gt, extra=("--score-threshold", "0.0"))
        report = tmp_path / "report.json"
        code = main(
            [
                "eval",
                "--pred",
                str(gt),
                "--gt",
                str(gt),
                "--class-name",
                "Pedestrian",
                "--metric",
                "3d",
                "--iou",
                "0.5",
                "--report",
                str(report),
            ]
        )
        assert code == 0
        payload = json.loads(report.read_text())
        for row in ("easy", "moderate", "hard", "all"):
            ap = payload["rows"][row]["ap"]
            assert ap == 100.0 or payload["rows"][row]["num_gt"] == 0
        assert "class=Pedestrian" in capsys.readouterr().out

    def test_hand_computed_ap_fixture(self, tmp_path):
        def rec(x, score=None):
            return dataio.KittiLabelRecord(
                type="Car", truncated=0.0, occluded=0, alpha=0.0,
                left=0.0, top=0.0, right=60.0, bottom=50.0,
                h=1.5, w=1.6, l=3.9, x=x, y=1.0, z=10.0, rotation_y=0.0, score=score,
            )

        gt_dir, pred_dir = tmp_path / "gt", tmp_path / "pred"
        gt_dir.mkdir()
        pred_dir.mkdir()
        write_labels([rec(0.0), rec(10.0), rec(20.0)], gt_dir / "000000.txt")
        write_labels(
            [rec(0.0, 0.9), rec(50.0, 0.8), rec(10.0, 0.7), rec(20.0, 0.6)],
            pred_dir / "000000.txt",
        )
        report = tmp_path / "report.json"
        code = main(["eval", "--pred", str(pred_dir), "--gt", str(gt_dir),
                     "--class-name", "Car", "--metric", "bev", "--iou", "0.5",
                     "--report", str(report)])
        assert code == 0
        payload = json.loads(report.read_text())
        # one false positive ranked second out of four predictions over three
        # ground truths: 13 recall points at precision 1, 27 at 3/4
        expected = (13 * 1.0 + 27 * 0.75) / 40 * 100.0
        assert payload["rows"]["all"]["ap"] == expected
        assert payload["rows"]["easy"]["ap"] == expected

    def test_nonexistent_dir_is_data_error(self, tmp_path):
        assert main(["eval", "--pred", str(tmp_path / "nope"), "--gt", str(tmp_path / "nope"),
                     "--class-name", "Car"]) == 2

    def test_invalid_iou_is_invariant_violation(self, tmp_path):
        (tmp_path / "p").mkdir()
        (tmp_path / "g").mkdir()
        assert main(["eval", "--pred", str(tmp_path / "p"), "--gt", str(tmp_path / "g"),
                     "--class-name", "Car", "--iou", "1.5"]) == 3

    def test_bbox2d_metric_runs(self, tmp_path):
        fixtures.build_scene(tmp_path, n_images=2, seed=13)
        gt = tmp_path / "gt"
        run_pseudolabel(tmp_path, gt, extra=("--score-threshold", "0.0"))
        assert main(["eval", "--pred", str(gt), "--gt", str(gt),
                     "--class-name", "Car", "--metric", "bbox2d"]) == 0


class TestGradcheckCommand:
    def test_default_seed_passes_and_writes_report(self, tmp_path, capsys):
        report = tmp_path / "grad.json"
        assert main(["gradcheck", "--points", "5", "--report", str(report)]) == 0
        payload = json.loads(report.read_text())
        assert payload["passed"] is True
        assert set(payload["kernels"]) >= {"query_gate", "diversity_loss", "bin_centers"}
        assert all(entry["max_rel_error"] < payload["bound"] for entry in payload["kernels"].values())
        assert "PASS" in capsys.readouterr().out

    def test_injected_gradient_bug_fails(self, monkeypatch, tmp_path):
        real = kernels.depth_kl

        def broken(gd):
            rep = real(gd)
            return LossReport(value=rep.value, grads={"mean": rep.grads["mean"] + 0.5, "std": rep.grads["std"]})

        monkeypatch.setattr(kernels, "depth_kl", broken)
        report = tmp_path / "grad.json"
        assert main(["gradcheck", "--points", "2", "--report", str(report)]) == 3
        assert json.loads(report.read_text())["passed"] is False


class TestStatsCommand:
    def write_label_dir(self, tmp_path, heights):
        pred = tmp_path / "pred"
        pred.mkdir()
        records = [
            dataio.KittiLabelRecord(
                type="Pedestrian", truncated=0.0, occluded=0, alpha=0.0,
                left=0.0, top=0.0, right=40.0, bottom=90.0,
                h=h, w=0.66, l=0.84, x=1.0, y=1.6, z=8.0, rotation_y=0.0, score=0.9,
            )
            for h in heights
        ]
        write_labels(records, pred / "000000.txt")
        return pred

    def test_single_height(self, tmp_path, capsys):
        pred = self.write_label_dir(tmp_path, [1.73, 1.73, 1.73])
        out = tmp_path / "hist.txt"
        assert main(["stats", "--pred", str(pred), "--class-name", "Pedestrian",
                     "--bin-width", "0.05", "--out", str(out)]) == 0
        captured = capsys.readouterr().out
        assert "mean = 1.730000" in captured
        lines = out.read_text().splitlines()
        assert len(lines) == 1
        center, count = lines[0].split()
        assert int(count) == 3

    def test_two_heights_counted(self, tmp_path):
        pred = self.write_label_dir(tmp_path, [1.6, 1.6, 1.8])
        out = tmp_path / "hist.txt"
        assert main(["stats", "--pred", str(pred), "--class-name", "Pedestrian",
                     "--bin-width", "0.1", "--out", str(out)]) == 0
        counts = [int(line.split()[1]) for line in out.read_text().splitlines()]
        assert sum(counts) == 3
        assert max(counts) == 2

    def test_empty_dir_is_error(self, tmp_path):
        empty = tmp_path / "pred"
        empty.mkdir()
        assert main(["stats", "--pred", str(empty), "--class-name", "Pedestrian"]) == 2

    def test_no_matching_class_is_error(self, tmp_path):
        pred = self.write_label_dir(tmp_path, [1.7])
        assert main(["stats", "--pred", str(pred), "--class-name", "Car"]) == 2


class TestFilterCommand:
    def test_constant_losses_all_kept(self, tmp_path, capsys):
        losses = tmp_path / "l.txt"
        losses.write_text("1.0\n1.0\n1.0\n")
        assert main(["filter", "--losses", str(losses)]) == 0
        out = capsys.readouterr().out
        assert out.count("keep") >= 3
        assert "drop" not in out.replace("dropped", "")

    def test_extreme_loss_dropped(self, tmp_path, capsys):
        losses = tmp_path / "l.txt"
        losses.write_text("a 1\nb 1\nc 1\nd 1\ne 100\n")
        assert main(["filter", "--losses", str(losses), "--k", "2.0"]) == 0
        out = capsys.readouterr().out
        assert "drop e 100.000000" in out
        assert "kept = 4" in out

    def test_k_zero_drops_above_median(self, tmp_path, capsys):
        losses = tmp_path / "l.txt"
        losses.write_text("1\n2\n3\n4\n5\n")
        assert main(["filter", "--losses", str(losses), "--k", "0"]) == 0
        out = capsys.readouterr().out
        assert "kept = 3" in out and "dropped = 2" in out

    def test_malformed_line_is_data_error(self, tmp_path):
        losses = tmp_path / "l.txt"
        losses.write_text("a 1 extra\n")
        assert main(["filter", "--losses", str(losses)]) == 2


class TestNormalizeCommand:
    def make_labels(self, tmp_path):
        labels = tmp_path / "labels"
        calib = tmp_path / "calib"
        labels.mkdir()
        calib.mkdir()
        fx = fy = 700.0
        cx, cy = 320.0, 240.0
        fixtures.write_calib(calib / "000000.txt", fx, fy, cx, cy)
        recs = []
        for i, (x, y, z) in enumerate([(-2.0, 1.5, 12.0), (1.0, 1.4, 7.0)]):
            ry = 0.3 * i
            recs.append(
                dataio.KittiLabelRecord(
                    type="Pedestrian", truncated=0.0, occluded=0,
                    alpha=math.remainder(ry - math.atan2(x, z), math.tau),
                    left=100.0 + 50 * i, top=80.0, right=140.0 + 50 * i, bottom=200.0,
                    h=1.7, w=0.6, l=0.8, x=x, y=y, z=z, rotation_y=ry, score=0.9,
                )
            )
        write_labels(recs, labels / "000000.txt")
        return labels, calib

    def test_round_trip_through_virtual_space(self, tmp_path):
        labels, calib = self.make_labels(tmp_path)
        fwd = tmp_path / "virtual"
        back = tmp_path / "restored"
        args = ["--image-width", "640", "--image-height", "480",
                "--focal", "900", "--width", "1274", "--height", "644"]
        assert main(["normalize", "--labels", str(labels), "--calib", str(calib),
                     "--out", str(fwd), *args]) == 0
        assert main(["normalize", "--labels", str(fwd), "--calib", str(calib),
                     "--out", str(back), "--invert", *args]) == 0
        orig = read_labels(labels / "000000.txt")
        restored = read_labels(back / "000000.txt")
        for a, b in zip(orig, restored):
            for field in ("x", "y", "z", "left", "top", "right", "bottom", "h", "w", "l"):
                assert getattr(b, field) == pytest.approx(getattr(a, field), abs=0.02)

    def test_depth_rescales_with_focal_ratio(self, tmp_path):
        labels, calib = self.make_labels(tmp_path)
        fwd = tmp_path / "virtual"
        assert main(["normalize", "--labels", str(labels), "--calib", str(calib),
                     "--out", str(fwd), "--image-width", "640", "--image-height", "480",
                     "--focal", "1400", "--width", "640", "--height", "480"]) == 0
        orig = read_labels(labels / "000000.txt")
        virt = read_labels(fwd / "000000.txt")
        for a, b in zip(orig, virt):
            assert b.z == pytest.approx(a.z * 1400.0 / 700.0, abs=0.01)

    def test_missing_calib_is_data_error(self, tmp_path):
        labels, calib = self.make_labels(tmp_path)
        (calib / "000000.txt").unlink()
        assert main(["normalize", "--labels", str(labels), "--calib", str(calib),
                     "--out", str(tmp_path / "o"), "--image-width", "640",
                     "--image-height", "480"]) == 2


class TestUsage:
    def test_unknown_command(self):
        assert main(["frobnicate"]) == 1

    def test_missing_required_flag(self):
        assert main(["eval", "--pred", "x"]) == 1

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 1
        assert "pseudolabel" in capsys.readouterr().err
