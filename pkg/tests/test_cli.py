import json

import numpy as np
import pytest

from invarsim.cli import main
from invarsim.imgio import read_flo, read_pfm, read_ppm
from invarsim.scenegen import validation_scene_config


def write_scene_config(tmp_path, overrides=None):
    doc = validation_scene_config()
    doc["seed"] = 7
    if overrides:
        doc.update(overrides)
    path = tmp_path / "scene_config.json"
    path.write_text(json.dumps(doc))
    return path


def tiny_protocol_doc():
    return {
        "model": "OC",
        "scene": validation_scene_config(),
        "theta_w": {"illumination_levels": [1.0, 3.0]},
        "theta_v": {"patch_sizes": [5]},
        "contexts": ["Diffuse", "Occluded"],
        "patches_per_cell": 3,
        "render": {"width": 48, "height": 36, "spp": 2, "max_bounces": 0},
    }


class TestSample:
    def test_sample_writes_scene_and_manifest(self, tmp_path):
        cfg = write_scene_config(tmp_path)
        out = tmp_path / "scene.json"
        assert main(["sample", str(cfg), "--out", str(out)]) == 0
        assert out.exists()
        manifest = json.loads(out.with_suffix(".manifest.json").read_text())
        assert manifest["command"] == "sample"
        assert manifest["outputs"]["sample"] == [str(out)]

    def test_idempotent_bytes(self, tmp_path):
        cfg = write_scene_config(tmp_path)
        out = tmp_path / "scene.json"
        main(["sample", str(cfg), "--out", str(out), "--seed", "3"])
        first = out.read_bytes()
        main(["sample", str(cfg), "--out", str(out), "--seed", "3"])
        assert out.read_bytes() == first

    def test_malformed_json_exit_2_with_position(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"world_bounds": [1, 2,\n  }')
        code = main(["sample", str(bad), "--out", str(tmp_path / "x.json")])
        assert code == 2
        err = capsys.readouterr().err
        assert ":2:" in err  # line and column reported

    def test_placement_failure_exit_3(self, tmp_path):
        cfg = write_scene_config(tmp_path, {
            "world_bounds": [-4, -4, 4, 4],
            "objects": [],
            "ground": False,
            "classes": [{"class": "Building", "probability": 1.0,
                         "length": [6.0, 0.0], "breadth": [6.0, 0.0],
                         "height": [10.0, 0.0]}],
            "counts": {"total": 2},
            "max_attempts": 25,
        })
        assert main(["sample", str(cfg), "--out", str(tmp_path / "s.json")]) == 3

    def test_porcelain_stdout_is_json(self, tmp_path, capsys):
        cfg = write_scene_config(tmp_path)
        out = tmp_path / "scene.json"
        main(["sample", str(cfg), "--out", str(out), "--porcelain"])
        payload = json.loads(capsys.readouterr().out)
        assert payload["scene"] == str(out)


@pytest.fixture()
def scene_json(tmp_path):
    cfg = write_scene_config(tmp_path, {
        "dynamics": [[0, "objects.5.velocity", [0.5, 0.0, 0.0]]],
    })
    out = tmp_path / "scene.json"
    assert main(["sample", str(cfg), "--out", str(out)]) == 0
    return out


class TestRender:
    def test_frame_pair_outputs(self, scene_json, tmp_path):
        out_dir = tmp_path / "render"
        code = main(["render", str(scene_json), "--out-dir", str(out_dir),
                     "--frames", "0..1", "--spp", "2", "--width", "48",
                     "--height", "36"])
        assert code == 0
        for t in (0, 1):
            for suffix in (".pfm", ".ppm", "_depth.pfm", "_normal.pfm",
                           "_object_id.pfm", "_material_id.pfm",
                           "_shadow.pfm", "_reflectance.pfm", ".json"):
                assert (out_dir / f"frame_{t:04d}{suffix}").exists()
        flow = read_flo(out_dir / "flow_0000_0001.flo")
        assert flow.shape == (36, 48, 2)
        assert (out_dir / "occlusion_0000_0001.pfm").exists()
        hdr = read_pfm(out_dir / "frame_0000.pfm")
        assert hdr.shape == (36, 48, 3)
        ldr, maxval = read_ppm(out_dir / "frame_0000.ppm")
        assert maxval == 255

    def test_gt_independent_of_spp(self, scene_json, tmp_path):
        d1 = tmp_path / "r1"
        d2 = tmp_path / "r2"
        for d, spp in ((d1, "1"), (d2, "8")):
            main(["render", str(scene_json), "--out-dir", str(d),
                  "--frames", "0..0", "--spp", spp, "--width", "32",
                  "--height", "24"])
        gt1 = (d1 / "frame_0000_depth.pfm").read_bytes()
        gt2 = (d2 / "frame_0000_depth.pfm").read_bytes()
        assert gt1 == gt2
        assert (d1 / "frame_0000.pfm").read_bytes() != \
            (d2 / "frame_0000.pfm").read_bytes()

    def test_sidecar_echoes_flags(self, scene_json, tmp_path):
        out_dir = tmp_path / "render"
        main(["render", str(scene_json), "--out-dir", str(out_dir),
              "--frames", "0..0", "--spp", "3", "--width", "32",
              "--height", "24", "--max-bounces", "0", "--seed", "99"])
        sidecar = json.loads((out_dir / "frame_0000.json").read_text())
        assert sidecar["theta_g"] == {"width": 32, "height": 24, "spp": 3,
                                      "max_bounces": 0, "rng_seed": 99}

    def test_dry_run_writes_nothing(self, scene_json, tmp_path, capsys):
        out_dir = tmp_path / "nope"
        code = main(["render", str(scene_json), "--out-dir", str(out_dir),
                     "--frames", "0..1", "--dry-run", "--porcelain"])
        assert code == 0
        assert not any(out_dir.glob("*.pfm"))
        payload = json.loads(capsys.readouterr().out)
        assert payload["frames"] == 2

    def test_idempotent_artifacts(self, scene_json, tmp_path):
        out_dir = tmp_path / "render"
        argv = ["render", str(scene_json), "--out-dir", str(out_dir),
                "--frames", "0..0", "--spp", "2", "--width", "24",
                "--height", "18"]
        main(argv)
        first = {p.name: p.read_bytes() for p in out_dir.iterdir()
                 if p.name != "manifest.json"}
        main(argv)
        again = {p.name: p.read_bytes() for p in out_dir.iterdir()
                 if p.name != "manifest.json"}
        assert first == again


class TestSweep:
    def test_sweep_outputs(self, tmp_path):
        ppath = tmp_path / "protocol.json"
        ppath.write_text(json.dumps(tiny_protocol_doc()))
        out_dir = tmp_path / "sweep"
        assert main(["sweep", str(ppath), "--out-dir", str(out_dir)]) == 0
        csv = (out_dir / "manifold.csv").read_text()
        assert csv.splitlines()[0] == \
            "model,context,theta_w_illumination,theta_v_s,mean_E,std_E,n"
        assert (out_dir / "report.json").exists()
        assert (out_dir / "heatmap_Diffuse.svg").exists()
        manifest = json.loads((out_dir / "manifest.json").read_text())
        listed = [p for ps in manifest["outputs"].values() for p in ps]
        assert len(listed) == len(set(listed))

    def test_dry_run_prints_counts_renders_nothing(self, tmp_path, capsys):
        ppath = tmp_path / "protocol.json"
        ppath.write_text(json.dumps(tiny_protocol_doc()))
        out_dir = tmp_path / "sweep"
        assert main(["sweep", str(ppath), "--out-dir", str(out_dir),
                     "--porcelain", "--dry-run"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload == {"cells": 4, "renders": 3}
        assert not out_dir.exists()

    def test_resume_reproduces_bytes(self, tmp_path):
        ppath = tmp_path / "protocol.json"
        ppath.write_text(json.dumps(tiny_protocol_doc()))
        out_dir = tmp_path / "sweep"
        main(["sweep", str(ppath), "--out-dir", str(out_dir)])
        first = (out_dir / "manifold.csv").read_bytes()
        (out_dir / "manifold.csv").unlink()  # simulate an interrupted run
        main(["sweep", str(ppath), "--out-dir", str(out_dir)])
        assert (out_dir / "manifold.csv").read_bytes() == first

    def test_threads_flag_identical_output(self, tmp_path):
        ppath = tmp_path / "protocol.json"
        ppath.write_text(json.dumps(tiny_protocol_doc()))
        d1 = tmp_path / "s1"
        d2 = tmp_path / "s2"
        main(["sweep", str(ppath), "--out-dir", str(d1), "--threads", "1"])
        main(["sweep", str(ppath), "--out-dir", str(d2), "--threads", "4"])
        assert (d1 / "manifold.csv").read_bytes() == \
            (d2 / "manifold.csv").read_bytes()


class TestCompareReport:
    def make_manifold_csv(self, tmp_path, name, flip=False):
        lines = ["model,context,theta_w_illumination,theta_v_s,mean_E,std_E,n"]
        values = {"Diffuse": 0.9, "Edge": 0.6, "Occluded": 0.2}
        if flip:
            values = {"Diffuse": 0.2, "Edge": 0.6, "Occluded": 0.9}
        for ctx, v in values.items():
            lines.append(f"OC,{ctx},1.0,5,{v},0.01,4")
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_identical_manifolds_correlation_one(self, tmp_path, capsys):
        a = self.make_manifold_csv(tmp_path, "a.csv")
        b = self.make_manifold_csv(tmp_path, "b.csv")
        assert main(["compare", str(a), str(b), "--by", "context"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["correlation"] == 1.0
        assert all(d == 0 for d in doc["deltas"].values())

    def test_reversed_correlation_minus_one(self, tmp_path, capsys):
        a = self.make_manifold_csv(tmp_path, "a.csv")
        b = self.make_manifold_csv(tmp_path, "b.csv", flip=True)
        main(["compare", str(a), str(b)])
        doc = json.loads(capsys.readouterr().out)
        assert doc["correlation"] == -1.0

    def test_mismatched_contexts_exit_4(self, tmp_path, capsys):
        a = self.make_manifold_csv(tmp_path, "a.csv")
        b = tmp_path / "b.csv"
        b.write_text(
            "model,context,theta_w_illumination,theta_v_s,mean_E,std_E,n\n"
            "OC,Diffuse,1.0,5,0.9,0.01,4\nOC,Corner,1.0,5,0.5,0.01,4\n")
        assert main(["compare", str(a), str(b)]) == 4
        err = capsys.readouterr().err
        assert "Edge" in err and "Corner" in err and "Occluded" in err

    def test_compare_by_weather(self, tmp_path, capsys):
        header = "model,context,theta_w_weather,mean_E,std_E,n"
        rows_a = ["DS,All,Fog,0.14,0.05,100", "DS,All,Mist,0.38,0.1,100",
                  "DS,All,MildHaze,2.4,0.4,100"]
        rows_b = ["DS,All,Fog,0.58,0.2,90", "DS,All,Mist,1.25,0.5,90",
                  "DS,All,MildHaze,3.61,0.8,90"]
        a = tmp_path / "ds_a.csv"
        b = tmp_path / "ds_b.csv"
        a.write_text("\n".join([header] + rows_a) + "\n")
        b.write_text("\n".join([header] + rows_b) + "\n")
        assert main(["compare", str(a), str(b), "--by", "weather"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["correlation"] == 1.0  # same ordering in both sources

    def test_report_emits_svg_and_marginals(self, tmp_path):
        a = self.make_manifold_csv(tmp_path, "a.csv")
        out_dir = tmp_path / "report"
        assert main(["report", str(a), "--out-dir", str(out_dir)]) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert "marginals" in report and "illumination" in report["marginals"]
        assert (out_dir / "heatmap_Diffuse.svg").exists()


class TestIngestCommand:
    def test_ingest_summary(self, tmp_path, capsys):
        from invarsim.imgio import write_ppm

        rng = np.random.default_rng(0)
        for t in range(2):
            img = rng.integers(0, 255, size=(24, 32, 3)).astype(np.uint8)
            write_ppm(tmp_path / f"f{t}.ppm", img, maxval=255)
        apath = tmp_path / "ann.json"
        apath.write_text(json.dumps({
            "reference_frame": 0, "zero_flow": True,
            "patches": [{"x": 4, "y": 4, "width": 8, "height": 8,
                         "context": "Diffuse"}],
        }))
        assert main(["ingest", str(tmp_path), str(apath), "--porcelain",
                     "--out", str(tmp_path / "summary.json")]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["frames"] == 2
        assert summary["resolution"] == [24, 32]

    def test_bad_annotation_exit_2(self, tmp_path):
        from invarsim.imgio import write_ppm

        write_ppm(tmp_path / "f0.ppm",
                  np.zeros((8, 8, 3), dtype=np.uint8), maxval=255)
        apath = tmp_path / "ann.json"
        apath.write_text(json.dumps({
            "reference_frame": 0,
            "patches": [{"x": 5, "y": 5, "width": 8, "height": 8,
                         "context": "Diffuse"}],
        }))
        assert main(["ingest", str(tmp_path), str(apath)]) == 2
