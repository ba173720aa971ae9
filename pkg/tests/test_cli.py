import json

import pytest

from artifact.cli import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, main
from artifact.optflow import read_flow
from artifact.sampler import uniform_indices
from artifact.synthgen import FixtureSpec, generate

from conftest import FLEET_LABELS


@pytest.fixture(scope="module")
def translate_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "vid"
    generate(
        FixtureSpec(
            kind="translate", n=14, width=48, height=48, seed=21, shift=(3, 0), at=6
        ),
        out,
    )
    return out


def _run(capsys, argv):
    code = main(argv)
    return code, capsys.readouterr()


def _run_json(capsys, argv):
    code, captured = _run(capsys, argv)
    assert code == EXIT_OK, captured.err
    return json.loads(captured.out)


class TestFlow:
    def test_stats_on_stdout(self, capsys, translate_dir):
        doc = _run_json(
            capsys,
            [
                "flow",
                "--a", str(translate_dir / "frame_00006.png"),
                "--b", str(translate_dir / "frame_00007.png"),
            ],
        )
        assert set(doc) == {"mean", "max"}
        assert 2.0 < doc["mean"] < 4.0  # true shift is 3 px

    def test_out_writes_binary_field(self, capsys, tmp_path, translate_dir):
        out = tmp_path / "field.flow"
        code, captured = _run(
            capsys,
            [
                "flow",
                "--a", str(translate_dir / "frame_00000.png"),
                "--b", str(translate_dir / "frame_00001.png"),
                "--out", str(out),
            ],
        )
        assert code == EXIT_OK
        assert captured.out == ""  # stats only with --stats
        field = read_flow(out)
        assert field.u.shape == (48, 48)

    def test_out_with_stats(self, capsys, tmp_path, translate_dir):
        out = tmp_path / "field.flow"
        code, captured = _run(
            capsys,
            [
                "flow",
                "--a", str(translate_dir / "frame_00000.png"),
                "--b", str(translate_dir / "frame_00001.png"),
                "--out", str(out), "--stats",
            ],
        )
        assert code == EXIT_OK
        assert "mean" in json.loads(captured.out)

    def test_missing_flag_is_config_error(self, capsys, translate_dir):
        code, _ = _run(capsys, ["flow", "--a", str(translate_dir / "frame_00000.png")])
        assert code == EXIT_CONFIG


class TestScore:
    def test_profile_document(self, capsys, translate_dir):
        doc = _run_json(capsys, ["score", "--input", str(translate_dir)])
        assert doc["video"] == "vid"
        assert doc["n"] == 14
        assert doc["stat"] == "mean"
        assert len(doc["scores"]) == 13
        assert max(doc["scores"]) == doc["scores"][6]
        assert set(doc["params"]) == {"flow", "digest", "max_dim"}

    def test_out_file_and_plot(self, capsys, tmp_path, translate_dir):
        out = tmp_path / "profile.json"
        plot = tmp_path / "profile.png"
        code, captured = _run(
            capsys,
            [
                "score", "--input", str(translate_dir),
                "--out", str(out), "--plot", str(plot),
            ],
        )
        assert code == EXIT_OK
        assert captured.out == ""
        assert json.loads(out.read_text())["n"] == 14
        assert plot.stat().st_size > 1000

    def test_stat_choice_rejected(self, capsys, translate_dir):
        code, _ = _run(
            capsys, ["score", "--input", str(translate_dir), "--stat", "median"]
        )
        assert code == EXIT_CONFIG

    def test_missing_input_dir(self, capsys, tmp_path):
        code, _ = _run(capsys, ["score", "--input", str(tmp_path / "nope")])
        assert code == EXIT_CONFIG


class TestSample:
    def test_sample_document(self, capsys, fleet):
        videos, _ = fleet
        doc = _run_json(
            capsys, ["sample", "--input", str(videos / "vid_burst"), "--m", "4"]
        )
        for key in (
            "video", "n", "params", "scores", "scores_smooth",
            "peaks", "indices", "provenance", "clips",
        ):
            assert key in doc
        assert doc["params"]["sampler"]["m"] == 4
        assert doc["peaks"] == [4, 10]  # burst midpoints
        assert doc["indices"] == [4, 5, 10, 11]
        assert doc["provenance"] == ["gap_fill", "clip", "gap_fill", "clip"]

    def test_short_video_fallback(self, capsys, translate_dir):
        doc = _run_json(capsys, ["sample", "--input", str(translate_dir), "--m", "20"])
        assert doc["indices"] == list(range(14))
        assert set(doc["provenance"]) == {"fallback_uniform"}
        assert doc["scores"] == []

    def test_export_frames_and_plot(self, capsys, tmp_path, translate_dir):
        export = tmp_path / "frames"
        plot = tmp_path / "sampling.png"
        doc = _run_json(
            capsys,
            [
                "sample", "--input", str(translate_dir), "--m", "4",
                "--export-frames", str(export), "--plot", str(plot),
            ],
        )
        exported = sorted(p.name for p in export.iterdir())
        assert exported == [f"idx_{i:05d}.png" for i in doc["indices"]]
        assert plot.stat().st_size > 1000


class TestSynth:
    def test_burst_fixture_written(self, capsys, tmp_path):
        out = tmp_path / "fx"
        doc = _run_json(
            capsys,
            [
                "synth", "--kind", "burst", "--n", "12", "--size", "32x32",
                "--bursts", "2:4,8:9", "--shift", "3,0", "--seed", "7",
                "--out", str(out),
            ],
        )
        assert doc == {"out": str(out), "kind": "burst", "n": 12}
        assert len(list(out.glob("frame_*.png"))) == 12
        truth = json.loads((out / "ground_truth.json").read_text())
        assert truth["magnitudes"][2] == 3.0
        assert truth["magnitudes"][0] == 0.0

    def test_translate_defaults_to_middle(self, capsys, tmp_path):
        out = tmp_path / "fx"
        _run_json(
            capsys,
            [
                "synth", "--kind", "translate", "--n", "9", "--size", "32x32",
                "--shift", "0,2", "--out", str(out),
            ],
        )
        truth = json.loads((out / "ground_truth.json").read_text())
        assert truth["at"] == 4

    def test_burst_without_intervals_rejected(self, capsys, tmp_path):
        code, captured = _run(
            capsys,
            [
                "synth", "--kind", "burst", "--n", "12",
                "--shift", "1,0", "--out", str(tmp_path / "fx"),
            ],
        )
        assert code == EXIT_CONFIG
        assert "bursts" in captured.err

    def test_bad_size_rejected(self, capsys, tmp_path):
        code, _ = _run(
            capsys,
            [
                "synth", "--kind", "constant", "--n", "3", "--size", "huge",
                "--out", str(tmp_path / "fx"),
            ],
        )
        assert code == EXIT_CONFIG


class TestQaGen:
    def test_videos_flag(self, capsys):
        code, captured = _run(capsys, ["qa-gen", "--videos", "a,b"])
        assert code == EXIT_OK
        lines = [json.loads(l) for l in captured.out.splitlines()]
        assert len(lines) == 12
        assert lines[0] == {
            "video_id": "a",
            "category_id": "texture_corruption",
            "question": "Does this video exhibit texture corruption?",
        }
        assert {l["video_id"] for l in lines} == {"a", "b"}

    def test_input_scans_video_dirs(self, capsys, fleet):
        videos, _ = fleet
        code, captured = _run(capsys, ["qa-gen", "--input", str(videos)])
        assert code == EXIT_OK
        lines = [json.loads(l) for l in captured.out.splitlines()]
        assert len(lines) == 18
        assert {l["video_id"] for l in lines} == set(FLEET_LABELS)

    def test_out_file(self, capsys, tmp_path):
        out = tmp_path / "qa.jsonl"
        code, captured = _run(capsys, ["qa-gen", "--videos", "a", "--out", str(out)])
        assert code == EXIT_OK
        assert captured.out == ""
        assert len(out.read_text().splitlines()) == 6

    def test_no_source_rejected(self, capsys):
        code, _ = _run(capsys, ["qa-gen"])
        assert code == EXIT_CONFIG


class TestEvaluate:
    @pytest.fixture()
    def eval_files(self, tmp_path):
        ann = tmp_path / "ann.jsonl"
        pred = tmp_path / "pred.jsonl"
        ann.write_text(
            json.dumps(
                {
                    "video_id": "v1",
                    "labels": {"texture_corruption": True, "flicker": False},
                }
            )
            + "\n",
            encoding="utf-8",
        )
        rows = [
            {"video_id": "v1", "category_id": "texture_corruption", "raw_answer": "yes"},
            {"video_id": "v1", "category_id": "flicker", "raw_answer": "yes"},
        ]
        pred.write_text(
            "".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8"
        )
        return pred, ann

    def test_json_format(self, capsys, eval_files):
        pred, ann = eval_files
        doc = _run_json(
            capsys,
            ["evaluate", "--predictions", str(pred), "--annotations", str(ann)],
        )
        assert doc["acc"] == {"appearance": 1.0, "motion": 0.0, "all": 0.5}
        assert doc["counts"]["all"] == 2

    def test_table_format(self, capsys, eval_files):
        pred, ann = eval_files
        code, captured = _run(
            capsys,
            [
                "evaluate", "--predictions", str(pred),
                "--annotations", str(ann), "--format", "table",
            ],
        )
        assert code == EXIT_OK
        header = captured.out.splitlines()[0].split()
        assert header == ["Appearance", "Camera", "Motion", "All"]

    def test_out_and_plot(self, capsys, tmp_path, eval_files):
        pred, ann = eval_files
        out = tmp_path / "report.json"
        plot = tmp_path / "acc.png"
        code, _ = _run(
            capsys,
            [
                "evaluate", "--predictions", str(pred), "--annotations", str(ann),
                "--out", str(out), "--plot", str(plot),
            ],
        )
        assert code == EXIT_OK
        assert json.loads(out.read_text())["acc"]["all"] == 0.5
        assert plot.stat().st_size > 1000

    def test_zero_scoreable_is_config_error(self, capsys, tmp_path, eval_files):
        pred, ann = eval_files
        lonely = tmp_path / "lonely.jsonl"
        lonely.write_text(
            json.dumps(
                {"video_id": "ghost", "category_id": "flicker", "raw_answer": "yes"}
            )
            + "\n",
            encoding="utf-8",
        )
        code, _ = _run(
            capsys, ["evaluate", "--predictions", str(lonely), "--annotations", str(ann)]
        )
        assert code == EXIT_CONFIG


class TestAudit:
    def test_clean_run_schema(self, capsys, tmp_path, fleet):
        videos, annotations = fleet
        doc = _run_json(
            capsys,
            [
                "audit", "--input", str(videos),
                "--annotations", str(annotations),
                "--frames-dir", str(tmp_path / "scratch"),
            ],
        )
        assert doc["meta"]["backend"] == "always_no"
        assert doc["meta"]["sampling"] == "fmg"
        assert doc["meta"]["n_videos"] == 3
        assert doc["meta"]["errors"] == 0
        assert [v["video_id"] for v in doc["videos"]] == sorted(FLEET_LABELS)
        for video in doc["videos"]:
            labels = FLEET_LABELS[video["video_id"]]
            assert set(video["verdicts"]) == set(labels)
            assert set(video["verdicts"].values()) == {"no"}
            assert video["indices"] == sorted(set(video["indices"]))
            assert len(video["provenance"]) == len(video["indices"])
        # always_no scores exactly the false-label fraction
        assert doc["eval"]["acc"]["all"] == 12 / 18
        assert doc["eval"]["counts"]["all"] == 18

    def test_exported_frames_on_disk(self, capsys, tmp_path, fleet):
        videos, _ = fleet
        scratch = tmp_path / "scratch"
        doc = _run_json(
            capsys,
            ["audit", "--input", str(videos), "--frames-dir", str(scratch)],
        )
        burst = next(v for v in doc["videos"] if v["video_id"] == "vid_burst")
        names = sorted(p.name for p in (scratch / "vid_burst").iterdir())
        assert names == [f"idx_{i:05d}.png" for i in burst["indices"]]

    def test_corrupt_video_is_partial(self, capsys, tmp_path, fleet):
        videos, _ = fleet
        root = tmp_path / "videos"
        root.mkdir()
        (root / "vid_ok").symlink_to(videos / "vid_constant")
        bad = root / "vid_bad"
        bad.mkdir()
        (bad / "frame_00000.png").write_bytes(b"not a png")
        code, captured = _run(
            capsys,
            [
                "audit", "--input", str(root),
                "--frames-dir", str(tmp_path / "scratch"),
            ],
        )
        assert code == EXIT_PARTIAL
        doc = json.loads(captured.out)
        assert doc["meta"]["errors"] == 1
        by_id = {v["video_id"]: v for v in doc["videos"]}
        assert "error" in by_id["vid_bad"]
        assert by_id["vid_ok"]["verdicts"]

    def test_empty_root_is_config_error(self, capsys, tmp_path):
        root = tmp_path / "empty"
        root.mkdir()
        code, captured = _run(capsys, ["audit", "--input", str(root)])
        assert code == EXIT_CONFIG
        assert "no videos found" in captured.err

    def test_bad_backend_spec(self, capsys, fleet):
        videos, _ = fleet
        code, _ = _run(
            capsys, ["audit", "--input", str(videos), "--backend", "mystery"]
        )
        assert code == EXIT_CONFIG

    def test_threshold_backend_uses_profile(self, capsys, tmp_path, fleet):
        videos, _ = fleet
        doc = _run_json(
            capsys,
            [
                "audit", "--input", str(videos), "--backend", "threshold:0.1",
                "--frames-dir", str(tmp_path / "scratch"),
            ],
        )
        by_id = {v["video_id"]: v for v in doc["videos"]}
        # moving fixtures exceed the bound, the static one does not
        assert set(by_id["vid_burst"]["verdicts"].values()) == {"yes"}
        assert set(by_id["vid_translate"]["verdicts"].values()) == {"yes"}
        assert set(by_id["vid_constant"]["verdicts"].values()) == {"no"}

    def test_random_sampling_seed_determinism(self, capsys, tmp_path, fleet):
        videos, _ = fleet

        def indices(seed, tag):
            doc = _run_json(
                capsys,
                [
                    "audit", "--input", str(videos),
                    "--sampling", "random", "--seed", str(seed),
                    "--frames-dir", str(tmp_path / f"scratch_{tag}"),
                ],
            )
            return {v["video_id"]: v["indices"] for v in doc["videos"]}

        first = indices(5, "a")
        assert first == indices(5, "b")
        assert first != indices(6, "c")

    def test_mean_sampling_is_uniform(self, capsys, tmp_path, fleet):
        videos, _ = fleet
        doc = _run_json(
            capsys,
            [
                "audit", "--input", str(videos), "--sampling", "mean",
                "--frames-dir", str(tmp_path / "scratch"),
            ],
        )
        by_id = {v["video_id"]: v for v in doc["videos"]}
        assert by_id["vid_constant"]["indices"] == uniform_indices(12, 10)
        assert "provenance" not in by_id["vid_constant"]

    def test_predictions_out(self, capsys, tmp_path, fleet):
        videos, annotations = fleet
        pred_path = tmp_path / "preds.jsonl"
        _run_json(
            capsys,
            [
                "audit", "--input", str(videos),
                "--annotations", str(annotations),
                "--frames-dir", str(tmp_path / "scratch"),
                "--predictions-out", str(pred_path),
            ],
        )
        rows = [json.loads(l) for l in pred_path.read_text().splitlines()]
        assert len(rows) == 18
        assert rows == sorted(rows, key=lambda r: (r["video_id"], r["category_id"]))
        assert all(r["raw_answer"] == "no" for r in rows)


class TestConfigMirror:
    def test_config_supplies_required_flag(self, capsys, tmp_path, translate_dir):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"input": str(translate_dir), "m": 4}))
        doc = _run_json(capsys, ["sample", "--config", str(cfg)])
        assert doc["params"]["sampler"]["m"] == 4
        assert len(doc["indices"]) == 4

    def test_flag_overrides_config(self, capsys, tmp_path, translate_dir):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"input": str(translate_dir), "m": 4}))
        doc = _run_json(capsys, ["sample", "--config", str(cfg), "--m", "6"])
        assert len(doc["indices"]) == 6

    def test_unknown_key_rejected(self, capsys, tmp_path, translate_dir):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"input": str(translate_dir), "mystery": 1}))
        code, captured = _run(capsys, ["sample", "--config", str(cfg)])
        assert code == EXIT_CONFIG
        assert "mystery" in captured.err

    def test_malformed_config_rejected(self, capsys, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("{broken")
        code, _ = _run(capsys, ["score", "--config", str(cfg), "--input", "x"])
        assert code == EXIT_CONFIG
