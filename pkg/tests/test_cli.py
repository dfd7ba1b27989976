import csv
import json

import numpy as np
import pytest

from tribrain import cli

TINY = [
    "model.widths=4,8,8", "model.d_k=8", "model.d_v=8", "model.D=8", "model.n_sync=16", "model.gamma_hidden=8",
    "data.size=16", "data.n_train=24", "data.n_val=12", "data.n_test=12",
    "policy.T=4", "policy.t_min=2", "train.batch_size=8", "train.epochs=1",
]


def sets(*extra):
    out = []
    for kv in (*TINY, *extra):
        out += ["--set", kv]
    return out


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# tribrain.")
    return lines[0], list(csv.DictReader(lines[1:]))


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(["train", *sets(), "--out", str(out)]) == 0
    return out / "checkpoint.bin"


class TestTrain:
    def test_outputs(self, trained):
        out = trained.parent
        assert "# seed=0 output_format=1" in (out / "config.cfg").read_text().splitlines()[:2]
        recs = [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]
        assert len(recs) == 1 and recs[0]["schema"] == "tribrain.metrics/1" and recs[0]["seed"] == 0
        assert "test_accuracy" in json.loads((out / "final.json").read_text())

    def test_three_seeds_summary(self, tmp_path):
        assert cli.main(["train", *sets(), "--seeds", "1,2,3", "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["seeds"] == [1, 2, 3] and summary["test_accuracy"]["n"] == 3
        assert {"mean", "std"} <= set(summary["test_accuracy"])
        for s in (1, 2, 3):
            assert (tmp_path / f"seed-{s}" / "checkpoint.bin").is_file()

    def test_zero_epochs(self, tmp_path):
        assert cli.main(["train", *sets("train.epochs=0"), "--out", str(tmp_path)]) == 0
        assert (tmp_path / "checkpoint.bin").is_file()
        assert (tmp_path / "metrics.jsonl").read_text() == ""

    def test_bad_key(self, tmp_path, capsys):
        assert cli.main(["train", "--set", "trian.epochs=1", "--out", str(tmp_path)]) == 2
        assert "trian.epochs" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path, capsys):
        code = cli.main(["train", *sets("data.source=binary", "data.train_path=/nonexistent.bin"), "--out", str(tmp_path)])
        assert code == 3
        assert "label byte" in capsys.readouterr().err

    def test_output_root_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TRIBRAIN_OUT", str(tmp_path))
        assert cli.main(["train", *sets("train.epochs=0")]) == 0
        assert (tmp_path / "train" / "checkpoint.bin").is_file()

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "synth.cfg"
        cfg.write_text("\n".join(TINY[:-1]) + "\ntrain.epochs = 0\n")
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0


class TestEval:
    def test_full_horizon(self, trained, tmp_path):
        assert cli.main(["eval", str(trained), "--set", "policy.t_min=4", "--out", str(tmp_path)]) == 0
        m = json.loads((tmp_path / "metrics.json").read_text())
        assert m["mean_stop_ticks"] == 4.0

    def test_repeatable(self, trained, tmp_path):
        cli.main(["eval", str(trained), "--out", str(tmp_path / "a")])
        cli.main(["eval", str(trained), "--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "per_sample.csv").read_bytes() == (tmp_path / "b" / "per_sample.csv").read_bytes()

    def test_class_mismatch(self, trained, tmp_path):
        assert cli.main(["eval", str(trained), "--set", "model.classes=4", "--out", str(tmp_path)]) == 3

    def test_missing_checkpoint(self, tmp_path):
        assert cli.main(["eval", str(tmp_path / "none.bin"), "--out", str(tmp_path)]) == 3


class TestNoiseSweep:
    def test_four_rows(self, trained, tmp_path):
        assert cli.main(["noise-sweep", str(trained), "--out", str(tmp_path)]) == 0
        header, rows = read_csv(tmp_path / "noise_sweep.csv")
        assert "seed=0" in header
        assert [float(r["sigma"]) for r in rows] == [0, 0.1, 0.25, 0.5]

    def test_zero_matches_eval(self, trained, tmp_path):
        cli.main(["noise-sweep", str(trained), "--sigmas", "0", "--out", str(tmp_path / "n")])
        cli.main(["eval", str(trained), "--out", str(tmp_path / "e")])
        _, rows = read_csv(tmp_path / "n" / "noise_sweep.csv")
        m = json.loads((tmp_path / "e" / "metrics.json").read_text())
        assert float(rows[0]["accuracy"]) == m["accuracy"] and float(rows[0]["mean_stop_ticks"]) == m["mean_stop_ticks"]

    def test_negative_sigma(self, trained, tmp_path):
        assert cli.main(["noise-sweep", str(trained), "--sigmas", "0,-0.1", "--out", str(tmp_path)]) == 2


class TestAblate:
    def test_two_cells(self, tmp_path):
        assert cli.main(["ablate", *sets(), "--grid", "oscillation=true,false", "--out", str(tmp_path)]) == 0
        _, rows = read_csv(tmp_path / "ablation.csv")
        assert len(rows) == 2 and rows[0]["ablation.oscillation"] == "true"

    def test_shared_seed_data_order(self, tmp_path):
        assert cli.main(["ablate", *sets("train.epochs=0"), "--grid", "model.D=8,12", "--out", str(tmp_path)]) == 0
        for c in (0, 1):
            assert "seed=0" in (tmp_path / f"cell-{c}" / "seed-0" / "config.cfg").read_text()

    def test_invalid_key(self, tmp_path):
        assert cli.main(["ablate", *sets(), "--grid", "wobble=1,2", "--out", str(tmp_path)]) == 2


class TestTrace:
    def test_rows_and_ranges(self, trained, tmp_path):
        assert cli.main(["trace", str(trained), "--indices", "0,3", "--out", str(tmp_path)]) == 0
        for i in (0, 3):
            _, att = read_csv(tmp_path / f"sample{i}_attention.csv")
            _, coh = read_csv(tmp_path / f"sample{i}_coherence.csv")
            _, act = read_csv(tmp_path / f"sample{i}_activation.csv")
            assert len(att) == len(coh) == len(act) == 4
            for r in att:
                assert abs(sum(float(v) for k, v in r.items() if k != "tick") - 1.0) < 1e-9
            for r in coh:
                assert 0.0 <= float(r["phase_coherence"]) <= 1.0

    def test_bad_index(self, trained, tmp_path):
        assert cli.main(["trace", str(trained), "--indices", "99", "--out", str(tmp_path)]) == 3


class TestHumanAlign:
    def test_scatter(self, trained, tmp_path):
        rng = np.random.default_rng(0)
        p = rng.dirichlet(np.ones(3), size=12)
        np.savetxt(tmp_path / "h.csv", p, delimiter=",")
        assert cli.main(["human-align", str(trained), "--human", str(tmp_path / "h.csv"), "--out", str(tmp_path / "o")]) == 0
        res = json.loads((tmp_path / "o" / "alignment.json").read_text())
        assert -1 <= res["pearson_r"] <= 1 and res["n"] == 12
        _, rows = read_csv(tmp_path / "o" / "scatter.csv")
        np.testing.assert_allclose([float(r["human_agreement"]) for r in rows], p.max(1), atol=1e-12)

    def test_missing_probs(self, trained, tmp_path):
        assert cli.main(["human-align", str(trained), "--out", str(tmp_path)]) == 3

    def test_alignment_function(self, trained):
        from tribrain.control import StopPolicy
        from tribrain.data import synth_shapes
        from tribrain.training import load_checkpoint

        model, cfg, _ = load_checkpoint(trained)
        ds = synth_shapes(12, 16, 3, seed=9)
        cert_rows = np.full((12, 3), 0.0)
        cert_rows[np.arange(12), ds.labels] = np.linspace(0.4, 1.0, 12)
        cert_rows += (1 - cert_rows.sum(1, keepdims=True)) / 3
        ds.human_probs = cert_rows
        r, cert, agree = cli.human_alignment(model, ds, StopPolicy(t_min=4, t_max=4), "final")
        assert -1 <= r <= 1 and cert.shape == agree.shape == (12,)
