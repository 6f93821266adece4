import csv
import json

import pytest

from deepclaim import cli
from deepclaim.model import VARIANT_LABELS

FAST = ["--epochs", "1", "--context-dim", "8", "--embed-dim", "6"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(d / "data"), "--n-claims", "400", "--seed", "7"]) == 0
    assert cli.main([
        "label", "--claims", str(d / "data/claims.jsonl"), "--remits", str(d / "data/remits.jsonl"),
        "--denial-set", str(d / "data/denial_set.txt"), "--out", str(d / "lab"),
    ]) == 0
    assert cli.main(["featurize", "--labeled", str(d / "lab/labeled.jsonl"), "--out", str(d / "feat")]) == 0
    return d


def train_args(d, out, *extra, fast=True):
    return ["train", "--features", str(d / "feat/features.jsonl"), "--vocab", str(d / "feat/vocab.json"),
            "--out", str(d / out), *(FAST if fast else []), *extra]


def test_synth_same_seed_identical(tmp_path, workdir):
    assert cli.main(["synth", "--out", str(tmp_path), "--n-claims", "400", "--seed", "7"]) == 0
    for name in ("claims.jsonl", "remits.jsonl", "truth.jsonl", "denial_set.txt"):
        assert (tmp_path / name).read_bytes() == (workdir / "data" / name).read_bytes()


def test_label_summary(workdir):
    summary = json.loads((workdir / "lab/label_summary.json").read_text())
    assert summary["claims"] == 400
    assert summary["labeled"] + summary["unmatched"] + summary["rejected"] == 400


def test_train_and_explain(workdir):
    assert cli.main(train_args(workdir, "m")) == 0
    trace = (workdir / "m/loss_trace.csv").read_text().splitlines()
    assert trace[0] == "epoch,bce,cce_claim,cce_service,l1,total" and len(trace) == 2
    assert cli.main([
        "explain", "--checkpoint", str(workdir / "m/checkpoint.json"), "--vocab", str(workdir / "feat/vocab.json"),
        "--features", str(workdir / "feat/features.jsonl"), "--index", "2", "--out", str(workdir / "ex"),
    ]) == 0
    vocab = json.loads((workdir / "feat/vocab.json").read_text())
    n_fields = sum(len(v["tokens"]) for v in vocab.values())
    rows = list(csv.reader(open(workdir / "ex/saliency.csv")))
    assert rows[0] == ["index", "field_name", "category", "score"]
    assert len(rows) == n_fields + 1
    assert max(float(r[3]) for r in rows[1:]) == 1.0
    assert "flagged" in json.loads((workdir / "ex/saliency.json").read_text())


def test_explain_by_pcn_and_bad_index(workdir, capsys):
    assert cli.main(train_args(workdir, "m2")) == 0
    pcn = json.loads((workdir / "feat/features.jsonl").read_text().splitlines()[5])["pcn"]
    common = ["explain", "--checkpoint", str(workdir / "m2/checkpoint.json"), "--vocab",
              str(workdir / "feat/vocab.json"), "--features", str(workdir / "feat/features.jsonl")]
    assert cli.main(common + ["--pcn", pcn, "--out", str(workdir / "ex2")]) == 0
    assert cli.main(common + ["--index", "99999", "--out", str(workdir / "ex3")]) == 1
    assert "out of range" in capsys.readouterr().err


def test_config_file_and_flag_precedence(workdir):
    cfg = workdir / "run.cfg"
    cfg.write_text("# run settings\nepochs = 3\ncontext-dim = 8\nembed_dim = 6\n")
    assert cli.main(train_args(workdir, "c1", "--config", str(cfg), fast=False)) == 0
    assert len((workdir / "c1/loss_trace.csv").read_text().splitlines()) == 4
    assert cli.main(train_args(workdir, "c2", "--config", str(cfg), "--epochs", "2", fast=False)) == 0
    assert len((workdir / "c2/loss_trace.csv").read_text().splitlines()) == 3


def test_config_file_rejects_unknown_keys(workdir):
    cfg = workdir / "bad.cfg"
    cfg.write_text("warp_speed = 9\n")
    with pytest.raises(SystemExit) as err:
        cli.main(train_args(workdir, "x", "--config", str(cfg)))
    assert err.value.code != 0


def test_unknown_flag_exits_nonzero():
    with pytest.raises(SystemExit) as err:
        cli.main(["evaluate", "--labeled", "x", "--frobnicate"])
    assert err.value.code != 0


def test_missing_file_returns_error(tmp_path, capsys):
    assert cli.main(["evaluate", "--labeled", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err


def test_vocab_mismatch_refused(workdir, tmp_path):
    assert cli.main(train_args(workdir, "m3")) == 0
    other = tmp_path / "other"
    assert cli.main(["featurize", "--labeled", str(workdir / "lab/labeled.jsonl"), "--out", str(other),
                     "--min-counts", "1,1,1"]) == 0
    code = cli.main([
        "explain", "--checkpoint", str(workdir / "m3/checkpoint.json"), "--vocab", str(other / "vocab.json"),
        "--features", str(other / "features.jsonl"), "--out", str(tmp_path / "ex"),
    ])
    assert code == 1


def test_evaluate_has_three_splits_plus_summary(workdir):
    out = workdir / "ev"
    assert cli.main(["evaluate", "--labeled", str(workdir / "lab/labeled.jsonl"), "--k-splits", "3",
                     "--out", str(out), *FAST]) == 0
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    assert [r["split"] for r in rows] == ["1", "2", "3", "mean", "sd"]
    assert {r["model"] for r in rows} == {VARIANT_LABELS["deepclaim2"]}
    report = json.loads((out / "metrics.json").read_text())
    assert len(report[0]["splits"]) == 3


def test_bench_schema(workdir):
    out = workdir / "bench"
    assert cli.main(["bench", "--labeled", str(workdir / "lab/labeled.jsonl"), "--k-splits", "2",
                     "--out", str(out), *FAST]) == 0
    rows = list(csv.reader(open(out / "metrics.csv")))
    assert rows[0] == ["model", "split", "recall95", "pr_auc", "mae", "baseline_mae"]
    expected = [[VARIANT_LABELS[v], s] for v in VARIANT_LABELS for s in ("1", "2", "mean", "sd")]
    assert [r[:2] for r in rows[1:]] == expected
