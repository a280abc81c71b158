"""Training loop, calibration, streaming, benchmarking and the command line on small models."""

import math
import subprocess
import sys

import numpy as np
import pytest

from eleson.autograd import Tensor
from eleson.bench import bench
from eleson.cli import main
from eleson.config import TrainConfig, config_from_text, config_to_text
from eleson.core import ConfigError, DataError, samples_from_array
from eleson.metrics import entropy
from eleson.model import ElesonNet, ModelBundle
from eleson.stream import batch_decisions, infer_stream
from eleson.synth import ConveyorProfile, ScenarioConfig, BehaviorProcess, gen_session
from eleson.train import (
    baseline_e2e_softmax, evaluate, fit_temperature, joint_losses, nll, split_by_session, stratified_batches,
    temperature_scale, train,
)

from conftest import TINY_ARCH, tiny_config


@pytest.fixture(scope="module")
def split(small_dataset):
    return split_by_session(small_dataset, 0.25, 0)


@pytest.fixture(scope="module")
def tiny_bundle(split):
    return train(tiny_config(epochs=2, batch_size=16), *split)


# -- config ----------------------------------------------------------------------------

def test_config_defaults_and_text_round_trip():
    cfg = TrainConfig()
    assert (cfg.w1, cfg.w2, cfg.w3, cfg.w4, cfg.tau, cfg.T) == (0.6, 0.3, 0.4, 1.0, 0.5, 200)
    assert config_from_text(config_to_text(cfg)) == cfg
    assert config_from_text(config_to_text(tiny_config(magnetic_branch=False))).arch == TINY_ARCH


@pytest.mark.parametrize("kw", [dict(w3=-1.0), dict(tau=1.0), dict(causal_branch=False, magnetic_branch=False),
                                dict(mag_input="both")])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_config_text_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        config_from_text("learning_rate=0.1\n")
    with pytest.raises(ConfigError):
        config_from_text("arch.depth=3\n")


# -- splitting and batching ---------------------------------------------------------------

def test_session_split_is_disjoint(split):
    tr, va = split
    assert not set(tr.sessions()) & set(va.sessions())
    assert len(tr) + len(va) == 150


def test_stratified_batches_cover_all_classes():
    y = np.array([0] * 40 + [1] * 40 + [2] * 120)
    batches = stratified_batches(y, 32, np.random.default_rng(0))
    assert sorted(np.concatenate(batches).tolist()) == list(range(200))
    for b in batches:
        assert set(y[b]) == {0, 1, 2}


def test_empty_class_rejected(small_dataset):
    no_escalator = small_dataset.subset([i for i, r in enumerate(small_dataset.records) if int(r.label) != 1])
    with pytest.raises(DataError):
        train(tiny_config(epochs=1), no_escalator)


def test_overlapping_validation_rejected(split):
    tr, _ = split
    with pytest.raises(DataError):
        train(tiny_config(epochs=1), tr, tr)


# -- training --------------------------------------------------------------------------------

def test_training_is_deterministic(split, tiny_bundle):
    again = train(tiny_config(epochs=2, batch_size=16), *split)
    assert [h.get("total") for h in again.history] == [h.get("total") for h in tiny_bundle.history]
    for (_, a), (_, b) in zip(again.net.named_parameters(), tiny_bundle.net.named_parameters()):
        assert a.data.tobytes() == b.data.tobytes()


def test_history_records_terms(tiny_bundle):
    first = tiny_bundle.history[0]
    for key in ("total", "els", "cal", "sim", "rec", "con", "mag", "valid_mean_f1", "seconds"):
        assert key in first
    assert tiny_bundle.history[-1]["best_epoch"] in (1, 2)


def _batch(split, n=12):
    tr, _ = split
    X, y, vp = tr.subset(range(n)).arrays()
    return X, y, vp


def test_zero_branch_weights_reduce_to_evidential_loss(split):
    X, y, vp = _batch(split)
    cfg = tiny_config(w3=0.0, w4=0.0)
    bundle = ModelBundle("eleson", cfg, ElesonNet(cfg), ModelBundle.fit_stats("eleson", cfg, X))
    motion, mag = bundle.inputs(X)
    terms = joint_losses(bundle.net, cfg, motion, mag, y, vp, np.random.default_rng(0))
    assert terms["total"] is terms["els"]


def test_total_is_weighted_sum(split):
    X, y, vp = _batch(split)
    cfg = tiny_config(w3=0.7, w4=1.3)
    bundle = ModelBundle("eleson", cfg, ElesonNet(cfg), ModelBundle.fit_stats("eleson", cfg, X))
    motion, mag = bundle.inputs(X)
    t = joint_losses(bundle.net, cfg, motion, mag, y, vp, np.random.default_rng(0))
    expect = t["els"].item() + 0.7 * t["mag"].item() + 1.3 * t["cal"].item()
    assert t["total"].item() == pytest.approx(expect, rel=1e-5)


def test_classifier_input_excludes_behavior_feature(split):
    # z_p may change freely without moving the evidence
    X, y, _ = _batch(split, 4)
    cfg = tiny_config()
    net = ElesonNet(cfg)
    bundle = ModelBundle("eleson", cfg, net, ModelBundle.fit_stats("eleson", cfg, X))
    motion, mag = bundle.inputs(X)
    out = net(Tensor(motion), Tensor(mag))
    z = np.concatenate([out["z_c"].data, out["z_b"].data], axis=1)
    np.testing.assert_array_equal(out["z"].data, z)
    assert out["z"].shape[1] == 2 * cfg.arch.feature_dim


def test_magnetic_ablation_leaves_causal_branch_identical(split):
    X, y, vp = _batch(split)
    on, off = tiny_config(), tiny_config(magnetic_branch=False)
    net_on, net_off = ElesonNet(on), ElesonNet(off)
    for (n1, p1), (n2, p2) in zip(net_on.causal.named_parameters(), net_off.causal.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    stats = ModelBundle.fit_stats("eleson", on, X)
    motion, mag = ModelBundle("eleson", on, net_on, stats).inputs(X)
    t_on = joint_losses(net_on, on, motion, mag, y, vp, np.random.default_rng(5))
    t_off = joint_losses(net_off, off, motion, mag, y, vp, np.random.default_rng(5))
    for k in ("sim", "rec", "con", "cal"):
        assert t_on[k].item() == t_off[k].item()
    assert "mag" not in t_off and "mag" in t_on


def test_evaluate_report(split, tiny_bundle):
    _, va = split
    rep = evaluate(tiny_bundle, va, 0.0)
    assert rep.ud_ratio == 0.0 and rep.n_windows == len(va)
    assert evaluate(tiny_bundle, va, 0.9).ud_ratio >= rep.ud_ratio
    assert rep.latency_ms["batch_per_window"] > 0


# -- baseline and temperature ------------------------------------------------------------------

def test_baseline_trains_deterministically(split):
    a = baseline_e2e_softmax(tiny_config(epochs=1, batch_size=16), *split)
    b = baseline_e2e_softmax(tiny_config(epochs=1, batch_size=16), *split)
    assert a.kind == "e2e" and a.history[0]["total"] == b.history[0]["total"]
    pred = a.predict(split[1].arrays()[0])
    np.testing.assert_allclose(pred.conf.sum(axis=1), 1.0)
    np.testing.assert_allclose(pred.wrong_score, entropy(pred.conf))


def test_calibrated_logits_give_unit_temperature():
    rng = np.random.default_rng(0)
    logits = rng.normal(0, 2.0, size=(20000, 3))
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    y = np.array([rng.choice(3, p=row) for row in p])
    assert fit_temperature(logits, y) == pytest.approx(1.0, abs=0.05)


def test_overconfident_logits_get_cooled():
    rng = np.random.default_rng(1)
    logits = rng.normal(0, 2.0, size=(5000, 3))
    p = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    y = np.array([rng.choice(3, p=row) for row in p])
    T = fit_temperature(3.0 * logits, y)
    assert T == pytest.approx(3.0, rel=0.1)
    assert nll(3.0 * logits, y, T) <= nll(3.0 * logits, y, 1.0)


def test_large_temperature_is_uniform():
    logits = np.random.default_rng(2).normal(0, 3, size=(10, 3))
    z = logits / 1e6
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(entropy(p), math.log(3), rtol=1e-9)


def test_temperature_scale_needs_softmax_bundle(split, tiny_bundle):
    with pytest.raises(ConfigError):
        temperature_scale(tiny_bundle, split[1])


def test_temperature_scale_not_worse(split):
    base = baseline_e2e_softmax(tiny_config(epochs=1, batch_size=16), *split)
    T = temperature_scale(base, split[1])
    X, y, _ = split[1].arrays()
    logits = base.raw_outputs(X).astype(np.float64)
    assert 0.05 <= T <= 20 and nll(logits, y, T) <= nll(logits, y, 1.0)


# -- streaming -----------------------------------------------------------------------------------

def elevator_session(seconds=10.0):
    prof = ConveyorProfile.elevator(cruise_seconds=2.0, ramp_seconds=1.5)
    cfg = ScenarioConfig(prof, BehaviorProcess.preset("browsing"), duration_seconds=seconds, ride_start=1.0)
    return gen_session(cfg)


def test_ten_second_session_streams_five_decisions(tiny_bundle):
    out = list(infer_stream(tiny_bundle, elevator_session().samples()))
    assert [d.index for d in out] == [0, 1, 2, 3, 4]
    assert [d.start_time for d in out] == pytest.approx([0, 2, 4, 6, 8])
    assert all(d.latency_ms > 0 for d in out)


@pytest.mark.parametrize("tau", [0.0, 0.3, 0.5])
def test_stream_matches_batch(tiny_bundle, tau):
    s = elevator_session(14.0)
    streamed = [d.decision for d in infer_stream(tiny_bundle, s.samples(), tau)]
    batched = batch_decisions(tiny_bundle, s.times, s.values, tau)
    assert [d.code for d in streamed] == [d.code for d in batched]
    for a, b in zip(streamed, batched):
        np.testing.assert_array_equal(a.conf.c, b.conf.c)


def test_overlapping_stride_stream_matches_batch(split):
    bundle = train(tiny_config(epochs=1, batch_size=16, stride_seconds=0.5), *split)
    s = elevator_session(8.0)
    streamed = list(infer_stream(bundle, s.samples()))
    batched = batch_decisions(bundle, s.times, s.values)
    assert len(streamed) == len(batched) == 13
    assert [d.decision.code for d in streamed] == [d.code for d in batched]


def test_gap_window_is_undecided(tiny_bundle):
    s = elevator_session(8.0)
    times = s.times.copy()
    times[450:] += 0.05       # hole inside the third window
    out = list(infer_stream(tiny_bundle, samples_from_array(times, s.values)))
    assert len(out) == 4
    assert [d.gap for d in out] == [False, False, True, False]
    assert out[2].decision.undecided and out[2].line().endswith(", gap")
    assert out[2].line().startswith("2, UD, 0.000000, 0.000000, 0.000000, 1.000000")


def test_stream_rejects_time_reversal(tiny_bundle):
    s = elevator_session(8.0)
    samples = s.samples()
    samples[10], samples[11] = samples[11], samples[10]
    with pytest.raises(DataError):
        list(infer_stream(tiny_bundle, samples))


def test_stream_line_format(tiny_bundle):
    d = next(iter(infer_stream(tiny_bundle, elevator_session(8.0).samples(), 0.0)))
    parts = d.line().split(", ")
    assert parts[0] == "0" and parts[1] in {"0", "1", "2"} and len(parts) == 6
    assert sum(float(v) for v in parts[2:]) == pytest.approx(1.0, abs=5e-6)


# -- bench -----------------------------------------------------------------------------------------

def test_default_bundle_size_and_latency():
    cfg = TrainConfig()
    X = np.random.default_rng(0).normal(size=(4, 200, 9))
    bundle = ModelBundle("eleson", cfg, ElesonNet(cfg), ModelBundle.fit_stats("eleson", cfg, X))
    rep = bench(bundle, n_runs=10)
    assert 7.0 <= rep.size_mb <= 11.0
    assert rep.size_bytes == len(bundle.to_bytes())
    assert rep.p50_ms <= rep.p95_ms < 500
    assert dict(rep.rows())["n_params"] == str(bundle.n_params())


def test_size_grows_with_width():
    # feature_dim stays fixed, so only the hidden-to-hidden layers grow quadratically
    a = ElesonNet(tiny_config()).n_params()
    wide = tiny_config().replace(arch=TINY_ARCH.scaled(2.0))
    b = ElesonNet(wide).n_params()
    assert 2.0 < b / a < 4.0


# -- command line --------------------------------------------------------------------------------------

TINY_CFG_TEXT = config_to_text(tiny_config(epochs=1, batch_size=16))


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.cfg").write_text(TINY_CFG_TEXT)
    assert main(["synth", "--out", str(root / "data"), "--sessions", "40", "--windows", "120", "--seed", "3",
                 "--raw-sessions", "2"]) == 0
    assert main(["train", "--config", str(root / "tiny.cfg"), "--data", str(root / "data"),
                 "--out", str(root / "m.elsn")]) == 0
    return root


def test_cli_synth_layout(cli_workspace, capsys):
    assert (cli_workspace / "data" / "windows.txt").exists()
    assert len(list((cli_workspace / "data" / "sessions").glob("session_*.txt"))) == 2


def test_cli_eval_writes_report_and_figures(cli_workspace, capsys):
    report = cli_workspace / "reports" / "eval.txt"
    assert main(["eval", "--model", str(cli_workspace / "m.elsn"), "--data", str(cli_workspace / "data"),
                 "--tau", "0.5", "--report", str(report)]) == 0
    text = report.read_text()
    assert "mean_f1=" in text and "auroc=" in text and "ud_ratio=" in text
    for suffix in ("roc", "confidence", "tau", "confusion"):
        assert (cli_workspace / "reports" / f"eval_{suffix}.png").stat().st_size > 0


def test_cli_infer_and_bench(cli_workspace, capsys):
    session = sorted((cli_workspace / "data" / "sessions").glob("session_*.txt"))[0]
    assert main(["infer", "--model", str(cli_workspace / "m.elsn"), "--input", str(session), "--latency"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0].startswith("0, ") and lines[-1].startswith("# latency_p50_ms=")


def test_cli_bench(cli_workspace, capsys):
    assert main(["bench", "--model", str(cli_workspace / "m.elsn"), "--runs", "3"]) == 0
    assert "size_bytes=" in capsys.readouterr().out


@pytest.mark.parametrize("argv,code", [
    (["eval", "--model", "missing.elsn", "--data", "."], 3),
    (["train", "--config", "missing.cfg", "--data", "."], 2),
    (["synth", "--out", "{tmp}/x", "--sessions", "5", "--mix", "0.5,0.5"], 2),
    (["synth", "--out", "{tmp}/x", "--sessions", "5", "--mix", "0.5,0.6,0.1"], 2),
    (["infer", "--model", "{ws}/m.elsn", "--input", "missing.txt"], 3),
    (["eval", "--model", "{ws}/m.elsn", "--data", "{ws}/data", "--tau", "1.5"], 2),
    (["eval", "--model", "{ws}/data/windows.txt", "--data", "{ws}/data"], 3),
])
def test_cli_exit_codes(cli_workspace, tmp_path, argv, code, capsys):
    argv = [a.format(tmp=tmp_path, ws=cli_workspace) for a in argv]
    if argv[0] == "train":
        argv += ["--out", str(tmp_path / "m.elsn")]
    assert main(argv) == code


def test_cli_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "eleson.cli", "train"], capture_output=True)
    assert proc.returncode == 2
