import numpy as np
import pytest

from opendomain import synth
from opendomain.gcn import GcnParams, GcnSchedule
from opendomain.losses import (
    ClassifierHead,
    LossWeights,
    classifier_responses,
    limited_balance_loss,
    sgmd_loss,
    total_loss,
)
from opendomain.gcn import gcn_reg_loss
from opendomain.graph import normalized_adjacency
from opendomain.model import Encoder, PretrainSchedule, encode, encode_backward
from opendomain.numkit import grad_check, make_rng
from opendomain.trainer import (
    ABLATION_VARIANTS,
    ConfigError,
    ExperimentConfig,
    NonFiniteLossError,
    config_to_text,
    experiment_hash,
    format_ablation_table,
    parse_config,
    run_ablation,
    run_da_mode,
    run_pipeline,
)
from opendomain.trainer import _restricted_cls


def _small_cfg(**overrides):
    base = dict(
        synth=synth.SynthConfig(known_classes=3, total_classes=5,
                                input_dim=6, word_dim=12,
                                source_per_class=10, target_per_class=10,
                                seed=0),
        pretrain=PretrainSchedule(epochs=3),
        gcn_schedule=GcnSchedule(steps=300),
        feature_dim=5,
        epochs=3,
        batch_size=8,
        folds=2,
        seed=0,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


MINIMAL = "train.seed = 0\nsynth.seed = 0\n"


def test_parse_minimal_config():
    cfg = parse_config(MINIMAL)
    assert cfg.seed == 0
    assert cfg.enable_lb and cfg.enable_sgmd and cfg.enable_gcn
    assert not cfg.vanilla_balance


def test_parse_default_w_is_unknown_fraction():
    cfg = parse_config(MINIMAL + "synth.known_classes = 6\n"
                       "synth.total_classes = 10\n")
    assert cfg.loss_weights.w == pytest.approx(0.4)
    cfg = parse_config(MINIMAL + "loss.w = 0.25\n")
    assert cfg.loss_weights.w == 0.25


def test_parse_sections_and_comments():
    text = MINIMAL + """
# a comment line
loss.tau = 0.7          # trailing comment
gcn.slope = 0.1
pretrain.epochs = 4
train.batch_size = 16
flags.enable_sgmd = false
"""
    cfg = parse_config(text)
    assert cfg.loss_weights.tau == 0.7
    assert cfg.activation_slope == 0.1
    assert cfg.pretrain.epochs == 4
    assert cfg.batch_size == 16
    assert not cfg.enable_sgmd


@pytest.mark.parametrize("text", [
    "train.seed = 0\n",                      # missing synth.seed
    "synth.seed = 0\n",                      # missing train.seed
    MINIMAL + "train.bogus = 1\n",           # unknown key
    MINIMAL + "nosection = 1\n",             # key without section
    MINIMAL + "train.seed = 1\n",            # duplicate
    MINIMAL + "train.epochs = banana\n",     # unparsable value
    MINIMAL + "loss.w = 1.5\n",              # out-of-range value
    MINIMAL + "flags.enable_lb = true\nflags.vanilla_balance = true\n",
])
def test_parse_rejects_bad_configs(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_config_text_roundtrip():
    cfg = _small_cfg(enable_sgmd=False)
    assert parse_config(config_to_text(cfg)) == cfg


def test_experiment_hash_tracks_config():
    a = _small_cfg()
    b = _small_cfg(seed=1)
    assert experiment_hash(a) == experiment_hash(_small_cfg())
    assert experiment_hash(a) != experiment_hash(b)


def test_symmetric_config_rejects_balance_and_graph():
    sym = synth.SynthConfig(known_classes=4, total_classes=4, seed=0)
    with pytest.raises(ConfigError):
        ExperimentConfig(synth=sym)
    cfg = ExperimentConfig(synth=sym, enable_lb=False, enable_gcn=False,
                           vanilla_balance=False)
    assert cfg.enable_sgmd


def test_pipeline_deterministic():
    cfg = _small_cfg()
    s1, h1 = run_pipeline(cfg)
    s2, h2 = run_pipeline(cfg)
    assert np.array_equal(s1.encoder.weight, s2.encoder.weight)
    assert np.array_equal(s1.head.weights, s2.head.weights)
    assert np.array_equal(s1.gcn.theta, s2.gcn.theta)
    assert h1.records == h2.records


def test_pipeline_baseline_disables_terms():
    cfg = _small_cfg(enable_lb=False, enable_sgmd=False, enable_gcn=False)
    _, history = run_pipeline(cfg)
    for rec in history.records:
        assert rec["loss_sgmd"] == 0.0
        assert rec["loss_balance"] == 0.0
        assert rec["loss_gcn"] == 0.0
        assert rec["loss_total"] == pytest.approx(rec["loss_cls"])
        assert rec["gated_fraction"] == 0.0


def test_history_record_keys():
    _, history = run_pipeline(_small_cfg(epochs=2))
    assert len(history.records) == 2
    expected = {"epoch", "loss_cls", "loss_sgmd", "loss_balance", "loss_gcn",
                "loss_total", "gated_fraction", "known", "unknown", "all",
                "n_known", "n_unknown"}
    assert set(history.final()) == expected
    assert history.final()["epoch"] == 1


def test_theta_frozen_without_graph_term():
    short, _ = run_pipeline(_small_cfg(epochs=1, enable_gcn=False))
    long, _ = run_pipeline(_small_cfg(epochs=3, enable_gcn=False))
    assert np.array_equal(short.gcn.theta, long.gcn.theta)
    short_g, _ = run_pipeline(_small_cfg(epochs=1))
    long_g, _ = run_pipeline(_small_cfg(epochs=3))
    assert not np.array_equal(short_g.gcn.theta, long_g.gcn.theta)


def test_unknown_rows_move_only_under_balance_or_graph():
    # with balance and graph off, nothing routes gradient to the
    # unknown-class classifiers, so those rows stay at their propagated init
    ls = 3
    base = dict(enable_lb=False, enable_sgmd=False, enable_gcn=False)
    short, _ = run_pipeline(_small_cfg(epochs=1, **base))
    long, _ = run_pipeline(_small_cfg(epochs=3, **base))
    assert np.array_equal(short.head.weights[ls:], long.head.weights[ls:])
    assert not np.array_equal(short.head.weights[:ls], long.head.weights[:ls])
    short_b, _ = run_pipeline(_small_cfg(epochs=1, enable_sgmd=False,
                                         enable_gcn=False))
    long_b, _ = run_pipeline(_small_cfg(epochs=3, enable_sgmd=False,
                                        enable_gcn=False))
    assert not np.array_equal(short_b.head.weights[ls:],
                              long_b.head.weights[ls:])


def test_training_never_reads_eval_labels():
    cfg = _small_cfg()
    data = synth.generate(cfg.synth)
    source, target, graph, words = data
    rng = make_rng(99)
    corrupted = synth.UnlabeledDataset(
        features=target.features,
        eval_labels=rng.permutation(target.eval_labels),
    )
    s1, h1 = run_pipeline(cfg, data=data)
    s2, h2 = run_pipeline(cfg, data=(source, corrupted, graph, words))
    assert np.array_equal(s1.head.weights, s2.head.weights)
    assert np.array_equal(s1.encoder.weight, s2.encoder.weight)
    assert np.array_equal(s1.gcn.theta, s2.gcn.theta)
    # only the reported accuracies may differ
    assert h1.final()["loss_total"] == h2.final()["loss_total"]


def test_rematch_interval_runs_and_is_deterministic():
    cfg = _small_cfg(rematch_interval=2, epochs=4)
    _, h1 = run_pipeline(cfg)
    _, h2 = run_pipeline(cfg)
    assert h1.records == h2.records


def test_end_to_end_objective_gradient():
    # one joint-loop step rebuilt from the public pieces; every parameter
    # gradient must agree with central differences on the summed objective
    rng = make_rng(0)
    ls, lt, m_in, m, c = 2, 4, 3, 4, 6
    n_nodes = 5
    raw_s = rng.standard_normal((3, m_in))
    labels = np.array([0, 1, 0])
    raw_t = rng.standard_normal((3, m_in))
    raw_mt = rng.standard_normal((3, m_in))
    p_norm = rng.random((n_nodes, n_nodes)) + 0.1
    p_norm /= p_norm.sum(axis=1, keepdims=True)
    words = rng.standard_normal((n_nodes, c))
    class_nodes = [0, 1, 2, 4]
    # tau 0 keeps every pair gated, so the stop-gradient gate is constant
    lw = LossWeights(lambda_d=0.7, lambda_b=0.3, lambda_g=0.9, tau=0.0,
                     w=0.4, epsilon=1e-12)

    def objective(enc_w, enc_b, head_w, theta):
        enc = Encoder(enc_w, enc_b.ravel())
        head = ClassifierHead(head_w, ls)
        params = GcnParams(theta, 0.2)
        components = {}
        f_s = encode(raw_s, enc)
        val, d_f, d_w = _restricted_cls(f_s, head, labels)
        d_ew, d_eb, _ = encode_backward(raw_s, enc, d_f)
        components["cls"] = (val, {"ew": d_ew, "eb": d_eb, "hw": d_w})
        f_t = encode(raw_t, enc)
        val, d_f, d_w = limited_balance_loss(f_t, head, lw.w, lw.epsilon)
        d_ew, d_eb, _ = encode_backward(raw_t, enc, d_f)
        components["balance"] = (val, {"ew": d_ew, "eb": d_eb, "hw": d_w})
        f_ms = encode(raw_s, enc)
        f_mt = encode(raw_mt, enc)
        p_ms = classifier_responses(f_ms, head)
        p_mt = classifier_responses(f_mt, head)
        val, d_fs, d_ft, _ = sgmd_loss(f_ms, f_mt, p_ms, p_mt, lw.tau)
        dw_s, db_s, _ = encode_backward(raw_s, enc, d_fs)
        dw_t, db_t, _ = encode_backward(raw_mt, enc, d_ft)
        components["sgmd"] = (val, {"ew": dw_s + dw_t, "eb": db_s + db_t})
        val, d_theta, d_w_hat = gcn_reg_loss(p_norm, words, params, head_w,
                                             class_nodes)
        components["gcn"] = (val, {"theta": d_theta, "hw": d_w_hat})
        return total_loss(components, lw)

    enc_w = rng.standard_normal((m_in, m))
    enc_b = rng.standard_normal((1, m))
    head_w = rng.standard_normal((lt, m))
    theta = rng.standard_normal((c, m))
    assert float(np.min(np.abs(p_norm @ words @ theta))) > 1e-3
    _, grads = objective(enc_w, enc_b, head_w, theta)
    checks = [
        (lambda v: objective(v, enc_b, head_w, theta)[0], enc_w, grads["ew"]),
        (lambda v: objective(enc_w, v, head_w, theta)[0], enc_b,
         grads["eb"].reshape(1, -1)),
        (lambda v: objective(enc_w, enc_b, v, theta)[0], head_w, grads["hw"]),
        (lambda v: objective(enc_w, enc_b, head_w, v)[0], theta,
         grads["theta"]),
    ]
    for fn, x, analytic in checks:
        assert grad_check(fn, x, analytic, eps=1e-6) <= 1e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    cfg = _small_cfg(learning_rate=1e12, epochs=10)
    with pytest.raises(NonFiniteLossError) as exc:
        run_pipeline(cfg)
    assert exc.value.component in ("cls", "sgmd", "balance", "gcn")


def test_run_ablation_structure():
    results = run_ablation(_small_cfg(epochs=2), seeds=[0, 1])
    assert set(results) == set(ABLATION_VARIANTS)
    for entry in results.values():
        assert entry["seeds"] == 2
        assert len(entry["runs"]) == 2
        for key in ("known", "unknown", "all"):
            assert 0.0 <= entry[f"{key}_mean"] <= 1.0
            assert entry[f"{key}_std"] >= 0.0


def test_run_ablation_single_seed_matches_pipeline():
    cfg = _small_cfg(epochs=2)
    results = run_ablation(cfg, seeds=[cfg.seed])
    _, history = run_pipeline(cfg)
    full = results["lb+sgmd+gcn"]
    assert full["all_mean"] == pytest.approx(history.final()["all"])
    assert full["all_std"] == 0.0


def test_format_ablation_table():
    results = run_ablation(_small_cfg(epochs=1), seeds=[0])
    table = format_ablation_table(results)
    lines = table.strip().splitlines()
    assert len(lines) == 1 + len(ABLATION_VARIANTS)
    for variant in ABLATION_VARIANTS:
        assert any(line.startswith(variant) for line in lines)


def _sym_cfg(**synth_overrides):
    sc = synth.SynthConfig(known_classes=4, total_classes=4, input_dim=6,
                           word_dim=12, source_per_class=10,
                           target_per_class=10, seed=0, **synth_overrides)
    return ExperimentConfig(synth=sc, pretrain=PretrainSchedule(epochs=3),
                            feature_dim=5, epochs=3, batch_size=8, folds=2,
                            seed=0, enable_lb=False, enable_gcn=False)


def test_da_mode_returns_both_accuracies():
    out = run_da_mode(_sym_cfg())
    assert set(out) == {"source_only", "sgmd"}
    for v in out.values():
        assert 0.0 <= v <= 1.0


def test_da_mode_closed_gate_matches_source_only():
    from dataclasses import replace
    cfg = replace(_sym_cfg(), loss_weights=LossWeights(tau=1.0))
    out = run_da_mode(cfg)
    assert out["sgmd"] == out["source_only"]


def test_da_mode_rejects_open_set_config():
    with pytest.raises(ConfigError):
        run_da_mode(_small_cfg(enable_lb=False, enable_gcn=False))
