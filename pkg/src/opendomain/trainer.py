"""End-to-end training: source pretrain, graph-propagated classifier init,
cross-domain matching, then the joint loop that mixes the four loss terms,
plus the ablation and symmetric-adaptation runners.

Source cross-entropy is computed over the known-class rows only, so the
unknown-class classifiers move exclusively under the balance constraint and
the graph regularizer (the known rows get both the supervised signal and the
regularizer). Training never reads the target eval labels; per-epoch
evaluation goes through the separate evaluate module and feeds nothing back.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import synth
from .evaluate import accuracy_triple, predict
from .gcn import GcnParams, GcnSchedule, gcn_reg_loss, train_gcn_init
from .graph import normalized_adjacency
from .losses import (
    ClassifierHead,
    LossWeights,
    balance_loss_vanilla,
    classifier_responses,
    cls_loss,
    limited_balance_loss,
    sgmd_loss,
    total_loss,
)
from .matching import match_domains
from .model import (
    Encoder,
    ModelState,
    PretrainSchedule,
    config_hash,
    encode,
    encode_backward,
    init_head_from_gcn,
    pretrain_source,
)
from .numkit import make_rng

__all__ = [
    "ConfigError",
    "NonFiniteLossError",
    "ExperimentConfig",
    "TrainHistory",
    "parse_config",
    "config_to_text",
    "run_pipeline",
    "run_ablation",
    "run_da_mode",
    "ABLATION_VARIANTS",
    "format_ablation_table",
]


class ConfigError(ValueError):
    """Bad experiment configuration (unknown key, missing key, bad value)."""


class NonFiniteLossError(RuntimeError):
    """A loss term went NaN/Inf; carries the offending component name."""

    def __init__(self, component: str, value: float):
        super().__init__(f"non-finite loss in component '{component}' ({value})")
        self.component = component


@dataclass(frozen=True)
class ExperimentConfig:
    synth: synth.SynthConfig = field(default_factory=synth.SynthConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    pretrain: PretrainSchedule = field(default_factory=PretrainSchedule)
    gcn_schedule: GcnSchedule = field(default_factory=GcnSchedule)
    activation_slope: float = 0.2
    feature_dim: int = 16
    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 40
    batch_size: int = 32
    folds: int = 5
    rematch_interval: int = 0
    seed: int = 0
    enable_lb: bool = True
    enable_sgmd: bool = True
    enable_gcn: bool = True
    vanilla_balance: bool = False

    def __post_init__(self):
        if self.enable_lb and self.vanilla_balance:
            raise ConfigError("enable_lb and vanilla_balance are mutually exclusive")
        for name in ("feature_dim", "epochs", "batch_size", "folds"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.learning_rate <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError("learning_rate must be > 0 and momentum in [0, 1)")
        if self.rematch_interval < 0:
            raise ConfigError("rematch_interval must be >= 0")
        if self.synth.known_classes == self.synth.total_classes:
            if self.enable_lb or self.vanilla_balance or self.enable_gcn:
                raise ConfigError(
                    "balance and graph terms require unknown classes; "
                    "disable them when known == total"
                )


def _variant_flags(name: str) -> dict:
    table = {
        "baseline": dict(enable_lb=False, enable_sgmd=False, enable_gcn=False,
                         vanilla_balance=False),
        "lb": dict(enable_lb=True, enable_sgmd=False, enable_gcn=False,
                   vanilla_balance=False),
        "lb+sgmd": dict(enable_lb=True, enable_sgmd=True, enable_gcn=False,
                        vanilla_balance=False),
        "lb+sgmd+gcn": dict(enable_lb=True, enable_sgmd=True, enable_gcn=True,
                            vanilla_balance=False),
        "vanilla-balance": dict(enable_lb=False, enable_sgmd=False,
                                enable_gcn=False, vanilla_balance=True),
    }
    if name not in table:
        raise ConfigError(f"unknown variant '{name}'")
    return table[name]


ABLATION_VARIANTS = ("baseline", "lb", "lb+sgmd", "lb+sgmd+gcn", "vanilla-balance")


# ------------------------------------------------------------------ config IO

_SYNTH_KEYS = {
    "known_classes": int, "total_classes": int, "input_dim": int,
    "word_dim": int, "source_per_class": int, "target_per_class": int,
    "branching": int, "step": float, "noise": float, "word_noise": float,
    "rotation_angle": float, "translation_scale": float, "seed": int,
}
_LOSS_KEYS = {
    "lambda_d": float, "lambda_b": float, "lambda_g": float,
    "tau": float, "w": float, "epsilon": float,
}
_PRETRAIN_KEYS = {
    "learning_rate": float, "momentum": float, "epochs": int, "batch_size": int,
}
_GCN_KEYS = {
    "learning_rate": float, "momentum": float, "steps": int,
    "init_scale": float, "slope": float,
}
_TRAIN_KEYS = {
    "feature_dim": int, "learning_rate": float, "momentum": float,
    "epochs": int, "batch_size": int, "folds": int,
    "rematch_interval": int, "seed": int,
}
_FLAG_KEYS = {
    "enable_lb": bool, "enable_sgmd": bool, "enable_gcn": bool,
    "vanilla_balance": bool,
}


def _parse_value(raw: str, kind, key: str):
    try:
        if kind is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse the flat `section.key = value` config format.

    Unknown keys are errors. Every key is optional except ``train.seed``
    and ``synth.seed``, which pin the experiment. ``loss.w`` defaults to
    the proportion of unknown classes.
    """
    sections = {"synth": _SYNTH_KEYS, "loss": _LOSS_KEYS,
                "pretrain": _PRETRAIN_KEYS, "gcn": _GCN_KEYS,
                "train": _TRAIN_KEYS, "flags": _FLAG_KEYS}
    values: dict = {name: {} for name in sections}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if "." not in key:
            raise ConfigError(f"line {lineno}: key {key!r} missing section")
        section, _, name = key.partition(".")
        if section not in sections or name not in sections[section]:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if name in values[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[section][name] = _parse_value(val, sections[section][name], key)

    for required in ("train.seed", "synth.seed"):
        section, _, name = required.partition(".")
        if name not in values[section]:
            raise ConfigError(f"missing required key: {required}")

    synth_cfg = synth.SynthConfig(**values["synth"])
    loss_vals = dict(values["loss"])
    if "w" not in loss_vals:
        unknown = synth_cfg.total_classes - synth_cfg.known_classes
        loss_vals["w"] = unknown / synth_cfg.total_classes if unknown else 0.5
    gcn_vals = dict(values["gcn"])
    slope = gcn_vals.pop("slope", 0.2)
    train_vals = dict(values["train"])
    try:
        return ExperimentConfig(
            synth=synth_cfg,
            loss_weights=LossWeights(**loss_vals),
            pretrain=PretrainSchedule(**values["pretrain"]),
            gcn_schedule=GcnSchedule(**gcn_vals),
            activation_slope=slope,
            **train_vals,
            **values["flags"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_text(cfg: ExperimentConfig) -> str:
    """Canonical flat text form; parse_config round-trips it."""
    lines = []
    for name in sorted(_SYNTH_KEYS):
        lines.append(f"synth.{name} = {getattr(cfg.synth, name)}")
    for name in sorted(_LOSS_KEYS):
        lines.append(f"loss.{name} = {getattr(cfg.loss_weights, name)}")
    for name in sorted(_PRETRAIN_KEYS):
        lines.append(f"pretrain.{name} = {getattr(cfg.pretrain, name)}")
    for name in sorted(_GCN_KEYS):
        if name == "slope":
            lines.append(f"gcn.slope = {cfg.activation_slope}")
        else:
            lines.append(f"gcn.{name} = {getattr(cfg.gcn_schedule, name)}")
    for name in sorted(_TRAIN_KEYS):
        lines.append(f"train.{name} = {getattr(cfg, name)}")
    for name in sorted(_FLAG_KEYS):
        lines.append(f"flags.{name} = {getattr(cfg, name)}")
    return "\n".join(lines) + "\n"


def experiment_hash(cfg: ExperimentConfig) -> str:
    return config_hash(config_to_text(cfg))


# --------------------------------------------------------------- train loop

@dataclass
class TrainHistory:
    """One record per epoch: loss component means, the fraction of matched
    pairs passing the similarity gate, and the accuracy triple."""

    records: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps({"epochs": self.records}, indent=2, sort_keys=True)

    def final(self) -> dict:
        return self.records[-1]


class _MomentumSgd:
    def __init__(self, params: dict, lr: float, momentum: float):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        for name in self.params:
            g = grads.get(name)
            if g is None:
                continue
            self.velocity[name] = self.momentum * self.velocity[name] + g
            self.params[name] -= self.lr * self.velocity[name]


def _check_finite(name: str, value: float, grads: dict) -> None:
    if not math.isfinite(value):
        raise NonFiniteLossError(name, value)
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLossError(name, float("nan"))


def _restricted_cls(f_src, head: ClassifierHead, labels):
    """Source cross-entropy over the known-class rows only; the returned
    head-weight gradient is zero on the unknown rows."""
    known = ClassifierHead(weights=head.weights[: head.known_count],
                           known_count=head.known_count)
    loss, d_f, d_w_known = cls_loss(f_src, known, labels)
    d_w = np.zeros_like(head.weights)
    d_w[: head.known_count] = d_w_known
    return loss, d_f, d_w


def _target_order(rng, n_target: int, needed: int) -> np.ndarray:
    reps = max(1, math.ceil(needed / n_target))
    chunks = [rng.permutation(n_target) for _ in range(reps)]
    return np.concatenate(chunks)[:needed]


def run_pipeline(cfg: ExperimentConfig, data=None):
    """Execute the staged pipeline and the joint loop.

    ``data`` is an optional (source, target, graph, word_vectors) tuple;
    when omitted the synthetic benchmark from cfg.synth is generated.
    Returns (ModelState, TrainHistory).
    """
    if data is None:
        data = synth.generate(cfg.synth)
    source, target, graph, word_vectors = data
    l_s = cfg.synth.known_classes
    l_t = cfg.synth.total_classes

    streams = np.random.SeedSequence(cfg.seed).spawn(4)
    rng_pre = make_rng(streams[0])
    rng_gcn = make_rng(streams[1])
    rng_match = make_rng(streams[2])
    rng_joint = make_rng(streams[3])

    enc, w_src, _ = pretrain_source(source.features, source.labels, l_s,
                                    cfg.feature_dim, cfg.pretrain, rng_pre)
    if graph is not None:
        schedule = cfg.gcn_schedule
        gcn_params, embeddings, _ = train_gcn_init(
            graph, word_vectors, w_src, schedule, rng_gcn)
        gcn_params.activation_slope = cfg.activation_slope
        head = init_head_from_gcn(embeddings, l_s)
        p_norm = normalized_adjacency(graph)
        class_nodes = list(graph.class_to_node)
    else:
        # symmetric label space: no propagation target, head starts at the
        # pretrained classifier
        if l_s != l_t:
            raise ConfigError("a taxonomy graph is required when unknown classes exist")
        gcn_params = GcnParams(theta=np.zeros((word_vectors.shape[1], cfg.feature_dim)),
                               activation_slope=cfg.activation_slope)
        head = ClassifierHead(weights=w_src.copy(), known_count=l_s)
        p_norm = None
        class_nodes = None
    state = ModelState(encoder=enc, head=head, gcn=gcn_params)

    def compute_matching():
        fs = encode(source.features, enc)
        ft = encode(target.features, enc)
        return match_domains(fs, ft, cfg.folds, rng_match)

    pairs = compute_matching()
    pair_for_src = {s: t for s, t in pairs.pairs}

    params = {
        "encoder.weight": enc.weight,
        "encoder.bias": enc.bias,
        "head.weights": head.weights,
    }
    if cfg.enable_gcn:
        params["gcn.theta"] = gcn_params.theta
    opt = _MomentumSgd(params, cfg.learning_rate, cfg.momentum)

    lw = cfg.loss_weights
    use_balance = cfg.enable_lb or cfg.vanilla_balance
    n_src = source.n
    history = TrainHistory()

    for epoch in range(cfg.epochs):
        if cfg.rematch_interval > 0 and epoch > 0 and epoch % cfg.rematch_interval == 0:
            pairs = compute_matching()
            pair_for_src = {s: t for s, t in pairs.pairs}
        order_src = rng_joint.permutation(n_src)
        order_tgt = _target_order(rng_joint, target.n, n_src)
        sums = {"cls": 0.0, "sgmd": 0.0, "balance": 0.0, "gcn": 0.0, "total": 0.0}
        gated = 0
        considered = 0
        steps = 0
        for start in range(0, n_src, cfg.batch_size):
            src_idx = order_src[start:start + cfg.batch_size]
            tgt_idx = order_tgt[start:start + cfg.batch_size]
            components = {}

            raw_s = source.features[src_idx]
            f_s = encode(raw_s, enc)
            val, d_f, d_w = _restricted_cls(f_s, head, source.labels[src_idx])
            d_ew, d_eb, _ = encode_backward(raw_s, enc, d_f)
            components["cls"] = (val, {"encoder.weight": d_ew,
                                       "encoder.bias": d_eb,
                                       "head.weights": d_w})

            if use_balance:
                raw_t = target.features[tgt_idx]
                f_t = encode(raw_t, enc)
                if cfg.vanilla_balance:
                    val, d_f, d_w = balance_loss_vanilla(f_t, head, lw.epsilon)
                else:
                    val, d_f, d_w = limited_balance_loss(f_t, head, lw.w, lw.epsilon)
                d_ew, d_eb, _ = encode_backward(raw_t, enc, d_f)
                components["balance"] = (val, {"encoder.weight": d_ew,
                                               "encoder.bias": d_eb,
                                               "head.weights": d_w})

            if cfg.enable_sgmd:
                batch_pairs = [(s, pair_for_src[s]) for s in src_idx.tolist()
                               if s in pair_for_src]
                if batch_pairs:
                    s_ids = np.array([s for s, _ in batch_pairs])
                    t_ids = np.array([t for _, t in batch_pairs])
                    raw_ms = source.features[s_ids]
                    raw_mt = target.features[t_ids]
                    f_ms = encode(raw_ms, enc)
                    f_mt = encode(raw_mt, enc)
                    # responses only gate the pairs; no gradient flows here
                    p_ms = classifier_responses(f_ms, head)
                    p_mt = classifier_responses(f_mt, head)
                    val, d_fs, d_ft, gate = sgmd_loss(f_ms, f_mt, p_ms, p_mt, lw.tau)
                    considered += len(batch_pairs)
                    gated += int(gate.sum())
                    if gate.any():
                        dw_s, db_s, _ = encode_backward(raw_ms, enc, d_fs)
                        dw_t, db_t, _ = encode_backward(raw_mt, enc, d_ft)
                        components["sgmd"] = (val, {
                            "encoder.weight": dw_s + dw_t,
                            "encoder.bias": db_s + db_t,
                        })

            if cfg.enable_gcn:
                val, d_theta, d_w_hat = gcn_reg_loss(
                    p_norm, word_vectors, gcn_params, head.weights, class_nodes)
                components["gcn"] = (val, {"gcn.theta": d_theta,
                                           "head.weights": d_w_hat})

            for name, (val, grads) in components.items():
                _check_finite(name, val, grads)
                sums[name] += val
            total, merged = total_loss(components, lw)
            sums["total"] += total
            opt.step(merged)
            steps += 1

        preds = predict(state, target.features)
        triple = accuracy_triple(preds, target.eval_labels, l_s)
        record = {
            "epoch": epoch,
            "loss_cls": sums["cls"] / steps,
            "loss_sgmd": sums["sgmd"] / steps,
            "loss_balance": sums["balance"] / steps,
            "loss_gcn": sums["gcn"] / steps,
            "loss_total": sums["total"] / steps,
            "gated_fraction": gated / considered if considered else 0.0,
        }
        record.update(triple.as_dict())
        history.records.append(record)
    return state, history


# ----------------------------------------------------------------- runners

def run_ablation(base: ExperimentConfig, seeds, data=None):
    """Train the five canonical variants per seed and aggregate the final
    accuracy triples into means and standard deviations.

    With ``data`` given, the dataset is held fixed and only the training
    seed varies; otherwise each seed regenerates the synthetic benchmark.
    """
    results = {}
    for variant in ABLATION_VARIANTS:
        flags = _variant_flags(variant)
        runs = []
        for seed in seeds:
            if data is None:
                cfg = replace(base, seed=int(seed),
                              synth=replace(base.synth, seed=int(seed)), **flags)
            else:
                cfg = replace(base, seed=int(seed), **flags)
            _, history = run_pipeline(cfg, data=data)
            final = history.final()
            runs.append({k: final[k] for k in ("known", "unknown", "all")})
        entry = {"seeds": len(runs), "runs": runs}
        for key in ("known", "unknown", "all"):
            vals = np.array([r[key] for r in runs])
            entry[f"{key}_mean"] = float(vals.mean())
            entry[f"{key}_std"] = float(vals.std())
        results[variant] = entry
    return results


def format_ablation_table(results: dict) -> str:
    lines = [f"{'variant':<16} {'known':>14} {'unknown':>14} {'all':>14} {'seeds':>6}"]
    for variant in ABLATION_VARIANTS:
        e = results[variant]
        cells = [
            f"{e[k + '_mean']:.3f}±{e[k + '_std']:.3f}"
            for k in ("known", "unknown", "all")
        ]
        lines.append(f"{variant:<16} {cells[0]:>14} {cells[1]:>14} {cells[2]:>14} "
                     f"{e['seeds']:>6}")
    return "\n".join(lines) + "\n"


def run_da_mode(cfg: ExperimentConfig):
    """Symmetric-label-space comparison: source-only training versus
    training with the matched-pair discrepancy term added. Balance and
    graph terms stay off. Returns both target accuracies."""
    if cfg.synth.known_classes != cfg.synth.total_classes:
        raise ConfigError("run_da_mode requires known_classes == total_classes")
    base = replace(cfg, enable_lb=False, enable_gcn=False, vanilla_balance=False)
    data = synth.generate(cfg.synth)
    out = {}
    for name, flag in (("source_only", False), ("sgmd", True)):
        variant = replace(base, enable_sgmd=flag)
        _, history = run_pipeline(variant, data=data)
        out[name] = history.final()["all"]
    return out
