"""Command line front end for the admission simulation pipeline.

Each subcommand reads a versioned JSON run configuration, consumes the
artifacts of earlier stages from the run directory, writes its own
artifacts plus a manifest, and exits 0 on success, 1 on a configuration
error, 2 on a missing upstream artifact (named on stderr), or 3 on a
numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import os
import platform
import sys

import numpy as np

from . import __version__
from .cohort import (
    ApplicationEvent,
    Cohort,
    GeneratorConfig,
    Student,
    generate_cohort,
    load_cohort,
    save_cohort,
    temporal_split,
    validation_split,
)
from .econ import (
    DEFAULT_OVERRIDE_RATE,
    graduate_revenue,
    mvpf,
    override_cost,
    scenario_grid,
    taximeter_value,
    write_scenario_csv,
)
from .explain import saliency_profile
from .fairness import audit_attribute, weighted_abroca
from .matching import Applicant, MatchInstance, ProgramSeats, check_stability, david_q_match
from .models.adapters import build_risk_table
from .models.features import FeatureSchema, featurize, fit_feature_schema
from .models.gbt import GBTModel, _Tree, train_gbt
from .models.logreg import LogisticModel, train_logreg
from .models.search import random_search_cv
from .models.sequence import (
    LSTMClassifier,
    LSTMConfig,
    TransformerClassifier,
    TransformerConfig,
    load_checkpoint,
    save_checkpoint,
    train_sequence_model,
)
from .models.sequence import predict_proba as sequence_predict_proba
from .policy import auc_se, contraction_counterfactual, contraction_curve, score_outcome_correlations
from .risk import RiskTable
from .seqenc import (
    VARIANTS,
    TokenSequenceBatch,
    build_vocabulary,
    compute_L,
    encode_cohort,
    fit_binning_rules,
    sequence_lengths,
)

__all__ = ["ConfigError", "MissingArtifact", "load_config", "config_hash", "main"]


class ConfigError(Exception):
    """The run configuration or command line is invalid."""


class MissingArtifact(Exception):
    """A required input artifact has not been produced yet."""

    def __init__(self, path: str, producer: str) -> None:
        super().__init__(f"missing artifact: {path}; run `admitsim {producer}` first")
        self.path = path
        self.producer = producer


SPLITS = ("train", "val", "test")
TABULAR = ("logreg", "gbt")
SEQUENTIAL = ("transformer", "lstm")
GROUPINGS = ("within_program", "per_field", "ungrouped")
BASELINES = ("gpa", "human")
ATTRIBUTES = ("female", "danish_origin", "ses_high")

COHORT_FILE = "cohort.jsonl"
SPLITS_FILE = "splits.json"
VOCAB_FILE = "vocab.json"
BINNING_FILE = "binning.json"
ENCODE_META_FILE = "encode_meta.json"
MODEL_BIN_FILE = "model.bin"
MODEL_JSON_FILE = "model.json"
SCHEMA_FILE = "feature_schema.json"
HISTORY_FILE = "training_history.json"
SEARCH_LOG_FILE = "search_log.csv"
AUC_FILE = "auc.csv"
CORRELATIONS_FILE = "correlations.csv"
CURVE_FILE = "contraction_curve.csv"
COUNTERFACTUAL_FILE = "contraction_counterfactual.csv"
FAIRNESS_FILE = "fairness_tests.csv"
ABROCA_FILE = "abroca.csv"
SALIENCY_POSITIONS_FILE = "saliency_positions.csv"
SALIENCY_CHANNELS_FILE = "saliency_channels.csv"
MATCHES_FILE = "matches.csv"
ECON_SCENARIOS_FILE = "econ_scenarios.csv"
ECON_HEADLINE_FILE = "econ_headline.csv"
REPORT_DIR = "report"


def _batch_file(split: str) -> str:
    return f"{split}.aseq"


def _predictions_file(split: str) -> str:
    return f"predictions_{split}.csv"


def _risk_file(split: str) -> str:
    return f"risk_{split}.csv"


# ---------------------------------------------------------------------------
# run configuration


_MODEL_PARAM_KEYS = {
    "logreg": {"C", "penalty", "l1_ratio", "tol", "max_iter"},
    "gbt": {
        "n_estimators",
        "learning_rate",
        "max_depth",
        "subsample",
        "colsample_bytree",
        "reg_lambda",
        "reg_alpha",
    },
    "transformer": {"n_layers", "hidden", "n_heads", "ff_hidden", "dropout"},
    "lstm": {"n_layers", "hidden", "dropout"},
}

_DEFAULTS: dict = {
    "version": 1,
    "seed": 0,
    "out_dir": ".",
    "float64": False,
    "variant": "everything",
    "min_count": 250,
    "holdout_year": None,
    "val_fraction": 0.05,
    "cohort": {},
    "model": {"family": "logreg", "params": {}, "search": None},
    "training": {
        "epochs": 10,
        "batch_size": None,
        "peak_lr": 5e-4,
        "warmup": 100,
        "patience": 3,
        "weight_decay": 0.01,
    },
    "evaluation": {
        "fractions": [0.10],
        "groupings": list(GROUPINGS),
        "n_bins": 10,
        "baselines": list(BASELINES),
    },
    "fairness": {"attributes": list(ATTRIBUTES), "alpha": 0.05},
    "econ": {
        "revenues": [0.0, 31_280_000.0, 86_710_000.0],
        "fixed_costs": [0.0, 10_000_000.0],
        "variable_costs": [0.0, 15_607_800.0],
        "delays": [0, 5],
        "extra_graduates": [377.0, 136.0],
        "n_overridden": [341.0, 36.0],
        "override_rate": DEFAULT_OVERRIDE_RATE,
        "taximeter": [
            {"yearly_rate_dkk": 44_000.0, "completion_bonus_dkk": 21_000.0, "years": 3},
            {"yearly_rate_dkk": 92_400.0, "completion_bonus_dkk": 49_900.0, "years": 3},
        ],
        "mvpf": None,
    },
    "explain": {"n_sequences": 100},
    "match": {"year": None},
}


def _fail(msg: str) -> None:
    raise ConfigError(msg)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _check_keys(section: str, got: dict, allowed) -> None:
    if not isinstance(got, dict):
        _fail(f"{section} must be an object")
    unknown = sorted(set(got) - set(allowed))
    if unknown:
        _fail(f"unknown {section} key(s): {', '.join(unknown)}")


def _check_int(section: str, name: str, v, lo=None) -> None:
    if not isinstance(v, int) or isinstance(v, bool):
        _fail(f"{section}.{name} must be an integer")
    if lo is not None and v < lo:
        _fail(f"{section}.{name} must be >= {lo}")


def _check_num_list(section: str, name: str, v) -> None:
    if not isinstance(v, list) or not v or not all(_is_num(x) for x in v):
        _fail(f"{section}.{name} must be a non-empty list of numbers")


def _merged(defaults: dict, given: dict) -> dict:
    out = dict(defaults)
    out.update(given)
    return out


def _validate(raw: dict) -> dict:
    _check_keys("config", raw, _DEFAULTS)
    if raw.get("version") != 1:
        _fail("config must declare version: 1")
    cfg = {k: raw.get(k, v) for k, v in _DEFAULTS.items()}
    for key in ("cohort", "model", "training", "evaluation", "fairness", "econ", "explain", "match"):
        _check_keys(key, cfg[key], _DEFAULTS[key] if key != "cohort" else _COHORT_KEYS)
        if key != "cohort":
            cfg[key] = _merged(_DEFAULTS[key], cfg[key])

    _check_int("config", "seed", cfg["seed"], lo=0)
    if not isinstance(cfg["out_dir"], str):
        _fail("config.out_dir must be a string")
    if not isinstance(cfg["float64"], bool):
        _fail("config.float64 must be a boolean")
    if cfg["variant"] not in VARIANTS:
        _fail(f"config.variant must be one of: {', '.join(sorted(VARIANTS))}")
    _check_int("config", "min_count", cfg["min_count"], lo=1)
    if cfg["holdout_year"] is not None:
        _check_int("config", "holdout_year", cfg["holdout_year"])
    if not _is_num(cfg["val_fraction"]) or not 0.0 < cfg["val_fraction"] < 1.0:
        _fail("config.val_fraction must lie in (0, 1)")

    try:
        GeneratorConfig(**cfg["cohort"])
    except (TypeError, ValueError) as exc:
        _fail(f"config.cohort is invalid: {exc}")

    model = cfg["model"]
    if model["family"] not in _MODEL_PARAM_KEYS:
        _fail(f"model.family must be one of: {', '.join(_MODEL_PARAM_KEYS)}")
    _check_keys("model.params", model["params"], _MODEL_PARAM_KEYS[model["family"]])
    search = model["search"]
    if search is not None:
        if model["family"] not in TABULAR:
            _fail("model.search is only supported for logreg and gbt")
        _check_keys("model.search", search, {"n_candidates", "k_folds"})
        search = _merged({"n_candidates": 30, "k_folds": 3}, search)
        _check_int("model.search", "n_candidates", search["n_candidates"], lo=1)
        _check_int("model.search", "k_folds", search["k_folds"], lo=2)
        model["search"] = search

    tr = cfg["training"]
    _check_int("training", "epochs", tr["epochs"], lo=1)
    if tr["batch_size"] is not None:
        _check_int("training", "batch_size", tr["batch_size"], lo=1)
    if not _is_num(tr["peak_lr"]) or tr["peak_lr"] <= 0:
        _fail("training.peak_lr must be positive")
    _check_int("training", "warmup", tr["warmup"], lo=0)
    _check_int("training", "patience", tr["patience"], lo=1)
    if not _is_num(tr["weight_decay"]) or tr["weight_decay"] < 0:
        _fail("training.weight_decay must be non-negative")

    ev = cfg["evaluation"]
    _check_num_list("evaluation", "fractions", ev["fractions"])
    if not all(0.0 < f < 1.0 for f in ev["fractions"]):
        _fail("evaluation.fractions must lie in (0, 1)")
    if not ev["groupings"] or any(g not in GROUPINGS for g in ev["groupings"]):
        _fail(f"evaluation.groupings must be drawn from: {', '.join(GROUPINGS)}")
    _check_int("evaluation", "n_bins", ev["n_bins"], lo=2)
    if not ev["baselines"] or any(b not in BASELINES for b in ev["baselines"]):
        _fail(f"evaluation.baselines must be drawn from: {', '.join(BASELINES)}")

    fa = cfg["fairness"]
    if not fa["attributes"] or any(a not in ATTRIBUTES for a in fa["attributes"]):
        _fail(f"fairness.attributes must be drawn from: {', '.join(ATTRIBUTES)}")
    if not _is_num(fa["alpha"]) or not 0.0 < fa["alpha"] < 1.0:
        _fail("fairness.alpha must lie in (0, 1)")

    ec = cfg["econ"]
    for name in ("revenues", "fixed_costs", "variable_costs", "extra_graduates", "n_overridden"):
        _check_num_list("econ", name, ec[name])
    if not isinstance(ec["delays"], list) or not ec["delays"]:
        _fail("econ.delays must be a non-empty list of integers")
    for d in ec["delays"]:
        _check_int("econ", "delays", d, lo=0)
    if not _is_num(ec["override_rate"]) or not 0.0 <= ec["override_rate"] <= 1.0:
        _fail("econ.override_rate must lie in [0, 1]")
    if not isinstance(ec["taximeter"], list):
        _fail("econ.taximeter must be a list of objects")
    for entry in ec["taximeter"]:
        _check_keys("econ.taximeter", entry, {"yearly_rate_dkk", "completion_bonus_dkk", "years"})
        entry.setdefault("years", 3)
        if not _is_num(entry.get("yearly_rate_dkk")) or not _is_num(entry.get("completion_bonus_dkk")):
            _fail("econ.taximeter entries need numeric yearly_rate_dkk and completion_bonus_dkk")
        _check_int("econ.taximeter", "years", entry["years"], lo=0)
    if ec["mvpf"] is not None:
        _check_keys("econ.mvpf", ec["mvpf"], {"delta_welfare", "net_govt_cost"})
        if not _is_num(ec["mvpf"].get("delta_welfare")) or not _is_num(ec["mvpf"].get("net_govt_cost")):
            _fail("econ.mvpf needs numeric delta_welfare and net_govt_cost")

    _check_int("explain", "n_sequences", cfg["explain"]["n_sequences"], lo=1)
    if cfg["match"]["year"] is not None:
        _check_int("match", "year", cfg["match"]["year"])
    return cfg


_COHORT_KEYS = {f.name for f in dataclasses.fields(GeneratorConfig)}


def load_config(path: str, seed: int | None = None, out_dir: str | None = None) -> dict:
    """Load, validate, and resolve a run configuration file.

    ``seed`` and ``out_dir`` override the corresponding config entries.
    """
    if not os.path.exists(path):
        _fail(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            _fail(f"config is not valid JSON: {exc}")
    if not isinstance(raw, dict):
        _fail("config must be a JSON object")
    cfg = _validate(raw)
    if seed is not None:
        if seed < 0:
            _fail("seed must be non-negative")
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    return cfg


def config_hash(cfg: dict) -> str:
    """Digest of the resolved configuration, ignoring the output directory."""
    hashed = {k: v for k, v in cfg.items() if k != "out_dir"}
    text = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# artifact plumbing


def _g(v) -> str:
    return format(float(v), ".17g")


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _require(out: str, name: str, producer: str) -> str:
    path = os.path.join(out, name)
    if not os.path.exists(path):
        raise MissingArtifact(name, producer)
    return path


def _dump_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_json(path: str):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _open_csv(path: str):
    fh = open(path, "w", encoding="utf-8", newline="")
    return fh, csv.writer(fh, lineterminator="\n")


def _write_manifest(out: str, command: str, cfg: dict, jobs: int, inputs, outputs, notes=None) -> str:
    manifest = {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": cfg["seed"],
        "jobs": jobs,
        "versions": {
            "admitsim": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "inputs": {name: _sha256(os.path.join(out, name)) for name in sorted(inputs)},
        "outputs": {name: _sha256(os.path.join(out, name)) for name in sorted(outputs)},
    }
    if notes:
        manifest["notes"] = list(notes)
    path = os.path.join(out, f"manifest_{command}.json")
    _dump_json(path, manifest)
    return path


def _ensure_out(cfg: dict) -> str:
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _load_splits(out: str) -> dict[str, list[str]]:
    return _load_json(_require(out, SPLITS_FILE, "encode"))


def _split_students(cohort: Cohort, ids: list[str]) -> list[Student]:
    by_id = {s.id: s for s in cohort.students}
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise ValueError(f"split references unknown student id {missing[0]}")
    return [by_id[i] for i in ids]


def _check_finite(arr, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{what} contain non-finite values")


# ---------------------------------------------------------------------------
# model persistence for the tabular families


def _save_tabular(path: str, family: str, model) -> None:
    if family == "logreg":
        payload = {
            "family": "logreg",
            "weights": model.weights.tolist(),
            "intercept": float(model.intercept),
            "medians": model.medians.tolist(),
            "mu": model.mu.tolist(),
            "sd": model.sd.tolist(),
            "converged": bool(model.converged),
            "n_iter": int(model.n_iter),
        }
    else:
        payload = {
            "family": "gbt",
            "base_margin": float(model.base_margin),
            "n_features": int(model.n_features),
            "trees": [
                {
                    "feature": t.feature.tolist(),
                    "threshold": t.threshold.tolist(),
                    "nan_left": t.nan_left.astype(int).tolist(),
                    "left": t.left.tolist(),
                    "right": t.right.tolist(),
                    "value": t.value.tolist(),
                    "depth": int(t.depth),
                }
                for t in model.trees
            ],
        }
    _dump_json(path, payload)


def _load_tabular(path: str):
    payload = _load_json(path)
    family = payload.get("family")
    if family == "logreg":
        return family, LogisticModel(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            intercept=float(payload["intercept"]),
            medians=np.asarray(payload["medians"], dtype=np.float64),
            mu=np.asarray(payload["mu"], dtype=np.float64),
            sd=np.asarray(payload["sd"], dtype=np.float64),
            converged=bool(payload["converged"]),
            n_iter=int(payload["n_iter"]),
        )
    if family == "gbt":
        trees = [
            _Tree(
                feature=np.asarray(t["feature"], dtype=np.int64),
                threshold=np.asarray(t["threshold"], dtype=np.float64),
                nan_left=np.asarray(t["nan_left"], dtype=bool),
                left=np.asarray(t["left"], dtype=np.int64),
                right=np.asarray(t["right"], dtype=np.int64),
                value=np.asarray(t["value"], dtype=np.float64),
                depth=int(t["depth"]),
            )
            for t in payload["trees"]
        ]
        return family, GBTModel(
            trees=trees,
            base_margin=float(payload["base_margin"]),
            n_features=int(payload["n_features"]),
        )
    raise ValueError(f"unsupported model file family: {family!r}")


def _save_schema(path: str, schema: FeatureSchema) -> None:
    _dump_json(
        path,
        {
            "variant": schema.variant,
            "expand_ordinals": schema.expand_ordinals,
            "continuous": list(schema.continuous),
            "binary": list(schema.binary),
            "ordinals": {k: list(v) for k, v in schema.ordinals.items()},
            "nominals": {k: list(v) for k, v in schema.nominals.items()},
        },
    )


def _load_schema(path: str) -> FeatureSchema:
    payload = _load_json(path)
    return FeatureSchema(
        variant=payload["variant"],
        expand_ordinals=bool(payload["expand_ordinals"]),
        continuous=tuple(payload["continuous"]),
        binary=tuple(payload["binary"]),
        ordinals={k: tuple(v) for k, v in payload["ordinals"].items()},
        nominals={k: tuple(v) for k, v in payload["nominals"].items()},
    )


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    try:
        gen_cfg = GeneratorConfig(**cfg["cohort"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config.cohort is invalid: {exc}") from exc
    cohort = generate_cohort(gen_cfg, cfg["seed"])
    save_cohort(cohort, os.path.join(out, COHORT_FILE))
    _write_manifest(out, "generate", cfg, args.jobs, inputs=[], outputs=[COHORT_FILE])
    print(f"generated {len(cohort)} students across {len(cohort.programs)} programs")
    return 0


def cmd_encode(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    cohort = load_cohort(_require(out, COHORT_FILE, "generate"))
    train_all, test = temporal_split(cohort, cfg["holdout_year"])
    train, val = validation_split(train_all, cfg["val_fraction"], cfg["seed"])

    _dump_json(
        os.path.join(out, SPLITS_FILE),
        {name: [s.id for s in part.students] for name, part in (("train", train), ("val", val), ("test", test))},
    )

    rules = fit_binning_rules(train)
    _dump_json(
        os.path.join(out, BINNING_FILE),
        {name: {"lo": r.lo, "hi": r.hi, "cuts": list(r.cuts)} for name, r in rules.items()},
    )
    vocab = build_vocabulary(train, cfg["variant"], min_count=cfg["min_count"], rules=rules)
    with open(os.path.join(out, VOCAB_FILE), "w", encoding="utf-8") as fh:
        fh.write(vocab.to_json())
    length = compute_L(sequence_lengths(train, cfg["variant"], rules))

    outputs = [SPLITS_FILE, BINNING_FILE, VOCAB_FILE, ENCODE_META_FILE]
    counts = {}
    for name, part in (("train", train), ("val", val), ("test", test)):
        batch = encode_cohort(part, vocab, rules, length)
        batch.save(os.path.join(out, _batch_file(name)))
        outputs.append(_batch_file(name))
        counts[f"n_{name}"] = len(part.students)

    meta = {
        "variant": cfg["variant"],
        "length": length,
        "vocab_size": len(vocab),
        "vocab_hash": vocab.vocab_hash(),
        **counts,
    }
    _dump_json(os.path.join(out, ENCODE_META_FILE), meta)
    _write_manifest(out, "encode", cfg, args.jobs, inputs=[COHORT_FILE], outputs=outputs)
    print(
        f"encoded {counts['n_train']}/{counts['n_val']}/{counts['n_test']} train/val/test students "
        f"at length {length} with {len(vocab)} tokens"
    )
    return 0


def _train_tabular(cfg: dict, args, out: str) -> tuple[list[str], list[str], list[str]]:
    family = cfg["model"]["family"]
    cohort = load_cohort(_require(out, COHORT_FILE, "generate"))
    splits = _load_splits(out)
    train = Cohort(_split_students(cohort, splits["train"]), cohort.programs, cohort.meta)

    schema = fit_feature_schema(train, cfg["variant"])
    _save_schema(os.path.join(out, SCHEMA_FILE), schema)
    x, _, y = featurize(train, schema)

    params = dict(cfg["model"]["params"])
    notes = []
    outputs = [SCHEMA_FILE, MODEL_JSON_FILE]
    search = cfg["model"]["search"]
    if search is not None:
        params, best_auc, _ = random_search_cv(
            family,
            x,
            y,
            n_candidates=search["n_candidates"],
            k_folds=search["k_folds"],
            seed=cfg["seed"],
            log_path=os.path.join(out, SEARCH_LOG_FILE),
        )
        outputs.append(SEARCH_LOG_FILE)
        notes.append(f"search selected {family} params with mean fold auc {best_auc:.6f}")

    if family == "logreg":
        model = train_logreg(x, y, **params)
        _check_finite(model.weights, "fitted weights")
    else:
        model = train_gbt(x, y, seed=cfg["seed"], **params)
        _check_finite([model.base_margin], "fitted margins")
    _save_tabular(os.path.join(out, MODEL_JSON_FILE), family, model)
    return [COHORT_FILE, SPLITS_FILE], outputs, notes


def _sequence_config(cfg: dict):
    family = cfg["model"]["family"]
    dtype = "float64" if cfg["float64"] else "float32"
    params = dict(cfg["model"]["params"])
    try:
        if family == "transformer":
            return TransformerClassifier, TransformerConfig(dtype=dtype, **params)
        return LSTMClassifier, LSTMConfig(dtype=dtype, **params)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model.params is invalid: {exc}") from exc


def _train_sequence(cfg: dict, out: str) -> tuple[list[str], list[str], list[str]]:
    train_batch = TokenSequenceBatch.load(_require(out, _batch_file("train"), "encode"))
    val_batch = TokenSequenceBatch.load(_require(out, _batch_file("val"), "encode"))
    meta = _load_json(_require(out, ENCODE_META_FILE, "encode"))

    cls, model_cfg = _sequence_config(cfg)
    model = cls(meta["vocab_size"], model_cfg, seed=cfg["seed"], vocab_hash=meta["vocab_hash"])
    tr = cfg["training"]
    history = train_sequence_model(
        model,
        train_batch,
        val_batch,
        seed=cfg["seed"],
        epochs=tr["epochs"],
        patience=tr["patience"],
        batch_size=tr["batch_size"],
        peak_lr=tr["peak_lr"],
        weight_decay=tr["weight_decay"],
        warmup=tr["warmup"],
    )
    _check_finite(history["train_loss"], "training losses")
    _check_finite(history["val_loss"], "validation losses")
    save_checkpoint(model, os.path.join(out, MODEL_BIN_FILE))
    _dump_json(
        os.path.join(out, HISTORY_FILE),
        {k: [float(x) for x in v] if isinstance(v, list) else v for k, v in history.items()},
    )
    notes = [f"best epoch {history['best_epoch']} of {history['epochs_run']} run"]
    return [_batch_file("train"), _batch_file("val"), ENCODE_META_FILE], [MODEL_BIN_FILE, HISTORY_FILE], notes


def cmd_train(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    family = cfg["model"]["family"]
    if family in TABULAR:
        inputs, outputs, notes = _train_tabular(cfg, args, out)
    else:
        inputs, outputs, notes = _train_sequence(cfg, out)
    _write_manifest(out, "train", cfg, args.jobs, inputs=inputs, outputs=outputs, notes=notes)
    print(f"trained {family} model on the {cfg['variant']} variant")
    return 0


def cmd_predict(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    split = args.split
    family = cfg["model"]["family"]
    cohort = load_cohort(_require(out, COHORT_FILE, "generate"))
    splits = _load_splits(out)
    students = _split_students(cohort, splits[split])
    inputs = [COHORT_FILE, SPLITS_FILE]

    if family in TABULAR:
        schema = _load_schema(_require(out, SCHEMA_FILE, "train"))
        saved_family, model = _load_tabular(_require(out, MODEL_JSON_FILE, "train"))
        if saved_family != family:
            raise ConfigError(f"model file holds a {saved_family} model but config asks for {family}")
        x, _, _ = featurize(students, schema)
        probs = model.predict_proba(x)
        inputs += [SCHEMA_FILE, MODEL_JSON_FILE]
    else:
        model = load_checkpoint(_require(out, MODEL_BIN_FILE, "train"))
        batch = TokenSequenceBatch.load(_require(out, _batch_file(split), "encode"))
        if len(batch) != len(students):
            raise ValueError(f"{_batch_file(split)} holds {len(batch)} rows but the split has {len(students)}")
        probs = sequence_predict_proba(model, batch)
        inputs += [MODEL_BIN_FILE, _batch_file(split)]
    _check_finite(probs, "predictions")

    pred_path = os.path.join(out, _predictions_file(split))
    fh, writer = _open_csv(pred_path)
    with fh:
        writer.writerow(["student_id", "p_hat"])
        for student, p in zip(students, probs):
            writer.writerow([student.id, _g(p)])

    table = build_risk_table(students, probs)
    table.to_csv(os.path.join(out, _risk_file(split)))
    outputs = [_predictions_file(split), _risk_file(split)]
    _write_manifest(out, "predict", cfg, args.jobs, inputs=inputs, outputs=outputs)
    print(f"scored {len(students)} students on the {split} split")
    return 0


def cmd_evaluate(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    split = args.split
    table = RiskTable.from_csv(_require(out, _risk_file(split), "predict"))
    value, se = auc_se(table.p_hat, table.outcome)

    fh, writer = _open_csv(os.path.join(out, AUC_FILE))
    with fh:
        writer.writerow(["model", "variant", "split", "n", "auc", "se"])
        writer.writerow([cfg["model"]["family"], cfg["variant"], split, len(table.p_hat), _g(value), _g(se)])

    corr = score_outcome_correlations(table)
    fh, writer = _open_csv(os.path.join(out, CORRELATIONS_FILE))
    with fh:
        writer.writerow(["metric", "value"])
        for name in sorted(corr):
            writer.writerow([name, _g(corr[name])])

    _write_manifest(
        out, "evaluate", cfg, args.jobs, inputs=[_risk_file(split)], outputs=[AUC_FILE, CORRELATIONS_FILE]
    )
    print(f"auc {value:.4f} (se {se:.4f}) on {len(table.p_hat)} {split} students")
    return 0


def cmd_contract(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    split = args.split
    table = RiskTable.from_csv(_require(out, _risk_file(split), "predict"))
    ev = cfg["evaluation"]
    groupings = [args.grouping] if args.grouping else ev["groupings"]
    fractions = [args.fraction] if args.fraction is not None else ev["fractions"]
    if any(not 0.0 < f < 1.0 for f in fractions):
        raise ConfigError("contraction fractions must lie in (0, 1)")

    fh, writer = _open_csv(os.path.join(out, CURVE_FILE))
    with fh:
        writer.writerow(["grouping", "bin", "count", "graduates", "rate"])
        for grouping in groupings:
            curve = contraction_curve(table, grouping=grouping, n_bins=ev["n_bins"])
            for i in range(curve.n_bins):
                writer.writerow(
                    [grouping, i + 1, int(curve.counts[i]), int(curve.graduates[i]), _g(curve.rates[i])]
                )

    notes = []
    fh, writer = _open_csv(os.path.join(out, COUNTERFACTUAL_FILE))
    with fh:
        writer.writerow(
            [
                "baseline",
                "fraction",
                "n_rejected",
                "model_graduates_rejected",
                "baseline_graduates_rejected",
                "model_rejected_rate",
                "baseline_rejected_rate",
                "dropout_reduction",
                "pp_difference",
            ]
        )
        for baseline in ev["baselines"]:
            for fraction in fractions:
                try:
                    rep = contraction_counterfactual(table, baseline=baseline, fraction=fraction)
                except ValueError as exc:
                    notes.append(f"baseline {baseline} at fraction {fraction:g} skipped: {exc}")
                    continue
                writer.writerow(
                    [
                        rep.baseline,
                        _g(rep.fraction),
                        rep.n_rejected,
                        rep.model_graduates_rejected,
                        rep.baseline_graduates_rejected,
                        _g(rep.model_rejected_rate),
                        _g(rep.baseline_rejected_rate),
                        _g(rep.dropout_reduction),
                        _g(rep.pp_difference),
                    ]
                )

    _write_manifest(
        out,
        "contract",
        cfg,
        args.jobs,
        inputs=[_risk_file(split)],
        outputs=[CURVE_FILE, COUNTERFACTUAL_FILE],
        notes=notes,
    )
    print(f"contraction tables written for {len(groupings)} grouping(s) and {len(fractions)} fraction(s)")
    return 0


def _verdict_row(attribute: str, criterion: str, v) -> list:
    return [
        attribute,
        criterion,
        _g(v.z),
        _g(v.p_value),
        _g(v.alpha),
        int(v.reject),
        _g(v.rate_a),
        _g(v.rate_b),
        int(v.n_a),
        int(v.n_b),
        int(v.computable),
        v.note,
    ]


def cmd_audit_fairness(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    split = args.split
    table = RiskTable.from_csv(_require(out, _risk_file(split), "predict"))
    attributes = [args.attribute] if args.attribute else cfg["fairness"]["attributes"]
    alpha = cfg["fairness"]["alpha"]

    fh, writer = _open_csv(os.path.join(out, FAIRNESS_FILE))
    with fh:
        writer.writerow(
            ["attribute", "criterion", "z", "p_value", "alpha", "reject",
             "rate_a", "rate_b", "n_a", "n_b", "computable", "note"]
        )
        for attribute in attributes:
            audit = audit_attribute(table, attribute, alpha=alpha)
            for key in ("independence", "separation_tpr", "separation_fpr"):
                writer.writerow(_verdict_row(attribute, key, audit[key]))
            suff = audit["sufficiency"]
            for i, v in enumerate(suff.bins):
                writer.writerow(_verdict_row(attribute, f"sufficiency_bin_{i}", v))
            writer.writerow(
                [attribute, "sufficiency", "", "", _g(suff.alpha_per_bin), int(suff.reject),
                 "", "", "", "", 1, f"{len(suff.bins)} bins"]
            )

    fh, writer = _open_csv(os.path.join(out, ABROCA_FILE))
    with fh:
        writer.writerow(["attribute", "value", "se", "n_programs", "n_skipped", "computable", "note"])
        for attribute in attributes:
            try:
                wa = weighted_abroca(table, attribute)
            except ValueError as exc:
                writer.writerow([attribute, "", "", 0, 0, 0, str(exc)])
                continue
            writer.writerow(
                [attribute, _g(wa.value), _g(wa.se), len(wa.per_program), len(wa.skipped), 1, ""]
            )

    _write_manifest(
        out,
        "audit-fairness",
        cfg,
        args.jobs,
        inputs=[_risk_file(split)],
        outputs=[FAIRNESS_FILE, ABROCA_FILE],
    )
    print(f"fairness audit written for {len(attributes)} attribute(s)")
    return 0


def cmd_explain(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    if cfg["model"]["family"] not in SEQUENTIAL:
        raise ConfigError("explain needs a sequence model (transformer or lstm)")
    split = args.split
    model = load_checkpoint(_require(out, MODEL_BIN_FILE, "train"))
    batch = TokenSequenceBatch.load(_require(out, _batch_file(split), "encode"))
    profile = saliency_profile(model, batch, n=cfg["explain"]["n_sequences"])
    profile.positions_to_csv(os.path.join(out, SALIENCY_POSITIONS_FILE))
    profile.channels_to_csv(os.path.join(out, SALIENCY_CHANNELS_FILE))
    _write_manifest(
        out,
        "explain",
        cfg,
        args.jobs,
        inputs=[MODEL_BIN_FILE, _batch_file(split)],
        outputs=[SALIENCY_POSITIONS_FILE, SALIENCY_CHANNELS_FILE],
    )
    print(f"saliency profiles written from {int(np.max(profile.forward_n))} sequences")
    return 0


def cmd_match(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    cohort = load_cohort(_require(out, COHORT_FILE, "generate"))
    year = args.year if args.year is not None else cfg["match"]["year"]
    years = cohort.years()
    if year is None:
        year = max(years)
    if year not in years:
        raise ConfigError(f"match year {year} absent from cohort years {years[0]}..{years[-1]}")

    applicants = []
    for student in cohort.students:
        if student.cohort_year != year:
            continue
        apps = sorted(
            (ev for ev in student.events if isinstance(ev, ApplicationEvent)),
            key=lambda ev: ev.rank,
        )
        prefs, seen = [], set()
        for ev in apps:
            if ev.program_id not in seen:
                seen.add(ev.program_id)
                prefs.append(ev.program_id)
        if not prefs:
            continue
        quota2 = {
            ev.program_id: ev.human_rank_decile
            for ev in apps
            if ev.quota2_opt_in and ev.human_rank_decile is not None
        }
        applicants.append(Applicant(id=student.id, gpa=student.gpa, prefs=tuple(prefs), quota2_ranks=quota2))

    programs = [
        ProgramSeats(p.program_id, p.seats_q1, p.seats_q2)
        for p in sorted(cohort.programs.values(), key=lambda p: p.program_id)
    ]
    instance = MatchInstance(applicants=applicants, programs=programs)
    instance.validate()
    outcome = david_q_match(instance)
    blocking = check_stability(instance, outcome)

    fh, writer = _open_csv(os.path.join(out, MATCHES_FILE))
    with fh:
        writer.writerow(["student_id", "program_id", "quota"])
        for applicant in applicants:
            assignment = outcome.assigned.get(applicant.id)
            if assignment is None:
                writer.writerow([applicant.id, "", ""])
            else:
                writer.writerow([applicant.id, assignment.program_id, assignment.quota])

    notes = [
        f"year {year}: {len(applicants)} applicants, {len(outcome.unassigned)} unassigned, "
        f"{len(blocking)} blocking pairs"
    ]
    _write_manifest(out, "match", cfg, args.jobs, inputs=[COHORT_FILE], outputs=[MATCHES_FILE], notes=notes)
    print(notes[0])
    return 0


def cmd_econ(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    ec = cfg["econ"]
    results = scenario_grid(
        revenues=ec["revenues"],
        fixed_costs=ec["fixed_costs"],
        variable_costs=ec["variable_costs"],
        delays=ec["delays"],
    )
    write_scenario_csv(os.path.join(out, ECON_SCENARIOS_FILE), results)

    fh, writer = _open_csv(os.path.join(out, ECON_HEADLINE_FILE))
    with fh:
        writer.writerow(["label", "value"])
        for g in ec["extra_graduates"]:
            writer.writerow([f"graduate_revenue[{g:g}]", _g(graduate_revenue(g))])
        total = 0.0
        for n in ec["n_overridden"]:
            cost = override_cost(n, rate=ec["override_rate"])
            total += cost
            writer.writerow([f"override_cost[{n:g}]", _g(cost)])
        writer.writerow(["override_cost_total", _g(total)])
        for entry in ec["taximeter"]:
            dkk, usd = taximeter_value(entry["yearly_rate_dkk"], entry["completion_bonus_dkk"], entry["years"])
            writer.writerow([f"taximeter[{entry['yearly_rate_dkk']:g}+{entry['completion_bonus_dkk']:g}]_dkk", _g(dkk)])
            writer.writerow([f"taximeter[{entry['yearly_rate_dkk']:g}+{entry['completion_bonus_dkk']:g}]_usd", _g(usd)])
        if ec["mvpf"] is not None:
            ratio = mvpf(ec["mvpf"]["delta_welfare"], ec["mvpf"]["net_govt_cost"])
            writer.writerow(["mvpf", "" if ratio is None else _g(ratio)])

    _write_manifest(
        out, "econ", cfg, args.jobs, inputs=[], outputs=[ECON_SCENARIOS_FILE, ECON_HEADLINE_FILE]
    )
    print(f"econ grid written with {len(results)} scenarios")
    return 0


_REPORT_SOURCES = [
    (AUC_FILE, "auc_grid.csv", "evaluate"),
    (CORRELATIONS_FILE, "correlations.csv", "evaluate"),
    (CURVE_FILE, "contraction_curves.csv", "contract"),
    (COUNTERFACTUAL_FILE, "contraction_counterfactuals.csv", "contract"),
    (FAIRNESS_FILE, "fairness_grid.csv", "audit-fairness"),
    (ABROCA_FILE, "abroca_grid.csv", "audit-fairness"),
    (ECON_SCENARIOS_FILE, "econ_grid.csv", "econ"),
    (ECON_HEADLINE_FILE, "econ_headline.csv", "econ"),
]


def cmd_report(cfg: dict, args) -> int:
    out = _ensure_out(cfg)
    runs = args.runs or [out]
    report_dir = os.path.join(out, REPORT_DIR)
    os.makedirs(report_dir, exist_ok=True)

    for source, target, producer in _REPORT_SOURCES:
        fh, writer = _open_csv(os.path.join(report_dir, target))
        with fh:
            header_written = False
            for run in runs:
                path = os.path.join(run, source)
                if not os.path.exists(path):
                    raise MissingArtifact(os.path.join(run, source), producer)
                label = os.path.basename(os.path.normpath(run))
                with open(path, encoding="utf-8", newline="") as src:
                    rows = list(csv.reader(src))
                if not header_written:
                    writer.writerow(["run"] + rows[0])
                    header_written = True
                for row in rows[1:]:
                    writer.writerow([label] + row)

    outputs = [os.path.join(REPORT_DIR, target) for _, target, _ in _REPORT_SOURCES]
    inputs = [src for src, _, _ in _REPORT_SOURCES] if runs == [out] else []
    _write_manifest(out, "report", cfg, args.jobs, inputs=inputs, outputs=outputs)
    print(f"report assembled from {len(runs)} run(s) into {report_dir}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: A003 - argparse hook
        raise ConfigError(message)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the JSON run configuration")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed (u64)")
    sub.add_argument("--out", default=None, help="override the config output directory")
    sub.add_argument(
        "--jobs",
        type=int,
        default=1,
        help="maximum worker processes; the pipeline is single-process, so this only caps it",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="admitsim",
        description="Synthetic admission cohorts, dropout risk models, and policy evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    specs = [
        ("generate", cmd_generate, "generate a synthetic applicant cohort"),
        ("encode", cmd_encode, "split the cohort and encode token sequences"),
        ("train", cmd_train, "fit the configured risk model on the training split"),
        ("predict", cmd_predict, "score a split and write its risk table"),
        ("evaluate", cmd_evaluate, "compute discrimination metrics for a scored split"),
        ("contract", cmd_contract, "simulate intake contraction against ranking baselines"),
        ("audit-fairness", cmd_audit_fairness, "run group fairness tests on a scored split"),
        ("explain", cmd_explain, "write token saliency profiles for a sequence model"),
        ("match", cmd_match, "run the two-quota deferred acceptance match"),
        ("econ", cmd_econ, "evaluate the fiscal scenario grid"),
        ("report", cmd_report, "assemble evaluation artifacts into a report directory"),
    ]
    for name, func, help_text in specs:
        p = sub.add_parser(name, help=help_text, description=help_text)
        _add_common(p)
        p.set_defaults(func=func)

    by_name = sub.choices
    for name in ("predict", "evaluate", "contract", "audit-fairness", "explain"):
        by_name[name].add_argument(
            "--split", choices=SPLITS, default="test", help="which cohort split to use"
        )
    by_name["contract"].add_argument(
        "--fraction", type=float, default=None, help="override the rejected intake fraction"
    )
    by_name["contract"].add_argument(
        "--grouping", choices=GROUPINGS, default=None, help="override the ranking pool grouping"
    )
    by_name["audit-fairness"].add_argument(
        "--attribute", choices=ATTRIBUTES, default=None, help="audit a single attribute"
    )
    by_name["match"].add_argument(
        "--year", type=int, default=None, help="admission year to match (default: latest)"
    )
    by_name["report"].add_argument(
        "--runs", nargs="+", default=None, help="run directories to assemble (default: the output directory)"
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except MissingArtifact as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, KeyError, TypeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
