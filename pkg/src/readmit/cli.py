"""Command-line interface: synth, select-features, train, kfold, eval.

Configuration can come from an INI-style file ([section] key = value) with
CLI flags taking precedence.  Every artifact embeds a fingerprint of the
resolved configuration so eval can detect mismatched models and datasets.
Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure, 5 I/O.
"""

import argparse
import configparser
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .data import (SynthConfig, generate_synthetic, load_dataset, save_dataset,
                   split_by_patient)
from .errors import ConfigError, DataError, NumericError
from .evaluation import evaluate, save_report
from .features import (FeatureSelection, feature_importances, fit_tfidf,
                       patient_mean_features, prepare_bundles, select_top_k,
                       train_random_forest)
from .model import ModelConfig, ReadmissionModel, load_model, save_model
from .training import (Ensemble, LossConfig, NoiseSchedule, TrainConfig,
                       kfold_train, predict_proba, train, write_history_csv)

SPLIT_DEFAULT = (0.7, 0.15, 0.15)

_CONFIG_SECTIONS = {
    "model": {"d_model", "n_heads", "ehr_layers", "cxr_layers", "notes_layers",
              "d_ff", "dropout", "k_ehr", "modalities", "encoder", "dtype",
              "max_days", "max_images", "max_notes"},
    "train": {"epochs", "lr_max", "lr_min", "batch_size", "grad_clip",
              "weight_decay", "seed"},
    "loss": {"alpha", "gamma", "smooth", "reduction"},
    "noise": {"kind", "r_initial", "r_final", "warmup", "amplitude",
              "period", "intercept"},
    "data": {"split_fractions", "split_seed"},
}


def fingerprint(obj):
    """Stable short hash of a JSON-serializable configuration."""
    blob = json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _default_seed(value):
    if value is not None:
        return value
    env = os.environ.get("PT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"PT_SEED must be an integer, got {env!r}") from exc
    return 0


def _parse_fractions(text):
    parts = [p for p in text.split(",") if p]
    try:
        fracs = tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad split fractions {text!r}") from exc
    return fracs


def _parse_modalities(text):
    mods = tuple(m.strip() for m in text.split(",") if m.strip())
    if not mods:
        raise ConfigError("at least one modality is required")
    return mods


def load_config_file(path):
    """Read an INI config file, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    out = {}
    for section in parser.sections():
        if section not in _CONFIG_SECTIONS:
            raise ConfigError(f"{path}: unknown config section [{section}]")
        for key in parser[section]:
            if key not in _CONFIG_SECTIONS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
            out[f"{section}.{key}"] = parser[section][key]
    return out


def _cfg_get(file_cfg, args, section, key, flag=None, cast=str):
    """Resolution order: CLI flag, config file, None."""
    flag_val = getattr(args, flag if flag else key, None)
    if flag_val is not None:
        return flag_val
    raw = file_cfg.get(f"{section}.{key}")
    if raw is None:
        return None
    try:
        if cast is bool:
            return raw.lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {section}.{key} = {raw!r}: {exc}") from exc


def _require_file(path, kind):
    if not Path(path).is_file():
        raise DataError(f"{kind} file does not exist: {path}")
    return Path(path)


def _resolve_model_config(args, file_cfg, dataset_d):
    modalities = _cfg_get(file_cfg, args, "model", "modalities", cast=str)
    if modalities is None:
        modalities = "ehr,notes"
    if isinstance(modalities, str):
        modalities = _parse_modalities(modalities)
    kwargs = {}
    for key, cast in (("d_model", int), ("n_heads", int), ("ehr_layers", int),
                      ("cxr_layers", int), ("notes_layers", int), ("d_ff", int),
                      ("dropout", float), ("k_ehr", int), ("encoder", str),
                      ("dtype", str), ("max_days", int), ("max_images", int),
                      ("max_notes", int)):
        val = _cfg_get(file_cfg, args, "model", key, cast=cast)
        if val is not None:
            kwargs[key] = val
    kwargs["modalities"] = modalities
    kwargs.setdefault("k_ehr", 100)
    if dataset_d is not None and "ehr" in modalities:
        kwargs["k_ehr"] = min(kwargs["k_ehr"], dataset_d)
    kwargs["seed"] = _default_seed(_cfg_get(file_cfg, args, "train", "seed", flag="seed", cast=int))
    return ModelConfig(**kwargs)


def _resolve_train_config(args, file_cfg):
    loss = LossConfig(
        alpha=_cfg_get(file_cfg, args, "loss", "alpha", cast=float) or 0.25,
        gamma=_first_not_none(_cfg_get(file_cfg, args, "loss", "gamma", cast=float), 2.0),
        smooth=_first_not_none(_cfg_get(file_cfg, args, "loss", "smooth", cast=float), 0.1),
        reduction="mean",
    )
    kind = _cfg_get(file_cfg, args, "noise", "kind", flag="noise", cast=str) or "linear"
    noise = NoiseSchedule(
        kind=kind,
        r_initial=_first_not_none(_cfg_get(file_cfg, args, "noise", "r_initial", flag="noise_initial", cast=float), 0.01),
        r_final=_first_not_none(_cfg_get(file_cfg, args, "noise", "r_final", flag="noise_final", cast=float), 0.1),
        warmup=_cfg_get(file_cfg, args, "noise", "warmup", flag="noise_warmup", cast=int),
        amplitude=_first_not_none(_cfg_get(file_cfg, args, "noise", "amplitude", flag="noise_amplitude", cast=float), 0.05),
        period=_first_not_none(_cfg_get(file_cfg, args, "noise", "period", flag="noise_period", cast=float), 40.0),
        intercept=_first_not_none(_cfg_get(file_cfg, args, "noise", "intercept", flag="noise_intercept", cast=float), 0.0),
    )
    return TrainConfig(
        epochs=_first_not_none(_cfg_get(file_cfg, args, "train", "epochs", cast=int), 100),
        lr_max=_first_not_none(_cfg_get(file_cfg, args, "train", "lr_max", cast=float), 1e-3),
        lr_min=_first_not_none(_cfg_get(file_cfg, args, "train", "lr_min", cast=float), 5e-4),
        batch_size=_first_not_none(_cfg_get(file_cfg, args, "train", "batch_size", cast=int), 32),
        loss=loss,
        noise=noise,
        grad_clip=_first_not_none(_cfg_get(file_cfg, args, "train", "grad_clip", cast=float), 1.0),
        weight_decay=_first_not_none(_cfg_get(file_cfg, args, "train", "weight_decay", cast=float), 0.01),
        seed=_default_seed(_cfg_get(file_cfg, args, "train", "seed", flag="seed", cast=int)),
    )


def _first_not_none(*values):
    for v in values:
        if v is not None:
            return v
    return None


def _resolve_split(args, file_cfg):
    fracs = _cfg_get(file_cfg, args, "data", "split_fractions", flag="split_fractions", cast=str)
    fracs = _parse_fractions(fracs) if isinstance(fracs, str) else (fracs or SPLIT_DEFAULT)
    seed = _cfg_get(file_cfg, args, "data", "split_seed", flag="split_seed", cast=int)
    return fracs, _default_seed(seed)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    seed = _default_seed(args.seed)
    vocab = [f"term{i:03d}" for i in range(args.vocab_size)]
    cfg = SynthConfig(
        n_patients=args.patients,
        admissions_per_patient=tuple(int(x) for x in args.admissions.split(",")),
        d_ehr=args.d_ehr,
        n_informative_ehr=args.informative_ehr,
        vocab=vocab,
        n_informative_tokens=args.informative_tokens,
        positive_rate=args.positive_rate,
        seed=seed,
    )
    ds, meta = generate_synthetic(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    with open(f"{out}.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
    counts = ds.meta()
    print(f"wrote {out}: {counts['admissions']} admissions, "
          f"{counts['patients']} patients, {counts['positives']} positives")
    return 0


def cmd_select_features(args):
    data_path = _require_file(args.data, "dataset")
    ds = load_dataset(data_path)
    if not ds.records:
        raise DataError(f"{data_path}: dataset is empty")
    fracs, split_seed = _resolve_split(args, {})
    train_ds, _, _ = split_by_patient(ds, fracs, seed=split_seed)
    d = ds.d
    top_k = args.top_k if args.top_k is not None else min(100, d)
    if top_k > d:
        raise ConfigError(f"--top-k {top_k} exceeds EHR feature count {d}")
    X, y = patient_mean_features(train_ds)
    forest = train_random_forest(X, y, n_trees=args.trees,
                                 seed=_default_seed(args.seed), jobs=args.jobs)
    importances = feature_importances(forest)
    sel = select_top_k(importances, top_k)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(sel.to_json(), fh, sort_keys=True)
    print(f"wrote {out}: top {sel.k} of {d} features")
    return 0


def _fit_pipeline(train_ds, model_cfg, selection):
    """Fit the TF-IDF model on training notes (selection comes precomputed)."""
    tfidf = None
    if "notes" in model_cfg.modalities:
        kinds = {r.notes_kind for r in train_ds.records}
        if "text" in kinds:
            corpus = [note for r in train_ds.records if r.notes_kind == "text"
                      for note in r.notes]
            if not corpus:
                raise DataError("notes modality active but no note text in training split")
            tfidf = fit_tfidf(corpus)
    return tfidf


def _caps(cfg):
    return dict(max_days=cfg.max_days, max_images=cfg.max_images, max_notes=cfg.max_notes)


def cmd_train(args):
    data_path = _require_file(args.data, "dataset")
    file_cfg = load_config_file(args.config) if args.config else {}
    ds = load_dataset(data_path)
    if not ds.records:
        raise DataError(f"{data_path}: dataset is empty")

    selection = None
    if not args.no_select:
        if not args.selection:
            raise ConfigError("either --selection FILE or --no-select is required")
        sel_path = _require_file(args.selection, "selection")
        with open(sel_path, "r", encoding="utf-8") as fh:
            selection = FeatureSelection.from_json(json.load(fh))

    model_cfg = _resolve_model_config(args, file_cfg, ds.d)
    if selection is not None and "ehr" in model_cfg.modalities:
        model_cfg.k_ehr = selection.k
    elif "ehr" in model_cfg.modalities:
        model_cfg.k_ehr = ds.d
    train_cfg = _resolve_train_config(args, file_cfg)
    fracs, split_seed = _resolve_split(args, file_cfg)

    train_ds, val_ds, test_ds = split_by_patient(ds, fracs, seed=split_seed)
    tfidf = _fit_pipeline(train_ds, model_cfg, selection)
    caps = _caps(model_cfg)
    tb, tl = prepare_bundles(train_ds.records, model_cfg.modalities, selection, tfidf, **caps)
    vb, vl = prepare_bundles(val_ds.records, model_cfg.modalities, selection, tfidf, **caps)

    fp = fingerprint({
        "model": model_cfg.to_json(),
        "train": {"epochs": train_cfg.epochs, "lr_max": train_cfg.lr_max,
                  "lr_min": train_cfg.lr_min, "batch_size": train_cfg.batch_size,
                  "seed": train_cfg.seed, "grad_clip": train_cfg.grad_clip,
                  "weight_decay": train_cfg.weight_decay},
        "loss": vars(train_cfg.loss),
        "noise": vars(train_cfg.noise),
        "split": {"fractions": list(fracs), "seed": split_seed},
        "data": str(data_path),
    })

    model = ReadmissionModel(model_cfg)
    result = train(model, tb, tl, vb, vl, train_cfg)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_model(out_dir / "model.json", result.model, selection=selection,
               tfidf=tfidf, fingerprint=fp)
    write_history_csv(result.history, out_dir / "history.csv")
    with open(out_dir / "splits.json", "w", encoding="utf-8") as fh:
        json.dump({
            "train_patients": sorted({r.patient_id for r in train_ds.records}),
            "val_patients": sorted({r.patient_id for r in val_ds.records}),
            "test_patients": sorted({r.patient_id for r in test_ds.records}),
        }, fh, sort_keys=True)
    val_classes = {r.label for r in val_ds.records}
    if len(val_classes) == 2:
        report = evaluate(
            lambda recs: predict_proba(result.model, prepare_bundles(
                recs, model_cfg.modalities, selection, tfidf, **caps)[0]),
            val_ds.records,
            params=result.model.count_parameters(),
            seconds_per_epoch=result.seconds_per_epoch,
            fingerprint=fp,
        )
        save_report(report, out_dir)
    else:
        print("warning: validation split has a single class; skipping report.json",
              file=sys.stderr)
    print(f"best val AUC {result.best_val_auc:.4f} at epoch {result.best_epoch}; "
          f"{result.model.count_parameters()} parameters; "
          f"{result.seconds_per_epoch:.2f}s/epoch")
    return 0


def cmd_kfold(args):
    data_path = _require_file(args.data, "dataset")
    file_cfg = load_config_file(args.config) if args.config else {}
    ds = load_dataset(data_path)
    if not ds.records:
        raise DataError(f"{data_path}: dataset is empty")
    if args.k < 2:
        raise ConfigError(f"--k must be >= 2, got {args.k}")

    model_cfg = _resolve_model_config(args, file_cfg, ds.d)
    if "ehr" in model_cfg.modalities:
        model_cfg.k_ehr = min(model_cfg.k_ehr, ds.d)
    train_cfg = _resolve_train_config(args, file_cfg)
    train_cfg.kfold = args.k

    selection = None
    if args.selection:
        with open(_require_file(args.selection, "selection"), "r", encoding="utf-8") as fh:
            selection = FeatureSelection.from_json(json.load(fh))
        model_cfg.k_ehr = selection.k
    elif "ehr" in model_cfg.modalities:
        X, y = patient_mean_features(ds)
        forest = train_random_forest(X, y, n_trees=args.trees, seed=train_cfg.seed,
                                     jobs=args.jobs)
        selection = select_top_k(feature_importances(forest),
                                 min(model_cfg.k_ehr, ds.d))
        model_cfg.k_ehr = selection.k
    tfidf = _fit_pipeline(ds, model_cfg, selection)

    fp = fingerprint({"model": model_cfg.to_json(), "k": args.k, "seed": train_cfg.seed})
    started = time.perf_counter()
    ensemble = kfold_train(ds.records, model_cfg, train_cfg, k=args.k,
                           fold_seed=train_cfg.seed, selection=selection,
                           tfidf=tfidf, jobs=args.jobs)
    runtime = time.perf_counter() - started

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, member in enumerate(ensemble.members):
        save_model(out_dir / f"member_{i:02d}.json", member, selection=selection,
                   tfidf=tfidf, fingerprint=fp)

    report = {
        "k": args.k,
        "fold_val_aucs": [None if np.isnan(a) else a for a in ensemble.fold_val_aucs],
        "mean_fold_val_auc": float(np.nanmean(ensemble.fold_val_aucs)),
        "runtime_seconds": runtime,
        "fingerprint": fp,
    }
    if args.holdout:
        holdout = load_dataset(_require_file(args.holdout, "holdout dataset"))
        hb, hl = prepare_bundles(holdout.records, model_cfg.modalities,
                                 selection, tfidf, **_caps(model_cfg))
        from .evaluation import auc as _auc

        report["ensemble_holdout_auc"] = _auc(ensemble.predict_bundles(hb), hl)
    with open(out_dir / "ensemble.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
    print(f"k={args.k} mean fold val AUC {report['mean_fold_val_auc']:.4f} "
          f"({runtime:.1f}s)")
    return 0


def _load_predictor(model_path):
    """A single model file or a directory of ensemble members."""
    path = Path(model_path)
    if path.is_dir():
        members = sorted(path.glob("member_*.json"))
        if not members:
            raise DataError(f"{path}: no member_*.json files found")
        loaded = [load_model(p) for p in members]
        models = [m for m, _, _, _ in loaded]
        _, selection, tfidf, fp = loaded[0]
        ensemble = Ensemble(members=models, fold_val_aucs=[],
                            selection=selection, tfidf=tfidf)
        return ensemble, models[0].config, selection, tfidf, fp
    model, selection, tfidf, fp = load_model(_require_file(path, "model"))
    return model, model.config, selection, tfidf, fp


def _check_compat(cfg, selection, tfidf, ds):
    if "ehr" in cfg.modalities:
        if selection is not None:
            bad = [i for i in selection.indices if i >= ds.d]
            if bad:
                raise DataError(
                    f"fingerprint mismatch: selection indices {bad} out of range "
                    f"for dataset with {ds.d} EHR features"
                )
        elif cfg.k_ehr != ds.d:
            raise DataError(
                f"fingerprint mismatch: model expects {cfg.k_ehr} EHR features, "
                f"dataset has {ds.d}"
            )
    if "notes" in cfg.modalities and tfidf is None:
        if any(r.notes_kind == "text" for r in ds.records):
            raise DataError(
                "fingerprint mismatch: dataset has raw note text but the model "
                "carries no TF-IDF vocabulary"
            )


def cmd_eval(args):
    predictor, cfg, selection, tfidf, fp = _load_predictor(args.model)
    ds = load_dataset(_require_file(args.data, "dataset"))
    if not ds.records:
        raise DataError(f"{args.data}: dataset is empty")
    if args.split:
        fracs, split_seed = _resolve_split(args, {})
        parts = dict(zip(("train", "val", "test"),
                         split_by_patient(ds, fracs, seed=split_seed)))
        ds = parts[args.split]
    _check_compat(cfg, selection, tfidf, ds)
    caps = _caps(cfg)

    def score(records):
        bundles, _ = prepare_bundles(records, cfg.modalities, selection, tfidf, **caps)
        if isinstance(predictor, Ensemble):
            return predictor.predict_bundles(bundles)
        return predict_proba(predictor, bundles)

    n_params = (sum(m.count_parameters() for m in predictor.members)
                if isinstance(predictor, Ensemble) else predictor.count_parameters())
    report = evaluate(score, ds.records, params=n_params, fingerprint=fp)
    out_dir = Path(args.out)
    save_report(report, out_dir)
    print(f"AUC {report.auc:.4f} on {len(ds.records)} records "
          f"({report.n_pos} pos / {report.n_neg} neg)")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser():
    parser = argparse.ArgumentParser(
        prog="readmit",
        description="Multimodal 30-day readmission prediction toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted signal")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--patients", type=int, default=500)
    p.add_argument("--admissions", default="1,2", help="min,max admissions per patient")
    p.add_argument("--d-ehr", type=int, default=50, dest="d_ehr")
    p.add_argument("--informative-ehr", type=int, default=5, dest="informative_ehr")
    p.add_argument("--vocab-size", type=int, default=200, dest="vocab_size")
    p.add_argument("--informative-tokens", type=int, default=5, dest="informative_tokens")
    p.add_argument("--positive-rate", type=float, default=0.17, dest="positive_rate")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select-features", help="random-forest EHR feature selection")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="selection JSON path")
    p.add_argument("--top-k", type=int, default=None, dest="top_k",
                   help="number of features to keep (default: min(100, d))")
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--split-fractions", default=None, dest="split_fractions")
    p.add_argument("--split-seed", type=int, default=None, dest="split_seed")
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("train", help="train a model on a train/val split")
    _add_train_flags(p)
    p.add_argument("--selection", default=None, help="selection JSON from select-features")
    p.add_argument("--no-select", action="store_true", dest="no_select",
                   help="use all EHR features without a selection file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold", help="train a K-fold ensemble")
    _add_train_flags(p)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--selection", default=None)
    p.add_argument("--trees", type=int, default=100)
    p.add_argument("--holdout", default=None, help="dataset file for ensemble evaluation")
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("eval", help="evaluate a saved model or ensemble directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", choices=("train", "val", "test"), default=None,
                   help="evaluate on one split of the dataset instead of all of it")
    p.add_argument("--split-fractions", default=None, dest="split_fractions")
    p.add_argument("--split-seed", type=int, default=None, dest="split_seed")
    p.set_defaults(func=cmd_eval)
    return parser


def _add_train_flags(p):
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="INI config file")
    p.add_argument("--modalities", default=None, help="comma list from ehr,cxr,notes")
    p.add_argument("--encoder", choices=("transformer", "gru", "lstm"), default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--lr-max", type=float, default=None, dest="lr_max")
    p.add_argument("--lr-min", type=float, default=None, dest="lr_min")
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--smooth", type=float, default=None)
    p.add_argument("--noise", choices=("linear", "sinusoidal", "none"), default=None)
    p.add_argument("--noise-initial", type=float, default=None, dest="noise_initial")
    p.add_argument("--noise-final", type=float, default=None, dest="noise_final")
    p.add_argument("--noise-warmup", type=int, default=None, dest="noise_warmup")
    p.add_argument("--noise-amplitude", type=float, default=None, dest="noise_amplitude")
    p.add_argument("--noise-period", type=float, default=None, dest="noise_period")
    p.add_argument("--noise-intercept", type=float, default=None, dest="noise_intercept")
    p.add_argument("--grad-clip", type=float, default=None, dest="grad_clip")
    p.add_argument("--weight-decay", type=float, default=None, dest="weight_decay")
    p.add_argument("--d-model", type=int, default=None, dest="d_model")
    p.add_argument("--heads", type=int, default=None, dest="n_heads")
    p.add_argument("--ehr-layers", type=int, default=None, dest="ehr_layers")
    p.add_argument("--cxr-layers", type=int, default=None, dest="cxr_layers")
    p.add_argument("--notes-layers", type=int, default=None, dest="notes_layers")
    p.add_argument("--d-ff", type=int, default=None, dest="d_ff")
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--dtype", choices=("float64", "float32"), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--split-fractions", default=None, dest="split_fractions")
    p.add_argument("--split-seed", type=int, default=None, dest="split_seed")
    p.add_argument("--jobs", type=int, default=1)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
