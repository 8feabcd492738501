"""Command-line pipeline: phantom generation, cross-validated benchmarking,
training, prediction, and report merging.

Exit codes: 0 success, 1 runtime or data error, 2 usage error. Flag values
override the optional JSON config file, which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .alt_embedders import METHODS, EmbedderSpec, extend_matrix, fit_from_matrix
from .classifiers import (
    LdaModel,
    compute_metrics,
    lda_predict,
    load_model_json,
    logistic_predict,
    save_model_json,
)
from .ensemble_pipeline import (
    CLASSIFIERS,
    _fit_classifier,
    aggregate_votes,
    build_fold_plan,
    diagnosis_table,
    prepare,
    read_votes_csv,
    run_ensemble,
    two_model_confusion,
    validation_accuracy_stats,
    write_diagnosis_csv,
    write_metrics_csv,
    write_two_model_json,
    write_votes_csv,
)
from .errors import PipelineError
from .kernel_graph import KernelConfig
from .oos_extension import batch_extend, fit_space, load_space, save_space, training_coords
from .spectral_embed import export_coords_csv
from .tensor_data import generate_phantoms, load_dataset, save_dataset, standardize_dataset

DEFAULTS = {
    "n": 300,
    "shape": "1,24,24,1",
    "noise": 0.3,
    "seed": 0,
    "method": ["dm", "lle"],
    "classifier": "lda",
    "dim": 200,
    "alpha": 8.0,
    "t": 1,
    "neighbors": 10,
    "threshold": 0.5,
    "test_size": 100,
    "threads": 1,
}


def _load_config(path):
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise PipelineError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args, cfg, key):
    """Flag > config file > default."""
    flag = getattr(args, key, None)
    if flag is not None:
        return flag
    if key in cfg:
        return cfg[key]
    return DEFAULTS[key]


def _parse_shape(text, parser):
    try:
        dims = tuple(int(p) for p in str(text).split(","))
    except ValueError:
        parser.error(f"bad --shape {text!r}; expected s,h,w,c")
    if len(dims) != 4 or any(d < 1 for d in dims):
        parser.error(f"bad --shape {text!r}; need four dims >= 1")
    return dims


def _spec_for(method, args, cfg, parser) -> EmbedderSpec:
    dim = int(_resolve(args, cfg, "dim"))
    alpha = float(_resolve(args, cfg, "alpha"))
    t = int(_resolve(args, cfg, "t"))
    neighbors = int(_resolve(args, cfg, "neighbors"))
    if dim < 1:
        parser.error(f"--dim must be >= 1, got {dim}")
    if alpha <= 0:
        parser.error(f"--alpha must be positive, got {alpha}")
    if t < 1:
        parser.error(f"--t must be >= 1, got {t}")
    if neighbors < 1:
        parser.error(f"--neighbors must be >= 1, got {neighbors}")
    return EmbedderSpec(method=method, k=dim, neighbors=neighbors, alpha=alpha, t=t)


def cmd_synth(args, parser) -> int:
    cfg = _load_config(args.config)
    n = int(_resolve(args, cfg, "n"))
    if n < 1:
        parser.error(f"--n must be >= 1, got {n}")
    noise = float(_resolve(args, cfg, "noise"))
    if noise < 0:
        parser.error(f"--noise must be >= 0, got {noise}")
    shape = _parse_shape(_resolve(args, cfg, "shape"), parser)
    seed = int(_resolve(args, cfg, "seed"))
    dataset = generate_phantoms(n, shape, noise, seed)
    manifest = save_dataset(dataset, args.out)
    print(f"wrote {len(dataset)} samples to {manifest}")
    return 0


def _test_selection(args, cfg, parser):
    if args.test_ids is not None:
        return [line.strip() for line in Path(args.test_ids).read_text().splitlines() if line.strip()]
    size = int(_resolve(args, cfg, "test_size"))
    if size < 0:
        parser.error(f"--test-size must be >= 0, got {size}")
    return size


def _post_voting_metrics(records):
    labeled = [r for r in records if r.true_label is not None]
    if not labeled:
        return None
    return compute_metrics([r.final for r in labeled], [r.true_label for r in labeled])


def cmd_crossval(args, parser) -> int:
    cfg = _load_config(args.config)
    methods = args.method if args.method else cfg.get("method", DEFAULTS["method"])
    if isinstance(methods, str):
        methods = [methods]
    for m in methods:
        if m not in METHODS:
            parser.error(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    classifier = str(_resolve(args, cfg, "classifier"))
    if classifier not in CLASSIFIERS:
        parser.error(f"unknown classifier {classifier!r}; choose from {', '.join(CLASSIFIERS)}")
    threshold = float(_resolve(args, cfg, "threshold"))
    if not 0.0 < threshold < 1.0:
        parser.error(f"--threshold must be in (0, 1), got {threshold}")
    seed = int(_resolve(args, cfg, "seed"))
    threads = int(_resolve(args, cfg, "threads"))
    if threads < 1:
        parser.error(f"--threads must be >= 1, got {threads}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = load_dataset(args.data)
    prepared = prepare(dataset)
    plan = build_fold_plan(dataset, _test_selection(args, cfg, parser), seed)

    metric_rows = []
    records_by_method = {}
    for method in methods:
        spec = _spec_for(method, args, cfg, parser)
        results = run_ensemble(prepared, plan, spec, classifier, threads=threads)
        records = aggregate_votes(results, prepared, plan, threshold=threshold)
        records_by_method[method] = records
        for r in results:
            metric_rows.append((method, classifier, spec.k, r.fold_i, r.fold_j, r.validation_metrics))
        mean_acc, std_acc = validation_accuracy_stats(results)
        line = f"method={method} classifier={classifier} dim={spec.k} " \
               f"validation_acc={mean_acc:.4f} (+/-{std_acc:.4f})"
        voted = _post_voting_metrics(records)
        if voted is not None:
            line += f" test_acc={voted.accuracy:.4f}"
        print(line)

    primary = methods[0]
    write_metrics_csv(out_dir / "metrics.csv", metric_rows)
    write_votes_csv(out_dir / "votes.csv", records_by_method[primary])
    for method in methods[1:]:
        write_votes_csv(out_dir / f"votes_{method}.csv", records_by_method[method])
    write_diagnosis_csv(out_dir / "diagnosis.csv", diagnosis_table(records_by_method[primary]))
    if len(methods) > 1:
        confusion = two_model_confusion(records_by_method[primary], records_by_method[methods[1]])
        write_two_model_json(out_dir / "two_model.json", confusion, primary, methods[1])

    _write_embedding_csv(out_dir / "embedding.csv", prepared, plan,
                         _spec_for(primary, args, cfg, parser))
    return 0


def _write_embedding_csv(path, prepared, plan, spec) -> None:
    """Coordinates of the full training pool plus extended test samples."""
    n = len(prepared.ids)
    pool = np.setdiff1d(np.arange(n), plan.test_set)
    space = fit_from_matrix(
        spec, prepared.x[pool], prepared.sample_shape, prepared.sq_dists[np.ix_(pool, pool)]
    )
    coords = np.empty((n, spec.k))
    coords[pool] = space.coords
    if len(plan.test_set):
        coords[plan.test_set] = extend_matrix(
            space,
            prepared.x[plan.test_set],
            prepared.sq_dists[np.ix_(plan.test_set, pool)],
            [prepared.ids[p] for p in plan.test_set],
        )
    export_coords_csv(prepared.ids, coords, path)


def cmd_train(args, parser) -> int:
    cfg = _load_config(args.config)
    dim = int(_resolve(args, cfg, "dim"))
    alpha = float(_resolve(args, cfg, "alpha"))
    t = int(_resolve(args, cfg, "t"))
    classifier = str(_resolve(args, cfg, "classifier"))
    if classifier not in CLASSIFIERS:
        parser.error(f"unknown classifier {classifier!r}; choose from {', '.join(CLASSIFIERS)}")
    dataset = load_dataset(args.data)
    labels = dataset.labels()
    space = fit_space(dataset, KernelConfig(alpha=alpha, t=t), dim)
    model, _ = _fit_classifier(classifier, training_coords(space), labels)
    save_space(space, args.out_space)
    save_model_json(model, args.out_model)
    print(f"trained on {len(dataset)} samples; space -> {args.out_space}, model -> {args.out_model}")
    return 0


def cmd_predict(args, parser) -> int:
    space = load_space(args.space)
    model = load_model_json(args.model)
    dataset = load_dataset(args.data)
    std = standardize_dataset(dataset)
    coords = batch_extend(space, std)
    predict_fn = lda_predict if isinstance(model, LdaModel) else logistic_predict
    labels, scores = predict_fn(model, coords)
    out = Path(args.out)
    with out.open("w", newline="") as fh:
        fh.write("id,label,score\n")
        for sid, lab, score in zip(std.ids(), labels, scores):
            fh.write(f"{sid},{int(lab)},{repr(float(score))}\n")
    print(f"wrote {len(labels)} predictions to {out}")
    return 0


def cmd_two_model(args, parser) -> int:
    records_a = read_votes_csv(args.votes_a)
    records_b = read_votes_csv(args.votes_b)
    confusion = two_model_confusion(records_a, records_b)
    write_two_model_json(args.out, confusion, args.name_a, args.name_b)
    print(f"wrote two-model confusion to {args.out}")
    return 0


def cmd_diagnose(args, parser) -> int:
    records = read_votes_csv(args.votes)
    rows = diagnosis_table(records)
    write_diagnosis_csv(args.out, rows)
    print(f"wrote {len(rows)} false-negative rows to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmclassify",
        description="Diffusion-map embedding, Nystrom extension, and ensemble-voted diagnosis.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic phantom dataset")
    p.add_argument("--n", type=int, help="samples per class (default 300)")
    p.add_argument("--shape", help="tensor dims s,h,w,c (default 1,24,24,1)")
    p.add_argument("--noise", type=float, help="additive Gaussian noise sigma (default 0.3)")
    p.add_argument("--seed", type=int, help="generator seed (default 0)")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("crossval", help="run the 25-fold ensemble benchmark")
    p.add_argument("--data", required=True, help="manifest.csv of a labeled dataset")
    p.add_argument("--out", required=True, help="output report directory")
    p.add_argument("--method", action="append", choices=METHODS,
                   help="embedder; repeatable (default: dm lle)")
    p.add_argument("--classifier", choices=CLASSIFIERS)
    p.add_argument("--dim", type=int, help="embedding dimension k (default 200)")
    p.add_argument("--alpha", type=float, help="kernel scale (default 8)")
    p.add_argument("--t", type=int, help="diffusion time step (default 1)")
    p.add_argument("--neighbors", type=int, help="k-NN size for lle/isomap (default 10)")
    p.add_argument("--threshold", type=float, help="vote threshold (default 0.5)")
    p.add_argument("--seed", type=int, help="fold-plan seed (default 0)")
    p.add_argument("--test-size", type=int, dest="test_size",
                   help="held-out test subjects, stratified (default 100)")
    p.add_argument("--test-ids", dest="test_ids", help="file with one test subject id per line")
    p.add_argument("--threads", type=int, help="fold worker threads (default 1)")
    p.add_argument("--config", help="JSON config file")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("train", help="fit and persist a diffusion space plus classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--dim", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--t", type=int)
    p.add_argument("--classifier", choices=CLASSIFIERS)
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out-space", required=True, dest="out_space")
    p.add_argument("--out-model", required=True, dest="out_model")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify new samples with a persisted space")
    p.add_argument("--space", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("two-model", help="merge two votes.csv files into a confusion report")
    p.add_argument("--votes-a", required=True, dest="votes_a")
    p.add_argument("--votes-b", required=True, dest="votes_b")
    p.add_argument("--name-a", default="model_a", dest="name_a")
    p.add_argument("--name-b", default="model_b", dest="name_b")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_two_model)

    p = sub.add_parser("diagnose", help="extract the false-negative table from votes.csv")
    p.add_argument("--votes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
