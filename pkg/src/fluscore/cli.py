"""Command-line pipeline: synth | kmeans-train | kmeans-assign | train |
predict | eval | cooccur | gradcheck.

Exit codes: 0 success, 2 usage, 3 validation, 4 malformed file, 5 I/O,
1 anything else (including gradcheck failures). Errors print one line to
stderr: "error: <message>". FLUENCY_LOG={error,info,debug} controls logging.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import codebook as cbk
from . import evaluation, synth
from .corpus import (
    DEFAULT_FRAME_PERIOD,
    load_alignments,
    load_corpus_meta,
    load_manifest,
    load_phone_inventory,
    normalize_score,
    peek_feature_shape,
    read_feature_matrix,
)
from .errors import FormatError, TrainingError, ValidationError
from .scorer import AsrBasedScorerConfig, AsrFreeScorerConfig, predict_batch
from .training import TrainConfig, load_scorer_checkpoint, save_report, train

log = logging.getLogger("fluscore")


def _setup_logging() -> None:
    level = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("FLUENCY_LOG", "info").lower(), logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")


def _records_for_split(records, split: str):
    if split == "all":
        return records
    picked = [r for r in records if r.split == split]
    if not picked:
        raise ValidationError(f"no records in split {split!r}")
    return picked


def _add_corpus_flags(p: argparse.ArgumentParser, alignments: bool = False) -> None:
    p.add_argument("--manifest", required=True, help="utterance manifest (JSON lines)")
    p.add_argument("--features-dir", default=None,
                   help="base dir for relative feature paths (default: manifest dir)")
    if alignments:
        p.add_argument("--alignments", default=None, help="phone alignments (JSON lines)")
        p.add_argument("--phones", default=None, help="phone inventory (one label per line)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluscore",
        description="Speech fluency scoring from clustered frame features, "
                    "with an alignment-based baseline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted pause structure")
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-dev", type=int, default=100)
    p.add_argument("--n-test", type=int, default=100)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--n-speech-clusters", type=int, default=8)
    p.add_argument("--cluster-spread", type=float, default=1.0)
    p.add_argument("--frame-period", type=float, default=0.02)
    p.add_argument("--min-frames", type=int, default=50)
    p.add_argument("--max-frames", type=int, default=400)
    p.add_argument("--pause-ratio-min", type=float, default=0.0)
    p.add_argument("--pause-ratio-max", type=float, default=0.6)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("kmeans-train", help="fit a cluster codebook on training-split frames")
    _add_corpus_flags(p)
    p.add_argument("--out", required=True, help="codebook output path (.kmc)")
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train", choices=["train", "dev", "test", "all"])
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--subsample", type=int, default=None,
                   help="fit on this many uniformly sampled frames")
    p.add_argument("--standardize", action="store_true",
                   help="per-dimension z-normalization before clustering; stats go to a "
                        "<out>.norm sidecar that kmeans-assign picks up")
    p.set_defaults(func=cmd_kmeans_train)

    p = sub.add_parser("kmeans-assign", help="map every frame to its nearest centroid")
    _add_corpus_flags(p)
    p.add_argument("--codebook", required=True)
    p.add_argument("--out", required=True, help="cluster sequences output (JSON lines)")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_kmeans_assign)

    p = sub.add_parser("train", help="train a fluency scorer")
    _add_corpus_flags(p, alignments=True)
    p.add_argument("--variant", choices=["asr_free", "asr_based"], default="asr_free")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--codebook", default=None, help="needed by asr_free unless --clusters given")
    p.add_argument("--clusters", default=None, help="precomputed cluster sequences (JSON lines)")
    p.add_argument("--meta", default=None, help="corpus metadata JSON (frame period)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--cluster-embed-dim", type=int, default=6)
    p.add_argument("--blstm-layers", type=int, default=2)
    p.add_argument("--k", type=int, default=None,
                   help="cluster count for the embedding table (default: codebook's k)")
    p.add_argument("--lr", type=float, default=0.002)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=7)
    p.add_argument("--monitor", choices=["dev_mse", "dev_pcc"], default="dev_mse")
    p.add_argument("--min-improvement", type=float, default=1e-6)
    p.add_argument("--grad-clip", type=float, default=None)
    p.add_argument("--resume", action="store_true", help="continue from --out checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score utterances with a trained checkpoint")
    _add_corpus_flags(p, alignments=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="predictions output (JSON lines)")
    p.add_argument("--codebook", default=None)
    p.add_argument("--clusters", default=None)
    p.add_argument("--meta", default=None)
    p.add_argument("--split", default="test", choices=["train", "dev", "test", "all"])
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="Pearson correlation of predictions against human scores")
    _add_corpus_flags(p)
    p.add_argument("--predictions", required=True, help="output of `predict`")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--split", default="test", choices=["train", "dev", "test", "all"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cooccur", help="phone/cluster-index co-occurrence heatmap data")
    p.add_argument("--alignments", required=True)
    p.add_argument("--clusters", required=True, help="cluster sequences (JSON lines)")
    p.add_argument("--phones", required=True)
    p.add_argument("--codebook", default=None, help="source of k (or pass --k)")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", required=True, help="heatmap CSV path")
    p.set_defaults(func=cmd_cooccur)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and scorer")
    p.add_argument("--seeds", type=int, default=20, help="random instances per check")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def cmd_synth(args) -> int:
    cfg = synth.SynthConfig(
        n_train=args.n_train, n_dev=args.n_dev, n_test=args.n_test,
        feature_dim=args.feature_dim, n_speech_clusters=args.n_speech_clusters,
        cluster_spread=args.cluster_spread, frame_period=args.frame_period,
        min_frames=args.min_frames, max_frames=args.max_frames,
        pause_ratio_min=args.pause_ratio_min, pause_ratio_max=args.pause_ratio_max,
        seed=args.seed,
    )
    summary = synth.generate(cfg, args.out, threads=args.threads)
    log.info("synth: wrote %d utterances to %s", summary["utterances"], args.out)
    print(json.dumps({"out": str(args.out), **summary}))
    return 0


def _collect_frames(records):
    mats = [read_feature_matrix(r.feature_path).values for r in records]
    return np.concatenate(mats, axis=0).astype(np.float64)


def cmd_kmeans_train(args) -> int:
    records = _records_for_split(load_manifest(args.manifest, args.features_dir), args.split)
    frames = _collect_frames(records)
    norm_path = Path(args.out).with_name(Path(args.out).name + ".norm")
    if args.standardize:
        mean = frames.mean(axis=0)
        std = frames.std(axis=0)
        std[std < 1e-12] = 1.0
        frames = (frames - mean) / std
        norm_path.write_text(json.dumps({"mean": mean.tolist(), "std": std.tolist()}) + "\n")
        log.info("kmeans-train: wrote standardization stats to %s", norm_path)
    elif norm_path.exists():
        raise ValidationError(
            f"stale standardization sidecar {norm_path}; remove it or pass --standardize"
        )
    cb = cbk.fit_kmeans(frames, k=args.k, seed=args.seed, max_iters=args.max_iters,
                        tol=args.tol, subsample=args.subsample, restarts=args.restarts)
    cbk.save_codebook(cb, args.out)
    log.info("kmeans-train: k=%d over %d frames, inertia %.6g, %d iterations",
             args.k, frames.shape[0], cb.inertia, len(cb.inertia_history))
    print(json.dumps({"out": str(args.out), "k": cb.k, "dim": cb.dim,
                      "frames": int(frames.shape[0]), "inertia": cb.inertia}))
    return 0


def _load_standardization(codebook_path):
    norm_path = Path(codebook_path).with_name(Path(codebook_path).name + ".norm")
    if not norm_path.exists():
        return None
    obj = json.loads(norm_path.read_text())
    return np.asarray(obj["mean"], dtype=np.float64), np.asarray(obj["std"], dtype=np.float64)


def cmd_kmeans_assign(args) -> int:
    records = load_manifest(args.manifest, args.features_dir)
    cb = cbk.load_codebook(args.codebook)
    stats = _load_standardization(args.codebook)

    def assign_one(record):
        values = read_feature_matrix(record.feature_path).values.astype(np.float64)
        if stats is not None:
            values = (values - stats[0]) / stats[1]
        return cbk.assign(cb, values)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            sequences = dict(zip((r.id for r in records), pool.map(assign_one, records)))
    else:
        sequences = {r.id: assign_one(r) for r in records}
    cbk.save_cluster_sequences(sequences, args.out)
    log.info("kmeans-assign: %d utterances -> %s", len(sequences), args.out)
    return 0


def _frame_period_from(args) -> float:
    if args.meta is not None:
        return load_corpus_meta(args.meta).frame_period
    return DEFAULT_FRAME_PERIOD


def _scorer_inputs(args, records):
    """Shared between train and predict: variant-specific data sources."""
    kwargs: dict = {}
    if args.variant == "asr_free":
        if args.clusters is not None:
            kwargs["cluster_sequences"] = cbk.load_cluster_sequences(args.clusters)
        elif args.codebook is not None:
            kwargs["codebook"] = cbk.load_codebook(args.codebook)
        else:
            raise ValidationError("asr_free needs --clusters or --codebook")
    else:
        if args.alignments is None or args.phones is None:
            raise ValidationError("asr_based needs --alignments and --phones")
        kwargs["alignments"] = load_alignments(args.alignments)
        kwargs["inventory"] = load_phone_inventory(args.phones)
        kwargs["frame_period"] = _frame_period_from(args)
    return kwargs


def cmd_train(args) -> int:
    records = load_manifest(args.manifest, args.features_dir)
    train_records = _records_for_split(records, "train")
    dev_records = _records_for_split(records, "dev")
    _, feature_dim = peek_feature_shape(train_records[0].feature_path)
    data = _scorer_inputs(args, records)

    if args.variant == "asr_free":
        if "codebook" in data:
            k = data["codebook"].k
            if args.k is not None and args.k != k:
                raise ValidationError(f"--k {args.k} contradicts codebook k={k}")
            if data["codebook"].dim != feature_dim:
                raise ValidationError(
                    f"codebook dim {data['codebook'].dim} != feature dim {feature_dim}"
                )
        elif args.k is None:
            raise ValidationError("--k is required when training from --clusters")
        else:
            k = args.k
        scorer_cfg = AsrFreeScorerConfig(
            feature_dim=feature_dim, hidden_dim=args.hidden_dim, cluster_count=k,
            cluster_embed_dim=args.cluster_embed_dim, blstm_layers=args.blstm_layers)
    else:
        scorer_cfg = AsrBasedScorerConfig(
            feature_dim=feature_dim, phone_inventory_size=len(data["inventory"]),
            hidden_dim=args.hidden_dim, blstm_layers=args.blstm_layers)

    train_cfg = TrainConfig(lr=args.lr, batch_size=args.batch_size,
                            max_epochs=args.max_epochs, patience=args.patience,
                            seed=args.seed, monitor=args.monitor,
                            min_improvement=args.min_improvement, grad_clip=args.grad_clip)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, scorer_cfg, report = train(train_records, dev_records, scorer_cfg, train_cfg,
                                       checkpoint_dir=out_dir, resume=args.resume, **data)
    save_report(report, out_dir / "report.jsonl")
    log.info("train: best epoch %d (%s=%.6g), stopped by %s",
             report.best_epoch, report.monitor, report.best_value, report.stop_reason)
    print(json.dumps({"checkpoint": str(out_dir / "best.ckpt"),
                      "best_epoch": report.best_epoch, "monitor": report.monitor,
                      "best_value": report.best_value, "epochs": len(report.epochs),
                      "stop_reason": report.stop_reason}))
    return 0


def cmd_predict(args) -> int:
    params, scorer_cfg = load_scorer_checkpoint(args.checkpoint)
    args.variant = scorer_cfg.variant
    records = _records_for_split(load_manifest(args.manifest, args.features_dir), args.split)
    data = _scorer_inputs(args, records)
    predictions = predict_batch(records, params, scorer_cfg,
                                batch_size=args.batch_size, **data)
    with open(args.out, "w") as f:
        for p in predictions:
            f.write(json.dumps({"id": p.utterance_id, "score_norm": p.score_norm,
                                "score_denorm": p.score_denorm}) + "\n")
    log.info("predict: %d predictions -> %s", len(predictions), args.out)
    return 0


def cmd_eval(args) -> int:
    records = _records_for_split(load_manifest(args.manifest, args.features_dir), args.split)
    by_id = {}
    for line in Path(args.predictions).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        by_id[obj["id"]] = float(obj["score_norm"])
    missing = [r.id for r in records if r.id not in by_id]
    if missing:
        raise ValidationError(f"predictions missing for {len(missing)} utterances "
                              f"(first: {missing[0]!r})")
    pred = np.array([by_id[r.id] for r in records])
    truth = np.array([normalize_score(r.score_raw) for r in records])
    evaluation.write_eval_report(args.out, args.split, pred, truth)
    report = json.loads(Path(args.out).read_text())
    log.info("eval: split=%s n=%d pcc=%.4f mse=%.6g",
             report["split"], report["n"], report["pcc"], report["mse"])
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_cooccur(args) -> int:
    if args.codebook is not None:
        k = cbk.load_codebook(args.codebook).k
        if args.k is not None and args.k != k:
            raise ValidationError(f"--k {args.k} contradicts codebook k={k}")
    elif args.k is not None:
        k = args.k
    else:
        raise ValidationError("cooccur needs --codebook or --k")
    alignments = load_alignments(args.alignments)
    sequences = cbk.load_cluster_sequences(args.clusters)
    inventory = load_phone_inventory(args.phones)
    matrix = evaluation.build_cooccurrence(alignments, sequences, inventory, k)
    probs, zero_columns = evaluation.conditional_phone_given_index(matrix)
    evaluation.export_heatmap_data(probs, matrix.row_labels, args.out)
    log.info("cooccur: %d aligned frames, %d unaligned, %d empty columns -> %s",
             matrix.total_frames, matrix.unaligned_frames, len(zero_columns), args.out)
    print(json.dumps({"out": str(args.out), "aligned_frames": matrix.total_frames,
                      "unaligned_frames": matrix.unaligned_frames,
                      "zero_columns": zero_columns}))
    return 0


def cmd_gradcheck(args) -> int:
    from .nnet.gradcheck import run_standard_checks

    rows = run_standard_checks(seeds=range(args.seeds), tol=args.tol)
    width = max(len(r["check"]) for r in rows)
    failed = 0
    for r in rows:
        status = "PASS" if r["ok"] else "FAIL"
        print(f"{r['check']:<{width}}  {r['max_rel_err']:.3e}  {status}")
        failed += 0 if r["ok"] else 1
    print(f"{failed} of {len(rows)} checks failed" if failed
          else f"all {len(rows)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 5
    except TrainingError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - last resort
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
