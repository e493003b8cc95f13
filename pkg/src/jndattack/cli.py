"""Command-line surface: train, attack, compare, sweep, stats.

Every run writes a manifest next to its outputs recording the command,
configuration, seed, model hash, dataset identifier, toolkit version and
wall time. All result CSV/JSON files are bit-reproducible for a fixed
seed; the manifest is the one file that is not (it carries wall-clock).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from . import classifier as clf
from . import data_io
from . import metrics
from . import stats as statsmod
from .attacks import ATTACKS, AttackConfig, run_attack
from .errors import ConfigurationError, DimensionError, FormatError, InputError, JndError
from .sweep import SweepSpec, run_sweep, save_sweep_csv, save_sweep_json

CSV_SCHEMA = "schema=1"

SUMMARY_COLUMNS = [
    "method", "attempted", "succeeded", "success_rate", "mean_first_fool_iteration",
    "mean_iterations", "mean_psnr", "mean_ssim", "mean_uqi", "mean_scc", "mean_vifp",
    "mean_l1", "mean_l2", "mean_linf", "mean_l1_per_pixel", "mean_l2_rms",
]


def _seed_from(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("JND_SEED")
    return int(env) if env else 0


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _parse_synthetic(spec: str):
    try:
        classes, per_class = spec.lower().split("x")
        return int(classes), int(per_class)
    except ValueError:
        raise InputError(f"--synthetic expects CLASSESxPER_CLASS, got {spec!r}") from None


def _load_dataset(args, seed):
    """Returns (dataset, identifier)."""
    if args.synthetic:
        classes, per_class = _parse_synthetic(args.synthetic)
        ds = data_io.generate_synthetic(classes, per_class, seed=seed)
        return ds, f"synthetic:{classes}x{per_class}:seed{seed}"
    if args.dataset:
        parts = [data_io.load_cifar10_batch(p) for p in args.dataset]
        images = [img for ds in parts for img in ds.images]
        labels = [y for ds in parts for y in ds.labels]
        ds = data_io.Dataset(images, labels, parts[0].class_names)
        ident = "+".join(f"{os.path.basename(p)}:{_sha256(p)[:12]}" for p in args.dataset)
        return ds, ident
    raise InputError("provide --dataset PATH or --synthetic CxN")


def _write_manifest(out_dir, command, config, seed, elapsed, **extra):
    manifest = {
        "command": list(command),
        "config": config,
        "seed": seed,
        "toolkit_version": __version__,
        "wall_clock_seconds": elapsed,
    }
    manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)


def _json_dump(payload, path):
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)


def _write_train_manifest(path, command, config, seed, elapsed, **extra):
    manifest = {
        "command": list(command),
        "config": config,
        "seed": seed,
        "toolkit_version": __version__,
        "wall_clock_seconds": elapsed,
    }
    manifest.update(extra)
    with open(path, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)


# ---------------------------------------------------------------- train

def cmd_train(args):
    seed = _seed_from(args)
    t0 = time.time()
    dataset, dataset_id = _load_dataset(args, seed)
    spec = clf.desk_model_spec(
        input_shape=dataset.images[0].shape,
        num_classes=len(dataset.class_names),
    )
    model = clf.Model(spec, clf.init_parameters(spec, seed))
    schedule = clf.TrainSchedule(epochs=args.epochs, batch_size=args.batch_size,
                                 learning_rate=args.lr, seed=seed)
    params, log = clf.train(model, dataset, schedule)
    trained = clf.Model(spec, params)
    temperature = None
    if args.calibrate_margin > 0 and args.epochs > 0:
        params, temperature = clf.temperature_scale(
            trained, dataset.images, dataset.labels, args.calibrate_margin)
        trained = clf.Model(spec, params)
    clf.save_checkpoint(trained, args.out)
    for epoch, acc in enumerate(log, 1):
        print(f"epoch {epoch}: accuracy {acc:.4f}")
    final = log[-1] if log else None
    print(f"saved {args.out} (sha256 {_sha256(args.out)[:12]})")
    _json_dump({"accuracy_log": log, "temperature": temperature},
               args.out + ".train.json")
    _write_train_manifest(args.out + ".manifest.json", args._argv,
                    {"epochs": args.epochs, "batch_size": args.batch_size,
                     "lr": args.lr, "calibrate_margin": args.calibrate_margin},
                    seed, time.time() - t0,
                    dataset=dataset_id, model_checkpoint_sha256=_sha256(args.out),
                    final_accuracy=final)
    return 0


# ---------------------------------------------------------------- attack

def _attack_config_from(args) -> AttackConfig:
    lams = [float(v) for v in args.lambdas.split(",")]
    if len(lams) != 4:
        raise InputError(f"--lambda expects four comma-separated values, got {args.lambdas!r}")
    target = None
    stop_rule = "first_label_flip"
    threshold = None
    if args.mode.startswith("targeted:"):
        target = int(args.mode.split(":", 1)[1])
    elif args.mode != "nontargeted":
        raise InputError(f"--mode must be nontargeted or targeted:<label>, got {args.mode!r}")
    if args.stop.startswith("confidence:"):
        stop_rule = "confidence_reached"
        threshold = float(args.stop.split(":", 1)[1])
    elif args.stop != "first_label_flip":
        raise InputError(f"--stop must be first_label_flip or confidence:<t>, got {args.stop!r}")
    config = AttackConfig(
        lambda1=lams[0], lambda2=lams[1], lambda3=lams[2], lambda4=lams[3],
        alpha=args.alpha, epsilon=args.epsilon, max_iterations=args.max_iters,
        confidence_threshold=threshold, target_label=target, stop_rule=stop_rule,
        run_to_cap=args.trace,
    )
    config.validate()
    return config


def _breakdown_dict(cb):
    return {"total": cb.total, "loss_term": cb.loss_term, "l2_term": cb.l2_term,
            "br_term": cb.br_term, "tv_term": cb.tv_term}


def attack_one(model, method, image, true_label, config, image_id):
    """Run one attack and build its JSON-ready record."""
    result = run_attack(method, model, image, true_label, config)
    adv = result.adversarial_image
    lp = metrics.lp_distances(image, adv)
    n = image.size
    k = result.first_fool_iteration
    record = {
        "image_id": image_id,
        "method": method,
        "true_label": true_label,
        "final_label": result.label_trajectory[-1],
        "success": result.success,
        "K": k,
        "iterations": result.iterations,
        "confidences": [round(c, 10) for c in result.confidence_trajectory],
        "l1": lp.l1, "l2": lp.l2, "linf": lp.linf,
        "l1_per_pixel": lp.l1 / n, "l2_rms": lp.l2 / np.sqrt(n),
        "psnr": metrics.psnr(image, adv),
        "ssim": metrics.ssim(image, adv),
        "uqi": metrics.uqi(image, adv),
        "scc": metrics.scc(image, adv),
        "vifp": metrics.vifp(image, adv),
        "cost_at_K": _breakdown_dict(result.cost_trajectory[k]) if k is not None else None,
    }
    return record, result


def _worker(payload):
    model, method, image, label, config, image_id = payload
    record, result = attack_one(model, method, image, label, config, image_id)
    return record, result.adversarial_image, result.confidence_trajectory


def cmd_attack(args):
    seed = _seed_from(args)
    t0 = time.time()
    model = clf.load_checkpoint(args.model)
    dataset, dataset_id = _load_dataset(args, seed)
    config = _attack_config_from(args)
    if args.method not in ATTACKS:
        raise InputError(f"unknown method {args.method!r}")
    os.makedirs(args.out, exist_ok=True)

    selected = []
    skipped_misclassified = []
    skipped_target_conflict = []
    for idx, (image, label) in enumerate(zip(dataset.images, dataset.labels)):
        if len(selected) >= args.count:
            break
        if clf.predict(model, image).label != label:
            skipped_misclassified.append(idx)
            continue
        if config.targeted and config.target_label == label:
            skipped_target_conflict.append(idx)
            continue
        selected.append((idx, image, label))
    if not selected:
        if skipped_target_conflict and not skipped_misclassified:
            raise ConfigurationError(
                "targeted attack: every candidate image already carries the target label")
        raise InputError("no correctly classified images to attack")

    jobs = [(model, args.method, img, y, config, idx) for idx, img, y in selected]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            outputs = list(pool.map(_worker, jobs))
    else:
        outputs = [_worker(j) for j in jobs]

    records = []
    for (idx, image, label), (record, adv, confs) in zip(selected, outputs):
        records.append(record)
        data_io.save_ppm(image, os.path.join(args.out, f"orig_{idx:05d}.ppm"))
        data_io.save_ppm(adv, os.path.join(args.out, f"adv_{idx:05d}.ppm"))
        if args.trace:
            with open(os.path.join(args.out, f"trace_{idx:05d}.csv"), "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow([CSV_SCHEMA])
                writer.writerow(["iteration", "confidence"])
                for it, conf in enumerate(confs):
                    writer.writerow([it, repr(conf)])

    _json_dump(records, os.path.join(args.out, "records.json"))
    _write_summary_csv([(args.method, records)], os.path.join(args.out, "summary.csv"))
    _write_manifest(
        args.out, args._argv,
        {"method": args.method, "attack": asdict(config), "count": args.count,
         "metric_config": metrics.METRIC_CONFIG},
        seed, time.time() - t0,
        dataset=dataset_id, model_checkpoint_sha256=_sha256(args.model),
        skipped_misclassified=skipped_misclassified,
        skipped_target_conflict=skipped_target_conflict,
        attacked=len(selected),
    )
    rate = sum(r["success"] for r in records) / len(records)
    print(f"{args.method}: attacked {len(selected)} images, success rate {rate:.3f}, "
          f"skipped {len(skipped_misclassified)} misclassified")
    return 0


def _mean(rows, key):
    vals = [r[key] for r in rows if r[key] is not None]
    return sum(vals) / len(vals) if vals else None


def _write_summary_csv(method_records, path):
    """One aggregate row per method; means are over successful attacks."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow([CSV_SCHEMA])
        writer.writerow(SUMMARY_COLUMNS)
        for method, records in method_records:
            wins = [r for r in records if r["success"]]
            row = [method, len(records), len(wins),
                   repr(len(wins) / len(records)) if records else "0"]
            for key in ("K", "iterations", "psnr", "ssim", "uqi", "scc", "vifp",
                        "l1", "l2", "linf", "l1_per_pixel", "l2_rms"):
                val = _mean(wins, key)
                row.append(repr(val) if val is not None else "")
            writer.writerow(row)


# ---------------------------------------------------------------- compare / stats

def _load_attack_dir(path):
    records_path = os.path.join(path, "records.json")
    if not os.path.exists(records_path):
        raise InputError(f"{path}: no records.json (not an attack output directory?)")
    with open(records_path) as f:
        records = json.load(f)
    if not records:
        raise InputError(f"{path}: empty records")
    methods = {r["method"] for r in records}
    if len(methods) != 1:
        raise InputError(f"{path}: mixed methods {sorted(methods)}")
    return methods.pop(), records


def _image_pairs(path, records, successes_only=True):
    pairs = []
    for r in records:
        if successes_only and not r["success"]:
            continue
        idx = r["image_id"]
        orig = data_io.load_ppm(os.path.join(path, f"orig_{idx:05d}.ppm"))
        adv = data_io.load_ppm(os.path.join(path, f"adv_{idx:05d}.ppm"))
        pairs.append((orig, adv))
    return pairs


def _check_id_sets(dirs_records):
    id_sets = {path: {r["image_id"] for r in records}
               for path, (_, records) in dirs_records.items()}
    reference = None
    ref_path = None
    for path, ids in id_sets.items():
        if reference is None:
            reference, ref_path = ids, path
        elif ids != reference:
            missing = sorted(reference - ids)
            extra = sorted(ids - reference)
            raise InputError(
                f"image id sets differ between {ref_path} and {path}: "
                f"missing {missing[:10]}, extra {extra[:10]}"
            )


def _stats_payload(report):
    payload = {"sharpest_l2_method": report.sharpest_l2_method,
               "conventions": report.conventions, "methods": {}}
    for name, ms in report.methods.items():
        payload["methods"][name] = {
            "count": ms.count,
            "kl_samples": ms.kl_samples.tolist(),
            "l2_samples": ms.l2_samples.tolist(),
            "kl_mean": ms.kl_mean, "kl_std": ms.kl_std,
            "l2_mean": ms.l2_mean, "l2_std": ms.l2_std,
            "kl_kde": {"grid": ms.kl_kde.grid.tolist(),
                       "density": ms.kl_kde.density.tolist(),
                       "bandwidth": ms.kl_kde.bandwidth},
            "l2_kde": {"grid": ms.l2_kde.grid.tolist(),
                       "density": ms.l2_kde.density.tolist(),
                       "bandwidth": ms.l2_kde.bandwidth},
        }
    return payload


def _write_kde_csvs(report, out_dir):
    for name, ms in report.methods.items():
        for kind, est in (("kl", ms.kl_kde), ("l2", ms.l2_kde)):
            path = os.path.join(out_dir, f"kde_{name}_{kind}.csv")
            with open(path, "w", newline="") as f:
                writer = csv.writer(f)
                writer.writerow([CSV_SCHEMA])
                writer.writerow(["grid", "density"])
                for g, d in zip(est.grid, est.density):
                    writer.writerow([repr(float(g)), repr(float(d))])


def _aggregate_dirs(dirs):
    dirs_records = {}
    for path in dirs:
        method, records = _load_attack_dir(path)
        if method in {m for m, _ in dirs_records.values()}:
            raise InputError(f"method {method!r} appears in more than one directory")
        dirs_records[path] = (method, records)
    _check_id_sets(dirs_records)
    return dirs_records


def cmd_compare(args):
    t0 = time.time()
    if len(args.dirs) < 2:
        raise InputError("compare needs at least two attack output directories")
    dirs_records = _aggregate_dirs(args.dirs)
    os.makedirs(args.out, exist_ok=True)
    method_records = [(method, records) for method, records in dirs_records.values()]
    _write_summary_csv(method_records, os.path.join(args.out, "comparison.csv"))
    pairs_by_method = {
        method: _image_pairs(path, records)
        for path, (method, records) in dirs_records.items()
    }
    report = statsmod.population_compare(pairs_by_method)
    _json_dump(_stats_payload(report), os.path.join(args.out, "stats.json"))
    _write_kde_csvs(report, args.out)
    _write_manifest(args.out, args._argv,
                    {"dirs": list(args.dirs)}, _seed_from(args), time.time() - t0)
    print(f"compared {len(dirs_records)} methods; sharpest L2: {report.sharpest_l2_method}")
    return 0


def cmd_stats(args):
    t0 = time.time()
    dirs_records = _aggregate_dirs(args.dirs)
    os.makedirs(args.out, exist_ok=True)
    pairs_by_method = {
        method: _image_pairs(path, records)
        for path, (method, records) in dirs_records.items()
    }
    report = statsmod.population_compare(pairs_by_method)
    _json_dump(_stats_payload(report), os.path.join(args.out, "stats.json"))
    _write_kde_csvs(report, args.out)
    _write_manifest(args.out, args._argv,
                    {"dirs": list(args.dirs)}, _seed_from(args), time.time() - t0)
    print(f"stats written for {len(dirs_records)} methods")
    return 0


# ---------------------------------------------------------------- sweep

def cmd_sweep(args):
    seed = _seed_from(args)
    t0 = time.time()
    model = clf.load_checkpoint(args.model)
    dataset, dataset_id = _load_dataset(args, seed)
    with open(args.grid) as f:
        grid_spec = json.load(f)
    method = grid_spec.get("method")
    if method not in ATTACKS:
        raise InputError(f"grid file must set method to one of {sorted(ATTACKS)}")
    base = AttackConfig(
        max_iterations=grid_spec.get("max_iterations", 1000),
        stop_rule=grid_spec.get("stop_rule", "first_label_flip"),
        confidence_threshold=grid_spec.get("confidence_threshold"),
    )
    spec = SweepSpec(method=method, grid=grid_spec["grid"], base=base,
                     success_floor=grid_spec.get("success_floor", 0.9))

    selected, ids = [], []
    for idx, (image, label) in enumerate(zip(dataset.images, dataset.labels)):
        if len(selected) >= args.count:
            break
        if clf.predict(model, image).label == label:
            selected.append((image, label))
            ids.append(idx)
    if not selected:
        raise InputError("no correctly classified validation images")
    total = 1
    for values in spec.grid.values():
        total *= len(values)
    print(f"sweep: {total} cells x {len(selected)} validation images")

    result = run_sweep(model, [s[0] for s in selected], [s[1] for s in selected],
                       spec, image_ids=ids)
    os.makedirs(args.out, exist_ok=True)
    save_sweep_csv(result, os.path.join(args.out, "sweep.csv"))
    save_sweep_json(result, os.path.join(args.out, "sweep.json"))
    _write_manifest(args.out, args._argv,
                    {"grid": grid_spec, "count": args.count}, seed, time.time() - t0,
                    dataset=dataset_id, model_checkpoint_sha256=_sha256(args.model))
    best = result.best
    print(f"best cell: {best.params} objective {best.objective:.6g} "
          f"(success {best.success_rate:.2f})")
    return 0


# ---------------------------------------------------------------- parser

def build_parser():
    parser = argparse.ArgumentParser(prog="jnd", description=__doc__)
    parser.add_argument("--seed", type=int, default=None,
                        help="RNG seed (falls back to JND_SEED, then 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the desk classifier")
    p.add_argument("--dataset", nargs="+", help="CIFAR-10 binary batch file(s)")
    p.add_argument("--synthetic", help="CLASSESxPER_CLASS synthetic dataset")
    p.add_argument("--epochs", type=int, default=12)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--calibrate-margin", type=float, default=8.0,
                   help="post-training confidence calibration target (0 disables)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("attack", help="run one attack method over a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", nargs="+")
    p.add_argument("--synthetic")
    p.add_argument("--method", required=True, choices=sorted(ATTACKS))
    p.add_argument("--mode", default="nontargeted",
                   help="nontargeted or targeted:<label>")
    p.add_argument("--lambda", dest="lambdas", default="10,1,1,10",
                   help="lambda1..lambda4, comma separated")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--epsilon", type=float, default=0.5)
    p.add_argument("--stop", default="first_label_flip",
                   help="first_label_flip or confidence:<threshold>")
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--trace", action="store_true",
                   help="run to the iteration cap and export per-image confidence CSVs")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("compare", help="aggregate >=2 attack output directories")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("stats", help="KL/L2 population statistics for attack outputs")
    p.add_argument("dirs", nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("sweep", help="grid hyperparameter search")
    p.add_argument("--model", required=True)
    p.add_argument("--grid", required=True, help="JSON grid specification file")
    p.add_argument("--dataset", nargs="+")
    p.add_argument("--synthetic")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.fn(args)
    except (InputError, ConfigurationError, FormatError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except JndError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
