"""Batch command-line front end.

Subcommands: pretrain, dump-latents, finetune-decoder, finetune-hyper,
encode, decode, eval, bdrate, selftest. Every artifact-producing command
writes a ``<output>.run`` manifest recording arguments and input hashes;
existing outputs are never overwritten without --force.

Exit codes: 0 success, 1 usage error, 2 data error, 3 selftest failure.
Environment: LATQ_OUT_DIR prefixes relative output paths, LATQ_JOBS sets
the default worker count.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import codec, datasets, manifest, metrics, training
from .errors import LatqError
from .images import read_pgm, write_pgm
from .metrics import RdCurve, RdPoint
from .tensors import QuantKind

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_SELFTEST = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _out_path(path: str) -> Path:
    base = os.environ.get("LATQ_OUT_DIR")
    p = Path(path)
    if base and not p.is_absolute():
        return Path(base) / p
    return p


def _default_jobs() -> int:
    return int(os.environ.get("LATQ_JOBS", "1"))


def _guard_outputs(force: bool, *paths: Path):
    for p in paths:
        if p.exists() and not force:
            raise LatqError(f"{p} exists; re-run with --force to overwrite")


def _write_run_manifest(out: Path, args: dict, inputs: dict):
    fields = {"command": args.pop("_cmd")}
    fields.update({f"arg_{k}": v for k, v in args.items() if v is not None})
    fields.update({f"input_{k}": v for k, v in inputs.items()})
    manifest.write_manifest(out.with_name(out.name + ".run"), fields)


def _train_flags(p: _Parser, epochs: int, batch: int, lr: float):
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--batch-size", type=int, default=batch)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")


def _train_config(ns) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=ns.epochs, batch_size=ns.batch_size, lr=ns.lr, seed=ns.seed
    )


def _load_patches(images_dir: str) -> tuple[np.ndarray, str]:
    imgs = datasets.load_corpus(images_dir)
    return datasets.corpus_patch_matrix(imgs), datasets.corpus_digest(images_dir)


# -- subcommands ---------------------------------------------------------


def cmd_pretrain(ns) -> int:
    patches, digest = _load_patches(ns.images)
    out = _out_path(ns.out)
    _guard_outputs(ns.force, out.with_suffix(".manifest"), out.with_suffix(".params"))
    model = codec.build_model(
        QuantKind[ns.kind.upper()], lam=ns.lam, seed=ns.seed,
        delta=ns.delta, lambda_q=ns.lambda_q,
    )
    hist = training.pretrain(model, patches, _train_config(ns))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_run_manifest(out, {
        "_cmd": "pretrain", "images": ns.images, "lambda": ns.lam,
        "kind": ns.kind, "epochs": ns.epochs, "batch_size": ns.batch_size,
        "lr": ns.lr, "seed": ns.seed, "delta": ns.delta, "lambda_q": ns.lambda_q,
        "final_loss": hist.final_loss, "lr_decays": hist.schedule.decays,
    }, {"dataset_sha256": digest})
    print(f"pretrained {ns.kind} model lambda={ns.lam}: "
          f"final loss {hist.final_loss:.3f} -> {out}")
    return EXIT_OK


def cmd_dump_latents(ns) -> int:
    model = codec.CodecModel.load(ns.model)
    patches, digest = _load_patches(ns.images)
    out = _out_path(ns.out)
    _guard_outputs(ns.force, out)
    jobs = ns.jobs
    if jobs > 1:
        blocks = np.array_split(np.arange(patches.shape[0]), jobs * 4)
        with ProcessPoolExecutor(jobs) as ex:
            parts = list(ex.map(_pool_block, [(ns.model, patches[b]) for b in blocks]))
        xs = np.concatenate([p[0] for p in parts])
        zs = np.concatenate([p[1] for p in parts])
    else:
        xs, zs = training.dump_latent_pool(model, patches)
    out.parent.mkdir(parents=True, exist_ok=True)
    datasets.write_pool(out, xs, zs)
    _write_run_manifest(out, {
        "_cmd": "dump-latents", "model": ns.model, "images": ns.images,
        "records": xs.shape[0], "kind": model.kind.name,
    }, {
        "dataset_sha256": digest,
        "model_params_sha256": manifest.sha256_bytes(model.store.flat.tobytes()),
    })
    print(f"pooled {xs.shape[0]} records ({model.kind.name}) -> {out}")
    return EXIT_OK


def _pool_block(task):
    stem, block = task
    model = _cached_model(stem)
    return training.dump_latent_pool(model, block)


_MODEL_CACHE: dict = {}


def _cached_model(stem: str) -> codec.CodecModel:
    if stem not in _MODEL_CACHE:
        _MODEL_CACHE[stem] = codec.CodecModel.load(stem)
    return _MODEL_CACHE[stem]


def cmd_finetune_decoder(ns) -> int:
    anchor = codec.CodecModel.load(ns.model)
    pool_x, pool_z = datasets.read_pool(ns.pool)
    out = _out_path(ns.out)
    _guard_outputs(ns.force, out.with_suffix(".manifest"), out.with_suffix(".params"))
    model, hist = training.finetune_decoder(anchor, pool_x, pool_z, _train_config(ns))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_run_manifest(out, {
        "_cmd": "finetune-decoder", "model": ns.model, "pool": ns.pool,
        "epochs": ns.epochs, "batch_size": ns.batch_size, "lr": ns.lr,
        "seed": ns.seed, "final_loss": hist.final_loss,
    }, {
        "pool_sha256": manifest.sha256_file(ns.pool),
        "anchor_params_sha256": manifest.sha256_bytes(anchor.store.flat.tobytes()),
    })
    print(f"decoder finetuned: final loss {hist.final_loss:.3f} -> {out}")
    return EXIT_OK


def cmd_finetune_hyper(ns) -> int:
    anchor = codec.CodecModel.load(ns.model)
    patches, digest = _load_patches(ns.images)
    out = _out_path(ns.out)
    _guard_outputs(ns.force, out.with_suffix(".manifest"), out.with_suffix(".params"))
    model, hist = training.finetune_hyper_and_decoder(anchor, patches, _train_config(ns))
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    _write_run_manifest(out, {
        "_cmd": "finetune-hyper", "model": ns.model, "images": ns.images,
        "epochs": ns.epochs, "batch_size": ns.batch_size, "lr": ns.lr,
        "seed": ns.seed, "final_loss": hist.final_loss,
    }, {
        "dataset_sha256": digest,
        "anchor_params_sha256": manifest.sha256_bytes(anchor.store.flat.tobytes()),
    })
    print(f"hypercoder+decoder finetuned: final loss {hist.final_loss:.3f} -> {out}")
    return EXIT_OK


def cmd_encode(ns) -> int:
    model = codec.CodecModel.load(ns.model)
    image = read_pgm(ns.image)
    if ns.pad:
        image = codec.pad_to_multiple(image, model.patch_size)
    out = _out_path(ns.out)
    _guard_outputs(ns.force, out)
    res = codec.encode_image(model, image)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(res.payload)
    _write_run_manifest(out, {
        "_cmd": "encode", "model": ns.model, "image": ns.image, "pad": ns.pad,
        "bpp": f"{res.bpp:.6f}", "psnr_db": f"{res.psnr:.6f}",
    }, {
        "image_sha256": manifest.sha256_file(ns.image),
        "model_params_sha256": manifest.sha256_bytes(model.store.flat.tobytes()),
    })
    print(f"encoded {ns.image}: {len(res.payload)} bytes, "
          f"bpp={res.bpp:.4f}, psnr={res.psnr:.4f} dB")
    return EXIT_OK


def cmd_decode(ns) -> int:
    model = codec.CodecModel.load(ns.model)
    blob = Path(ns.bitstream).read_bytes()
    out = _out_path(ns.out)
    _guard_outputs(ns.force, out)
    res = codec.decode_image(model, blob)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_pgm(out, res.image)
    print(f"decoded {ns.bitstream} -> {out} ({res.image.width}x{res.image.height})")
    return EXIT_OK


def _eval_one(task):
    stem, image_path = task
    model = _cached_model(stem)
    res = codec.encode_image(model, read_pgm(image_path))
    return res.bpp, res.psnr


def _eval_models(stems, image_paths, jobs: int):
    """(model, image) -> (bpp, psnr) grid, parallel over tasks, stable order."""
    tasks = [(s, str(p)) for s in stems for p in image_paths]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            flat = list(ex.map(_eval_one, tasks))
    else:
        flat = [_eval_one(t) for t in tasks]
    grid = {}
    k = 0
    for s in stems:
        for p in image_paths:
            grid[(s, str(p))] = flat[k]
            k += 1
    return grid


def _curves_from_grid(stems, lams, image_paths, grid):
    per_image = {}
    for p in image_paths:
        pts = [RdPoint(lam, *grid[(s, str(p))]) for s, lam in zip(stems, lams)]
        per_image[Path(p).name] = RdCurve(pts, min_points=min(4, len(pts)))
    return per_image


def cmd_eval(ns) -> int:
    stems = ns.models.split(",")
    models = [codec.CodecModel.load(s) for s in stems]
    lams = [m.lam for m in models]
    order = np.argsort(lams)[::-1]  # descending lambda = increasing rate
    stems = [stems[i] for i in order]
    lams = [lams[i] for i in order]
    image_paths = datasets.corpus_paths(ns.images)
    out = _out_path(ns.out)
    _guard_outputs(ns.force, out)

    if ns.sweep_lambda_q:
        return _sweep_lambda_q(ns, stems, lams, image_paths, out)

    grid = _eval_models(stems, image_paths, ns.jobs)
    per_image = _curves_from_grid(stems, lams, image_paths, grid)
    avg = metrics.average_curve(per_image)
    out.parent.mkdir(parents=True, exist_ok=True)
    metrics.write_rd_csv(out, avg)
    if ns.per_image:
        d = _out_path(ns.per_image)
        d.mkdir(parents=True, exist_ok=True)
        for name, curve in per_image.items():
            metrics.write_rd_csv(d / f"{Path(name).stem}.csv", curve)
    if ns.svg:
        from .plotsvg import line_plot_svg

        line_plot_svg(
            _out_path(ns.svg),
            {"codec": [(p.rate, p.quality) for p in avg.points]},
            "bits per pixel", "PSNR (dB)", title="rate-distortion",
        )
    _write_run_manifest(out, {
        "_cmd": "eval", "models": ns.models, "images": ns.images,
        "jobs": ns.jobs,
    }, {"dataset_sha256": datasets.corpus_digest(ns.images)})
    for p in avg.points:
        print(f"lambda={p.lam:g} bpp={p.rate:.4f} psnr={p.quality:.4f}")
    print(f"rd curve -> {out}")
    return EXIT_OK


def _sweep_lambda_q(ns, stems, lams, image_paths, out: Path) -> int:
    """Trellis rate-weight calibration: BD-rate vs a reference curve."""
    if not ns.ref_csv:
        raise LatqError("--sweep-lambda-q needs --ref-csv with the reference curve")
    ref = metrics.read_rd_csv(ns.ref_csv)
    values = [float(v) for v in ns.sweep_lambda_q.split(",")]
    results = []
    base_models = [codec.CodecModel.load(s) for s in stems]
    if any(m.kind != QuantKind.TCQ for m in base_models):
        raise LatqError("lambda_q sweep needs trellis-quantizer models")
    images = [read_pgm(p) for p in image_paths]
    for lq in values:
        pts = []
        for m, lam in zip(base_models, lams):
            m.lambda_q = lq
            vals = [codec.encode_image(m, img) for img in images]
            pts.append(RdPoint(lam, float(np.mean([v.bpp for v in vals])),
                               float(np.mean([v.psnr for v in vals]))))
        curve = RdCurve(pts, min_points=min(4, len(pts)))
        bd = metrics.bd_rate(curve, ref)
        results.append((lq, bd))
        print(f"lambda_q={lq:g}: BD-rate vs reference {bd:+.3f}%")
    best = min(results, key=lambda r: r[1])
    print(f"best lambda_q={best[0]:g} ({best[1]:+.3f}%)")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("lambda_q,bd_rate_pct\n")
        for lq, bd in results:
            fh.write(f"{lq},{bd:.6f}\n")
    _write_run_manifest(out, {
        "_cmd": "eval-sweep", "models": ns.models, "images": ns.images,
        "sweep": ns.sweep_lambda_q, "ref": ns.ref_csv,
    }, {"dataset_sha256": datasets.corpus_digest(ns.images)})
    return EXIT_OK


def cmd_bdrate(ns) -> int:
    if ns.test_dir or ns.ref_dir:
        if not (ns.test_dir and ns.ref_dir):
            raise LatqError("per-image mode needs both --test-dir and --ref-dir")
        rows = []
        for tpath in sorted(Path(ns.test_dir).glob("*.csv")):
            rpath = Path(ns.ref_dir) / tpath.name
            if not rpath.exists():
                raise LatqError(f"missing reference curve {rpath}")
            t = metrics.read_rd_csv(tpath, min_points=3)
            r = metrics.read_rd_csv(rpath, min_points=3)
            high, low = metrics.bd_rate_high_low(t, r)
            rows.append((tpath.stem, high, low))
        if not rows:
            raise LatqError("no curves found")
        if ns.report:
            metrics.write_bd_report(_out_path(ns.report), rows)
        for name, high, low in rows:
            print(f"{name}: high {high:+.3f}% low {low:+.3f}%")
        print(f"average: high {np.mean([r[1] for r in rows]):+.3f}% "
              f"low {np.mean([r[2] for r in rows]):+.3f}%")
        return EXIT_OK
    if not (ns.test and ns.ref):
        print("error: need --test and --ref (or --test-dir/--ref-dir)", file=sys.stderr)
        return EXIT_USAGE
    test = metrics.read_rd_csv(ns.test)
    ref = metrics.read_rd_csv(ns.ref)
    print(f"BD-rate: {metrics.bd_rate(test, ref):+.2f}%")
    return EXIT_OK


def cmd_selftest(ns) -> int:
    failures = _run_selftest(quick=ns.quick)
    if failures:
        for f in failures:
            print(f"FAIL {f}")
        return EXIT_SELFTEST
    print("selftest: all checks passed")
    return EXIT_OK


def _run_selftest(quick: bool = False) -> list[str]:
    from . import autodiff as ad
    from .entropy import GaussianParams, batch_tables, usq_index_masses
    from .rangecoder import rc_decode, rc_encode
    from .trellis import (
        TrellisConfig, tcq_brute_force, tcq_encode_viterbi, trellis_path_cost,
    )

    failures = []
    rng = np.random.default_rng(20240101)

    # trellis optimality against exhaustive search
    n_inst = 20 if quick else 60
    for trial in range(n_inst):
        n = int(rng.integers(2, 9))
        z = rng.uniform(-6, 6, n)
        mu = rng.uniform(-2, 2, n)
        sg = rng.uniform(0.2, 2, n)
        cfg = TrellisConfig(delta=1.0, lambda_q=float(rng.choice([0.0, 0.1, 0.3, 1.0])))
        cv = trellis_path_cost(z, mu, sg, tcq_encode_viterbi(z, mu, sg, cfg), cfg)
        cb = trellis_path_cost(z, mu, sg, tcq_brute_force(z, mu, sg, cfg), cfg)
        if abs(cv - cb) > 1e-9:
            failures.append(f"trellis optimality: instance {trial} {cv} != {cb}")
            break

    # coder round trip
    n_streams = 50 if quick else 200
    for trial in range(n_streams):
        k = int(rng.integers(1, 60))
        probs = rng.dirichlet(np.full(129, 0.2))
        table = batch_tables(probs[None, :], 64)[0]
        syms = rng.integers(-64, 65, k).tolist()
        if rc_decode(rc_encode(syms, [table] * k), [table] * k) != syms:
            failures.append(f"coder round-trip: stream {trial}")
            break

    # gradient check on a small composed loss
    W = rng.normal(size=(6, 4))
    x = rng.normal(size=(3, 6))

    def f(arrays):
        t = ad.Tensor(arrays[0])
        h = ad.softplus(ad.constant(x) @ t)
        r = ad.interval_rate_bits(h, ad.constant(np.zeros((3, 4))),
                                  h * 0 + 1.0, 1.0, 2.0 ** -16)
        return float((r.sum() + (h * h).sum()).value)

    arrays = [W.copy()]
    t = ad.Tensor(arrays[0])
    h = ad.softplus(ad.constant(x) @ t)
    r = ad.interval_rate_bits(h, ad.constant(np.zeros((3, 4))), h * 0 + 1.0,
                              1.0, 2.0 ** -16)
    (r.sum() + (h * h).sum()).backward()
    num = ad.numeric_gradient(f, arrays)
    err = ad.relative_error(t.grad, num[0])
    if err > 1e-4:
        failures.append(f"gradient check: rel err {err}")

    # pmf against a direct quadrature oracle (a few cells)
    from .gaussian import std_normal_pdf

    masses = usq_index_masses(0.7, 1.0, 8)
    for q in (-2, 0, 3):
        lo, hi = (q - 0.5), (q + 0.5)
        ts = np.linspace(lo, hi, 20001)
        simpson = np.trapezoid(std_normal_pdf(ts / 0.7) / 0.7, ts)
        if abs(simpson - masses[q + 8]) > 1e-7:
            failures.append(f"pmf oracle: q={q}")
    return failures


# -- dispatch ------------------------------------------------------------


def build_parser() -> _Parser:
    p = _Parser(prog="latq", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("pretrain", help="end-to-end training with a quantizer surrogate")
    sp.add_argument("--images", required=True)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--kind", choices=["usq", "tcq"], required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--delta", type=float, default=1.0)
    sp.add_argument("--lambda-q", type=float, default=codec.DEFAULT_LAMBDA_Q)
    _train_flags(sp, epochs=60, batch=8, lr=1e-3)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("dump-latents", help="offline true-quantizer latent pool")
    sp.add_argument("--model", required=True)
    sp.add_argument("--images", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=_default_jobs())
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_dump_latents)

    sp = sub.add_parser("finetune-decoder", help="decoder-only training on a pool")
    sp.add_argument("--model", required=True)
    sp.add_argument("--pool", required=True)
    sp.add_argument("--out", required=True)
    _train_flags(sp, epochs=40, batch=8, lr=1e-4)
    sp.set_defaults(func=cmd_finetune_decoder)

    sp = sub.add_parser("finetune-hyper", help="hypercoder+decoder training, true quantization")
    sp.add_argument("--model", required=True)
    sp.add_argument("--images", required=True)
    sp.add_argument("--out", required=True)
    _train_flags(sp, epochs=40, batch=8, lr=1e-4)
    sp.set_defaults(func=cmd_finetune_hyper)

    sp = sub.add_parser("encode", help="encode a PGM image")
    sp.add_argument("--model", required=True)
    sp.add_argument("--image", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pad", action="store_true",
                    help="edge-pad to a patch multiple (decode returns the padded size)")
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="decode a bitstream to PGM")
    sp.add_argument("--model", required=True)
    sp.add_argument("--bitstream", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("eval", help="rate-distortion evaluation over a test set")
    sp.add_argument("--models", required=True, help="comma-separated model stems")
    sp.add_argument("--images", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--per-image", default=None)
    sp.add_argument("--svg", default=None)
    sp.add_argument("--jobs", type=int, default=_default_jobs())
    sp.add_argument("--sweep-lambda-q", default=None,
                    help="comma-separated trellis rate weights to calibrate")
    sp.add_argument("--ref-csv", default=None)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("bdrate", help="BD-rate between two curves or curve dirs")
    sp.add_argument("--test")
    sp.add_argument("--ref")
    sp.add_argument("--test-dir")
    sp.add_argument("--ref-dir")
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_bdrate)

    sp = sub.add_parser("selftest", help="run the built-in oracle suites")
    sp.add_argument("--quick", action="store_true")
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return ns.func(ns)
    except (LatqError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
