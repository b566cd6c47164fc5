"""Command-line entry point: ``faceenhance <command> ...``.

Exit codes: 0 success, 2 bad input, 3 non-convergence or divergence,
4 artifact-load failure.
"""
import argparse
import json
import logging
import os
import sys

import numpy as np

EXIT_OK, EXIT_BAD_INPUT, EXIT_NOT_CONVERGED, EXIT_ARTIFACT = 0, 2, 3, 4

log = logging.getLogger("faceenhance")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _load_class_codes(data_dir, pca):
    """Codes of (unattractive, attractive) faces listed in a dataset manifest."""
    from .geoembed import extract_distances, load_landmarks, pca_encode

    manifest_path = os.path.join(data_dir, "manifest.json")
    if not os.path.exists(manifest_path):
        raise CliError(f"no manifest.json in {data_dir}", EXIT_BAD_INPUT)
    with open(manifest_path) as f:
        manifest = json.load(f)
    xs, ys, ids_y = [], [], []
    for entry in manifest["entries"]:
        lms = load_landmarks(os.path.join(data_dir, entry["landmarks"]))
        code = pca_encode(pca, extract_distances(lms, pca.mesh))
        if entry["class"] == "attractive":
            ys.append(code)
            ids_y.append(entry["id"])
        else:
            xs.append(code)
    if not xs or not ys:
        raise CliError("dataset needs faces of both classes", EXIT_BAD_INPUT)
    return np.array(xs), np.array(ys), ids_y


def _load_pca_artifact(path):
    from .geoembed import load_pca

    try:
        pca = load_pca(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot load PCA model {path}: {exc}", EXIT_ARTIFACT) from exc
    if pca.mesh is None:
        raise CliError(f"PCA model {path} carries no mesh", EXIT_ARTIFACT)
    return pca


def cmd_synth_data(args):
    from .synth import SyntheticFaceSpec, synth_dataset

    spec = SyntheticFaceSpec(seed=args.seed, resolution=args.res)
    synth_dataset(spec, args.n_attr, args.n_unattr, out_dir=args.out, k=args.k, render=not args.no_render)
    print(f"wrote {args.n_attr + args.n_unattr} faces to {args.out}")


def cmd_fit_pca(args):
    from .geoembed import extract_distances, load_landmark_dir, pca_fit, save_pca, triangulate, \
        reference_landmarks

    entries = load_landmark_dir(args.landmarks)
    if len(entries) <= args.k:
        raise CliError(f"need more than k={args.k} landmark files, found {len(entries)}", EXIT_BAD_INPUT)
    mesh = triangulate(reference_landmarks())
    d = np.array([extract_distances(lms, mesh) for _, lms in entries])
    model = pca_fit(d, args.k, mesh=mesh)
    save_pca(model, args.out)
    print(f"k={args.k} explained variance {model.explained_ratio:.6f}")


def cmd_train_geo(args):
    from .geogan import GeoGanConfig, TrainingDiverged, save_checkpoint, train_critic, train_geometry_gan, \
        write_history
    from .knn import GeometryBank, save_bank

    pca = _load_pca_artifact(args.pca)
    codes_x, codes_y, ids_y = _load_class_codes(args.data, pca)
    config = GeoGanConfig(lr=args.lr, batch_size=args.batch, iterations=args.iters, seed=args.seed)
    critic = train_critic(codes_x, codes_y, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    try:
        result = train_geometry_gan(config, codes_x, codes_y, critic=critic)
    except TrainingDiverged as exc:
        if exc.checkpoint is not None:
            save_checkpoint(exc.checkpoint["model"], config, exc.checkpoint["iteration"], args.out)
        write_history(exc.history, os.path.join(args.out, "history.csv"))
        raise CliError(str(exc), EXIT_NOT_CONVERGED) from exc
    save_checkpoint(result.model, config, config.iterations, args.out)
    write_history(result.history, os.path.join(args.out, "history.csv"))
    save_bank(GeometryBank(codes_y, ids_y), os.path.join(args.out, "bank.json"))
    last = result.checkpoints[-1]
    print(f"trained {config.iterations} iterations; mean gap {last['mean_gap']:.4f}, "
          f"critic gap {last['critic_gap']:.4f}")


def cmd_train_extractor(args):
    from .applosses import train_geometry_extractor
    from .synth import render_face
    from .geoembed import load_landmarks
    from .synth import load_dataset_codes
    from .tensorcore import NonFiniteError, save_network

    try:
        ids, _, codes = load_dataset_codes(args.data)
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"cannot read codes from {args.data}: {exc}", EXIT_BAD_INPUT) from exc
    if args.limit:
        ids, codes = ids[:args.limit], codes[:args.limit]
    imgs = np.stack([render_face(load_landmarks(os.path.join(args.data, "landmarks", i + ".json")).points, args.res)
                     for i in ids])
    try:
        res = train_geometry_extractor(imgs, codes, args.res, epochs=args.epochs, seed=args.seed,
                                       batch_size=args.batch, lr=args.lr)
    except NonFiniteError as exc:
        raise CliError(str(exc), EXIT_NOT_CONVERGED) from exc
    save_network(res.extractor.network, args.out)
    print(f"final epoch mse {res.epoch_loss[-1]:.6g} after {len(res.epoch_loss)} epochs")


def cmd_enhance(args):
    from .geoembed import load_landmarks
    from .lmsolver import NotConvergedError
    from .pipeline import ArtifactError, PipelineConfig, StageError, enhance_face, write_timings
    from .warp import read_png, write_png

    try:
        config = PipelineConfig.load(args.config)
    except (OSError, ValueError, TypeError) as exc:
        raise CliError(f"bad config {args.config}: {exc}", EXIT_BAD_INPUT) from exc
    try:
        img = read_png(args.image)
        lms = load_landmarks(args.landmarks)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"bad input: {exc}", EXIT_BAD_INPUT) from exc
    try:
        result = enhance_face(img, lms, config, method=args.method)
    except ArtifactError as exc:
        raise CliError(str(exc), EXIT_ARTIFACT) from exc
    except StageError as exc:
        code = EXIT_NOT_CONVERGED if isinstance(exc.cause, NotConvergedError) else EXIT_BAD_INPUT
        raise CliError(str(exc), code) from exc
    for note in result.warnings:
        print(f"warning: {note}", file=sys.stderr)
    if args.strict and not result.fit.converged:
        raise CliError("landmark fit did not converge", EXIT_NOT_CONVERGED)
    write_png(result.image, args.out)
    if args.timings:
        write_timings(result.timings, args.timings)
    if args.landmarks_out:
        with open(args.landmarks_out, "w") as f:
            json.dump({"points": result.landmarks.tolist()}, f, indent=1)


def cmd_eval(args):
    from .applosses import pixel_loss, tv_loss
    from .pipeline import eval_identity
    from .warp import read_png

    try:
        a = read_png(args.orig)
        b = read_png(args.enhanced)
    except OSError as exc:
        raise CliError(f"cannot read image: {exc}", EXIT_BAD_INPUT) from exc
    if args.metric == "identity":
        value = eval_identity(a, b)
    elif args.metric == "pixel":
        if a.shape != b.shape:
            raise CliError("images differ in size", EXIT_BAD_INPUT)
        value = pixel_loss(a, b)[0]
    else:
        value = tv_loss(b)[0]
    print(f"{args.metric} {value:.10g}")


def demo_losses(seed=0):
    """All loss values on a small fixed pair of synthetic renders."""
    from . import applosses as A
    from .geoembed import reference_landmarks
    from .synth import render_face

    rng = np.random.default_rng(seed)
    pts = reference_landmarks().points
    x = render_face(pts, 32)
    x_hat = np.clip(x + rng.normal(0.0, 0.05, x.shape), 0.0, 1.0)
    y = render_face(pts * 0.96 + 4.5, 32)
    disc = A.PyramidDiscriminator(A.small_feature_extractor(seed=seed), seed=seed)
    s_fake = disc.score(x_hat)[0]
    s_x = disc.score(x)[0]
    s_y = disc.score(y)[0]
    ext = A.GeometryExtractor(A.build_extractor_network(32, seed=seed))
    code = rng.normal(0.0, 1.0, 32)
    values = {
        "app_d": A.adv_d_loss(s_fake, s_x, s_y)[0],
        "app_g": A.adv_g_loss(s_fake)[0],
        "identity": A.identity_loss(A.ToyIdentityDescriptor(), x, x_hat)[0],
        "pixel": A.pixel_loss(x, x_hat)[0],
        "tv": A.tv_loss(x_hat)[0],
        "gec": A.gec_loss(code, ext, x_hat)[0],
    }
    values["total_g"] = A.total_g_loss(values, A.LossWeights())
    return values


def cmd_losses(args):
    if not args.demo:
        raise CliError("only --demo is supported", EXIT_BAD_INPUT)
    for name, value in demo_losses(args.seed).items():
        print(f"{name:10s} {value:.10g}")


def build_parser():
    p = argparse.ArgumentParser(prog="faceenhance", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic two-class face dataset")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--n-attr", type=int, default=3702)
    s.add_argument("--n-unattr", type=int, default=4096)
    s.add_argument("--k", type=int, default=32)
    s.add_argument("--res", type=int, default=224)
    s.add_argument("--no-render", action="store_true")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("fit-pca", help="fit the distance-vector PCA")
    s.add_argument("--landmarks", required=True)
    s.add_argument("--k", type=int, default=32)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit_pca)

    s = sub.add_parser("train-geo", help="train the geometry GAN")
    s.add_argument("--data", required=True)
    s.add_argument("--pca", required=True)
    s.add_argument("--iters", type=int, default=15000)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_geo)

    s = sub.add_parser("train-extractor", help="train the image-to-code extractor")
    s.add_argument("--data", required=True)
    s.add_argument("--res", type=int, default=56)
    s.add_argument("--epochs", type=int, default=20)
    s.add_argument("--batch", type=int, default=16)
    s.add_argument("--lr", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--limit", type=int, default=0, help="use only the first N faces")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train_extractor)

    s = sub.add_parser("enhance", help="enhance one face")
    s.add_argument("--image", required=True)
    s.add_argument("--landmarks", required=True)
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--method", choices=("gan", "knn"), default=None)
    s.add_argument("--timings")
    s.add_argument("--landmarks-out")
    s.add_argument("--strict", action="store_true", help="fail with exit 3 if the landmark fit does not converge")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("eval", help="compare two images")
    s.add_argument("--orig", required=True)
    s.add_argument("--enhanced", required=True)
    s.add_argument("--metric", choices=("identity", "pixel", "tv"), default="identity")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("losses", help="print loss values on fixture inputs")
    s.add_argument("--demo", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_losses)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
