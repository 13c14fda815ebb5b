"""Command line interface: ``cubeqa <subcommand> ...``.

Failures exit nonzero after printing one JSON line to stderr:
``{"error": "<code>", "message": "..."}``.
"""

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__
from .backbone import BackboneSpec, feature_filename, write_feature_file
from .errors import CubeQAError
from .features import SimilarityConstants
from .pipeline import (
    DatasetManifest,
    PipelineConfig,
    content_split,
    face_feature_maps,
    load_pipeline_checkpoint,
    run_evaluation,
    score_fr,
    score_manifest,
    score_nr,
    train_and_save,
    write_config,
    write_scores,
)
from .plotting import projection_sheet, save_projection_pngs
from .ply import normalize_to_unit_cube, read_ply
from .projector import ProjectionConfig, preprocess_projections, render_cube_projections
from .regressor import FusionWeights, TrainConfig
from .synth import DISTORTIONS, generate_synthetic_dataset

log = logging.getLogger("cubeqa")


def _widths(text):
    return tuple(int(w) for w in text.split(","))


def _add_projection(p):
    g = p.add_argument_group("projection")
    g.add_argument("--render-resolution", type=int, default=1024)
    g.add_argument("--splat-radius", type=int, default=2)
    g.add_argument("--resize-min", type=int, default=520)
    g.add_argument("--crop-size", type=int, default=384)
    g.add_argument("--crop-mode", choices=("center", "random"), default="center")
    g.add_argument("--crop-seed", type=int, default=None)


def _add_backbone(p):
    g = p.add_argument_group("backbones")
    g.add_argument("--seed-c", type=int, default=0, help="weight seed of the c-role backbone")
    g.add_argument("--seed-s", type=int, default=1, help="weight seed of the s-role backbone")
    g.add_argument("--widths-c", type=_widths, default=(16, 32, 64), help="comma-separated layer widths")
    g.add_argument("--widths-s", type=_widths, default=(16, 32, 64))
    g.add_argument("--kernel-size", type=int, default=3)
    g.add_argument("--no-dc-free", action="store_true",
                   help="keep the raw Gaussian first layer (responds to flat color)")
    g.add_argument("--external-features", metavar="DIR",
                   help="load <pcid>_f<k>_<c|s>.feat files from DIR instead of running the CNN")
    g.add_argument("--feature-channels", type=int, default=None,
                   help="declared channel count of external features")


def _add_quality(p):
    g = p.add_argument_group("similarity and fusion")
    g.add_argument("--gamma1", type=float, default=1e-6)
    g.add_argument("--gamma2", type=float, default=1e-6)
    g.add_argument("--omega-c", type=float, default=0.5)
    g.add_argument("--omega-s", type=float, default=0.5)


def _add_train(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=4e-5)
    g.add_argument("--batch-size", type=int, default=6)
    g.add_argument("--epochs", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--k-folds", type=int, default=5)
    g.add_argument("--hidden", type=int, default=128)


def _add_runtime(p):
    p.add_argument("--cache-dir", default=None, help="on-disk feature cache")
    p.add_argument("--workers", type=int, default=1, help="items scored in parallel")


def _projection_config(a):
    return ProjectionConfig(
        render_resolution=a.render_resolution, splat_radius=a.splat_radius,
        resize_min=a.resize_min, crop_size=a.crop_size, crop_mode=a.crop_mode, crop_seed=a.crop_seed,
    )


def _backbones(a):
    if a.external_features:
        return tuple(
            BackboneSpec(kind="external", role=r, feature_dir=a.external_features, channels=a.feature_channels)
            for r in ("c", "s")
        )
    return (
        BackboneSpec(role="c", seed=a.seed_c, widths=a.widths_c, kernel_size=a.kernel_size, dc_free=not a.no_dc_free),
        BackboneSpec(role="s", seed=a.seed_s, widths=a.widths_s, kernel_size=a.kernel_size, dc_free=not a.no_dc_free),
    )


def _pipeline_config(a):
    bc, bs = _backbones(a)
    train = TrainConfig()
    if hasattr(a, "lr"):
        train = TrainConfig(learning_rate=a.lr, batch_size=a.batch_size, epochs=a.epochs,
                            seed=a.seed, k_folds=a.k_folds, hidden=a.hidden)
    return PipelineConfig(
        projection=_projection_config(a), backbone_c=bc, backbone_s=bs,
        similarity=SimilarityConstants(a.gamma1, a.gamma2),
        fusion=FusionWeights(a.omega_c, a.omega_s),
        train=train, cache_dir=a.cache_dir, workers=a.workers,
    )


def cmd_synth(a):
    manifest = generate_synthetic_dataset(
        a.out, seed=a.seed, n_contents=a.contents, levels=a.levels,
        distortions=a.distortions, n_points=a.points, encoding=a.encoding,
    )
    outputs = {"manifest": str(manifest)}
    if a.test_contents:
        train, test = content_split(DatasetManifest.read(manifest), a.test_contents, a.seed)
        train.write(Path(a.out) / "train.csv")
        test.write(Path(a.out) / "test.csv")
        outputs.update(train=str(Path(a.out) / "train.csv"), test=str(Path(a.out) / "test.csv"))
    (Path(a.out) / "synth.json").write_text(json.dumps({
        "seed": a.seed, "contents": a.contents, "levels": a.levels,
        "distortions": a.distortions, "points": a.points, "test_contents": a.test_contents,
    }, indent=2) + "\n")
    print(json.dumps(outputs))


def cmd_render(a):
    cfg = _projection_config(a)
    pcid = a.id or Path(a.ply).stem
    pc = normalize_to_unit_cube(read_ply(a.ply))
    faces = render_cube_projections(pc, cfg)
    if a.preprocessed:
        faces = preprocess_projections(faces, cfg)
    paths = save_projection_pngs(faces, a.out, pcid)
    if not a.no_figure:
        paths.append(projection_sheet(faces, Path(a.out) / f"{pcid}_cube.png", title=pcid))
    (Path(a.out) / "config.json").write_text(
        json.dumps({"projection": asdict(cfg), "preprocessed": a.preprocessed}, indent=2) + "\n"
    )
    for p in paths:
        print(p)


def cmd_extract(a):
    cfg = _pipeline_config(a)
    if cfg.backbone_c.kind != "native_cnn":
        raise ValueError("extract runs the native backbones; drop --external-features")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    if a.manifest:
        seen = set()
        for row in DatasetManifest.read(a.manifest):
            for path, pcid in ((row.distorted, row.id), (row.reference, row.reference_pcid)):
                if path is not None and pcid not in seen:
                    seen.add(pcid)
                    jobs.append((path, pcid))
    else:
        jobs.append((Path(a.ply), a.id or Path(a.ply).stem))
    for path, pcid in jobs:
        maps = face_feature_maps(read_ply(path), cfg, pcid)
        for role, fms in maps.items():
            for k, fm in enumerate(fms):
                write_feature_file(out / feature_filename(pcid, k, role), fm)
        print(f"{pcid}: {len(maps['c'])} faces x 2 roles")
    write_config(cfg, out)


def cmd_train(a):
    cfg = _pipeline_config(a)
    manifest = DatasetManifest.read(a.manifest)
    _, info = train_and_save(manifest, cfg, a.mode, a.out)
    print(json.dumps({"checkpoint": str(a.out), "selected_fold": info["selected_fold"],
                      "validation_srcc": [f["validation_srcc"] for f in info["folds"]]}))


def _emit_scores(a, cfg, ids, scores):
    if a.out:
        out = Path(a.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        write_scores(out, ids, scores)
        write_config(cfg, out.parent)
    else:
        print("id,score")
        for i, s in zip(ids, scores):
            print(f"{i},{s!r}")


def _score(a, mode):
    heads, cfg, sidecar = load_pipeline_checkpoint(a.checkpoint, a.cache_dir, a.workers)
    if sidecar["mode"] != mode:
        raise ValueError(f"checkpoint was trained for {sidecar['mode']}, not {mode}")
    if a.manifest:
        manifest = DatasetManifest.read(a.manifest)
        scores = score_manifest(manifest, cfg, heads, mode)
        ids = [r.id for r in manifest]
    else:
        if mode == "FR" and not (a.ref and a.dist):
            raise ValueError("score-fr needs --ref and --dist, or --manifest")
        if mode == "NR" and not a.dist:
            raise ValueError("score-nr needs --dist or --manifest")
        pcid = a.id or Path(a.dist).stem
        dist = read_ply(a.dist)
        if mode == "FR":
            scores = [score_fr(read_ply(a.ref), dist, cfg, heads, Path(a.ref).stem, pcid)]
        else:
            scores = [score_nr(dist, cfg, heads, pcid)]
        ids = [pcid]
    _emit_scores(a, cfg, ids, scores)


def cmd_evaluate(a):
    heads, cfg, sidecar = load_pipeline_checkpoint(a.checkpoint, a.cache_dir, a.workers)
    mode = a.mode or sidecar["mode"]
    manifest = DatasetManifest.read(a.manifest)
    report = run_evaluation(manifest, cfg, heads, mode, a.out, significance=a.significance,
                            delta=a.delta, logistic_map=a.logistic, oracle=a.oracle)
    print(Path(a.out, "report.txt").read_text(), end="")
    return report


def build_parser():
    p = argparse.ArgumentParser(prog="cubeqa", description="Projection-based point cloud quality assessment")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--contents", type=int, default=8)
    s.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3])
    s.add_argument("--distortions", nargs="+", choices=DISTORTIONS, default=list(DISTORTIONS))
    s.add_argument("--points", type=int, default=300_000)
    s.add_argument("--test-contents", type=int, default=0,
                   help="also write content-disjoint train.csv/test.csv holding out this many contents")
    s.add_argument("--encoding", choices=("binary_little_endian", "ascii"), default="binary_little_endian")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("render", help="render the six cube projections of a PLY file")
    r.add_argument("ply")
    r.add_argument("--out", required=True)
    r.add_argument("--id", default=None)
    r.add_argument("--preprocessed", action="store_true",
                   help="export background-removed, resized, cropped patches")
    r.add_argument("--no-figure", action="store_true", help="skip the contact sheet figure")
    _add_projection(r)
    r.set_defaults(func=cmd_render)

    e = sub.add_parser("extract", help="write native-backbone feature maps as .feat files")
    e.add_argument("ply", nargs="?")
    e.add_argument("--manifest")
    e.add_argument("--id", default=None)
    e.add_argument("--out", required=True)
    for add in (_add_projection, _add_backbone, _add_quality, _add_runtime):
        add(e)
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", help="train regression heads with k-fold selection")
    t.add_argument("--manifest", required=True)
    t.add_argument("--mode", choices=("FR", "NR"), required=True)
    t.add_argument("--out", required=True, help="checkpoint directory")
    for add in (_add_projection, _add_backbone, _add_quality, _add_train, _add_runtime):
        add(t)
    t.set_defaults(func=cmd_train)

    for name, mode in (("score-fr", "FR"), ("score-nr", "NR")):
        c = sub.add_parser(name, help=f"{mode} scores from a trained checkpoint")
        c.add_argument("--checkpoint", required=True)
        c.add_argument("--manifest")
        if mode == "FR":
            c.add_argument("--ref")
        c.add_argument("--dist")
        c.add_argument("--id", default=None)
        c.add_argument("--out", help="scores CSV (default: stdout)")
        _add_runtime(c)
        c.set_defaults(func=lambda a, m=mode: _score(a, m), ref=None)

    v = sub.add_parser("evaluate", help="score a labelled manifest and compute the five criteria")
    v.add_argument("--manifest", required=True)
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--out", required=True)
    v.add_argument("--mode", choices=("FR", "NR"), default=None, help="defaults to the checkpoint's mode")
    v.add_argument("--significance", choices=("ci_overlap", "threshold"), default=None,
                   help="pair rule; default ci_overlap when every row has a CI")
    v.add_argument("--delta", type=float, default=0.0, help="label gap for the threshold rule")
    v.add_argument("--logistic", action="store_true", help="fit a 4-parameter logistic before PLCC")
    v.add_argument("--oracle", action="store_true", help="use labels as predictions (harness check)")
    _add_runtime(v)
    v.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        a.func(a)
    except (CubeQAError, ValueError, OSError) as e:
        code = e.code if isinstance(e, CubeQAError) else type(e).__name__
        print(json.dumps({"error": code, "message": str(e)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
