"""End-to-end workflows: manifests, cached features, training, scoring, evaluation."""

import csv
import hashlib
import json
import logging
import os
import tempfile
import threading
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .backbone import BackboneSpec, extract_feature_map
from .errors import ManifestError
from .features import SimilarityConstants, fr_quality_vector, nr_quality_vector
from .metrics import CRITERIA, RuntimeReport, ScoredSet, evaluate_scores, srcc
from .ply import PointCloud, normalize_to_unit_cube, read_ply
from .projector import ProjectionConfig, preprocess, render_face
from .regressor import (
    ROLES,
    FusionWeights,
    TrainConfig,
    fit_head,
    kfold_split,
    load_checkpoint,
    predict_scores,
    save_checkpoint,
    train_config_dict,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ManifestRow:
    id: str
    distorted: Path
    reference: Optional[Path] = None
    label: Optional[float] = None
    ci: Optional[tuple] = None
    content: str = ""

    @property
    def reference_pcid(self):
        return self.reference.stem if self.reference is not None else None


class DatasetManifest:
    """Rows of a manifest CSV; relative paths resolve against the CSV's folder."""

    def __init__(self, rows):
        self.rows = list(rows)
        ids = [r.id for r in self.rows]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate ids in manifest: {dup}")

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    @classmethod
    def read(cls, path):
        path = Path(path)
        base = path.parent
        try:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or "id" not in reader.fieldnames or "distorted" not in reader.fieldnames:
                    raise ManifestError(f"{path}: header must include 'id' and 'distorted'")
                rows = []
                for rec in reader:
                    def opt(key):
                        v = (rec.get(key) or "").strip()
                        return v or None

                    ref = opt("reference")
                    lab = opt("label")
                    lo, hi = opt("ci_low"), opt("ci_high")
                    rows.append(ManifestRow(
                        id=rec["id"].strip(),
                        distorted=base / rec["distorted"].strip(),
                        reference=base / ref if ref else None,
                        label=float(lab) if lab is not None else None,
                        ci=(float(lo), float(hi)) if lo is not None and hi is not None else None,
                        content=opt("content") or rec["id"].strip(),
                    ))
        except OSError as e:
            raise ManifestError(f"cannot read manifest {path}: {e}") from e
        except ValueError as e:
            raise ManifestError(f"{path}: {e}") from e
        return cls(rows)

    def write(self, path):
        path = Path(path)
        base = path.parent.resolve()

        def rel(p):
            return os.path.relpath(Path(p).resolve(), base) if p is not None else ""

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("id", "distorted", "reference", "label", "ci_low", "ci_high", "content"))
            for r in self.rows:
                w.writerow((
                    r.id, rel(r.distorted), rel(r.reference),
                    "" if r.label is None else repr(r.label),
                    "" if r.ci is None else repr(r.ci[0]),
                    "" if r.ci is None else repr(r.ci[1]),
                    r.content,
                ))

    def subset(self, contents):
        keep = set(contents)
        return DatasetManifest(r for r in self.rows if r.content in keep)

    @property
    def contents(self):
        return list(dict.fromkeys(r.content for r in self.rows))

    def require(self, reference=False, labels=False):
        for r in self.rows:
            if reference and r.reference is None:
                raise ManifestError(f"row {r.id!r} has no reference path (needed for FR)")
            if labels and r.label is None:
                raise ManifestError(f"row {r.id!r} has no label")


def content_split(manifest: DatasetManifest, n_test: int, seed=0):
    """Content-disjoint (train, test) manifests with ``n_test`` test contents."""
    contents = manifest.contents
    if not 0 < n_test < len(contents):
        raise ManifestError(f"cannot hold out {n_test} of {len(contents)} contents")
    order = np.random.default_rng(seed).permutation(len(contents))
    test = {contents[i] for i in order[:n_test]}
    return (manifest.subset(c for c in contents if c not in test),
            manifest.subset(c for c in contents if c in test))


@dataclass(frozen=True)
class PipelineConfig:
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    backbone_c: BackboneSpec = field(default_factory=lambda: BackboneSpec(role="c", seed=0))
    backbone_s: BackboneSpec = field(default_factory=lambda: BackboneSpec(role="s", seed=1))
    similarity: SimilarityConstants = field(default_factory=SimilarityConstants)
    fusion: FusionWeights = field(default_factory=FusionWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    cache_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self):
        if self.backbone_c.role != "c" or self.backbone_s.role != "s":
            raise ValueError("backbone_c must carry role 'c' and backbone_s role 's'")

    def backbone(self, role):
        return self.backbone_c if role == "c" else self.backbone_s

    def to_dict(self):
        return {
            "projection": asdict(self.projection),
            "backbone_c": self.backbone_c.to_dict(),
            "backbone_s": self.backbone_s.to_dict(),
            "similarity": asdict(self.similarity),
            "fusion": asdict(self.fusion),
            "train": train_config_dict(self.train),
            "cache_dir": self.cache_dir,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d):
        proj = dict(d.get("projection", {}))
        if "background" in proj:
            proj["background"] = tuple(proj["background"])
        train = dict(d.get("train", {}))
        if "betas" in train:
            train["betas"] = tuple(train["betas"])
        return cls(
            projection=ProjectionConfig(**proj),
            backbone_c=BackboneSpec.from_dict(d.get("backbone_c", {"role": "c", "seed": 0})),
            backbone_s=BackboneSpec.from_dict(d.get("backbone_s", {"role": "s", "seed": 1})),
            similarity=SimilarityConstants(**d.get("similarity", {})),
            fusion=FusionWeights(**d.get("fusion", {})),
            train=TrainConfig(**train),
            cache_dir=d.get("cache_dir"),
            workers=int(d.get("workers", 1)),
        )

    def feature_digest(self):
        """Hash of every setting that influences quality vectors."""
        d = self.to_dict()
        blob = json.dumps({k: d[k] for k in ("projection", "backbone_c", "backbone_s", "similarity")},
                          sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_config(cfg: PipelineConfig, out_dir, extra=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"pipeline": cfg.to_dict(), **(extra or {})}
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _needs_render(cfg):
    return any(cfg.backbone(r).kind == "native_cnn" for r in ROLES)


def face_feature_maps(pc: Optional[PointCloud], cfg: PipelineConfig, pcid=None, runtime=None):
    """Per role, the six feature maps of a cloud's preprocessed projections."""
    runtime = runtime or RuntimeReport()
    patches = None
    if _needs_render(cfg):
        with runtime.stage("render"):
            norm = normalize_to_unit_cube(pc)
            patches = [preprocess(render_face(norm, k, cfg.projection), cfg.projection, k)
                       for k in range(6)]
    maps = {}
    with runtime.stage("extract"):
        for role in ROLES:
            spec = cfg.backbone(role)
            maps[role] = [
                extract_feature_map(spec, patches[k] if patches is not None else None, pcid=pcid, face=k)
                for k in range(6)
            ]
    return maps


def fr_features(ref_maps, dist_maps, cfg: PipelineConfig):
    """(6, 2C) FR quality matrix per role."""
    return {
        role: np.stack([fr_quality_vector(ref_maps[role][k], dist_maps[role][k], cfg.similarity, role).values
                        for k in range(6)])
        for role in ROLES
    }


def nr_features(dist_maps):
    return {role: np.stack([nr_quality_vector(m, role).values for m in dist_maps[role]]) for role in ROLES}


def score_fr(ref: PointCloud, dist: PointCloud, cfg: PipelineConfig, heads, ref_id=None, dist_id=None) -> float:
    """Full-reference score of ``dist`` against ``ref``."""
    feats = fr_features(face_feature_maps(ref, cfg, ref_id), face_feature_maps(dist, cfg, dist_id), cfg)
    return predict_scores(heads, feats, cfg.fusion)


def score_nr(dist: PointCloud, cfg: PipelineConfig, heads, dist_id=None) -> float:
    return predict_scores(heads, nr_features(face_feature_maps(dist, cfg, dist_id)), cfg.fusion)


class FeatureStore:
    """Computes per-item quality matrices, backed by an optional on-disk cache.

    Cache entries are keyed by the content hashes of the files involved and
    the feature-relevant config, written atomically under a per-key lock.
    """

    def __init__(self, cfg: PipelineConfig, runtime=None, memo_size=4):
        self.cfg = cfg
        self.runtime = runtime or RuntimeReport()
        self.cache_dir = Path(cfg.cache_dir) if cfg.cache_dir else None
        self._digest = cfg.feature_digest()
        self._locks = {}
        self._locks_guard = threading.Lock()
        self._maps = OrderedDict()
        self._maps_guard = threading.Lock()
        self._memo_size = memo_size
        self._file_digests = {}

    def _file_digest(self, path):
        key = str(path)
        d = self._file_digests.get(key)
        if d is None:
            d = hashlib.sha256(Path(path).read_bytes()).hexdigest()[:20]
            self._file_digests[key] = d
        return d

    def _lock(self, key):
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def _maps_for(self, path, pcid):
        key = (self._file_digest(path), pcid)
        with self._maps_guard:
            if key in self._maps:
                self._maps.move_to_end(key)
                return self._maps[key]
        pc = read_ply(path) if _needs_render(self.cfg) else None
        maps = face_feature_maps(pc, self.cfg, pcid, self.runtime)
        with self._maps_guard:
            self._maps[key] = maps
            while len(self._maps) > self._memo_size:
                self._maps.popitem(last=False)
        if self.cache_dir is not None:
            # NR vectors are a by-product of any map computation
            self._cached(self._key("NR", path, pcid), lambda: nr_features(maps))
        return maps

    def _key(self, mode, path, pcid, ref_path=None, ref_pcid=None):
        parts = [mode, self._digest, self._file_digest(path), str(pcid)]
        if mode == "FR":
            parts += [self._file_digest(ref_path), str(ref_pcid)]
        return hashlib.sha256("|".join(parts).encode()).hexdigest()[:32]

    def _cached(self, key, compute):
        path = self.cache_dir / f"{key}.npz"
        with self._lock(key):
            if path.exists():
                with np.load(path) as z:
                    return {r: z[r] for r in ROLES}
            feats = compute()
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.cache_dir, suffix=".tmp")
            with os.fdopen(fd, "wb") as fh:
                np.savez(fh, **feats)
            os.replace(tmp, path)
        return feats

    def _compute(self, row: ManifestRow, mode):
        dist = self._maps_for(row.distorted, row.id)
        if mode == "NR":
            return nr_features(dist)
        ref = self._maps_for(row.reference, row.reference_pcid)
        return fr_features(ref, dist, self.cfg)

    def item_features(self, row: ManifestRow, mode):
        if self.cache_dir is None:
            return self._compute(row, mode)
        if mode == "NR":
            key = self._key("NR", row.distorted, row.id)
        else:
            key = self._key("FR", row.distorted, row.id, row.reference, row.reference_pcid)
        return self._cached(key, lambda: self._compute(row, mode))

    def manifest_features(self, manifest: DatasetManifest, mode):
        """Quality matrices for every row, in manifest order."""
        if mode == "FR":
            manifest.require(reference=True)
        rows = list(manifest)
        if self.cfg.workers > 1:
            with ThreadPoolExecutor(self.cfg.workers) as pool:
                return list(pool.map(lambda r: self.item_features(r, mode), rows))
        return [self.item_features(r, mode) for r in rows]


def _stack(feats, role):
    return np.stack([f[role] for f in feats])


def _fold_srcc(heads, feats, labels, cfg):
    preds = [predict_scores(heads, f, cfg.fusion) for f in feats]
    try:
        return srcc(ScoredSet.from_arrays(preds, labels))
    except ValueError:
        return float("nan")


def train_from_manifest(manifest: DatasetManifest, cfg: PipelineConfig, mode="FR", store=None):
    """k-fold training over content ids; keeps the fold with the best validation SRCC.

    Returns ``((head_c, head_s), info)`` where ``info`` records per-fold scores.
    """
    manifest.require(reference=(mode == "FR"), labels=True)
    store = store or FeatureStore(cfg)
    feats = store.manifest_features(manifest, mode)
    labels = np.array([r.label for r in manifest], dtype=np.float64)
    contents = np.array([r.content for r in manifest])
    folds = kfold_split(manifest.contents, cfg.train.k_folds, cfg.train.seed)

    best, best_srcc, fold_info = None, -np.inf, []
    for f, (train_ids, val_ids) in enumerate(folds):
        tr = np.isin(contents, train_ids)
        va = np.isin(contents, val_ids)
        heads = tuple(
            fit_head(_stack([feats[i] for i in np.flatnonzero(tr)], role), labels[tr], cfg.train, role, mode)[0]
            for role in ROLES
        )
        val = _fold_srcc(heads, [feats[i] for i in np.flatnonzero(va)], labels[va], cfg)
        fold_info.append({"fold": f, "validation_contents": list(val_ids), "validation_srcc": val})
        log.info("fold %d: validation SRCC %.4f", f, val)
        score = val if np.isfinite(val) else -np.inf
        if best is None or score > best_srcc:
            best, best_srcc, best_fold = heads, score, f
    info = {"mode": mode, "folds": fold_info, "selected_fold": best_fold,
            "selection": "best validation SRCC, single fold model"}
    return best, info


def checkpoint_sidecar(cfg: PipelineConfig, mode, info=None):
    return {
        "format_version": 1,
        "mode": mode,
        "train_config": train_config_dict(cfg.train),
        "backbone_c": cfg.backbone_c.to_dict(),
        "backbone_s": cfg.backbone_s.to_dict(),
        "similarity": asdict(cfg.similarity),
        "fusion": asdict(cfg.fusion),
        "pipeline": cfg.to_dict(),
        "training": info or {},
    }


def load_pipeline_checkpoint(ckpt_dir, cache_dir=None, workers=None):
    """Heads plus the pipeline config they were trained with."""
    heads, sidecar = load_checkpoint(ckpt_dir)
    cfg = PipelineConfig.from_dict(sidecar["pipeline"])
    overrides = {}
    if cache_dir is not None:
        overrides["cache_dir"] = cache_dir
    if workers is not None:
        overrides["workers"] = workers
    return heads, replace(cfg, **overrides) if overrides else cfg, sidecar


def score_manifest(manifest: DatasetManifest, cfg: PipelineConfig, heads, mode, runtime=None):
    """Predicted score per row, in manifest order."""
    runtime = runtime or RuntimeReport()
    store = FeatureStore(cfg, runtime)
    feats = store.manifest_features(manifest, mode)
    with runtime.stage("score"):
        return [predict_scores(heads, f, cfg.fusion) for f in feats]


def write_scores(path, ids, scores):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("id", "score"))
        for i, s in zip(ids, scores):
            w.writerow((i, repr(float(s))))


def run_evaluation(manifest: DatasetManifest, cfg: PipelineConfig, heads, mode="FR", out_dir=None,
                   significance=None, delta=0.0, logistic_map=False, oracle=False):
    """Score every row and compute the five challenge criteria.

    With ``oracle=True`` the labels are used as predictions, which checks the
    evaluation harness itself. Writes ``scores.csv``, ``report.csv``,
    ``report.txt``, ``pairs.csv`` and ``config.json`` when ``out_dir`` is given.
    """
    manifest.require(reference=(mode == "FR" and not oracle), labels=True)
    runtime = RuntimeReport()
    if oracle:
        scores = [r.label for r in manifest]
    else:
        scores = score_manifest(manifest, cfg, heads, mode, runtime)
    rows = list(manifest)
    cis = [r.ci for r in rows] if all(r.ci is not None for r in rows) else None
    scored = ScoredSet.from_arrays(scores, [r.label for r in rows], [r.id for r in rows], cis)
    metrics, pairs, rule = evaluate_scores(scored, runtime, significance, delta, logistic_map)
    report = {
        "mode": mode,
        "significance": rule if rule == "ci_overlap" else f"threshold(delta={delta:g})",
        "logistic_map": logistic_map,
        "n_items": len(rows),
        "metrics": metrics,
        "runtime": runtime.as_dict(),
        "scores": dict(zip(scored_ids(rows), scores)),
        "pairs": pairs,
    }
    if out_dir is not None:
        write_evaluation(report, cfg, out_dir)
    return report


def scored_ids(rows):
    return [r.id for r in rows]


def write_evaluation(report, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(out / "scores.csv", report["scores"].keys(), report["scores"].values())
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "value"))
        for k in CRITERIA:
            w.writerow((k, repr(float(report["metrics"][k]))))
    with open(out / "pairs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("i", "j", "relation", "better", "delta"))
        for p in report["pairs"]:
            w.writerow((p.i, p.j, "different" if p.different else "similar", p.better or "", repr(p.delta)))
    lines = [
        f"# mode: {report['mode']}",
        f"# pair significance rule: {report['significance']}",
        f"# logistic mapping before PLCC: {'on' if report['logistic_map'] else 'off'}",
        f"# items: {report['n_items']}",
        "",
    ]
    lines += [f"{k:<8} {report['metrics'][k]:.6f}" for k in CRITERIA]
    lines += ["", "runtime (s):"]
    lines += [f"  {k:<8} {v:.3f}" for k, v in report["runtime"].items()]
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    write_config(cfg, out, {"evaluation": {k: report[k] for k in ("mode", "significance", "logistic_map")}})


def train_and_save(manifest, cfg, mode, out_dir):
    heads, info = train_from_manifest(manifest, cfg, mode)
    sidecar = checkpoint_sidecar(cfg, mode, info)
    save_checkpoint(heads, out_dir, sidecar)
    write_config(cfg, out_dir, {"mode": mode})
    return heads, info
