"""End-to-end orchestration: datasets on disk, case runs, reports.

The pipeline owns everything the pure modules deliberately do not:
materializing a scene cohort into preprocessed strips, persisting
datasets (a manifest plus one PGM per sample), assembling training
matrices, running the five evaluation cases, caching the shared
pretrained model, and importing externally captured data into the same
dataset layout.

Dataset layout under a directory:

    manifest.json            all annotations, sorted keys
    u<user>/s<session>/p<point>.pgm   one canvas strip per sample

Identical inputs produce byte-identical manifests and images.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from dataclasses import dataclass
from datetime import datetime, timezone

import json

import numpy as np

from . import estimator as est
from . import preprocess as pre
from . import protocol as proto
from . import raster, scene
from .config import StageHyper, WorkbenchConfig, build_scene_profiles
from .errors import DatasetError, LockError, ValidationError

MANIFEST_VERSION = 1


# ---------------------------------------------------------------------------
# in-memory dataset

@dataclass(eq=False)
class PipeSample:
    point_index: int
    true_mm: np.ndarray              # fixation in in-screen mm
    camera_distance_mm: float
    border_fraction: float
    canvas: np.ndarray               # uint8 85x390
    landmarks_canvas: dict[str, np.ndarray] | None = None
    image_path: str | None = None


@dataclass(eq=False)
class PipeSession:
    session_id: int
    central: bool
    samples: list[PipeSample]
    grid_id: str | None = None

    @property
    def n_points(self) -> int:
        return len(self.samples)


@dataclass(eq=False)
class PipeUser:
    user_id: int
    sessions: list[PipeSession]
    appearance_seed: int | None = None

    def all_samples(self):
        return [s for sess in self.sessions for s in sess.samples]


@dataclass(eq=False)
class Dataset:
    profile_id: str
    screen_w: float
    screen_h: float
    users: list[PipeUser]
    master_seed: int | None = None

    def user_ids(self) -> list[int]:
        return [u.user_id for u in self.users]

    def user(self, user_id: int) -> PipeUser:
        for u in self.users:
            if u.user_id == user_id:
                return u
        raise DatasetError(f"no user {user_id} in {self.profile_id} dataset")

    def n_samples(self) -> int:
        return sum(len(s.samples) for u in self.users for s in u.sessions)


def _style_seed(appearance_seed: int, session_id: int, point_index: int) -> int:
    ss = np.random.SeedSequence(entropy=appearance_seed,
                                spawn_key=(session_id, point_index))
    return int(np.random.default_rng(ss).integers(0, 2**31 - 1))


def build_dataset(profile: scene.SceneProfile, n_users: int,
                  master_seed: int) -> Dataset:
    """Generate, render, and preprocess a cohort, all in memory."""
    cohort = scene.generate_cohort(n_users, profile, master_seed)
    users = []
    for urec in cohort.users:
        palette = raster.user_palette(urec.spec.appearance_seed)
        sessions = []
        for srec in urec.sessions:
            samples = []
            for smp in srec.samples:
                seed = _style_seed(urec.spec.appearance_seed, srec.session_id,
                                   smp.target.index)
                frame = raster.render_sample(smp, profile.camera, urec.spec.eyes,
                                             style_seed=seed, palette=palette,
                                             noise_sigma=profile.noise_sigma)
                key_landmarks = {n: smp.landmarks_2d[n]
                                 for n in scene.KEY_LANDMARK_NAMES}
                proc = pre.preprocess(frame,
                                      smp.landmarks_2d["outer_left"],
                                      smp.landmarks_2d["outer_right"],
                                      landmarks=key_landmarks)
                samples.append(PipeSample(
                    point_index=smp.target.index,
                    true_mm=np.asarray(smp.target.position_screen_mm, dtype=float),
                    camera_distance_mm=smp.camera_distance_mm,
                    border_fraction=proc.border_fraction,
                    canvas=proc.canvas,
                    landmarks_canvas=proc.landmarks,
                ))
            sessions.append(PipeSession(session_id=srec.session_id,
                                        central=srec.central,
                                        samples=samples, grid_id=srec.grid_id))
        users.append(PipeUser(user_id=urec.user_id, sessions=sessions,
                              appearance_seed=urec.spec.appearance_seed))
    return Dataset(profile_id=profile.profile_id,
                   screen_w=profile.screen.width_mm,
                   screen_h=profile.screen.height_mm,
                   users=users, master_seed=master_seed)


# ---------------------------------------------------------------------------
# persistence

def _sample_rel_path(user_id: int, session_id: int, point_index: int) -> str:
    return f"u{user_id}/s{session_id}/p{point_index}.pgm"


def save_dataset(dataset: Dataset, out_dir) -> str:
    """Write manifest + PGMs; returns the manifest path."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "format_version": MANIFEST_VERSION,
        "profile_id": dataset.profile_id,
        "screen": {"width_mm": dataset.screen_w, "height_mm": dataset.screen_h},
        "master_seed": dataset.master_seed,
        "users": [],
    }
    for user in dataset.users:
        urec = {"user_id": user.user_id, "appearance_seed": user.appearance_seed,
                "sessions": []}
        for sess in user.sessions:
            srec = {"session_id": sess.session_id, "grid_id": sess.grid_id,
                    "central": sess.central, "samples": []}
            for smp in sess.samples:
                rel = _sample_rel_path(user.user_id, sess.session_id, smp.point_index)
                full = os.path.join(out_dir, rel)
                os.makedirs(os.path.dirname(full), exist_ok=True)
                raster.save_pgm(full, smp.canvas)
                srec["samples"].append({
                    "point_index": smp.point_index,
                    "image": rel,
                    "true_mm": [float(v) for v in smp.true_mm],
                    "camera_distance_mm": smp.camera_distance_mm,
                    "border_fraction": smp.border_fraction,
                    "landmarks_canvas": (
                        None if smp.landmarks_canvas is None else
                        {k: [float(x) for x in v]
                         for k, v in sorted(smp.landmarks_canvas.items())}),
                })
            urec["sessions"].append(srec)
        manifest["users"].append(urec)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def load_dataset(dataset_dir) -> Dataset:
    dataset_dir = os.fspath(dataset_dir)
    path = os.path.join(dataset_dir, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as e:
        raise DatasetError(f"cannot read dataset manifest {path}: {e}") from e
    except ValueError as e:
        raise DatasetError(f"dataset manifest {path} is not valid JSON: {e}") from e
    if manifest.get("format_version") != MANIFEST_VERSION:
        raise DatasetError(f"unsupported dataset format in {path}")
    try:
        users = []
        for urec in manifest["users"]:
            sessions = []
            for srec in urec["sessions"]:
                samples = []
                for rec in srec["samples"]:
                    canvas = raster.load_pgm(os.path.join(dataset_dir, rec["image"]))
                    lm = rec.get("landmarks_canvas")
                    samples.append(PipeSample(
                        point_index=rec["point_index"],
                        true_mm=np.asarray(rec["true_mm"], dtype=float),
                        camera_distance_mm=float(rec["camera_distance_mm"]),
                        border_fraction=float(rec["border_fraction"]),
                        canvas=canvas,
                        landmarks_canvas=(None if lm is None else
                                          {k: np.asarray(v, dtype=float)
                                           for k, v in lm.items()}),
                        image_path=rec["image"],
                    ))
                sessions.append(PipeSession(session_id=srec["session_id"],
                                            central=srec["central"],
                                            samples=samples,
                                            grid_id=srec.get("grid_id")))
            users.append(PipeUser(user_id=urec["user_id"], sessions=sessions,
                                  appearance_seed=urec.get("appearance_seed")))
    except (KeyError, TypeError, ValidationError) as e:
        raise DatasetError(f"dataset manifest {path} is malformed: {e}") from e
    screen = manifest["screen"]
    return Dataset(profile_id=manifest["profile_id"],
                   screen_w=float(screen["width_mm"]),
                   screen_h=float(screen["height_mm"]),
                   users=users, master_seed=manifest.get("master_seed"))


# ---------------------------------------------------------------------------
# feature assembly

@dataclass(eq=False)
class SampleMeta:
    user_id: int
    session_id: int
    point_index: int
    true_mm: np.ndarray
    camera_distance_mm: float


def features_and_targets(dataset: Dataset, mode: str = "image",
                         user_ids=None, central_only: bool = False,
                         session_ids=None):
    """Stack (X, Y, meta) for the selected slice of a dataset.

    Y is normalized to [-1, 1] against the dataset's screen. `mode`
    "image" pools the canvases; "landmarks" uses annotated canvas
    landmarks plus the border fraction and requires them to be present.
    """
    if mode not in ("image", "landmarks"):
        raise ValidationError(f"unknown feature mode {mode!r}")
    take_users = set(dataset.user_ids() if user_ids is None else user_ids)
    xs, ts, meta = [], [], []
    for user in dataset.users:
        if user.user_id not in take_users:
            continue
        for sess in user.sessions:
            if central_only and not sess.central:
                continue
            if session_ids is not None and sess.session_id not in session_ids:
                continue
            for smp in sess.samples:
                if mode == "image":
                    xs.append(est.canvas_to_input(smp.canvas))
                else:
                    if smp.landmarks_canvas is None:
                        raise DatasetError(
                            f"user {user.user_id} session {sess.session_id} has "
                            "no landmark annotations for landmark features")
                    xs.append(est.landmark_features(smp.landmarks_canvas,
                                                    smp.border_fraction))
                ts.append(smp.true_mm)
                meta.append(SampleMeta(user.user_id, sess.session_id,
                                       smp.point_index, smp.true_mm,
                                       smp.camera_distance_mm))
    if not xs:
        raise DatasetError("selected dataset slice is empty")
    x = np.stack(xs)
    y = est.normalize_points(np.stack(ts), dataset.screen_w, dataset.screen_h)
    return x, y, meta


def _arch_for(cfg: WorkbenchConfig) -> est.ArchSpec:
    if cfg.feature_mode == "image":
        return est.default_image_arch()
    return est.default_vector_arch(13)


def _hyper(stage: StageHyper) -> est.Hyperparams:
    return est.Hyperparams(learning_rate=stage.learning_rate,
                           momentum=stage.momentum, epochs=stage.epochs,
                           batch_size=stage.batch_size,
                           final_learning_rate=stage.final_learning_rate)


def _fold_seeds(run_seed: int, case_id: int, fold_index: int) -> tuple[int, int]:
    ss = np.random.SeedSequence(entropy=run_seed, spawn_key=(case_id, fold_index))
    rng = np.random.default_rng(ss)
    return (int(rng.integers(0, 2**31 - 1)), int(rng.integers(0, 2**31 - 1)))


# ---------------------------------------------------------------------------
# pretrained model cache

def pretrained_weights_path(out_dir, run_seed: int) -> str:
    return os.path.join(os.fspath(out_dir), "weights", f"pretrained_s{run_seed}.json")


def pretrained_model(datasets: dict[str, Dataset], cfg: WorkbenchConfig,
                     run_seed: int, cache_dir=None) -> est.GazeRegressor:
    """The shared transfer source: the first leave-one-out fold of case 1.

    Trained on every camera-centred user except the first, exactly as
    case 1's fold 0 trains it, and cached per run seed so cases 2 and 4
    reuse one model instead of re-deriving it.
    """
    arch = _arch_for(cfg)
    use_cache = cache_dir is not None and cfg.reuse_pretrained
    if use_cache:
        path = pretrained_weights_path(cache_dir, run_seed)
        if os.path.exists(path):
            return est.load_weights(path, expect_arch=arch)
    ds = datasets["U"]
    ids = ds.user_ids()
    train_ids = ids[1:]
    init_seed, shuffle_seed = _fold_seeds(run_seed, case_id=1, fold_index=0)
    model = est.build_model(arch, seed=init_seed)
    x, y, _ = features_and_targets(ds, cfg.feature_mode, train_ids)
    est.train(model, x, y, _hyper(cfg.cohort_train), seed=shuffle_seed,
              provenance="pretrained:U")
    if use_cache:
        path = pretrained_weights_path(cache_dir, run_seed)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        est.save_weights(model, path)
    return model


# ---------------------------------------------------------------------------
# case running

def _predictions(model, dataset, cfg, user_id, central_only, session_ids=None):
    x, _, meta = features_and_targets(dataset, cfg.feature_mode, [user_id],
                                      central_only=central_only,
                                      session_ids=session_ids)
    pred_norm = model.predict(x)
    pred_mm = est.denormalize_points(pred_norm, dataset.screen_w, dataset.screen_h)
    return [proto.SamplePrediction.build(m.user_id, m.session_id, m.point_index,
                                         m.true_mm, pred_mm[i],
                                         m.camera_distance_mm)
            for i, m in enumerate(meta)]


def run_case(case_id: int, datasets: dict[str, Dataset], cfg: WorkbenchConfig,
             run_seed: int, cache_dir=None) -> proto.CaseReport:
    """Run one evaluation case at one seed and return its report."""
    spec = proto.case_spec(case_id)
    ds = datasets[spec.cohort]
    central = spec.cohort == "I"
    arch = _arch_for(cfg)
    source = (pretrained_model(datasets, cfg, run_seed, cache_dir)
              if spec.init == "pretrained" else None)

    if spec.scheme == "loo":
        per_user_xy = {u: features_and_targets(ds, cfg.feature_mode, [u],
                                               central_only=central)
                       for u in ds.user_ids()}
        loo_hyper = cfg.cohort_train if spec.cohort == "U" else cfg.transfer_train

        def train_fn(train_ids, fold_index):
            init_seed, shuffle_seed = _fold_seeds(run_seed, case_id, fold_index)
            if source is not None:
                model = source.copy()
                provenance = f"{source.provenance};trained:{spec.cohort}"
            else:
                model = est.build_model(arch, seed=init_seed)
                provenance = f"trained:{spec.cohort}"
            x = np.concatenate([per_user_xy[u][0] for u in train_ids])
            y = np.concatenate([per_user_xy[u][1] for u in train_ids])
            est.train(model, x, y, _hyper(loo_hyper), seed=shuffle_seed,
                      provenance=provenance)
            return model

        def eval_fn(model, test_id):
            return _predictions(model, ds, cfg, test_id, central)

        folds = proto.leave_one_out(ds.user_ids(), train_fn, eval_fn)
        provenance = (f"pretrained:U;trained:{spec.cohort}" if source is not None
                      else f"trained:{spec.cohort}")
    else:
        hyper = _hyper(cfg.calibration_finetune if spec.init == "pretrained"
                       else cfg.calibration_scratch)
        folds = []
        for fold_index, user_id in enumerate(ds.user_ids()):
            user = ds.user(user_id)
            central_sessions = [(s.session_id, s.n_points)
                                for s in user.sessions if s.central]
            train_sids, test_sids = proto.calibration_split(
                central_sessions, swap=cfg.swap_calibration)
            init_seed, shuffle_seed = _fold_seeds(run_seed, case_id, fold_index)
            if source is not None:
                model = source.copy()
                prov = f"{source.provenance};finetuned:u{user_id}"
            else:
                model = est.build_model(arch, seed=init_seed)
                prov = f"calibrated:u{user_id}"
            x, y, _ = features_and_targets(ds, cfg.feature_mode, [user_id],
                                           session_ids=set(train_sids))
            est.train(model, x, y, hyper, seed=shuffle_seed, provenance=prov)
            preds = _predictions(model, ds, cfg, user_id, central_only=False,
                                 session_ids=set(test_sids))
            folds.append(proto.FoldResult(fold_index=fold_index,
                                          test_user=user_id, predictions=preds))
        provenance = ("pretrained:U;finetuned" if source is not None
                      else "calibrated-from-scratch")

    return proto.CaseReport(
        case_id=case_id, seed=run_seed, folds=folds,
        model_provenance=provenance,
        created_at=datetime.now(timezone.utc).isoformat())


def report_paths(out_dir, case_id: int, run_seed: int) -> tuple[str, str]:
    base = os.path.join(os.fspath(out_dir), "reports")
    return (os.path.join(base, f"case{case_id}_seed{run_seed}.json"),
            os.path.join(base, f"case{case_id}_seed{run_seed}.csv"))


def run_cases(case_ids, seeds, datasets, cfg: WorkbenchConfig,
              out_dir=None) -> proto.RunSummary:
    """Run a case grid; optionally persist per-run reports and CSVs."""
    summary = proto.RunSummary(seeds=list(seeds))
    for run_seed in seeds:
        for case_id in case_ids:
            report = run_case(case_id, datasets, cfg, run_seed, cache_dir=out_dir)
            summary.add(case_id, run_seed, report.pooled_stats())
            if out_dir is not None:
                jpath, cpath = report_paths(out_dir, case_id, run_seed)
                os.makedirs(os.path.dirname(jpath), exist_ok=True)
                proto.write_report_json(report.to_dict(), jpath)
                proto.write_report_csv(report, cpath)
    return summary


# ---------------------------------------------------------------------------
# generation entry point used by the CLI

def dataset_dir(out_dir, profile_id: str) -> str:
    return os.path.join(os.fspath(out_dir), "datasets", profile_id)


def generate_datasets(cfg: WorkbenchConfig, out_dir, profiles=("U", "I"),
                      write: bool = True) -> dict[str, Dataset]:
    scene_profiles = build_scene_profiles(cfg)
    out = {}
    for pid in profiles:
        n_users = cfg.users_u if pid == "U" else cfg.users_i
        seed = cfg.dataset_seed_u if pid == "U" else cfg.dataset_seed_i
        ds = build_dataset(scene_profiles[pid], n_users, seed)
        if write:
            save_dataset(ds, dataset_dir(out_dir, pid))
        out[pid] = ds
    return out


def load_datasets(out_dir, profiles=("U", "I")) -> dict[str, Dataset]:
    return {pid: load_dataset(dataset_dir(out_dir, pid)) for pid in profiles}


# ---------------------------------------------------------------------------
# external data import / export

REQUIRED_IMPORT_KEYS = ("image", "user_id", "session_id", "point_index",
                        "outer_left_px", "outer_right_px", "true_mm",
                        "camera_distance_mm")


@dataclass(eq=False)
class ImportResult:
    dataset_dir: str
    n_imported: int
    failures: list[tuple[int, str]]     # (record index, reason)


def _import_record(rec: dict, src_dir: str) -> tuple[int, int, PipeSample]:
    missing = [k for k in REQUIRED_IMPORT_KEYS if k not in rec]
    if missing:
        raise DatasetError(f"missing keys {missing}")
    img_path = os.path.join(src_dir, rec["image"])
    if not os.path.exists(img_path):
        raise DatasetError(f"image {rec['image']} not found")
    frame = raster.load_image(img_path)
    h, w = frame.shape
    for key in ("outer_left_px", "outer_right_px"):
        p = np.asarray(rec[key], dtype=float)
        if p.shape != (2,) or not (0 <= p[0] <= w - 1 and 0 <= p[1] <= h - 1):
            raise DatasetError(f"{key} {p.tolist()} outside {w}x{h} image")
    proc = pre.preprocess(frame, rec["outer_left_px"], rec["outer_right_px"])
    sample = PipeSample(
        point_index=int(rec["point_index"]),
        true_mm=np.asarray(rec["true_mm"], dtype=float),
        camera_distance_mm=float(rec["camera_distance_mm"]),
        border_fraction=proc.border_fraction,
        canvas=proc.canvas,
    )
    return int(rec["user_id"]), int(rec["session_id"]), sample


def import_dataset(annotations_path, out_dir) -> ImportResult:
    """Convert externally captured frames into the internal layout.

    The annotation file is JSON: a screen block plus one record per
    frame (image paths relative to the annotation file). Frames go
    through the standard preprocessing, so an imported dataset loads
    and trains exactly like a generated one. Bad records are skipped
    and reported in the result, not fatal; a structurally broken
    annotation file is.
    """
    annotations_path = os.fspath(annotations_path)
    src_dir = os.path.dirname(os.path.abspath(annotations_path))
    try:
        with open(annotations_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as e:
        raise DatasetError(f"cannot read annotations {annotations_path}: {e}") from e
    except ValueError as e:
        raise DatasetError(f"annotations {annotations_path} are not valid JSON: {e}") from e
    if not isinstance(payload, dict) or "screen" not in payload or "samples" not in payload:
        raise DatasetError("annotations need 'screen' and 'samples' blocks")
    screen = payload["screen"]
    try:
        screen_w = float(screen["width_mm"])
        screen_h = float(screen["height_mm"])
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"bad screen block in annotations: {e}") from e

    users: dict[int, dict[int, list[PipeSample]]] = {}
    failures: list[tuple[int, str]] = []
    n_imported = 0
    for i, rec in enumerate(payload["samples"]):
        try:
            uid, sid, sample = _import_record(rec, src_dir)
        except (DatasetError, ValidationError) as e:
            failures.append((i, str(e)))
            continue
        users.setdefault(uid, {}).setdefault(sid, []).append(sample)
        n_imported += 1

    pipe_users = []
    for uid in sorted(users):
        sessions = [PipeSession(session_id=sid, central=True,
                                samples=sorted(users[uid][sid],
                                               key=lambda s: s.point_index))
                    for sid in sorted(users[uid])]
        pipe_users.append(PipeUser(user_id=uid, sessions=sessions))
    dataset = Dataset(profile_id="imported", screen_w=screen_w,
                      screen_h=screen_h, users=pipe_users)
    target = dataset_dir(out_dir, "imported")
    save_dataset(dataset, target)
    return ImportResult(dataset_dir=target, n_imported=n_imported,
                        failures=failures)


def export_annotations(profile: scene.SceneProfile, n_users: int,
                       master_seed: int, out_dir) -> str:
    """Render a cohort to full frames plus an annotation file.

    The counterpart of import_dataset: pushing the exported directory
    back through it reproduces the generated dataset's canvases byte
    for byte, since both paths run the same preprocessing on the same
    frames. Returns the annotation file path.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    records = []
    cohort = scene.generate_cohort(n_users, profile, master_seed)
    for urec in cohort.users:
        palette = raster.user_palette(urec.spec.appearance_seed)
        for srec in urec.sessions:
            for smp in srec.samples:
                seed = _style_seed(urec.spec.appearance_seed, srec.session_id,
                                   smp.target.index)
                frame = raster.render_sample(smp, profile.camera, urec.spec.eyes,
                                             style_seed=seed, palette=palette,
                                             noise_sigma=profile.noise_sigma)
                rel = f"frames/{smp.sample_key}.pgm"
                full = os.path.join(out_dir, rel)
                os.makedirs(os.path.dirname(full), exist_ok=True)
                raster.save_pgm(full, frame)
                records.append({
                    "image": rel,
                    "user_id": urec.user_id,
                    "session_id": srec.session_id,
                    "point_index": smp.target.index,
                    "outer_left_px": [float(v) for v in smp.landmarks_2d["outer_left"]],
                    "outer_right_px": [float(v) for v in smp.landmarks_2d["outer_right"]],
                    "true_mm": [float(v) for v in smp.target.position_screen_mm],
                    "camera_distance_mm": smp.camera_distance_mm,
                })
    payload = {
        "screen": {"width_mm": profile.screen.width_mm,
                   "height_mm": profile.screen.height_mm},
        "samples": records,
    }
    path = os.path.join(out_dir, "annotations.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# output directory lock

@contextmanager
def output_lock(out_dir):
    """Exclusive advisory lock on an output directory (O_EXCL sentinel)."""
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, ".lock")
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"output directory {out_dir} is locked by another run "
                        f"(remove {path} if that run is dead)") from None
    try:
        os.write(fd, f"{os.getpid()}\n".encode("ascii"))
        os.close(fd)
        yield
    finally:
        try:
            os.unlink(path)
        except OSError:
            pass
