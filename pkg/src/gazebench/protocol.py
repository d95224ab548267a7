"""Transfer and calibration evaluation protocol.

Defines the angular error metric, summary statistics, the two
evaluation schemes (leave-one-user-out and per-user calibration), the
five standard cases, cross-case comparison flags, and the run report
with its canonical serialization. Everything here is pure bookkeeping
over predictions; generating datasets and training models is the
pipeline's job, injected as callables.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ProtocolError, ValidationError


def angular_error(pred_mm, true_mm, camera_distance_mm) -> np.ndarray:
    """On-screen miss distance as an angle at the camera, degrees.

    The miss ``|pred - true|`` is taken perpendicular to the viewing
    ray at the true target's distance, so the angle is
    ``atan(miss / distance)``. Vectorized over leading dimensions.
    """
    pred = np.atleast_2d(np.asarray(pred_mm, dtype=float))
    true = np.atleast_2d(np.asarray(true_mm, dtype=float))
    dist = np.asarray(camera_distance_mm, dtype=float)
    if np.any(dist <= 0):
        raise ValidationError("camera distance must be positive")
    miss = np.linalg.norm(pred - true, axis=-1)
    out = np.degrees(np.arctan2(miss, dist))
    return out if out.shape != (1,) else out.reshape(())


@dataclass(eq=False)
class SamplePrediction:
    """One evaluated fixation with its provenance keys."""

    user_id: int
    session_id: int
    point_index: int
    true_mm: np.ndarray
    pred_mm: np.ndarray
    camera_distance_mm: float
    error_deg: float

    @classmethod
    def build(cls, user_id, session_id, point_index, true_mm, pred_mm,
              camera_distance_mm) -> "SamplePrediction":
        err = float(angular_error(pred_mm, true_mm, camera_distance_mm))
        return cls(user_id=user_id, session_id=session_id, point_index=point_index,
                   true_mm=np.asarray(true_mm, dtype=float),
                   pred_mm=np.asarray(pred_mm, dtype=float),
                   camera_distance_mm=float(camera_distance_mm), error_deg=err)

    def to_row(self, case_id: int, fold_index: int) -> list:
        return [case_id, fold_index, self.user_id, self.session_id,
                self.point_index, self.true_mm[0], self.true_mm[1],
                self.pred_mm[0], self.pred_mm[1], self.error_deg]


@dataclass(frozen=True)
class ErrorStats:
    """Summary of an error sample; std is the population std."""

    n: int
    mean: float
    std: float
    median: float
    p25: float
    p75: float

    @property
    def iqr(self) -> float:
        return self.p75 - self.p25

    def to_dict(self) -> dict:
        return {"n": self.n, "mean": self.mean, "std": self.std,
                "median": self.median, "p25": self.p25, "p75": self.p75,
                "iqr": self.iqr}


def summarize(errors) -> ErrorStats:
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ProtocolError("cannot summarize an empty error sample")
    if not np.all(np.isfinite(e)):
        raise ProtocolError("non-finite errors in sample")
    p25, med, p75 = (float(v) for v in np.percentile(e, [25.0, 50.0, 75.0]))
    return ErrorStats(n=int(e.size), mean=float(e.mean()),
                      std=float(e.std(ddof=0)), median=med, p25=p25, p75=p75)


HIST_BIN_DEG = 0.25


def distribution_export(errors) -> dict:
    """Percentiles 0..100 plus a fixed-bin histogram of an error sample.

    Enough to redraw a box or violin plot without the raw errors. Bin
    edges are multiples of HIST_BIN_DEG starting at zero; the last bin
    is whichever one covers the maximum error.
    """
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ProtocolError("cannot export an empty error sample")
    if not np.all(np.isfinite(e)):
        raise ProtocolError("non-finite errors in sample")
    qs = np.arange(101.0)
    values = np.percentile(e, qs)
    n_bins = max(1, int(np.floor(float(e.max()) / HIST_BIN_DEG)) + 1)
    edges = np.arange(n_bins + 1) * HIST_BIN_DEG
    counts, _ = np.histogram(e, bins=edges)
    return {
        "n": int(e.size),
        "percentiles": [float(v) for v in values],
        "bin_width_deg": HIST_BIN_DEG,
        "bin_edges_deg": [float(v) for v in edges],
        "bin_counts": [int(c) for c in counts],
    }


@dataclass(eq=False)
class FoldResult:
    fold_index: int
    test_user: int
    predictions: list[SamplePrediction]

    def errors(self) -> np.ndarray:
        return np.array([p.error_deg for p in self.predictions])

    def stats(self) -> ErrorStats:
        return summarize(self.errors())


def leave_one_out(user_ids, train_fn, eval_fn) -> list[FoldResult]:
    """One fold per user: train on the rest, evaluate on the holdout.

    `train_fn(train_ids, fold_index)` returns a model; `eval_fn(model,
    test_id)` returns the fold's SamplePredictions. Folds run in user
    id order, so fold index identifies the holdout deterministically.
    """
    ids = list(user_ids)
    if len(ids) < 2:
        raise ProtocolError("leave-one-out needs at least two users")
    if len(set(ids)) != len(ids):
        raise ProtocolError("duplicate user ids")
    folds = []
    for fold_index, test_id in enumerate(ids):
        train_ids = [u for u in ids if u != test_id]
        model = train_fn(train_ids, fold_index)
        preds = list(eval_fn(model, test_id))
        if not preds:
            raise ProtocolError(f"fold {fold_index} produced no predictions")
        folds.append(FoldResult(fold_index=fold_index, test_user=test_id,
                                predictions=preds))
    return folds


def calibration_split(session_sizes, swap: bool = False):
    """Split four sessions into balanced calibration and test halves.

    `session_sizes` is ``[(session_id, n_points), ...]`` for the four
    candidate sessions: two of one size and two of another. Each half
    gets one session of each size, so calibration and test see the same
    grid mix; `swap` exchanges the halves.
    """
    sizes = {}
    for sid, n in session_sizes:
        sizes.setdefault(int(n), []).append(sid)
    if len(session_sizes) != 4 or sorted(len(v) for v in sizes.values()) != [2, 2]:
        raise ProtocolError(
            "calibration split needs exactly two sessions of each of two sizes, "
            f"got {[n for _, n in session_sizes]}")
    big, small = sorted(sizes, reverse=True)
    first = [sizes[big][0], sizes[small][0]]
    second = [sizes[big][1], sizes[small][1]]
    return (second, first) if swap else (first, second)


@dataclass(frozen=True)
class CaseSpec:
    """Structure of one evaluation case; training details live in config."""

    case_id: int
    cohort: str      # profile evaluated on: "U" | "I"
    init: str        # "random" | "pretrained"
    scheme: str      # "loo" | "calibration"
    description: str


CASES: dict[int, CaseSpec] = {
    1: CaseSpec(1, "U", "random", "loo",
                "cross-user transfer within the camera-centred profile"),
    2: CaseSpec(2, "I", "pretrained", "loo",
                "cross-profile transfer: pretrained features, new population"),
    3: CaseSpec(3, "I", "random", "loo",
                "cross-user transfer within the above-screen profile"),
    4: CaseSpec(4, "I", "pretrained", "calibration",
                "per-user calibration by fine-tuning the pretrained model"),
    5: CaseSpec(5, "I", "random", "calibration",
                "per-user calibration trained from scratch"),
}


def case_spec(case_id: int) -> CaseSpec:
    try:
        return CASES[int(case_id)]
    except (KeyError, ValueError) as e:
        raise ProtocolError(f"unknown case {case_id!r}; valid cases are 1..5") from e


@dataclass(eq=False)
class CaseReport:
    """All folds of one case at one seed."""

    case_id: int
    seed: int
    folds: list[FoldResult]
    model_provenance: str = ""
    created_at: str = ""

    def all_predictions(self) -> list[SamplePrediction]:
        return [p for f in self.folds for p in f.predictions]

    def pooled_stats(self) -> ErrorStats:
        return summarize([p.error_deg for f in self.folds for p in f.predictions])

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "seed": self.seed,
            "description": case_spec(self.case_id).description,
            "model_provenance": self.model_provenance,
            "created_at": self.created_at,
            "pooled": self.pooled_stats().to_dict(),
            "folds": [
                {
                    "fold_index": f.fold_index,
                    "test_user": f.test_user,
                    "stats": f.stats().to_dict(),
                    "predictions": [
                        {
                            "user_id": p.user_id,
                            "session_id": p.session_id,
                            "point_index": p.point_index,
                            "true_mm": p.true_mm.tolist(),
                            "pred_mm": p.pred_mm.tolist(),
                            "camera_distance_mm": p.camera_distance_mm,
                            "error_deg": p.error_deg,
                        }
                        for p in f.predictions
                    ],
                }
                for f in self.folds
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CaseReport":
        folds = []
        for fd in d["folds"]:
            preds = [SamplePrediction(
                user_id=p["user_id"], session_id=p["session_id"],
                point_index=p["point_index"],
                true_mm=np.asarray(p["true_mm"], dtype=float),
                pred_mm=np.asarray(p["pred_mm"], dtype=float),
                camera_distance_mm=p["camera_distance_mm"],
                error_deg=p["error_deg"]) for p in fd["predictions"]]
            folds.append(FoldResult(fold_index=fd["fold_index"],
                                    test_user=fd["test_user"], predictions=preds))
        return cls(case_id=d["case_id"], seed=d["seed"], folds=folds,
                   model_provenance=d.get("model_provenance", ""),
                   created_at=d.get("created_at", ""))


def compare_cases(stats_by_case: dict[int, ErrorStats]) -> dict:
    """Cross-case flags; cases absent from the input yield no flags."""
    out: dict = {}
    s = stats_by_case
    if 2 in s and 3 in s:
        tol = 0.25 * max(s[2].std, s[3].std)
        out["comparable_2_3"] = bool(abs(s[2].mean - s[3].mean) <= tol)
        out["mean_gap_2_3"] = abs(s[2].mean - s[3].mean)
        out["mean_gap_tolerance"] = tol
    if 1 in s and 2 in s and 3 in s:
        out["compact_1"] = bool(s[1].iqr < min(s[2].iqr, s[3].iqr))
    if 4 in s and 5 in s:
        if s[4].median <= 0:
            raise ProtocolError("case 4 median must be positive for the gap ratio")
        out["calibration_gap"] = s[5].median / s[4].median
    return out


def compare_reports(reports) -> dict:
    """Side-by-side pooled stats and cross-case flags for whole reports.

    Rejects two reports for the same case: pooling them silently would
    hide that a comparison mixed runs.
    """
    stats_by_case: dict[int, ErrorStats] = {}
    for rep in reports:
        if rep.case_id in stats_by_case:
            raise ProtocolError(f"duplicate reports for case {rep.case_id}")
        stats_by_case[rep.case_id] = rep.pooled_stats()
    if not stats_by_case:
        raise ProtocolError("no reports to compare")
    return {
        "cases": {cid: stats_by_case[cid].to_dict()
                  for cid in sorted(stats_by_case)},
        "flags": compare_cases(stats_by_case),
    }


def _canonical(obj, drop_timestamps: bool):
    if isinstance(obj, dict):
        return {k: _canonical(v, drop_timestamps) for k, v in sorted(obj.items())
                if not (drop_timestamps and k == "created_at")}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v, drop_timestamps) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        raise ValidationError("non-finite value in report")
    return obj


def report_hash(report_dict: dict) -> str:
    """sha256 of the canonical JSON form, timestamps excluded at every level."""
    blob = json.dumps(_canonical(report_dict, drop_timestamps=True), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def write_report_json(report_dict: dict, path) -> None:
    """Deterministic JSON: sorted keys, newline-terminated."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_canonical(report_dict, drop_timestamps=False), fh,
                  sort_keys=True, indent=1)
        fh.write("\n")


def read_report_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


CSV_HEADER = ["case", "fold", "user", "session", "point_index",
              "true_x_mm", "true_y_mm", "pred_x_mm", "pred_y_mm", "error_deg"]


def write_report_csv(report: CaseReport, path) -> None:
    """One row per prediction, repr-formatted floats."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for f in report.folds:
            for p in f.predictions:
                writer.writerow([repr(v) if isinstance(v, float) else v
                                 for v in p.to_row(report.case_id, f.fold_index)])


@dataclass(eq=False)
class RunSummary:
    """Stats and flags across cases and seeds, for the report command."""

    seeds: list[int]
    per_case: dict[int, dict[int, ErrorStats]] = field(default_factory=dict)
    # per_case[case_id][seed] -> ErrorStats

    def add(self, case_id: int, seed: int, stats: ErrorStats) -> None:
        self.per_case.setdefault(case_id, {})[seed] = stats

    def flags_by_seed(self) -> dict[int, dict]:
        out = {}
        for seed in self.seeds:
            stats = {cid: by_seed[seed] for cid, by_seed in self.per_case.items()
                     if seed in by_seed}
            out[seed] = compare_cases(stats)
        return out

    def case_medians(self, case_id: int) -> list[float]:
        by_seed = self.per_case.get(case_id, {})
        return [by_seed[s].median for s in self.seeds if s in by_seed]

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "cases": {str(cid): {str(seed): st.to_dict()
                                 for seed, st in sorted(by_seed.items())}
                      for cid, by_seed in sorted(self.per_case.items())},
            "flags_by_seed": {str(s): f for s, f in self.flags_by_seed().items()},
        }
