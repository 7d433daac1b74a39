"""Measurement simulation, dataset handling, and the end-to-end experiment.

A dataset holds repeated noisy measurements at each room test point, in one
of two feature layouts:

  * rssi:   [rssi_1, rssi_2, rssi_3]
  * hybrid: [rssi_1, rssi_2, rssi_3, aoa_1, aoa_2, aoa_3]

Each drawn sample is screened against the theoretical (noise-free) feature
vector and redrawn on rejection, mirroring a field protocol where outlier
readings are remeasured. Datasets are split per point, min-max normalized
from the training split only, and fed to the neural regressors; accuracy is
the mean Euclidean error in millimeters on denormalized predictions.

run_experiment() sweeps environments x seeds x layouts x model families and
emits machine-readable tables. Experiment cells are independent; set
LOCUS_THREADS to run them in parallel worker processes.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import neural
from .channel import ArraySpec, NlosModel, PathLossParams, SourceSpec, expected_rssi, simulate_snapshots
from .environment import Environment, Point2D, environment_from_dict, environment_to_dict, jittered_grid, make_environment, true_aoa, true_distance
from .aoa import estimate_aoa
from .hybrid import hybrid_position
from .trilat import DistanceVector, rssi_to_distance, trilaterate

LAYOUTS = ("rssi", "hybrid")
MODEL_FAMILIES = ("mlp", "rbf", "cnn")
REDRAW_CAP = 100

# Keep loss_history.csv bounded: at most about this many rows per run.
_HISTORY_ROWS = 400


@dataclass(frozen=True)
class MeasurementSample:
    features: tuple[float, ...]
    target: Point2D
    point_id: int


@dataclass(frozen=True)
class OutlierPolicy:
    """Per-anchor RSSI deviation thresholds (dB) and a shared AoA threshold (deg).

    A sample is rejected when any |measured - theoretical| exceeds its
    threshold. Comparisons are <= threshold, so zero-noise data passes a
    zero threshold.
    """

    rssi_threshold_db: tuple[float, float, float]
    aoa_threshold_deg: float = 10.0

    def __post_init__(self):
        if len(self.rssi_threshold_db) != 3 or any(t < 0 for t in self.rssi_threshold_db):
            raise ValueError("need three nonnegative rssi thresholds")
        if self.aoa_threshold_deg < 0:
            raise ValueError("aoa threshold must be nonnegative")


def default_outlier_policy(params3, sigma_multiple=3.0, aoa_threshold_deg=10.0) -> OutlierPolicy:
    """The standard screen: 3 sigma per anchor on RSSI, 10 degrees on AoA."""
    return OutlierPolicy(
        rssi_threshold_db=tuple(sigma_multiple * p.sigma for p in params3),
        aoa_threshold_deg=aoa_threshold_deg,
    )


def screen_outlier(theoretical, measured, policy: OutlierPolicy) -> bool:
    """True when the measured feature vector is accepted.

    Both vectors are layout-ordered: 3 RSSI values, optionally followed by
    3 AoA values. Angle differences are compared raw (no wrapping).
    """
    theoretical = np.asarray(theoretical, dtype=float)
    measured = np.asarray(measured, dtype=float)
    if theoretical.shape != measured.shape or theoretical.shape[0] not in (3, 6):
        raise ValueError("feature vectors must both have 3 or 6 entries")
    dev = np.abs(measured - theoretical)
    if np.any(dev[:3] > np.asarray(policy.rssi_threshold_db)):
        return False
    if theoretical.shape[0] == 6 and np.any(dev[3:] > policy.aoa_threshold_deg):
        return False
    return True


@dataclass(frozen=True)
class AoaSim:
    """How AoA features are produced.

    fast:  true angle + NLoS perturbation + Gaussian estimation noise.
    music: per-sample array snapshots at the NLoS-perturbed angle, estimated
           by the subspace scan. Assumes boundary-placed anchors so that all
           in-room bearings fit a +-90 degree field of view around the
           room-center reference direction. Far slower; meant for reduced
           sample counts.
    """

    mode: str = "fast"
    noise_deg: float = 2.0
    array: ArraySpec = ArraySpec(8, 0.5, 256)
    snr_db: float = 20.0
    grid_step_deg: float = 0.25

    def __post_init__(self):
        if self.mode not in ("fast", "music"):
            raise ValueError(f"aoa mode must be 'fast' or 'music', got {self.mode!r}")
        if self.noise_deg < 0:
            raise ValueError("aoa estimation noise must be nonnegative")


@dataclass(frozen=True)
class Dataset:
    """Feature/target arrays over an environment's test points."""

    env: Environment
    layout: str
    seed: int
    features: np.ndarray  # (n, 3 or 6)
    targets: np.ndarray  # (n, 2)
    point_ids: np.ndarray  # (n,)
    rejects: int = 0

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        want = 3 if self.layout == "rssi" else 6
        n = self.features.shape[0]
        if self.features.ndim != 2 or self.features.shape[1] != want:
            raise ValueError(f"{self.layout} layout needs {want} feature columns")
        if self.targets.shape != (n, 2) or self.point_ids.shape != (n,):
            raise ValueError("features, targets and point ids must align")
        counts = np.bincount(self.point_ids)
        counts = counts[counts > 0]
        if counts.size and not np.all(counts == counts[0]):
            raise ValueError("every test point must contribute the same sample count")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def samples(self) -> list[MeasurementSample]:
        return [
            MeasurementSample(
                features=tuple(float(v) for v in self.features[i]),
                target=Point2D(float(self.targets[i, 0]), float(self.targets[i, 1])),
                point_id=int(self.point_ids[i]),
            )
            for i in range(self.n)
        ]

    def project_rssi(self) -> "Dataset":
        """Drop the AoA columns, keeping the exact same accepted draws."""
        if self.layout != "hybrid":
            raise ValueError("only a hybrid dataset can be projected to rssi features")
        return Dataset(
            env=self.env,
            layout="rssi",
            seed=self.seed,
            features=self.features[:, :3].copy(),
            targets=self.targets,
            point_ids=self.point_ids,
            rejects=self.rejects,
        )

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            env=self.env,
            layout=self.layout,
            seed=self.seed,
            features=self.features[idx],
            targets=self.targets[idx],
            point_ids=self.point_ids[idx],
            rejects=self.rejects,
        )


def dataset_to_dict(ds: Dataset) -> dict:
    return {
        "format": "locus-dataset",
        "version": 1,
        "environment": environment_to_dict(ds.env),
        "layout": ds.layout,
        "seed": ds.seed,
        "rejects": ds.rejects,
        "samples": [
            {
                "point_id": int(pid),
                "features": [float(v) for v in feat],
                "target": [float(t[0]), float(t[1])],
            }
            for pid, feat, t in zip(ds.point_ids, ds.features, ds.targets)
        ],
    }


def dataset_from_dict(d: dict) -> Dataset:
    if d.get("format") != "locus-dataset" or d.get("version") != 1:
        raise ValueError("not a recognized dataset document")
    samples = d["samples"]
    return Dataset(
        env=environment_from_dict(d["environment"]),
        layout=d["layout"],
        seed=int(d["seed"]),
        features=np.array([s["features"] for s in samples], dtype=float),
        targets=np.array([s["target"] for s in samples], dtype=float),
        point_ids=np.array([s["point_id"] for s in samples], dtype=int),
        rejects=int(d.get("rejects", 0)),
    )


def _per_anchor_params(params) -> list[PathLossParams]:
    if isinstance(params, PathLossParams):
        return [params] * 3
    params = list(params)
    if len(params) != 3:
        raise ValueError("need one path loss parameter set per anchor")
    return params


def _wrap180(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def generate_dataset(
    env: Environment,
    params,
    nlos: NlosModel,
    n_per_point: int,
    layout: str = "hybrid",
    outlier: OutlierPolicy | None = None,
    seed: int = 0,
    aoa: AoaSim | None = None,
) -> Dataset:
    """Draw n_per_point accepted samples at every test point.

    Rejected draws are redrawn (cap 100 rounds per sample); the total count
    of rejected draws is reported on the dataset. Bit-identical output for a
    fixed seed.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    if n_per_point < 1:
        raise ValueError("n_per_point must be positive")
    if not env.test_points:
        raise ValueError("environment has no test points")
    params3 = _per_anchor_params(params)
    aoa = aoa if aoa is not None else AoaSim()
    policy = outlier if outlier is not None else default_outlier_policy(params3)
    rng = np.random.default_rng(seed)
    sigmas = np.array([p.sigma for p in params3])
    thr_rssi = np.asarray(policy.rssi_threshold_db)

    feats_all = []
    targets_all = []
    pids_all = []
    rejects = 0
    for pid, p in enumerate(env.test_points):
        dists = [true_distance(env, i, p) for i in (1, 2, 3)]
        theo_rssi = np.array([expected_rssi(params3[i], dists[i]) for i in range(3)])
        theo_aoa = np.array([true_aoa(env, i, p) for i in (1, 2, 3)])
        if layout == "hybrid" and aoa.mode == "music":
            feats, rej = _draw_point_music(
                rng, env, n_per_point, theo_rssi, theo_aoa, sigmas, nlos, policy, aoa
            )
        else:
            feats, rej = _draw_point_fast(
                rng, n_per_point, theo_rssi, theo_aoa, sigmas, nlos, policy, aoa,
                hybrid=(layout == "hybrid"), thr_rssi=thr_rssi,
            )
        rejects += rej
        feats_all.append(feats)
        targets_all.append(np.tile([p.x, p.y], (n_per_point, 1)))
        pids_all.append(np.full(n_per_point, pid))
    return Dataset(
        env=env,
        layout=layout,
        seed=int(seed),
        features=np.vstack(feats_all),
        targets=np.vstack(targets_all),
        point_ids=np.concatenate(pids_all),
        rejects=rejects,
    )


def _draw_point_fast(rng, n, theo_rssi, theo_aoa, sigmas, nlos, policy, aoa, hybrid, thr_rssi):
    def draw(count):
        rssi = theo_rssi - nlos.excess_loss_db - rng.standard_normal((count, 3)) * sigmas
        if not hybrid:
            return rssi
        ang = (
            theo_aoa
            + rng.standard_normal((count, 3)) * nlos.aoa_bias_deg_sigma
            + rng.standard_normal((count, 3)) * aoa.noise_deg
        )
        return np.column_stack([rssi, ang])

    def rejected(feats):
        bad = np.any(np.abs(feats[:, :3] - theo_rssi) > thr_rssi, axis=1)
        if hybrid:
            bad |= np.any(np.abs(feats[:, 3:] - theo_aoa) > policy.aoa_threshold_deg, axis=1)
        return bad

    feats = draw(n)
    bad = rejected(feats)
    rejects = int(bad.sum())
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > REDRAW_CAP:
            raise RuntimeError(
                f"outlier redraw cap exceeded ({REDRAW_CAP} rounds); policy too strict for the noise level"
            )
        fresh = draw(int(bad.sum()))
        feats[bad] = fresh
        still = rejected(fresh)
        rejects += int(still.sum())
        bad_idx = np.where(bad)[0]
        bad = np.zeros_like(bad)
        bad[bad_idx[still]] = True
    return feats, rejects


def _draw_point_music(rng, env, n, theo_rssi, theo_aoa, sigmas, nlos, policy, aoa):
    center = Point2D(env.length / 2.0, env.width / 2.0)
    refs = [true_aoa(env, i, center) for i in (1, 2, 3)]
    thr_rssi = np.asarray(policy.rssi_threshold_db)
    feats = np.empty((n, 6))
    rejects = 0
    for s in range(n):
        attempts = 0
        while True:
            rssi = theo_rssi - nlos.excess_loss_db - rng.standard_normal(3) * sigmas
            ang = np.empty(3)
            for i in range(3):
                biased = theo_aoa[i] + rng.normal(0.0, nlos.aoa_bias_deg_sigma)
                phi = _wrap180(biased - refs[i])
                phi = float(np.clip(phi, -89.9, 89.9))
                snap = simulate_snapshots(
                    aoa.array, [SourceSpec(phi, 0.0)], noise_power_db=-aoa.snr_db, rng=rng
                )
                est = estimate_aoa(snap, 1, grid_step_deg=aoa.grid_step_deg)[0]
                ang[i] = est + refs[i]
            ok = not (
                np.any(np.abs(rssi - theo_rssi) > thr_rssi)
                or np.any(np.abs(ang - theo_aoa) > policy.aoa_threshold_deg)
            )
            if ok:
                feats[s] = np.concatenate([rssi, ang])
                break
            rejects += 1
            attempts += 1
            if attempts >= REDRAW_CAP:
                raise RuntimeError(
                    f"outlier redraw cap exceeded ({REDRAW_CAP}) at sample {s}; policy too strict"
                )
    return feats, rejects


def split(ds: Dataset, train_fraction: float, seed: int = 0):
    """Per-point stratified split into (train, test) datasets.

    Each point's samples are shuffled and cut at round(fraction * count);
    both sides must stay non-empty for every point.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train fraction must lie in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx = []
    test_idx = []
    for pid in np.unique(ds.point_ids):
        idx = np.where(ds.point_ids == pid)[0]
        n_train = int(round(train_fraction * idx.size))
        if n_train == 0 or n_train == idx.size:
            raise ValueError(
                f"fraction {train_fraction} leaves an empty split for point {pid} ({idx.size} samples)"
            )
        perm = rng.permutation(idx.size)
        train_idx.append(np.sort(idx[perm[:n_train]]))
        test_idx.append(np.sort(idx[perm[n_train:]]))
    return ds.subset(np.concatenate(train_idx)), ds.subset(np.concatenate(test_idx))


@dataclass(frozen=True)
class NormStats:
    """Min-max ranges learned from a training split only."""

    feature_min: np.ndarray
    feature_max: np.ndarray
    target_min: np.ndarray
    target_max: np.ndarray

    @classmethod
    def fit(cls, ds: Dataset) -> "NormStats":
        return cls(
            feature_min=ds.features.min(axis=0),
            feature_max=ds.features.max(axis=0),
            target_min=ds.targets.min(axis=0),
            target_max=ds.targets.max(axis=0),
        )

    @staticmethod
    def _scale(v, lo, hi):
        span = hi - lo
        out = np.zeros_like(v, dtype=float)
        nz = span != 0
        out[..., nz] = (v[..., nz] - lo[nz]) / span[nz]
        return out

    def normalize_features(self, x: np.ndarray) -> np.ndarray:
        """Map into [0, 1] on the training range; out-of-range values pass
        through unclamped (they land below 0 or above 1)."""
        return self._scale(np.asarray(x, dtype=float), self.feature_min, self.feature_max)

    def normalize_targets(self, y: np.ndarray) -> np.ndarray:
        return self._scale(np.asarray(y, dtype=float), self.target_min, self.target_max)

    def denormalize_targets(self, y_norm: np.ndarray) -> np.ndarray:
        y_norm = np.asarray(y_norm, dtype=float)
        return y_norm * (self.target_max - self.target_min) + self.target_min

    def to_dict(self) -> dict:
        return {
            "feature_min": [float(v) for v in self.feature_min],
            "feature_max": [float(v) for v in self.feature_max],
            "target_min": [float(v) for v in self.target_min],
            "target_max": [float(v) for v in self.target_max],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(
            feature_min=np.array(d["feature_min"], dtype=float),
            feature_max=np.array(d["feature_max"], dtype=float),
            target_min=np.array(d["target_min"], dtype=float),
            target_max=np.array(d["target_max"], dtype=float),
        )


@dataclass(frozen=True)
class EvalReport:
    model_family: str
    environment: str
    layout: str
    per_point_mae_mm: dict[int, float]
    overall_mae_mm: float
    n_test: int

    def to_dict(self) -> dict:
        return {
            "model_family": self.model_family,
            "environment": self.environment,
            "layout": self.layout,
            "per_point_mae_mm": {str(k): v for k, v in self.per_point_mae_mm.items()},
            "overall_mae_mm": self.overall_mae_mm,
            "n_test": self.n_test,
        }


def evaluate_mae(model, test_ds: Dataset, stats: NormStats) -> EvalReport:
    """Mean Euclidean error (mm) of denormalized predictions on a test split.

    model: anything exposing forward_batch(normalized features) -> (n, 2)
    normalized coordinates.
    """
    xn = stats.normalize_features(test_ds.features)
    pred = stats.denormalize_targets(model.forward_batch(xn))
    err_mm = 1000.0 * np.linalg.norm(pred - test_ds.targets, axis=1)
    per_point = {}
    for pid in np.unique(test_ds.point_ids):
        per_point[int(pid)] = float(err_mm[test_ds.point_ids == pid].mean())
    return EvalReport(
        model_family=getattr(model, "family", "custom"),
        environment=test_ds.env.name,
        layout=test_ds.layout,
        per_point_mae_mm=per_point,
        overall_mae_mm=float(err_mm.mean()),
        n_test=test_ds.n,
    )


def improvement_percent(rssi_report: EvalReport, hybrid_report: EvalReport) -> float:
    """Relative MAE gain of the hybrid layout over the rssi layout, percent."""
    if rssi_report.layout != "rssi" or hybrid_report.layout != "hybrid":
        raise ValueError("pass (rssi layout report, hybrid layout report)")
    if rssi_report.overall_mae_mm <= 0:
        raise ValueError("rssi-layout MAE must be positive")
    return 100.0 * (rssi_report.overall_mae_mm - hybrid_report.overall_mae_mm) / rssi_report.overall_mae_mm


def trilat_baseline_mae_mm(env: Environment, params3, test_ds: Dataset) -> float:
    """Closed-form trilateration on the raw RSSI features of a test split."""
    errs = []
    for i in range(test_ds.n):
        est = trilaterate(env, params3, test_ds.features[i, :3])
        errs.append(math.hypot(est.p.x - test_ds.targets[i, 0], est.p.y - test_ds.targets[i, 1]))
    return 1000.0 * float(np.mean(errs))


def hybrid_baseline_mae_mm(env: Environment, params3, test_ds: Dataset) -> float:
    """Closed-form distance+angle fusion on raw hybrid features."""
    if test_ds.layout != "hybrid":
        raise ValueError("hybrid baseline needs a hybrid-layout dataset")
    params3 = _per_anchor_params(params3)
    errs = []
    for i in range(test_ds.n):
        d = DistanceVector(
            tuple(rssi_to_distance(params3[j], test_ds.features[i, j]) for j in range(3))
        )
        est = hybrid_position(env, d, test_ds.features[i, 3:6])
        errs.append(math.hypot(est.p.x - test_ds.targets[i, 0], est.p.y - test_ds.targets[i, 1]))
    return 1000.0 * float(np.mean(errs))


# ---------------------------------------------------------------------------
# Experiment configuration and driver


@dataclass(frozen=True)
class EnvSpec:
    env: Environment
    nlos: NlosModel
    params: tuple[PathLossParams, PathLossParams, PathLossParams]


@dataclass(frozen=True)
class ExperimentConfig:
    envs: tuple[EnvSpec, ...]
    seeds: tuple[int, ...] = tuple(range(10))
    n_per_point: int = 500
    train_fraction: float = 0.8
    models: tuple[str, ...] = MODEL_FAMILIES
    layouts: tuple[str, ...] = LAYOUTS
    aoa: AoaSim = AoaSim()
    learning_rate: float = 0.01
    batch_size: int = 32
    epochs: int = 200
    rbf_centers: int = 40
    outlier_sigma_multiple: float = 3.0
    outlier_aoa_deg: float = 10.0

    def __post_init__(self):
        if not self.envs:
            raise ValueError("at least one environment required")
        if not self.seeds:
            raise ValueError("at least one seed required")
        for m in self.models:
            if m not in MODEL_FAMILIES:
                raise ValueError(f"unknown model family {m!r}")
        for l in self.layouts:
            if l not in LAYOUTS:
                raise ValueError(f"unknown layout {l!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")


def _parse_path_loss(d: dict) -> PathLossParams:
    return PathLossParams(
        gamma=float(d["gamma"]),
        sigma=float(d["sigma"]),
        p_r_d0=float(d["p_r_d0"]),
        d0=float(d.get("d0", 1.0)),
    )


def load_config(source) -> ExperimentConfig:
    """Build an ExperimentConfig from a JSON file path or an already-parsed dict."""
    if isinstance(source, (str, os.PathLike)):
        with open(source) as f:
            cfg = json.load(f)
    else:
        cfg = dict(source)
    shared_pl = cfg.get("path_loss", {"gamma": 2.5, "sigma": 3.0, "p_r_d0": -40.0, "d0": 1.0})
    envs = []
    for e in cfg["environments"]:
        if "anchors" in e:
            env = environment_from_dict(e)
        else:
            pts = jittered_grid(
                float(e["length_m"]),
                float(e["width_m"]),
                n=int(e.get("n_points", 10)),
                seed=int(e.get("test_point_seed", 0)),
            )
            env = make_environment(e["name"], float(e["length_m"]), float(e["width_m"]), pts)
        nl = e.get("nlos", {})
        nlos = NlosModel(
            excess_loss_db=float(nl.get("excess_loss_db", 0.0)),
            aoa_bias_deg_sigma=float(nl.get("aoa_bias_deg_sigma", 0.0)),
        )
        pl = e.get("path_loss", shared_pl)
        if isinstance(pl, list):
            params = tuple(_parse_path_loss(p) for p in pl)
            if len(params) != 3:
                raise ValueError("per-anchor path_loss list must have 3 entries")
        else:
            params = (_parse_path_loss(pl),) * 3
        envs.append(EnvSpec(env=env, nlos=nlos, params=params))
    train = cfg.get("train", {})
    music = cfg.get("music", {})
    aoa = AoaSim(
        mode=cfg.get("aoa_mode", "fast"),
        noise_deg=float(cfg.get("aoa_noise_deg", 2.0)),
        array=ArraySpec(
            m=int(music.get("m", 8)),
            spacing_wavelengths=float(music.get("spacing_wavelengths", 0.5)),
            snapshots=int(music.get("snapshots", 256)),
        ),
        snr_db=float(music.get("snr_db", 20.0)),
        grid_step_deg=float(music.get("grid_step_deg", 0.25)),
    )
    outlier = cfg.get("outlier", {})
    return ExperimentConfig(
        envs=tuple(envs),
        seeds=tuple(int(s) for s in cfg.get("seeds", range(10))),
        n_per_point=int(cfg.get("n_per_point", 500)),
        train_fraction=float(cfg.get("train_fraction", 0.8)),
        models=tuple(cfg.get("models", MODEL_FAMILIES)),
        layouts=tuple(cfg.get("layouts", LAYOUTS)),
        aoa=aoa,
        learning_rate=float(train.get("learning_rate", 0.01)),
        batch_size=int(train.get("batch_size", 32)),
        epochs=int(train.get("epochs", 200)),
        rbf_centers=int(cfg.get("rbf_centers", 40)),
        outlier_sigma_multiple=float(outlier.get("rssi_sigma_multiple", 3.0)),
        outlier_aoa_deg=float(outlier.get("aoa_threshold_deg", 10.0)),
    )


def config_to_dict(config: ExperimentConfig) -> dict:
    return {
        "environments": [
            {
                **environment_to_dict(spec.env),
                "nlos": {
                    "excess_loss_db": spec.nlos.excess_loss_db,
                    "aoa_bias_deg_sigma": spec.nlos.aoa_bias_deg_sigma,
                },
                "path_loss": [
                    {"gamma": p.gamma, "sigma": p.sigma, "p_r_d0": p.p_r_d0, "d0": p.d0}
                    for p in spec.params
                ],
            }
            for spec in config.envs
        ],
        "seeds": list(config.seeds),
        "n_per_point": config.n_per_point,
        "train_fraction": config.train_fraction,
        "models": list(config.models),
        "layouts": list(config.layouts),
        "aoa_mode": config.aoa.mode,
        "aoa_noise_deg": config.aoa.noise_deg,
        "train": {
            "learning_rate": config.learning_rate,
            "batch_size": config.batch_size,
            "epochs": config.epochs,
        },
        "rbf_centers": config.rbf_centers,
        "outlier": {
            "rssi_sigma_multiple": config.outlier_sigma_multiple,
            "aoa_threshold_deg": config.outlier_aoa_deg,
        },
    }


def _build_model(family: str, input_dim: int, seed: int, train_features=None, rbf_centers=40):
    if family == "mlp":
        return neural.make_mlp(input_dim, hidden=(32, 32), seed=seed)
    if family == "cnn":
        return neural.make_cnn(input_dim, seed=seed)
    if family == "rbf":
        if train_features is None:
            raise ValueError("RBF init needs training features for center placement")
        k = min(rbf_centers, train_features.shape[0])
        return neural.RbfModel.init(train_features, k=k, seed=seed)
    raise ValueError(f"unknown model family {family!r}")


def _run_cell(config: ExperimentConfig, env_idx: int, seed: int) -> dict:
    """One (environment, seed) cell: shared dataset, all layouts and models."""
    spec = config.envs[env_idx]
    ss = np.random.SeedSequence([int(seed), int(env_idx)])
    state = ss.generate_state(2 + 2 * len(config.models), dtype=np.uint64)
    dataset_seed = int(state[0])
    split_seed = int(state[1])
    policy = default_outlier_policy(
        spec.params, config.outlier_sigma_multiple, config.outlier_aoa_deg
    )
    ds_hybrid = generate_dataset(
        spec.env,
        list(spec.params),
        spec.nlos,
        config.n_per_point,
        layout="hybrid",
        outlier=policy,
        seed=dataset_seed,
        aoa=config.aoa,
    )
    views = {"hybrid": ds_hybrid, "rssi": ds_hybrid.project_rssi()}

    tr_h, te_h = split(ds_hybrid, config.train_fraction, seed=split_seed)
    baselines = {
        "trilat": trilat_baseline_mae_mm(spec.env, list(spec.params), te_h),
        "hybrid_closed_form": hybrid_baseline_mae_mm(spec.env, list(spec.params), te_h),
    }

    runs = []
    for layout in config.layouts:
        tr, te = split(views[layout], config.train_fraction, seed=split_seed)
        stats = NormStats.fit(tr)
        xn = stats.normalize_features(tr.features)
        yn = stats.normalize_targets(tr.targets)
        steps = config.epochs * math.ceil(tr.n / config.batch_size)
        for fam_idx, family in enumerate(config.models):
            init_seed = int(state[2 + 2 * fam_idx])
            train_seed = int(state[3 + 2 * fam_idx])
            model = _build_model(family, tr.features.shape[1], init_seed, xn, config.rbf_centers)
            untrained = evaluate_mae(model, te, stats)
            if family == "rbf":
                final_loss = neural.fit_rbf_output(model, xn, yn)
                history = np.array([final_loss])
            else:
                result = neural.train(
                    model,
                    xn,
                    yn,
                    neural.TrainConfig(
                        learning_rate=config.learning_rate,
                        batch_size=config.batch_size,
                        iterations=steps,
                        seed=train_seed,
                    ),
                )
                history = result.loss_history
            trained = evaluate_mae(model, te, stats)
            stride = max(1, history.size // _HISTORY_ROWS)
            runs.append(
                {
                    "environment": spec.env.name,
                    "seed": seed,
                    "layout": layout,
                    "model": family,
                    "mae_mm": trained.overall_mae_mm,
                    "untrained_mae_mm": untrained.overall_mae_mm,
                    "per_point_mae_mm": {str(k): v for k, v in trained.per_point_mae_mm.items()},
                    "final_loss": float(history[-1]),
                    "steps": int(history.size),
                    "loss_history": [
                        [int(s), float(history[s])] for s in range(0, history.size, stride)
                    ],
                }
            )
    return {
        "environment": spec.env.name,
        "seed": seed,
        "rejects": ds_hybrid.rejects,
        "baselines": baselines,
        "runs": runs,
    }


def _cell_worker(args):
    return _run_cell(*args)


def run_experiment(config: ExperimentConfig, out_dir=None) -> dict:
    """Full sweep; returns the report dict and optionally writes the table files.

    Cells (environment x seed) are independent. LOCUS_THREADS > 1 runs them
    in that many worker processes; results are identical either way.
    """
    cells = [(config, ei, s) for ei in range(len(config.envs)) for s in config.seeds]
    threads = int(os.environ.get("LOCUS_THREADS", "1") or "1")
    if threads > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            cell_results = list(pool.map(_cell_worker, cells))
    else:
        cell_results = [_run_cell(*c) for c in cells]

    runs = [r for cell in cell_results for r in cell["runs"]]
    baselines = [
        {"environment": c["environment"], "seed": c["seed"], **c["baselines"]}
        for c in cell_results
    ]

    env_names = [spec.env.name for spec in config.envs]
    mae_table = {}
    for name in env_names:
        row = {}
        for family in config.models:
            for layout in config.layouts:
                vals = [
                    r["mae_mm"]
                    for r in runs
                    if r["environment"] == name and r["model"] == family and r["layout"] == layout
                ]
                row[f"{family}_{layout}"] = float(np.mean(vals))
        mae_table[name] = row
    improvement = {}
    if "rssi" in config.layouts and "hybrid" in config.layouts:
        for name in env_names:
            row = {}
            for family in config.models:
                a = mae_table[name][f"{family}_rssi"]
                b = mae_table[name][f"{family}_hybrid"]
                row[family] = 100.0 * (a - b) / a
            improvement[name] = row
    baseline_table = {
        name: {
            "trilat": float(np.mean([b["trilat"] for b in baselines if b["environment"] == name])),
            "hybrid_closed_form": float(
                np.mean([b["hybrid_closed_form"] for b in baselines if b["environment"] == name])
            ),
        }
        for name in env_names
    }

    report = {
        "config": config_to_dict(config),
        "runs": [{k: v for k, v in r.items() if k != "loss_history"} for r in runs],
        "baselines": baselines,
        "mae_table_mm": mae_table,
        "improvement_percent": improvement,
        "baseline_mae_mm": baseline_table,
        "total_rejects": int(sum(c["rejects"] for c in cell_results)),
    }
    if out_dir is not None:
        write_report_files(report, runs, config, out_dir)
    return report


def _round6(obj):
    if isinstance(obj, float):
        return round(obj, 6)
    if isinstance(obj, dict):
        return {k: _round6(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round6(v) for v in obj]
    return obj


def write_report_files(report: dict, runs_with_history: list, config: ExperimentConfig, out_dir):
    """report.json plus mae/improvement tables and the training loss log."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(_round6(report), f, indent=2, sort_keys=True)
        f.write("\n")

    cols = [f"{family}_{layout}" for family in config.models for layout in config.layouts]
    lines = ["environment," + ",".join(cols)]
    for name, row in report["mae_table_mm"].items():
        lines.append(name + "," + ",".join(f"{row[c]:.6f}" for c in cols))
    with open(os.path.join(out_dir, "mae_table.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")

    if report["improvement_percent"]:
        lines = ["environment," + ",".join(config.models)]
        for name, row in report["improvement_percent"].items():
            lines.append(name + "," + ",".join(f"{row[m]:.6f}" for m in config.models))
        with open(os.path.join(out_dir, "improvement_table.csv"), "w") as f:
            f.write("\n".join(lines) + "\n")

    lines = ["environment,layout,model,seed,step,loss"]
    for r in runs_with_history:
        for step, loss in r["loss_history"]:
            lines.append(
                f"{r['environment']},{r['layout']},{r['model']},{r['seed']},{step},{loss:.6f}"
            )
    with open(os.path.join(out_dir, "loss_history.csv"), "w") as f:
        f.write("\n".join(lines) + "\n")
