"""Experiment orchestration: one function per experiment kind, each writing
CSV rows (one per sweep point) and a JSON summary into an output directory.

Every random draw descends from ``config.seed`` through :func:`child_seed`, so
two runs of the same config write byte-identical files.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from .._seeding import derive_rng
from ..augment import AugDistribution, apply, sample_augmentation
from ..bounds import bound_thm1, bound_thm2, bound_thm3, bound_thm6
from ..decomposition import (decomposition_check, inner_risk_bound_check, random_encoder, random_world,
                             world_risks)
from ..encoder import Encoder, init_encoder, linear_probe, train, write_trace_csv
from ..metrics import ClassDistanceTerms, centering_residual, class_distance_terms, lipschitz_estimate
from ..pixel_model import GenerativeConfig, sample_dataset, sample_semantic_image
from ..risk import (ContrastiveTuple, default_loss_bound, draw_tuple, empirical_unsup_risk, mean_classifier,
                    col_term, population_unsup_risk_mc, rademacher_linear, sup_risk, sup_risk_terms, tau_K)
from .config import ExperimentConfig, Sweep
from .io import emit_plot_data, load_embeddings

log = logging.getLogger(__name__)

# keys for child seeds; distinct from the per-sample stream ids in _seeding
_K_TRAIN_SET, _K_TEST_SET, _K_FRESH, _K_TRAIN, _K_INIT, _K_DIST, _K_RISK, _K_TUPLES, _K_RAD, _K_WORLD = range(100, 110)

Labeled = list[tuple[np.ndarray, int]]


class OutputError(OSError):
    pass


def child_seed(seed: int, *keys: int) -> int:
    return int(derive_rng(seed, *keys).integers(2**62))


@dataclass
class AugmentedImageSource:
    """Contrastive tuples from the pixel model under one augmentation law."""

    config: GenerativeConfig
    dist: AugDistribution

    @property
    def class_prior(self) -> np.ndarray:
        return self.config.class_prior

    def draw_image(self, c: int, rng: np.random.Generator) -> np.ndarray:
        return sample_semantic_image(self.config, c, rng).image

    def draw_view(self, img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return apply(sample_augmentation(self.dist, rng), img)


def _labeled(config: GenerativeConfig, per_class: int, seed: int) -> Labeled:
    return [(s.image, s.class_label) for s in sample_dataset(config, per_class, seed)]


def sweep_points(cfg: ExperimentConfig) -> list[tuple[Sweep | None, float | None, AugDistribution]]:
    if not cfg.sweeps:
        return [(None, None, cfg.augment)]
    return [(s, v, s.distribution(cfg.augment, v)) for s in cfg.sweeps for v in s.values]


def _point_fields(sweep: Sweep | None, value: float | None) -> dict[str, Any]:
    return {"param": "base" if sweep is None else sweep.param, "value": math.nan if value is None else value}


def _term_fields(t: ClassDistanceTerms) -> dict[str, Any]:
    return {"min_term": t.min_term.value, "min_se": t.min_term.std_error,
            "max_term": t.max_term.value, "max_se": t.max_term.std_error, "sum": t.total}


# -- writing --------------------------------------------------------------------------

def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        v = float(x)
        return v if math.isfinite(v) else repr(v)
    if isinstance(x, (np.integer, np.bool_)):
        return x.item()
    return x


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OutputError(f"cannot write {path}: {exc.strerror}") from None
    return path


def _write_json(out: Path, name: str, obj: Any) -> Path:
    return _write(out, name, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


# -- shared pieces ------------------------------------------------------------------

def _train_encoder(cfg: ExperimentConfig, dist: AugDistribution, train_set: Labeled) -> tuple[Encoder, list[float]]:
    gen = cfg.generative
    in_dim = gen.side * gen.side * 3
    enc = init_encoder(cfg.encoder.arch, in_dim, cfg.encoder.out_dim, cfg.encoder.hidden,
                       seed=child_seed(cfg.seed, _K_INIT))
    tc = cfg.train
    tcfg = type(tc)(**{**tc.to_dict(), "seed": child_seed(cfg.seed, _K_TRAIN)})
    if cfg.fresh_data:
        def data(epoch: int) -> Labeled:
            return _labeled(gen, cfg.per_class, child_seed(cfg.seed, _K_FRESH, epoch))
        return train(enc, data, dist, tcfg, prior=gen.class_prior)
    return train(enc, train_set, dist, tcfg, prior=gen.class_prior)


def _bound_reports(cfg: ExperimentConfig, enc: Encoder, dist: AugDistribution, train_set: Labeled,
                   test_set: Labeled, emb_terms: ClassDistanceTerms, pixel_terms: ClassDistanceTerms | None
                   ) -> list[dict[str, Any]]:
    gen, K, seed = cfg.generative, cfg.K, cfg.seed
    source = AugmentedImageSource(gen, dist)
    R_un = population_unsup_risk_mc(source, enc, cfg.n_risk, K, seed=child_seed(seed, _K_RISK))
    tau, col = tau_K(gen.class_prior, K), col_term(gen.class_prior, K)
    W = mean_classifier(enc, train_set, gen.num_classes)
    R_sup = sup_risk(enc, W, test_set)
    probe_imgs = [x for x, _ in test_set[:: max(1, len(test_set) // 16)]]
    residuals = [centering_residual(enc, x, dist, m=32, seed=child_seed(seed, _K_DIST, j))
                 for j, x in enumerate(probe_imgs)]
    mn, mx = emb_terms.min_term, emb_terms.max_term
    reports = [
        bound_thm1(R_un, tau, col, (mn.value, mn.std_error), (mx.value, mx.std_error), R_sup),
        bound_thm2(R_un, tau, col, (mn.value, mn.std_error), (mx.value, mx.std_error), R_sup,
                   centering_residuals=residuals),
    ]
    if enc.arch == "linear":
        rng_t = child_seed(seed, _K_TUPLES)
        S = [draw_tuple(source, K, derive_rng(rng_t, j))[0] for j in range(cfg.n_risk)]
        R_hat = empirical_unsup_risk(S, enc)
        rad = rademacher_linear(S, float(np.linalg.norm(enc.params["W"])), enc.out_dim, n_sign_draws=50,
                                seed=child_seed(seed, _K_RAD))
        reports.append(bound_thm3(R_hat, rad, 1.0, default_loss_bound(K), cfg.n_risk, cfg.delta, tau, col,
                                  (mn.value, mn.std_error), (mx.value, mx.std_error), R_sup))
    if pixel_terms is not None:
        rng = derive_rng(seed, _K_DIST)
        pairs = [(x, apply(sample_augmentation(dist, rng), x)) for x, _ in train_set[:: max(1, len(train_set) // 32)]]
        c_L = lipschitz_estimate(enc, pairs)
        pm, px = pixel_terms.min_term, pixel_terms.max_term
        reports.append(bound_thm6(R_un, tau, col, (pm.value, pm.std_error), (px.value, px.std_error), c_L, R_sup,
                                  centering_ok=reports[1].flags["centering_ok"]))
    return [r.to_dict() for r in reports]


# -- experiment kinds -------------------------------------------------------------

def run_pixel_distances(cfg: ExperimentConfig, out: Path) -> list[Path]:
    data = _labeled(cfg.generative, cfg.per_class, child_seed(cfg.seed, _K_TRAIN_SET))
    rows = []
    for sweep, value, dist in sweep_points(cfg):
        t = class_distance_terms(data, dist, None, cfg.m_a, cfg.m_c, seed=child_seed(cfg.seed, _K_DIST))
        rows.append({**_point_fields(sweep, value), **_term_fields(t)})
    trends = {}
    for s in cfg.sweeps:
        sel = [r for r in rows if r["param"] == s.param]
        trends[s.param] = {"spearman_min": _spearman(s.values, [r["min_term"] for r in sel]),
                           "spearman_max": _spearman(s.values, [r["max_term"] for r in sel])}
    return [_write(out, "pixel_distances.csv", emit_plot_data(rows)),
            _write_json(out, "summary.json", {"config": cfg.to_dict(), "rows": rows, "trends": trends})]


def _spearman(x: Sequence[float], y: Sequence[float]) -> float:
    if len(x) < 2 or np.ptp(y) == 0:
        return math.nan
    return float(spearmanr(x, y).statistic)


def _train_points(cfg: ExperimentConfig, out: Path, probe: bool, reports: bool) -> tuple[list[dict], list[Path], dict]:
    gen = cfg.generative
    train_set = _labeled(gen, cfg.per_class, child_seed(cfg.seed, _K_TRAIN_SET))
    test_set = _labeled(gen, cfg.test_per_class, child_seed(cfg.seed, _K_TEST_SET))
    rows, files, all_reports = [], [], {}
    for j, (sweep, value, dist) in enumerate(sweep_points(cfg)):
        enc, trace = _train_encoder(cfg, dist, train_set)
        emb = class_distance_terms(train_set, dist, enc, cfg.m_a, cfg.m_c, seed=child_seed(cfg.seed, _K_DIST))
        row = {**_point_fields(sweep, value), **_term_fields(emb), "final_loss": trace[-1] if trace else math.nan}
        if probe:
            row["probe_accuracy"] = linear_probe(enc, train_set, test_set, cfg.probe_epochs, cfg.probe_lr,
                                                 num_classes=gen.num_classes)
        if reports:
            pix = class_distance_terms(train_set, dist, None, cfg.m_a, cfg.m_c, seed=child_seed(cfg.seed, _K_DIST))
            reps = _bound_reports(cfg, enc, dist, train_set, test_set, emb, pix)
            all_reports[f"point{j}"] = reps
            for r in reps:
                row[f"{r['theorem']}_rhs"] = r["rhs"]
            row["R_sup"] = reps[0]["lhs"]
            for name in ("thm3_rhs",):
                row.setdefault(name, math.nan)
        rows.append(row)
        trace_path = out / "traces" / f"point{j}.csv"
        try:
            trace_path.parent.mkdir(parents=True, exist_ok=True)
            write_trace_csv(trace, trace_path)
        except OSError as exc:
            raise OutputError(f"cannot write {trace_path}: {exc.strerror}") from None
        files.append(trace_path)
    return rows, files, all_reports


def optimal_agreement(rows: Sequence[dict[str, Any]]) -> dict[str, Any]:
    """Whether the point with the smallest distance sum has the top probe
    accuracy. Ties in the sum go to the smaller swept value."""
    order = sorted(range(len(rows)), key=lambda j: (rows[j]["sum"], rows[j]["value"]))
    best_sum = order[0]
    top = max(r["probe_accuracy"] for r in rows)
    return {"argmin_sum": rows[best_sum]["value"],
            "argmax_accuracy": [r["value"] for r in rows if r["probe_accuracy"] == top],
            "agree": rows[best_sum]["probe_accuracy"] == top}


def run_repr_distances(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows, files, _ = _train_points(cfg, out, probe=False, reports=False)
    return files + [_write(out, "repr_distances.csv", emit_plot_data(rows)),
                    _write_json(out, "summary.json", {"config": cfg.to_dict(), "rows": rows})]


def run_train_sweep(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows, files, reports = _train_points(cfg, out, probe=True, reports=True)
    summary = {"config": cfg.to_dict(), "rows": rows, "bound_reports": reports}
    for s in cfg.sweeps:
        sel = [r for r in rows if r["param"] == s.param]
        summary.setdefault("agreement", {})[s.param] = optimal_agreement(sel)
    return files + [_write(out, "train_sweep.csv", emit_plot_data(rows)),
                    _write_json(out, "summary.json", summary)]


def run_bound_report(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows, files, reports = _train_points(cfg, out, probe=False, reports=True)
    flat = []
    for point, reps in reports.items():
        for r in reps:
            for t in r["terms"]:
                flat.append({"point": point, "theorem": r["theorem"], "term": t["name"], "value": t["value"],
                             "std_error": t.get("std_error", math.nan), "provenance": t["provenance"]})
            flat.append({"point": point, "theorem": r["theorem"], "term": "rhs", "value": r["rhs"],
                         "std_error": math.nan, "provenance": "bound"})
    summary: dict[str, Any] = {"config": cfg.to_dict(), "rows": rows, "bound_reports": reports}
    if cfg.embeddings is not None:
        summary["external_embeddings"] = embedding_audit(cfg.embeddings)
    return files + [_write(out, "bound_terms.csv", emit_plot_data(flat, ["point", "theorem", "term", "value",
                                                                          "std_error", "provenance"])),
                    _write_json(out, "bound_reports.json", reports),
                    _write_json(out, "summary.json", summary)]


def embedding_audit(path: str | Path) -> dict[str, Any]:
    """Mean-classifier risk and accuracy of an external embedding table, with
    the class means taken from the table itself."""
    table = load_embeddings(path)
    if table.n == 0:
        return {"n": 0}
    feats = table.vectors.astype(np.float64)
    y = table.labels
    W = mean_classifier(lambda x: x, [(v, int(c)) for v, c in zip(feats, y)], table.num_classes)
    return {"n": table.n, "d": table.d, "num_classes": table.num_classes,
            "mean_classifier_risk": float(sup_risk_terms(feats, y, W).mean()),
            "mean_classifier_accuracy": float(np.mean(W.predict(feats) == y))}


def _world_sizes(cfg: ExperimentConfig, w: int) -> dict[str, int]:
    rng = derive_rng(cfg.seed, _K_WORLD, w)
    ws = cfg.world
    return {key: int(rng.integers(lo, hi + 1)) for key, (lo, hi) in
            (("C", ws.classes), ("K", ws.K), ("n_img", ws.images), ("n_aug", ws.augs))}


def run_decomp_check(cfg: ExperimentConfig, out: Path) -> list[Path]:
    rows = []
    for w in range(cfg.world.num_worlds):
        sizes = _world_sizes(cfg, w)
        wseed = child_seed(cfg.seed, _K_WORLD, w)
        world = random_world(wseed, dim=cfg.world.dim, aug_noise=cfg.world.aug_noise, skew=cfg.world.skew, **sizes)
        f = random_encoder(wseed, cfg.world.dim)
        rep = decomposition_check(world, f)
        inner = min(r.slack for r in inner_risk_bound_check(world, f))
        risks = world_risks(world, f)
        thm1 = bound_thm1(risks.r_un, risks.tau, risks.col, risks.min_term, risks.max_term, risks.r_sup_conditional)
        rows.append({"world": w, **sizes, "r_un": rep.direct, "reconstructed": rep.reconstructed, "gap": rep.gap,
                     "inner_min_slack": inner, "rbar_slack": risks.rbar_slack, "curl_gap": risks.curl_gap,
                     "thm1_slack": thm1.slack if thm1.slack is not None else math.nan})
    summary = {"config": cfg.to_dict(), "rows": rows,
               "max_gap": max(r["gap"] for r in rows),
               "min_inner_slack": min(r["inner_min_slack"] for r in rows),
               "min_rbar_slack": min(r["rbar_slack"] for r in rows)}
    return [_write(out, "decomp_check.csv", emit_plot_data(rows)),
            _write_json(out, "decomp_check.json", summary)]


RUNNERS: dict[str, Callable[[ExperimentConfig, Path], list[Path]]] = {
    "pixel-distances": run_pixel_distances,
    "repr-distances": run_repr_distances,
    "bound-report": run_bound_report,
    "decomp-check": run_decomp_check,
    "train-sweep": run_train_sweep,
}


def run(cfg: ExperimentConfig, out: str | Path) -> list[Path]:
    """Run ``cfg`` and return the files written under ``out``."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc.strerror}") from None
    return RUNNERS[cfg.kind](cfg, out)
