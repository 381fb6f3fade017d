"""Synthetic experiment pipelines: forward-map stability, training dynamics, geometry sweep.

Every pipeline is a pure function of an :class:`ExperimentConfig`; all
randomness flows from ``cfg.master_seed`` through :func:`derive_seed`, so
outputs are byte-identical across reruns and across ``jobs`` settings.
"""

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .config import ExperimentConfig, dumps
from .geometry import (
    BOUND_SLACK,
    centroid_projection,
    class_balanced_split,
    class_stat_gaps,
    geometry_report,
    gram_distortion,
    knn_overlap,
    max_pairwise_sq_distance_gap,
    procrustes_report,
)
from .graph import (
    GraphOperator,
    WeightedGraph,
    class_features,
    format_float,
    generate_geometric_knn,
    generate_sbm,
    laplacian,
    scale_operator,
    write_graph,
)
from .model import (
    GnnModel,
    bound_Crep,
    filter_error,
    forward,
    init_weights,
    representation_error,
)
from .seeding import (
    STAGE_FEATURES,
    STAGE_GRAPH,
    STAGE_SPLIT,
    STAGE_TRAIN,
    STAGE_WEIGHTS,
    derive_seed,
)
from .numerics import operator_norm
from .sparsify import TargetLevel, draw_with_distortion, resistances, select_by_target_distortion
from .train import TrainConfig, one_hot, train, train_pair

FAMILIES = ("sbm", "geometric")

GEOMETRY_COLUMNS = (
    "dataset",
    "level_index",
    "draw_index",
    "eps_emp",
    "retained_fraction",
    "rel_filter_err",
    "rel_repr_err",
    "rel_gram_err",
    "knn_overlap",
    "max_sq_dist_gap",
    "mean_gap_max",
    "cov_gap_max",
    "cp_bound_pass",
    "crep_bound_pass",
    "gram_bound_pass",
)

TRAJECTORY_COLUMNS = (
    "epoch",
    "loss_dense",
    "loss_sparse",
    "rel_param_gap",
    "eps_emp",
    "draw_index",
    "level_index",
    "depth",
)

CONTROL_LEVEL = -1


# ---------------------------------------------------------------------------
# output plumbing


def _cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    return str(value)


def csv_text(columns, rows) -> str:
    """Pinned dialect: comma separated, LF endings, 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row[c]) for c in columns])
    return buf.getvalue()


def write_csv(path, columns, rows) -> None:
    Path(path).write_text(csv_text(columns, rows), encoding="utf-8", newline="")


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def _map(fn, items, jobs: int) -> list:
    """Ordered map; results come back in input order whatever ``jobs`` is."""
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def spearman(x, y) -> float:
    if len(x) < 2 or np.ptp(x) == 0 or np.ptp(y) == 0:
        return float("nan")
    return float(spearmanr(x, y)[0])


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    seed: int
    graph: WeightedGraph
    X: np.ndarray  # rescaled so the mean row norm is 1
    labels: np.ndarray
    operator: GraphOperator  # dense scaled Laplacian
    test_nodes: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def sparse_operator(self, g: WeightedGraph) -> GraphOperator:
        return scale_operator(laplacian(g), self.operator.scale)


def family_seed(master: int, family: str) -> int:
    return derive_seed(master, FAMILIES.index(family), 0, STAGE_GRAPH)


def build_dataset(cfg: ExperimentConfig, family: str) -> Dataset:
    seed = family_seed(cfg.master_seed, family)
    if family == "sbm":
        s = cfg.sbm
        g = generate_sbm(s.block_sizes, s.p_in, s.p_out, s.weight_low, s.weight_high, seed=seed)
        labels = np.repeat(np.arange(len(s.block_sizes)), s.block_sizes)
        X = class_features(
            labels,
            cfg.dataset.feature_dim,
            center_scale=cfg.dataset.center_scale,
            noise_std=cfg.dataset.noise_std,
            seed=derive_seed(seed, 0, 0, STAGE_FEATURES),
        ).X
    elif family == "geometric":
        s = cfg.geometric
        g, feats = generate_geometric_knn(
            s.n_per_class,
            s.num_classes,
            s.feat_dim,
            s.k,
            seed=seed,
            center_scale=s.center_scale,
            noise_std=s.noise_std,
        )
        X, labels = feats.X, feats.labels
    else:
        raise ValueError(f"unknown dataset family {family!r}")
    X = np.asarray(X, dtype=float)
    X = X / np.mean(np.linalg.norm(X, axis=1))
    test = class_balanced_split(labels, cfg.dataset.test_fraction, derive_seed(seed, 0, 0, STAGE_SPLIT))
    return Dataset(family, seed, g, X, np.asarray(labels), scale_operator(laplacian(g)), test)


def sparsify_levels(cfg: ExperimentConfig, ds: Dataset, targets, seed: int) -> list[TargetLevel]:
    sp = cfg.sparsifier
    table = resistances(ds.graph, sp.mode, sp.rank if sp.mode == "truncated" else None)
    return select_by_target_distortion(
        ds.graph,
        targets,
        sp.c_grid,
        sp.draws_per_level,
        sp.mode,
        seed=seed,
        rank=table.rank,
        resistance_table=table,
        num_probes=sp.probes,
        probe_draws=sp.probe_draws,
    )


def _levels_manifest(levels) -> list:
    return [
        {
            "level_index": j,
            "target": lv.target,
            "c": lv.c,
            "q": lv.q,
            "draws": [{"draw_index": d.draw_index, "seed": d.seed} for d in lv.draws],
        }
        for j, lv in enumerate(levels)
    ]


def redraw(cfg: ExperimentConfig, ds: Dataset, c: float, seed: int, draw_index: int):
    """Reproduce one recorded sparsifier draw from its manifest entry."""
    sp = cfg.sparsifier
    table = resistances(ds.graph, sp.mode, sp.rank if sp.mode == "truncated" else None)
    return draw_with_distortion(ds.graph, table, laplacian(ds.graph), c, seed, draw_index, sp.probes)


# ---------------------------------------------------------------------------
# forward-map stability (filter / representation / Gram errors and certificates)


def stability_model(cfg: ExperimentConfig, ds: Dataset) -> GnnModel:
    """Filter layer followed by linear feature mixing layers."""
    m = cfg.model
    dims = (ds.X.shape[1],) + tuple(m.widths)
    weights = init_weights(dims, m.init_scale, seed=derive_seed(ds.seed, 0, 0, STAGE_WEIGHTS))
    filters = [m.filter] + [(1.0,)] * (len(weights) - 1)
    return GnnModel.build(filters, weights, m.activations)


def stability_row(cfg, ds: Dataset, model: GnnModel, Z, level_index: int, draw) -> dict:
    S = ds.operator
    S_sparse = ds.sparse_operator(draw.graph)
    filt = model.layers[0].filter
    eps = float(draw.eps_emp)
    abs_filter, rel_filter = filter_error(filt, S, S_sparse)
    B_L = max(operator_norm(S), operator_norm(S_sparse))
    consts = bound_Crep(model, float(np.linalg.norm(ds.X)), B_L, ds.graph.n)
    Zt = forward(model, S_sparse, ds.X)[-1]
    abs_repr, _ = representation_error(Z, Zt)
    report = geometry_report(
        Z,
        Zt,
        ds.labels,
        k=cfg.geometry.k,
        eval_subset=ds.test_nodes,
        seed=derive_seed(ds.seed, level_index, draw.draw_index, STAGE_SPLIT),
        C_gram_2=consts.C_gram_2,
        C_gram_F=consts.C_gram_F,
        eps=eps,
    )
    return {
        "dataset": ds.name,
        "level_index": level_index,
        "draw_index": draw.draw_index,
        "eps_emp": eps,
        "retained_fraction": draw.retained_fraction,
        "rel_filter_err": rel_filter,
        "rel_repr_err": report.rel_representation_error,
        "rel_gram_err": report.rel_gram_distortion,
        "knn_overlap": report.knn_overlap,
        "max_sq_dist_gap": report.max_pairwise_sq_gap,
        "mean_gap_max": report.mean_gap_max,
        "cov_gap_max": report.cov_gap_max,
        "cp_bound_pass": abs_filter <= consts.C_p[0] * eps + BOUND_SLACK,
        "crep_bound_pass": abs_repr <= consts.C_rep * eps + BOUND_SLACK,
        "gram_bound_pass": bool(report.flags["gram"]),
        # not written to the CSV; kept for callers that audit the certificates
        "_abs_filter_err": abs_filter,
        "_abs_repr_err": abs_repr,
        "_gram_gaps": (report.gram_spectral_gap, report.gram_frobenius_gap),
        "_constants": consts,
        "_flags": report.flags,
        "_class_gaps": report.class_gaps,
    }


TABLE1_COLUMNS = (
    "dataset",
    "level_index",
    "target",
    "c",
    "q",
    "mean_eps_emp",
    "mean_retained_fraction",
    "mean_rel_filter_err",
    "mean_rel_repr_err",
    "mean_rel_gram_err",
)


def _level_summary(name, levels, rows) -> list:
    out = []
    for j, lv in enumerate(levels):
        mine = [r for r in rows if r["level_index"] == j]
        out.append(
            {
                "dataset": name,
                "level_index": j,
                "target": lv.target,
                "c": lv.c,
                "q": lv.q,
                "mean_eps_emp": float(np.mean([r["eps_emp"] for r in mine])),
                "mean_retained_fraction": float(np.mean([r["retained_fraction"] for r in mine])),
                "mean_rel_filter_err": float(np.mean([r["rel_filter_err"] for r in mine])),
                "mean_rel_repr_err": float(np.mean([r["rel_repr_err"] for r in mine])),
                "mean_rel_gram_err": float(np.mean([r["rel_gram_err"] for r in mine])),
            }
        )
    return out


def budget_groups(rows, levels, keys) -> np.ndarray:
    """Means of ``keys`` over all draws sharing a selected multiplier, ordered by multiplier."""
    c_of = {j: lv.c for j, lv in enumerate(levels)}
    cs = sorted({lv.c for lv in levels})
    return np.array(
        [[np.mean([r[k] for r in rows if c_of[r["level_index"]] == c]) for k in keys] for c in cs]
    )


@dataclass
class StabilityResult:
    rows: list  # every (dataset, level, draw) row, including the private audit fields
    table1: list
    levels: dict  # dataset -> list[TargetLevel]
    datasets: dict
    manifest: dict

    def certificate_failures(self) -> list:
        keys = ("cp_bound_pass", "crep_bound_pass", "gram_bound_pass")
        return [r for r in self.rows if not all(r[k] for k in keys)]


def run_stability(cfg: ExperimentConfig) -> StabilityResult:
    rows, table1, all_levels, datasets, manifest = [], [], {}, {}, {}
    for family in cfg.dataset.families:
        ds = build_dataset(cfg, family)
        levels = sparsify_levels(cfg, ds, cfg.targets_for(family), ds.seed)
        model = stability_model(cfg, ds)
        Z = forward(model, ds.operator, ds.X)[-1]
        tasks = [(j, d) for j, lv in enumerate(levels) for d in lv.draws]
        fam_rows = _map(lambda t: stability_row(cfg, ds, model, Z, *t), tasks, cfg.jobs)
        rows.extend(fam_rows)
        table1.extend(_level_summary(family, levels, fam_rows))
        all_levels[family] = levels
        datasets[family] = ds
        manifest[family] = {"dataset_seed": ds.seed, "levels": _levels_manifest(levels)}
    return StabilityResult(rows, table1, all_levels, datasets, manifest)


def rerun_stability_draw(cfg: ExperimentConfig, family: str, level_index: int, c: float, seed: int, draw_index: int) -> dict:
    """Recompute one CSV row from the values recorded in the manifest."""
    ds = build_dataset(cfg, family)
    model = stability_model(cfg, ds)
    Z = forward(model, ds.operator, ds.X)[-1]
    draw = redraw(cfg, ds, c, seed, draw_index)
    return stability_row(cfg, ds, model, Z, level_index, draw)


# ---------------------------------------------------------------------------
# training dynamics


def training_targets(cfg: ExperimentConfig, family: str) -> tuple:
    t = cfg.training
    return t.targets_sbm if family == "sbm" else t.targets_geometric


def training_model(cfg: ExperimentConfig, ds: Dataset, depth: int) -> GnnModel:
    t = cfg.training
    dims = (ds.X.shape[1],) + (t.hidden,) * (depth - 1) + (ds.num_classes,)
    weights = init_weights(dims, t.init_scale, seed=derive_seed(ds.seed, depth, 0, STAGE_WEIGHTS))
    return GnnModel.build([cfg.model.filter] * depth, weights, [t.activation] * depth)


def training_config(cfg: ExperimentConfig, depth: int) -> TrainConfig:
    t = cfg.training
    return TrainConfig(
        epochs=t.epochs,
        lr=t.lr_one_layer if depth == 1 else t.lr_two_layer,
        weight_decay=t.weight_decay,
        grad_clip_norm=t.grad_clip_norm,
    )


def trajectory_rows(record, eps, draw_index, level_index, depth) -> list:
    return [
        {
            "epoch": t,
            "loss_dense": record.loss_dense[t],
            "loss_sparse": record.loss_sparse[t],
            "rel_param_gap": record.rel_param_gap[t],
            "eps_emp": eps,
            "draw_index": draw_index,
            "level_index": level_index,
            "depth": depth,
        }
        for t in range(record.epochs + 1)
    ]


TRAINING_SUMMARY_COLUMNS = (
    "dataset",
    "depth",
    "level_index",
    "target",
    "c",
    "mean_eps_emp",
    "mean_final_gap",
    "std_final_gap",
)


@dataclass
class TrainingResult:
    trajectories: dict  # dataset -> rows
    summary: list
    levels: dict
    manifest: dict


def run_training(cfg: ExperimentConfig, depths=(1, 2)) -> TrainingResult:
    trajectories, summary, all_levels, manifest = {}, [], {}, {}
    for family in cfg.dataset.families:
        ds = build_dataset(cfg, family)
        Y = one_hot(ds.labels)
        sel_seed = derive_seed(ds.seed, 0, 0, STAGE_TRAIN)
        levels = sparsify_levels(cfg, ds, training_targets(cfg, family), sel_seed)
        operators = [[ds.sparse_operator(d.graph) for d in lv.draws] for lv in levels]
        rows = []
        for depth in depths:
            model = training_model(cfg, ds, depth)
            tcfg = training_config(cfg, depth)
            control = train_pair(model, ds.operator, ds.operator, ds.X, Y, tcfg)
            rows.extend(trajectory_rows(control, 0.0, 0, CONTROL_LEVEL, depth))
            tasks = [(j, i) for j, lv in enumerate(levels) for i in range(len(lv.draws))]
            records = _map(
                lambda t: train_pair(model, ds.operator, operators[t[0]][t[1]], ds.X, Y, tcfg), tasks, cfg.jobs
            )
            for (j, i), rec in zip(tasks, records):
                d = levels[j].draws[i]
                rows.extend(trajectory_rows(rec, d.eps_emp, d.draw_index, j, depth))
            for j, lv in enumerate(levels):
                gaps = [rec.final_gap for (jj, _), rec in zip(tasks, records) if jj == j]
                summary.append(
                    {
                        "dataset": family,
                        "depth": depth,
                        "level_index": j,
                        "target": lv.target,
                        "c": lv.c,
                        "mean_eps_emp": float(np.mean([d.eps_emp for d in lv.draws])),
                        "mean_final_gap": float(np.mean(gaps)),
                        "std_final_gap": float(np.std(gaps)),
                    }
                )
        trajectories[family] = rows
        all_levels[family] = levels
        manifest[family] = {
            "dataset_seed": ds.seed,
            "selection_seed": sel_seed,
            "levels": _levels_manifest(levels),
        }
    return TrainingResult(trajectories, summary, all_levels, manifest)


# ---------------------------------------------------------------------------
# geometry sweep on a dense-trained model


def geometry_model(cfg: ExperimentConfig, ds: Dataset) -> tuple[GnnModel, np.ndarray]:
    """Train a two-layer model on the dense graph; returns it with its loss history."""
    g = cfg.geometry
    hidden = g.hidden_sbm if ds.name == "sbm" else g.hidden_geometric
    dims = (ds.X.shape[1], hidden, ds.num_classes)
    # weight slots 0..2 belong to the stability and training models
    weights = init_weights(dims, 1.0, seed=derive_seed(ds.seed, 3, 0, STAGE_WEIGHTS))
    model = GnnModel.build([cfg.model.filter] * 2, weights, [g.activation] * 2)
    tcfg = TrainConfig(epochs=g.epochs, lr=g.lr, weight_decay=g.weight_decay, grad_clip_norm=g.grad_clip_norm)
    return train(model, ds.operator, ds.X, one_hot(ds.labels), tcfg)


def embedding(model: GnnModel, S, X) -> np.ndarray:
    """Last hidden layer (the input to the output layer)."""
    return forward(model, S, X)[-2]


def geometry_row(cfg, ds: Dataset, model: GnnModel, Z, level_index: int, draw):
    """Geometry metrics on the held-out nodes.

    Neighbour sets range over all nodes; every other metric uses the test
    rows of both embeddings only.
    """
    S_sparse = ds.sparse_operator(draw.graph)
    Zt = embedding(model, S_sparse, ds.X)
    T = ds.test_nodes
    A, B, labels = Z[T], Zt[T], ds.labels[T]
    knn = knn_overlap(
        Z, Zt, cfg.geometry.k, T, derive_seed(ds.seed, level_index, draw.draw_index, STAGE_SPLIT), cfg.geometry.subset_cap
    )
    gaps = class_stat_gaps(A, B, labels)
    _, rel_filter = filter_error(model.layers[0].filter, ds.operator, S_sparse)
    cent = centroid_projection(A, B, labels)
    proc = procrustes_report(A, B)
    row = {
        "dataset": ds.name,
        "level_index": level_index,
        "draw_index": draw.draw_index,
        "eps_emp": float(draw.eps_emp),
        "retained_fraction": draw.retained_fraction,
        "rel_filter_err": rel_filter,
        "rel_repr_err": representation_error(A, B)[1],
        "rel_gram_err": gram_distortion(A, B),
        "knn_overlap": knn,
        "max_sq_dist_gap": max_pairwise_sq_distance_gap(A, B)[0],
        "mean_gap_max": max(g.mean_gap for g in gaps),
        "cov_gap_max": max(g.cov_spectral_gap for g in gaps),
        # trained tanh embeddings carry no forward certificate here
        "cp_bound_pass": "na",
        "crep_bound_pass": "na",
        "gram_bound_pass": "na",
        "_class_gaps": gaps,
    }
    record = {
        "level_index": level_index,
        "draw_index": draw.draw_index,
        "eps_emp": float(draw.eps_emp),
        "centroids_dense": cent.dense.tolist(),
        "centroids_sparse": cent.sparse.tolist(),
        "displacement": cent.displacement.tolist(),
        "procrustes_residual": proc.residual,
        "procrustes_relative_residual": proc.relative_residual,
        "unaligned_residual": proc.unaligned_residual,
    }
    return row, record


GEOMETRY_SUMMARY_COLUMNS = ("dataset", "points", "spearman_gram_knn", "train_loss_initial", "train_loss_final")


@dataclass
class GeometryResult:
    rows: list
    records: dict  # dataset -> centroid / Procrustes records
    summary: list
    levels: dict
    manifest: dict


def run_geometry(cfg: ExperimentConfig) -> GeometryResult:
    rows, records, summary, all_levels, manifest = [], {}, [], {}, {}
    for family in cfg.dataset.families:
        ds = build_dataset(cfg, family)
        levels = sparsify_levels(cfg, ds, cfg.targets_for(family), ds.seed)
        model, losses = geometry_model(cfg, ds)
        Z = embedding(model, ds.operator, ds.X)
        tasks = [(j, d) for j, lv in enumerate(levels) for d in lv.draws]
        results = _map(lambda t: geometry_row(cfg, ds, model, Z, *t), tasks, cfg.jobs)
        fam_rows = [r for r, _ in results]
        rows.extend(fam_rows)
        records[family] = [rec for _, rec in results]
        summary.append(
            {
                "dataset": family,
                "points": len(fam_rows),
                "spearman_gram_knn": spearman(
                    [r["rel_gram_err"] for r in fam_rows], [r["knn_overlap"] for r in fam_rows]
                ),
                "train_loss_initial": float(losses[0]),
                "train_loss_final": float(losses[-1]),
            }
        )
        all_levels[family] = levels
        manifest[family] = {"dataset_seed": ds.seed, "levels": _levels_manifest(levels)}
    return GeometryResult(rows, records, summary, all_levels, manifest)


# ---------------------------------------------------------------------------
# artifact writers


def manifest(cfg: ExperimentConfig, command: str, seeds: dict, artifacts: list) -> dict:
    return {
        "command": command,
        "version": __version__,
        "config": dumps(cfg, include_jobs=False).splitlines(),
        "master_seed": cfg.master_seed,
        "datasets": seeds,
        "artifacts": sorted(artifacts),
    }


def write_stability(result: StabilityResult, cfg: ExperimentConfig, out) -> list:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "stability.csv", GEOMETRY_COLUMNS, result.rows)
    write_csv(out / "table1.csv", TABLE1_COLUMNS, result.table1)
    names = ["stability.csv", "table1.csv"]
    (out / "manifest.json").write_text(json_text(manifest(cfg, "stability", result.manifest, names)), encoding="utf-8")
    return names + ["manifest.json"]


def write_training(result: TrainingResult, cfg: ExperimentConfig, out) -> list:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for family, rows in result.trajectories.items():
        name = f"trajectory_{family}.csv"
        write_csv(out / name, TRAJECTORY_COLUMNS, rows)
        names.append(name)
    write_csv(out / "training_summary.csv", TRAINING_SUMMARY_COLUMNS, result.summary)
    names.append("training_summary.csv")
    (out / "manifest.json").write_text(json_text(manifest(cfg, "training", result.manifest, names)), encoding="utf-8")
    return names + ["manifest.json"]


def write_geometry(result: GeometryResult, cfg: ExperimentConfig, out) -> list:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "geometry.csv", GEOMETRY_COLUMNS, result.rows)
    write_csv(out / "geometry_summary.csv", GEOMETRY_SUMMARY_COLUMNS, result.summary)
    (out / "centroids.json").write_text(json_text(result.records), encoding="utf-8")
    names = ["geometry.csv", "geometry_summary.csv", "centroids.json"]
    (out / "manifest.json").write_text(json_text(manifest(cfg, "geometry", result.manifest, names)), encoding="utf-8")
    return names + ["manifest.json"]


def write_dataset(ds: Dataset, out) -> list:
    """Graph file plus CSVs for features and labels with the test mask."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_graph(ds.graph, out / f"{ds.name}.graph")
    cols = tuple(f"x{j}" for j in range(ds.X.shape[1]))
    write_csv(out / f"{ds.name}_features.csv", ("node",) + cols, [
        {"node": i, **{c: float(v) for c, v in zip(cols, row)}} for i, row in enumerate(ds.X)
    ])
    test = np.zeros(ds.graph.n, dtype=bool)
    test[ds.test_nodes] = True
    write_csv(out / f"{ds.name}_labels.csv", ("node", "label", "test"), [
        {"node": i, "label": int(ds.labels[i]), "test": bool(test[i])} for i in range(ds.graph.n)
    ])
    return [f"{ds.name}.graph", f"{ds.name}_features.csv", f"{ds.name}_labels.csv"]
