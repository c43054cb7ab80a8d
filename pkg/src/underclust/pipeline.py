"""End-to-end orchestration: load, reduce, kernelize, under-cluster, train,
assign, evaluate.

Every stage is seeded from one master seed, so a fixed config yields
byte-identical assignment files across runs. Ground-truth labels, when
present in the input, gate the metrics output; unlabeled inputs still get
assignments plus a note explaining the missing metrics file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import assigner, crossiter, kernel, kmeans, metrics, neural, tsne
from .dataset import EmbeddingSet, load_embeddings, save_assignments

SIGMA_SCHEDULES = ("log_ratio", "sqrt_n")
BASELINES = ("kmeans", "kernel_kmeans")


class StageError(RuntimeError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    embeddings: str = ""
    format: str = "csv"
    clusters: int = 8
    k: int | str = "auto"              # per-pass cluster count; "auto" = round(2*sqrt(N))
    beta: int = 3
    mu: int = 3
    seed: int = 0
    ablation: str = "full"
    out: str = "out"
    sigma_schedule: str = "log_ratio"
    finder_space: str = "original"     # "original" | "reduced"
    finder_centroid: bool = False
    tsne_perplexity: float = 30.0
    tsne_iterations: int = 1000
    tsne_learning_rate: float = 200.0
    tsne_early_exaggeration: float = 12.0
    tsne_exaggeration_iters: int = 250
    neural_hidden_dims: tuple = (64,)
    neural_epochs: int = 30
    neural_batch_size: int = 32
    neural_learning_rate: float = 1e-2
    twin_learning_rate: float = 1e-3
    twin_pairs_per_epoch: int = 2048
    kmeans_max_iters: int = 300

    def validate(self) -> None:
        if self.format not in ("csv", "binary"):
            raise ValueError(f"format must be csv or binary, got {self.format!r}")
        if self.clusters < 1:
            raise ValueError(f"clusters must be >= 1, got {self.clusters}")
        if self.k != "auto" and (not isinstance(self.k, int) or self.k < 2):
            raise ValueError(f"k must be 'auto' or an integer >= 2, got {self.k!r}")
        if self.beta < 1:
            raise ValueError(f"beta must be >= 1, got {self.beta}")
        if self.mu < 1:
            raise ValueError(f"mu must be >= 1, got {self.mu}")
        if self.ablation not in assigner.MODES:
            raise ValueError(f"ablation must be one of {assigner.MODES}, got {self.ablation!r}")
        if self.sigma_schedule not in SIGMA_SCHEDULES:
            raise ValueError(
                f"sigma_schedule must be one of {SIGMA_SCHEDULES}, got {self.sigma_schedule!r}"
            )
        if self.finder_space not in ("original", "reduced"):
            raise ValueError(f"finder_space must be original or reduced, got {self.finder_space!r}")


@dataclass
class PipelineResult:
    config: PipelineConfig
    embeddings: EmbeddingSet
    layout: tsne.Embedding2D
    state: crossiter.ClusterState
    records: list
    pred_labels: np.ndarray
    report: metrics.MetricsReport | None
    paths: dict = field(default_factory=dict)


def _effective_k(config: PipelineConfig, n: int) -> int:
    return kmeans.default_cluster_count(n) if config.k == "auto" else int(config.k)


def _tsne_config(config: PipelineConfig, seed: int) -> tsne.TsneConfig:
    return tsne.TsneConfig(
        iterations=config.tsne_iterations,
        learning_rate=config.tsne_learning_rate,
        early_exaggeration_factor=config.tsne_early_exaggeration,
        early_exaggeration_iters=config.tsne_exaggeration_iters,
        momentum_switch_iter=config.tsne_exaggeration_iters,
        seed=seed,
    )


def _stage_seeds(seed: int) -> dict:
    names = ("tsne", "crossiter", "merge", "classifier", "twin", "baseline")
    state = np.random.SeedSequence(seed).generate_state(len(names))
    return {name: int(s) for name, s in zip(names, state)}


def _reduce(e: EmbeddingSet, config: PipelineConfig, seed: int) -> tsne.Embedding2D:
    perplexity = min(config.tsne_perplexity, (e.n - 1) / 3.0)
    aff = tsne.compute_affinities(e, perplexity)
    return tsne.run_tsne(aff, _tsne_config(config, seed))


def _kernelize(points: np.ndarray, k: int, n: int, beta: int, schedule: str) -> kernel.KernelMatrix:
    median = kernel.median_pairwise_sq_dist(points)
    if schedule == "sqrt_n":
        sigma = kernel.sqrt_n_sigma(median, n)
    else:
        sigma = kernel.compute_sigma(median, k, n, beta).sigma
    return kernel.rbf_kernel_matrix(points, sigma)


def run_pipeline(config: PipelineConfig, e: EmbeddingSet | None = None) -> PipelineResult:
    """Run every stage and write assignments, metrics and traces to
    config.out. Pass `e` to skip the loading stage (tests, sweeps)."""
    config.validate()
    seeds = _stage_seeds(config.seed)

    def stage(name, fn):
        try:
            return fn()
        except Exception as exc:
            raise StageError(name, exc) from exc

    if e is None:
        e = stage("load", lambda: load_embeddings(config.embeddings, config.format))
    k_eff = _effective_k(config, e.n)
    m = config.clusters

    layout = stage("tsne", lambda: _reduce(e, config, seeds["tsne"]))
    z = stage(
        "kernel",
        lambda: _kernelize(layout.points, k_eff, e.n, config.beta, config.sigma_schedule),
    )
    state = stage(
        "cluster",
        lambda: crossiter.cross_iterative_cluster(
            z, k_eff, config.beta, seeds["crossiter"], kmeans_max_iters=config.kmeans_max_iters
        ),
    )
    state = stage(
        "merge", lambda: crossiter.merge_normal_clusters(state, layout, m, seeds["merge"])
    )
    train = stage("train-set", lambda: crossiter.pseudo_labeled_training_set(state, e))

    classifier = stage(
        "classifier",
        lambda: neural.train_classifier(
            train,
            neural.ClassifierConfig(
                hidden_dims=tuple(config.neural_hidden_dims),
                epochs=config.neural_epochs,
                batch_size=config.neural_batch_size,
                learning_rate=config.neural_learning_rate,
                seed=seeds["classifier"],
            ),
        ),
    )
    twin = None
    if config.ablation in ("im_sn", "full"):
        twin = stage(
            "twin",
            lambda: neural.train_siamese(
                train,
                neural.SiameseConfig(
                    hidden_dims=tuple(config.neural_hidden_dims),
                    epochs=config.neural_epochs,
                    pairs_per_epoch=config.twin_pairs_per_epoch,
                    learning_rate=config.twin_learning_rate,
                    seed=seeds["twin"],
                ),
            ),
        )

    records, score_rows = stage(
        "assign",
        lambda: assigner.assign_abnormal(
            e,
            state,
            classifier,
            twin,
            config.mu,
            mode=config.ablation,
            use_centroid_distance=config.finder_centroid,
            distance_points=layout.points if config.finder_space == "reduced" else None,
        ),
    )
    pred = np.array([r.cluster_index for r in records], dtype=np.int64)
    report = None
    if e.labels is not None:
        report = stage("metrics", lambda: metrics.evaluate(pred, e.labels))

    paths = stage("write", lambda: _write_outputs(config, e, layout, state, records, score_rows, report))
    return PipelineResult(config, e, layout, state, records, pred, report, paths)


def _write_outputs(config, e, layout, state, records, score_rows, report) -> dict:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"assignments": out / "assignments.csv"}
    save_assignments(records, paths["assignments"])
    if report is not None:
        paths["metrics"] = out / "metrics.json"
        paths["metrics"].write_text(report.to_json(), encoding="utf-8")
    else:
        paths["metrics_note"] = out / "metrics_note.txt"
        paths["metrics_note"].write_text(
            "metrics.json was not written: the input embeddings carry no "
            "ground-truth labels.\n",
            encoding="utf-8",
        )
    paths["trace"] = out / "iteration_trace.jsonl"
    state.write_trace(paths["trace"])
    paths["layout"] = out / "layout.csv"
    tsne.save_layout_csv(e, layout, paths["layout"])
    paths["config"] = out / "config.json"
    cfg = asdict(config)
    cfg["neural_hidden_dims"] = list(config.neural_hidden_dims)
    paths["config"].write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    if score_rows:
        paths["scores"] = out / "candidate_scores.jsonl"
        assigner.write_score_rows(score_rows, paths["scores"])
    return {k: str(v) for k, v in paths.items()}


# ---------------------------------------------------------------------------
# baselines and sweeps
# ---------------------------------------------------------------------------


def run_baseline(
    config: PipelineConfig, algo: str, e: EmbeddingSet | None = None
) -> tuple[np.ndarray, metrics.MetricsReport | None]:
    """One-shot baseline at the configured cluster count.

    "kmeans" clusters the raw embeddings; "kernel_kmeans" clusters the rows
    of the kernel matrix built from the 2-D layout with a single-pass
    bandwidth (beta = 1, k = clusters).
    """
    if algo not in BASELINES:
        raise ValueError(f"algo must be one of {BASELINES}, got {algo!r}")
    config.validate()
    seeds = _stage_seeds(config.seed)
    if e is None:
        e = load_embeddings(config.embeddings, config.format)
    m = config.clusters
    if algo == "kmeans":
        vectors = e.vectors.astype(np.float64)
    else:
        layout = _reduce(e, config, seeds["tsne"])
        z = _kernelize(layout.points, m, e.n, 1, config.sigma_schedule)
        vectors = z.z
    result = kmeans.kmeans(vectors, m, seeds["baseline"], max_iters=config.kmeans_max_iters)
    report = metrics.evaluate(result.labels, e.labels) if e.labels is not None else None
    return result.labels, report


def write_baseline_outputs(config: PipelineConfig, algo: str, e: EmbeddingSet, labels, report) -> dict:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if report is not None:
        paths["metrics"] = out / f"metrics_{algo}.json"
        paths["metrics"].write_text(report.to_json(), encoding="utf-8")
    paths["labels"] = out / f"labels_{algo}.csv"
    with open(paths["labels"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,cluster_index\n")
        for sid, lab in zip(e.ids, labels):
            fh.write(f"{sid},{int(lab)}\n")
    return {k: str(v) for k, v in paths.items()}


def sweep_clusters(config: PipelineConfig, m_values, e: EmbeddingSet | None = None) -> list[dict]:
    """Metrics per cluster count per algorithm (pipeline plus baselines).

    Requires labeled embeddings. Returns one row dict per (m, algorithm).
    """
    if e is None:
        e = load_embeddings(config.embeddings, config.format)
    if e.labels is None:
        raise ValueError("sweep requires ground-truth labels in the embedding file")
    rows = []
    for m in m_values:
        cfg = replace(config, clusters=int(m), out=str(Path(config.out) / f"m{m}"))
        result = run_pipeline(cfg, e=e)
        rows.append(_sweep_row(m, "pipeline", result.report))
        for algo in BASELINES:
            _, report = run_baseline(cfg, algo, e=e)
            rows.append(_sweep_row(m, algo, report))
    return rows


def _sweep_row(m: int, algo: str, report: metrics.MetricsReport) -> dict:
    return {
        "clusters": int(m),
        "algorithm": algo,
        "f1": report.f1,
        "nmi": report.nmi,
        "purity": report.purity,
    }


def write_sweep_table(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("clusters,algorithm,f1,nmi,purity\n")
        for r in rows:
            fh.write(
                f"{r['clusters']},{r['algorithm']},{r['f1']:.6f},{r['nmi']:.6f},{r['purity']:.6f}\n"
            )


def read_sweep_table(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "clusters,algorithm,f1,nmi,purity":
        raise ValueError(f"{path}: not a sweep table")
    rows = []
    for ln in lines[1:]:
        m, algo, f1, nmi_v, pur = ln.split(",")
        rows.append(
            {
                "clusters": int(m),
                "algorithm": algo,
                "f1": float(f1),
                "nmi": float(nmi_v),
                "purity": float(pur),
            }
        )
    return rows


def plot_sweep(rows, out_dir) -> list[str]:
    """One SVG line chart per metric, one line per algorithm."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    algorithms = sorted({r["algorithm"] for r in rows})
    written = []
    for metric in ("f1", "nmi", "purity"):
        fig, ax = plt.subplots(figsize=(6, 4))
        for algo in algorithms:
            pts = sorted((r["clusters"], r[metric]) for r in rows if r["algorithm"] == algo)
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=algo)
        ax.set_xlabel("pre-defined cluster count")
        ax.set_ylabel(metric)
        ax.set_title(f"{metric} vs cluster count")
        ax.grid(True, alpha=0.3)
        ax.legend()
        path = out / f"sweep_{metric}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        written.append(str(path))
    return written
