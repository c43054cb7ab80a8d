"""Routing of abnormal-cluster members into the merged pseudo-labeled
clusters.

For each abnormal sample the classifier proposes its top-mu candidate
clusters. Two bounded similarity scores are computed per candidate: the
distance score (softmax over negative mean squared distances to the
candidate's members, temperature = mean candidate distance, so smaller
distance means higher score) and the twin-network score. Depending on the
mode the final cluster is the classifier argmax (im), the distance-score
argmax (im_sf), the twin-score argmax (im_sn) or the argmax of the
arithmetic mean of both scores (full). Ties break toward the lower
pseudo-label index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .crossiter import ClusterState
from .dataset import SOURCE_ASSIGNED, SOURCE_NORMAL, AssignmentRecord, EmbeddingSet
from .neural import FeedForwardNet, predict_top_mu, siamese_class_score

MODES = ("im", "im_sf", "im_sn", "full")


@dataclass
class CandidateScoreRow:
    id: str
    candidates: list  # (pseudo_label, s_finder, s_siamese, s_avg); None when unused
    chosen: str


def finder_scores(e: EmbeddingSet, x: np.ndarray, candidate_classes) -> np.ndarray:
    """Distance-based candidate scores in [0, 1] summing to 1.

    `candidate_classes` holds one member index array per candidate. The
    per-candidate distance is the mean squared Euclidean distance from x to
    the candidate's members in the original embedding space; scores are the
    softmax of the negated distances at temperature mean(distance), so the
    smallest distance gets the highest score.
    """
    if not len(candidate_classes):
        raise ValueError("no candidate classes")
    x = np.asarray(x, dtype=np.float64)
    dists = np.empty(len(candidate_classes))
    for j, members in enumerate(candidate_classes):
        members = np.asarray(members, dtype=np.int64)
        if members.size == 0:
            raise ValueError(f"candidate class {j} has no members")
        diff = e.vectors[members].astype(np.float64) - x
        dists[j] = float(np.mean(np.sum(diff * diff, axis=1)))
    return _softmax_over_distances(dists)


def fuse_scores(s_finder: np.ndarray, s_siamese: np.ndarray) -> np.ndarray:
    """Exact arithmetic mean of the two similarity scores."""
    return (np.asarray(s_finder) + np.asarray(s_siamese)) / 2.0


def _softmax_over_distances(dists: np.ndarray) -> np.ndarray:
    temperature = float(dists.mean())
    if temperature <= 0.0:
        return np.full(dists.size, 1.0 / dists.size)
    z = -dists / temperature
    z -= z.max()
    ex = np.exp(z)
    return ex / ex.sum()


def assign_abnormal(
    e: EmbeddingSet,
    state: ClusterState,
    classifier: FeedForwardNet,
    twin: FeedForwardNet | None,
    mu: int,
    mode: str = "full",
    use_centroid_distance: bool = False,
    distance_points: np.ndarray | None = None,
) -> tuple[list[AssignmentRecord], list[CandidateScoreRow]]:
    """Produce one AssignmentRecord per sample, in dataset order.

    Merged members keep their cluster with source "normal"; abnormal members
    are scored against their top-mu candidates and carry source "assigned".
    `distance_points` switches the distance score to an alternative space
    (e.g. the 2-D layout); `use_centroid_distance` compares against each
    candidate's centroid instead of all its members.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if state.merged is None:
        raise ValueError("cluster state has no merged clusters")
    if mode in ("im_sn", "full") and twin is None:
        raise ValueError(f"mode {mode!r} needs a trained twin network")

    labels = list(state.pseudo_labels)
    label_to_cluster = {lab: j for j, lab in enumerate(labels)}
    dist_vectors = (
        np.asarray(distance_points, dtype=np.float64)
        if distance_points is not None
        else e.vectors.astype(np.float64)
    )
    if dist_vectors.shape[0] != e.n:
        raise ValueError("distance_points must have one row per sample")
    member_idx = {lab: np.asarray(g, dtype=np.int64) for lab, g in zip(labels, state.merged)}
    member_pts = {lab: dist_vectors[idx] for lab, idx in member_idx.items()}
    centroid_pts = {lab: pts.mean(axis=0) for lab, pts in member_pts.items()}
    raw_members = {lab: e.vectors[idx].astype(np.float64) for lab, idx in member_idx.items()}

    records: dict[int, AssignmentRecord] = {}
    for lab in labels:
        j = label_to_cluster[lab]
        for i in member_idx[lab]:
            records[int(i)] = AssignmentRecord(e.ids[int(i)], j, lab, SOURCE_NORMAL)

    needs_finder = mode in ("im_sf", "full")
    needs_twin = mode in ("im_sn", "full")
    score_rows: list[CandidateScoreRow] = []
    for i in state.abnormal:
        i = int(i)
        x = e.vectors[i].astype(np.float64)
        top = predict_top_mu(classifier, x, min(mu, len(labels)))
        cand = [lab for lab, _ in top.candidates]

        s_find = s_siam = s_avg = None
        if needs_finder:
            xd = dist_vectors[i]
            dists = np.empty(len(cand))
            for c, lab in enumerate(cand):
                if use_centroid_distance:
                    dists[c] = float(np.sum((xd - centroid_pts[lab]) ** 2))
                else:
                    diff = member_pts[lab] - xd
                    dists[c] = float(np.mean(np.sum(diff * diff, axis=1)))
            s_find = _softmax_over_distances(dists)
        if needs_twin:
            s_siam = np.array(
                [siamese_class_score(twin, x, raw_members[lab]) for lab in cand]
            )

        if mode == "im":
            chosen = cand[0]
        else:
            if mode == "full":
                s_avg = fuse_scores(s_find, s_siam)
            key = {"im_sf": s_find, "im_sn": s_siam, "full": s_avg}[mode]
            best = min(range(len(cand)), key=lambda c: (-key[c], label_to_cluster[cand[c]]))
            chosen = cand[best]

        def _get(arr, c):
            return float(arr[c]) if arr is not None else None

        score_rows.append(
            CandidateScoreRow(
                e.ids[i],
                [(lab, _get(s_find, c), _get(s_siam, c), _get(s_avg, c)) for c, lab in enumerate(cand)],
                chosen,
            )
        )
        records[i] = AssignmentRecord(e.ids[i], label_to_cluster[chosen], chosen, SOURCE_ASSIGNED)

    if len(records) != e.n:
        raise AssertionError("assignment does not cover every sample exactly once")
    return [records[i] for i in range(e.n)], score_rows


def write_score_rows(rows, path) -> None:
    """Per-query candidate scores as JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(
                json.dumps(
                    {
                        "id": row.id,
                        "candidates": [
                            {"pseudo_label": lab, "s_finder": sf, "s_siamese": sn, "s_avg": sa}
                            for lab, sf, sn, sa in row.candidates
                        ],
                        "chosen": row.chosen,
                    }
                )
                + "\n"
            )
