"""Task interpolation: class pairing, interpolated prototypes, and the
mixed-task loss with its ablation strategies.

Two tasks are fused class-by-class: permutations assign new class k to the
pair (sigma1(k), sigma2(k)), paired support representations at the split
layer are fused by the set function and lifted by the upper stack, and
task1's queries are scored against the fused prototypes. Queries are left
unmixed in the main strategy; the query / query+support / noise variants
are the ablation axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import protonet as pn
from . import setfunc
from .autodiff import DiffValue
from .episodes import Task

STRATEGIES = ("support", "query", "support_and_query", "support_noise")


@dataclass
class ClassPairing:
    sigma1: np.ndarray  # sigma1[k-1] in 1..K
    sigma2: np.ndarray

    def __post_init__(self):
        for s in (self.sigma1, self.sigma2):
            if sorted(s) != list(range(1, len(s) + 1)):
                raise ValueError(f"not a permutation of 1..{len(s)}: {s}")

    @property
    def way(self) -> int:
        return len(self.sigma1)


@dataclass
class InterpConfig:
    strategy: str = "support"
    layer: int = 1        # encoder split the run is built with
    cardinality: int = 2  # set size n; support_noise uses 1 real + n-1 noise
    noise_mean: float = 0.0
    noise_std: float = 1.0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy {self.strategy!r} not in {STRATEGIES}")
        if not 2 <= self.cardinality <= 5:
            raise ValueError("cardinality must be in 2..5")


def pair_classes(way: int, rng: np.random.Generator) -> ClassPairing:
    """Two independent uniform permutations of 1..K."""
    return ClassPairing(
        sigma1=rng.permutation(way) + 1,
        sigma2=rng.permutation(way) + 1,
    )


def build_pairs(task1: Task, task2: Task, pairing: ClassPairing, k: int) -> list:
    """Cross product of class-sigma1(k) supports with class-sigma2(k)
    supports; |S_k| is the product of the two shot counts."""
    a = task1.support_of_class(int(pairing.sigma1[k - 1]))
    b = task2.support_of_class(int(pairing.sigma2[k - 1]))
    return [(ea, eb) for ea in a for eb in b]


def _lower_rows(theta, examples) -> DiffValue:
    x = np.stack([ex.features for ex in examples])
    return pn.encode_lower(theta, x)


def _extra_members(anchor: int, count: int, pool_size: int,
                   rng: np.random.Generator) -> list:
    """Indices of extra same-class elements for cardinality > 2 sets."""
    if count <= 0:
        return []
    others = [i for i in range(pool_size) if i != anchor]
    if len(others) >= count:
        return list(rng.choice(others, size=count, replace=False))
    return list(rng.integers(pool_size, size=count))


def interpolated_prototypes(lam, theta, task1: Task, task2: Task,
                            pairing: ClassPairing, cfg: InterpConfig,
                            mode: str = "train",
                            rng: Optional[np.random.Generator] = None) -> DiffValue:
    """Fused class prototypes: each support pair's split-layer rows go
    through the set function, the upper stack lifts the fusion, and the
    per-class mean is the prototype. Returns a (K, D) matrix."""
    way = task1.way
    rng = rng if rng is not None else np.random.default_rng(0)
    n_from_1 = (cfg.cardinality + 1) // 2
    n_from_2 = cfg.cardinality // 2

    protos = None
    for k in range(1, way + 1):
        sup1 = task1.support_of_class(int(pairing.sigma1[k - 1]))
        h1 = _lower_rows(theta, sup1)
        d = h1.shape[1]

        if cfg.strategy == "support_noise":
            fused_sets = []
            for i in range(len(sup1)):
                elems = [ad.slice_rows(h1, i, i + 1)]
                noise = rng.normal(cfg.noise_mean, cfg.noise_std,
                                   size=(cfg.cardinality - 1, d))
                for r in range(cfg.cardinality - 1):
                    elems.append(DiffValue.const(noise[r : r + 1]))
                fused_sets.append(elems)
        else:
            sup2 = task2.support_of_class(int(pairing.sigma2[k - 1]))
            h2 = _lower_rows(theta, sup2)
            fused_sets = []
            for i in range(len(sup1)):
                for j in range(len(sup2)):
                    elems = [ad.slice_rows(h1, i, i + 1)]
                    for e in _extra_members(i, n_from_1 - 1, len(sup1), rng):
                        elems.append(ad.slice_rows(h1, e, e + 1))
                    elems.append(ad.slice_rows(h2, j, j + 1))
                    for e in _extra_members(j, n_from_2 - 1, len(sup2), rng):
                        elems.append(ad.slice_rows(h2, e, e + 1))
                    fused_sets.append(elems)

        lifted = None
        for elems in fused_sets:
            masks = None
            if mode == "train":
                masks = setfunc.make_masks(lam, len(elems), rng)
            z = setfunc.set_forward(lam, elems, masks)
            e = pn.encode_upper(theta, z)
            lifted = e if lifted is None else ad.add(lifted, e)
        c_k = ad.scale(lifted, 1.0 / len(fused_sets))
        protos = c_k if protos is None else ad.concat_rows(protos, c_k)
    return protos


def _query_partner_draws(task1: Task, task2: Task, pairing: ClassPairing,
                         rng: np.random.Generator) -> list:
    """(query_index, partner_example, new_class_k) triples, drawn in a fixed
    order so callers sharing an rng stream stay aligned."""
    draws = []
    label_to_k = {int(pairing.sigma1[k - 1]): k for k in range(1, task1.way + 1)}
    for qi, ex in enumerate(task1.query):
        k = label_to_k[ex.label]
        partners = task2.queries_of_class(int(pairing.sigma2[k - 1]))
        if not partners:
            raise ValueError(
                f"task2 has no queries of class {int(pairing.sigma2[k - 1])}"
            )
        choice = int(rng.integers(len(partners)))
        draws.append((qi, partners[choice], k))
    return draws


def _mixed_query_rows(lam, theta, task1, task2, pairing, mode, rng):
    """Fuse each task1 query with a drawn task2 partner; returns the (Nq, D)
    embeddings and the per-row target class index k."""
    hq1 = _lower_rows(theta, task1.query)
    draws = _query_partner_draws(task1, task2, pairing, rng)
    rows = None
    targets = []
    for qi, partner, k in draws:
        h1 = ad.slice_rows(hq1, qi, qi + 1)
        h2 = pn.encode_lower(theta, partner.features.reshape(1, -1))
        masks = setfunc.make_masks(lam, 2, rng) if mode == "train" else None
        z = setfunc.set_forward(lam, [h1, h2], masks)
        e = pn.encode_upper(theta, z)
        rows = e if rows is None else ad.concat_rows(rows, e)
        targets.append(k)
    return rows, targets


def loss_mix(lam, theta, task1: Task, task2: Task, pairing: ClassPairing,
             cfg: InterpConfig, mode: str = "train",
             rng: Optional[np.random.Generator] = None,
             metric: str = "sqeuclidean") -> DiffValue:
    """Mixed-task episode loss under the configured strategy."""
    rng = rng if rng is not None else np.random.default_rng(0)
    way = task1.way

    if cfg.strategy in ("support", "support_noise", "support_and_query"):
        protos = interpolated_prototypes(lam, theta, task1, task2, pairing,
                                         cfg, mode, rng)
        proto_index = {k: k for k in range(1, way + 1)}  # row k-1 is class k
    else:  # query strategy: plain task1 prototypes
        xs, ys = task1.support_matrix()
        es = pn.embed_batch(lam, theta, xs, mode, rng)
        protos = pn.prototypes_from_matrix(es, ys, way)
        proto_index = None  # rows indexed by original task1 labels

    if cfg.strategy in ("query", "support_and_query"):
        rows, ks = _mixed_query_rows(lam, theta, task1, task2, pairing, mode, rng)
        if proto_index is None:
            targets = [int(pairing.sigma1[k - 1]) for k in ks]
        else:
            targets = ks
    else:
        xq, yq = task1.query_matrix()
        rows = pn.embed_batch(lam, theta, xq, mode, rng)
        label_to_k = {int(pairing.sigma1[k - 1]): k for k in range(1, way + 1)}
        targets = [label_to_k[y] for y in yq]

    dists = pn.pairwise_dists(rows, protos, metric)
    return pn.cross_entropy_to_prototypes(dists, targets)


def mlti_baseline_loss(theta, task1: Task, task2: Task, pairing: ClassPairing,
                       beta_params=(2.0, 2.0),
                       rng: Optional[np.random.Generator] = None,
                       metric: str = "sqeuclidean") -> DiffValue:
    """Manifold-mixup task interpolation: convex mixing of split-layer rows
    with a Beta-drawn coefficient, applied to support pairs and query
    pairs; no set function, no bilevel structure.

    beta_params (a, b) draws the coefficient from Beta(a, b); b <= 0 pins
    it to exactly a (useful for the degenerate checks).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    a, b = beta_params
    lam_mix = float(a) if b <= 0 else float(rng.beta(a, b))
    way = task1.way

    protos = None
    for k in range(1, way + 1):
        pairs = build_pairs(task1, task2, pairing, k)
        acc = None
        for ea, eb in pairs:
            h1 = pn.encode_lower(theta, ea.features.reshape(1, -1))
            h2 = pn.encode_lower(theta, eb.features.reshape(1, -1))
            mixed = ad.add(ad.scale(h1, lam_mix), ad.scale(h2, 1.0 - lam_mix))
            e = pn.encode_upper(theta, mixed)
            acc = e if acc is None else ad.add(acc, e)
        c_k = ad.scale(acc, 1.0 / len(pairs))
        protos = c_k if protos is None else ad.concat_rows(protos, c_k)

    hq1 = _lower_rows(theta, task1.query)
    draws = _query_partner_draws(task1, task2, pairing, rng)
    rows = None
    targets = []
    for qi, partner, k in draws:
        h1 = ad.slice_rows(hq1, qi, qi + 1)
        h2 = pn.encode_lower(theta, partner.features.reshape(1, -1))
        mixed = ad.add(ad.scale(h1, lam_mix), ad.scale(h2, 1.0 - lam_mix))
        e = pn.encode_upper(theta, mixed)
        rows = e if rows is None else ad.concat_rows(rows, e)
        targets.append(k)

    dists = pn.pairwise_dists(rows, protos, metric)
    return pn.cross_entropy_to_prototypes(dists, targets)
