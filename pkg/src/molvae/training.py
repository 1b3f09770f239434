"""ELBO objective, BFS edge orderings, and the optimization loop.

The objective for one graph is the reconstruction term under a sampled edge
generation order, minus the closed-form Gaussian KL, plus the Poisson
log-pmf of the node count.  Edge orders come from breadth-first traversals
with uniformly random tie-breaking, rooted at a node drawn from a
configurable source distribution.  Training groups graphs by node count,
ascends the mean batch ELBO with Adam, and snapshots everything into a
self-describing checkpoint file.
"""

from __future__ import annotations

import json
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .decoder import DecoderParams, graph_logprob, init_decoder
from .encoder import EncoderParams, init_encoder, posterior
from .masks import MASK_KINDS
from .molgraph import DEFAULT_TABLE, MolecularGraph, ValenceTable

SOURCE_KINDS = ("uniform", "degree", "max_degree")
PARTITION_MODES = ("exact", "negative_sampled")


@dataclass
class Hyperparams:
    """Everything that shapes one training run."""

    D: int = 5
    K: int = 5
    L: int = 10
    lr: float = 0.005
    S: int = 1
    batch_size: int = 32
    iterations: int = 500
    seed: int = 0
    mask_kind: str = "valence"
    source_kind: str = "uniform"
    partition: str = "negative_sampled"

    def __post_init__(self):
        if self.D < 1 or self.K < 1 or self.L < 1 or self.S < 1:
            raise ValueError("D, K, L, S must all be >= 1")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("batch_size must be >= 1 and iterations >= 0")
        if self.mask_kind not in MASK_KINDS:
            raise ValueError(f"unknown mask kind {self.mask_kind!r}")
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.source_kind!r}")
        if self.partition not in PARTITION_MODES:
            raise ValueError(f"unknown partition mode {self.partition!r}")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "D", "K", "L", "lr", "S", "batch_size", "iterations", "seed",
            "mask_kind", "source_kind", "partition")}


@dataclass
class ModelParams:
    """Encoder and decoder weights plus the node-count rate and atom table."""

    encoder: EncoderParams
    decoder: DecoderParams
    lambda_n: float
    table: ValenceTable = field(default_factory=lambda: DEFAULT_TABLE)

    def tensors(self) -> list[tuple[str, T.Tensor]]:
        return self.encoder.tensors() + self.decoder.tensors()


@dataclass
class Checkpoint:
    model: ModelParams
    hyper: Hyperparams
    iteration: int


def init_model(rng: np.random.Generator, hyper: Hyperparams,
               table: ValenceTable | None = None,
               lambda_n: float = 1.0) -> ModelParams:
    table = table or DEFAULT_TABLE
    n_types = len(table.symbols)
    if hyper.D < n_types:
        raise ValueError(f"D={hyper.D} cannot one-hot {n_types} atom types")
    enc = init_encoder(rng, hyper.D, hyper.K, n_types)
    dec = init_decoder(rng, hyper.D, n_types)
    return ModelParams(enc, dec, float(lambda_n), table)


# ---------------------------------------------------------------------------
# edge orderings


def sample_source(g: MolecularGraph, kind: str,
                  rng: np.random.Generator) -> int:
    """Draw a traversal root from the whole node set."""
    return _source_from(list(range(g.n)), g.degrees(), kind, rng)


def _source_from(nodes, degrees, kind: str, rng: np.random.Generator) -> int:
    if kind == "uniform":
        return int(nodes[rng.integers(len(nodes))])
    if kind == "degree":
        w = np.array([degrees[u] for u in nodes], dtype=np.float64)
        if w.sum() == 0.0:
            return int(nodes[rng.integers(len(nodes))])
        return int(nodes[rng.choice(len(nodes), p=w / w.sum())])
    if kind == "max_degree":
        best = max(degrees[u] for u in nodes)
        top = [u for u in nodes if degrees[u] == best]
        return int(top[rng.integers(len(top))])
    raise ValueError(f"unknown source kind {kind!r}")


def bfs_edge_order(g: MolecularGraph, source: int,
                   rng: np.random.Generator,
                   source_kind: str = "uniform") -> list[tuple[int, int]]:
    """Every edge exactly once, in breadth-first discovery order.

    Tree edges are emitted when the child is first seen; a non-tree edge is
    emitted while dequeuing its later endpoint.  The scan order of each
    node's neighbors is a fresh uniform shuffle, which is the only source of
    randomness on connected graphs.  On a disconnected graph the traversal
    restarts at a node drawn from the remaining ones.
    """
    if not 0 <= source < g.n:
        raise ValueError(f"source {source} out of range")
    adj: dict[int, list[int]] = {u: [] for u in range(g.n)}
    for u, v, _ in g.bonds:
        adj[u].append(v)
        adj[v].append(u)
    degrees = g.degrees()
    visited: set[int] = set()
    done: set[int] = set()
    emitted: set[tuple[int, int]] = set()
    order: list[tuple[int, int]] = []
    remaining = set(range(g.n))
    root = source
    while remaining:
        visited.add(root)
        remaining.discard(root)
        queue = deque([root])
        while queue:
            u = queue.popleft()
            done.add(u)
            nbrs = adj[u]
            if len(nbrs) > 1:
                nbrs = [nbrs[i] for i in rng.permutation(len(nbrs))]
            for v in nbrs:
                key = (min(u, v), max(u, v))
                if v not in visited:
                    visited.add(v)
                    remaining.discard(v)
                    queue.append(v)
                    order.append(key)
                    emitted.add(key)
                elif v in done and key not in emitted:
                    order.append(key)
                    emitted.add(key)
        if remaining:
            root = _source_from(sorted(remaining), degrees, source_kind, rng)
    return order


# ---------------------------------------------------------------------------
# objective


def kl_term(post, D: int) -> T.Tensor:
    """KL(q || standard normal), summed over nodes, in closed form."""
    s2 = T.square(post.sigma)
    m2 = T.square(post.mu)
    n = post.mu.data.shape[0]
    total = T.sum_all(s2) + T.sum_all(m2) - T.sum_all(T.log(s2))
    return 0.5 * (total - float(n * D))


def node_count_logpmf(n: int, lambda_n: float) -> float:
    return n * math.log(lambda_n) - lambda_n - math.lgamma(n + 1)


def elbo(g: MolecularGraph, model: ModelParams, hyper: Hyperparams,
         rng: np.random.Generator) -> T.Tensor:
    """Single-sample evidence lower bound for one graph.

    One reparameterized latent draw, S sampled edge orders, the closed-form
    KL, and the node-count term.  Every random choice (latent noise, source
    node, BFS ties, negative samples) comes from ``rng`` in a fixed order,
    so a fixed generator state fixes the value.
    """
    post = posterior(g, model.encoder, model.table)
    eps = rng.standard_normal((g.n, hyper.D))
    z = T.add(post.mu, T.mul(post.sigma, T.Tensor(eps)))
    recon = None
    for _ in range(hyper.S):
        src = sample_source(g, hyper.source_kind, rng)
        seq = bfs_edge_order(g, src, rng, hyper.source_kind)
        lp = graph_logprob(g, z, seq, model.decoder,
                           partition=hyper.partition, L=hyper.L,
                           mask_kind=hyper.mask_kind, table=model.table,
                           rng=rng)
        recon = lp if recon is None else recon + lp
    recon = recon * (1.0 / hyper.S)
    return recon - kl_term(post, hyper.D) + node_count_logpmf(g.n, model.lambda_n)


def fit_lambda_n(corpus) -> float:
    """Poisson rate for the node count: the maximum-likelihood mean."""
    if not corpus:
        raise ValueError("cannot fit a node-count rate to an empty corpus")
    return float(np.mean([g.n for g in corpus]))


# ---------------------------------------------------------------------------
# optimization loop


def make_batches(corpus, batch_size: int) -> list[list[MolecularGraph]]:
    """Partition the corpus into batches of uniform node count."""
    groups: dict[int, list[MolecularGraph]] = {}
    for g in corpus:
        groups.setdefault(g.n, []).append(g)
    batches = []
    for n in sorted(groups):
        graphs = groups[n]
        for i in range(0, len(graphs), batch_size):
            batches.append(graphs[i:i + batch_size])
    return batches


def train(corpus, hyper: Hyperparams, table: ValenceTable | None = None,
          log_fn=None) -> Checkpoint:
    """Adam-ascend the mean batch ELBO; returns the final checkpoint.

    Each iteration draws one uniform-size batch, accumulates per-graph
    gradients in corpus order, and takes one step.  ``log_fn`` (if given)
    receives a record per iteration with the iteration index, mean batch
    ELBO, batch node count, wall-clock seconds, and a reference to the live
    model; everything except the wall time is deterministic under a fixed
    seed.  Numeric failures abort with the iteration index attached.
    """
    if not corpus:
        raise ValueError("cannot train on an empty corpus")
    table = table or DEFAULT_TABLE
    rng = np.random.default_rng(hyper.seed)
    model = init_model(rng, hyper, table, lambda_n=fit_lambda_n(corpus))
    batches = make_batches(corpus, hyper.batch_size)
    params = [t for _, t in model.tensors()]
    adam = T.AdamState(params, lr=hyper.lr)
    t0 = time.perf_counter()
    for it in range(hyper.iterations):
        batch = batches[int(rng.integers(len(batches)))]
        total = 0.0
        grad_acc = [np.zeros_like(p.data) for p in params]
        try:
            for g in batch:
                with T.Tape() as tape:
                    val = elbo(g, model, hyper, rng)
                grads = tape.gradients(val, params)
                total += val.item()
                for acc, gr in zip(grad_acc, grads):
                    acc += gr
            scale = 1.0 / len(batch)
            T.adam_step(adam, [gr * scale for gr in grad_acc])
        except (FloatingPointError, ZeroDivisionError, ValueError) as exc:
            raise type(exc)(f"iteration {it}: {exc}") from exc
        if log_fn is not None:
            # "model" is the live object, not a copy; snapshot inside log_fn
            log_fn({"iteration": it, "elbo": total / len(batch),
                    "batch_n": batch[0].n, "batch_size": len(batch),
                    "seconds": time.perf_counter() - t0, "model": model})
    return Checkpoint(model, hyper, hyper.iterations)


# ---------------------------------------------------------------------------
# checkpoint file format

_MAGIC = "molvae-checkpoint"


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """One JSON header line (shapes, offsets, metadata), then raw little-
    endian float64 buffers in header order.  Round-trips bit-exactly."""
    named = ckpt.model.tensors()
    directory = []
    offset = 0
    for name, t in named:
        size = int(t.data.size)
        directory.append({"name": name, "shape": list(t.data.shape),
                          "offset": offset, "size": size})
        offset += size * 8
    header = {
        "format": _MAGIC,
        "version": 1,
        "iteration": ckpt.iteration,
        "lambda_n": ckpt.model.lambda_n,
        "hyper": ckpt.hyper.as_dict(),
        "alphabet": [[s, ckpt.model.table.max_valence(s)]
                     for s in ckpt.model.table.symbols],
        "tensors": directory,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
        for _, t in named:
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: not a checkpoint file") from exc
        if header.get("format") != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if header.get("version") != 1:
            raise ValueError(f"{path}: unsupported checkpoint version")
        blob = fh.read()
    values: dict[str, T.Tensor] = {}
    for entry in header["tensors"]:
        start = entry["offset"]
        arr = np.frombuffer(blob[start:start + entry["size"] * 8], dtype="<f8")
        if arr.size != entry["size"]:
            raise ValueError(f"{path}: truncated tensor {entry['name']!r}")
        values[entry["name"]] = T.Tensor(arr.reshape(entry["shape"]).copy())
    hyper = Hyperparams(**header["hyper"])
    table = ValenceTable({s: int(v) for s, v in header["alphabet"]})
    n_types = len(table.symbols)
    hops = [values[f"enc.hop{k}"] for k in range(1, hyper.K + 1)]
    enc = EncoderParams(hops=hops, w_hidden=values["enc.w_hidden"],
                        b_hidden=values["enc.b_hidden"],
                        w_mu=values["enc.w_mu"], b_mu=values["enc.b_mu"],
                        w_sigma=values["enc.w_sigma"],
                        b_sigma=values["enc.b_sigma"],
                        D=hyper.D, K=hyper.K, n_types=n_types)
    dec = DecoderParams(w_type=values["dec.w_type"], b_type=values["dec.b_type"],
                        w_count=values["dec.w_count"], b_count=values["dec.b_count"],
                        w_count_out=values["dec.w_count_out"],
                        b_count_out=values["dec.b_count_out"],
                        w_edge=values["dec.w_edge"], b_edge=values["dec.b_edge"],
                        w_order=values["dec.w_order"], b_order=values["dec.b_order"],
                        D=hyper.D, n_types=n_types)
    model = ModelParams(enc, dec, float(header["lambda_n"]), table)
    return Checkpoint(model, hyper, int(header["iteration"]))
