"""Cross-lingual embedding alignment into a single hub space.

Each non-pivot language gets one linear map into the pivot's embedding
space: an orthogonal Procrustes solution refined by unconstrained gradient
descent on the relaxed CSLS criterion over the training dictionary.
Retrieval quality is measured as precision-at-1 under CSLS scoring, with a
hit counted for any listed translation of the source word.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingTable
from .errors import (
    ConfigError,
    EvaluationError,
    InputError,
    NumericalError,
    OptimizationError,
)

log = logging.getLogger(__name__)


@dataclass
class BilingualDictionary:
    """Word translation pairs. Duplicates are allowed: a word may have
    several translations, and any of them counts as a retrieval hit."""

    pairs: list[tuple[str, str]]
    source_language: str
    target_language: str

    def __len__(self) -> int:
        return len(self.pairs)

    @classmethod
    def load(cls, path: str | Path, source_language: str, target_language: str):
        pairs = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise InputError(f"{path}: expected 'src tgt' per line, got {line!r}")
            pairs.append((fields[0], fields[1]))
        return cls(pairs, source_language, target_language)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            "".join(f"{s} {t}\n" for s, t in self.pairs), encoding="utf-8"
        )

    def paired_rows(
        self, source: EmbeddingTable, target: EmbeddingTable
    ) -> tuple[np.ndarray, np.ndarray, int]:
        """Row matrices for pairs present in both vocabularies, plus the
        count of skipped out-of-vocabulary pairs."""
        xs, ys, skipped = [], [], 0
        for s, t in self.pairs:
            if s in source and t in target:
                xs.append(source.row(s))
                ys.append(target.row(t))
            else:
                skipped += 1
        if not xs:
            raise InputError(
                f"no dictionary pair is covered by the vocabularies "
                f"({self.source_language}->{self.target_language})"
            )
        return np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64), skipped


@dataclass
class LinearMap:
    """m x m map applied to column vectors: mapped = W @ x, i.e. rows map as
    X @ W.T."""

    matrix: np.ndarray
    source_language: str
    target_language: str
    orthogonal: bool = False

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.matrix)):
            raise NumericalError("linear map contains non-finite entries")
        if self.orthogonal and self.orthogonality_defect() > 1e-4:
            raise NumericalError(
                f"orthogonal flag set but defect is {self.orthogonality_defect():.2e}"
            )

    def orthogonality_defect(self) -> float:
        w = self.matrix
        return float(np.max(np.abs(w.T @ w - np.eye(w.shape[1]))))

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(rows, dtype=np.float64) @ self.matrix.T

    @classmethod
    def identity(cls, dim: int, language: str) -> "LinearMap":
        return cls(np.eye(dim), language, language, orthogonal=True)


@dataclass
class HubAlignment:
    pivot: str
    maps: dict[str, LinearMap]
    accuracies: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for lang, m in self.maps.items():
            if m.target_language != self.pivot:
                raise ConfigError(
                    f"map for {lang} targets {m.target_language}, not the pivot"
                )
        pivot_map = self.maps.get(self.pivot)
        if pivot_map is None or not np.array_equal(
            pivot_map.matrix, np.eye(pivot_map.matrix.shape[0])
        ):
            raise ConfigError("maps[pivot] must be the identity")


@dataclass(frozen=True)
class CslsParams:
    k: int = 10
    candidate_pool: int | None = None  # cap on neighbor-pool vocabulary size

    def validate(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")


def _unit(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(rows, axis=-1, keepdims=True)
    return rows / np.where(norms == 0.0, 1.0, norms)


def mean_topk_cosine(queries: np.ndarray, pool: np.ndarray, k: int) -> np.ndarray:
    """Mean cosine from each query to its k nearest pool rows (exact)."""
    if k > pool.shape[0]:
        raise ConfigError(f"k={k} exceeds neighbor pool size {pool.shape[0]}")
    sims = _unit(np.atleast_2d(queries)) @ _unit(pool).T
    if k == pool.shape[0]:
        return sims.mean(axis=1)
    top = np.partition(sims, -k, axis=1)[:, -k:]
    return top.mean(axis=1)


@dataclass
class NeighborStats:
    """Neighborhood statistics for CSLS over a fixed pair of vocabularies:
    the source pool already mapped into the target space."""

    source_pool: np.ndarray
    target_pool: np.ndarray
    k: int

    @classmethod
    def precompute(
        cls,
        source_rows: np.ndarray,
        target_rows: np.ndarray,
        params: CslsParams,
    ) -> "NeighborStats":
        params.validate()
        cap = params.candidate_pool
        src = np.asarray(source_rows, dtype=np.float64)
        tgt = np.asarray(target_rows, dtype=np.float64)
        if cap is not None:
            src, tgt = src[:cap], tgt[:cap]
        if params.k > min(src.shape[0], tgt.shape[0]):
            raise ConfigError(
                f"k={params.k} exceeds vocabulary sizes "
                f"({src.shape[0]}, {tgt.shape[0]})"
            )
        return cls(source_pool=src, target_pool=tgt, k=params.k)

    def penalty_to_target(self, x: np.ndarray) -> np.ndarray:
        return mean_topk_cosine(x, self.target_pool, self.k)

    def penalty_to_source(self, y: np.ndarray) -> np.ndarray:
        return mean_topk_cosine(y, self.source_pool, self.k)


def csls(x: np.ndarray, y: np.ndarray, ctx: NeighborStats) -> float:
    """CSLS(x, y) = 2 cos(x, y) - r_T(x) - r_S(y), where r_T is the mean
    cosine of x to its k nearest target-pool rows and r_S symmetrically."""
    cos = float(_unit(x) @ _unit(y))
    r_t = float(ctx.penalty_to_target(x)[0])
    r_s = float(ctx.penalty_to_source(y)[0])
    return 2.0 * cos - r_t - r_s


def csls_matrix(X: np.ndarray, Y: np.ndarray, ctx: NeighborStats) -> np.ndarray:
    """CSLS scores for all (row of X, row of Y) pairs."""
    sims = 2.0 * (_unit(X) @ _unit(Y).T)
    return sims - ctx.penalty_to_target(X)[:, None] - ctx.penalty_to_source(Y)[None, :]


def procrustes(X: np.ndarray, Y: np.ndarray, source_language: str = "src",
               target_language: str = "tgt") -> LinearMap:
    """Orthogonal map W = U V^T from the SVD of Y^T X; the cosine-alignment
    maximizer over orthogonal matrices for dictionary-paired rows."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape != Y.shape or X.ndim != 2 or X.shape[0] < 1:
        raise InputError(f"paired row matrices required, got {X.shape} vs {Y.shape}")
    if not np.any(X) or not np.any(Y):
        raise NumericalError("all-zero input to procrustes")
    u, _, vt = np.linalg.svd(Y.T @ X)
    return LinearMap(u @ vt, source_language, target_language, orthogonal=True)


@dataclass(frozen=True)
class RcslsConfig:
    epochs: int = 50
    learning_rate: float = 1.0
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 25


def _cos_rows(U: np.ndarray, Y: np.ndarray) -> np.ndarray:
    un = np.linalg.norm(U, axis=-1)
    yn = np.linalg.norm(Y, axis=-1)
    denom = np.where(un * yn == 0.0, 1.0, un * yn)
    return np.einsum("...d,...d->...", U, Y) / denom


def _cos_grad_wrt_u(U: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """d cos(u, y) / d u for matched rows (broadcasts over leading dims)."""
    un = np.linalg.norm(U, axis=-1, keepdims=True)
    un = np.where(un == 0.0, 1.0, un)
    yhat = _unit(Y)
    uhat = U / un
    cos = np.einsum("...d,...d->...", uhat, yhat)[..., None]
    return (yhat - cos * uhat) / un


def rcsls_loss(
    W: np.ndarray,
    X: np.ndarray,
    Y: np.ndarray,
    src_pool: np.ndarray,
    tgt_pool: np.ndarray,
    k: int,
) -> float:
    """Relaxed-CSLS loss with neighbor sets taken at W itself:
    mean_i [ -2 cos(Wx_i, y_i) + r_T(Wx_i) + r_S(y_i) ]."""
    U = X @ W.T
    r_t = mean_topk_cosine(U, tgt_pool, k)
    r_s = mean_topk_cosine(Y, src_pool @ W.T, k)
    return float(np.mean(-2.0 * _cos_rows(U, Y) + r_t + r_s))


class _FixedNeighborLoss:
    """RCSLS loss and gradient with neighbor *sets* frozen; smooth in W."""

    def __init__(self, X, Y, src_pool, tgt_pool, k):
        self.X, self.Y = X, Y
        self.src_pool, self.tgt_pool = src_pool, tgt_pool
        self.k = k
        self.nn_t: np.ndarray | None = None  # (n, k) target-pool neighbor ids
        self.nn_s: np.ndarray | None = None  # (n, k) source-pool neighbor ids

    def refresh(self, W: np.ndarray) -> None:
        U = self.X @ W.T
        sims_t = _unit(U) @ _unit(self.tgt_pool).T
        self.nn_t = np.argpartition(sims_t, -self.k, axis=1)[:, -self.k :]
        sims_s = _unit(self.Y) @ _unit(self.src_pool @ W.T).T
        self.nn_s = np.argpartition(sims_s, -self.k, axis=1)[:, -self.k :]

    def value(self, W: np.ndarray) -> float:
        U = self.X @ W.T
        fit = -2.0 * _cos_rows(U, self.Y)
        r_t = _cos_rows(U[:, None, :], self.tgt_pool[self.nn_t]).mean(axis=1)
        mapped_pool = self.src_pool @ W.T
        r_s = _cos_rows(self.Y[:, None, :], mapped_pool[self.nn_s]).mean(axis=1)
        return float(np.mean(fit + r_t + r_s))

    def gradient(self, W: np.ndarray) -> np.ndarray:
        n, k = self.X.shape[0], self.k
        U = self.X @ W.T
        # fit term: -2 d cos(Wx_i, y_i)
        grad = (-2.0 * _cos_grad_wrt_u(U, self.Y)).T @ self.X
        # target penalty: (1/k) sum over fixed neighbors y_j of d cos(Wx_i, y_j)
        g_t = _cos_grad_wrt_u(
            np.broadcast_to(U[:, None, :], (n, k, U.shape[1])), self.tgt_pool[self.nn_t]
        ).mean(axis=1)
        grad += g_t.T @ self.X
        # source penalty: (1/k) sum over fixed neighbors x_j of d cos(Wx_j, y_i)
        flat = self.nn_s.ravel()
        mapped = self.src_pool @ W.T
        g_s = _cos_grad_wrt_u(
            mapped[flat], np.repeat(self.Y, k, axis=0)
        ) / k
        grad += g_s.T @ self.src_pool[flat]
        return grad / n


def rcsls_refine(
    W0: LinearMap,
    dictionary: BilingualDictionary,
    source: EmbeddingTable,
    target: EmbeddingTable,
    params: CslsParams = CslsParams(),
    opt: RcslsConfig = RcslsConfig(),
) -> tuple[LinearMap, list[float]]:
    """Refine a map by full-batch gradient descent with backtracking line
    search on the relaxed CSLS loss (orthogonality dropped).

    Neighbor sets refresh per epoch, but only when the refreshed loss does
    not exceed the last recorded value, so the returned loss trace is
    non-increasing. If refinement ends up worse than W0 under the canonical
    loss (neighbors at the evaluated map), W0 is returned unchanged.
    """
    params.validate()
    if not dictionary.pairs:
        raise InputError("empty dictionary")
    X, Y, skipped = dictionary.paired_rows(source, target)
    if skipped:
        log.info("rcsls: skipped %d out-of-vocabulary dictionary pairs", skipped)

    cap = params.candidate_pool
    src_pool = np.asarray(source.matrix[:cap], dtype=np.float64)
    tgt_pool = np.asarray(target.matrix[:cap], dtype=np.float64)
    if params.k > min(src_pool.shape[0], tgt_pool.shape[0]):
        raise ConfigError("k exceeds the neighbor pool size")

    objective = _FixedNeighborLoss(X, Y, src_pool, tgt_pool, params.k)
    W = W0.matrix.copy()
    objective.refresh(W)
    loss_prev = objective.value(W)
    trace = [loss_prev]

    for _ in range(opt.epochs):
        stale_value = objective.value(W)
        nn_t, nn_s = objective.nn_t, objective.nn_s
        objective.refresh(W)
        refreshed = objective.value(W)
        if refreshed > loss_prev:
            objective.nn_t, objective.nn_s = nn_t, nn_s  # keep the safe sets
            current = stale_value
        else:
            current = refreshed
        if not np.isfinite(current):
            raise OptimizationError("rcsls loss is not finite", last_iterate=W)

        grad = objective.gradient(W)
        gnorm2 = float(np.sum(grad * grad))
        if gnorm2 == 0.0:
            break
        step = opt.learning_rate
        accepted = False
        for _ in range(opt.max_backtracks):
            candidate = W - step * grad
            value = objective.value(candidate)
            if np.isfinite(value) and value <= current - opt.armijo_c * step * gnorm2:
                W = candidate
                loss_prev = value
                trace.append(value)
                accepted = True
                break
            step *= opt.backtrack_factor
        if not accepted:
            break

    final = rcsls_loss(W, X, Y, src_pool, tgt_pool, params.k)
    initial = rcsls_loss(W0.matrix, X, Y, src_pool, tgt_pool, params.k)
    if not np.isfinite(final) or final > initial:
        log.warning("rcsls refinement did not improve; keeping the initial map")
        return (
            LinearMap(W0.matrix.copy(), W0.source_language, W0.target_language,
                      orthogonal=W0.orthogonal),
            trace,
        )
    return (
        LinearMap(W, W0.source_language, W0.target_language, orthogonal=False),
        trace,
    )


@dataclass
class PAt1Report:
    accuracy: float
    evaluated: int
    skipped_oov: int


def align_to_hub(
    tables: dict[str, EmbeddingTable],
    dictionaries: dict[str, BilingualDictionary],
    pivot: str,
    params: CslsParams = CslsParams(),
    opt: RcslsConfig = RcslsConfig(),
) -> HubAlignment:
    """Align every language into the pivot's space: Procrustes initialization
    from the language's dictionary to the pivot, then RCSLS refinement.
    Training-dictionary P@1 is recorded per language."""
    if pivot not in tables:
        raise ConfigError(f"pivot {pivot!r} has no embedding table")
    maps: dict[str, LinearMap] = {
        pivot: LinearMap.identity(tables[pivot].dim, pivot)
    }
    alignment = HubAlignment(pivot=pivot, maps=maps)
    for lang in sorted(tables):
        if lang == pivot:
            continue
        dictionary = dictionaries.get(lang)
        if dictionary is None:
            raise ConfigError(f"no dictionary to the pivot for language {lang!r}")
        X, Y, _ = dictionary.paired_rows(tables[lang], tables[pivot])
        w0 = procrustes(X, Y, lang, pivot)
        refined, _ = rcsls_refine(w0, dictionary, tables[lang], tables[pivot], params, opt)
        maps[lang] = refined
        report = eval_p_at_1(alignment, tables, dictionary, params)
        alignment.accuracies[lang] = report.accuracy
    alignment.accuracies[pivot] = 1.0
    return alignment


def eval_p_at_1(
    alignment: HubAlignment,
    tables: dict[str, EmbeddingTable],
    dictionary: BilingualDictionary,
    params: CslsParams = CslsParams(),
) -> PAt1Report:
    """CSLS retrieval precision-at-1: the fraction of source words whose
    CSLS-nearest target-vocabulary word is any of its listed translations.
    Out-of-vocabulary pairs are skipped and counted."""
    params.validate()
    src_lang, tgt_lang = dictionary.source_language, dictionary.target_language
    if src_lang not in alignment.maps or tgt_lang not in alignment.maps:
        raise ConfigError(
            f"alignment lacks a map for {src_lang!r} or {tgt_lang!r}"
        )
    src_table, tgt_table = tables[src_lang], tables[tgt_lang]

    translations: dict[str, set[str]] = {}
    skipped = 0
    for s, t in dictionary.pairs:
        if s in src_table and t in tgt_table:
            translations.setdefault(s, set()).add(t)
        else:
            skipped += 1
    if not translations:
        raise EvaluationError("no usable dictionary pairs after OOV filtering")

    mapped_src_vocab = alignment.maps[src_lang].apply(src_table.matrix)
    mapped_tgt_vocab = alignment.maps[tgt_lang].apply(tgt_table.matrix)
    stats = NeighborStats.precompute(mapped_src_vocab, mapped_tgt_vocab, params)

    sources = sorted(translations)
    queries = mapped_src_vocab[[src_table.index(w) for w in sources]]
    pool = stats.target_pool
    scores = csls_matrix(queries, pool, stats)
    best = np.argmax(scores, axis=1)
    hits = sum(
        1
        for w, b in zip(sources, best)
        if tgt_table.words[int(b)] in translations[w]
    )
    return PAt1Report(
        accuracy=hits / len(sources), evaluated=len(sources), skipped_oov=skipped
    )
