"""
Mechanical verification of the identification theorems.

Every assumption and testable implication is a d-separation, d-connection or
forbidden-directed-path query on the original graph ``G`` or on the
interventional graphs ``G_D`` / ``G_DM`` (outgoing arrows of ``D``, resp.
``D`` and ``M``, deleted). A theorem is checked by evaluating all queries on
every graph of a family and comparing the two sides graph by graph.

The covariates ``X`` are not materialised in the enumerated families: every
query is conditional on ``X`` and ``X`` is dropped from conditioning sets on
graphs that do not contain it. The fixture graphs keep ``X`` (and ``W``)
as explicit nodes.

The family graphs are evaluated by a numba kernel working on node bitmasks;
`check_query` on a `Dag` goes through `seqid.graph.is_dseparated`, and the
test suite checks that both agree.
"""

from __future__ import annotations

import itertools
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterator

import numba
import numpy as np

from .graph import Dag, InvalidQueryError, is_dseparated, mutilate, parse_edge_list

# forbidden directions of the causal-structure assumption; Y -> D is implied
# by D(m, y, z2) = D although it is missing from the written list
FORBIDDEN_BASE = (
    ("Y", "M"), ("Y", "X"), ("Y", "Z1"), ("Y", "Z2"), ("Y", "D"),
    ("M", "D"), ("M", "X"), ("M", "Z1"), ("M", "Z2"),
    ("Z2", "D"), ("Z2", "X"), ("Z2", "Z1"),
    ("D", "X"), ("D", "Z1"),
)
# post-treatment variant adds M -> W; Y -> W is excluded because Y is the
# final outcome (Y(.) never enters another variable's potential values)
FORBIDDEN_POST = FORBIDDEN_BASE + (("M", "W"), ("Y", "W"))

GRAPH_KINDS = ("G", "G_D", "G_DM")
_CUTS = {"G": (), "G_D": ("D",), "G_DM": ("D", "M")}


@dataclass(frozen=True)
class QuerySpec:
    id: str
    graph_kind: str
    relation: str  # "separated" | "connected" | "structural"
    endpoints: tuple
    conditioning: frozenset = frozenset()
    forbidden: tuple = ()

    def __post_init__(self):
        if self.graph_kind not in GRAPH_KINDS:
            raise InvalidQueryError(f"{self.id}: unknown graph kind {self.graph_kind!r}")
        if self.relation not in ("separated", "connected", "structural"):
            raise InvalidQueryError(f"{self.id}: unknown relation {self.relation!r}")
        if self.relation == "structural":
            if not self.forbidden:
                raise InvalidQueryError(f"{self.id}: structural query needs forbidden directions")
        elif len(self.endpoints) != 2:
            raise InvalidQueryError(f"{self.id}: endpoints must be a pair of node sets")


def _q(qid, kind, relation, a, b, given=()):
    return QuerySpec(qid, kind, relation, (frozenset([a]), frozenset([b])), frozenset(given))


QUERIES = {
    q.id: q
    for q in (
        QuerySpec("A1", "G", "structural", (), forbidden=FORBIDDEN_BASE),
        QuerySpec("A1m", "G", "structural", (), forbidden=FORBIDDEN_POST),
        _q("A4", "G", "connected", "D", "Z1", ["X"]),
        _q("A5", "G", "connected", "M", "Z2", ["D", "X"]),
        _q("A5m", "G", "connected", "M", "Z2", ["D", "X", "W"]),
        _q("A6a", "G_DM", "separated", "Y", "D", ["X"]),
        _q("A6b", "G_D", "separated", "M", "D", ["X"]),
        _q("A6am", "G_DM", "separated", "Y", "D", ["X", "Z2"]),
        _q("A6bm", "G_D", "separated", "M", "D", ["X", "Z2"]),
        _q("A7", "G_DM", "separated", "Y", "M", ["D", "X"]),
        _q("A7m", "G_DM", "separated", "Y", "M", ["D", "X", "W"]),
        _q("A8a", "G_DM", "separated", "Y", "Z1", ["X"]),
        _q("A8b", "G_D", "separated", "M", "Z1", ["X"]),
        _q("A8am", "G_DM", "separated", "Y", "Z1", ["X", "Z2"]),
        _q("A8bm", "G_D", "separated", "M", "Z1", ["X", "Z2"]),
        _q("A9", "G_DM", "separated", "Y", "Z2", ["D", "X"]),
        _q("A9m", "G_DM", "separated", "Y", "Z2", ["D", "X", "W"]),
        _q("TIa", "G", "separated", "Y", "Z1", ["X", "D"]),
        _q("TIam", "G", "separated", "Y", "Z1", ["X", "D", "Z2"]),
        _q("TIb", "G", "separated", "M", "Z1", ["X", "D"]),
        _q("TIbm", "G", "separated", "M", "Z1", ["X", "D", "Z2"]),
        _q("TIc", "G", "separated", "Y", "Z2", ["X", "D", "M"]),
        _q("TId", "G", "separated", "Y", "Z1", ["X", "D", "M"]),
        _q("TIe", "G", "separated", "Y", "Z2", ["X", "D", "M", "W"]),
    )
}


@dataclass(frozen=True)
class Theorem:
    name: str
    family: str
    preconditions: tuple
    sides: tuple  # each side is a conjunction of query ids
    implication: bool = False  # sides[0] => sides[1] instead of equivalence


THEOREMS = {
    t.name: t
    for t in (
        Theorem("T1", "baseline", ("A1", "A4", "A5"),
                (("A6a", "A6b", "A7", "A8a", "A8b", "A9"), ("TIa", "TIb", "TIc"))),
        Theorem("T2", "z2linked", ("A1", "A4", "A5"),
                (("A6am", "A6bm", "A7", "A8am", "A8bm", "A9"),
                 ("TIam", "TIbm", "TIc"),
                 ("TIbm", "TIc", "TId"))),
        Theorem("L1a", "z2linked", ("A1",), (("TIam", "TIbm", "TIc"), ("TId",)), implication=True),
        Theorem("L1b", "z2linked", ("A1",), (("TIbm", "TIc", "TId"), ("TIam",)), implication=True),
        # an alternative statement of the lemma with TIa in place of TIam
        Theorem("L1a-alt", "z2linked", ("A1",), (("TIa", "TIbm", "TIc"), ("TId",)), implication=True),
        Theorem("L1b-alt", "z2linked", ("A1",), (("TIbm", "TIc", "TId"), ("TIa",)), implication=True),
        Theorem("T3", "posttreatment", ("A1m", "A4", "A5m"),
                (("A6a", "A6b", "A7m", "A8a", "A8b", "A9m"), ("TIa", "TIb", "TIe"))),
    )
}

THEOREM_ALIASES = {"t1": ("T1",), "t2": ("T2",), "l1": ("L1a", "L1b"), "t3": ("T3",)}


def allowed_edges(observed, forbidden) -> tuple:
    """Directed observed-pair edges not excluded by the forbidden-direction list."""
    ban = set(forbidden)
    return tuple((a, b) for a, b in itertools.permutations(observed, 2) if (a, b) not in ban)


@dataclass(frozen=True)
class GraphFamily:
    """All graphs obtained by toggling allowed edges and pairwise latent confounders.

    Bit ``i < len(edges)`` of a mask switches on ``edges[i]``; the remaining
    bits switch on the latent confounder of ``latent_pairs[i - len(edges)]``.
    """

    name: str
    observed: tuple
    forbidden: tuple
    edges: tuple = field(init=False)
    latent_pairs: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "edges", allowed_edges(self.observed, self.forbidden))
        object.__setattr__(self, "latent_pairs", tuple(itertools.combinations(self.observed, 2)))

    @property
    def n_bits(self) -> int:
        return len(self.edges) + len(self.latent_pairs)

    @property
    def size(self) -> int:
        return 1 << self.n_bits

    def graph(self, mask: int) -> Dag:
        mask = int(mask)
        edges = [e for i, e in enumerate(self.edges) if mask >> i & 1]
        k = len(self.edges)
        for j, (a, b) in enumerate(self.latent_pairs):
            if mask >> (k + j) & 1:
                u = f"U_{a}{b}"
                edges += [(u, a), (u, b)]
        return Dag.from_edges(edges, self.observed)

    def mask_of(self, g: Dag) -> int:
        mask = 0
        for i, e in enumerate(self.edges):
            if e in g.edges:
                mask |= 1 << i
        k = len(self.edges)
        for j, (a, b) in enumerate(self.latent_pairs):
            if f"U_{a}{b}" in g.nodes:
                mask |= 1 << (k + j)
        return mask


FAMILIES = {
    "baseline": GraphFamily("baseline", ("Y", "D", "M", "Z1", "Z2"), FORBIDDEN_BASE),
    # the Z1 -> Z2 arrow is already an allowed edge, so the family is the same graph set
    "z2linked": GraphFamily("z2linked", ("Y", "D", "M", "Z1", "Z2"), FORBIDDEN_BASE),
    "posttreatment": GraphFamily("posttreatment", ("Y", "D", "M", "Z1", "Z2", "W"), FORBIDDEN_POST),
}


def enumerate_family(setup: str = "baseline") -> Iterator[Dag]:
    """Yield every graph of the family in mask order."""
    fam = FAMILIES[setup]
    for mask in range(fam.size):
        yield fam.graph(mask)


# ---------------------------------------------------------------- query evaluation

def _strip_implicit(g: Dag, nodes) -> frozenset:
    nodes = frozenset(nodes)
    if "X" not in g.nodes:
        nodes = nodes - {"X"}
    return nodes


def check_query(g: Dag, q: QuerySpec) -> bool:
    """Evaluate one assumption or implication on ``g``.

    ``X`` is treated as implicit when the graph has no ``X`` node.
    """
    if not isinstance(q, QuerySpec):
        raise InvalidQueryError(f"not a query spec: {q!r}")
    if q.relation == "structural":
        return _no_forbidden_paths(g, q.forbidden)
    h = mutilate(g, [v for v in _CUTS[q.graph_kind] if v in g.nodes])
    a, b = (_strip_implicit(g, s) for s in q.endpoints)
    c = _strip_implicit(g, q.conditioning)
    sep = is_dseparated(h, a, b, c)
    return sep if q.relation == "separated" else not sep


def _no_forbidden_paths(g: Dag, forbidden) -> bool:
    for s, t in forbidden:
        if s in g.nodes and t in g.nodes and s in g.ancestors([t]):
            return False
    return True


# ---------------------------------------------------------------- bitmask kernel

_KIND_CODE = {"G": 0, "G_D": 1, "G_DM": 2}
_STRUCTURAL = 3


@numba.njit(cache=True, nogil=True)
def _dsep_bits(pa, ch, n, a, b, c):
    anc = c
    frontier = c
    while frontier:
        new = 0
        for v in range(n):
            if frontier >> v & 1:
                new |= pa[v]
        new &= ~anc
        anc |= new
        frontier = new
    vis_up = 0
    vis_dn = 0
    pend_up = a
    pend_dn = 0
    while pend_up or pend_dn:
        nu = 0
        nd = 0
        for v in range(n):
            if pend_up >> v & 1 and not (c >> v & 1):
                nu |= pa[v]
                nd |= ch[v]
            if pend_dn >> v & 1:
                if not (c >> v & 1):
                    nd |= ch[v]
                if anc >> v & 1:
                    nu |= pa[v]
        vis_up |= pend_up
        vis_dn |= pend_dn
        pend_up = nu & ~vis_up
        pend_dn = nd & ~vis_dn
    reach = (vis_up | vis_dn) & ~c
    return (reach & b) == 0


@numba.njit(cache=True, nogil=True)
def _eval_masks(masks, n_obs, e_src, e_dst, l_a, l_b, d_idx, m_idx,
                q_kind, q_a, q_b, q_c, q_neg, out, acyclic):
    n_edges = e_src.shape[0]
    n = n_obs + l_a.shape[0]
    one = np.int64(1)
    pa = np.zeros((3, n), dtype=np.int64)
    ch = np.zeros((3, n), dtype=np.int64)
    desc = np.zeros(n, dtype=np.int64)
    for i in range(masks.shape[0]):
        mask = masks[i]
        pa[:, :] = 0
        ch[:, :] = 0
        for e in range(n_edges):
            if mask >> e & 1:
                s = e_src[e]
                t = e_dst[e]
                for k in range(3):
                    if k >= 1 and s == d_idx:
                        continue
                    if k == 2 and s == m_idx:
                        continue
                    pa[k, t] |= one << s
                    ch[k, s] |= one << t
        for j in range(l_a.shape[0]):
            if mask >> (n_edges + j) & 1:
                u = n_obs + j
                for k in range(3):
                    ch[k, u] = (one << l_a[j]) | (one << l_b[j])
                    pa[k, l_a[j]] |= one << u
                    pa[k, l_b[j]] |= one << u
        # descendants by fixed point; a node reaching itself means a cycle
        for v in range(n):
            desc[v] = ch[0, v]
        changed = True
        while changed:
            changed = False
            for v in range(n):
                d = desc[v]
                for w in range(n):
                    if d >> w & 1:
                        d |= desc[w]
                if d != desc[v]:
                    desc[v] = d
                    changed = True
        ok = True
        for v in range(n):
            if desc[v] >> v & 1:
                ok = False
        acyclic[i] = ok
        res = np.uint64(0)
        if ok:
            for q in range(q_kind.shape[0]):
                kind = q_kind[q]
                if kind == 3:
                    val = True
                    for v in range(n_obs):
                        if q_a[q] >> v & 1 and desc[v] & q_b[q]:
                            val = False
                else:
                    val = _dsep_bits(pa[kind], ch[kind], n, q_a[q], q_b[q], q_c[q])
                if q_neg[q]:
                    val = not val
                if val:
                    res |= np.uint64(1) << np.uint64(q)
        out[i] = res


class _CompiledQueries:
    """Query table lowered to kernel arrays for one family."""

    def __init__(self, fam: GraphFamily, ids):
        self.fam = fam
        idx = {v: i for i, v in enumerate(fam.observed)}
        kinds, qa, qb, qc, neg = [], [], [], [], []
        self.slots = {}
        for qid in ids:
            q = QUERIES[qid]
            slots = []
            if q.relation == "structural":
                for s, t in q.forbidden:
                    if s in idx and t in idx:
                        slots.append(len(kinds))
                        kinds.append(_STRUCTURAL)
                        qa.append(1 << idx[s])
                        qb.append(1 << idx[t])
                        qc.append(0)
                        neg.append(False)
            else:
                bits = []
                for s in (*q.endpoints, q.conditioning):
                    s = s - {"X"}
                    missing = s - set(idx)
                    if missing:
                        raise InvalidQueryError(f"{qid}: node(s) {sorted(missing)} absent from family {fam.name}")
                    bits.append(sum(1 << idx[v] for v in s))
                slots.append(len(kinds))
                kinds.append(_KIND_CODE[q.graph_kind])
                qa.append(bits[0])
                qb.append(bits[1])
                qc.append(bits[2])
                neg.append(q.relation == "connected")
            self.slots[qid] = slots
        if len(kinds) > 64:
            raise InvalidQueryError("too many kernel queries for a 64-bit result word")
        self.q_kind = np.array(kinds, dtype=np.int64)
        self.q_a = np.array(qa, dtype=np.int64)
        self.q_b = np.array(qb, dtype=np.int64)
        self.q_c = np.array(qc, dtype=np.int64)
        self.q_neg = np.array(neg, dtype=np.bool_)
        self.e_src = np.array([idx[a] for a, _ in fam.edges], dtype=np.int64)
        self.e_dst = np.array([idx[b] for _, b in fam.edges], dtype=np.int64)
        self.l_a = np.array([idx[a] for a, _ in fam.latent_pairs], dtype=np.int64)
        self.l_b = np.array([idx[b] for _, b in fam.latent_pairs], dtype=np.int64)
        self.d_idx = idx["D"]
        self.m_idx = idx["M"]

    def evaluate(self, masks: np.ndarray):
        masks = np.ascontiguousarray(masks, dtype=np.int64)
        out = np.zeros(masks.shape[0], dtype=np.uint64)
        acyclic = np.zeros(masks.shape[0], dtype=np.bool_)
        _eval_masks(masks, len(self.fam.observed), self.e_src, self.e_dst, self.l_a, self.l_b,
                    self.d_idx, self.m_idx, self.q_kind, self.q_a, self.q_b, self.q_c, self.q_neg,
                    out, acyclic)
        return out, acyclic

    def truth(self, words: np.ndarray, qid: str) -> np.ndarray:
        val = np.ones(words.shape[0], dtype=bool)
        for s in self.slots[qid]:
            val &= (words >> np.uint64(s)) & np.uint64(1) == 1
        return val


def evaluate_queries(setup: str, masks, ids) -> dict:
    """Truth table ``{query id: bool array}`` for the given family masks."""
    cq = _CompiledQueries(FAMILIES[setup], ids)
    words, acyclic = cq.evaluate(np.asarray(masks))
    table = {qid: cq.truth(words, qid) & acyclic for qid in ids}
    table["acyclic"] = acyclic
    return table


# ---------------------------------------------------------------- verification

@dataclass
class VerificationReport:
    theorem: str
    family_size: int = 0
    satisfying_preconditions: int = 0
    both_sides_hold: int = 0
    neither_side_holds: int = 0
    counterexample_masks: list = field(default_factory=list)
    elapsed: float = 0.0
    family: str = ""

    @property
    def counterexamples(self) -> list:
        fam = FAMILIES[self.family]
        return [fam.graph(m) for m in self.counterexample_masks]

    def merge(self, other: "VerificationReport") -> "VerificationReport":
        return VerificationReport(
            self.theorem,
            self.family_size + other.family_size,
            self.satisfying_preconditions + other.satisfying_preconditions,
            self.both_sides_hold + other.both_sides_hold,
            self.neither_side_holds + other.neither_side_holds,
            sorted(self.counterexample_masks + other.counterexample_masks),
            max(self.elapsed, other.elapsed),
            self.family or other.family,
        )

    def as_record(self) -> dict:
        return {
            "theorem": self.theorem,
            "family": self.family,
            "family_size": self.family_size,
            "satisfying_preconditions": self.satisfying_preconditions,
            "both_sides_hold": self.both_sides_hold,
            "neither_side_holds": self.neither_side_holds,
            "counterexamples": len(self.counterexample_masks),
            "counterexample_masks": list(self.counterexample_masks),
        }


def _theorem_chunk(th: Theorem, cq: _CompiledQueries, masks: np.ndarray) -> VerificationReport:
    words, acyclic = cq.evaluate(masks)

    def conj(ids):
        v = acyclic.copy()
        for qid in ids:
            v &= cq.truth(words, qid)
        return v

    pre = conj(th.preconditions)
    sides = [conj(s) for s in th.sides]
    if th.implication:
        ante, cons = sides
        both = pre & ante & cons
        vacuous = pre & ~ante
        bad = pre & ante & ~cons
    else:
        all_true = np.logical_and.reduce(sides)
        all_false = ~np.logical_or.reduce(sides)
        both = pre & all_true
        vacuous = pre & all_false
        bad = pre & ~all_true & ~all_false
    return VerificationReport(
        th.name,
        family_size=int(acyclic.sum()),
        satisfying_preconditions=int(pre.sum()),
        both_sides_hold=int(both.sum()),
        neither_side_holds=int(vacuous.sum()),
        counterexample_masks=[int(m) for m in masks[bad]],
        family=th.family,
    )


def _mask_chunks(fam: GraphFamily, chunk_bits: int, max_latents):
    n_edges = len(fam.edges)
    if max_latents is None:
        step = fam.size >> chunk_bits if fam.n_bits > chunk_bits else fam.size
        for lo in range(0, fam.size, step):
            yield np.arange(lo, lo + step, dtype=np.int64)
        return
    edge_masks = np.arange(1 << n_edges, dtype=np.int64)
    for k in range(max_latents + 1):
        for combo in itertools.combinations(range(len(fam.latent_pairs)), k):
            bits = sum(1 << (n_edges + j) for j in combo)
            yield edge_masks | bits


def verify_theorem(theorem: str, threads: int = 1, chunk_bits: int = 4, max_latents=None,
                   reverse: bool = False) -> VerificationReport:
    """Check a theorem on every graph of its family.

    The family is split into ``2**chunk_bits`` ranges by the high bits of the
    toggle mask; ranges run on ``threads`` workers and partial reports are
    summed. ``max_latents`` restricts the family to graphs with at most that
    many latent confounders (required for ``T3``, whose full family is too
    large). ``reverse`` processes ranges in the opposite order.
    """
    th = THEOREMS[theorem]
    fam = FAMILIES[th.family]
    if th.name == "T3" and max_latents is None:
        raise ValueError("T3 needs max_latents: the full post-treatment family is not enumerable")
    ids = sorted({q for s in th.sides for q in s} | set(th.preconditions))
    cq = _CompiledQueries(fam, ids)
    chunks = list(_mask_chunks(fam, chunk_bits, max_latents))
    if reverse:
        chunks = [c[::-1] for c in reversed(chunks)]
    t0 = time.perf_counter()
    report = VerificationReport(th.name, family=th.family)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda m: _theorem_chunk(th, cq, m), chunks))
    else:
        parts = [_theorem_chunk(th, cq, m) for m in chunks]
    for part in parts:
        report = report.merge(part)
    report.elapsed = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------- fixtures

FIXTURES = ("figure1", "figure2-left", "figure2-right", "figure5", "figure5-noz1w")
_FIXTURE_THEOREM = {
    "figure1": "T1", "figure2-left": "T2", "figure2-right": "T1",
    "figure5": "T3", "figure5-noz1w": "T3",
}


def load_fixture(name: str) -> Dag:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    text = resources.files("seqid").joinpath("fixtures", f"{name}.txt").read_text()
    return parse_edge_list(text)


def check_fixture(fixture, theorem: str | None = None) -> dict:
    """Evaluate the queries of the fixture's theorem (plus the test implications).

    ``fixture`` is a fixture name or a `Dag`. The result maps query ids to
    booleans; ``<theorem>:pre``, ``<theorem>:side<k>`` and ``<theorem>:holds``
    summarise the theorem on that graph.
    """
    if isinstance(fixture, Dag):
        g = fixture
        theorem = theorem or ("T3" if "W" in g.nodes else "T1")
    else:
        g = load_fixture(fixture)
        theorem = theorem or _FIXTURE_THEOREM[fixture]
    th = THEOREMS[theorem]
    ids = list(dict.fromkeys([*th.preconditions, *(q for s in th.sides for q in s),
                              "TIa", "TIb", "TIc", "TIam", "TIbm", "TId"]))
    if "W" in g.nodes:
        ids += ["A5m", "A7m", "A9m", "TIe"]
    out = {qid: check_query(g, QUERIES[qid]) for qid in dict.fromkeys(ids)}
    out[f"{th.name}:pre"] = all(out[q] for q in th.preconditions)
    sides = [all(out[q] for q in s) for s in th.sides]
    for k, v in enumerate(sides):
        out[f"{th.name}:side{k}"] = v
    if th.implication:
        out[f"{th.name}:holds"] = (not out[f"{th.name}:pre"]) or (not sides[0]) or sides[1]
    else:
        out[f"{th.name}:holds"] = (not out[f"{th.name}:pre"]) or len(set(sides)) == 1
    return out
