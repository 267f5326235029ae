"""Cluster colorings of the clustered conflict graph and the multicast
codewords they induce.

A cluster coloring picks one representative vertex per cluster and colors
the representatives so that no two adjacent ones share a color. Every color
becomes one XOR transmission of the distinct packets carried by its
representatives; a representative whose packet differs from its root packet
costs an additional refinement of H(root | representative) file-units.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import NamedTuple

from corrcache.demand import packet_demand
from corrcache.graph import build as build_graph
from corrcache.library import conditional_entropy
from corrcache.logger import logger
from corrcache.utils import as_generator


class ColoringError(Exception):
    ...


class SizeGuardError(Exception):
    ...


@dataclass(frozen=True)
class ClusterColoring:
    """A cluster coloring.

    Attributes
    ----------
    representatives : dict
        Maps every cluster key to its colored vertex.
    assignment : dict
        Maps every cluster key to its color, ``0 .. n_colors - 1``.
    n_colors : int
    method : str
        The algorithm that produced the coloring.
    """

    representatives: dict
    assignment: dict
    n_colors: int
    method: str = ""

    def color_classes(self):
        classes = [[] for _ in range(self.n_colors)]
        for key in sorted(self.representatives):
            classes[self.assignment[key]].append(self.representatives[key])
        return classes


class _Builder:
    """Accumulates a cluster coloring while an algorithm runs."""

    def __init__(self, method):
        self.method = method
        self.representatives = {}
        self.assignment = {}
        self.n_colors = 0

    def new_color(self):
        self.n_colors += 1
        return self.n_colors - 1

    def assign(self, key, vertex, color):
        self.representatives[key] = vertex
        self.assignment[key] = color

    def result(self):
        return ClusterColoring(
            representatives=dict(self.representatives),
            assignment=dict(self.assignment),
            n_colors=self.n_colors,
            method=self.method,
        )


def _clusters_by_packet(H):
    """``(receiver, packet) -> cluster keys`` and ``packet -> cluster
    keys`` indices."""

    by_receiver_packet = defaultdict(list)
    by_packet = defaultdict(set)
    for key, vs in H.clusters.items():
        for v in vs:
            by_receiver_packet[(key[0], v.rho)].append(key)
            by_packet[v.rho].add(key)
    return by_receiver_packet, by_packet


def _member(H, key, packet):
    for v in H.cluster(key):
        if v.rho == packet:
            return v
    raise KeyError(packet)


def gclc1(H, rng=None):
    """Greedy cluster coloring, first variant.

    Roots are visited in canonical order (or in a random order when
    ``rng`` is given). Inside the cluster of the current root, candidates
    are sorted by decreasing receiver-label size, then by increasing
    H(root | candidate), then canonically. For each candidate ``v_t`` an
    independent set of vertices sharing its receiver label is grown over
    the uncolored clusters; the largest set found so far is accepted as
    soon as it is at least as large as the label of ``v_t`` or the
    candidates run out. The set gets a fresh color, and every uncolored
    cluster it serves (its own clusters, plus the clusters of the same
    receivers whose δ-ensemble contains one of its packets) is removed.

    Parameters
    ----------
    H : corrcache.graph.ClusteredConflictGraph
    rng : None, int or numpy.random.Generator, optional
        Randomizes the order in which roots are picked.

    Returns
    -------
    ClusterColoring
    """

    keys = list(H.clusters)
    if rng is not None:
        rng = as_generator(rng)
        keys = [keys[i] for i in rng.permutation(len(keys))]

    by_label = defaultdict(list)
    for v in H.vertices:
        by_label[H.receiver_label(v)].append(v)
    by_receiver_packet, _ = _clusters_by_packet(H)

    uncolored = set(H.clusters)
    out = _Builder("gclc1")

    for key in keys:
        if key not in uncolored:
            continue

        candidates = sorted(
            H.cluster(key),
            key=lambda v: (-len(H.receiver_label(v)), H.refinement(v), v),
        )
        best = None
        for t, vt in enumerate(candidates):
            label = H.receiver_label(vt)
            I = [vt]
            for v in by_label[label]:
                if v.cluster not in uncolored or v.cluster == key:
                    continue
                if any(H.adjacent(v, w) for w in I):
                    continue
                I.append(v)
            if best is None or len(I) > len(best):
                best = I
            if len(best) >= len(label) or t == len(candidates) - 1:
                break

        color = out.new_color()
        served = []
        for v in best:
            out.assign(v.cluster, v, color)
            served.append(v.cluster)
        for v in best:
            for other in by_receiver_packet[(v.mu, v.rho)]:
                if other in uncolored and other not in out.assignment:
                    out.assign(other, _member(H, other, v.rho), color)
                    served.append(other)
        uncolored.difference_update(served)
        logger.debug(
            f"gclc1 color {color}: {len(best)} vertices serve "
            f"{len(served)} clusters"
        )

    return out.result()


def gclc2(H):
    """Greedy cluster coloring, second variant (generalized naive
    multicast).

    Clusters are visited in canonical order. In each uncolored cluster the
    vertex whose packet appears in the most uncolored clusters is picked
    (ties by increasing H(root | vertex), then canonically); its packet is
    sent on its own and serves every uncolored cluster containing it.

    Returns
    -------
    ClusterColoring
    """

    _, by_packet = _clusters_by_packet(H)
    uncolored = set(H.clusters)
    out = _Builder("gclc2")

    for key in H.clusters:
        if key not in uncolored:
            continue
        vt = min(
            H.cluster(key),
            key=lambda v: (
                -len(by_packet[v.rho] & uncolored),
                H.refinement(v),
                v,
            ),
        )
        color = out.new_color()
        served = sorted(by_packet[vt.rho] & uncolored)
        for other in served:
            out.assign(other, _member(H, other, vt.rho), color)
        uncolored.difference_update(served)

    return out.result()


def choose_min(H):
    """The coloring of :func:`gclc1` or :func:`gclc2` with fewer colors,
    :func:`gclc1` on ties."""

    first, second = gclc1(H), gclc2(H)
    chosen = first if first.n_colors <= second.n_colors else second
    logger.debug(
        f"choose_min: gclc1={first.n_colors} gclc2={second.n_colors} -> "
        f"{chosen.method}"
    )
    return chosen


def check_coloring(coloring, H):
    """Lists every way in which ``coloring`` fails to be a valid cluster
    coloring of ``H``; an empty list means valid."""

    problems = []
    for key in H.clusters:
        if key not in coloring.assignment:
            problems.append(f"cluster {key} has no color")
            continue
        v = coloring.representatives.get(key)
        if v is None or v not in H.cluster(key):
            problems.append(f"cluster {key} colored from outside")
    extra = set(coloring.assignment) - set(H.clusters)
    if extra:
        problems.append(f"unknown clusters {sorted(extra)}")

    for c, members in enumerate(coloring.color_classes()):
        for i, v1 in enumerate(members):
            for v2 in members[i + 1:]:
                if H.adjacent(v1, v2):
                    problems.append(
                        f"adjacent vertices {v1} and {v2} share color {c}"
                    )
    return problems


class Transmission(NamedTuple):
    """One XOR of distinct packets (costs one packet, 1/B file-units)."""

    color: int
    packets: tuple


class Delivery(NamedTuple):
    """How the root packet ``wanted`` of receiver ``receiver`` is served:
    through transmission ``color``, which carries ``delivered``."""

    receiver: int
    wanted: tuple
    delivered: tuple
    color: int
    refinement: float


@dataclass(frozen=True)
class CodewordPlan:
    """The multicast codeword of a cluster coloring: XOR transmissions
    followed by uncoded refinement segments.

    Attributes
    ----------
    B : int
    transmissions : tuple of Transmission
    deliveries : tuple of Delivery
    local : tuple
        The local-substitution ledger of every receiver.
    method : str
    """

    B: int
    transmissions: tuple
    deliveries: tuple
    local: tuple
    method: str = ""
    n_receivers: int = field(default=0)

    @property
    def n_colors(self):
        return len(self.transmissions)

    def receiver_refinement(self, u):
        graph = sum(d.refinement for d in self.deliveries if d.receiver == u)
        local = sum(s.refinement for s in self.local[u])
        return graph + local

    @property
    def refinements(self):
        return tuple(
            self.receiver_refinement(u) for u in range(self.n_receivers)
        )

    @property
    def coded_rate(self):
        return self.n_colors / self.B

    @property
    def rate(self):
        """Codeword length in file-units."""

        return self.coded_rate + sum(self.refinements)

    def to_trace(self):
        """Human-readable trace: one line per transmission then one line
        per receiver with its refinement total."""

        lines = [f"# method={self.method} B={self.B} rate={self.rate!r}"]
        for t in self.transmissions:
            packets = " ^ ".join(str(p) for p in t.packets)
            lines.append(f"color {t.color}: {packets}")
        for u in range(self.n_receivers):
            lines.append(
                f"receiver {u}: refinement {self.receiver_refinement(u)!r}"
            )
        return "\n".join(lines) + "\n"


def build_codeword(coloring, H, Q, model, validate=True):
    """Turns a cluster coloring into its multicast codeword.

    Parameters
    ----------
    coloring : ClusterColoring
    H : corrcache.graph.ClusteredConflictGraph
    Q : corrcache.demand.PacketDemand
    model : corrcache.library.CorrelationModel
    validate : bool, optional
        Check the coloring first. Only fault-injection tests turn this off.

    Returns
    -------
    CodewordPlan

    Raises
    ------
    ColoringError
        If ``validate`` and the coloring is not a valid cluster coloring.
    """

    if validate:
        problems = check_coloring(coloring, H)
        if problems:
            msg = f"Invalid cluster coloring: {problems[0]}"
            logger.critical(msg)
            raise ColoringError(msg)

    packets = [set() for _ in range(coloring.n_colors)]
    deliveries = []
    for key in sorted(coloring.representatives):
        v = coloring.representatives[key]
        color = coloring.assignment[key]
        packets[color].add(v.rho)
        deliveries.append(
            Delivery(
                receiver=key[0],
                wanted=key[1],
                delivered=v.rho,
                color=color,
                refinement=conditional_entropy(model, key[1], v.rho),
            )
        )

    transmissions = tuple(
        Transmission(c, tuple(sorted(ps))) for c, ps in enumerate(packets)
    )
    return CodewordPlan(
        B=model.config.B,
        transmissions=transmissions,
        deliveries=tuple(deliveries),
        local=Q.substitutions,
        method=coloring.method,
        n_receivers=Q.n,
    )


class DecodingReport(NamedTuple):
    """Outcome of :func:`simulate_decoding`."""

    success: tuple
    refinements: tuple
    first_failure: object

    @property
    def ok(self):
        return all(self.success)


def simulate_decoding(plan, C, Q, model):
    """Symbolically decodes ``plan`` at every receiver.

    A receiver peels each transmission serving one of its clusters using
    its cache, checks that the packet left over is its wanted packet or a
    packet δ-correlated with it, and finally checks that cached,
    substituted and delivered packets cover its whole requested file.

    Returns
    -------
    DecodingReport
        ``first_failure`` describes the first unpeelable transmission or
        missing packet, or is None.
    """

    B = model.config.B
    first_failure = None
    success, refinements = [], []

    by_receiver = defaultdict(list)
    for d in plan.deliveries:
        by_receiver[d.receiver].append(d)

    def fail(msg):
        nonlocal first_failure
        if first_failure is None:
            first_failure = msg
            logger.warning(f"Decoding failure: {msg}")

    for u, file in enumerate(Q.demand):
        cache = C[u]
        ok = True
        have = {p for p in cache if p.file == file}
        refinement = 0.0

        for s in Q.substitutions[u]:
            if s.substitute not in cache or not model.is_correlated(
                s.wanted, s.substitute
            ):
                fail(f"receiver {u}: bad local substitute for {s.wanted}")
                ok = False
                continue
            have.add(s.wanted)
            refinement += s.refinement

        for d in by_receiver[u]:
            packets = plan.transmissions[d.color].packets
            if d.delivered not in packets:
                fail(f"receiver {u}: color {d.color} lacks {d.delivered}")
                ok = False
                continue
            unknown = [
                p for p in packets if p != d.delivered and p not in cache
            ]
            if unknown:
                fail(
                    f"receiver {u}: color {d.color} unpeelable, "
                    f"{unknown[0]} not cached"
                )
                ok = False
                continue
            if d.delivered != d.wanted and not model.is_correlated(
                d.wanted, d.delivered
            ):
                fail(
                    f"receiver {u}: {d.delivered} is not correlated with "
                    f"{d.wanted}"
                )
                ok = False
                continue
            have.add(d.wanted)
            refinement += d.refinement

        missing = [b for b in range(B) if (file, b) not in have]
        if missing:
            fail(f"receiver {u}: packets {missing} of file {file} missing")
            ok = False

        success.append(ok)
        refinements.append(refinement)

    return DecodingReport(
        success=tuple(success),
        refinements=tuple(refinements),
        first_failure=first_failure,
    )


def brute_force_min_cluster_coloring(H, max_clusters=12, max_vertices=40):
    """Exact minimum cluster coloring by branch and bound over one
    representative per cluster and its color, seeded with the greedy
    :func:`choose_min` solution as incumbent.

    Raises
    ------
    SizeGuardError
        If ``H`` has more than ``max_clusters`` clusters or
        ``max_vertices`` vertices.
    """

    if len(H.clusters) > max_clusters or len(H.vertices) > max_vertices:
        msg = (
            f"Exact cluster coloring limited to {max_clusters} clusters and "
            f"{max_vertices} vertices, got {len(H.clusters)} and "
            f"{len(H.vertices)}"
        )
        logger.critical(msg)
        raise SizeGuardError(msg)

    incumbent = choose_min(H)
    best = {
        "k": incumbent.n_colors,
        "reps": dict(incumbent.representatives),
        "colors": dict(incumbent.assignment),
    }

    # most constrained clusters first
    keys = sorted(H.clusters, key=lambda k: (len(H.cluster(k)), k))
    reps, colors, classes = {}, {}, []

    def search(i):
        k = len(classes)
        if k >= best["k"]:
            return
        if i == len(keys):
            best.update(k=k, reps=dict(reps), colors=dict(colors))
            return
        key = keys[i]
        for v in H.cluster(key):
            for c in range(k + 1):
                if c == k:
                    if k + 1 >= best["k"]:
                        continue
                    classes.append([])
                elif any(H.adjacent(v, w) for w in classes[c]):
                    continue
                classes[c].append(v)
                reps[key], colors[key] = v, c
                search(i + 1)
                classes[c].pop()
                if c == k:
                    classes.pop()
                del reps[key], colors[key]

    search(0)
    return ClusterColoring(
        representatives=best["reps"],
        assignment=best["colors"],
        n_colors=best["k"],
        method="exact",
    )


def brute_force_chromatic_number(H, **kwargs):
    """Chromatic number of the conventional (root-only) conflict graph."""

    return brute_force_min_cluster_coloring(
        H.root_subgraph(), **kwargs
    ).n_colors


COLORINGS = {
    "min": choose_min,
    "gclc1": gclc1,
    "gclc2": gclc2,
    "exact": brute_force_min_cluster_coloring,
}


class DeliveryOutcome(NamedTuple):
    demand: object
    graph: object
    coloring: ClusterColoring
    plan: CodewordPlan

    @property
    def rate(self):
        return self.plan.rate


def deliver(caches, f, model, method="min"):
    """Runs the delivery phase of one realization: packet-level demand,
    clustered conflict graph, cluster coloring and codeword.

    Parameters
    ----------
    caches : corrcache.caching.CacheConfiguration
    f : sequence of int
        Requested file of every receiver.
    model : corrcache.library.CorrelationModel
    method : str, optional
        One of ``"min"``, ``"gclc1"``, ``"gclc2"`` or ``"exact"``.

    Returns
    -------
    DeliveryOutcome
    """

    if method not in COLORINGS:
        msg = f"Unknown coloring method {method!r}, use {list(COLORINGS)}"
        logger.critical(msg)
        raise ValueError(msg)
    Q = packet_demand(f, caches, model)
    H = build_graph(caches, Q, model)
    coloring = COLORINGS[method](H)
    plan = build_codeword(coloring, H, Q, model)
    return DeliveryOutcome(Q, H, coloring, plan)
