"""Control/observation geometry and validation of the standing hypotheses.

Five named intervals drive everything: the leader's control region O, the
follower control regions O_1, O_2, and the follower observation regions
O_{1,d}, O_{2,d}.  Auxiliary sets (an inner region strictly inside O and one
or two small omega intervals) support the weight construction.  Exactly one
of three geometric cases must hold, recorded in ``case_tag``:

* ``SameObservation``:  O_{1,d} = O_{2,d} (one omega_0 inside O_d ∩ inner).
* ``DisjointOverlap``:  the observation regions meet O in different sets and
  each omega_i avoids the other follower's observation region.
* ``NestedOverlap``:    one omega sits inside both observation regions while
  the other avoids the first observation region.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .grid import GridError, Interval, SpaceTimeGrid

SAME_OBSERVATION = "SameObservation"
DISJOINT_OVERLAP = "DisjointOverlap"
NESTED_OVERLAP = "NestedOverlap"
CASE_TAGS = (SAME_OBSERVATION, DISJOINT_OVERLAP, NESTED_OVERLAP)


class GeometryError(ValueError):
    """A standing geometric hypothesis fails."""


@dataclass(frozen=True)
class ControlGeometry:
    leader_domain: Interval
    follower_domains: tuple[Interval, Interval]
    observation_domains: tuple[Interval, Interval]
    aux_inner: Interval
    aux_omega: tuple[Interval, ...]
    case_tag: str

    def __post_init__(self):
        if self.case_tag not in CASE_TAGS:
            raise GeometryError(f"unknown case_tag {self.case_tag!r}")
        n_omega = 1 if self.case_tag == SAME_OBSERVATION else 2
        if len(self.aux_omega) != n_omega:
            raise GeometryError(
                f"case {self.case_tag} needs {n_omega} omega interval(s), got {len(self.aux_omega)}"
            )


@dataclass
class ConditionCheck:
    name: str
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    checks: list[ConditionCheck] = field(default_factory=list)
    case_tag: str = ""
    measures: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed: bool, detail: str = ""):
        self.checks.append(ConditionCheck(name, passed, detail))

    def rows(self) -> list[tuple[str, str, str]]:
        return [(c.name, "pass" if c.passed else "FAIL", c.detail) for c in self.checks]


def _overlap_len(a: Interval, b: Interval) -> float:
    cap = a.intersect(b)
    return cap.length if cap is not None else 0.0


def validate_geometry(geom: ControlGeometry, grid: SpaceTimeGrid) -> ValidationReport:
    """Check every standing hypothesis on the snapped node sets.

    Returns a report listing each condition with pass/fail and the measured
    overlap lengths.  Set relations are decided on node masks, so the check
    is deterministic and idempotent for snapped intervals.
    """
    rep = ValidationReport(case_tag=geom.case_tag)
    O = geom.leader_domain
    O1d, O2d = geom.observation_domains
    inner = geom.aux_inner

    for itv, name in [(O, "leader"), (inner, "aux_inner")] + [
        (d, f"follower_{i+1}") for i, d in enumerate(geom.follower_domains)
    ] + [(d, f"observation_{i+1}") for i, d in enumerate(geom.observation_domains)] + [
        (w, f"omega_{i}") for i, w in enumerate(geom.aux_omega)
    ]:
        rep.add(f"nonempty[{name}]", itv.nnodes >= 1, f"{itv.nnodes} interior nodes")

    # observation regions must meet the leader's region
    for i, Od in enumerate((O1d, O2d)):
        ov = _overlap_len(Od, O)
        rep.measures[f"overlap_obs{i+1}_leader"] = ov
        rep.add(f"obs{i+1}_meets_leader", ov > 0.0, f"overlap length {ov:.6g}")

    # exactly one of: equal observation sets, or different traces on O
    same = O1d.same_nodes(O2d)
    cap1, cap2 = O1d.intersect(O), O2d.intersect(O)
    traces_differ = not (
        cap1 is not None and cap2 is not None and cap1.same_nodes(cap2)
    )
    rep.add(
        "equal_obs_or_distinct_traces",
        same or traces_differ,
        f"equal_sets={same}, distinct_traces_on_leader={traces_differ}",
    )

    if same:
        rep.add("case_tag_consistent", geom.case_tag == SAME_OBSERVATION,
                f"declared {geom.case_tag}, observation sets are node-equal")
    else:
        rep.add("case_tag_consistent", geom.case_tag in (DISJOINT_OVERLAP, NESTED_OVERLAP),
                f"declared {geom.case_tag}, observation sets differ")

    # auxiliary inner set: strictly inside O, meets both observation regions
    rep.add("inner_strictly_inside_leader", inner.strictly_inside(O),
            f"inner=({inner.lo:.6g},{inner.hi:.6g}), leader=({O.lo:.6g},{O.hi:.6g})")
    for i, Od in enumerate((O1d, O2d)):
        ov = _overlap_len(inner, Od)
        rep.measures[f"overlap_inner_obs{i+1}"] = ov
        rep.add(f"inner_meets_obs{i+1}", ov > 0.0, f"overlap length {ov:.6g}")

    # case-specific omega conditions
    if geom.case_tag == SAME_OBSERVATION:
        w0 = geom.aux_omega[0]
        host = O1d.intersect(inner)
        ok = host is not None and w0.strictly_inside(host)
        rep.add("omega0_strictly_inside_obs_and_inner", ok,
                "omega0 in interior of O_d ∩ inner" if ok else "violated")
    else:
        w1, w2 = geom.aux_omega
        for i, (w, Od) in enumerate(((w1, O1d), (w2, O2d)), start=1):
            host = Od.intersect(inner)
            ok = host is not None and w.strictly_inside(host)
            rep.add(f"omega{i}_strictly_inside_obs{i}_and_inner", ok,
                    "ok" if ok else "violated")
        if geom.case_tag == DISJOINT_OVERLAP:
            rep.add("omega1_avoids_obs2", not w1.intersects(O2d),
                    f"overlap {_overlap_len(w1, O2d):.6g}")
            rep.add("omega2_avoids_obs1", not w2.intersects(O1d),
                    f"overlap {_overlap_len(w2, O1d):.6g}")
        else:  # NestedOverlap, with (i, j) = (1, 2) or (2, 1)
            nested_12 = w1.contained_in(O2d) and not w2.intersects(O1d)
            nested_21 = w2.contained_in(O1d) and not w1.intersects(O2d)
            rep.add("omega_nesting", nested_12 or nested_21,
                    f"(1 in obs2, 2 avoids obs1)={nested_12}, (2 in obs1, 1 avoids obs2)={nested_21}")

    for i, itv in enumerate(geom.follower_domains):
        rep.measures[f"measure_follower_{i+1}"] = itv.length
    rep.measures["measure_leader"] = O.length
    return rep


def require_valid(geom: ControlGeometry, grid: SpaceTimeGrid) -> ValidationReport:
    rep = validate_geometry(geom, grid)
    if not rep.ok:
        failed = "; ".join(f"{c.name}: {c.detail}" for c in rep.checks if not c.passed)
        raise GeometryError(f"geometry validation failed: {failed}")
    return rep


def build_geometry(grid: SpaceTimeGrid, case_tag: str, leader, followers, observations,
                   aux_inner=None, aux_omega=None) -> ControlGeometry:
    """Assemble a ControlGeometry from endpoint pairs, deriving aux sets when omitted.

    ``leader``/``followers``/``observations`` are (lo, hi) pairs (two pairs for
    the latter two).  Derived defaults: the inner set shrinks O by one cell on
    each side; each omega is the middle third of the relevant intersection.
    """
    O = Interval.snapped(*leader, grid)
    O1, O2 = (Interval.snapped(*f, grid) for f in followers)
    O1d, O2d = (Interval.snapped(*o, grid) for o in observations)

    if aux_inner is not None:
        inner = Interval.snapped(*aux_inner, grid)
    else:
        if O.ihi - O.ilo < 4:
            raise GeometryError("leader domain too thin to derive an inner set")
        inner = Interval((O.ilo + 1) * grid.dx, (O.ihi - 1) * grid.dx,
                         O.ilo + 1, O.ihi - 1, nnodes=O.ihi - O.ilo - 3)

    def middle_third(host: Interval) -> Interval:
        span = host.ihi - host.ilo
        if span < 3:
            raise GeometryError("intersection too thin to derive an omega interval")
        a = host.ilo + max(1, span // 3)
        b = host.ihi - max(1, span // 3)
        if b <= a:
            a, b = host.ilo + 1, host.ihi - 1
        return Interval(a * grid.dx, b * grid.dx, a, b, nnodes=b - a - 1)

    if aux_omega is not None:
        omegas = tuple(Interval.snapped(*w, grid) for w in aux_omega)
    elif case_tag == SAME_OBSERVATION:
        host = O1d.intersect(inner)
        if host is None:
            raise GeometryError("observation region does not meet the inner set")
        omegas = (middle_third(host),)
    else:
        hosts = [Od.intersect(inner) for Od in (O1d, O2d)]
        if any(h is None for h in hosts):
            raise GeometryError("an observation region does not meet the inner set")
        omegas = tuple(middle_third(h) for h in hosts)

    return ControlGeometry(
        leader_domain=O,
        follower_domains=(O1, O2),
        observation_domains=(O1d, O2d),
        aux_inner=inner,
        aux_omega=omegas,
        case_tag=case_tag,
    )
