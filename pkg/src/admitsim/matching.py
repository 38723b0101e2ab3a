"""Two-quota deferred acceptance for program admission.

Each program ranks applicants two ways: quota 1 by GPA (higher better) and
quota 2 by a human-assigned rank (lower better), available only for
applicants who opted in at that program.  Students propose down their
preference lists; at each program a proposal tries the GPA quota first and
falls back to the human quota, so a quota-2 admit never needs to clear the
GPA cutoff.  Ties are broken by applicant order, which keeps every ranking
strict and the outcome deterministic.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping

__all__ = [
    "Applicant",
    "ProgramSeats",
    "MatchInstance",
    "Assignment",
    "MatchOutcome",
    "david_q_match",
    "check_stability",
    "strategy_proofness_probe",
    "preference_reports",
]

QUOTA_GPA = "gpa"
QUOTA_HUMAN = "human"


@dataclass(frozen=True)
class Applicant:
    id: str
    gpa: float
    prefs: tuple[str, ...]
    quota2_ranks: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class ProgramSeats:
    program_id: str
    seats_q1: int
    seats_q2: int = 0

    def __post_init__(self) -> None:
        if self.seats_q1 < 0 or self.seats_q2 < 0:
            raise ValueError("seat counts must be non-negative")
        if self.seats_q1 + self.seats_q2 < 1:
            raise ValueError(f"program {self.program_id} has no seats")


@dataclass
class MatchInstance:
    applicants: list[Applicant]
    programs: list[ProgramSeats]

    def validate(self) -> None:
        program_ids = {p.program_id for p in self.programs}
        if len(program_ids) != len(self.programs):
            raise ValueError("duplicate program ids")
        seen: set[str] = set()
        for a in self.applicants:
            if a.id in seen:
                raise ValueError(f"duplicate applicant id {a.id!r}")
            seen.add(a.id)
            if len(set(a.prefs)) != len(a.prefs):
                raise ValueError(f"applicant {a.id!r} lists a program twice")
            for p in a.prefs:
                if p not in program_ids:
                    raise ValueError(f"applicant {a.id!r} lists unknown program {p!r}")
            for p in a.quota2_ranks:
                if p not in program_ids:
                    raise ValueError(f"applicant {a.id!r} has a quota-2 rank at unknown program {p!r}")


@dataclass(frozen=True)
class Assignment:
    program_id: str
    quota: str


@dataclass
class MatchOutcome:
    assigned: dict[str, Assignment]
    admitted: dict[str, dict[str, list[str]]]
    unassigned: list[str]


def _q1_badness(gpa: float, idx: int) -> tuple[float, int]:
    # min-heap root = worst holder: lowest gpa, then highest applicant index
    return (gpa, -idx)


def _q2_badness(rank: int, idx: int) -> tuple[int, int]:
    return (-rank, -idx)


def david_q_match(instance: MatchInstance) -> MatchOutcome:
    """Student-proposing deferred acceptance over (program, quota) slots.

    Equivalent to classic DA on an expanded market where every student
    prefers a program's GPA slot to its human slot, so the usual stability
    and strategy-proofness guarantees carry over.
    """
    instance.validate()
    seats = {p.program_id: p for p in instance.programs}

    expanded: list[list[tuple[str, str]]] = []
    for a in instance.applicants:
        slots: list[tuple[str, str]] = []
        for pid in a.prefs:
            prog = seats[pid]
            if prog.seats_q1 > 0:
                slots.append((pid, QUOTA_GPA))
            if prog.seats_q2 > 0 and pid in a.quota2_ranks:
                slots.append((pid, QUOTA_HUMAN))
        expanded.append(slots)

    holds: dict[tuple[str, str], list[tuple[tuple, int]]] = {}
    capacity: dict[tuple[str, str], int] = {}
    for prog in instance.programs:
        capacity[(prog.program_id, QUOTA_GPA)] = prog.seats_q1
        capacity[(prog.program_id, QUOTA_HUMAN)] = prog.seats_q2
        holds[(prog.program_id, QUOTA_GPA)] = []
        holds[(prog.program_id, QUOTA_HUMAN)] = []

    def badness(idx: int, slot: tuple[str, str]) -> tuple:
        pid, quota = slot
        a = instance.applicants[idx]
        if quota == QUOTA_GPA:
            return _q1_badness(a.gpa, idx)
        return _q2_badness(a.quota2_ranks[pid], idx)

    next_slot = [0] * len(instance.applicants)
    held_at: list[tuple[str, str] | None] = [None] * len(instance.applicants)
    queue: deque[int] = deque(range(len(instance.applicants)))

    while queue:
        s = queue.popleft()
        while next_slot[s] < len(expanded[s]):
            slot = expanded[s][next_slot[s]]
            next_slot[s] += 1
            heap = holds[slot]
            key = badness(s, slot)
            if len(heap) < capacity[slot]:
                heapq.heappush(heap, (key, s))
                held_at[s] = slot
                break
            if heap and key > heap[0][0]:
                _, displaced = heapq.heappushpop(heap, (key, s))
                held_at[s] = slot
                held_at[displaced] = None
                queue.append(displaced)
                break
        # exhausted preference list: stays unassigned

    assigned: dict[str, Assignment] = {}
    admitted: dict[str, dict[str, list[str]]] = {
        p.program_id: {QUOTA_GPA: [], QUOTA_HUMAN: []} for p in instance.programs
    }
    unassigned: list[str] = []
    for idx, a in enumerate(instance.applicants):
        slot = held_at[idx]
        if slot is None:
            unassigned.append(a.id)
        else:
            assigned[a.id] = Assignment(slot[0], slot[1])
            admitted[slot[0]][slot[1]].append(a.id)
    return MatchOutcome(assigned=assigned, admitted=admitted, unassigned=unassigned)


def check_stability(instance: MatchInstance, outcome: MatchOutcome) -> list[tuple[str, str, str]]:
    """Return all blocking pairs (student, program, quota).

    A pair blocks when the student strictly prefers the program to their
    assignment and either a seat is empty or a seated student ranks below
    them in a quota they are eligible for.
    """
    instance.validate()
    index = {a.id: i for i, a in enumerate(instance.applicants)}
    seats = {p.program_id: p for p in instance.programs}

    worst: dict[tuple[str, str], tuple] = {}
    counts: dict[tuple[str, str], int] = {}
    for pid, by_quota in outcome.admitted.items():
        for quota, ids in by_quota.items():
            counts[(pid, quota)] = len(ids)
            keys = []
            for sid in ids:
                i = index[sid]
                a = instance.applicants[i]
                if quota == QUOTA_GPA:
                    keys.append(_q1_badness(a.gpa, i))
                else:
                    keys.append(_q2_badness(a.quota2_ranks[pid], i))
            if keys:
                worst[(pid, quota)] = min(keys)

    blocking: list[tuple[str, str, str]] = []
    for i, a in enumerate(instance.applicants):
        assignment = outcome.assigned.get(a.id)
        if assignment is None:
            preferred = a.prefs
        else:
            preferred = a.prefs[: a.prefs.index(assignment.program_id)]
        for pid in preferred:
            prog = seats[pid]
            if prog.seats_q1 > 0:
                key = _q1_badness(a.gpa, i)
                if counts[(pid, QUOTA_GPA)] < prog.seats_q1 or key > worst[(pid, QUOTA_GPA)]:
                    blocking.append((a.id, pid, QUOTA_GPA))
            if prog.seats_q2 > 0 and pid in a.quota2_ranks:
                key = _q2_badness(a.quota2_ranks[pid], i)
                if counts[(pid, QUOTA_HUMAN)] < prog.seats_q2 or key > worst[(pid, QUOTA_HUMAN)]:
                    blocking.append((a.id, pid, QUOTA_HUMAN))
    return blocking


def preference_reports(program_ids: Iterable[str], max_len: int | None = None) -> list[tuple[str, ...]]:
    """All strict preference lists over subsets of ``program_ids``."""
    pids = list(program_ids)
    limit = len(pids) if max_len is None else min(max_len, len(pids))
    reports: list[tuple[str, ...]] = [()]
    for r in range(1, limit + 1):
        for combo in itertools.combinations(pids, r):
            reports.extend(itertools.permutations(combo))
    return reports


def _true_utility(a: Applicant, assignment: Assignment | None) -> int:
    # 0 = top choice; len(prefs) = unassigned or assigned off-list
    if assignment is None or assignment.program_id not in a.prefs:
        return len(a.prefs)
    return a.prefs.index(assignment.program_id)


def strategy_proofness_probe(instances: Iterable[MatchInstance]) -> list[dict]:
    """Search for profitable misreports under truthful play by everyone else.

    For every instance and every applicant, re-runs the match under every
    alternative preference report and records cases where the applicant ends
    up strictly better off by their true preferences.  Deferred acceptance
    should make this list empty.
    """
    violations: list[dict] = []
    for n_inst, instance in enumerate(instances):
        truth = david_q_match(instance)
        all_pids = [p.program_id for p in instance.programs]
        reports = preference_reports(all_pids)
        for i, a in enumerate(instance.applicants):
            base_utility = _true_utility(a, truth.assigned.get(a.id))
            for report in reports:
                if report == a.prefs:
                    continue
                lied = Applicant(a.id, a.gpa, report, a.quota2_ranks)
                applicants = list(instance.applicants)
                applicants[i] = lied
                outcome = david_q_match(MatchInstance(applicants, instance.programs))
                utility = _true_utility(a, outcome.assigned.get(a.id))
                if utility < base_utility:
                    violations.append(
                        {
                            "instance": n_inst,
                            "student": a.id,
                            "report": report,
                            "true_assignment": truth.assigned.get(a.id),
                            "gamed_assignment": outcome.assigned.get(a.id),
                        }
                    )
    return violations
