"""Three-factor Hebbian rule, reinforcement schedule and weight-copy bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from synfire_bp import kernels

FORWARD = "forward"
FORWARD_COPY = "forward-copy"
TRANSPOSE = "transpose"
NEGATED_TRANSPOSE = "negated-transpose"
ROLES = (FORWARD, FORWARD_COPY, TRANSPOSE, NEGATED_TRANSPOSE)


class SyncViolation(RuntimeError):
    """A weight copy drifted away from its forward matrix."""

    def __init__(self, group: str, member: str, index: tuple[int, int], amount: int):
        self.group = group
        self.member = member
        self.index = index
        self.amount = amount
        super().__init__(
            f"sync group {group!r}: member {member!r} differs from forward at "
            f"{index} by {amount}"
        )


@dataclass(frozen=True)
class PlasticRule:
    """Integer Hebbian rule ``dw = (2r - 1) * delta * pre * post`` with saturation."""

    potentiation_delta: int = 2
    depression_delta: int = -2
    clip_lo: int = -256
    clip_hi: int = 254
    step_granularity: int = 2

    def __post_init__(self):
        g = self.step_granularity
        if g <= 0:
            raise ValueError("step_granularity must be positive")
        for name in ("potentiation_delta", "depression_delta", "clip_lo", "clip_hi"):
            if getattr(self, name) % g:
                raise ValueError(f"{name}={getattr(self, name)} is not a multiple of {g}")
        if self.clip_lo > self.clip_hi:
            raise ValueError("clip_lo > clip_hi")

    def delta(self, r: int) -> int:
        return self.potentiation_delta if r else self.depression_delta

    def sign_closed(self) -> PlasticRule:
        """Same rule restricted to a range that is closed under negation.

        A negated copy can only track its forward matrix exactly if ``-w`` is
        representable for every reachable ``w``.
        """
        bound = min(-self.clip_lo, self.clip_hi)
        return PlasticRule(
            self.potentiation_delta, self.depression_delta, -bound, bound, self.step_granularity
        )


@dataclass(frozen=True)
class ReinforcementSchedule:
    period: int = 12
    active_steps: frozenset[int] = frozenset({5, 7})

    def __post_init__(self):
        object.__setattr__(self, "active_steps", frozenset(self.active_steps))
        if any(not 1 <= s <= self.period for s in self.active_steps):
            raise ValueError(f"active steps {sorted(self.active_steps)} outside 1..{self.period}")

    def frame_step(self, t: int) -> int:
        if t < 1:
            raise ValueError(f"global step must be >= 1, got {t}")
        return (t - 1) % self.period + 1

    def __call__(self, t: int) -> int:
        return int(self.frame_step(t) in self.active_steps)


def reinforcement(t: int, schedule: ReinforcementSchedule | None = None) -> int:
    """Global third factor at global step ``t`` (1 in the potentiation steps)."""
    return (schedule or ReinforcementSchedule())(t)


def apply_rule(pre, post, r: int, weights: np.ndarray, rule: PlasticRule | None = None) -> np.ndarray:
    """Return the saturated weight change produced by one step of coincidences.

    ``pre`` and ``post`` are spike index arrays of the source and target layer
    at the same step. ``weights`` has shape (n_post, n_pre) and is not modified.
    """
    rule = rule or PlasticRule()
    new = np.array(weights, copy=True)
    kernels.hebbian_update(
        new, _as_index(pre), _as_index(post), rule.delta(r), rule.clip_lo, rule.clip_hi
    )
    return new.astype(np.int32) - np.asarray(weights, dtype=np.int32)


def _as_index(a) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(a, dtype=np.int64).ravel())


@dataclass
class SyncGroup:
    """Plastic synapse groups that all hold one logical matrix.

    ``members`` maps synapse-group name to role. Forward roles store the matrix
    as is, transpose roles store its transpose, negated-transpose its negation.
    """

    name: str
    members: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for member, role in self.members.items():
            if role not in ROLES:
                raise ValueError(f"unknown role {role!r} for {member!r}")
        if sum(role == FORWARD for role in self.members.values()) != 1:
            raise ValueError(f"sync group {self.name!r} needs exactly one forward member")

    @property
    def forward(self) -> str:
        return next(m for m, r in self.members.items() if r == FORWARD)

    def canonical(self, member: str, weights: np.ndarray) -> np.ndarray:
        """Map a member's stored matrix back into forward orientation."""
        role = self.members[member]
        w = np.asarray(weights, dtype=np.int32)
        if role == TRANSPOSE:
            return w.T
        if role == NEGATED_TRANSPOSE:
            return -w.T
        return w


def verify_sync(groups, weights_of, raise_on_error: bool = True) -> dict[str, int]:
    """Compare every copy against its forward matrix.

    ``weights_of`` maps synapse-group name to its weight matrix. Returns the
    maximum absolute discrepancy per sync group; with ``raise_on_error`` the
    first nonzero discrepancy raises :class:`SyncViolation`.
    """
    report = {}
    for group in groups:
        ref = group.canonical(group.forward, weights_of[group.forward])
        worst = 0
        for member in group.members:
            if member == group.forward:
                continue
            diff = group.canonical(member, weights_of[member]) - ref
            if diff.shape != ref.shape:
                raise SyncViolation(group.name, member, (-1, -1), -1)
            err = int(np.abs(diff).max()) if diff.size else 0
            if err and raise_on_error:
                idx = np.unravel_index(int(np.abs(diff).argmax()), diff.shape)
                raise SyncViolation(group.name, member, tuple(int(i) for i in idx), err)
            worst = max(worst, err)
        report[group.name] = worst
    return report
