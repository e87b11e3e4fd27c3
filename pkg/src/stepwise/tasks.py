"""Task definitions and the built-in desk-scale task profiles."""
from __future__ import annotations

from dataclasses import dataclass, field

BACKGROUND = 0


@dataclass(frozen=True)
class TaskDefinition:
    """A task with steps numbered 1..num_steps; class 0 is background.

    ``order`` is the canonical sequence of step ids. It defaults to 1..n.
    """

    code: str
    num_steps: int
    order: tuple[int, ...] = ()
    step_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.num_steps < 1:
            raise ValueError("a task needs at least one step")
        if not self.order:
            object.__setattr__(self, "order", tuple(range(1, self.num_steps + 1)))
        if sorted(self.order) != list(range(1, self.num_steps + 1)):
            raise ValueError(f"order {self.order} is not a permutation of 1..{self.num_steps}")

    @property
    def num_classes(self) -> int:
        return self.num_steps + 1

    def predecessors(self, step: int) -> tuple[int, ...]:
        i = self.order.index(step)
        return self.order[:i]

    def successors(self, step: int) -> tuple[int, ...]:
        i = self.order.index(step)
        return self.order[i + 1 :]


@dataclass(frozen=True)
class TaskProfile:
    """Summary statistics for one task, used to drive the synthetic generator."""

    code: str
    name: str
    num_steps: int
    mean_video_duration: float
    mean_step_duration: float
    min_step_duration: float
    overlap_fraction: float
    order: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if self.min_step_duration > self.mean_step_duration:
            raise ValueError("min step duration exceeds mean step duration")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError("overlap fraction must be in [0, 1]")
        if self.num_steps < 1:
            raise ValueError("a profile needs at least one step")

    @property
    def task(self) -> TaskDefinition:
        return TaskDefinition(self.code, self.num_steps, self.order)


PROFILES: dict[str, TaskProfile] = {
    p.code: p
    for p in [
        TaskProfile("A8", "NPA Tube", 5, 45.12, 5.12, 0.81, 0.000),
        TaskProfile("M2", "Apply Tourniquet", 8, 51.31, 4.01, 0.37, 0.163),
        TaskProfile("M3", "Pressure Dressing", 5, 82.88, 15.98, 0.43, 0.151),
        TaskProfile("M4", "Wound Packing", 3, 98.97, 32.15, 2.41, 0.296),
        TaskProfile("M5", "X-Stat", 5, 41.37, 7.55, 0.65, 0.000),
        TaskProfile("R16", "Ventilate (BVM)", 5, 41.54, 6.85, 0.43, 0.011),
        TaskProfile("R18", "Apply Chest Seal", 5, 44.02, 8.55, 0.13, 0.148),
        TaskProfile("R19", "Needle Chest Decompression", 6, 81.15, 9.72, 0.43, 0.047),
    ]
}
