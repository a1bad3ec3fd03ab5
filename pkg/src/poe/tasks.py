"""Class universe, primitive tasks, and composite queries.

A universe is an ordered class list partitioned into named primitive tasks;
a composite query names an ordered subset of those tasks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence


class TaskError(ValueError):
    """Invalid task universe or query."""


@dataclass(frozen=True)
class PrimitiveTask:
    id: str
    name: str
    class_indices: tuple

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.class_indices)
        object.__setattr__(self, "class_indices", idx)
        if len(idx) == 0:
            raise TaskError(f"task {self.id!r} has no classes")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise TaskError(f"task {self.id!r}: class indices must be strictly increasing")
        if idx[0] < 0:
            raise TaskError(f"task {self.id!r}: negative class index")

    def __len__(self) -> int:
        return len(self.class_indices)


@dataclass(frozen=True)
class TaskUniverse:
    classes: tuple  # ordered class names
    primitives: tuple  # PrimitiveTask partition of the classes

    def __post_init__(self) -> None:
        object.__setattr__(self, "classes", tuple(str(c) for c in self.classes))
        object.__setattr__(self, "primitives", tuple(self.primitives))
        n = len(self.classes)
        seen: set = set()
        ids: set = set()
        for t in self.primitives:
            if t.id in ids:
                raise TaskError(f"duplicate task id {t.id!r}")
            ids.add(t.id)
            for i in t.class_indices:
                if i >= n:
                    raise TaskError(f"task {t.id!r}: class index {i} out of range")
                if i in seen:
                    raise TaskError(f"class index {i} appears in multiple tasks")
                seen.add(i)
        if seen != set(range(n)):
            raise TaskError("primitive tasks must cover every class exactly once")

    def task(self, task_id: str) -> PrimitiveTask:
        for t in self.primitives:
            if t.id == task_id:
                return t
        raise TaskError(f"unknown task id {task_id!r}")

    def task_ids(self) -> list:
        return [t.id for t in self.primitives]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "primitives": [
                {"id": t.id, "name": t.name, "class_indices": list(t.class_indices)}
                for t in self.primitives
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskUniverse":
        try:
            prims = tuple(
                PrimitiveTask(str(p["id"]), str(p.get("name", p["id"])), tuple(p["class_indices"]))
                for p in d["primitives"]
            )
            return cls(tuple(d["classes"]), prims)
        except (KeyError, TypeError) as e:
            raise TaskError(f"malformed task universe: {e}") from e


def load_tasks_file(path: str) -> TaskUniverse:
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise TaskError(f"tasks file is not valid JSON: {e}") from e
    return TaskUniverse.from_dict(data)


def save_tasks_file(universe: TaskUniverse, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(universe.to_dict(), f, indent=2)


@dataclass(frozen=True)
class CompositeQuery:
    """Ordered selection of distinct primitive-task ids."""

    task_ids: tuple

    def __post_init__(self) -> None:
        ids = tuple(str(t) for t in self.task_ids)
        object.__setattr__(self, "task_ids", ids)
        if len(ids) == 0:
            raise TaskError("composite query must name at least one task")
        if len(set(ids)) != len(ids):
            raise TaskError("composite query contains duplicate task ids")

    @property
    def n(self) -> int:
        return len(self.task_ids)

    def union_indices(self, universe: TaskUniverse) -> list:
        """Global class indices of the union, in query branch order."""
        out: list = []
        for tid in self.task_ids:
            out.extend(universe.task(tid).class_indices)
        if len(set(out)) != len(out):
            raise TaskError("queried tasks share classes; pool is corrupt")
        return out


def union_task(universe: TaskUniverse, query: CompositeQuery, task_id: str = "") -> PrimitiveTask:
    """The query's union as a single pseudo-task (for jointly trained baselines)."""
    idx = sorted(query.union_indices(universe))
    return PrimitiveTask(task_id or "+".join(query.task_ids), "union", tuple(idx))
