import random

from replisim.workflow import TaskSpec, augment_and_validate


def random_dag(rng: random.Random, n_tasks: int, max_minutes: int = 60, p_edge: float = 0.3):
    """Random DAG on tasks t0..t{n-1}; edges only go from lower to higher index."""
    specs = []
    for i in range(n_tasks):
        preds = frozenset(f"t{j}" for j in range(i) if rng.random() < p_edge)
        est = rng.randint(0, max_minutes) * 60
        act = rng.randint(0, max_minutes) * 60
        specs.append(TaskSpec(f"t{i}", est, act, preds))
    return augment_and_validate(specs, f"rand{n_tasks}")


def all_paths(workflow, src):
    """Every path from src to a sink, by explicit DFS (oracle, no memoization)."""
    succ = workflow.tasks[src].successors
    if not succ:
        return [[src]]
    return [[src] + rest for c in sorted(succ) for rest in all_paths(workflow, c)]


def brute_longest(workflow, src, source="actual"):
    return max(sum(workflow.tasks[t].duration(source) for t in path)
               for path in all_paths(workflow, src))
