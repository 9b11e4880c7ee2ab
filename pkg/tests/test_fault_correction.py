"""End-to-end: injected faults are caught by reflection but not by plain acting."""
from src.rebact_harness.agent.runner import run_episode
from src.rebact_harness.agent.trajectory import TrajectoryLogger
from src.rebact_harness.backends.faulty import FaultyBackend
from src.rebact_harness.backends.planner import PlannerBackend
from src.rebact_harness.config import AgentConfig
from src.rebact_harness.env.craft_env import CraftEnvironment
from src.rebact_harness.env.tasks import generate_tasks, synthesize_universe


def faulty_planner(task, p, seed=0):
    environment = CraftEnvironment(task)
    backend = FaultyBackend(PlannerBackend(task, environment), p=p, seed=seed, task=task)
    return environment, backend


def test_reflection_recovers_from_every_fault(beehive_task):
    environment, backend = faulty_planner(beehive_task, p=1.0)
    log = TrajectoryLogger()

    result = run_episode(AgentConfig(budget=20), beehive_task, backend, call_log=log, environment=environment)

    assert result.success
    assert (result.steps, result.modifications) == (6, 3)
    executed = [record.exec["action"] for record in log.records]
    assert executed == [
        "get 1 beehive", "get 6 oak planks",
        "get 1 beehive", "get 3 honeycomb",
        "get 1 beehive", "craft 1 beehive using 6 oak planks, 3 honeycomb",
    ]
    assert all(fault.corrected for fault in backend.faults)


def test_plain_acting_cannot_recover(beehive_task):
    environment, backend = faulty_planner(beehive_task, p=1.0)

    result = run_episode(AgentConfig(policy="react", budget=10), beehive_task, backend,
                         environment=environment)

    assert not result.success
    assert result.termination == "budget_exhausted"
    assert result.steps == 10
    assert len(backend.faults) == 10


def test_without_faults_both_policies_succeed(torch_task):
    for policy in ("rebact", "react"):
        environment, backend = faulty_planner(torch_task, p=0.0)

        result = run_episode(AgentConfig(policy=policy), torch_task, backend, environment=environment)

        assert result.success
        assert result.modifications == 0


def test_reflection_recovers_across_generated_tasks():
    tasks = generate_tasks(synthesize_universe(seed=3), depth=2, n=50, seed=0)
    faulted = 0

    for i, task in enumerate(tasks):
        environment, backend = faulty_planner(task, p=0.3, seed=i)

        result = run_episode(AgentConfig(budget=60), task, backend, environment=environment)

        assert result.success, task.id
        if backend.faults:
            faulted += 1
            assert result.modifications > 0, task.id
            assert all(fault.corrected for fault in backend.faults), task.id
    assert faulted > 0
