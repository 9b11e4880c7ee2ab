import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .agent.runner import EpisodeRunner
from .agent.trajectory import TrajectoryLogger
from .backends.factory import BackendFactory
from .config import EpisodeResult, RunConfig, Summary
from .env.craft_env import CraftEnvironment, CraftTask
from .env.tasks import load_tasks
from .errors import BackendError, ConfigError, InvalidTask
from .metrics.report import aggregate, read_results, read_trajectory_log, recount, render_summary, verify_results

logger = logging.getLogger(__name__)

RESULTS_FILE = "results.jsonl"
LOG_DIR = "logs"
RUN_CONFIG_FILE = "run_config.json"


class EvaluationOrchestrator:
    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = Path(config.out)
        self.runner = EpisodeRunner(config.agent)
        self.backends = BackendFactory(config.backend)
        self.backends.prepare()
        self.failed_episodes: List[str] = []

    def load_tasks(self) -> List[CraftTask]:
        """Load every task file named in the config, keeping file order."""
        if not self.config.tasks:
            raise ConfigError("no task files given")
        tasks: List[CraftTask] = []
        for path in self.config.tasks:
            if not Path(path).exists():
                raise ConfigError(f"Task file not found: {path}")
            try:
                tasks.extend(load_tasks(Path(path)))
            except InvalidTask as e:
                raise ConfigError(str(e)) from e

        seen = set()
        for task in tasks:
            if task.id in seen:
                raise ConfigError(f"Duplicate task id '{task.id}'")
            seen.add(task.id)
        return tasks

    def run(self) -> Tuple[List[EpisodeResult], Summary]:
        """Run every task, write the output directory and check it."""
        tasks = self.load_tasks()
        logger.info(f"Starting {self.config.method_label} run over {len(tasks)} tasks with {self.config.jobs} jobs")

        (self.out_dir / LOG_DIR).mkdir(parents=True, exist_ok=True)
        (self.out_dir / RUN_CONFIG_FILE).write_text(self.config.model_dump_json(indent=2) + "\n", encoding="utf-8")

        try:
            results = self._run_concurrent_episodes(tasks)
        finally:
            self.backends.close()

        with open(self.out_dir / RESULTS_FILE, "w", encoding="utf-8") as f:
            for result in results:
                f.write(result.model_dump_json() + "\n")

        summary = verify_run(self.out_dir, results)
        table, csv_text = render_summary([summary])
        (self.out_dir / "summary.txt").write_text(table, encoding="utf-8")
        (self.out_dir / "summary.csv").write_text(csv_text, encoding="utf-8")

        logger.info(f"Run completed. {len(results)} episodes written to {self.out_dir}")
        return results, summary

    def _run_concurrent_episodes(self, tasks: List[CraftTask]) -> List[EpisodeResult]:
        """Run episodes concurrently; results come back in task order."""
        results: Dict[str, EpisodeResult] = {}

        with ThreadPoolExecutor(max_workers=self.config.jobs) as executor:
            future_to_task = {executor.submit(self.run_task, task): task for task in tasks}

            for future in as_completed(future_to_task):
                task = future_to_task[future]
                try:
                    results[task.id] = future.result()
                    logger.info(f"Completed episode for {task.id}")
                except Exception as e:
                    self.failed_episodes.append(task.id)
                    logger.error(f"Error running episode for {task.id}: {e}")

        return [results[task.id] for task in tasks if task.id in results]

    def run_task(self, task: CraftTask) -> EpisodeResult:
        environment = CraftEnvironment(task)
        seed = f"{self.config.agent.seed}:{task.id}"
        with TrajectoryLogger(self.out_dir / LOG_DIR / f"{task.id}.jsonl") as call_log:
            backend = self.backends.create(task, environment, seed)
            try:
                return self.runner.run_episode(task, backend, call_log, environment)
            except BackendError as e:
                if e.partial_result is None:
                    raise
                logger.error(f"Recording partial result for {task.id}: {e}")
                return e.partial_result


def verify_run(directory: Path, results: Optional[List[EpisodeResult]] = None) -> Summary:
    """Recount every episode from its call log and aggregate the results."""
    directory = Path(directory)
    if results is None:
        results_path = directory / RESULTS_FILE
        if not results_path.exists():
            raise ConfigError(f"No {RESULTS_FILE} in {directory}")
        results = read_results(results_path)

    records = []
    for result in results:
        log_path = directory / LOG_DIR / f"{result.task_id}.jsonl"
        if log_path.exists():
            records.extend(read_trajectory_log(log_path))
    verify_results(results, recount(records))
    return aggregate(results)


def cmd_run(config: RunConfig) -> int:
    orchestrator = EvaluationOrchestrator(config)
    results, summary = orchestrator.run()
    table, _ = render_summary([summary])
    print(table, end="")
    return 1 if orchestrator.failed_episodes else 0


def _distinct_labels(summaries: List[Summary], directories: Sequence[Path]) -> List[Summary]:
    counts = Counter(summary.method for summary in summaries)
    return [
        summary.model_copy(update={"method": f"{summary.method} ({directory.name})"})
        if counts[summary.method] > 1 else summary
        for summary, directory in zip(summaries, directories)
    ]


def cmd_report(directories: Sequence[Path], csv_out: Optional[Path] = None) -> int:
    """Verify each run directory and print one summary row per run."""
    directories = [Path(directory) for directory in directories]
    summaries = []
    for directory in directories:
        if not directory.is_dir():
            raise ConfigError(f"Not a run directory: {directory}")
        summaries.append(verify_run(directory))

    table, csv_text = render_summary(_distinct_labels(summaries, directories))
    print(table, end="")
    if csv_out is not None:
        csv_out = Path(csv_out)
        csv_out.parent.mkdir(parents=True, exist_ok=True)
        csv_out.write_text(csv_text, encoding="utf-8")
        logger.info(f"Wrote {len(summaries)} summary rows to {csv_out}")
    return 0
