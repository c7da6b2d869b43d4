import logging
from pathlib import Path

from config.settings import settings


class ExperimentLogger:
    """Narrates experiment progress: steps, replicas and written artifacts."""

    def __init__(self, log_dir=None, name="tasep_ldp.experiments"):
        self.log_dir = Path(log_dir or settings.LOG_DIR)
        self.logger = logging.getLogger(name)
        self.logger.setLevel(logging.DEBUG)
        if self.logger.handlers:
            return
        formatter = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")
        try:
            self.log_dir.mkdir(parents=True, exist_ok=True)
            file_handler = logging.FileHandler(self.log_dir / "experiments.log")
        except (PermissionError, OSError):
            # read-only checkout: records still reach the root handlers
            return
        file_handler.setLevel(logging.DEBUG)
        file_handler.setFormatter(formatter)
        self.logger.addHandler(file_handler)

    def log_workflow_step(self, experiment, message):
        self.logger.info(f"{experiment}: {message}")

    def log_replica(self, experiment, index, total, events):
        self.logger.debug(f"{experiment} replica {index + 1}/{total}: {events} events")

    def log_artifact(self, path, size_bytes):
        self.logger.info(f"Wrote {path} ({size_bytes} bytes)")

    def log_self_check(self, experiment, name, passed, detail=""):
        level = logging.INFO if passed else logging.WARNING
        self.logger.log(level, f"{experiment} self-check {name}: {'pass' if passed else 'FAIL'} {detail}".rstrip())


experiment_logger = ExperimentLogger()
