"""train_log.jsonl の読み書き（1 行 1 イベント）"""

from pathlib import Path
from typing import Annotated, Union

from pydantic import Field, TypeAdapter, ValidationError

from src.core.exceptions import IngestionError
from src.domain.models.training import EvalRecord, StepRecord, TrainLog, TrainLogRecord

TRAIN_LOG_FILE = "train_log.jsonl"

_record_adapter = TypeAdapter(Annotated[Union[StepRecord, EvalRecord], Field(discriminator="event")])


class TrainLogWriter:
    """イベントを 1 行ずつ追記する（行ごとに flush）"""

    def __init__(self, path: Path, append: bool = False):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, "a" if append else "w", encoding="utf-8", newline="\n")

    def write(self, record: TrainLogRecord) -> None:
        self._file.write(record.model_dump_json(by_alias=True) + "\n")
        self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._file.close()

    def __enter__(self) -> "TrainLogWriter":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()


def read_train_log(path: Path) -> TrainLog:
    """train_log.jsonl を TrainLog に読み戻す

    Raises:
        IngestionError: ファイルが無い、または行が不正
    """
    path = Path(path)
    if path.is_dir():
        path = path / TRAIN_LOG_FILE
    log = TrainLog()
    try:
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = _record_adapter.validate_json(line)
                except ValidationError as e:
                    raise IngestionError(
                        "Malformed train log record",
                        details={"path": str(path), "line": line_no},
                        original_error=e
                    )
                if isinstance(record, StepRecord):
                    log.add_step(record)
                else:
                    log.add_eval(record)
    except OSError as e:
        raise IngestionError("Train log not readable", details={"path": str(path)}, original_error=e)
    return log
