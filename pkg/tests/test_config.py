"""設定管理のテスト"""

import json

import pytest
from pydantic import ValidationError

from src.core.config import (
    DevelopmentSettings,
    ProductionSettings,
    Settings,
    get_settings,
    load_config_file,
    load_run_config,
)
from src.core.exceptions import (
    CheckpointError,
    ConfigurationError,
    DataValidationError,
    IngestionError,
    NumericError,
    TaxonomyLookupError,
    UnknownBackboneError,
    UsageError,
)
from src.domain.models.training import TrainConfig


class TestSettings:
    """Settings クラスのテスト"""

    def test_defaults(self):
        settings = Settings()
        assert settings.device == "cpu"
        assert settings.deterministic is True
        assert settings.num_threads == 1
        assert settings.data_root is None

    def test_from_environment(self, monkeypatch, tmp_path):
        """環境変数から値を読む"""
        monkeypatch.setenv("DEVICE", "cuda:1")
        monkeypatch.setenv("DATA_ROOT", str(tmp_path))
        monkeypatch.setenv("LOG_JSON", "false")
        settings = Settings()
        assert settings.device == "cuda:1"
        assert settings.data_root == tmp_path
        assert settings.log_json is False

    @pytest.mark.parametrize("device", ["cpu", "mps", "cuda", "cuda:0"])
    def test_valid_devices(self, device):
        assert Settings(device=device).device == device

    def test_invalid_device(self):
        with pytest.raises(ValidationError):
            Settings(device="tpu")

    def test_num_threads_bounds(self):
        with pytest.raises(ValidationError):
            Settings(num_threads=-1)

    def test_log_config(self):
        config = Settings(log_level="DEBUG", log_json=False).get_log_config()
        assert config["level"] == "DEBUG"
        assert config["json_format"] is False


class TestEnvironmentSettings:
    """環境別設定のテスト"""

    def test_development(self):
        settings = DevelopmentSettings()
        assert settings.is_development()
        assert settings.log_level == "DEBUG"

    def test_production(self):
        settings = ProductionSettings()
        assert settings.is_production()
        assert settings.debug is False

    def test_get_settings_cached(self):
        get_settings.cache_clear()
        assert get_settings("production") is get_settings("production")
        assert isinstance(get_settings("staging"), Settings)
        get_settings.cache_clear()


class TestConfigFile:
    """load_config_file / load_run_config のテスト"""

    def test_dashes_become_underscores(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"n-images": 20, "lambda": 0.3}), encoding="utf-8")
        assert load_config_file(path) == {"n_images": 20, "lambda": 0.3}

    def test_missing(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config_file(tmp_path / "nope.json")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_config_file(path)

    def test_not_an_object(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("[1, 2]", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_config_file(path)

    def test_run_config(self):
        config = load_run_config(TrainConfig, {"lambda": 0.4, "total_steps": 10})
        assert config.lam == 0.4

    def test_run_config_errors_name_fields(self):
        with pytest.raises(ConfigurationError) as exc_info:
            load_run_config(TrainConfig, {"total_steps": 0})
        fields = [e["field"] for e in exc_info.value.details["errors"]]
        assert "total_steps" in fields


class TestExitCodes:
    """例外と CLI 終了コードの対応のテスト"""

    @pytest.mark.parametrize("error_cls,code", [
        (ConfigurationError, 2),
        (UsageError, 2),
        (UnknownBackboneError, 2),
        (IngestionError, 3),
        (DataValidationError, 4),
        (TaxonomyLookupError, 4),
        (CheckpointError, 4),
        (NumericError, 5),
    ])
    def test_exit_code(self, error_cls, code):
        assert error_cls("x").exit_code == code

    def test_to_dict(self):
        error = IngestionError("Manifest not found", details={"path": "a"}, original_error=OSError("boom"))
        data = error.to_dict()
        assert data["error_type"] == "IngestionError"
        assert data["details"] == {"path": "a"}
        assert data["exit_code"] == 3
        assert "path=a" in str(error)
