"""Settings Management with Pydantic Settings

このモジュールは、pydantic-settingsを使用した型安全な設定管理を提供します。

環境変数からの自動読み込み、型検証、デフォルト値の設定などをサポートします。
実験ごとのハイパーパラメータ（ModelConfig, TrainConfig など）は
``src.domain.models`` の pydantic モデルで表現し、ここではプロセス全体の
実行環境（ログ、デバイス、決定性、データルート）だけを扱います。

Example:
    >>> from src.core.config import settings
    >>> print(settings.device)
    >>> print(settings.data_root)

    >>> # 環境別の設定
    >>> from src.core.config import get_settings
    >>> dev_settings = get_settings(env="development")
"""

from typing import Any, Dict, Optional, Literal
from pathlib import Path
from pydantic import Field, field_validator, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache
import json
import logging
import os

from src.core.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """アプリケーション設定

    pydantic-settingsを使用した型安全な設定管理。
    環境変数から自動的に値を読み込み、型検証を行います。

    Attributes:
        app_name: アプリケーション名
        environment: 実行環境（development, staging, production）
        debug: デバッグモード
        log_level: ロギングレベル
        log_json: JSON 形式でログを出力するか

        data_root: CLI の既定データディレクトリ（環境変数 DATA_ROOT）
        device: 学習・推論に使う torch デバイス
        deterministic: torch の決定的アルゴリズムを強制するか
        num_threads: torch のスレッド数（0 なら torch の既定）
    """

    model_config = SettingsConfigDict(
        env_file='.env',
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore',  # 未定義の環境変数を無視
        validate_default=True,  # デフォルト値も検証
    )

    # ============================================================================
    # Application Settings
    # ============================================================================

    app_name: str = Field(
        default="Algae Multi-Target Detection",
        description="アプリケーション名"
    )

    environment: Literal["development", "staging", "production"] = Field(
        default="development",
        description="実行環境"
    )

    debug: bool = Field(
        default=True,
        description="デバッグモード"
    )

    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = Field(
        default="INFO",
        description="ロギングレベル"
    )

    log_json: bool = Field(
        default=True,
        description="JSON 形式でログを出力するか"
    )

    # ============================================================================
    # Runtime
    # ============================================================================

    data_root: Optional[Path] = Field(
        default=None,
        description="既定のデータセットディレクトリ"
    )

    device: str = Field(
        default="cpu",
        description="torch デバイス"
    )

    deterministic: bool = Field(
        default=True,
        description="torch の決定的アルゴリズムを強制するか"
    )

    num_threads: int = Field(
        default=1,
        description="torch のスレッド数（0 なら既定値）",
        ge=0,
        le=256
    )

    # ============================================================================
    # Validators
    # ============================================================================

    @field_validator('device')
    @classmethod
    def validate_device(cls, v: str) -> str:
        """デバイス名の検証"""
        if not (v == "cpu" or v.startswith("cuda") or v == "mps"):
            raise ValueError("device must be 'cpu', 'mps' or start with 'cuda'")
        return v

    @field_validator('environment')
    @classmethod
    def validate_environment(cls, v: str) -> str:
        """環境設定の検証"""
        logger.info(f"Running in {v} environment")
        return v

    # ============================================================================
    # Helper Methods
    # ============================================================================

    def is_production(self) -> bool:
        """本番環境かどうか"""
        return self.environment == "production"

    def is_development(self) -> bool:
        """開発環境かどうか"""
        return self.environment == "development"

    def get_log_config(self) -> dict:
        """ロギング設定を取得"""
        return {
            'level': self.log_level,
            'json_format': self.log_json,
            'format': '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
            'datefmt': '%Y-%m-%d %H:%M:%S'
        }


# ============================================================================
# Environment-specific Settings
# ============================================================================

class DevelopmentSettings(Settings):
    """開発環境用設定

    デバッグモードが有効で、ログレベルがDEBUGに設定されます。
    """
    model_config = SettingsConfigDict(
        env_file='.env.development',
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore',
    )

    environment: Literal["development"] = "development"
    debug: bool = True
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "DEBUG"


class ProductionSettings(Settings):
    """本番環境用設定

    デバッグモードが無効で、ログレベルがINFOに設定されます。
    """
    model_config = SettingsConfigDict(
        env_file='.env.production',
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore',
    )

    environment: Literal["production"] = "production"
    debug: bool = False
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"


class StagingSettings(Settings):
    """ステージング環境用設定"""
    model_config = SettingsConfigDict(
        env_file='.env.staging',
        env_file_encoding='utf-8',
        case_sensitive=False,
        extra='ignore',
    )

    environment: Literal["staging"] = "staging"
    debug: bool = False
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"


# ============================================================================
# Settings Factory
# ============================================================================

@lru_cache()
def get_settings(env: Optional[str] = None) -> Settings:
    """環境に応じた設定を取得

    Args:
        env: 環境名（development, staging, production）
            省略時は環境変数ENVIRONMENTから取得

    Returns:
        Settings: 環境に応じた設定インスタンス

    Example:
        >>> settings = get_settings()
        >>> prod_settings = get_settings("production")
    """
    if env is None:
        env = os.getenv('ENVIRONMENT', 'development')

    settings_map = {
        'development': DevelopmentSettings,
        'staging': StagingSettings,
        'production': ProductionSettings,
    }

    settings_class = settings_map.get(env, Settings)

    try:
        instance = settings_class()
        logger.info(f"Settings loaded successfully for environment: {env}")
        return instance
    except ValidationError as e:
        logger.error(f"Settings validation error: {e}")
        raise


# グローバル設定インスタンス
settings = get_settings()


# ============================================================================
# Runtime Utilities
# ============================================================================

def apply_runtime_settings(runtime: Optional[Settings] = None) -> None:
    """torch の決定性・スレッド数を設定に合わせて固定する

    同一シード・同一設定の 2 回の実行がビット単位で同じ TrainLog を
    出力するための前提条件です。
    """
    import torch

    runtime = runtime or settings
    if runtime.num_threads > 0:
        torch.set_num_threads(runtime.num_threads)
    torch.use_deterministic_algorithms(runtime.deterministic, warn_only=True)
    logger.debug(
        "Runtime configured",
        extra={
            "device": runtime.device,
            "deterministic": runtime.deterministic,
            "num_threads": runtime.num_threads,
        }
    )


def load_config_file(path: Path) -> Dict[str, Any]:
    """JSON 設定ファイルを読み込む

    キーは CLI フラグ名（``--n-images`` なら ``n-images`` / ``n_images``）で、
    値は CLI 引数の既定値として使われます。コマンドライン引数が優先されます。

    Raises:
        ConfigurationError: ファイルが存在しない、JSON が不正、オブジェクトでない場合
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(
            "Config file not found",
            details={"path": str(path)}
        )
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(
            "Config file is not valid JSON",
            details={"path": str(path)},
            original_error=e
        )
    if not isinstance(data, dict):
        raise ConfigurationError(
            "Config file must contain a JSON object",
            details={"path": str(path), "type": type(data).__name__}
        )
    return {key.replace('-', '_'): value for key, value in data.items()}


def load_run_config(model_cls: type, values: Dict[str, Any]):
    """実験設定（ModelConfig, TrainConfig など）を検証付きで構築する

    Args:
        model_cls: pydantic モデルのクラス
        values: フィールド値

    Raises:
        ConfigurationError: 検証に失敗した場合（pydantic のエラーを保持）
    """
    try:
        return model_cls.model_validate(values)
    except ValidationError as e:
        raise ConfigurationError(
            f"Invalid {model_cls.__name__}",
            details={
                "errors": [
                    {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
                    for err in e.errors()
                ]
            },
            original_error=e
        )
