"""カスタム例外定義

このモジュールは、プロジェクト全体で使用される構造化された例外クラスを提供します。
各例外は、詳細なコンテキスト情報と、CLI が返す終了コードを保持します。
"""

from typing import Optional, Dict, Any


class AlgaeDetectionError(Exception):
    """基底例外クラス

    全てのカスタム例外の基底クラス。
    詳細なエラー情報とコンテキストを保持できます。

    Attributes:
        message: エラーメッセージ
        details: エラーの詳細情報（image_id, genus, step など）
        original_error: 元の例外（あれば）
        exit_code: CLI の終了コード
    """

    exit_code: int = 1

    def __init__(
        self,
        message: str,
        details: Optional[Dict[str, Any]] = None,
        original_error: Optional[Exception] = None
    ):
        self.message = message
        self.details = details or {}
        self.original_error = original_error
        super().__init__(self.format_message())

    def format_message(self) -> str:
        """エラーメッセージをフォーマット"""
        msg = self.message
        if self.details:
            detail_str = ", ".join(f"{k}={v}" for k, v in self.details.items())
            msg = f"{msg} ({detail_str})"
        if self.original_error:
            msg = f"{msg} [原因: {type(self.original_error).__name__}: {str(self.original_error)}]"
        return msg

    def to_dict(self) -> Dict[str, Any]:
        """例外情報を辞書形式で返す"""
        return {
            "error_type": self.__class__.__name__,
            "message": self.message,
            "details": self.details,
            "original_error": str(self.original_error) if self.original_error else None,
            "exit_code": self.exit_code,
        }


# ============================================================================
# Configuration Exceptions
# ============================================================================

class ConfigurationError(AlgaeDetectionError):
    """設定エラー（無効なハイパーパラメータ、タクソノミー定義の不備など）"""
    exit_code = 2


class UsageError(ConfigurationError):
    """コマンドライン引数の誤り"""
    exit_code = 2


class UnknownBackboneError(ConfigurationError):
    """未知のバックボーンタイプ"""
    pass


# ============================================================================
# Data Exceptions
# ============================================================================

class IngestionError(AlgaeDetectionError):
    """データ取り込みエラー

    マニフェストのレコードが壊れている、参照画像が読めない場合などに発生します。

    Example:
        >>> raise IngestionError(
        ...     "Malformed annotation record",
        ...     details={"line": 3, "image_id": "img_0002"}
        ... )
    """
    exit_code = 3


class DataValidationError(AlgaeDetectionError):
    """データ検証エラー（ボックスが画像外、退化したボックスなど）"""
    exit_code = 4


class TaxonomyLookupError(DataValidationError):
    """タクソノミーに存在しない属名の参照"""
    pass


class CheckpointError(DataValidationError):
    """チェックポイントの読み込み・検証エラー

    タクソノミーのフィンガープリントが一致しない場合などに発生します。
    """
    pass


class GenerationError(AlgaeDetectionError):
    """合成シーン生成エラー（リトライ上限に達した配置など）"""
    pass


# ============================================================================
# Numeric / Evaluation Exceptions
# ============================================================================

class NumericError(AlgaeDetectionError):
    """数値エラー（損失や勾配が有限でない）"""
    exit_code = 5


class EvaluationError(AlgaeDetectionError):
    """評価エラー（GT を持つラベルが一つもない、など）"""
    pass


# ============================================================================
# Workflow Exceptions
# ============================================================================

class WorkflowError(AlgaeDetectionError):
    """ワークフロー関連の基底エラー"""
    pass


class WorkflowExecutionError(WorkflowError):
    """ワークフロー実行エラー"""
    pass


class WorkflowBuildError(WorkflowError):
    """ワークフローグラフ構築エラー"""
    pass
