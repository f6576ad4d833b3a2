"""Backbone Factory - バックボーンの生成を管理するファクトリー

Example:
    >>> from src.core.factory import BackboneFactory
    >>> backbone = BackboneFactory.create(ModelConfig.desk(num_genera=8))
    >>>
    >>> # 新しいバックボーンを登録
    >>> BackboneFactory.register("tiny", build_tiny_backbone)
"""

from typing import Callable, Dict, List

from src.core.exceptions import ConfigurationError, UnknownBackboneError
from src.core.logging_config import get_logger
from src.domain.models.detector import ModelConfig
from src.models.backbones import Backbone, DeskBackbone, ResNetFPNBackbone

logger = get_logger(__name__)

BackboneBuilder = Callable[[ModelConfig], Backbone]


def _build_desk(config: ModelConfig) -> Backbone:
    return DeskBackbone(width=config.backbone_width, out_channels=config.fpn_channels)


def _build_resnet50_fpn(config: ModelConfig) -> Backbone:
    return ResNetFPNBackbone(out_channels=config.fpn_channels)


class BackboneFactory:
    """バックボーンファクトリー

    名前 → ビルダー関数のレジストリから、ModelConfig に従って
    バックボーンを生成します。生成後、出力ストライドがアンカー配置の
    ストライドと一致するかを検証します。
    """

    # バックボーンレジストリ
    _builders: Dict[str, BackboneBuilder] = {
        "desk": _build_desk,
        "resnet50_fpn": _build_resnet50_fpn,
    }

    @classmethod
    def create(cls, config: ModelConfig) -> Backbone:
        """バックボーンを生成

        Args:
            config: 検出器の設定（backbone 名、幅、FPN チャネル数、アンカー配置）

        Returns:
            Backbone: 生成されたバックボーン

        Raises:
            UnknownBackboneError: 未登録のバックボーン名
            ConfigurationError: ストライドがアンカー配置と一致しない、または生成に失敗した場合
        """
        if config.backbone not in cls._builders:
            raise UnknownBackboneError(
                f"Unknown backbone: {config.backbone}",
                details={
                    "backbone": config.backbone,
                    "available_backbones": cls.list_backbones()
                }
            )

        logger.info(f"Creating backbone: {config.backbone}")
        try:
            backbone = cls._builders[config.backbone](config)
        except ConfigurationError:
            raise
        except Exception as e:
            raise ConfigurationError(
                f"Failed to create {config.backbone} backbone",
                details={"backbone": config.backbone},
                original_error=e
            )

        if tuple(backbone.strides) != tuple(config.anchor_grid.strides):
            raise ConfigurationError(
                "Backbone strides do not match the anchor grid",
                details={
                    "backbone": config.backbone,
                    "backbone_strides": list(backbone.strides),
                    "anchor_strides": list(config.anchor_grid.strides),
                }
            )
        return backbone

    @classmethod
    def register(cls, name: str, builder: BackboneBuilder):
        """新しいバックボーンを登録（拡張用）

        Args:
            name: バックボーン名
            builder: ModelConfig を受け取り Backbone を返す関数
        """
        logger.info(f"Registering backbone: {name}")
        cls._builders[name] = builder

    @classmethod
    def unregister(cls, name: str):
        cls._builders.pop(name, None)

    @classmethod
    def list_backbones(cls) -> List[str]:
        """利用可能なバックボーンをリスト

        Returns:
            バックボーン名のリスト
        """
        return list(cls._builders.keys())


def create_backbone(config: ModelConfig) -> Backbone:
    """バックボーンを生成（関数版）"""
    return BackboneFactory.create(config)
