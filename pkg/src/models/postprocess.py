"""推論時の確率の後処理"""

import torch

from src.core.exceptions import ConfigurationError


def foreground_probs(logits: torch.Tensor) -> torch.Tensor:
    """背景列（0 列目）を除いて前景で正規化した softmax"""
    probs = torch.softmax(logits.double(), dim=-1)[:, 1:]
    return probs / probs.sum(dim=-1, keepdim=True).clamp_min(1e-300)


def roll_up_probs(genus_probs: torch.Tensor, genus_class_index: torch.Tensor, num_classes: int) -> torch.Tensor:
    """属の確率を綱ごとに合算する（Branch-3 が無い構成の綱スコア）"""
    out = torch.zeros((genus_probs.shape[0], num_classes), dtype=genus_probs.dtype, device=genus_probs.device)
    return out.index_add_(1, genus_class_index.to(genus_probs.device), genus_probs)


def hierarchical_rescore(
    genus_probs: torch.Tensor,
    class_probs: torch.Tensor,
    genus_class_index: torch.Tensor,
    alpha: float = 0.0,
) -> torch.Tensor:
    """属の分布を綱の確率で重み付けし直す

    p'(g) ∝ p_genus(g) · p_class(class(g))^alpha。alpha = 0 なら恒等写像です。

    Args:
        genus_probs: (R, G) 前景で正規化済み
        class_probs: (R, C) 前景で正規化済み
        genus_class_index: (G,) 各属の綱インデックス
        alpha: 綱確率の指数（0 以上）

    Raises:
        ConfigurationError: alpha が負
    """
    if alpha < 0:
        raise ConfigurationError("hierarchy alpha must be non-negative", details={"alpha": alpha})
    if alpha == 0 or genus_probs.numel() == 0:
        return genus_probs
    weight = class_probs[:, genus_class_index.to(class_probs.device)].clamp_min(0.0) ** alpha
    rescored = genus_probs * weight
    total = rescored.sum(dim=-1, keepdim=True)
    # 全ての重みが 0 になった行は元の分布を残す
    return torch.where(total > 0, rescored / total.clamp_min(1e-300), genus_probs)
