"""属ごとの既定スタイルと、既定に無い属のスタイル導出"""

import hashlib
from typing import Dict, Iterable, List, Optional

from src.core.constants import OTHERS_CLASS
from src.domain.models.synthgen import GenusStyle

_SHAPES = ("ellipse", "rod", "colony", "star")

DEFAULT_STYLES: List[GenusStyle] = [
    GenusStyle(genus="Cymbella", class_name="Bacillariophyta", shape="ellipse",
               size_range=(40, 70), color=(150, 120, 60), opacity_range=(0.7, 0.95)),
    GenusStyle(genus="Navicula", class_name="Bacillariophyta", shape="ellipse",
               size_range=(28, 50), color=(120, 100, 55), opacity_range=(0.7, 0.95)),
    GenusStyle(genus="Synedra", class_name="Bacillariophyta", shape="rod",
               size_range=(70, 130), color=(140, 125, 70), opacity_range=(0.6, 0.9)),
    GenusStyle(genus="Scenedesmus", class_name="Chlorophyta", shape="colony",
               size_range=(30, 55), color=(60, 140, 50), opacity_range=(0.75, 1.0)),
    GenusStyle(genus="Pediastrum", class_name="Chlorophyta", shape="star",
               size_range=(50, 90), color=(80, 160, 70), opacity_range=(0.75, 1.0)),
    GenusStyle(genus="Microcystis", class_name="Cyanophyta", shape="colony",
               size_range=(45, 100), color=(50, 90, 80), opacity_range=(0.65, 0.95)),
    # 希少属（既定プロファイルでは 10 個体未満しか出ない）
    GenusStyle(genus="Cryptomonas", class_name="Cryptophyceae", shape="ellipse",
               size_range=(20, 35), color=(160, 80, 60), opacity_range=(0.7, 0.95)),
]


def derive_style(genus: str) -> GenusStyle:
    """既定に無い属名から決定的にスタイルを作る（綱は Others）"""
    digest = hashlib.sha256(genus.encode("utf-8")).digest()
    lo = 24 + digest[4] % 24
    return GenusStyle(
        genus=genus,
        class_name=OTHERS_CLASS,
        shape=_SHAPES[digest[0] % len(_SHAPES)],
        size_range=(float(lo), float(lo * 2)),
        color=(40 + digest[1] % 160, 40 + digest[2] % 160, 40 + digest[3] % 160),
    )


def resolve_styles(
    genera: Iterable[str],
    styles: Optional[Iterable[GenusStyle]] = None,
) -> Dict[str, GenusStyle]:
    """属名 → スタイル（指定 → 既定 → 導出 の順で探す）"""
    known = {s.genus: s for s in DEFAULT_STYLES}
    if styles is not None:
        known.update({s.genus: s for s in styles})
    return {g: known[g] if g in known else derive_style(g) for g in genera}
