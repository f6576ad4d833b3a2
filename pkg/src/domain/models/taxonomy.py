"""タクソノミー（属 → 綱）のドメイン型"""

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Dict, Iterable, Mapping, Optional, Sequence, Tuple

from src.core.constants import CANONICAL_CLASSES, ELSE_GENUS, NUM_CLASSES, OTHERS_CLASS
from src.core.exceptions import ConfigurationError, DataValidationError


@dataclass(frozen=True)
class Taxonomy:
    """属と生物学的な綱の二階層タクソノミー

    Attributes:
        genera: 属名（順序付き、"else" を含む）
        classes: 綱名（ちょうど 6 つ、"Others" を含む）
        genus_to_class: 属 → 綱 の全域写像

    Raises:
        ConfigurationError: 不変条件（6 綱、"Others"、"else"、名前の一意性、全域性）違反
    """
    genera: Tuple[str, ...]
    classes: Tuple[str, ...]
    genus_to_class: Mapping[str, str] = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "genera", tuple(self.genera))
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "genus_to_class", MappingProxyType(dict(self.genus_to_class)))

        for kind, names in (("genus", self.genera), ("class", self.classes)):
            if any(not isinstance(n, str) or not n.strip() for n in names):
                raise ConfigurationError(f"Empty {kind} name in taxonomy")
            if len(set(names)) != len(names):
                raise ConfigurationError(
                    f"Duplicate {kind} names in taxonomy",
                    details={"names": list(names)}
                )
        if len(self.classes) != NUM_CLASSES:
            raise ConfigurationError(
                f"Taxonomy must declare exactly {NUM_CLASSES} classes",
                details={"classes": list(self.classes)}
            )
        if OTHERS_CLASS not in self.classes:
            raise ConfigurationError(
                f"Taxonomy classes must include '{OTHERS_CLASS}'",
                details={"classes": list(self.classes)}
            )
        if ELSE_GENUS not in self.genera:
            raise ConfigurationError(
                f"Taxonomy must contain the '{ELSE_GENUS}' genus",
                details={"genera": list(self.genera)}
            )
        missing = [g for g in self.genera if g not in self.genus_to_class]
        if missing:
            raise ConfigurationError(
                "Every genus must map to a class",
                details={"unmapped": missing}
            )
        extra = [g for g in self.genus_to_class if g not in self.genera]
        if extra:
            raise ConfigurationError(
                "Class map names genera outside the taxonomy",
                details={"unknown": extra}
            )
        bad = {g: c for g, c in self.genus_to_class.items() if c not in self.classes}
        if bad:
            raise ConfigurationError(
                "Genus mapped to an undeclared class",
                details={"mapping": bad}
            )

    # 二つのタクソノミーは順序と所属が一致すれば等しい
    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Taxonomy):
            return NotImplemented
        return (
            self.genera == other.genera
            and self.classes == other.classes
            and dict(self.genus_to_class) == dict(other.genus_to_class)
        )

    def __hash__(self) -> int:
        return hash((self.genera, self.classes, tuple(sorted(self.genus_to_class.items()))))

    @property
    def num_genera(self) -> int:
        return len(self.genera)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def genus_index(self, genus: str) -> int:
        """属の 0 始まりインデックス（背景は含まない）"""
        try:
            return self.genera.index(genus)
        except ValueError:
            from src.core.exceptions import TaxonomyLookupError
            raise TaxonomyLookupError("Unknown genus", details={"genus": genus})

    def class_index(self, class_name: str) -> int:
        try:
            return self.classes.index(class_name)
        except ValueError:
            from src.core.exceptions import TaxonomyLookupError
            raise TaxonomyLookupError("Unknown class", details={"class": class_name})

    def genus_class_indices(self) -> Tuple[int, ...]:
        """各属が属する綱のインデックス（genera の順）"""
        return tuple(self.classes.index(self.genus_to_class[g]) for g in self.genera)

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[Tuple[str, str]],
        classes: Optional[Sequence[str]] = None,
    ) -> "Taxonomy":
        """(genus, class) の組から構築する

        宣言された綱の一覧に無い綱を持つ属は "Others" に割り当てられます。
        "else" 属が無ければ "Others" として追加します。
        """
        classes = tuple(classes) if classes is not None else CANONICAL_CLASSES
        genera = []
        mapping: Dict[str, str] = {}
        for genus, class_name in pairs:
            genus = genus.strip()
            class_name = class_name.strip()
            if genus in mapping:
                raise ConfigurationError("Duplicate genus in taxonomy", details={"genus": genus})
            genera.append(genus)
            mapping[genus] = class_name if class_name in classes else OTHERS_CLASS
        if ELSE_GENUS not in mapping:
            genera.append(ELSE_GENUS)
            mapping[ELSE_GENUS] = OTHERS_CLASS
        return cls(genera=tuple(genera), classes=classes, genus_to_class=mapping)


@dataclass(frozen=True)
class GenusCensus:
    """学習アノテーション上の属ごとのインスタンス数"""
    counts: Mapping[str, int]

    def __post_init__(self):
        counts = dict(self.counts)
        for genus, count in counts.items():
            if isinstance(count, bool) or not isinstance(count, int) or count < 0:
                raise DataValidationError(
                    "Census counts must be non-negative integers",
                    details={"genus": genus, "count": count}
                )
        object.__setattr__(self, "counts", MappingProxyType(counts))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "GenusCensus":
        counts: Dict[str, int] = {}
        for label in labels:
            counts[label] = counts.get(label, 0) + 1
        return cls(counts=counts)
