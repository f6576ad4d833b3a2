"""Taxonomy Service"""

from src.services.taxonomy.taxonomy_service import (
    apply_relabel_to_census,
    census_from_instances,
    class_census,
    genus_to_class,
    load_taxonomy,
    merge_rare_genera,
    roll_up_labels,
    save_taxonomy,
    taxonomy_fingerprint,
)

__all__ = [
    "apply_relabel_to_census",
    "census_from_instances",
    "class_census",
    "genus_to_class",
    "load_taxonomy",
    "merge_rare_genera",
    "roll_up_labels",
    "save_taxonomy",
    "taxonomy_fingerprint",
]
